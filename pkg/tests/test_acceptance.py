"""Acceptance gate: ten release criteria, one verdict line per test.

Each test prints a single ``[ACCEPTANCE nn] PASS/FAIL`` line (visible with
``pytest -s``; under plain ``pytest -v`` the test outcome itself is the
verdict line).  Timed criteria run with BLAS pinned to one core by
conftest.py.
"""

import os
import time

import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view

from gradcheck import check_grads

from halalnet import autodiff as ad
from halalnet import backbone, cli, datakit, seeds, siamese, training
from halalnet.imaging import (
    SegmentationParams,
    StructuringElement,
    morph_close,
    morph_open,
    otsu_from_histogram,
    segment_cut,
)
from halalnet.metrics import ConfusionMatrix, macro_metrics
from halalnet.pnm import read_pnm
from halalnet.training import DatasetPools, bce_loss, sample_pair


def _verdict(num: int, ok: bool, detail: str) -> None:
    line = f"[ACCEPTANCE {num:02d}] {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """The reference synthetic dataset: 220 images per class at 96px."""
    out = str(tmp_path_factory.mktemp("accept_data"))
    manifest = datakit.generate_synthetic(datakit.SyntheticSpec(seed=0), out)
    return out, manifest


def test_criterion_01_published_metric_reproduction():
    report = macro_metrics(ConfusionMatrix(tn=126, fp=2, fn=7, tp=121))
    published = {"accuracy": 0.9648, "precision": 0.9656,
                 "recall": 0.9648, "f1": 0.9648}
    errs = {k: abs(getattr(report, k) - v) for k, v in published.items()}
    ok = all(e <= 1e-4 for e in errs.values())
    _verdict(1, ok, "macro metrics within 1e-4 of the published 256-pair "
             f"report (worst diff {max(errs.values()):.2e})")


def test_criterion_02_full_scale_shape_chain():
    cfg = backbone.builtin_config("full")
    shapes = backbone.infer_shapes(cfg)
    ok = cfg.input_shape == (299, 299, 3) and shapes[-1] == (10, 10, 2048)
    _verdict(2, ok, f"(299,299,3) -> {shapes[-1]} through {len(shapes)} blocks")


def test_criterion_03_parameter_budget():
    cfg = backbone.builtin_config("full")
    total = siamese.param_count(cfg)
    head = sum(int(np.prod(s)) for s in siamese.head_param_shapes(cfg).values())
    head_expected = 204800 * 64 + 64 + 64 * 32 + 32 + 32 + 1
    budget_ok = abs(total - 34e6) <= 0.05 * 34e6
    head_ok = head == head_expected == 13_109_377
    _verdict(3, budget_ok and head_ok,
             f"total {total:,} (within 5% of 34e6: {budget_ok}), "
             f"head {head:,} == 13,109,377: {head_ok}")


def _fd_along_gradient(model, dtype, eps):
    """Finite-difference slope along the normalized gradient direction."""
    rng = np.random.default_rng(11)
    xa = rng.random((2,) + model.input_shape).astype(dtype)
    xb = rng.random((2,) + model.input_shape).astype(dtype)
    y = np.array([1.0, 0.0], dtype=dtype)

    def loss_value():
        return bce_loss(siamese.pair_graph(model, ad.Tensor(xa), ad.Tensor(xb)), y)

    loss = loss_value()
    ad.zero_grads(model.params)
    loss.backward()
    grads = {k: t.grad.copy() for k, t in model.params.items()}
    gnorm = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum())
                        for g in grads.values()))
    direction = {k: (g / gnorm).astype(np.float64) for k, g in grads.items()}
    base = {k: t.data.copy() for k, t in model.params.items()}

    def nudge(offset):
        for k, t in model.params.items():
            t.data = (base[k].astype(np.float64) + offset * direction[k]).astype(dtype)

    nudge(eps)
    hi = float(loss_value().data)
    nudge(-eps)
    lo = float(loss_value().data)
    nudge(0.0)
    slope = (hi - lo) / (2.0 * eps)
    return abs(slope - gnorm) / gnorm


def test_criterion_04_gradient_suite(rng):
    start = time.time()
    worst = {np.float32: 0.0, np.float64: 0.0}
    x4 = rng.random((2, 6, 6, 3)) * 2 - 1
    cases = [
        (ad.relu, [rng.random((3, 4)) * 2 - 1 + 0.05]),
        (ad.sigmoid, [rng.random((3, 4)) * 4 - 2]),
        (ad.subtract, [rng.random((2, 5)), rng.random((2, 5))]),
        (ad.residual_add, [rng.random((2, 3, 3, 2)), rng.random((2, 3, 3, 2))]),
        (ad.flatten, [rng.random((2, 3, 2, 2))]),
        (ad.mean, [rng.random((7,))]),
        (ad.dense, [rng.random((3, 5)), rng.random((5, 4)), rng.random((4,))]),
        (lambda x, w, b: ad.conv2d(x, w, b, stride=1, padding="valid"),
         [x4, rng.random((3, 3, 3, 4)), rng.random((4,))]),
        (lambda x, w, b: ad.conv2d(x, w, b, stride=2, padding="same"),
         [x4, rng.random((3, 3, 3, 4)), rng.random((4,))]),
        (lambda x, wd, wp, b: ad.separable_conv2d(x, wd, wp, b, stride=1),
         [x4, rng.random((3, 3, 3)), rng.random((3, 5)), rng.random((5,))]),
        (lambda p: ad.l2_penalty([p], 0.5), [rng.random((4, 3))]),
        (lambda p: bce_loss(ad.sigmoid(p), np.array([1.0, 0.0, 1.0])),
         [rng.random((3,)) * 2 - 1]),
    ]
    # max_pool needs distinct values so the argmax is stable under nudges
    pool_x = rng.permutation(64).reshape(1, 8, 8, 1) / 7.0
    cases.append((lambda x: ad.max_pool(x, 2, 2), [pool_x]))

    for dtype in (np.float32, np.float64):
        for fn, tensors in cases:
            worst[dtype] = max(worst[dtype], check_grads(fn, tensors, dtype=dtype))

    # full desk-scale twin forward + loss, end to end
    e2e = {}
    for dtype, eps, tol in ((np.float32, 3e-4, 1e-3), (np.float64, 1e-6, 1e-6)):
        model = siamese.build(backbone.builtin_config("desk"),
                              np.random.default_rng(3), dtype=dtype)
        rel = _fd_along_gradient(model, dtype, eps)
        e2e[dtype] = rel
        assert rel < tol, f"end-to-end {np.dtype(dtype).name}: rel {rel:.2e}"
    elapsed = time.time() - start
    ok = (worst[np.float32] < 1e-3 and worst[np.float64] < 1e-6
          and e2e[np.float32] < 1e-3 and e2e[np.float64] < 1e-6
          and elapsed < 60.0)
    _verdict(4, ok, f"per-op worst f32 {worst[np.float32]:.2e} / f64 "
             f"{worst[np.float64]:.2e}; end-to-end f32 {e2e[np.float32]:.2e} / "
             f"f64 {e2e[np.float64]:.2e}; {elapsed:.1f}s")


def _otsu_scan(hist):
    """Literal 256-way argmax of the between-class variance."""
    best_t, best_v = 0, -1.0
    for t in range(256):
        lo, hi = hist[: t + 1], hist[t + 1:]
        w0, w1 = lo.sum(), hi.sum()
        if w0 == 0 or w1 == 0:
            v = 0.0
        else:
            mu0 = (lo * np.arange(0, t + 1)).sum() / w0
            mu1 = (hi * np.arange(t + 1, 256)).sum() / w1
            v = w0 * w1 * (mu0 - mu1) ** 2
        if v > best_v:
            best_t, best_v = t, v
    return best_t


def _se_matrix(se):
    m = np.zeros((se.size, se.size), dtype=bool)
    c = se.size // 2
    for dr, dc in se.offsets():
        m[c + dr, c + dc] = True
    return m


def _set_dilate(mask, se_mask):
    """Dilation per its set definition: the reflected element, swept over
    the padded mask, marks every placement that touches foreground."""
    k = se_mask.shape[0]
    padded = np.pad(mask, k // 2, constant_values=False)
    win = sliding_window_view(padded, (k, k))
    return (win & se_mask[::-1, ::-1]).any(axis=(2, 3))


def _set_erode(mask, se_mask):
    """Erosion per its set definition: the element must fit entirely
    inside the foreground (off-image counts as background)."""
    k = se_mask.shape[0]
    padded = np.pad(mask, k // 2, constant_values=False)
    win = sliding_window_view(padded, (k, k))
    return (win | ~se_mask).all(axis=(2, 3))


def test_criterion_05_threshold_and_morphology_oracles():
    start = time.time()
    rng = np.random.default_rng(77)
    otsu_bad = 0
    for i in range(1000):
        if i % 3 == 0:
            hist = rng.integers(0, 1000, size=256).astype(np.float64)
        elif i % 3 == 1:
            hist = np.zeros(256)
            levels = rng.choice(256, size=int(rng.integers(2, 12)), replace=False)
            hist[levels] = rng.integers(1, 10_000, size=levels.size)
        else:
            hist = np.zeros(256)
            levels = rng.choice(256, size=int(rng.integers(2, 6)), replace=False)
            hist[levels] = float(rng.integers(1, 4))  # flat ties
        if (hist > 0).sum() < 2:
            hist[0] += 1.0
            hist[255] += 1.0
        if otsu_from_histogram(hist) != _otsu_scan(hist):
            otsu_bad += 1

    morph_bad = 0
    for _ in range(200):
        h = int(rng.integers(5, 65))
        w = int(rng.integers(5, 65))
        mask = rng.random((h, w)) < rng.uniform(0.2, 0.8)
        se = StructuringElement("square" if rng.random() < 0.5 else "ellipse",
                                int(rng.choice([3, 5, 7])))
        sm = _se_matrix(se)
        if not np.array_equal(morph_close(mask, se), _set_erode(_set_dilate(mask, sm), sm)):
            morph_bad += 1
        if not np.array_equal(morph_open(mask, se), _set_dilate(_set_erode(mask, sm), sm)):
            morph_bad += 1
    elapsed = time.time() - start
    ok = otsu_bad == 0 and morph_bad == 0 and elapsed < 60.0
    _verdict(5, ok, f"1000 histograms ({otsu_bad} mismatches), 200 masks "
             f"({morph_bad} mismatches); {elapsed:.1f}s")


def test_criterion_06_sampler_statistics():
    seg = np.full((2, 2, 3), 255, dtype=np.uint8)
    raw = np.zeros((2, 2, 3), dtype=np.uint8)
    pools = DatasetPools(seg_halal=[seg], raw_halal=[raw],
                         seg_nonhalal=[seg], raw_nonhalal=[raw])
    rng = seeds.rng(0, "sampler")
    same = 0
    segmented = 0
    n = 10_000
    for _ in range(n):
        pair = sample_pair(pools, rng)
        same += pair.label
        segmented += int(pair.image_a[0, 0, 0] == 255)
        segmented += int(pair.image_b[0, 0, 0] == 255)
    label_frac = same / n
    seg_frac = segmented / (2 * n)
    ok = abs(label_frac - 0.5) <= 0.02 and abs(seg_frac - 2 / 3) <= 0.02
    _verdict(6, ok, f"same-class fraction {label_frac:.4f} (target 0.5+-0.02), "
             f"segmented fraction {seg_frac:.4f} (target 0.6667+-0.02)")


def test_criterion_07_desk_scale_training(dataset):
    _, manifest = dataset
    start = time.time()
    labels = [r.cls for r in manifest.records]
    train_r, val_r, _ = training.split_dataset(manifest.records, seed=0, labels=labels)
    mk = lambda recs: datakit.DatasetManifest(root=manifest.root, records=list(recs))
    pools, stats = datakit.prepare_pools(mk(train_r), target_size=64)
    val_pools, _ = datakit.prepare_pools(mk(val_r), target_size=64)
    per_class = min(stats.per_class.values()) + min(
        len(val_pools.raw_halal), len(val_pools.raw_nonhalal))
    assert min(len(manifest.by_class("halal")), len(manifest.by_class("non-halal"))) >= 200

    cfg = training.TrainConfig(epochs=6, steps_per_epoch=50, batch_size=8,
                               val_pairs=64, seed=0)
    model = siamese.build(backbone.builtin_config("desk"), seeds.rng(0, "init"))
    _, history = training.train(model, pools, cfg, val_pools=val_pools)
    elapsed = time.time() - start
    best = max(e.val_acc for e in history.epochs)
    ok = best >= 0.90 and elapsed < 600.0
    _verdict(7, ok, f"best held-out pair accuracy {best:.4f} "
             f"(>= 0.90) in {elapsed:.1f}s (< 600s), "
             f"{per_class} usable images/class")


def test_criterion_08_segmentation_efficacy(dataset):
    root, manifest = dataset
    scores = []
    for rec in manifest.by_class("halal"):
        img = read_pnm(manifest.resolve(rec))
        truth = read_pnm(os.path.join(root, datakit.mask_relpath(rec.path))) > 0
        try:
            mask, _ = segment_cut(img, SegmentationParams())
        except Exception:
            scores.append(0.0)
            continue
        inter = np.logical_and(mask, truth).sum()
        union = np.logical_or(mask, truth).sum()
        scores.append(inter / union if union else 0.0)
    frac = float(np.mean([s >= 0.5 for s in scores]))
    ok = frac >= 0.80
    _verdict(8, ok, f"IoU >= 0.5 on {frac:.1%} of {len(scores)} band-class "
             f"images (median IoU {np.median(scores):.3f})")


def test_criterion_09_determinism_and_persistence(tmp_path):
    data = tmp_path / "data"
    assert cli.main(["synth", str(data), "--seed", "17", "--size", "64",
                     "--count-a", "8", "--count-b", "8"]) == 0
    args = ["train", str(data / "manifest.csv"), "--seed", "7",
            "--set", "epochs=2", "--set", "steps_per_epoch=3",
            "--set", "batch_size=2", "--set", "val_pairs=4"]
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert cli.main(args + ["--out", str(out_a)]) == 0
    assert cli.main(args + ["--out", str(out_b)]) == 0
    hist_same = (out_a / "history.csv").read_bytes() == (out_b / "history.csv").read_bytes()

    ckpt_path = str(out_a / "checkpoint.hnet")
    original = open(ckpt_path, "rb").read()
    resaved_path = str(tmp_path / "resaved.hnet")
    siamese.save_checkpoint(siamese.load_checkpoint(ckpt_path), resaved_path)
    roundtrip_same = open(resaved_path, "rb").read() == original
    ok = hist_same and roundtrip_same
    _verdict(9, ok, f"seeded histories byte-identical: {hist_same}; "
             f"checkpoint save->load->save byte-identical: {roundtrip_same}")


def test_criterion_10_loss_reference_values():
    half = bce_loss(ad.Tensor(np.array([0.5])), np.array([1.0]))
    ninety = bce_loss(ad.Tensor(np.array([0.9])), np.array([1.0]))
    e_half = abs(float(half.data) - 0.693147)
    e_ninety = abs(float(ninety.data) - 0.105361)
    ok = e_half <= 1e-6 and e_ninety <= 1e-6
    _verdict(10, ok, f"-ln 0.5 diff {e_half:.2e}, -ln 0.9 diff {e_ninety:.2e} "
             "(both <= 1e-6)")
