import numpy as np
import pytest

from halalnet import inference, siamese
from halalnet.errors import DataError, InvalidInputError
from halalnet.inference import ControlSet, classify, load_control_set, prepare_query, verify
from halalnet.pnm import write_pnm
from halalnet.training import to_network_input


@pytest.fixture(scope="module")
def micro_model(micro_config):
    return siamese.build(micro_config, np.random.default_rng(7))


def _net_img(rng, shape):
    return rng.random(shape).astype(np.float32)


def test_classify_returns_score_per_class(micro_model, rng):
    shape = micro_model.input_shape
    control = ControlSet({
        "halal": [_net_img(rng, shape), _net_img(rng, shape)],
        "non-halal": [_net_img(rng, shape)],
    })
    best, scores = classify(micro_model, _net_img(rng, shape), control)
    assert set(scores) == {"halal", "non-halal"}
    assert best in scores
    assert all(0.0 < s < 1.0 for s in scores.values())
    assert scores[best] == max(scores.values())


def test_mean_aggregate_is_mean_of_pair_scores(micro_model, rng):
    shape = micro_model.input_shape
    query = _net_img(rng, shape)
    ref_a, ref_b = _net_img(rng, shape), _net_img(rng, shape)
    control = ControlSet({"only": [ref_a, ref_b]})
    _, scores = classify(micro_model, query, control, aggregate="mean")
    p1 = siamese.forward_pair(micro_model, query, ref_a)
    p2 = siamese.forward_pair(micro_model, query, ref_b)
    assert scores["only"] == pytest.approx((p1 + p2) / 2, abs=1e-6)


def test_max_aggregate(micro_model, rng):
    shape = micro_model.input_shape
    query = _net_img(rng, shape)
    refs = [_net_img(rng, shape) for _ in range(3)]
    control = ControlSet({"only": refs})
    _, scores = classify(micro_model, query, control, aggregate="max")
    individual = [siamese.forward_pair(micro_model, query, r) for r in refs]
    assert scores["only"] == pytest.approx(max(individual), abs=1e-6)


def test_duplicate_reference_does_not_change_mean(micro_model, rng):
    shape = micro_model.input_shape
    query = _net_img(rng, shape)
    ref = _net_img(rng, shape)
    one = ControlSet({"c": [ref]})
    three = ControlSet({"c": [ref, ref, ref]})
    _, s1 = classify(micro_model, query, one)
    _, s3 = classify(micro_model, query, three)
    assert s1["c"] == pytest.approx(s3["c"], abs=1e-6)


def test_tie_breaks_to_smallest_label(micro_model, rng):
    # identical references in both classes give identical scores
    shape = micro_model.input_shape
    ref = _net_img(rng, shape)
    control = ControlSet({"zebra": [ref], "aardvark": [ref]})
    best, scores = classify(micro_model, _net_img(rng, shape), control)
    assert scores["zebra"] == scores["aardvark"]
    assert best == "aardvark"


def test_identical_query_and_reference_scores_half(micro_model, rng):
    shape = micro_model.input_shape
    img = _net_img(rng, shape)
    control = ControlSet({"same": [img]})
    _, scores = classify(micro_model, img, control)
    assert scores["same"] == pytest.approx(0.5, abs=1e-7)


def test_unknown_aggregate_rejected(micro_model, rng):
    shape = micro_model.input_shape
    control = ControlSet({"c": [_net_img(rng, shape)]})
    with pytest.raises(InvalidInputError):
        classify(micro_model, _net_img(rng, shape), control, aggregate="median")


def test_control_set_validation():
    with pytest.raises(InvalidInputError):
        ControlSet({})
    with pytest.raises(InvalidInputError):
        ControlSet({"empty": []})


def test_labels_sorted():
    img = np.zeros((4, 4, 3), dtype=np.float32)
    control = ControlSet({"b": [img], "a": [img], "c": [img]})
    assert control.labels() == ["a", "b", "c"]


def test_verify_threshold(micro_model, rng):
    shape = micro_model.input_shape
    img = _net_img(rng, shape)
    # identical pair scores exactly 0.5
    assert verify(micro_model, img, img, threshold=0.5)
    assert not verify(micro_model, img, img, threshold=0.500001)
    assert not verify(micro_model, img, _net_img(rng, shape), threshold=1.1)


def test_prepare_query_scales_to_unit_range(rng):
    img = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    out = prepare_query(img, (16, 16, 3), segment=False)
    assert out.dtype == np.float32
    assert out.max() <= 1.0 and out.min() >= 0.0
    np.testing.assert_allclose(out, img.astype(np.float32) / 255.0)


def test_prepare_query_resizes(rng):
    img = rng.integers(0, 256, size=(40, 28, 3), dtype=np.uint8)
    out = prepare_query(img, (16, 16, 3), segment=False)
    assert out.shape == (16, 16, 3)


def test_prepare_query_expands_grayscale(rng):
    img = rng.integers(0, 256, size=(16, 16), dtype=np.uint8)
    out = prepare_query(img, (16, 16, 3), segment=False)
    assert out.shape == (16, 16, 3)
    np.testing.assert_array_equal(out[:, :, 0], out[:, :, 1])


def test_prepare_query_falls_back_on_flat_image():
    # constant image has a degenerate histogram; raw pixels are used instead
    img = np.full((24, 24, 3), 77, dtype=np.uint8)
    out = prepare_query(img, (24, 24, 3), segment=True)
    np.testing.assert_allclose(out, 77.0 / 255.0)


def test_prepare_query_channel_mismatch_rejected(rng):
    img = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    with pytest.raises(InvalidInputError):
        prepare_query(img, (16, 16, 4), segment=False)


def test_load_control_set(tmp_path, rng):
    for name in ("a.ppm", "b.ppm"):
        write_pnm(rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8),
                  str(tmp_path / name))
    manifest = tmp_path / "control.txt"
    manifest.write_text(
        "# control images\n"
        "halal a.ppm\n"
        "\n"
        "non-halal b.ppm\n")
    control = load_control_set(str(manifest), (16, 16, 3), segment=False)
    assert control.labels() == ["halal", "non-halal"]
    assert len(control.references["halal"]) == 1


def test_load_control_set_malformed_line(tmp_path):
    manifest = tmp_path / "control.txt"
    manifest.write_text("just-one-token\n")
    with pytest.raises(DataError):
        load_control_set(str(manifest), (16, 16, 3))


def test_load_control_set_missing_image(tmp_path):
    manifest = tmp_path / "control.txt"
    manifest.write_text("halal nowhere.ppm\n")
    with pytest.raises(DataError):
        load_control_set(str(manifest), (16, 16, 3))


def test_load_control_set_empty(tmp_path):
    manifest = tmp_path / "control.txt"
    manifest.write_text("# only comments\n\n")
    with pytest.raises(DataError):
        load_control_set(str(manifest), (16, 16, 3))


def test_end_to_end_from_files(tmp_path, micro_model, rng):
    shape = micro_model.input_shape
    h, w, _ = shape
    ref = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    write_pnm(ref, str(tmp_path / "ref.ppm"))
    (tmp_path / "control.txt").write_text("halal ref.ppm\n")
    control = load_control_set(str(tmp_path / "control.txt"), shape, segment=False)
    best, scores = classify(micro_model, to_network_input(ref), control)
    assert best == "halal"
    assert scores["halal"] == pytest.approx(0.5, abs=1e-6)
