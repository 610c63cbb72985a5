import sys
import os

# Pin BLAS to one core before numpy loads so the timed acceptance checks
# measure genuine single-core performance.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from halalnet import backbone, datakit


MICRO_CFG = """\
input = 16x16x3

[block]
op = conv
kernel = 3
stride = 2
channels = 4
padding = same

[block]
op = sepconv
kernel = 3
stride = 1
channels = 8
padding = same
residual = true

[block]
op = maxpool
kernel = 2
stride = 2
padding = valid
"""


@pytest.fixture(scope="session")
def micro_config():
    """A 3-block backbone small enough for per-test training loops."""
    return backbone.parse_config(MICRO_CFG, source="micro")


@pytest.fixture(scope="session")
def micro_config_text():
    return MICRO_CFG


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    """A small synthetic dataset shared by the read-only tests."""
    out = tmp_path_factory.mktemp("synth")
    spec = datakit.SyntheticSpec(seed=11, size=64, count_a=16, count_b=16)
    datakit.generate_synthetic(spec, out)
    return out


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
