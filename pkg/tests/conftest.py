import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from conesep import Rng, init_params


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def small_setup(rng):
    """Params plus a random batch small enough for exhaustive gradient checks."""
    d_raw, dim, b = 4, 6, 4
    params = init_params(d_raw, dim, rng)
    batch = (rng.normal(b, d_raw), rng.normal(b, d_raw), rng.normal(b, d_raw))
    return params, batch


def make_outputs(f_c=None, f_t=None, f_neg=None):
    """ForwardOutputs with injected feature values and detached parameter leaves.

    Gradients through these outputs are zero; only loss values are meaningful.
    """
    from conesep import autodiff as ad
    from conesep.model import PARAM_FIELDS, ForwardOutputs

    ref = next(m for m in (f_c, f_t, f_neg) if m is not None)
    b, d = np.shape(ref)
    filled = [np.asarray(m, dtype=float) if m is not None else np.eye(b, d) for m in (f_c, f_t, f_neg)]
    handles = {name: ad.leaf(np.zeros(1), needs_grad=True) for name in PARAM_FIELDS}
    return ForwardOutputs(
        f_c=ad.const(filled[0]), f_t=ad.const(filled[1]), f_neg=ad.const(filled[2]), param_tensors=handles
    )
