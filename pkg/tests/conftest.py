import numpy as np
import pytest


def _clear(r, head, margin=0.01, rounds=50):
    rows = np.atleast_2d(np.asarray(getattr(r, "data", r)))
    for _ in range(rounds):
        pre = rows @ head.w1.data + head.b1.data
        close = (np.abs(pre) < margin).any(axis=0)
        if not close.any():
            return
        head.b1.data = head.b1.data + np.where(close, 3 * margin, 0.0)
    raise RuntimeError("could not move hidden units off the relu kink")


@pytest.fixture
def off_relu_kinks():
    """Shift head biases so no hidden pre-activation sits within finite-difference reach of 0."""
    return _clear
