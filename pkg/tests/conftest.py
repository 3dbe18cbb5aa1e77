"""Shared test helpers: finite-difference gradient checking and fixtures."""

from __future__ import annotations

import numpy as np
import pytest

from trajkit.nn.tensor import Tensor


def rel_err(a: float, b: float, floor: float = 1e-3) -> float:
    return abs(a - b) / max(abs(a) + abs(b), floor)


def finite_difference_check(build_loss, tensors: list[Tensor], eps: float = 1e-5,
                            tol: float = 1e-4, max_entries: int | None = None,
                            rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients of ``build_loss()`` (a scalar Tensor rebuilt
    from the tensors' current data) against central finite differences.

    Returns the worst relative error seen; asserts every entry is below tol.
    """
    loss = build_loss()
    for t in tensors:
        t.grad = None
    loss.backward()
    worst = 0.0
    for t in tensors:
        assert t.grad is not None, "no gradient reached a checked tensor"
        grad = t.grad.reshape(-1).copy()
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            assert rng is not None
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(build_loss().data)
            flat[i] = orig - eps
            f_minus = float(build_loss().data)
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            err = rel_err(float(grad[i]), fd)
            worst = max(worst, err)
            assert err < tol, f"grad mismatch at {i}: analytic {grad[i]}, fd {fd}, rel {err}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
