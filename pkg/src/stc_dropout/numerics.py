"""Dense float64 arrays, seeded generators and a central-difference gradient checker.

Tensors are plain ``numpy.ndarray`` objects; :func:`as_tensor` is the gate that
enforces the float64 / all-finite contract at module boundaries.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

DTYPE = np.float64


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf shows up where only finite values are allowed."""


def as_tensor(x, name: str = "tensor") -> np.ndarray:
    """Return ``x`` as a float64 array, rejecting NaN/Inf entries."""
    arr = np.asarray(x, dtype=DTYPE)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return arr


def check_finite(x: np.ndarray, name: str = "result") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{name} overflowed or produced NaN")
    return x


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a, "a")
    b = as_tensor(b, "b")
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape} @ {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    return check_finite(out, "matmul")


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``seed`` and optional sub-stream ids.

    Sub-streams let independent consumers (init, shuffling, noise, ...) draw
    from the same experiment seed without coupling their sequences.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, stream)])
    return np.random.Generator(np.random.Philox(ss))


def finite_difference_check(
    f: Callable[[np.ndarray], float],
    analytic_grad,
    point,
    step: float = 1e-5,
) -> float:
    """Max relative error between ``analytic_grad`` and central differences of ``f``.

    Per coordinate the error is ``|fd - g| / max(1, |fd|, |g|)``.
    """
    x = as_tensor(point, "point").copy()
    grad = as_tensor(analytic_grad, "analytic_grad")
    if grad.shape != x.shape:
        raise ValueError(f"gradient shape {grad.shape} != point shape {x.shape}")
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(x))
        flat[i] = orig - step
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"f is not finite near coordinate {i}")
        fd = (fp - fm) / (2.0 * step)
        err = abs(fd - g[i]) / max(1.0, abs(fd), abs(g[i]))
        worst = max(worst, err)
    return worst
