"""Dense float64 numerics, a named parameter table, and a finite-difference checker."""

from __future__ import annotations

from typing import Callable, Iterator

import numpy as np

from .exceptions import DimensionError, NumericError

ACTIVATIONS = ("sigmoid", "tanh", "exp")


def check_finite(x: np.ndarray, what: str = "result") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
    return x


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit shape check and finiteness guard."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return check_finite(a @ b, "matmul")


def sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation(kind: str, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    check_finite(x, f"{kind} input")
    if kind == "sigmoid":
        out = sigmoid(x)
    elif kind == "tanh":
        out = np.tanh(x)
    elif kind == "exp":
        out = np.exp(x)
    else:
        raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")
    return check_finite(out, f"{kind} output")


def activation_grad(kind: str, x) -> np.ndarray:
    """Elementwise derivative of :func:`activation` evaluated at ``x``."""
    y = activation(kind, x)
    if kind == "sigmoid":
        return y * (1.0 - y)
    if kind == "tanh":
        return 1.0 - y * y
    return y


class ParamStore:
    """Ordered name -> array table of parameters with matching gradient buffers."""

    def __init__(self, params: dict[str, np.ndarray] | None = None):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=np.float64)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def items(self):
        return self.params.items()

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.params.items()}

    def size(self) -> int:
        return sum(v.size for v in self.params.values())

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def set_grads(self, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if self.params[name].shape != np.shape(g):
                raise DimensionError(
                    f"gradient for {name!r} has shape {np.shape(g)}, parameter has {self.params[name].shape}"
                )
            self.grads[name] = np.array(g, dtype=np.float64)

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, value in self.params.items():
            out.params[name] = value.copy()
            out.grads[name] = self.grads[name].copy()
        return out


def relative_error(analytic, numeric) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def grad_check(loss_fn: Callable[[ParamStore], float], params: ParamStore, h: float = 1e-5) -> float:
    """Compare ``params.grads`` against central differences of ``loss_fn``.

    ``params.grads`` must already hold the analytic gradient at the current
    parameter values. Every entry is perturbed by ``±h`` in place and restored
    afterwards. Returns the maximum relative error over all entries.

    ``loss_fn`` may return a ``np.longdouble``; the difference quotient is then
    formed before rounding to float64.
    """
    if not 1e-6 <= h <= 1e-3:
        raise ValueError(f"step size h={h} outside [1e-6, 1e-3]")
    worst = 0.0
    for name, theta in params.items():
        analytic = params.grads[name]
        flat = theta.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = loss_fn(params)
            flat[i] = orig - h
            f_minus = loss_fn(params)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"non-finite loss when perturbing {name}[{i}]")
            # difference taken in the loss's own precision (may be long double)
            numeric[i] = (f_plus - f_minus) / (2.0 * h)
        err = relative_error(analytic.reshape(-1), numeric)
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
