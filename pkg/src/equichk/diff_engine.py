"""Exact differentiation via hyper-dual numbers, plus a finite-difference oracle.

A hyper-dual number carries a value and three perturbation components::

    x = v + a*e1 + b*e2 + c*e1*e2,    e1^2 = e2^2 = 0,  e1*e2 != 0

Propagating ``e1 = u``, ``e2 = w`` through a twice-differentiable map f gives

    f(x).d1  = Df(v)[u]          (exact first directional derivative)
    f(x).d12 = D^2 f(v)[u, w]    (exact mixed second derivative)

with no truncation error -- the only inaccuracy is ordinary rounding.  Full
gradients and Hessians are directional sweeps over basis directions: the
implementation batches the ``e1`` direction (one map evaluation yields all
d first-order directions), so a full Hessian costs d evaluations each
carrying d directions, i.e. the usual O(d^2) directional pairs.

Components may be scalars or numpy arrays of any broadcast-compatible shape;
scalar zeros are kept as plain ``0.0`` and short-circuited, so unused
perturbation slots cost nothing.  Maps must be written against the generic
helpers at the bottom of this module (``matvec``, ``relu``, ``tanh``, ...),
which accept both plain arrays and hyper-duals -- the same model code is then
exercised by the exact engine and by the finite-difference oracle.

The finite-difference oracle uses central differences with per-coordinate
step ``h_i = fd_step_scale * max(1, |x_i|) * eps**(1/3)``.  It exists to
cross-check the exact engine and to drive every identity check in
``finite_difference`` mode.

Convention note: ReLU is differentiated with ``relu'(0) = 0`` and
``relu'' = 0`` everywhere; checks sample points away from the kink.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from . import tensor_core
from .errors import (
    IndexOutOfRange,
    InvalidParams,
    NonFiniteEntry,
    NonFiniteResult,
    CheckFailure,
)
from .tensor_core import Tensor, from_array

__all__ = [
    "DiffConfig",
    "HyperDual",
    "jacobian",
    "second_derivative",
    "fd_oracle",
    "grad_and_hessian_of_loss",
    "gradient_at_points",
    "hessians_at_points",
    # generic numeric helpers for model code
    "exp", "log", "log1p", "sqrt", "tanh", "relu",
    "matvec", "dot", "sum_last", "expand_last", "take_last", "reshape_tail",
]

_MODES = ("exact", "finite_difference")


@dataclass(frozen=True)
class DiffConfig:
    """Differentiation settings shared by every derivative entry point."""

    mode: str = "exact"
    fd_step_scale: float = 1.0

    def __post_init__(self):
        mode = {"fd": "finite_difference"}.get(self.mode, self.mode)
        if mode not in _MODES:
            raise InvalidParams(f"unknown diff mode {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if not (self.fd_step_scale > 0 and np.isfinite(self.fd_step_scale)):
            raise InvalidParams("fd_step_scale must be a positive finite number")


_DEFAULT = DiffConfig()


def _is_zero(x) -> bool:
    return isinstance(x, float) and x == 0.0


def _add(a, b):
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    return a + b


def _mul(a, b):
    if _is_zero(a) or _is_zero(b):
        return 0.0
    return a * b


class HyperDual:
    """Second-order truncated perturbation number; components scalar or array."""

    __slots__ = ("value", "d1", "d2", "d12")
    # Keep numpy from absorbing us into its own broadcasting machinery.
    __array_ufunc__ = None

    def __init__(self, value, d1=0.0, d2=0.0, d12=0.0):
        self.value = value
        self.d1 = d1
        self.d2 = d2
        self.d12 = d12

    # --- ring operations --------------------------------------------------

    def __add__(self, other):
        if isinstance(other, HyperDual):
            return HyperDual(
                self.value + other.value,
                _add(self.d1, other.d1),
                _add(self.d2, other.d2),
                _add(self.d12, other.d12),
            )
        return HyperDual(self.value + other, self.d1, self.d2, self.d12)

    __radd__ = __add__

    def __neg__(self):
        return HyperDual(
            -self.value,
            -self.d1 if not _is_zero(self.d1) else 0.0,
            -self.d2 if not _is_zero(self.d2) else 0.0,
            -self.d12 if not _is_zero(self.d12) else 0.0,
        )

    def __sub__(self, other):
        return self + (-other if isinstance(other, HyperDual) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, HyperDual):
            return HyperDual(
                self.value * other.value,
                _add(_mul(self.d1, other.value), _mul(self.value, other.d1)),
                _add(_mul(self.d2, other.value), _mul(self.value, other.d2)),
                _add(
                    _add(_mul(self.d12, other.value), _mul(self.value, other.d12)),
                    _add(_mul(self.d1, other.d2), _mul(self.d2, other.d1)),
                ),
            )
        return HyperDual(
            self.value * other,
            _mul(self.d1, other),
            _mul(self.d2, other),
            _mul(self.d12, other),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, HyperDual):
            return self * other._reciprocal()
        return self * (1.0 / np.asarray(other))

    def __rtruediv__(self, other):
        return self._reciprocal() * other

    def __pow__(self, n):
        if isinstance(n, int):
            if n == 0:
                return HyperDual(np.ones_like(np.asarray(self.value, dtype=float)))
            if n == 1:
                return self
            return self._lift(
                lambda v: v ** n,
                lambda v: n * v ** (n - 1),
                lambda v: n * (n - 1) * v ** (n - 2),
            )
        return self._lift(
            lambda v: v ** n,
            lambda v: n * v ** (n - 1),
            lambda v: n * (n - 1) * v ** (n - 2),
        )

    # --- smooth univariate lifts -------------------------------------------

    def _lift(self, f, df, d2f):
        v = self.value
        dv = df(v)
        d12 = _add(_mul(dv, self.d12), _mul(_mul(d2f(v), self.d1), self.d2))
        return HyperDual(f(v), _mul(dv, self.d1), _mul(dv, self.d2), d12)

    def _reciprocal(self):
        return self._lift(
            lambda v: 1.0 / v, lambda v: -1.0 / v ** 2, lambda v: 2.0 / v ** 3
        )

    def exp(self):
        ev = np.exp(self.value)
        return self._lift(lambda v: ev, lambda v: ev, lambda v: ev)

    def log(self):
        return self._lift(np.log, lambda v: 1.0 / v, lambda v: -1.0 / v ** 2)

    def log1p(self):
        return self._lift(
            np.log1p, lambda v: 1.0 / (1.0 + v), lambda v: -1.0 / (1.0 + v) ** 2
        )

    def sqrt(self):
        r = np.sqrt(self.value)
        return self._lift(
            lambda v: r, lambda v: 0.5 / r, lambda v: -0.25 / (r * v)
        )

    def tanh(self):
        t = np.tanh(self.value)
        sech2 = 1.0 - t * t
        return self._lift(
            lambda v: t, lambda v: sech2, lambda v: -2.0 * t * sech2
        )

    def relu(self):
        # relu'(0) = 0 and relu'' = 0 by convention: the sub-gradient slot at
        # the kink is pinned to the "off" branch.
        mask = (np.asarray(self.value) > 0.0).astype(float)
        return HyperDual(
            np.asarray(self.value) * mask,
            _mul(self.d1, mask),
            _mul(self.d2, mask),
            _mul(self.d12, mask),
        )

    # --- structural ops -----------------------------------------------------

    def __getitem__(self, key):
        def pick(c):
            return c if _is_zero(c) else np.asarray(c)[key]

        return HyperDual(np.asarray(self.value)[key], pick(self.d1), pick(self.d2), pick(self.d12))

    def reshape_tail(self, n_tail: int, new_tail: Tuple[int, ...]):
        """Reshape the trailing ``n_tail`` axes to ``new_tail``, keeping any
        leading (direction-batch) axes untouched."""

        def rs(c):
            if _is_zero(c):
                return c
            c = np.asarray(c)
            lead = c.shape[: c.ndim - n_tail]
            return c.reshape(lead + tuple(new_tail))

        return HyperDual(rs(self.value), rs(self.d1), rs(self.d2), rs(self.d12))

    def sum_last(self):
        def s(c):
            return c if _is_zero(c) else np.asarray(c).sum(axis=-1)

        return HyperDual(s(self.value), s(self.d1), s(self.d2), s(self.d12))

    def expand_last(self):
        def e(c):
            return c if _is_zero(c) else np.asarray(c)[..., None]

        return HyperDual(e(self.value), e(self.d1), e(self.d2), e(self.d12))

    def __repr__(self):
        return f"HyperDual(value={self.value!r})"


# --- generic numeric layer ----------------------------------------------------
#
# Model and loss code is written against these helpers so the same forward
# pass runs on plain float arrays (finite differences, trajectory recording)
# and on hyper-duals (exact derivatives).

def exp(x):
    return x.exp() if isinstance(x, HyperDual) else np.exp(x)


def log(x):
    return x.log() if isinstance(x, HyperDual) else np.log(x)


def log1p(x):
    return x.log1p() if isinstance(x, HyperDual) else np.log1p(x)


def sqrt(x):
    return x.sqrt() if isinstance(x, HyperDual) else np.sqrt(x)


def tanh(x):
    return x.tanh() if isinstance(x, HyperDual) else np.tanh(x)


def relu(x):
    if isinstance(x, HyperDual):
        return x.relu()
    x = np.asarray(x, dtype=float)
    return x * (x > 0.0)


def _einsum2(spec: str, a, b):
    """Bilinear einsum over two operands, either of which may be hyper-dual."""
    a_hd = isinstance(a, HyperDual)
    b_hd = isinstance(b, HyperDual)
    if not a_hd and not b_hd:
        return np.einsum(spec, a, b)

    def ein(x, y):
        if _is_zero(x) or _is_zero(y):
            return 0.0
        return np.einsum(spec, x, y)

    av, a1, a2, a12 = (
        (a.value, a.d1, a.d2, a.d12) if a_hd else (a, 0.0, 0.0, 0.0)
    )
    bv, b1, b2, b12 = (
        (b.value, b.d1, b.d2, b.d12) if b_hd else (b, 0.0, 0.0, 0.0)
    )
    value = np.einsum(spec, av, bv)
    d1 = _add(ein(a1, bv), ein(av, b1))
    d2 = _add(ein(a2, bv), ein(av, b2))
    d12 = _add(
        _add(ein(a12, bv), ein(av, b12)),
        _add(ein(a1, b2), ein(a2, b1)),
    )
    return HyperDual(value, d1, d2, d12)


def matvec(w, z):
    """Apply a (..., out, in) matrix block to a (..., in) vector."""
    return _einsum2("...ij,...j->...i", w, z)


def dot(a, b):
    """Inner product over the last axis."""
    return _einsum2("...i,...i->...", a, b)


def sum_last(x):
    return x.sum_last() if isinstance(x, HyperDual) else np.asarray(x).sum(axis=-1)


def expand_last(x):
    return x.expand_last() if isinstance(x, HyperDual) else np.asarray(x)[..., None]


def take_last(x, sl: slice):
    """Slice the last axis (parameter unpacking)."""
    key = (Ellipsis, sl)
    return x[key] if isinstance(x, HyperDual) else np.asarray(x)[key]


def reshape_tail(x, n_tail: int, new_tail: Tuple[int, ...]):
    if isinstance(x, HyperDual):
        return x.reshape_tail(n_tail, new_tail)
    x = np.asarray(x)
    lead = x.shape[: x.ndim - n_tail]
    return x.reshape(lead + tuple(new_tail))


# --- derivative sweeps ---------------------------------------------------------

def _as_point(point) -> np.ndarray:
    arr = point.array if isinstance(point, Tensor) else np.asarray(point, dtype=float)
    arr = np.asarray(arr, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteEntry("evaluation point contains NaN or Inf")
    return arr


def _normalize(component, lead: Tuple[int, ...], out_shape: Tuple[int, ...]) -> np.ndarray:
    target = lead + out_shape
    if _is_zero(component):
        return np.zeros(target)
    return np.broadcast_to(np.asarray(component, dtype=float), target).copy()


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteResult(f"{what} produced NaN or Inf")


def jacobian(map_fn: Callable, point, config: Optional[DiffConfig] = None) -> Tensor:
    """Gradient tensor of ``map_fn`` at ``point``.

    For f: R^d -> tensors of shape s the result has shape ``(d, *s)`` with
    entry ``[i, ...] = d f[...] / d theta_i`` (parameter axis first, so plain
    composition contracts it).
    """
    cfg = config or _DEFAULT
    x = _as_point(point)
    if cfg.mode == "finite_difference":
        return fd_oracle(map_fn, x, 1, cfg)
    d = x.size
    seed = HyperDual(x, d1=np.eye(d))
    out = map_fn(seed)
    if not isinstance(out, HyperDual):  # constant map
        out_shape = np.shape(np.asarray(out))
        return from_array(np.zeros((d,) + out_shape))
    out_shape = np.shape(np.asarray(out.value))
    _check_finite(np.asarray(out.value, dtype=float), "map evaluation")
    jac = _normalize(out.d1, (d,), out_shape)
    _check_finite(jac, "jacobian sweep")
    return from_array(jac)


def second_derivative(map_fn: Callable, point, config: Optional[DiffConfig] = None) -> Tensor:
    """Second-derivative tensor, shape ``(d, d, *s)``, symmetric in the two
    leading axes.  One batched evaluation per basis direction of the second
    perturbation slot."""
    cfg = config or _DEFAULT
    x = _as_point(point)
    if cfg.mode == "finite_difference":
        return fd_oracle(map_fn, x, 2, cfg)
    d = x.size
    eye = np.eye(d)
    rows = []
    out_shape = None
    for j in range(d):
        seed = HyperDual(x, d1=eye, d2=eye[j])
        out = map_fn(seed)
        if not isinstance(out, HyperDual):
            out_shape = np.shape(np.asarray(out))
            rows.append(np.zeros((d,) + out_shape))
            continue
        out_shape = np.shape(np.asarray(out.value))
        rows.append(_normalize(out.d12, (d,), out_shape))
    hess = np.stack(rows, axis=0)
    _check_finite(hess, "second-derivative sweep")
    return from_array(hess)


def fd_oracle(map_fn: Callable, point, order: int, config: Optional[DiffConfig] = None) -> Tensor:
    """Central finite differences of order 1 or 2 (the independent oracle).

    Steps follow ``h_i = fd_step_scale * max(1, |x_i|) * eps**(1/p)`` with
    p = 3 for first and p = 4 for second derivatives — the classical
    truncation/rounding balance for each order (a cube-root step on a second
    difference lets eps/h^2 rounding dominate at ~1e-5).
    """
    cfg = config or _DEFAULT
    x = _as_point(point)
    d = x.size
    if order not in (1, 2):
        raise IndexOutOfRange(f"fd_oracle order must be 1 or 2, got {order}")
    exponent = 1.0 / 3.0 if order == 1 else 0.25
    h = cfg.fd_step_scale * np.maximum(1.0, np.abs(x)) * np.finfo(float).eps ** exponent

    def ev(p: np.ndarray) -> np.ndarray:
        return np.asarray(map_fn(p), dtype=float)

    if order == 1:
        cols = []
        for i in range(d):
            e = np.zeros(d)
            e[i] = h[i]
            cols.append((ev(x + e) - ev(x - e)) / (2.0 * h[i]))
        out = np.stack(cols, axis=0)
    elif order == 2:
        f0 = ev(x)
        out = np.zeros((d, d) + f0.shape)
        for i in range(d):
            ei = np.zeros(d)
            ei[i] = h[i]
            out[i, i] = (ev(x + ei) - 2.0 * f0 + ev(x - ei)) / (h[i] * h[i])
            for j in range(i + 1, d):
                ej = np.zeros(d)
                ej[j] = h[j]
                mixed = (
                    ev(x + ei + ej) - ev(x + ei - ej) - ev(x - ei + ej) + ev(x - ei - ej)
                ) / (4.0 * h[i] * h[j])
                out[i, j] = mixed
                out[j, i] = mixed
    _check_finite(out, "finite-difference sweep")
    return from_array(out)


def grad_and_hessian_of_loss(
    model,
    loss,
    point,
    config: Optional[DiffConfig] = None,
    check_assembly: bool = True,
) -> Tuple[float, Tensor, Tensor]:
    """Value, gradient, and Hessian of ``L = loss o model`` at ``point``.

    The gradient/Hessian are obtained by differentiating the composite map
    directly.  When ``check_assembly`` is on, the Hessian is additionally
    assembled from the chain/product rule

        hess(L) = hess(loss) o jac(f) o_2 jac(f) + grad(loss) o hess(f)

    and the two routes must agree (1e-10 relative in exact mode, 1e-4 with
    finite differences); a mismatch raises :class:`CheckFailure`.
    """
    cfg = config or _DEFAULT
    x = _as_point(point)

    def composite(th):
        return loss.apply(model.func(th))

    value = float(np.asarray(composite(x)))
    if not np.isfinite(value):
        raise NonFiniteResult("loss evaluation produced NaN or Inf")
    grad = jacobian(composite, x, cfg)
    hess = second_derivative(composite, x, cfg)

    if check_assembly:
        jac_f = jacobian(model.func, x, cfg)
        hess_f = second_derivative(model.func, x, cfg)
        y = np.asarray(model.func(x), dtype=float)
        gl = from_array(loss.grad(y))
        hl = from_array(loss.hess(y))
        gauss_newton = tensor_core.compose_k(tensor_core.compose(hl, jac_f), jac_f, 2)
        assembled = gauss_newton + tensor_core.compose(gl, hess_f)
        scale = max(hess.norm(), assembled.norm(), 1e-12)
        tol = 1e-10 if cfg.mode == "exact" else 1e-4
        gap = (hess - assembled).norm() / scale
        if gap > tol:
            raise CheckFailure(
                f"hessian assembly self-check failed: relative gap {gap:.3e} > {tol:g}"
            )
    return value, grad, hess


# --- batched sweeps for dynamics ------------------------------------------------

def gradient_at_points(map_fn: Callable, points: np.ndarray) -> np.ndarray:
    """Gradients of a scalar map at a batch of points, shape (M, d).

    One hyper-dual evaluation carrying all d directions, vectorized over the
    batch axis of ``points``.
    """
    pts = np.asarray(points, dtype=float)
    m, d = pts.shape
    seed = HyperDual(pts, d1=np.eye(d)[:, None, :])
    out = map_fn(seed)
    if not isinstance(out, HyperDual):
        return np.zeros((m, d))
    grads = _normalize(out.d1, (d,), np.shape(np.asarray(out.value)))
    _check_finite(grads, "batched gradient sweep")
    return np.ascontiguousarray(np.moveaxis(grads, 0, -1))


def hessians_at_points(map_fn: Callable, points: np.ndarray) -> np.ndarray:
    """Hessians of a scalar map at a batch of points, shape (M, d, d)."""
    pts = np.asarray(points, dtype=float)
    m, d = pts.shape
    eye = np.eye(d)
    out = np.zeros((m, d, d))
    for j in range(d):
        seed = HyperDual(pts, d1=eye[:, None, :], d2=eye[j])
        res = map_fn(seed)
        if not isinstance(res, HyperDual):
            continue
        col = _normalize(res.d12, (d,), np.shape(np.asarray(res.value)))
        out[:, :, j] = col.T
    _check_finite(out, "batched hessian sweep")
    return out
