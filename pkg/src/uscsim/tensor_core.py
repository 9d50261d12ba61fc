"""Dense operators on truncated tensor-product Hilbert spaces.

Everything here is plain numpy. Tensor products use the row-major Kronecker
convention with factors in layout order, i.e. ``np.kron(A0, np.kron(A1, A2))``
for a three-factor layout. The package-wide factor order is
(qubit, USC cavity, nonlinear resonator).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from math import prod
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionError,
    HermiticityError,
    LayoutError,
    StateError,
    TruncationError,
)

__all__ = [
    "HilbertLayout",
    "Operator",
    "DensityMatrix",
    "destroy",
    "create",
    "number",
    "identity",
    "sigma_x",
    "sigma_z",
    "basis",
    "coherent_state",
    "embed",
    "tensor",
    "eig_hermitian",
    "partial_trace",
    "partial_transpose",
    "ket2dm",
    "commutator",
    "fock_leakage",
]

HERMITIAN_ATOL = 1e-12
TRACE_TOL = 1e-9
STATE_HERMITIAN_TOL = 1e-10
MIN_EIG_TOL = -1e-8


@dataclass(frozen=True)
class HilbertLayout:
    """Ordered factor dimensions of a tensor-product space.

    ``labels`` name the factors; the qubit factor (if labelled ``"qubit"``)
    must have dimension 2, bosonic factors any dimension >= 1.
    """

    dims: tuple[int, ...]
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise DimensionError("layout needs at least one factor")
        if any(d < 1 for d in dims):
            raise DimensionError(f"factor dimensions must be >= 1, got {dims}")
        labels = tuple(self.labels) or tuple(f"f{i}" for i in range(len(dims)))
        if len(labels) != len(dims):
            raise DimensionError("one label per factor required")
        if len(set(labels)) != len(labels):
            raise DimensionError(f"duplicate factor labels {labels}")
        if "qubit" in labels and dims[labels.index("qubit")] != 2:
            raise DimensionError("qubit factor must have dimension 2")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def single(cls, n: int, label: str = "mode") -> "HilbertLayout":
        return cls((n,), (label,))

    @property
    def total(self) -> int:
        return prod(self.dims)

    @property
    def n_factors(self) -> int:
        return len(self.dims)

    def slot(self, key: int | str) -> int:
        """Return the factor index for an index or a label."""
        if isinstance(key, str):
            try:
                return self.labels.index(key)
            except ValueError:
                raise LayoutError(f"layout {self.labels} has no factor {key!r}") from None
        key = int(key)
        if not 0 <= key < len(self.dims):
            raise LayoutError(f"factor index {key} out of range for {len(self.dims)} factors")
        return key

    def has(self, label: str) -> bool:
        return label in self.labels

    def keep(self, slots: Iterable[int | str]) -> "HilbertLayout":
        idx = sorted(self.slot(s) for s in slots)
        return HilbertLayout(tuple(self.dims[i] for i in idx), tuple(self.labels[i] for i in idx))


def _as_layout(layout, n) -> HilbertLayout:
    if layout is None:
        return HilbertLayout.single(n)
    if isinstance(layout, HilbertLayout):
        return layout
    return HilbertLayout(tuple(layout))


class Operator:
    """Square complex matrix tagged with a :class:`HilbertLayout`.

    Instances are treated as immutable; arithmetic returns new objects.
    Passing ``hermitian=True`` verifies ``max|A - A^dag|`` against
    ``HERMITIAN_ATOL`` relative to ``max(1, max|A|)``.
    """

    __array_priority__ = 1000

    def __init__(self, data, layout: HilbertLayout | Sequence[int] | None = None, *, hermitian: bool = False):
        arr = np.array(data, dtype=complex)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DimensionError(f"operator must be square, got shape {arr.shape}")
        layout = _as_layout(layout, arr.shape[0])
        if arr.shape[0] != layout.total:
            raise DimensionError(f"matrix side {arr.shape[0]} != layout dimension {layout.total}")
        arr.setflags(write=False)
        self.data = arr
        self.layout = layout
        if hermitian:
            err = hermiticity_error(arr)
            if err >= HERMITIAN_ATOL:
                raise HermiticityError(f"operator not Hermitian: max|A-A^dag|/scale = {err:.3e}")
        self.hermitian = hermitian

    @property
    def shape(self):
        return self.data.shape

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def dag(self) -> "Operator":
        return Operator(self.data.conj().T, self.layout)

    def tr(self) -> complex:
        return complex(np.trace(self.data))

    def expect(self, state) -> complex:
        """Expectation value on a ket (1-D) or a density matrix."""
        s = state.data if isinstance(state, Operator) else np.asarray(state)
        if s.ndim == 1:
            return complex(np.vdot(s, self.data @ s))
        return complex(np.einsum("ij,ji->", self.data, s))

    def is_hermitian(self, tol: float = HERMITIAN_ATOL) -> bool:
        return hermiticity_error(self.data) < tol

    def _check(self, other: "Operator"):
        if self.layout.dims != other.layout.dims:
            raise DimensionError(f"layout mismatch {self.layout.dims} vs {other.layout.dims}")

    def __add__(self, other):
        if isinstance(other, Operator):
            self._check(other)
            return Operator(self.data + other.data, self.layout)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, Operator):
            self._check(other)
            return Operator(self.data - other.data, self.layout)
        return NotImplemented

    def __neg__(self):
        return Operator(-self.data, self.layout)

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return Operator(self.data * scalar, self.layout)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if np.isscalar(scalar):
            return Operator(self.data / scalar, self.layout)
        return NotImplemented

    def __matmul__(self, other):
        if isinstance(other, Operator):
            self._check(other)
            return Operator(self.data @ other.data, self.layout)
        arr = np.asarray(other)
        return self.data @ arr

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self):
        return f"{type(self).__name__}(dims={self.layout.dims}, labels={self.layout.labels})"


def hermiticity_error(arr: np.ndarray) -> float:
    scale = max(1.0, float(np.max(np.abs(arr)))) if arr.size else 1.0
    return float(np.max(np.abs(arr - arr.conj().T))) / scale if arr.size else 0.0


class DensityMatrix(Operator):
    """Validated state: unit trace, Hermitian, (almost) positive.

    The positivity floor ``MIN_EIG_TOL`` leaves room for integrator drift.
    """

    def __init__(self, data, layout=None, *, trace_tol: float = TRACE_TOL, validate: bool = True):
        super().__init__(data, layout)
        self.trace_tol = trace_tol
        if validate:
            self.validate()

    def validate(self):
        tr = np.trace(self.data)
        if abs(tr - 1.0) > self.trace_tol:
            raise StateError(f"trace {tr.real:.12f} deviates from 1 by more than {self.trace_tol:g}")
        herm = float(np.max(np.abs(self.data - self.data.conj().T)))
        if herm > STATE_HERMITIAN_TOL:
            raise StateError(f"density matrix not Hermitian (max deviation {herm:.2e})")
        lam = np.linalg.eigvalsh(0.5 * (self.data + self.data.conj().T))[0]
        if lam < MIN_EIG_TOL:
            raise StateError(f"density matrix has eigenvalue {lam:.3e} < {MIN_EIG_TOL:g}")
        return self

    @classmethod
    def from_ket(cls, psi, layout=None) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex).ravel()
        return cls(np.outer(psi, psi.conj()), layout)

    def purity(self) -> float:
        return float(np.real(np.einsum("ij,ji->", self.data, self.data)))


# --------------------------------------------------------------------------
# elementary operators and states


def destroy(n: int) -> Operator:
    """Truncated annihilation operator, ``a[m, m+1] = sqrt(m+1)``."""
    if int(n) < 1:
        raise DimensionError(f"dimension must be >= 1, got {n}")
    n = int(n)
    return Operator(np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1), HilbertLayout.single(n))


def create(n: int) -> Operator:
    return destroy(n).dag()


def number(n: int) -> Operator:
    if int(n) < 1:
        raise DimensionError(f"dimension must be >= 1, got {n}")
    return Operator(np.diag(np.arange(int(n), dtype=float)), HilbertLayout.single(int(n)), hermitian=True)


def identity(n: int | HilbertLayout) -> Operator:
    layout = n if isinstance(n, HilbertLayout) else HilbertLayout.single(int(n))
    return Operator(np.eye(layout.total), layout)


# Qubit basis order is (|L>, |R>): sigma_z = |L><L| - |R><R|.
def sigma_z() -> Operator:
    return Operator(np.diag([1.0, -1.0]), HilbertLayout.single(2, "qubit"), hermitian=True)


def sigma_x() -> Operator:
    return Operator(np.array([[0.0, 1.0], [1.0, 0.0]]), HilbertLayout.single(2, "qubit"), hermitian=True)


def basis(n: int, k: int) -> np.ndarray:
    if not 0 <= k < n:
        raise DimensionError(f"basis index {k} outside dimension {n}")
    v = np.zeros(n, dtype=complex)
    v[k] = 1.0
    return v


def coherent_amplitudes(alpha: complex, n: int) -> np.ndarray:
    """Untruncated-normalisation Fock amplitudes ``e^{-|a|^2/2} a^k / sqrt(k!)``."""
    alpha = complex(alpha)
    c = np.empty(n, dtype=complex)
    c[0] = np.exp(-0.5 * abs(alpha) ** 2)
    for k in range(1, n):
        c[k] = c[k - 1] * alpha / np.sqrt(k)
    return c


def coherent_state(alpha: complex, n: int, max_deficit: float = 1e-8) -> np.ndarray:
    """Coherent state in an ``n``-level Fock space, renormalised after truncation.

    Raises
    ------
    TruncationError
        If the norm missing above the cut exceeds ``max_deficit``.
    """
    if int(n) < 1:
        raise DimensionError(f"dimension must be >= 1, got {n}")
    c = coherent_amplitudes(alpha, int(n))
    norm2 = float(np.sum(np.abs(c) ** 2))
    deficit = 1.0 - norm2
    if deficit > max_deficit:
        raise TruncationError(
            f"coherent state |{alpha}> truncated at n={n}: norm deficit {deficit:.3e}", deficit
        )
    return c / np.sqrt(norm2)


def ket2dm(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).ravel()
    return np.outer(psi, psi.conj())


def commutator(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    return a @ b - b @ a


# --------------------------------------------------------------------------
# tensor structure


def tensor(*ops) -> Operator:
    """Kronecker product of single- or multi-factor operators, layouts concatenated."""
    if len(ops) == 1 and isinstance(ops[0], (list, tuple)):
        ops = tuple(ops[0])
    ops = [o if isinstance(o, Operator) else Operator(o) for o in ops]
    data = reduce(np.kron, (o.data for o in ops))
    dims = sum((o.layout.dims for o in ops), ())
    labels = sum((o.layout.labels for o in ops), ())
    if len(set(labels)) != len(labels):
        labels = ()
    return Operator(data, HilbertLayout(dims, labels))


def embed(op, layout: HilbertLayout, slot: int | str) -> Operator:
    """``I x ... x op x ... x I`` with ``op`` acting on factor ``slot``."""
    i = layout.slot(slot)
    data = op.data if isinstance(op, Operator) else np.asarray(op, dtype=complex)
    if data.shape != (layout.dims[i], layout.dims[i]):
        raise DimensionError(
            f"operator of side {data.shape[0]} does not fit factor {i} of dimension {layout.dims[i]}"
        )
    left = prod(layout.dims[:i])
    right = prod(layout.dims[i + 1 :])
    full = np.kron(np.kron(np.eye(left), data), np.eye(right))
    return Operator(full, layout)


def eig_hermitian(op) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and orthonormal eigenvectors (columns).

    Each eigenvector is phased so that its largest-magnitude component is
    real and positive (ties resolved by the lowest index).
    """
    data = op.data if isinstance(op, Operator) else np.asarray(op, dtype=complex)
    err = hermiticity_error(data)
    if err >= HERMITIAN_ATOL:
        raise HermiticityError(f"eig_hermitian needs a Hermitian input (error {err:.3e})")
    vals, vecs = np.linalg.eigh(0.5 * (data + data.conj().T))
    return vals, fix_phases(vecs)


def fix_phases(vecs: np.ndarray) -> np.ndarray:
    vecs = np.array(vecs, dtype=complex)
    mags = np.abs(vecs)
    # argmax picks the first of equal maxima; round so that numerically equal
    # magnitudes resolve deterministically to the lowest index
    idx = np.argmax(np.round(mags, 12), axis=0)
    ph = vecs[idx, np.arange(vecs.shape[1])]
    ph = ph / np.abs(ph)
    return vecs / ph[None, :]


def _tensor_view(rho: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    return rho.reshape(tuple(dims) * 2)


def partial_trace(rho, keep: Iterable[int | str], layout: HilbertLayout | None = None):
    """Trace out every factor not listed in ``keep``.

    Accepts a :class:`DensityMatrix`/:class:`Operator` (layout taken from it)
    or a bare array with an explicit ``layout``. Returns the same kind.
    """
    is_op = isinstance(rho, Operator)
    layout = rho.layout if is_op else layout
    if layout is None:
        raise LayoutError("partial_trace on a bare array needs a layout")
    data = rho.data if is_op else np.asarray(rho)
    keep_idx = sorted({layout.slot(k) for k in keep})
    if not keep_idx:
        raise LayoutError("keep must name at least one factor")
    n = layout.n_factors
    t = _tensor_view(data, layout.dims)
    letters = "abcdefghijklmnopqrstuvwxyz"
    row = list(letters[:n])
    col = list(letters[n : 2 * n])
    for i in range(n):
        if i not in keep_idx:
            col[i] = row[i]
    out = "".join(row[i] for i in keep_idx) + "".join(col[i] for i in keep_idx)
    red = np.einsum("".join(row) + "".join(col) + "->" + out, t)
    d = prod(layout.dims[i] for i in keep_idx)
    red = red.reshape(d, d)
    sub = layout.keep(keep_idx)
    if isinstance(rho, DensityMatrix):
        return DensityMatrix(red, sub, trace_tol=rho.trace_tol)
    if is_op:
        return Operator(red, sub)
    return red


def partial_transpose(rho, factor: int | str, layout: HilbertLayout | None = None):
    """Transpose the indices of one factor; returns an :class:`Operator`
    (or an array if given an array)."""
    is_op = isinstance(rho, Operator)
    layout = rho.layout if is_op else layout
    if layout is None:
        raise LayoutError("partial_transpose on a bare array needs a layout")
    i = layout.slot(factor)
    data = rho.data if is_op else np.asarray(rho)
    n = layout.n_factors
    t = _tensor_view(data, layout.dims)
    axes = list(range(2 * n))
    axes[i], axes[n + i] = axes[n + i], axes[i]
    out = t.transpose(axes).reshape(data.shape)
    return Operator(out, layout) if is_op else out


def fock_leakage(rho: np.ndarray, layout: HilbertLayout, slot: int | str, top: int = 2) -> float:
    """Population in the ``top`` highest Fock levels of one factor."""
    i = layout.slot(slot)
    diag = np.real(np.diagonal(rho)).reshape(layout.dims)
    pops = diag.sum(axis=tuple(j for j in range(layout.n_factors) if j != i))
    return float(pops[-top:].sum())
