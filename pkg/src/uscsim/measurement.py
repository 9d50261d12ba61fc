"""Coarse-grained quadrature readout of the nonlinear resonator.

The binary effects are

    W_pm = 1/2 int erfc(-/+ x / (sqrt(2) sigma)) |x><x| dx

for the quadrature ``x = (b + b^dag)/2`` (vacuum variance 1/4), computed in the
Fock basis by Gauss-Legendre quadrature on the two half-lines.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import erfc

from .errors import DegenerateOutcomeError, LayoutError, NumericalError, ScenarioError
from .tensor_core import DensityMatrix, HilbertLayout, Operator

__all__ = [
    "CoarseGrain",
    "EffectPair",
    "quadrature_effects",
    "hermite_functions",
    "position_wavefunctions",
    "conditional_states",
    "ConditionalStates",
    "BranchReadout",
    "low_amplitude_probability",
    "high_low_split",
    "HighLowSplit",
]


@dataclass(frozen=True)
class CoarseGrain:
    """Measurement blur ``sigma`` in quadrature units.

    ``0`` (or ``"zero"``) is the ideal sign measurement, ``math.inf`` (or
    ``"infinity"``) reads out nothing.
    """

    sigma: float

    def __post_init__(self):
        s = self.sigma
        if isinstance(s, str):
            key = s.strip().lower()
            if key in ("zero", "0"):
                s = 0.0
            elif key in ("inf", "infinity"):
                s = math.inf
            else:
                s = float(s)
        s = float(s)
        if math.isnan(s) or s < 0:
            raise ScenarioError(f"sigma must be >= 0 (or 'zero'/'infinity'), got {self.sigma!r}")
        object.__setattr__(self, "sigma", s)

    @property
    def is_sharp(self) -> bool:
        return self.sigma == 0.0

    @property
    def is_blind(self) -> bool:
        return math.isinf(self.sigma)


@dataclass(frozen=True)
class EffectPair:
    """Binary POVM on the resonator: ``plus`` for x >= 0, ``minus`` for x < 0."""

    plus: np.ndarray
    minus: np.ndarray
    sigma: float

    @property
    def dim(self) -> int:
        return self.plus.shape[0]

    def completeness_error(self) -> float:
        return float(np.max(np.abs(self.plus + self.minus - np.eye(self.dim))))

    def sqrt_plus(self) -> np.ndarray:
        return _psd_sqrt(self.plus)

    def sqrt_minus(self) -> np.ndarray:
        return _psd_sqrt(self.minus)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(m)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.conj().T


def hermite_functions(n: int, xi: np.ndarray) -> np.ndarray:
    """Normalised Hermite functions ``phi_k(xi)``, k < n, as an (n, len(xi)) array.

    Upward recurrence run on rescaled values with a per-node log-scale so that
    neither the Gaussian factor nor high orders under/overflow.
    """
    xi = np.asarray(xi, dtype=float)
    out = np.empty((n, xi.size))
    log_scale = -0.5 * xi**2 - 0.25 * math.log(math.pi)
    prev = np.zeros_like(xi)
    cur = np.ones_like(xi)
    scale_applied = np.zeros_like(xi)  # accumulated log rescaling per node
    out[0] = np.exp(log_scale)
    for k in range(n - 1):
        nxt = math.sqrt(2.0 / (k + 1)) * xi * cur - math.sqrt(k / (k + 1)) * prev
        prev, cur = cur, nxt
        big = np.abs(cur) > 1e150
        if np.any(big):
            s = np.where(big, np.log(np.abs(cur)), 0.0)
            f = np.exp(-s)
            cur = cur * f
            prev = prev * f
            scale_applied += s
        out[k + 1] = cur * np.exp(log_scale + scale_applied)
    return out


def position_wavefunctions(n: int, x: np.ndarray) -> np.ndarray:
    """``psi_k(x)`` for the quadrature ``x = (b + b^dag)/2``: ``2^{1/4} phi_k(sqrt(2) x)``."""
    return 2.0**0.25 * hermite_functions(n, math.sqrt(2.0) * np.asarray(x, dtype=float))


def _half_line_effect(n: int, sigma: float, nodes: int) -> np.ndarray:
    length = 4.0 + 2.0 * math.sqrt(n)
    g, w = np.polynomial.legendre.leggauss(nodes)
    xs = np.concatenate([0.5 * length * (g - 1.0), 0.5 * length * (g + 1.0)])
    ws = np.concatenate([w, w]) * 0.5 * length
    if sigma == 0.0:
        weight = (xs > 0).astype(float)
    else:
        weight = 0.5 * erfc(-xs / (math.sqrt(2.0) * sigma))
    psi = position_wavefunctions(n, xs)
    return (psi * (ws * weight)) @ psi.T


@lru_cache(maxsize=64)
def _effects_cached(sigma: float, n: int, conv_tol: float) -> tuple[np.ndarray, np.ndarray]:
    nodes = 2 * n + 40
    prev = _half_line_effect(n, sigma, nodes)
    for _ in range(8):
        nodes *= 2
        cur = _half_line_effect(n, sigma, nodes)
        if np.max(np.abs(cur - prev)) < conv_tol:
            break
        prev = cur
    else:
        raise NumericalError(f"quadrature for sigma={sigma}, n={n} did not converge")
    plus = 0.5 * (cur + cur.T)
    parity = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    minus = plus * np.outer(parity, parity)
    plus.setflags(write=False)
    minus.setflags(write=False)
    return plus, minus


def quadrature_effects(cg: CoarseGrain | float, n: int, conv_tol: float = 1e-10) -> EffectPair:
    """Fock-basis binary effects for outcome signs of the blurred quadrature.

    ``W_minus`` is obtained from ``W_plus`` by the parity map ``x -> -x``,
    which is exact for the construction.
    """
    if not isinstance(cg, CoarseGrain):
        cg = CoarseGrain(cg)
    if n < 2:
        raise ScenarioError("resonator dimension must be >= 2")
    if cg.is_blind:
        half = 0.5 * np.eye(n)
        half.setflags(write=False)
        return EffectPair(half, half, cg.sigma)
    plus, minus = _effects_cached(cg.sigma, int(n), conv_tol)
    pair = EffectPair(plus.astype(complex), minus.astype(complex), cg.sigma)
    err = pair.completeness_error()
    if err > 1e-8:
        raise NumericalError(f"POVM completeness violated by {err:.2e}; enlarge the quadrature window")
    return pair


# --------------------------------------------------------------------------
# conditioning


def _resonator_last(rho: np.ndarray, layout: HilbertLayout, slot) -> tuple[np.ndarray, int, int]:
    """View of ``rho`` as (S, R, S, R) with the measured factor moved last."""
    i = layout.slot(slot)
    dims = layout.dims
    n = len(dims)
    t = rho.reshape(dims + dims)
    order = [j for j in range(n) if j != i] + [i]
    perm = order + [n + j for j in order]
    t = t.transpose(perm)
    d_r = dims[i]
    d_s = layout.total // d_r
    return t.reshape(d_s, d_r, d_s, d_r), d_s, d_r


@dataclass(frozen=True)
class ConditionalStates:
    rho_ge: DensityMatrix | None
    rho_lt: DensityMatrix | None
    p_ge: float

    @property
    def p_lt(self) -> float:
        return 1.0 - self.p_ge


def _branch_unnormalised(t4: np.ndarray, w: np.ndarray) -> np.ndarray:
    # Tr_R[(I x W) rho]_{ab} = sum_{r,s} W_{rs} rho_{(a s),(b r)}
    return np.einsum("rs,asbr->ab", w, t4)


def conditional_states(rho, cg: CoarseGrain | float, slot="resonator", layout: HilbertLayout | None = None,
                       allow_degenerate: bool = False) -> ConditionalStates:
    """Reduced conditional states of the unmeasured factors for both outcome signs."""
    layout = rho.layout if isinstance(rho, Operator) else layout
    if layout is None:
        raise LayoutError("conditional_states on a bare array needs a layout")
    data = rho.data if isinstance(rho, Operator) else np.asarray(rho)
    t4, d_s, d_r = _resonator_last(data, layout, slot)
    eff = quadrature_effects(cg, d_r)
    i = layout.slot(slot)
    sub = HilbertLayout(
        tuple(d for j, d in enumerate(layout.dims) if j != i) or (1,),
        tuple(lab for j, lab in enumerate(layout.labels) if j != i) or ("trivial",),
    )
    out = []
    probs = []
    for w in (eff.plus, eff.minus):
        m = _branch_unnormalised(t4, w)
        p = float(np.real(np.trace(m)))
        probs.append(p)
        if p < 1e-12:
            if not allow_degenerate:
                raise DegenerateOutcomeError(f"measurement branch has probability {p:.2e}")
            out.append(None)
            continue
        m = m / p
        out.append(DensityMatrix(0.5 * (m + m.conj().T), sub, trace_tol=1e-8))
    return ConditionalStates(out[0], out[1], probs[0] / (probs[0] + probs[1]))


class BranchReadout:
    """Per-time conditional quantities for repeated use inside an integrator callback.

    Parameters
    ----------
    layout : HilbertLayout
        Composite layout; the measured factor is ``slot``.
    cg : CoarseGrain
        Blur used for the binary outcome.
    """

    def __init__(self, layout: HilbertLayout, cg: CoarseGrain | float, slot="resonator"):
        self.layout = layout
        self.slot = slot
        self.cg = cg if isinstance(cg, CoarseGrain) else CoarseGrain(cg)
        i = layout.slot(slot)
        self.d_r = layout.dims[i]
        self.d_s = layout.total // self.d_r
        self.effects = quadrature_effects(self.cg, self.d_r)
        nb = np.diag(np.arange(self.d_r, dtype=float))
        sp_, sm_ = self.effects.sqrt_plus(), self.effects.sqrt_minus()
        # Lüders-conditioned photon number: Tr[(I x sqrt(W) n sqrt(W)) rho] / p
        self._n_plus = sp_ @ nb @ sp_
        self._n_minus = sm_ @ nb @ sm_

    def __call__(self, rho: np.ndarray) -> dict:
        t4, _, _ = _resonator_last(rho, self.layout, self.slot)
        m_plus = _branch_unnormalised(t4, self.effects.plus)
        m_minus = _branch_unnormalised(t4, self.effects.minus)
        p_plus = float(np.real(np.trace(m_plus)))
        p_minus = float(np.real(np.trace(m_minus)))
        n_plus = float(np.real(np.einsum("rs,asar->", self._n_plus, t4)))
        n_minus = float(np.real(np.einsum("rs,asar->", self._n_minus, t4)))
        return {
            "p_ge": p_plus,
            "p_lt": p_minus,
            "rho_ge": m_plus / p_plus if p_plus > 1e-12 else None,
            "rho_lt": m_minus / p_minus if p_minus > 1e-12 else None,
            "n_ge": n_plus / p_plus if p_plus > 1e-12 else math.nan,
            "n_lt": n_minus / p_minus if p_minus > 1e-12 else math.nan,
        }


def low_amplitude_probability(traj, cg: CoarseGrain | float, slot="resonator", low_side: str = "auto") -> np.ndarray:
    """Probability of the low-amplitude outcome at every stored time.

    ``low_side`` is ``"lt"`` (x < 0), ``"ge"`` (x >= 0) or ``"auto"``, which
    takes the low branch of :func:`high_low_split` on the last stored state. Which sign hosts the low-amplitude state depends on the
    drive phase, so it is not fixed globally.
    """
    if not traj.states:
        raise ScenarioError("trajectory does not store states; evolve with store='all'")
    times = sorted(traj.states)
    reader = BranchReadout(traj.layout, cg, slot)
    rows = [reader(traj.states[t].data) for t in times]
    if low_side == "auto":
        split = high_low_split(traj.states[times[-1]], traj.layout, slot, warn=False)
        low_side = "lt" if split.high_side == "ge" else "ge"
    if low_side not in ("ge", "lt"):
        raise ScenarioError(f"low_side must be 'ge', 'lt' or 'auto', got {low_side!r}")
    return np.array([r["p_" + low_side] for r in rows])


@dataclass(frozen=True)
class HighLowSplit:
    rho_high: DensityMatrix
    rho_low: DensityMatrix
    n_high: float
    n_low: float
    p_high: float
    high_side: str
    amplitude_high: float = math.nan
    amplitude_low: float = math.nan


def high_low_split(rho, layout: HilbertLayout | None = None, slot="resonator",
                   cg: CoarseGrain | float = 0.0, warn: bool = True) -> HighLowSplit:
    """Split a composite state by the sign of the resonator quadrature.

    Conditional composite states use the Lüders update
    ``sqrt(W) rho sqrt(W) / p``; the high branch is the one with the larger
    conditional amplitude ``|<b>|``. The amplitude, unlike the photon number,
    is insensitive to the momentum spread that a sharp cut at x = 0 imprints
    on a sparsely populated tail branch.
    """
    layout = rho.layout if isinstance(rho, Operator) else layout
    if layout is None:
        raise LayoutError("high_low_split on a bare array needs a layout")
    data = rho.data if isinstance(rho, Operator) else np.asarray(rho)
    i = layout.slot(slot)
    d_r = layout.dims[i]
    eff = quadrature_effects(cg, d_r)
    left = int(np.prod(layout.dims[:i]))
    right = int(np.prod(layout.dims[i + 1:]))
    nb = np.kron(np.kron(np.eye(left), np.diag(np.arange(d_r, dtype=float))), np.eye(right))
    b = np.kron(np.kron(np.eye(left), np.diag(np.sqrt(np.arange(1, d_r, dtype=float)), 1)), np.eye(right))
    branches = {}
    for side, root in (("ge", eff.sqrt_plus()), ("lt", eff.sqrt_minus())):
        k = np.kron(np.kron(np.eye(left), root), np.eye(right))
        m = k @ data @ k.conj().T
        p = float(np.real(np.trace(m)))
        if p < 1e-12:
            raise DegenerateOutcomeError(f"branch x {'>=' if side == 'ge' else '<'} 0 is empty (p={p:.2e})")
        m = m / p
        branches[side] = (DensityMatrix(0.5 * (m + m.conj().T), layout, trace_tol=1e-8), p,
                          float(np.real(np.trace(nb @ m))), float(abs(np.trace(b @ m))))
    high = "ge" if branches["ge"][3] >= branches["lt"][3] else "lt"
    low = "lt" if high == "ge" else "ge"
    h, l_ = branches[high], branches[low]
    if warn and abs(h[2] - l_[2]) < 1.0:
        warnings.warn("resonator state does not look bimodal (conditional photon numbers within 1)", stacklevel=2)
    return HighLowSplit(h[0], l_[0], h[2], l_[2], h[1], high, h[3], l_[3])
