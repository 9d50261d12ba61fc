"""Lindblad master-equation integration.

The generator is applied by sparse matrix products on a dense density
matrix; the superoperator is never built. Time stepping uses an adaptive
Dormand-Prince 5(4) pair whose steps are clipped to land on every output
time, so no interpolant is involved. The trace is never renormalised: a
drift above ``trace_tol`` aborts the run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    DimensionError,
    HermiticityError,
    LeakageError,
    NumericalError,
    ScenarioError,
    StepSizeUnderflow,
    TraceDriftError,
)
from .models import (
    SIGMA_Z_PRIME,
    DressedBasis,
    ResonatorParams,
    TwoLevelParams,
    two_level_hamiltonian,
)
from .tensor_core import DensityMatrix, HilbertLayout, Operator, destroy, embed, fock_leakage

__all__ = [
    "LindbladGenerator",
    "TimeGrid",
    "Trajectory",
    "lindblad_rhs",
    "evolve",
    "steady_state",
    "usc_dissipators",
    "UscDissipators",
    "two_level_loss_evolve",
    "BOSONIC_LABELS",
]

BOSONIC_LABELS = ("cavity", "resonator", "mode")


class LindbladGenerator:
    """``drho/dt = -i[H, rho] + sum_k rate_k D[L_k] rho``.

    Parameters
    ----------
    H : Operator
        Hermitian Hamiltonian.
    collapse_ops : sequence of (Operator, rate)
        Jump operators with non-negative rates.
    time_dependent : sequence of (Operator, callable), optional
        Extra Hermitian terms ``c(t) H_k``; used only for lab-frame checks.
    """

    def __init__(self, H: Operator, collapse_ops: Sequence[tuple[Operator, float]] = (), time_dependent=()):
        if not isinstance(H, Operator):
            H = Operator(H)
        if not H.is_hermitian():
            raise HermiticityError("Lindblad Hamiltonian must be Hermitian")
        self.H = H
        self.layout = H.layout
        ops = []
        for op, rate in collapse_ops:
            op = op if isinstance(op, Operator) else Operator(op, H.layout)
            if op.layout.dims != H.layout.dims:
                raise DimensionError(f"collapse operator dims {op.layout.dims} != {H.layout.dims}")
            if not math.isfinite(rate) or rate < 0:
                raise ScenarioError(f"collapse rates must be >= 0, got {rate}")
            ops.append((op, float(rate)))
        self.collapse_ops = ops
        td = []
        for op, fn in time_dependent:
            op = op if isinstance(op, Operator) else Operator(op, H.layout)
            if not op.is_hermitian():
                raise HermiticityError("time-dependent terms must be Hermitian")
            td.append((sp.csr_matrix(op.data), fn))
        self._td = td
        self._build()

    def _build(self):
        heff = self.H.data.astype(complex)
        jumps = []
        for op, rate in self.collapse_ops:
            if rate == 0.0:
                continue
            l_ = math.sqrt(rate) * op.data
            heff = heff - 0.5j * (l_.conj().T @ l_)
            jumps.append((sp.csr_matrix(l_), sp.csr_matrix(l_.conj())))
        self._heff = sp.csr_matrix(heff)
        self._heff_conj = sp.csr_matrix(heff.conj())
        self._jumps = jumps

    @property
    def dim(self) -> int:
        return self.layout.total

    def apply(self, t: float, rho: np.ndarray) -> np.ndarray:
        """Right-hand side on a bare ``dim x dim`` array."""
        # rho @ Heff^dag == (conj(Heff) @ rho^T)^T
        out = -1j * (self._heff @ rho - (self._heff_conj @ rho.T).T)
        for hk, fn in self._td:
            c = fn(t)
            out += -1j * c * (hk @ rho - (hk.conj() @ rho.T).T)
        for l_, l_conj in self._jumps:
            out += (l_conj @ (l_ @ rho).T).T
        return out


def lindblad_rhs(gen: LindbladGenerator, rho, t: float = 0.0) -> Operator:
    """``drho/dt`` as an :class:`Operator` on the generator's layout."""
    data = rho.data if isinstance(rho, Operator) else np.asarray(rho, dtype=complex)
    if data.shape != (gen.dim, gen.dim):
        raise DimensionError(f"state of shape {data.shape} does not match generator dimension {gen.dim}")
    if isinstance(rho, Operator) and rho.layout.dims != gen.layout.dims:
        raise DimensionError(f"layout mismatch {rho.layout.dims} vs {gen.layout.dims}")
    return Operator(gen.apply(t, np.ascontiguousarray(data)), gen.layout)


@dataclass(frozen=True)
class TimeGrid:
    """Output times plus integrator settings (ns)."""

    t_start: float
    t_end: float
    times: tuple[float, ...]
    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = math.inf
    first_step: float | None = None

    def __post_init__(self):
        ts = tuple(float(t) for t in self.times)
        if not ts:
            raise ScenarioError("TimeGrid needs at least one output time")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ScenarioError("output times must be strictly increasing")
        if ts[0] < self.t_start or ts[-1] > self.t_end + 1e-12:
            raise ScenarioError("output times must lie in [t_start, t_end]")
        if self.rtol <= 0 or self.atol <= 0:
            raise ScenarioError("tolerances must be positive")
        object.__setattr__(self, "times", ts)

    @classmethod
    def uniform(cls, t_end: float, dt: float, t_start: float = 0.0, **kw) -> "TimeGrid":
        n = int(round((t_end - t_start) / dt))
        if n < 1 or not math.isclose(t_start + n * dt, t_end, rel_tol=1e-9, abs_tol=1e-12):
            raise ScenarioError(f"dt={dt} does not divide [{t_start}, {t_end}]")
        times = t_start + dt * np.arange(n + 1)
        return cls(t_start, t_end, tuple(times), **kw)

    def scaled_tolerances(self, factor: float) -> "TimeGrid":
        return TimeGrid(self.t_start, self.t_end, self.times, self.rtol * factor, self.atol * factor,
                        self.max_step, self.first_step)


@dataclass
class Trajectory:
    """Output of :func:`evolve`.

    ``records`` maps observable names to arrays indexed like ``times``;
    ``states`` holds the density matrices at the requested store times.
    """

    times: np.ndarray
    layout: HilbertLayout
    records: dict[str, np.ndarray] = field(default_factory=dict)
    states: dict[float, DensityMatrix] = field(default_factory=dict)
    diagnostics: dict[str, float] = field(default_factory=dict)

    @property
    def final_state(self) -> DensityMatrix:
        return self.states[max(self.states)]

    def state_at(self, t: float) -> DensityMatrix:
        for k, v in self.states.items():
            if math.isclose(k, t, rel_tol=1e-12, abs_tol=1e-9):
                return v
        raise KeyError(f"no stored state at t={t}")


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def _leak_slots(layout: HilbertLayout, monitor):
    if monitor is not None:
        return [layout.slot(s) for s in monitor]
    return [i for i, lab in enumerate(layout.labels) if lab in BOSONIC_LABELS]


def evolve(
    gen: LindbladGenerator,
    rho0,
    grid: TimeGrid,
    observables: Mapping[str, Callable[[np.ndarray], complex]] | None = None,
    callback: Callable[[float, np.ndarray], Mapping[str, float]] | None = None,
    store: str | Sequence[float] = "final",
    trace_tol: float = 1e-7,
    leak_tol: float = 1e-6,
    leak_monitor: Sequence[str | int] | None = None,
    max_steps: int = 10_000_000,
) -> Trajectory:
    """Integrate the master equation from ``grid.t_start`` over ``grid.times``.

    Parameters
    ----------
    observables
        ``name -> f(rho)`` evaluated at every output time.
    callback
        ``f(t, rho) -> {name: value}`` for observables that need more
        context (conditional branches and the like).
    store
        ``"final"``, ``"all"``, ``"none"`` or an explicit list of times at
        which full density matrices are kept.

    Raises
    ------
    StepSizeUnderflow, TraceDriftError, LeakageError
    """
    data = rho0.data if isinstance(rho0, Operator) else np.asarray(rho0, dtype=complex)
    if data.shape != (gen.dim, gen.dim):
        raise DimensionError(f"initial state shape {data.shape} does not match generator dimension {gen.dim}")
    DensityMatrix(data, gen.layout)  # validates rho0
    layout = gen.layout
    slots = _leak_slots(layout, leak_monitor)
    times = np.asarray(grid.times)
    if store == "final":
        store_set = {times[-1]}
    elif store == "all":
        store_set = set(times)
    elif store == "none":
        store_set = set()
    else:
        store_set = {float(t) for t in store}
    traj = Trajectory(times=times, layout=layout)
    rec: dict[str, list] = {}
    diag = {"max_trace_drift": 0.0, "max_leakage": 0.0, "n_steps": 0, "n_rejected": 0, "min_eigenvalue": 0.0}

    def check(t, y):
        drift = abs(np.trace(y) - 1.0)
        diag["max_trace_drift"] = max(diag["max_trace_drift"], float(drift))
        if drift > trace_tol:
            raise TraceDriftError(f"trace drift {drift:.2e} > {trace_tol:g} at t={t:.3f} ns")
        for s in slots:
            lk = fock_leakage(y, layout, s, top=2)
            diag["max_leakage"] = max(diag["max_leakage"], lk)
            if lk > leak_tol:
                raise LeakageError(
                    f"population {lk:.2e} in the top two levels of factor {layout.labels[s]!r} at t={t:.3f} ns",
                    lk,
                )

    def record(t, y):
        for name, fn in (observables or {}).items():
            rec.setdefault(name, []).append(fn(y))
        if callback is not None:
            for name, v in callback(t, y).items():
                rec.setdefault(name, []).append(v)
        if any(math.isclose(t, s, rel_tol=1e-12, abs_tol=1e-9) for s in store_set):
            rho = DensityMatrix(y, layout, trace_tol=trace_tol, validate=False)
            herm = float(np.max(np.abs(y - y.conj().T)))
            if herm > 1e-9:
                raise NumericalError(f"state lost Hermiticity ({herm:.2e}) at t={t:.3f}")
            lam = float(np.linalg.eigvalsh(0.5 * (y + y.conj().T))[0])
            diag["min_eigenvalue"] = min(diag["min_eigenvalue"], lam)
            traj.states[float(t)] = rho

    y = np.array(data, dtype=complex)
    t = grid.t_start
    f = gen.apply(t, y)
    k_idx = 0
    if math.isclose(times[0], t, abs_tol=1e-12):
        check(t, y)
        record(t, y)
        k_idx = 1
    span = grid.t_end - grid.t_start
    if grid.first_step is not None:
        h = grid.first_step
    else:
        fn = float(np.max(np.abs(f)))
        h = 0.01 / fn if fn > 0 else span
    h = min(h, grid.max_step, span if span > 0 else h)
    hmin_rel = 1e-12
    ks = [None] * 7
    while k_idx < len(times):
        target = times[k_idx]
        if diag["n_steps"] + diag["n_rejected"] > max_steps:
            raise NumericalError(f"exceeded {max_steps} integrator steps")
        h = min(h, grid.max_step)
        landing = t + h >= target - 1e-12 * max(1.0, abs(target))
        h_try = target - t if landing else h
        if h_try < hmin_rel * max(1.0, abs(t)):
            if landing:
                t = target
                check(t, y)
                record(t, y)
                k_idx += 1
                continue
            raise StepSizeUnderflow(f"step size {h_try:.3e} underflow at t={t:.6f} ns")
        ks[0] = f
        for i in range(1, 7):
            acc = y.copy()
            for j, a in enumerate(_A[i]):
                if a != 0.0:
                    acc += (h_try * a) * ks[j]
            ks[i] = gen.apply(t + _C[i] * h_try, acc)
            if i == 6:
                y_new = acc
        err_vec = h_try * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
        scale = grid.atol + grid.rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean((np.abs(err_vec) / scale) ** 2)))
        if not math.isfinite(err):
            raise NumericalError(f"non-finite error estimate at t={t:.6f} ns")
        if err <= 1.0:
            t = target if landing else t + h_try
            # the exact flow is Hermitian; projecting out the anti-Hermitian
            # round-off keeps it so without touching the trace
            y = 0.5 * (y_new + y_new.conj().T)
            f = ks[6]
            diag["n_steps"] += 1
            check(t, y)
            if landing:
                record(t, y)
                k_idx += 1
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            # a step clipped to land on an output time must not shrink the proposal
            h = max(h, h_try * fac) if landing else h_try * fac
        else:
            diag["n_rejected"] += 1
            h = h_try * max(0.2, 0.9 * err ** -0.2)
            if h < hmin_rel * max(1.0, abs(t)):
                raise StepSizeUnderflow(f"step size {h:.3e} underflow at t={t:.6f} ns")
    traj.records = {k: np.asarray(v) for k, v in rec.items()}
    traj.diagnostics = diag
    return traj


def steady_state(gen: LindbladGenerator, rho0, t_chunk: float = 100.0, t_max: float = 1e5,
                 tol: float = 1e-9, rtol: float = 1e-9, atol: float = 1e-11, **kw) -> tuple[DensityMatrix, float]:
    """Evolve until ``max|drho/dt| < tol``; returns the state and the time reached."""
    data = rho0.data if isinstance(rho0, Operator) else np.asarray(rho0, dtype=complex)
    t = 0.0
    while t < t_max:
        grid = TimeGrid(t, t + t_chunk, (t + t_chunk,), rtol=rtol, atol=atol)
        traj = evolve(gen, data, grid, store="final", **kw)
        data = traj.final_state.data
        t += t_chunk
        if float(np.max(np.abs(gen.apply(t, data)))) < tol:
            return DensityMatrix(data, gen.layout, trace_tol=1e-7), t
    raise NumericalError(f"no stationary state within t_max={t_max} ns")


# --------------------------------------------------------------------------
# USC-system losses in the dressed eigenbasis


@dataclass(frozen=True)
class UscDissipators:
    """Jump operators on the retained dressed levels.

    ``degenerate_pairs`` lists transitions whose Bohr frequency fell below
    the binning tolerance; they are kept (ordered by level index) but the
    direction of such a jump is not physically meaningful.
    """

    collapse_ops: list
    degenerate_pairs: list
    rates: dict

    def __iter__(self):
        return iter(self.collapse_ops)

    def __len__(self):
        return len(self.collapse_ops)


def _spectral(fn):
    if fn is None:
        return lambda w: 0.0
    if callable(fn):
        return fn
    val = float(fn)
    return lambda w: val


def usc_dissipators(db: DressedBasis, kappa_q=0.0, kappa_r=0.0, gamma_dep=0.0,
                    degeneracy_tol: float | None = None) -> UscDissipators:
    """Eigenbasis jump operators for qubit (``sz``) and cavity (``a + a^dag``) baths.

    Spectral densities may be floats (flat) or callables of the transition
    frequency. Rates are ``kq(D)|<j|sz|k>|^2 + kr(D)|<j|X|k>|^2`` for ``|j><k|``
    with ``j < k``; dephasing is the single operator ``sum_j Phi_j |j><j|``
    with ``Phi_j = sqrt(gd(0)/2) <j|sx|j>``. Cross-dephasing terms are omitted.
    """
    kq, kr, gd = _spectral(kappa_q), _spectral(kappa_r), _spectral(gamma_dep)
    k = db.levels
    layout = HilbertLayout.single(k, "usc")
    e = db.energies[:k]
    sz, x, sx = db.sigma_z(), db.cavity_x(), db.sigma_x()
    tol = degeneracy_tol if degeneracy_tol is not None else 1e-9 * max(1.0, float(np.max(np.abs(e))))
    ops, degen, rates = [], [], {}
    for j in range(k):
        for m in range(j + 1, k):
            w = float(e[m] - e[j])
            rate = kq(w) * abs(sz[j, m]) ** 2 + kr(w) * abs(x[j, m]) ** 2
            if abs(w) < tol:
                degen.append((j, m))
            if rate <= 0.0:
                continue
            jump = np.zeros((k, k), dtype=complex)
            jump[j, m] = 1.0
            ops.append((Operator(jump, layout), float(rate)))
            rates[(j, m)] = float(rate)
    g0 = gd(0.0)
    if g0 > 0:
        phi = math.sqrt(g0 / 2.0) * np.real(np.diag(sx))
        ops.append((Operator(np.diag(phi).astype(complex), layout), 1.0))
        rates["dephasing"] = float(g0)
    return UscDissipators(ops, degen, rates)


def two_level_collapse_ops(res: ResonatorParams, gamma1: float, gamma2: float, n_resonator: int):
    layout = HilbertLayout((2, n_resonator), ("usc", "resonator"))
    b = destroy(n_resonator).data
    lower = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)  # |G><E|
    ops = [(embed(b, layout, "resonator"), res.kappa)]
    if gamma1 > 0:
        ops.append((embed(lower, layout, "usc"), gamma1))
    if gamma2 > 0:
        ops.append((embed(SIGMA_Z_PRIME, layout, "usc"), gamma2))
    return ops


def two_level_loss_evolve(tl: TwoLevelParams, res: ResonatorParams, gamma1: float, gamma2: float,
                          rho0, grid: TimeGrid, **kw) -> Trajectory:
    """Two-level model with photon loss plus ``gamma1 D[|G><E|] + gamma2 D[|E><E| - |G><G|]``."""
    if gamma1 < 0 or gamma2 < 0:
        raise ScenarioError("gamma1, gamma2 must be >= 0")
    data = rho0.data if isinstance(rho0, Operator) else np.asarray(rho0)
    if data.shape[0] % 2:
        raise DimensionError("two-level loss model needs a 2 x N_b layout")
    nb = data.shape[0] // 2
    h = two_level_hamiltonian(tl, res, nb)
    gen = LindbladGenerator(h, two_level_collapse_ops(res, gamma1, gamma2, nb))
    return evolve(gen, rho0 if isinstance(rho0, Operator) else Operator(data, h.layout), grid, **kw)

