"""Hamiltonians and special states of the USC system and its Kerr readout.

Units: angular frequencies in rad/ns, times in ns. The qubit basis is
(|L>, |R>) with ``sigma_z = |L><L| - |R><R|``.

The full model is evolved in the dressed eigenbasis of the Rabi Hamiltonian
(:class:`DressedBasis`) keeping the lowest ``levels`` eigenstates. With
``levels == 2 * n_cavity`` this is an exact change of basis of the
(qubit, cavity, resonator) Fock model built by :func:`full_hamiltonian`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, LayoutError, ScenarioError, TruncationError
from .tensor_core import (
    HilbertLayout,
    Operator,
    basis,
    coherent_state,
    destroy,
    eig_hermitian,
    embed,
    fix_phases,
    number,
    sigma_x,
    sigma_z,
)

TWO_PI = 2.0 * math.pi

__all__ = [
    "RabiParams",
    "ResonatorParams",
    "TwoLevelParams",
    "UscLossParams",
    "usc_layout",
    "full_layout",
    "rabi_hamiltonian",
    "approx_ground_excited",
    "nonlinear_resonator_hamiltonian",
    "interaction_hamiltonian",
    "effective_two_level",
    "two_level_hamiltonian",
    "effective_static_hamiltonian",
    "displace",
    "displaced_fock",
    "adiabatic_states",
    "perturbative_ground_excited",
    "DressedBasis",
    "dressed_basis",
    "dressed_hamiltonian",
    "full_hamiltonian",
    "SIGMA_X_PRIME",
    "SIGMA_Z_PRIME",
]

# two-level operators in the (|G>, |E>) basis
SIGMA_Z_PRIME = np.diag([-1.0, 1.0]).astype(complex)
SIGMA_X_PRIME = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)


@dataclass(frozen=True)
class RabiParams:
    omega_q: float
    g: float
    omega_r: float

    def __post_init__(self):
        for name in ("omega_q", "g", "omega_r"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ScenarioError(f"RabiParams.{name} must be finite and >= 0, got {v}")
        if self.omega_r <= 0:
            raise ScenarioError("RabiParams.omega_r must be > 0")

    @property
    def alpha(self) -> float:
        return self.g / self.omega_r

    def omega_eff(self) -> float:
        return self.omega_q * math.exp(-2.0 * self.alpha**2)


@dataclass(frozen=True)
class ResonatorParams:
    delta: float
    chi: float
    f: float
    kappa: float
    J: float
    omega_d: float | None = None

    def __post_init__(self):
        for name in ("delta", "chi", "f", "kappa", "J"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ScenarioError(f"ResonatorParams.{name} must be finite")
        if self.kappa < 0:
            raise ScenarioError(f"kappa must be >= 0, got {self.kappa}")
        if self.chi < 0:
            raise ScenarioError(f"chi must be >= 0 (Kerr term enters as -chi n^2), got {self.chi}")


@dataclass(frozen=True)
class TwoLevelParams:
    omega_eff: float
    J: float

    @classmethod
    def from_rabi(cls, p: RabiParams, J: float) -> "TwoLevelParams":
        return cls(p.omega_eff(), J)


@dataclass(frozen=True)
class UscLossParams:
    gamma1: float = 0.0
    gamma2: float = 0.0

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ScenarioError("USC loss rates must be >= 0")


def usc_layout(n_cavity: int) -> HilbertLayout:
    return HilbertLayout((2, n_cavity), ("qubit", "cavity"))


def full_layout(n_cavity: int, n_resonator: int) -> HilbertLayout:
    return HilbertLayout((2, n_cavity, n_resonator), ("qubit", "cavity", "resonator"))


def _require(layout: HilbertLayout, *labels):
    for lab in labels:
        if not layout.has(lab):
            raise LayoutError(f"layout {layout.labels} lacks factor {lab!r}")


def rabi_hamiltonian(p: RabiParams, layout: HilbertLayout) -> Operator:
    """``(w_q/2) sx + g (a + a^dag) sz + w_r a^dag a``."""
    _require(layout, "qubit", "cavity")
    nc = layout.dims[layout.slot("cavity")]
    a = destroy(nc).data
    h = (
        0.5 * p.omega_q * embed(sigma_x(), layout, "qubit").data
        + p.g * (embed(sigma_z(), layout, "qubit").data @ embed(a + a.T, layout, "cavity").data)
        + p.omega_r * embed(a.T @ a, layout, "cavity").data
    )
    return Operator(h, layout, hermitian=True)


def approx_ground_excited(p: RabiParams, layout: HilbertLayout | None = None, n_cavity: int | None = None):
    """Cat-like approximants ``(|R>|a> -/+ |L>|-a>)/sqrt(2)`` of the two lowest
    Rabi eigenstates, as vectors on (qubit, cavity)."""
    if layout is None:
        layout = usc_layout(n_cavity)
    _require(layout, "qubit", "cavity")
    if layout.n_factors != 2:
        raise LayoutError("approx_ground_excited expects a (qubit, cavity) layout")
    if p.omega_q / p.omega_r > 0.2:
        warnings.warn("omega_q/omega_r > 0.2: cat-state approximation is poor", stacklevel=2)
    nc = layout.dims[layout.slot("cavity")]
    plus = coherent_state(p.alpha, nc)
    minus = coherent_state(-p.alpha, nc)
    r_alpha = np.kron(basis(2, 1), plus)
    l_malpha = np.kron(basis(2, 0), minus)
    if layout.slot("qubit") != 0:
        raise LayoutError("qubit must be the first factor")
    ground = (r_alpha - l_malpha) / math.sqrt(2)
    excited = (r_alpha + l_malpha) / math.sqrt(2)
    return ground, excited


def resonator_matrix(p: ResonatorParams, n: int, frame: str = "rotating", t: float | None = None) -> np.ndarray:
    b = destroy(n).data.real
    nb = b.T @ b
    if frame == "rotating":
        return p.delta * nb - p.chi * nb @ nb - 0.5 * p.f * (b + b.T)
    if frame == "lab":
        if t is None or p.omega_d is None:
            raise ScenarioError("lab-frame Hamiltonian needs omega_d and a time t")
        return (p.delta + p.omega_d) * nb - p.chi * nb @ nb - p.f * math.cos(p.omega_d * t) * (b + b.T)
    raise ScenarioError(f"unknown frame {frame!r} (use 'lab' or 'rotating')")


def nonlinear_resonator_hamiltonian(
    p: ResonatorParams, layout: HilbertLayout, frame: str = "rotating", t: float | None = None
) -> Operator:
    """Driven Kerr resonator.

    rotating: ``delta n - chi n^2 - (f/2)(b + b^dag)``;
    lab: ``(delta + w_d) n - chi n^2 - f cos(w_d t)(b + b^dag)``.
    """
    slot = "resonator" if layout.has("resonator") else 0
    n = layout.dims[layout.slot(slot)]
    h = resonator_matrix(p, n, frame, t)
    return Operator(embed(h, layout, slot).data, layout, hermitian=True)


def interaction_hamiltonian(J: float, layout: HilbertLayout) -> Operator:
    """``J sz (x) b^dag b``."""
    _require(layout, "qubit", "resonator")
    nb = layout.dims[layout.slot("resonator")]
    h = J * embed(sigma_z(), layout, "qubit").data @ embed(number(nb), layout, "resonator").data
    return Operator(h, layout, hermitian=True)


def effective_two_level(p: RabiParams, J: float) -> TwoLevelParams:
    """Two-level reduction with ``omega_eff = omega_q exp(-2 alpha^2)``."""
    from .analysis import infidelity_series

    f = infidelity_series(p)
    if f > 0.05:
        warnings.warn(f"two-level reduction questionable: infidelity f = {f:.3f} > 0.05", stacklevel=2)
    return TwoLevelParams.from_rabi(p, J)


def two_level_hamiltonian(tl: TwoLevelParams, res: ResonatorParams, n_resonator: int) -> Operator:
    """``(w_eff/2) sz' + H_nr + J sx' n`` on the (usc=2, resonator) layout."""
    layout = HilbertLayout((2, n_resonator), ("usc", "resonator"))
    hnr = resonator_matrix(res, n_resonator)
    nb = np.diag(np.arange(n_resonator, dtype=float))
    h = (
        0.5 * tl.omega_eff * np.kron(SIGMA_Z_PRIME, np.eye(n_resonator))
        + np.kron(np.eye(2), hnr)
        + tl.J * np.kron(SIGMA_X_PRIME, nb)
    )
    return Operator(h, layout, hermitian=True)


@dataclass(frozen=True)
class StaticGround:
    hamiltonian: Operator
    ground: np.ndarray
    energy: float
    sigma_x_prime: float
    sigma_z_prime: float


def effective_static_hamiltonian(tl: TwoLevelParams, nbar: float) -> StaticGround:
    """Ground state of ``J nbar sx' + (w_eff/2) sz'`` with closed-form expectations."""
    if nbar < 0:
        raise ScenarioError("mean photon number must be >= 0")
    h = tl.J * nbar * SIGMA_X_PRIME + 0.5 * tl.omega_eff * SIGMA_Z_PRIME
    op = Operator(h, HilbertLayout.single(2, "usc"), hermitian=True)
    x = tl.J * nbar
    z = 0.5 * tl.omega_eff
    r = math.hypot(x, z)
    if r == 0.0:
        return StaticGround(op, basis(2, 0), 0.0, 0.0, -1.0)
    vals, vecs = eig_hermitian(op)
    return StaticGround(op, vecs[:, 0], float(vals[0]), -x / r, -z / r)


# --------------------------------------------------------------------------
# displaced Fock states and the adiabatic basis


def displace(alpha: complex, n: int) -> np.ndarray:
    """Truncated ``D(alpha) = exp(alpha a^dag - alpha* a)``.

    Built from the eigendecomposition of the Hermitian generator
    ``i(alpha a^dag - alpha* a)``; only reliable well below the cut.
    """
    a = destroy(n).data
    gen = 1j * (alpha * a.conj().T - np.conj(alpha) * a)
    vals, vecs = np.linalg.eigh(gen)
    return (vecs * np.exp(-1j * vals)) @ vecs.conj().T


def displaced_fock(alpha: complex, level: int, n: int, max_deficit: float = 1e-8, pad: int | None = None) -> np.ndarray:
    """``D(alpha)|level>`` on an ``n``-level space.

    Computed in an enlarged space and truncated; raises if the weight above
    the cut exceeds ``max_deficit``.
    """
    if level >= n:
        raise DimensionError(f"Fock level {level} not below cut {n}")
    pad = pad if pad is not None else 20 + int(4 * abs(alpha) ** 2 + 8 * abs(alpha))
    big = n + pad
    v = displace(alpha, big)[:, level]
    deficit = float(np.sum(np.abs(v[n:]) ** 2))
    if deficit > max_deficit:
        raise TruncationError(f"D({alpha})|{level}> leaks {deficit:.2e} above cut {n}", deficit)
    v = v[:n]
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class AdiabaticPair:
    level: int
    psi_plus: np.ndarray
    psi_minus: np.ndarray
    energy_plus: float
    energy_minus: float
    overlap: float


def adiabatic_states(p: RabiParams, level: int, layout: HilbertLayout | None = None, n_cavity: int | None = None) -> AdiabaticPair:
    """Displaced doublet ``(|L>D(-a)|N> +/- |R>D(a)|N>)/sqrt(2)`` and its energies
    ``w_r (N - a^2) +/- (w_q/2) <N_-|N_+>``."""
    if layout is None:
        layout = usc_layout(n_cavity)
    _require(layout, "qubit", "cavity")
    nc = layout.dims[layout.slot("cavity")]
    n_minus = displaced_fock(-p.alpha, level, nc)
    n_plus = displaced_fock(p.alpha, level, nc)
    left = np.kron(basis(2, 0), n_minus)
    right = np.kron(basis(2, 1), n_plus)
    ov = float(np.real(np.vdot(n_minus, n_plus)))
    base = p.omega_r * (level - p.alpha**2)
    return AdiabaticPair(
        level,
        (left + right) / math.sqrt(2),
        (left - right) / math.sqrt(2),
        base + 0.5 * p.omega_q * ov,
        base - 0.5 * p.omega_q * ov,
        ov,
    )


@dataclass(frozen=True)
class PerturbativeStates:
    ground: np.ndarray
    excited: np.ndarray
    norm: float
    n_terms: int


def perturbative_ground_excited(p: RabiParams, layout: HilbertLayout | None = None, n_cavity: int | None = None,
                                term_tol: float = 1e-14) -> PerturbativeStates:
    """Lowest-order corrections to ``psi_0^-`` / ``psi_0^+`` from the
    off-diagonal part of ``(w_q/2) sx``.

    Coefficients ``(w_q/2) e^{-2a^2} (2a)^N / (w_r N sqrt(N!))`` attach to
    ``psi_N^-`` (even N) and ``psi_N^+`` (odd N) for the ground state, with the
    roles of +/- swapped and an overall minus sign for the excited state.
    """
    if layout is None:
        layout = usc_layout(n_cavity)
    nc = layout.dims[layout.slot("cavity")]
    a = p.alpha
    pair0 = adiabatic_states(p, 0, layout)
    ground = pair0.psi_minus.copy()
    excited = pair0.psi_plus.copy()
    pref = 0.5 * p.omega_q * math.exp(-2 * a * a) / p.omega_r
    norm = 1.0
    n_terms = 0
    for N in range(1, nc):
        c = pref * (2 * a) ** N / (N * math.sqrt(math.factorial(N)))
        if abs(c) < term_tol:
            break
        try:
            pair = adiabatic_states(p, N, layout)
        except (TruncationError, DimensionError):
            warnings.warn(f"perturbative series cut at N={N} by the cavity truncation (term {c:.1e})", stacklevel=2)
            break
        if N % 2 == 0:
            ground += c * pair.psi_minus
            excited -= c * pair.psi_plus
        else:
            ground += c * pair.psi_plus
            excited -= c * pair.psi_minus
        norm += c * c
        n_terms = N
    s = math.sqrt(norm)
    return PerturbativeStates(ground / s, excited / s, norm, n_terms)


# --------------------------------------------------------------------------
# dressed eigenbasis used for the full-model dynamics


@dataclass(frozen=True, eq=False)
class DressedBasis:
    """Eigenbasis of the Rabi Hamiltonian on a (qubit, cavity) Fock space.

    Columns of ``vectors`` are ascending eigenstates. The two lowest are phased
    so that ``<G_approx|G>`` is positive and ``<G|sz|E>`` is positive; with this
    choice the interaction restricted to {G, E} reads ``+J sx' b^dag b``.
    """

    params: RabiParams
    n_cavity: int
    levels: int
    energies: np.ndarray
    vectors: np.ndarray
    degenerate_ground: bool = False
    usc_layout: HilbertLayout = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "usc_layout", usc_layout(self.n_cavity))

    @property
    def kept(self) -> np.ndarray:
        return self.vectors[:, : self.levels]

    @property
    def ground(self) -> np.ndarray:
        return self.vectors[:, 0]

    @property
    def excited(self) -> np.ndarray:
        return self.vectors[:, 1]

    @property
    def splitting(self) -> float:
        return float(self.energies[1] - self.energies[0])

    def project(self, op) -> np.ndarray:
        """``V^dag op V`` on the retained levels."""
        m = op.data if isinstance(op, Operator) else np.asarray(op)
        v = self.kept
        return v.conj().T @ m @ v

    def to_dressed(self, psi) -> tuple[np.ndarray, float]:
        """Project a (qubit, cavity) ket onto the retained levels.

        Returns the renormalised coefficients and the captured weight.
        """
        c = self.kept.conj().T @ np.asarray(psi, dtype=complex)
        w = float(np.vdot(c, c).real)
        if w < 1e-12:
            raise ScenarioError("state has no weight on the retained dressed levels")
        return c / math.sqrt(w), w

    def to_fock(self, rho_usc: np.ndarray) -> np.ndarray:
        """Map a dressed-level density matrix back to the (qubit, cavity) space."""
        v = self.kept
        return v @ rho_usc @ v.conj().T

    def sigma_z(self) -> np.ndarray:
        return self.project(embed(sigma_z(), self.usc_layout, "qubit"))

    def sigma_x(self) -> np.ndarray:
        return self.project(embed(sigma_x(), self.usc_layout, "qubit"))

    def cavity_x(self) -> np.ndarray:
        a = destroy(self.n_cavity).data
        return self.project(embed(a + a.T, self.usc_layout, "cavity"))

    def sigma_x_prime(self) -> np.ndarray:
        m = np.zeros((self.levels, self.levels), dtype=complex)
        m[:2, :2] = SIGMA_X_PRIME
        return m

    def sigma_z_prime(self) -> np.ndarray:
        m = np.zeros((self.levels, self.levels), dtype=complex)
        m[:2, :2] = SIGMA_Z_PRIME
        return m


def dressed_basis(p: RabiParams, n_cavity: int, levels: int = 2, degeneracy_tol: float | None = None) -> DressedBasis:
    layout = usc_layout(n_cavity)
    h = rabi_hamiltonian(p, layout)
    if not 2 <= levels <= layout.total:
        raise ScenarioError(f"levels must lie in [2, {layout.total}], got {levels}")
    vals, vecs = eig_hermitian(h)
    g_ap, e_ap = approx_ground_excited_quiet(p, n_cavity)
    tol = degeneracy_tol if degeneracy_tol is not None else 1e-9 * max(1.0, float(np.max(np.abs(vals))))
    degenerate = abs(vals[1] - vals[0]) < tol
    vecs = vecs.copy()
    if degenerate:
        q = vecs[:, :2]
        g = q @ (q.conj().T @ g_ap)
        g /= np.linalg.norm(g)
        e = q @ (q.conj().T @ e_ap)
        e -= g * np.vdot(g, e)
        e /= np.linalg.norm(e)
        vecs[:, 0], vecs[:, 1] = g, e
    ov = np.vdot(g_ap, vecs[:, 0])
    if abs(ov) > 1e-12:
        vecs[:, 0] *= abs(ov) / ov
    sz = embed(sigma_z(), layout, "qubit").data
    m = np.vdot(vecs[:, 0], sz @ vecs[:, 1])
    if abs(m) > 1e-12:
        vecs[:, 1] *= abs(m) / m
    if vecs.shape[1] > 2:
        vecs[:, 2:] = fix_phases(vecs[:, 2:])
    return DressedBasis(p, n_cavity, levels, vals, vecs, degenerate)


def approx_ground_excited_quiet(p: RabiParams, n_cavity: int):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return approx_ground_excited(p, n_cavity=n_cavity)


def dressed_hamiltonian(db: DressedBasis, res: ResonatorParams, n_resonator: int, J: float | None = None) -> Operator:
    """Full model on (usc levels, resonator): ``diag(E_k - E_0) + H_nr + J P sz P (x) n``."""
    J = res.J if J is None else J
    k = db.levels
    layout = HilbertLayout((k, n_resonator), ("usc", "resonator"))
    e = db.energies[:k] - db.energies[0]
    nb = np.diag(np.arange(n_resonator, dtype=float))
    h = (
        np.kron(np.diag(e), np.eye(n_resonator))
        + np.kron(np.eye(k), resonator_matrix(res, n_resonator))
        + J * np.kron(db.sigma_z(), nb)
    )
    return Operator(0.5 * (h + h.conj().T), layout, hermitian=True)


def full_hamiltonian(p: RabiParams, res: ResonatorParams, n_cavity: int, n_resonator: int) -> Operator:
    """Rotating-frame total Hamiltonian on the (qubit, cavity, resonator) Fock space."""
    layout = full_layout(n_cavity, n_resonator)
    h_rabi = rabi_hamiltonian(p, usc_layout(n_cavity)).data
    h = (
        np.kron(h_rabi, np.eye(n_resonator))
        + nonlinear_resonator_hamiltonian(res, layout).data
        + interaction_hamiltonian(res.J, layout).data
    )
    return Operator(h, layout, hermitian=True)
