"""State-characterisation quantities.

Entropies are in bits throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import DimensionError, LayoutError, TruncationError
from .tensor_core import HilbertLayout, Operator, coherent_amplitudes, partial_trace, partial_transpose

__all__ = [
    "QGrid",
    "q_function",
    "von_neumann_entropy",
    "negativity",
    "DiscordResult",
    "quantum_discord",
    "fidelity_pure",
    "trace_distance",
]

EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class QGrid:
    """Husimi function sampled on ``re x im``; ``values[i, j]`` is at ``(re[j], im[i])``."""

    re: np.ndarray
    im: np.ndarray
    values: np.ndarray

    def normalisation(self) -> float:
        dre = self.re[1] - self.re[0] if self.re.size > 1 else 1.0
        dim = self.im[1] - self.im[0] if self.im.size > 1 else 1.0
        return float(self.values.sum() * dre * dim)

    def peak(self) -> complex:
        i, j = np.unravel_index(np.argmax(self.values), self.values.shape)
        return complex(self.re[j], self.im[i])


def q_function(rho, re_range=(-4.0, 4.0), im_range=(-4.0, 4.0), n_re: int = 81, n_im: int = 81,
               max_deficit: float = 1e-6) -> QGrid:
    """``Q(beta) = <beta|rho|beta> / pi`` on a rectangular grid.

    Coherent vectors are the truncated (not renormalised) Fock amplitudes;
    a grid corner whose coherent state loses more than ``max_deficit`` of
    its norm above the cut raises :class:`TruncationError`.
    """
    data = rho.data if isinstance(rho, Operator) else np.asarray(rho)
    if isinstance(rho, Operator) and rho.layout.n_factors != 1:
        raise LayoutError("q_function needs a single-mode state; trace out the other factors first")
    n = data.shape[0]
    re = np.linspace(*re_range, n_re)
    im = np.linspace(*im_range, n_im)
    r_max = max(abs(complex(x, y)) for x in re_range for y in im_range)
    corner = coherent_amplitudes(r_max, n)
    deficit = 1.0 - float(np.sum(np.abs(corner) ** 2))
    if deficit > max_deficit:
        raise TruncationError(f"Q grid corner |beta|={r_max:.2f} exceeds the Fock cut {n} (deficit {deficit:.1e})",
                              deficit)
    betas = (re[None, :] + 1j * im[:, None]).ravel()
    k = np.arange(n)
    log_fact = np.cumsum(np.log(np.maximum(k, 1)))
    # amplitudes e^{-|b|^2/2} b^k / sqrt(k!) evaluated column-wise
    with np.errstate(divide="ignore", invalid="ignore"):
        logabs = np.where(np.abs(betas)[None, :] > 0, k[:, None] * np.log(np.abs(betas))[None, :], 0.0)
    logabs[0, :] = 0.0
    mag = np.exp(logabs - 0.5 * log_fact[:, None] - 0.5 * np.abs(betas)[None, :] ** 2)
    mag[1:, np.abs(betas) == 0] = 0.0
    amps = mag * np.exp(1j * k[:, None] * np.angle(betas)[None, :])
    vals = np.real(np.sum(amps.conj() * (data @ amps), axis=0)) / math.pi
    return QGrid(re, im, vals.reshape(n_im, n_re))


def _eigs(rho) -> np.ndarray:
    data = rho.data if isinstance(rho, Operator) else np.asarray(rho)
    return np.linalg.eigvalsh(0.5 * (data + data.conj().T))


def _entropy_from_eigs(lam: np.ndarray) -> float | np.ndarray:
    lam = np.where(lam < EIG_FLOOR, 0.0, lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(lam > 0, -lam * np.log2(np.where(lam > 0, lam, 1.0)), 0.0)
    return terms.sum(axis=-1)


def von_neumann_entropy(rho) -> float:
    """``-sum lambda log2 lambda``; eigenvalues below 1e-12 count as zero."""
    return float(_entropy_from_eigs(_eigs(rho)))


def negativity(rho, factor: int | str = 0, layout: HilbertLayout | None = None) -> float:
    """Sum of the magnitudes of the negative eigenvalues of the partial transpose."""
    layout = rho.layout if isinstance(rho, Operator) else layout
    if layout is None:
        raise LayoutError("negativity on a bare array needs a layout")
    if layout.n_factors != 2:
        raise LayoutError("negativity expects a bipartite layout")
    data = rho.data if isinstance(rho, Operator) else np.asarray(rho)
    pt = partial_transpose(data, factor, layout)
    lam = np.linalg.eigvalsh(0.5 * (pt + pt.conj().T))
    return float(abs(lam[lam < 0].sum()))


@dataclass(frozen=True)
class DiscordResult:
    value: float
    theta: float
    phi: float
    conditional_entropy: float
    grid_conditional_entropy: float
    mutual_information: float


def _basis_vector(theta, phi):
    return np.stack([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)], axis=-1)


class _BranchEntropy:
    """``p S(rho_B|phi)`` for projections of the two-level factor onto ``|phi(theta, phi)>``."""

    def __init__(self, t4: np.ndarray, chunk: int = 256):
        self.blocks = t4  # (2, dB, 2, dB)
        self.chunk = chunk

    def __call__(self, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
        v = _basis_vector(np.asarray(theta, float), np.asarray(phi, float))
        v = v.reshape(-1, 2)
        out = np.empty(v.shape[0])
        b = self.blocks
        for s in range(0, v.shape[0], self.chunk):
            vc = v[s:s + self.chunk]
            m = np.einsum("ka,kb,aibj->kij", vc.conj(), vc, b, optimize=True)
            m = 0.5 * (m + np.conj(np.swapaxes(m, 1, 2)))
            lam = np.linalg.eigvalsh(m)  # eigenvalues of p * rho_B|k
            p = lam.sum(axis=-1)
            safe = np.where(p > 1e-12, p, 1.0)
            s_cond = _entropy_from_eigs(lam / safe[:, None])
            out[s:s + self.chunk] = np.where(p > 1e-12, p * s_cond, 0.0)
        return out


def quantum_discord(rho, layout: HilbertLayout | None = None, a_factor: int | str = 0, grid: int = 64,
                    refine: bool = True, support_tol: float = 1e-13) -> DiscordResult:
    """Discord with rank-one projective measurements on the two-level factor A.

    Minimises the measured conditional entropy ``sum_k p_k S(rho_B|k)`` over
    ``cos(theta/2)|0> + e^{i phi} sin(theta/2)|1>``: first on a ``grid x grid``
    mesh (theta in [0, pi], phi in [0, 2 pi)), then by Nelder-Mead from the
    best mesh point. Slightly negative eigenvalues of ``rho`` are clipped to
    zero before any entropy is taken. Factor B is compressed to the support of ``rho_B``,
    which contains every conditional state.
    """
    layout = rho.layout if isinstance(rho, Operator) else layout
    if layout is None or layout.n_factors != 2:
        raise LayoutError("quantum_discord expects a bipartite layout")
    data = rho.data if isinstance(rho, Operator) else np.asarray(rho)
    a = layout.slot(a_factor)
    if layout.dims[a] != 2:
        raise DimensionError("the measured factor must be two-dimensional")
    if a == 1:
        d_b = layout.dims[0]
        data = data.reshape(d_b, 2, d_b, 2).transpose(1, 0, 3, 2).reshape(2 * d_b, 2 * d_b)
    d_b = data.shape[0] // 2
    lay = HilbertLayout((2, d_b))
    data = 0.5 * (data + data.conj().T)
    # integrated states carry eigenvalues of order -1e-9; clipping them keeps
    # the entropy identities consistent and the discord non-negative
    lam, vec = np.linalg.eigh(data)
    if lam[0] < 0:
        lam = np.clip(lam, 0.0, None)
        data = (vec * (lam / lam.sum())) @ vec.conj().T
    rho_a = partial_trace(data, [0], lay)
    rho_b = partial_trace(data, [1], lay)
    s_a = von_neumann_entropy(rho_a)
    s_b = von_neumann_entropy(rho_b)
    s_ab = von_neumann_entropy(data)
    lam_b, vec_b = np.linalg.eigh(rho_b)
    keep = lam_b > support_tol * max(1.0, lam_b[-1])
    iso = vec_b[:, keep]
    t4 = data.reshape(2, d_b, 2, d_b)
    t4 = np.einsum("ip,aibj,jq->apbq", iso.conj(), t4, iso, optimize=True)
    branch = _BranchEntropy(t4)

    thetas = np.linspace(0.0, math.pi, grid)
    phis = np.linspace(0.0, 2 * math.pi, grid, endpoint=False)
    th, ph = np.meshgrid(thetas, phis, indexing="ij")
    h1 = branch(th.ravel(), ph.ravel()).reshape(grid, grid)
    # the orthogonal projector sits at (pi - theta, phi + pi)
    if grid % 2 == 0:
        h2 = h1[::-1, :][:, (np.arange(grid) + grid // 2) % grid]
    else:
        h2 = branch(math.pi - th.ravel(), ph.ravel() + math.pi).reshape(grid, grid)
    total = h1 + h2
    idx = int(np.argmin(total.ravel()))  # theta-major order: lexicographic ties
    best_theta, best_phi = float(th.ravel()[idx]), float(ph.ravel()[idx])
    grid_best = float(total.ravel()[idx])
    best = grid_best

    def objective(x):
        t, p = x
        return float(branch(np.array([t]), np.array([p]))[0]
                     + branch(np.array([math.pi - t]), np.array([p + math.pi]))[0])

    if refine:
        res = minimize(objective, np.array([best_theta, best_phi]), method="Nelder-Mead",
                       options={"xatol": 1e-9, "fatol": 1e-13, "maxiter": 2000})
        if res.fun < best:
            best = float(res.fun)
            best_theta, best_phi = float(res.x[0]), float(res.x[1])
    best_theta, best_phi = _canonical_angles(best_theta, best_phi)
    return DiscordResult(
        value=s_a - s_ab + best,
        theta=best_theta,
        phi=best_phi,
        conditional_entropy=best,
        grid_conditional_entropy=grid_best,
        mutual_information=s_a + s_b - s_ab,
    )


def _canonical_angles(theta: float, phi: float) -> tuple[float, float]:
    """Map any (theta, phi) to the same projective basis with theta in [0, pi], phi in [0, 2 pi)."""
    theta = theta % (2 * math.pi)
    if theta > math.pi:
        # cos(t/2)|0> + e^{ip} sin(t/2)|1> with t -> 2 pi - t equals the
        # same ray as phi -> phi + pi (up to a global sign)
        theta = 2 * math.pi - theta
        phi = phi + math.pi
    return theta, phi % (2 * math.pi)


def fidelity_pure(psi, rho) -> float:
    """``<psi|rho|psi>`` for a normalised ket; ``rho`` may itself be a ket."""
    psi = np.asarray(psi, dtype=complex).ravel()
    r = rho.data if isinstance(rho, Operator) else np.asarray(rho, dtype=complex)
    if r.ndim == 1:
        return float(abs(np.vdot(psi, r)) ** 2)
    return float(np.real(np.vdot(psi, r @ psi)))


def trace_distance(a, b) -> float:
    """``(1/2) || a - b ||_1`` for Hermitian inputs."""
    x = (a.data if isinstance(a, Operator) else np.asarray(a)) - (b.data if isinstance(b, Operator) else np.asarray(b))
    return float(0.5 * np.abs(np.linalg.eigvalsh(0.5 * (x + x.conj().T))).sum())
