import math

import numpy as np
import pytest

TWO_PI = 2.0 * math.pi

# reference parameter set (rad/ns)
OMEGA_Q = TWO_PI * 0.299
COUPLING = TWO_PI * 4.920
OMEGA_R = TWO_PI * 6.336


def random_density(dim, rng, rank=None):
    """Random full-rank (or given-rank) density matrix from a Ginibre draw."""
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho)


def random_hermitian(dim, rng, scale=1.0):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * 0.5 * (a + a.conj().T)


def random_unitary(dim, rng):
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)



def qubit_state(theta, phi=0.0):
    return np.array([math.cos(theta / 2), np.exp(1j * phi) * math.sin(theta / 2)])


def classically_correlated_fixture(d_b=4):
    """1/2 (|e><e| x |low><low| + |g><g| x |high><high|) with orthogonal resonator states."""
    g, e = np.eye(2)
    low, high = np.eye(d_b)[0], np.eye(d_b)[d_b - 1]
    return 0.5 * (np.kron(np.outer(e, e), np.outer(low, low)) + np.kron(np.outer(g, g), np.outer(high, high)))


def stark_mixture_fixture(overlap=0.5, p_high=0.5, d_b=4):
    """p_H |psi_H><psi_H| x |high><high| + p_L |psi_L><psi_L| x |low><low|, |<psi_H|psi_L>| = overlap."""
    theta = 2 * math.acos(overlap)
    psi_h, psi_l = qubit_state(0.0), qubit_state(theta)
    low, high = np.eye(d_b)[0], np.eye(d_b)[d_b - 1]
    return (p_high * np.kron(np.outer(psi_h, psi_h.conj()), np.outer(high, high))
            + (1 - p_high) * np.kron(np.outer(psi_l, psi_l.conj()), np.outer(low, low)))


def brute_force_discord(rho, d_b, n=512):
    """Discord with the conditional entropy minimised over an n x n (theta, phi) grid only."""
    from uscsim.metrics import quantum_discord
    from uscsim.tensor_core import HilbertLayout

    return quantum_discord(rho, HilbertLayout((2, d_b)), grid=n, refine=False).value
