import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uscsim.dynamics import (
    LindbladGenerator,
    TimeGrid,
    evolve,
    lindblad_rhs,
    steady_state,
    two_level_collapse_ops,
    two_level_loss_evolve,
    usc_dissipators,
)
from uscsim.errors import DimensionError, LeakageError, NumericalError, ScenarioError, StepSizeUnderflow, TraceDriftError
from uscsim.measurement import conditional_states
from uscsim.metrics import trace_distance
from uscsim.models import (
    SIGMA_X_PRIME,
    SIGMA_Z_PRIME,
    RabiParams,
    ResonatorParams,
    TwoLevelParams,
    dressed_basis,
    nonlinear_resonator_hamiltonian,
    two_level_hamiltonian,
)
from uscsim.tensor_core import HilbertLayout, Operator, coherent_state, destroy, embed, ket2dm, number, partial_trace

from conftest import COUPLING, OMEGA_Q, OMEGA_R, TWO_PI, random_density

DELTA = TWO_PI * 5.698e-3
CHI = TWO_PI * 80.735e-6
DRIVE = TWO_PI * 22.792e-3
KAPPA = TWO_PI * 2.375e-3
J_REF = TWO_PI * 949.8e-6


def cavity_generator(n, delta=DELTA, chi=0.0, f=0.0, kappa=KAPPA):
    lay = HilbertLayout.single(n, "resonator")
    res = ResonatorParams(delta=delta, chi=chi, f=f, kappa=kappa, J=0.0)
    return LindbladGenerator(nonlinear_resonator_hamiltonian(res, lay), [(Operator(destroy(n).data, lay), kappa)])


class TestRhs:
    def test_single_photon_decay(self):
        n = 3
        lay = HilbertLayout.single(n, "resonator")
        gen = LindbladGenerator(Operator(np.zeros((n, n)), lay), [(Operator(destroy(n).data, lay), 0.4)])
        rho = np.diag([0.0, 1.0, 0.0]).astype(complex)
        np.testing.assert_allclose(lindblad_rhs(gen, rho).data, 0.4 * np.diag([1.0, -1.0, 0.0]), atol=1e-15)

    def test_pure_von_neumann(self, rng):
        h = rng.normal(size=(4, 4))
        h = h + h.T
        rho = random_density(4, rng)
        gen = LindbladGenerator(Operator(h))
        np.testing.assert_allclose(lindblad_rhs(gen, rho).data, -1j * (h @ rho - rho @ h), atol=1e-13)

    def test_trace_free(self, rng):
        gen = cavity_generator(12, chi=CHI, f=DRIVE)
        for _ in range(10):
            assert abs(np.trace(lindblad_rhs(gen, random_density(12, rng)).data)) < 1e-12

    def test_linear_cavity_moment_equation(self):
        n = 40
        gen = cavity_generator(n, f=DRIVE)
        beta = 0.8 - 0.3j
        rho = ket2dm(coherent_state(beta, n))
        b = destroy(n).data
        lhs = np.trace(b @ lindblad_rhs(gen, rho).data)
        rhs = (-1j * DELTA - KAPPA / 2) * beta + 1j * DRIVE / 2
        assert abs(lhs - rhs) < 1e-10

    def test_layout_mismatch(self):
        gen = cavity_generator(5)
        with pytest.raises(DimensionError):
            lindblad_rhs(gen, np.eye(4) / 4)

    def test_negative_rate(self):
        lay = HilbertLayout.single(3)
        with pytest.raises(ScenarioError):
            LindbladGenerator(Operator(np.zeros((3, 3)), lay), [(Operator(destroy(3).data, lay), -1.0)])


class TestTimeGrid:
    def test_uniform(self):
        grid = TimeGrid.uniform(10.0, 2.5)
        assert grid.times == (0.0, 2.5, 5.0, 7.5, 10.0)

    def test_non_dividing_step(self):
        with pytest.raises(ScenarioError):
            TimeGrid.uniform(10.0, 3.0)

    def test_non_monotone(self):
        with pytest.raises(ScenarioError):
            TimeGrid(0.0, 5.0, (1.0, 1.0))


class TestEvolve:
    def test_damped_oscillator_closed_form(self):
        n, beta = 30, 2.0
        gen = cavity_generator(n)
        b = destroy(n).data
        traj = evolve(gen, ket2dm(coherent_state(beta, n)), TimeGrid.uniform(500.0, 10.0),
                      observables={"b": lambda r: np.trace(b @ r)})
        expected = beta * np.exp((-1j * DELTA - KAPPA / 2) * traj.times)
        assert np.max(np.abs(traj.records["b"] - expected)) < 1e-6
        assert traj.diagnostics["max_trace_drift"] < 1e-7

    def test_invariants_on_kerr_run(self):
        n = 60
        gen = cavity_generator(n, chi=CHI, f=DRIVE)
        rho0 = np.zeros((n, n), complex)
        rho0[0, 0] = 1
        traj = evolve(gen, rho0, TimeGrid.uniform(100.0, 20.0), store="all")
        for rho in traj.states.values():
            y = rho.data
            assert abs(np.trace(y) - 1) < 1e-7
            assert np.max(np.abs(y - y.conj().T)) < 1e-9
            assert np.linalg.eigvalsh(y)[0] > -1e-7

    def test_trace_drift_is_an_error(self):
        gen = cavity_generator(6)
        base = gen.apply
        gen.apply = lambda t, r: base(t, r) + 1e-3 * r
        rho0 = np.diag([1.0, 0, 0, 0, 0, 0]).astype(complex)
        with pytest.raises(TraceDriftError):
            evolve(gen, rho0, TimeGrid.uniform(10.0, 1.0))

    def test_leakage_is_an_error(self):
        gen = cavity_generator(12, delta=0.0, f=1.0)
        rho0 = np.zeros((12, 12), complex)
        rho0[0, 0] = 1
        with pytest.raises(LeakageError) as exc:
            evolve(gen, rho0, TimeGrid.uniform(50.0, 1.0))
        assert exc.value.deficit > 1e-6

    def test_step_size_underflow(self):
        gen = cavity_generator(4)
        noise = np.random.default_rng(3)
        gen.apply = lambda t, r: 1e6 * (noise.normal(size=r.shape) + 1j * noise.normal(size=r.shape))
        with pytest.raises(StepSizeUnderflow):
            evolve(gen, np.diag([1.0, 0, 0, 0]).astype(complex), TimeGrid.uniform(1.0, 1.0))

    def test_rejects_invalid_initial_state(self):
        gen = cavity_generator(4)
        with pytest.raises(Exception):
            evolve(gen, np.diag([0.5, 0.6, 0, 0]).astype(complex), TimeGrid.uniform(1.0, 1.0))

    def test_tolerance_halving_converges(self):
        n = 60
        gen = cavity_generator(n, chi=CHI, f=DRIVE)
        rho0 = np.zeros((n, n), complex)
        rho0[0, 0] = 1
        b, nb = destroy(n).data, number(n).data
        obs = {"b": lambda r: np.trace(b @ r), "n": lambda r: np.trace(nb @ r)}
        grid = TimeGrid.uniform(100.0, 10.0)
        a = evolve(gen, rho0, grid, observables=obs)
        c = evolve(gen, rho0, grid.scaled_tolerances(0.5), observables=obs)
        for k in obs:
            assert np.max(np.abs(a.records[k] - c.records[k])) < 1e-5

    def test_deterministic(self):
        gen = cavity_generator(20, chi=CHI, f=DRIVE)
        rho0 = np.zeros((20, 20), complex)
        rho0[0, 0] = 1
        b = destroy(20).data
        runs = [evolve(gen, rho0, TimeGrid.uniform(20.0, 5.0), observables={"b": lambda r: np.trace(b @ r)})
                for _ in range(2)]
        np.testing.assert_array_equal(runs[0].records["b"], runs[1].records["b"])


def test_steady_state_linear_cavity():
    n = 45
    gen = cavity_generator(n, f=DRIVE)
    rho0 = np.zeros((n, n), complex)
    rho0[0, 0] = 1
    rho, _ = steady_state(gen, rho0)
    b = np.trace(destroy(n).data @ rho.data)
    assert abs(b - (DRIVE / 2) / (DELTA - 0.5j * KAPPA)) < 1e-6


class TestUscDissipators:
    def test_flat_qubit_bath_in_degenerate_limit(self):
        db = dressed_basis(RabiParams(0.0, COUPLING, OMEGA_R), 40)
        diss = usc_dissipators(db, kappa_q=0.01)
        assert diss.rates[(0, 1)] == pytest.approx(0.01, rel=1e-8)
        assert (0, 1) in diss.degenerate_pairs

    def test_no_baths_no_operators(self):
        db = dressed_basis(RabiParams(OMEGA_Q, COUPLING, OMEGA_R), 30, levels=4)
        assert len(usc_dissipators(db)) == 0

    def test_two_level_restriction(self, rng):
        db = dressed_basis(RabiParams(OMEGA_Q, COUPLING, OMEGA_R), 40, levels=2)
        kq, gd = 0.02, 0.01
        diss = usc_dissipators(db, kappa_q=kq, gamma_dep=gd)
        gamma1 = diss.rates[(0, 1)]
        sx = db.sigma_x()
        # D[c I + d sz'] = D[d sz']: only the half-difference of the diagonal matters
        gamma2 = 0.5 * gd * (0.5 * (sx[1, 1].real - sx[0, 0].real)) ** 2
        lay = HilbertLayout.single(2, "usc")
        zero = Operator(np.zeros((2, 2)), lay)
        gen = LindbladGenerator(zero, list(diss))
        lower = np.array([[0, 1], [0, 0]], complex)
        ref = LindbladGenerator(zero, [(Operator(lower, lay), gamma1), (Operator(SIGMA_Z_PRIME, lay), gamma2)])
        for _ in range(5):
            rho = random_density(2, rng)
            np.testing.assert_allclose(gen.apply(0, rho), ref.apply(0, rho), atol=1e-14)


class TestTwoLevelLoss:
    tl = TwoLevelParams(TWO_PI * 89.52e-3, J_REF)
    res = ResonatorParams(delta=DELTA, chi=CHI, f=DRIVE, kappa=KAPPA, J=J_REF)

    def _rho0(self, nb):
        psi = np.kron([1, 0], np.eye(nb)[0])
        return ket2dm(psi)

    def test_lossless_limit(self):
        nb = 30
        grid = TimeGrid.uniform(40.0, 10.0)
        obs = {"sx": lambda r: np.trace(np.kron(SIGMA_X_PRIME, np.eye(nb)) @ r)}
        a = two_level_loss_evolve(self.tl, self.res, 0.0, 0.0, self._rho0(nb), grid, observables=obs)
        h = two_level_hamiltonian(self.tl, self.res, nb)
        gen = LindbladGenerator(h, two_level_collapse_ops(self.res, 0.0, 0.0, nb))
        c = evolve(gen, self._rho0(nb), grid, observables=obs)
        np.testing.assert_allclose(a.records["sx"], c.records["sx"], atol=1e-12)

    def test_pure_dephasing_keeps_populations(self, rng):
        nb = 4
        res = ResonatorParams(delta=DELTA, chi=0.0, f=0.0, kappa=KAPPA, J=0.0)
        tl = TwoLevelParams(self.tl.omega_eff, 0.0)
        rho_q = random_density(2, rng)
        rho0 = np.kron(rho_q, np.diag([1.0, 0, 0, 0]))
        traj = two_level_loss_evolve(tl, res, 0.0, 0.05, rho0, TimeGrid.uniform(50.0, 10.0), store="all")
        lay = HilbertLayout((2, nb))
        for rho in traj.states.values():
            red = partial_trace(rho.data, [0], lay)
            np.testing.assert_allclose(np.diag(red).real, np.diag(rho_q).real, atol=1e-9)

    def test_negative_rates_rejected(self):
        with pytest.raises(ScenarioError):
            two_level_loss_evolve(self.tl, self.res, -1.0, 0.0, self._rho0(4), TimeGrid.uniform(1.0, 1.0))


def test_rwa_null_back_action():
    # an undriven linear resonator coupled far off resonance (w_eff / J ~ 1800,
    # mean photon number 1/4): the quadrature sign carries no information on
    # the two-level system
    nb = 16
    J = TWO_PI * 50e-6
    tl = TwoLevelParams(TWO_PI * 89.52e-3, J)
    res = ResonatorParams(delta=DELTA, chi=0.0, f=0.0, kappa=KAPPA, J=J)
    psi = np.kron([1, 0], coherent_state(0.5, nb))
    lay = HilbertLayout((2, nb), ("usc", "resonator"))

    def distance(t, rho):
        cs = conditional_states(rho, 0.0, "resonator", lay)
        return {"distance": trace_distance(cs.rho_ge, cs.rho_lt)}

    traj = two_level_loss_evolve(tl, res, 0.0, 0.0, ket2dm(psi), TimeGrid.uniform(500.0, 2.0), callback=distance)
    assert np.max(traj.records["distance"]) < 1e-3


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_rhs_preserves_hermiticity(seed):
    rng = np.random.default_rng(seed)
    gen = cavity_generator(8, chi=CHI, f=DRIVE)
    d = gen.apply(0.0, random_density(8, rng))
    assert np.max(np.abs(d - d.conj().T)) < 1e-13
