import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uscsim.errors import DimensionError, HermiticityError, LayoutError, StateError, TruncationError
from uscsim.tensor_core import (
    DensityMatrix,
    HilbertLayout,
    Operator,
    coherent_state,
    commutator,
    create,
    destroy,
    eig_hermitian,
    embed,
    fock_leakage,
    identity,
    number,
    partial_trace,
    partial_transpose,
    sigma_x,
    sigma_z,
    tensor,
)

from conftest import random_density, random_hermitian


class TestLayout:
    def test_total_dimension(self):
        lay = HilbertLayout((2, 3, 4), ("qubit", "cavity", "resonator"))
        assert lay.total == 24
        assert lay.slot("resonator") == 2

    def test_qubit_factor_must_be_two_dimensional(self):
        with pytest.raises(DimensionError):
            HilbertLayout((3, 4), ("qubit", "cavity"))

    def test_zero_dimension_rejected(self):
        with pytest.raises(DimensionError):
            HilbertLayout((2, 0))

    def test_unknown_label(self):
        with pytest.raises(LayoutError):
            HilbertLayout((2, 3), ("qubit", "cavity")).slot("resonator")

    def test_operator_side_must_match_layout(self):
        with pytest.raises(DimensionError):
            Operator(np.eye(5), HilbertLayout((2, 3)))


class TestLadderOperators:
    def test_destroy_two(self):
        np.testing.assert_array_equal(destroy(2).data, [[0, 1], [0, 0]])

    def test_destroy_entry(self):
        assert destroy(3).data[1, 2] == pytest.approx(math.sqrt(2))

    def test_number_on_fock_two(self):
        a = destroy(5).data
        psi = np.zeros(5)
        psi[2] = 1
        assert np.real(psi @ (a.conj().T @ a) @ psi) == pytest.approx(2.0)

    def test_zero_dimension_is_an_error(self):
        with pytest.raises(DimensionError):
            destroy(0)

    @given(st.integers(min_value=2, max_value=40))
    def test_canonical_commutator_below_cut(self, n):
        c = commutator(destroy(n).data, create(n).data)
        np.testing.assert_allclose(c[: n - 1, : n - 1], np.eye(n - 1), atol=1e-12)


class TestCoherentState:
    def test_zero_amplitude_is_vacuum(self):
        psi = coherent_state(0, 10)
        assert abs(psi[0]) == pytest.approx(1.0)
        assert np.allclose(psi[1:], 0)

    def test_mean_photon_number(self):
        psi = coherent_state(1.0, 30)
        assert abs(np.real(psi.conj() @ number(30).data @ psi) - 1.0) < 1e-6

    def test_overlap_of_opposite_amplitudes(self):
        alpha = 0.7765
        overlap = np.vdot(coherent_state(-alpha, 40), coherent_state(alpha, 40))
        assert abs(overlap - math.exp(-2 * alpha**2)) < 1e-8

    def test_truncation_error_carries_deficit(self):
        with pytest.raises(TruncationError) as exc:
            coherent_state(3.0, 5)
        assert exc.value.deficit > 1e-8


class TestEmbed:
    def test_dimension(self):
        assert embed(sigma_z(), HilbertLayout((2, 3)), 0).dim == 6

    def test_identity_embeds_to_identity(self):
        np.testing.assert_array_equal(embed(identity(2), HilbertLayout((2, 3)), 0).data, np.eye(6))

    def test_mismatched_dimension(self):
        with pytest.raises(DimensionError):
            embed(destroy(4), HilbertLayout((2, 3)), 1)

    def test_disjoint_factors_commute(self, rng):
        lay = HilbertLayout((2, 2))
        for _ in range(20):
            a = embed(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)), lay, 0).data
            b = embed(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)), lay, 1).data
            assert np.max(np.abs(commutator(a, b))) < 1e-12

    def test_kronecker_associativity(self, rng):
        op = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        direct = embed(op, HilbertLayout((2, 3, 4)), 1).data
        inner = embed(op, HilbertLayout((3, 4)), 0).data
        nested = embed(inner, HilbertLayout((2, 12)), 1).data
        assert np.max(np.abs(direct - nested)) < 1e-14

    def test_tensor_concatenates_layouts(self):
        op = tensor(Operator(sigma_x().data, HilbertLayout.single(2, "qubit")),
                    Operator(destroy(3).data, HilbertLayout.single(3, "cavity")))
        assert op.layout.labels == ("qubit", "cavity")
        np.testing.assert_array_equal(op.data, np.kron(sigma_x().data, destroy(3).data))


class TestEigHermitian:
    def test_sigma_z(self):
        vals, _ = eig_hermitian(sigma_z())
        np.testing.assert_allclose(vals, [-1, 1])

    def test_number_operator(self):
        vals, _ = eig_hermitian(number(5))
        np.testing.assert_allclose(vals, np.arange(5), atol=1e-12)

    def test_rejects_non_hermitian(self):
        with pytest.raises(HermiticityError):
            eig_hermitian(destroy(3))

    def test_phase_convention(self, rng):
        _, vecs = eig_hermitian(random_hermitian(12, rng))
        for col in vecs.T:
            k = np.argmax(np.abs(col))
            assert abs(col[k].imag) < 1e-12 and col[k].real > 0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=1, max_value=200), st.integers(min_value=0, max_value=2**31))
    def test_reconstruction(self, dim, seed):
        h = random_hermitian(dim, np.random.default_rng(seed))
        vals, vecs = eig_hermitian(h)
        assert np.all(np.diff(vals) >= 0)
        norm = np.linalg.norm(h, 2)
        assert np.max(np.abs(vecs @ np.diag(vals) @ vecs.conj().T - h)) < 1e-9 * max(norm, 1.0)
        assert np.max(np.linalg.norm(h @ vecs - vecs * vals, axis=0)) < 1e-9 * max(norm, 1.0)


class TestDensityMatrix:
    def test_rejects_bad_trace(self):
        with pytest.raises(StateError):
            DensityMatrix(np.diag([0.5, 0.6]))

    def test_rejects_negative_eigenvalue(self):
        with pytest.raises(StateError):
            DensityMatrix(np.diag([1.1, -0.1]))

    def test_rejects_non_hermitian(self):
        with pytest.raises(StateError):
            DensityMatrix(np.array([[0.5, 0.1], [0.0, 0.5]]))

    def test_pure_state_purity(self):
        assert DensityMatrix.from_ket([1, 1j] / np.sqrt(2)).purity() == pytest.approx(1.0)


class TestPartialOperations:
    def test_partial_trace_of_product(self, rng):
        ra, rb = random_density(2, rng), random_density(3, rng)
        lay = HilbertLayout((2, 3))
        red = partial_trace(DensityMatrix(np.kron(ra, rb), lay), [0])
        assert np.max(np.abs(red.data - ra)) < 1e-12
        assert np.max(np.abs(partial_trace(np.kron(ra, rb), [1], lay) - rb)) < 1e-12

    def test_bell_reductions_are_maximally_mixed(self):
        phi = np.array([1, 0, 0, 1]) / math.sqrt(2)
        rho = DensityMatrix.from_ket(phi, HilbertLayout((2, 2)))
        for k in (0, 1):
            np.testing.assert_allclose(partial_trace(rho, [k]).data, np.eye(2) / 2, atol=1e-15)

    def test_cat_state_cavity_purity(self):
        # (|R>|a> - |L>|-a>)/sqrt2 reduces to an equal mixture of |a> and |-a>,
        # whose purity is (1 + |<a|-a>|^2)/2
        alpha, n = 0.7765, 40
        psi = (np.kron([0, 1], coherent_state(alpha, n)) - np.kron([1, 0], coherent_state(-alpha, n))) / math.sqrt(2)
        red = partial_trace(DensityMatrix.from_ket(psi, HilbertLayout((2, n))), [1])
        assert red.purity() == pytest.approx(0.5 * (1 + math.exp(-4 * alpha**2)), abs=1e-10)

    def test_partial_trace_needs_a_factor(self):
        with pytest.raises(LayoutError):
            partial_trace(np.eye(4) / 4, [], HilbertLayout((2, 2)))

    def test_bell_partial_transpose_spectrum(self):
        phi = np.array([1, 0, 0, 1]) / math.sqrt(2)
        pt = partial_transpose(np.outer(phi, phi), 0, HilbertLayout((2, 2)))
        np.testing.assert_allclose(np.linalg.eigvalsh(pt), [-0.5, 0.5, 0.5, 0.5], atol=1e-14)

    def test_partial_transpose_of_product_is_positive(self, rng):
        rho = np.kron(random_density(2, rng), random_density(3, rng))
        pt = partial_transpose(rho, 1, HilbertLayout((2, 3)))
        assert np.linalg.eigvalsh(pt).min() > -1e-14

    def test_invalid_factor(self):
        with pytest.raises(LayoutError):
            partial_transpose(np.eye(4) / 4, 2, HilbertLayout((2, 2)))

    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from([(2, 2), (2, 3), (3, 2), (2, 3, 2)]), st.integers(0, 2**31))
    def test_transpose_involution_and_trace(self, dims, seed):
        lay = HilbertLayout(dims)
        rho = random_density(lay.total, np.random.default_rng(seed))
        for f in range(len(dims)):
            pt = partial_transpose(rho, f, lay)
            np.testing.assert_array_equal(partial_transpose(pt, f, lay), rho)
            assert abs(np.trace(pt) - 1) < 1e-12
            red = partial_trace(rho, [f], lay)
            assert abs(np.trace(red) - 1) < 1e-12
            assert np.max(np.abs(red - red.conj().T)) < 1e-14

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_trace_and_transpose_on_disjoint_factors_commute(self, seed):
        lay = HilbertLayout((2, 3, 2))
        rho = random_density(12, np.random.default_rng(seed))
        lhs = partial_trace(partial_transpose(rho, 0, lay), [0, 1], lay)
        rhs = partial_transpose(partial_trace(rho, [0, 1], lay), 0, HilbertLayout((2, 3)))
        assert np.max(np.abs(lhs - rhs)) < 1e-14


def test_fock_leakage_counts_top_levels():
    lay = HilbertLayout((2, 5), ("qubit", "resonator"))
    pops = np.kron([0.5, 0.5], [0.6, 0.2, 0.1, 0.06, 0.04])
    assert fock_leakage(np.diag(pops), lay, "resonator") == pytest.approx(0.1)
