import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import stats

from app.models.model_params import ModelParams
from app.services.lattice_model import (
    SPARSE_THRESHOLD,
    bell_chain_state,
    build_basis,
    build_block_operators,
    build_hamiltonian,
    extended_sites,
    full_basis,
    jordan_wigner_params,
    local_operator,
    neel_state,
    product_state,
    sample_disorder,
)
from app.services.observables import expectation
from tests.conftest import disordered_params


# --- BASE ---
def test_basis_n2_configurations():
    basis = build_basis(2)
    assert basis.dim == 2
    assert basis.states.tolist() == [0b01, 0b10]


@pytest.mark.parametrize("N", [8, 12])
def test_basis_dimension_is_binomial(N):
    assert build_basis(N).dim == math.comb(N, N // 2)


def test_lookup_is_bijection():
    basis = build_basis(8)
    assert all(basis.lookup(int(c)) == i for i, c in enumerate(basis.states))
    assert np.all(np.diff(basis.states) > 0)
    with pytest.raises(KeyError):
        basis.lookup(0b11111111)


@pytest.mark.parametrize("N", [3, 0, 22])
def test_basis_rejects_invalid_N(N):
    with pytest.raises(ValueError):
        build_basis(N)


def test_other_magnetization_sector():
    assert build_basis(6, 2).dim == 15
    assert full_basis(4).dim == 16


# --- PARAMÈTRES ---
def test_model_params_validation():
    assert ModelParams(N=4).h == (0.0,) * 4
    with pytest.raises(ValidationError):
        ModelParams(N=5)
    with pytest.raises(ValidationError):
        ModelParams(N=4, block=(1, 3))
    with pytest.raises(ValidationError):
        ModelParams(N=4, h=(0.0, 1.0))
    with pytest.raises(ValidationError):
        ModelParams(N=4, h=(0.0, float("nan"), 0.0, 0.0))
    with pytest.raises(ValidationError):
        ModelParams(N=4, unknown=1)


# --- HAMILTONIEN ---
def test_hamiltonian_two_sites_transverse():
    H = build_hamiltonian(ModelParams(N=2, J_perp=1.0, J_z=0.0), build_basis(2))
    np.testing.assert_allclose(H.toarray(), [[0, 0.5], [0.5, 0]], atol=1e-15)
    assert H.is_real


def test_hamiltonian_two_sites_longitudinal():
    H = build_hamiltonian(ModelParams(N=2, J_perp=0.0, J_z=1.0), build_basis(2))
    np.testing.assert_allclose(H.toarray(), np.diag([-0.25, -0.25]), atol=1e-15)


def test_zero_couplings_give_zero_matrix():
    H = build_hamiltonian(ModelParams(N=6, J_perp=0.0, J_z=0.0), build_basis(6))
    assert not np.any(H.toarray())


def test_hamiltonian_real_symmetric():
    params = disordered_params(8)
    H = build_hamiltonian(params, build_basis(8)).toarray()
    assert np.isrealobj(H)
    assert np.max(np.abs(H - H.T)) <= 1e-12


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        build_hamiltonian(ModelParams(N=4), build_basis(6))


def test_commutes_with_total_sz_on_full_space():
    params = disordered_params(6, J_z=0.7)
    basis = full_basis(6)
    H = build_hamiltonian(params, basis).toarray()
    sz = np.diag([bin(int(s)).count("1") - 3 for s in basis.states]).astype(float)
    assert np.max(np.abs(H @ sz - sz @ H)) <= 1e-12


def test_sparse_storage_above_threshold():
    assert not build_hamiltonian(ModelParams(N=14), build_basis(14)).is_sparse
    assert math.comb(14, 7) <= SPARSE_THRESHOLD < math.comb(16, 8)


# --- DÉCOUPAGE S / E ---
@pytest.mark.parametrize("block", [(1, 2), (3, 4), (1, 1), (7, 8)])
def test_block_split_sums_to_hamiltonian(block):
    params = disordered_params(8, block=block)
    basis = build_basis(8)
    ops = build_block_operators(params, basis)
    total = ops.H_S.toarray() + ops.H_E.toarray() + ops.V_SE.toarray()
    assert np.max(np.abs(total - build_hamiltonian(params, basis).toarray())) <= 1e-12


def test_interaction_is_only_the_boundary_bond():
    params = ModelParams(N=4, J_perp=1.0, J_z=0.2)
    basis = build_basis(4)
    V = build_block_operators(params, basis).V_SE.toarray()
    rows, cols = np.nonzero(V - np.diag(np.diag(V)))
    assert rows.size > 0
    assert all(basis.states[i] ^ basis.states[j] == 0b0110 for i, j in zip(rows, cols))


def test_two_site_chain_has_no_environment():
    ops = build_block_operators(ModelParams(N=2), build_basis(2))
    assert not np.any(ops.V_SE.toarray())
    assert not np.any(ops.H_E.toarray())


def test_neel_interaction_energy():
    params = ModelParams(N=8, J_perp=1.0, J_z=0.2)
    basis = build_basis(8)
    ops = build_block_operators(params, basis)
    assert expectation(ops.V_SE, neel_state(basis)) == pytest.approx(-0.05, abs=1e-12)


def test_block_matrix_two_sites():
    params = ModelParams(N=8, J_perp=1.0, J_z=0.2)
    h_block = build_block_operators(params, build_basis(8)).h_block
    np.testing.assert_allclose(np.linalg.eigvalsh(h_block), [-0.55, 0.05, 0.05, 0.45], atol=1e-12)


def test_block_longer_than_two_sites_rejected():
    with pytest.raises(ValidationError):
        ModelParams(N=8, block=(2, 4))


def test_local_operator_unknown_site():
    with pytest.raises(ValueError):
        local_operator(ModelParams(N=4), (1, 2), [(2, 3)], ())


def test_extended_sites():
    assert extended_sites(ModelParams(N=8, block=(1, 2))) == (1, 2, 3)
    assert extended_sites(ModelParams(N=8, block=(4, 5))) == (3, 4, 5, 6)
    assert extended_sites(ModelParams(N=2, block=(1, 2))) == (1, 2)


# --- ÉTATS INITIAUX ---
def test_neel_state_n2():
    psi = neel_state(build_basis(2))
    np.testing.assert_array_equal(psi.amplitudes, [1, 0])


def test_neel_energy_n8():
    params = ModelParams(N=8, J_perp=1.0, J_z=0.2)
    basis = build_basis(8)
    H = build_hamiltonian(params, basis)
    assert expectation(H, neel_state(basis)) == pytest.approx(-0.35, abs=1e-12)


def test_product_state_outside_sector():
    with pytest.raises(ValueError):
        product_state(build_basis(4), [1, 2, 3])


def test_bell_chain_n4_amplitudes():
    basis = build_basis(4)
    psi = bell_chain_state(basis)
    amp = psi.amplitudes
    assert amp[basis.lookup(0b0011)] == pytest.approx(1 / math.sqrt(2))    # ↑↑↓↓
    assert amp[basis.lookup(0b0101)] == pytest.approx(-1 / math.sqrt(2))   # ↑↓↑↓
    assert np.count_nonzero(amp) == 2


@pytest.mark.parametrize("N", [4, 6, 8, 10])
def test_bell_chain_normalized(N):
    psi = bell_chain_state(build_basis(N))
    assert psi.norm() == pytest.approx(1.0, abs=1e-12)
    nonzero = psi.amplitudes[psi.amplitudes != 0]
    assert nonzero.size == 2 ** ((N - 2) // 2)
    np.testing.assert_allclose(np.abs(nonzero), 2 ** (-(N - 2) / 4))


def test_bell_chain_requires_n4():
    with pytest.raises(ValueError):
        bell_chain_state(build_basis(2))


# --- DÉSORDRE ---
def test_disorder_zero_width():
    assert sample_disorder(0.0, 6, np.random.default_rng(0)) == (0.0,) * 6


def test_disorder_negative_width():
    with pytest.raises(ValueError):
        sample_disorder(-1.0, 6, np.random.default_rng(0))


def test_disorder_support_and_mean():
    draws = np.array(sample_disorder(5.0, 10_000, np.random.default_rng(3)))
    assert np.all(np.abs(draws) <= 5.0)
    assert abs(draws.mean()) <= 3 * (5.0 / math.sqrt(3)) / 100


def test_disorder_uniform_distribution():
    draws = np.array(sample_disorder(2.5, 100_000, np.random.default_rng(4)))
    assert stats.kstest(draws, "uniform", args=(-2.5, 5.0)).statistic < 0.01


# --- CORRESPONDANCE FERMIONIQUE ---
def test_jordan_wigner_mapping():
    params = jordan_wigner_params(0.5, 0.2, [0.0] * 8)
    assert (params.J_perp, params.J_z, params.h) == (1.0, 0.2, (0.0,) * 8)
    assert jordan_wigner_params(0.0, 0.3, [0.0] * 4).J_perp == 0.0
    anderson = jordan_wigner_params(1.0, 0.0, [0.0] * 4)
    assert (anderson.J_perp, anderson.J_z) == (2.0, 0.0)


def test_free_fermion_spectrum_matches_sector_extremes():
    rng = np.random.default_rng(5)
    N, t = 8, 0.5
    H_list = rng.uniform(-3, 3, size=N)
    params = jordan_wigner_params(t, 0.0, H_list)
    hopping = np.diag(H_list) + t * (np.eye(N, k=1) + np.eye(N, k=-1))
    eps = np.linalg.eigvalsh(hopping)
    energies = np.linalg.eigvalsh(build_hamiltonian(params, build_basis(N)).toarray())
    shift = -H_list.sum() / 2
    assert energies[0] == pytest.approx(eps[: N // 2].sum() + shift, abs=1e-10)
    assert energies[-1] == pytest.approx(eps[N // 2:].sum() + shift, abs=1e-10)
