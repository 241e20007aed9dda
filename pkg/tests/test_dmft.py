import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fnn.backprop import matsubara_ldos_gradients
from fnn.datasets.fk import FkInstance, fk_build, fk_hopping, staggered_pattern
from fnn.dmft import (DmftConfig, EfBracketError, MatsubaraEvaluator, dmft_solve, encode_fk,
                      fnn_hybridization, nf_occupation, order_parameters, solve_ef)
from fnn.greens import EvaluationPoint, MatsubaraGrid, direct_greens, matsubara_ldos, recursive_forward
from fnn.model import ArchitectureSpec, InputEncoding, assemble, init_parameters


def frozen_rho(params, encoding, sigma, grid):
    """Output LDOS with Sigma held fixed, from the dense inverse."""
    diags = []
    for k, n in enumerate(grid.positive_indices):
        system = assemble(params, encoding, self_energy=sigma[k])
        g = direct_greens(system, EvaluationPoint.matsubara(grid.temperature, int(n)))
        diags.append(np.diagonal(g)[-params.layer_sizes[-1]:])
    diags = np.array(diags)
    return matsubara_ldos(np.concatenate([diags[::-1].conj(), diags]))


def test_u_zero_is_trivial_fixed_point():
    grid = MatsubaraGrid(0.11, 20)
    res = dmft_solve(fk_hopping((4, 4), 1.0, 0.3), 0.0, grid)
    assert res.converged and res.iterations <= 2
    assert np.abs(res.self_energy).max() < 1e-12


def test_atomic_limit_single_pole():
    grid = MatsubaraGrid(0.11, 20)
    mu, u = 0.7, 2.0
    # a deep f level pins n_f = 1
    res = dmft_solve(np.zeros((1, 1)), u, grid, mu, DmftConfig(fixed_ef=-100.0, tolerance=1e-14))
    assert res.converged
    assert res.n_f[0] == pytest.approx(1.0, abs=1e-15)
    expected = 1.0 / (1j * grid.positive_frequencies + mu - u)
    assert np.abs(res.g_loc[:, 0] - expected).max() < 1e-10


def test_checkerboard_order_grows_with_u():
    grid = MatsubaraGrid(0.11, 20)
    orders = []
    for u in (1.0, 2.0, 3.0, 4.0):
        inst = FkInstance.symmetric(u, 0.11, (8, 8))
        res = dmft_solve(fk_build(inst)[0], u, grid, shape=inst.shape)
        assert res.converged
        assert res.e_f == pytest.approx(-u / 2, abs=1e-9)
        orders.append(res.order["checkerboard"])
        assert res.order["stripe_x"] < 1e-12
    assert orders[0] < 0.05 and orders[3] > 0.4
    assert np.all(np.diff(orders) > 0)
    # values of the converged runs
    assert orders[1] == pytest.approx(0.41935, abs=1e-3)
    assert orders[3] == pytest.approx(0.49099, abs=1e-3)


def test_residual_decreases_at_the_end():
    grid = MatsubaraGrid(0.11, 20)
    inst = FkInstance.symmetric(3.0, 0.11, (4, 4))
    res = dmft_solve(fk_build(inst)[0], 3.0, grid, shape=inst.shape)
    assert res.converged
    assert np.all(np.diff(res.residuals[-6:]) < 0)


def test_conjugation_symmetry_of_fixed_point():
    grid = MatsubaraGrid(0.11, 10)
    inst = FkInstance(t_prime=0.4, mu=0.8, u=2.0, temperature=0.11, shape=(4, 4))
    h = fk_build(inst)[0]
    res = dmft_solve(h, 2.0, grid, shape=inst.shape)
    # the lattice Green's function at -w_n with conj(Sigma) is the conjugate of the stored one
    for k, w in enumerate(grid.positive_frequencies):
        neg = np.diagonal(np.linalg.inv(-1j * w * np.eye(16) - h - np.diag(res.self_energy[k].conj())))
        assert np.abs(neg - res.g_loc[k].conj()).max() < 1e-10
    full = res.full(res.self_energy)
    assert np.allclose(full[:grid.n0], full[grid.n0:][::-1].conj())


def test_nf_limits():
    w = 1j * MatsubaraGrid(0.1, 10).positive_frequencies + 0.3
    for e_f in (-0.4, 0.0, 0.7):
        expected = 1.0 / (1.0 + np.exp(e_f / 0.1))
        assert nf_occupation(w, e_f, 0.1, 0.0)[0] == pytest.approx(expected, rel=1e-12)
    assert nf_occupation(w, 1e3, 0.1, 1.0)[0] == 0.0
    assert nf_occupation(w, -1e3, 0.1, 1.0)[0] == 1.0


def test_nf_unpaired_matches_paired():
    grid = MatsubaraGrid(0.1, 12)
    rng = np.random.default_rng(0)
    w = 1j * grid.positive_frequencies[:, None] + rng.normal(size=(1, 3))
    full = np.concatenate([w[::-1].conj(), w])
    assert np.allclose(nf_occupation(w, 0.2, 0.1, 1.5), nf_occupation(full, 0.2, 0.1, 1.5, paired=False))
    with pytest.raises(ValueError):
        nf_occupation(w, 0.2, 0.1, 1.5, paired=False)


def test_symmetric_point_half_filled():
    # at E_f = -U/2 the checkerboard Weiss fields of a particle-hole symmetric lattice average to 1/2
    grid = MatsubaraGrid(0.11, 20)
    u = 3.0
    inst = FkInstance.symmetric(u, 0.11, (4, 4))
    res = dmft_solve(fk_build(inst)[0], u, grid, shape=inst.shape)
    n_f = nf_occupation(res.weiss_inv, -u / 2, 0.11, u)
    assert n_f.mean() == pytest.approx(0.5, abs=1e-10)
    sub = staggered_pattern((4, 4), "checkerboard") > 0
    assert np.allclose(n_f[sub] + n_f[~sub], 1.0)


def test_ef_bracket_error():
    w = 1j * MatsubaraGrid(0.1, 5).positive_frequencies[:, None] * np.ones((1, 2))
    with pytest.raises(EfBracketError):
        solve_ef(w, 0.1, 1.0, bracket=(5.0, 6.0))
    assert solve_ef(w, 0.1, 1.0, bracket=(-5.0, 5.0)) == pytest.approx(solve_ef(w, 0.1, 1.0), abs=1e-10)


def test_config_validation():
    with pytest.raises(ValueError):
        DmftConfig(mixing=0.0)
    with pytest.raises(ValueError):
        DmftConfig(tolerance=0.0)
    with pytest.raises(ValueError):
        dmft_solve(np.array([[0.0, 1.0], [0.0, 0.0]]), 1.0, MatsubaraGrid(0.1, 4))


def test_order_parameters():
    shape = (4, 4)
    occ = (staggered_pattern(shape, "stripe_x") > 0).astype(float)
    order = order_parameters(occ, shape)
    assert order["stripe_x"] == 0.5 and order["checkerboard"] == 0.0 and order["stripe_y"] == 0.0


def test_hybridization_matches_elimination(rng):
    params = init_parameters(ArchitectureSpec(4, [3, 2]), 0)
    grid = MatsubaraGrid(0.2, 3)
    delta = fnn_hybridization(params, grid)
    for k, w in enumerate(grid.positive_frequencies):
        system = assemble(params, InputEncoding.hamiltonian(np.zeros((4, 4))))
        dense = system.to_dense()
        rest = np.linalg.inv(1j * w * np.eye(5) - dense[4:, 4:])
        assert np.allclose(delta[k], dense[:4, 4:] @ rest @ dense[4:, :4], atol=1e-12)


def fk_sample(u=1.0, temperature=0.1):
    inst = FkInstance(t_prime=0.3, mu=0.6, u=u, temperature=temperature, shape=(4, 4))
    return encode_fk(inst)


@settings(max_examples=5)
@given(st.integers(0, 2 ** 16))
def test_frozen_sigma_gradients_match_fd(seed):
    grid = MatsubaraGrid(0.1, 6)
    params = init_parameters(ArchitectureSpec(16, [3, 2]), seed)
    enc = fk_sample()
    ev = MatsubaraEvaluator(grid, warm_start=False)
    rho, state = ev.forward(params, enc, retain=True)
    sigma = ev.last_result.self_energy
    assert np.allclose(rho, frozen_rho(params, enc, sigma, grid), atol=1e-10)
    weights = np.random.default_rng(seed).normal(size=2)
    grads = ev.backward(state, weights)
    refs = params.refs()
    picks = np.random.default_rng(seed + 1).choice(len(refs), 12, replace=False)
    h = 1e-5
    for i in picks:
        ref = refs[i]
        fd = (weights @ frozen_rho(params.perturbed(ref, h), enc, sigma, grid)
              - weights @ frozen_rho(params.perturbed(ref, -h), enc, sigma, grid)) / (2 * h)
        an = params.gradient_value(grads, ref)
        assert abs(an - fd) <= 1e-5 * abs(fd) + 1e-9


def test_u_zero_matches_noninteracting_path():
    grid = MatsubaraGrid(0.1, 6)
    params = init_parameters(ArchitectureSpec(16, [3, 2]), 1)
    enc = fk_sample(u=0.0)
    ev = MatsubaraEvaluator(grid)
    rho, state = ev.forward(params, enc, retain=True)
    assert np.abs(ev.last_result.self_energy).max() == 0
    caches = [recursive_forward(assemble(params, InputEncoding.hamiltonian(enc.h0)),
                                EvaluationPoint.matsubara(0.1, int(n)), with_corner=False)
              for n in grid.positive_indices]
    diag = np.array([np.diagonal(c.last_block) for c in caches])
    assert np.allclose(rho, matsubara_ldos(np.concatenate([diag[::-1].conj(), diag])), atol=1e-12)
    w = np.array([0.3, -1.1])
    a = ev.backward(state, w)
    b = matsubara_ldos_gradients(caches, grid.positive_indices, w)
    for x, y in zip(a.intra[1:] + a.inter, b.intra[1:] + b.inter):
        assert np.abs(x - y).max() < 1e-10


def test_frozen_fnn_forward_deterministic():
    grid = MatsubaraGrid(0.1, 6)
    params = init_parameters(ArchitectureSpec(16, [3, 2]), 2)
    a = MatsubaraEvaluator(grid).forward(params, fk_sample())[0]
    b = MatsubaraEvaluator(grid).forward(params, fk_sample())[0]
    assert np.array_equal(a, b)


def test_interacting_training_rejects_plain_inputs():
    from fnn.dmft import train_interacting
    from fnn.training import TrainConfig
    params = init_parameters(ArchitectureSpec(16, [2]), 0)
    with pytest.raises(ValueError):
        train_interacting(params, [(InputEncoding.onsite(np.zeros(16)), 0)], [], TrainConfig(),
                          MatsubaraGrid(0.1, 4))
    with pytest.raises(ValueError):
        train_interacting(params, [(fk_sample(), 0)], [], TrainConfig(head="cc"), MatsubaraGrid(0.1, 4))
