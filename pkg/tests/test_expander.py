import numpy as np
import pytest

from thinlab import (
    CongruenceFunction,
    MobiusMap,
    approx_transfer_check,
    build_measures,
    build_return_set,
    cayley_gap,
    convolve,
    flattening_pipeline,
    generates_full,
)
from thinlab import expander as ex
from thinlab import symbolic as sym
from thinlab.errors import EnumerationTooLarge, NotGenerating

from oracles import min_nontrivial_irrep_dim


def test_return_set_contains_identity(model):
    S = build_return_set(model, 0, 0, 1)
    assert (1, 0, 0, 1) in {m.tuple() for m in S.elements}


def test_return_set_symmetric(model):
    S = build_return_set(model, 0, 1, 2)
    tuples = {m.tuple() for m in S.elements}
    for m in S.elements:
        assert m.inverse().tuple() in tuples
        assert m.a * m.d - m.b * m.c == 1


@pytest.mark.parametrize("p0", [1, 2])
def test_return_set_inclusion_trick(model, p0):
    # S^{p0}(y, z) is contained in S^{p0 + N_T}(y, z)
    N_T = 2
    small = {m.tuple() for m in build_return_set(model, 0, 2, p0).elements}
    big = {m.tuple() for m in build_return_set(model, 0, 2, p0 + N_T).elements}
    assert small <= big


def test_return_set_cap(model):
    with pytest.raises(EnumerationTooLarge):
        build_return_set(model, 0, 0, 6, cap=10)


def test_mod_two_collapses(model, groups):
    # both generators reduce to the same matrix mod 2, so every return product
    # collapses to the identity
    S = build_return_set(model, 0, 0, 2)
    ok, cert = generates_full(S, groups(2))
    assert not ok and cert["closure_size"] == 1


def test_generates_q5(model, groups):
    S = build_return_set(model, 0, 0, 2)
    ok, cert = generates_full(S, groups(5))
    assert ok and cert["closure_size"] == 120


def test_closure_divides_group_order(model, groups):
    for q, p in ((2, 2), (3, 1), (5, 1)):
        S = build_return_set(model, 0, 0, p)
        _, cert = generates_full(S, groups(q))
        assert groups(q).order % cert["closure_size"] == 0


def test_cayley_gap_degree_exact(model, groups, expansion):
    p = expansion["p"]
    S = build_return_set(model, 0, 0, p)
    g5 = groups(5)
    lam1, lam2, eps = cayley_gap(S, g5)
    assert lam1 == len(ex.reduced_generator_indices(S, g5))
    assert eps > 0 and lam2 < lam1


def test_cayley_gap_methods_agree(model, groups, expansion):
    S = build_return_set(model, 0, 0, expansion["p"])
    g5 = groups(5)
    lan = cayley_gap(S, g5, method="lanczos")
    pow_ = cayley_gap(S, g5, method="power")
    assert abs(lan[1] - pow_[1]) <= 1e-8 * max(1.0, lan[0])
    # dense oracle
    gens = ex.reduced_generator_indices(S, g5)
    A = np.zeros((g5.order, g5.order))
    inv = g5.inv_perm()
    for i in gens:
        A[np.arange(g5.order), g5.right_mul_perm(int(inv[i]))] += 1
    w = np.sort(np.linalg.eigvalsh(A))
    assert abs(w[-1] - lan[0]) <= 1e-9 * lan[0]
    assert abs(w[-2] - lan[1]) <= 1e-8 * max(1.0, lan[0])


def test_cayley_gap_conjugation_invariant(model, groups, expansion):
    # relabeling the group by an inner automorphism preserves the spectrum
    S = build_return_set(model, 0, 0, expansion["p"])
    g5 = groups(5)
    base = cayley_gap(S, g5)
    h = model.gens[1]
    conj = ex.ReturnSet(0, 0, S.p, tuple(h @ m @ h.inverse() for m in S.elements))
    moved = cayley_gap(conj, g5)
    assert abs(base[0] - moved[0]) <= 1e-10
    assert abs(base[1] - moved[1]) <= 1e-10 * max(1.0, base[0])


def test_cayley_not_generating(model, groups):
    S = build_return_set(model, 0, 0, 2)
    with pytest.raises(NotGenerating):
        cayley_gap(S, groups(2))


def test_measure_lemmas(model, lab, groups, consts):
    rng = np.random.default_rng(12)
    C = consts.mu_hat_nu_C()
    for q in (5, 7):
        g = groups(q)
        for _ in range(3):
            r = int(rng.integers(3, 6))
            s = r + int(rng.integers(2, 4))
            base = sym.lip_quotient_pairs(model, rng, depths=[0], samples_per_depth=1)[0][1]
            tails = sym.all_words(model.T, s - r)
            tail = tails[int(rng.integers(len(tails)))]
            meas = build_measures(lab, g, base, r, s, tail, 0.02 + 0.4j)
            mu, nu0, mu_hat, nu = meas["mu"], meas["nu0"], meas["mu_hat"], meas["nu"]
            assert (np.abs(mu.weights) <= mu_hat.weights + 1e-14).all()
            mask = mu_hat.weights > 0
            ratios = mu_hat.weights[mask] / nu.weights[mask]
            assert ratios.max() <= C and ratios.min() >= 1.0 / C
            assert nu0.l1() <= consts.C_f


def test_convolution_identities(model, lab, groups):
    g = groups(7)
    rng = np.random.default_rng(13)
    phi = rng.standard_normal(g.order) + 1j * rng.standard_normal(g.order)
    delta_e = np.zeros(g.order)
    delta_e[g.identity] = 1.0
    assert np.abs(g.convolve_fn(delta_e, phi) - phi).max() == 0.0
    for _ in range(5):
        h = int(rng.integers(g.order))
        delta_h = np.zeros(g.order)
        delta_h[h] = 1.0
        out = g.convolve_fn(delta_h, phi)
        assert np.array_equal(np.sort(np.abs(out)), np.sort(np.abs(phi)))


def test_convolution_flat_identity(model, lab, groups):
    # ||nu * uniform||_2 = ||nu||_1 / sqrt(#F) for nonnegative nu
    g = groups(5)
    x = sym.point((0,), (1,))
    meas = build_measures(lab, g, x, 4, 6, (1, 1), 0.0)
    nu = meas["nu"]
    uniform = np.full(g.order, 1.0 / g.order, dtype=complex)
    got = np.linalg.norm(g.convolve_fn(nu.weights.astype(complex), uniform))
    assert abs(got - nu.l1() / np.sqrt(g.order)) <= 1e-12 * nu.l1()


def test_approx_exact_on_locally_constant(model, lab, groups):
    g5 = groups(5)
    rng = np.random.default_rng(14)
    r, s, depth = 4, 6, 6
    low = CongruenceFunction.random(model, g5, min(r, s - r), rng)
    lift = CongruenceFunction.build(model, g5, depth)
    idx = {w: i for i, w in enumerate(low.words)}
    for i, w in enumerate(lift.words):
        lift.values[i] = low.values[idx[w[: low.depth]]]
    rep = approx_transfer_check(lab, g5, lift, 0.3j, r, s)
    assert rep["sup"] <= 1e-9


def test_approx_ratio_and_slope(model, lab, groups, consts):
    g5 = groups(5)
    theta = consts.theta
    sups = np.zeros(3)
    for seed in range(4):
        H = CongruenceFunction.random_dtheta_lipschitz(model, g5, 6, np.random.default_rng(seed), theta)
        for i, sr in enumerate((2, 3, 4)):
            rep = approx_transfer_check(lab, g5, H, 0.3j, 6 - sr, 6)
            assert rep["ratio"] <= 1.0
            sups[i] += rep["sup"]
    slope = np.exp(np.polyfit([2, 3, 4], np.log(sups / 4), 1)[0])
    assert theta / 2 <= slope <= 2 * theta


def test_nu1_atom_identity(model, lab, groups):
    # expanding nu1 as a single sum over head words reproduces the measure
    # atom by atom: direct expansion computed independently here for p = 1
    from thinlab.expander import _build_nu1
    from thinlab.schottky import IDENTITY

    g5 = groups(5)
    p, l, r_prime = 1, 2, 2
    r = r_prime * l
    x = sym.point((0,), (1,))
    tail = (1, 1)
    pot = lab.potential(0.0)
    nu1, flat_ratio, blocks, n_chains = _build_nu1(lab, g5, x, r_prime, l, p, tail, 0.0)

    direct = np.zeros(g5.order)
    heads = [w for w in sym.all_words(model.T, r) if model.T[w[-1], x.first]
             and model.T[tail[-1], w[0]]]
    for head in heads:
        # head = (alpha_4, alpha_3, alpha_2, alpha_1); with p = 1, l = 2 the
        # blocks split as p_2 = head[0:1], u_2 = head[1:2], p_1 = head[2:3],
        # u_1 = head[3:4]
        # j = 1 coefficient: f_{2l-p}(u_2 + p_1 + u_1, x) over 3 symbols
        w1 = head[1:]
        _, _, f1 = sym.birkhoff(pot, w1, x)
        # j = r' = 2: f_p(p_2, (u_2, omega)) with p_2 = head[0:1], u_2 = head[1:2]
        base = sym.SymbolicPoint(head[1:2], sym.omega_tail(model.T, head[1]).period)
        _, _, f2 = sym.birkhoff(pot, head[0:1], base)
        coc = IDENTITY
        for jsym in (tail[-1],) + head:
            coc = coc @ model.gens[jsym]
        direct[g5.reduce(coc)] += np.exp(f1) * np.exp(f2)
    assert np.abs(nu1 - direct).max() <= 1e-12 * max(1.0, direct.max())


def test_flattening_pipeline_passes(model, lab, groups, expansion):
    g5 = groups(5)
    x = sym.point((0,), (1,))
    rep = flattening_pipeline(lab, g5, x, r_prime=2, l=expansion["p"] + 1, p=expansion["p"], xi=0.3j)
    assert rep.passed(), rep.to_json_dict()
    assert rep.values["eta_bound_deficit"] > 0.0
    assert rep.entries["eta_contraction"]["ratio"] < 1.0


def test_min_nontrivial_irrep_dimension(groups):
    # underpins the new-space convolution bound: (p - 1) / 2 for SL2(F_p)
    for q in (5, 7):
        assert min_nontrivial_irrep_dim(groups(q)) == (q - 1) // 2


def test_young_sanity(model, lab, groups):
    g5 = groups(5)
    x = sym.point((0,), (1,))
    meas = build_measures(lab, g5, x, 4, 6, (1, 1), 0.3j)
    rng = np.random.default_rng(15)
    phi = rng.standard_normal(g5.order) + 1j * rng.standard_normal(g5.order)
    phi -= phi.mean()
    nu = meas["nu"]
    lhs = np.linalg.norm(g5.convolve_fn(nu.weights.astype(complex), phi))
    assert lhs <= nu.l1() * np.linalg.norm(phi) * (1 + 1e-12)
