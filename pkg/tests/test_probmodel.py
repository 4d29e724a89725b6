import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import decoupling_lab.probmodel as pm
from decoupling_lab.rng import stream
from decoupling_lab.spaces import euclid, seq_lp, sup_norm


def unit_pw_seq(depth, dim=1, exact=False):
    """Unit-multiplier sign sequence: d_n = xi_n e_1."""
    tree = pm.paley_walsh(depth, exact=exact)
    mults = [np.tile(np.eye(dim)[0], (tree.num_nodes(n - 1), 1)) for n in range(1, depth + 1)]
    return pm.AdaptedSequence.from_multipliers(tree, euclid(dim), mults)


# ---------------------------------------------------------------------------
# trees


def test_paley_walsh_tree():
    tree = pm.paley_walsh(3)
    assert tree.depth == 3
    assert tree.path_count == 8
    assert tree.sizes == (2, 2, 2)
    assert np.allclose(tree.path_probs, np.full(8, 0.125))
    assert list(tree.nodes_at(1)) == [0, 0, 0, 0, 1, 1, 1, 1]
    assert list(tree.nodes_at(3)) == list(range(8))
    assert tree.stride(2) == 2


def test_empty_tree_rejected():
    with pytest.raises(pm.ModelError):
        pm.FiltrationTree([])


def test_level_validation():
    with pytest.raises(pm.ModelError):
        pm.Level((1.0, -1.0), (0.6, 0.6))
    with pytest.raises(pm.ModelError):
        pm.Level((1.0, -1.0), (1.0, 0.0))
    with pytest.raises(pm.ModelError):
        pm.Level((1.0,), (0.5, 0.5))


def test_ancestor_consistency():
    tree = pm.symmetric_three_point(2)
    ids = np.arange(tree.num_nodes(2))
    up = tree.ancestor(ids, 2, 1)
    assert list(up) == [i // 3 for i in range(9)]
    assert list(tree.ancestor(ids, 2, 0)) == [0] * 9


def test_exact_probabilities():
    tree = pm.paley_walsh(2, exact=True)
    assert tree.exact
    assert sum(tree.node_probs_exact(2)) == 1
    assert not pm.paley_walsh(2).exact


def test_node_histories():
    tree = pm.paley_walsh(2)
    hist = tree.node_histories(2)
    assert hist[0] == (1.0, 1.0)
    assert hist[3] == (-1.0, -1.0)


# ---------------------------------------------------------------------------
# adapted sequences


def test_unit_multiplier_moments():
    seq = unit_pw_seq(2)
    vals = sorted(float(v) for v in seq.terminal[:, 0])
    assert vals == [-2.0, 0.0, 0.0, 2.0]
    assert seq.terminal_moment(2.0) == pytest.approx(2.0, abs=1e-15)


def test_partial_sums_and_running_max():
    tree = pm.paley_walsh(2)
    mults = [np.array([[1.0, 0.0]]), np.array([[0.0, 1.0], [0.0, 1.0]])]
    seq = pm.AdaptedSequence.from_multipliers(tree, euclid(2), mults)
    # f_2 = (xi_1, xi_2) on every path
    assert np.allclose(np.abs(seq.terminal), 1.0)
    assert np.allclose(seq.partial_sums[:, 1, 0], [1, 1, -1, -1])
    assert np.allclose(seq.f_star, math.sqrt(2.0))
    assert np.allclose(seq.d_star, 1.0)


def test_from_multipliers_validation():
    tree = pm.paley_walsh(2)
    with pytest.raises(pm.ModelError):
        pm.AdaptedSequence.from_multipliers(tree, euclid(1), [np.ones((1, 1))])
    with pytest.raises(pm.ModelError):
        pm.AdaptedSequence.from_multipliers(
            tree, euclid(1), [np.ones((2, 1)), np.ones((2, 1))]
        )


def test_window():
    seq = unit_pw_seq(3)
    full = seq.window(0, 3)
    for a, b in zip(full.tables, seq.tables):
        assert np.array_equal(a, b)
    empty = seq.window(1, 1)
    assert all(not t.any() for t in empty.tables)
    mid = seq.window(1, 2)
    assert not mid.tables[0].any()
    assert np.array_equal(mid.tables[1], seq.tables[1])
    assert not mid.tables[2].any()
    with pytest.raises(pm.ModelError):
        seq.window(2, 1)


def test_stopping_rule_tau():
    seq = unit_pw_seq(3)
    tree = seq.tree
    rule = pm.StoppingRule.from_rule(tree, lambda n, h: abs(sum(h)) >= 2)
    tau = rule.tau()
    sums = seq.partial_sums[:, :, 0]
    expect = []
    for row in np.abs(sums) >= 2:
        hits = np.nonzero(row)[0]
        expect.append(hits[0] if hits.size else tree.depth + 1)
    assert list(tau) == expect


def test_stop_start_partition():
    seq = unit_pw_seq(3)
    rule = pm.StoppingRule.from_rule(seq.tree, lambda n, h: n >= 2 and h[0] > 0)
    stopped, started = seq.stopped(rule), seq.started(rule)
    for a, b, c in zip(stopped.tables, started.tables, seq.tables):
        assert np.allclose(a + b, c)
    never = pm.StoppingRule.never(seq.tree)
    assert all(np.array_equal(a, b) for a, b in zip(seq.stopped(never).tables, seq.tables))
    at_root = pm.StoppingRule.from_rule(seq.tree, lambda n, h: n == 0)
    assert all(not t.any() for t in seq.stopped(at_root).tables)
    assert all(np.array_equal(a, b) for a, b in zip(seq.started(at_root).tables, seq.tables))


def test_stopped_by_is_monotone():
    tree = pm.paley_walsh(3)
    rule = pm.StoppingRule.from_rule(tree, lambda n, h: n == 1 and h[0] > 0)
    assert not rule.stopped_by(0).any()
    one = rule.stopped_by(1)
    assert list(one) == [True, False]
    assert list(rule.stopped_by(2)) == [True, True, False, False]


# ---------------------------------------------------------------------------
# tangent pairs and their verification


def test_tangency_exact_mode():
    tree = pm.paley_walsh(3, exact=True)
    gen = stream(11, "tangency")
    seq = pm.random_multiplier_sequence(gen, tree, euclid(2))
    res = pm.verify_tangency(pm.decouple(seq))
    assert res.ok and res.gap == 0


def test_conditional_independence_exact():
    gen = stream(12, "ci")
    pair = pm.random_pair(gen, seq_lp(0.5, 2), max_depth=4)
    res = pm.verify_conditional_independence(pair)
    assert res.ok and res.gap <= 1e-12


def test_copy_mode_rejected_when_predictable_data_varies():
    # |d_2| depends on xi_1, so a full independent copy is not tangent
    tree = pm.paley_walsh(2)
    mults = [np.array([[1.0]]), np.array([[2.0], [1.0]])]
    seq = pm.AdaptedSequence.from_multipliers(tree, euclid(1), mults)
    bad = pm.independent_copy(seq)
    res = pm.verify_tangency(bad)
    assert not res.ok
    assert res.gap == pytest.approx(0.25, abs=1e-12)
    good = pm.decouple(seq)
    assert pm.verify_tangency(good).ok
    assert pm.verify_conditional_independence(good).ok


def test_copy_mode_breaks_factorization():
    # |d_2| is a function of d_1, so the copy's joint law cannot factorize
    tree = pm.paley_walsh(2)
    mults = [np.array([[1.0]]), np.array([[2.0], [1.0]])]
    seq = pm.AdaptedSequence.from_multipliers(tree, euclid(1), mults)
    res = pm.verify_conditional_independence(pm.independent_copy(seq))
    assert not res.ok
    assert res.gap == pytest.approx(0.125, abs=1e-12)


def test_copy_mode_ok_for_iid_increments():
    # with constant multipliers the copy really is tangent
    seq = unit_pw_seq(2)
    pair = pm.independent_copy(seq)
    assert pm.verify_tangency(pair).ok
    assert pm.verify_conditional_independence(pair).ok


def test_tangent_mode_validation():
    seq = unit_pw_seq(1)
    with pytest.raises(pm.ModelError):
        pm.TangentPair(seq, "weird")


def test_enumeration_guard():
    seq = unit_pw_seq(12)
    pair = pm.decouple(seq)
    assert pair.joint_outcomes() == 4096 ** 2
    with pytest.raises(pm.EnumerationError):
        pair.require_enumerable()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), symmetric=st.booleans())
def test_random_pairs_are_tangent(seed, symmetric):
    gen = stream(seed, "prop-tangency")
    space = [euclid(2), seq_lp(0.5, 2), sup_norm(3)][seed % 3]
    pair = pm.random_pair(gen, space, max_depth=5, symmetric=symmetric)
    assert pm.verify_tangency(pair).gap <= 1e-12
    assert pm.verify_conditional_independence(pair).gap <= 1e-12


# ---------------------------------------------------------------------------
# the davis split


def test_davis_split_partition_and_routing():
    gen = stream(3, "davis")
    pair = pm.random_pair(gen, euclid(2), max_depth=4)
    small, big = pm.davis_split(pair)
    for s, b, t in zip(small.seq.tables, big.seq.tables, pair.seq.tables):
        assert np.allclose(s + b, t)
        assert not (s.astype(bool) & b.astype(bool)).any()


def test_davis_split_constant_increments():
    # constant increment norms: level 1 is big, later levels all small
    seq = unit_pw_seq(3)
    small, big = pm.davis_split(pm.decouple(seq))
    assert not small.seq.tables[0].any()
    assert np.array_equal(big.seq.tables[0], seq.tables[0])
    for n in (1, 2):
        assert np.array_equal(small.seq.tables[n], seq.tables[n])
        assert not big.seq.tables[n].any()


def test_davis_split_growing_increments():
    # ||d_n|| = 3^n beats 2 d*_{n-1}, so everything lands in the big part
    tree = pm.paley_walsh(3)
    mults = [np.full((tree.num_nodes(n - 1), 1), 3.0 ** n) for n in range(1, 4)]
    seq = pm.AdaptedSequence.from_multipliers(tree, euclid(1), mults)
    small, big = pm.davis_split(pm.decouple(seq))
    assert all(not t.any() for t in small.seq.tables)
    assert all(np.array_equal(a, b) for a, b in zip(big.seq.tables, seq.tables))


# ---------------------------------------------------------------------------
# exact joint moments


def test_g_moment_orthogonality():
    gen = stream(21, "orth")
    tree = pm.random_tree(gen, 4)
    seq = pm.random_multiplier_sequence(gen, tree, euclid(3))
    pair = pm.decouple(seq)
    # both sides equal the sum of increment second moments
    assert pm.g_terminal_moment(pair, 2.0) == pytest.approx(
        seq.terminal_moment(2.0), rel=1e-12
    )


def test_sign_randomization_matches_decoupling():
    # on sign filtrations eps_n xi_n is again an independent sign, so the
    # randomized and decoupled sums have the same law
    gen = stream(22, "signs")
    tree = pm.paley_walsh(3)
    seq = pm.random_multiplier_sequence(gen, tree, euclid(2))
    pair = pm.decouple(seq)
    for p in (1.0, 2.0, 3.0):
        assert pm.sign_randomized_moment(seq, p) == pytest.approx(
            pm.g_terminal_moment(pair, p), rel=1e-12
        )


def test_sign_randomized_budget():
    seq = unit_pw_seq(12)
    with pytest.raises(pm.EnumerationError):
        pm.sign_randomized_moment(seq, 2.0)


def test_joint_blocks_cover_product_space():
    gen = stream(23, "blocks")
    pair = pm.random_pair(gen, euclid(2), max_depth=3)
    probs = pair.tree.path_probs
    mass = 0.0
    for rows, stats in pm.joint_blocks(pair, block_rows=3):
        w = probs[rows][:, None] * probs[None, :]
        assert stats["g_terminal"].shape[:2] == w.shape
        mass += float(w.sum())
    assert mass == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# sampling


def test_sample_paths_deterministic():
    gen = stream(31, "sample")
    pair = pm.random_pair(gen, euclid(2), max_depth=3)
    a = pm.sample_paths(pair, 500, seed=7)
    b = pm.sample_paths(pair, 500, seed=7)
    assert np.array_equal(a.f_terminal, b.f_terminal)
    assert np.array_equal(a.g_terminal, b.g_terminal)
    c = pm.sample_paths(pair, 500, seed=8)
    assert not np.array_equal(a.f_terminal, c.f_terminal)
    assert a.count == 500


def test_sample_paths_moments_agree():
    gen = stream(32, "sample-mom")
    pair = pm.random_pair(gen, euclid(2), max_depth=3)
    batch = pm.sample_paths(pair, 40_000, seed=5)
    space = pair.space
    for values, exact in (
        (space.norms(batch.f_terminal) ** 2, pair.seq.terminal_moment(2.0)),
        (space.norms(batch.g_terminal) ** 2, pm.g_terminal_moment(pair, 2.0)),
    ):
        se = float(values.std(ddof=1) / math.sqrt(values.size))
        assert abs(float(values.mean()) - exact) <= 4.0 * se + 1e-12


# ---------------------------------------------------------------------------
# symmetry and serialization


def test_conditional_symmetry_flag():
    gen = stream(41, "sym")
    tree = pm.random_tree(gen, 3, symmetric=True)
    seq = pm.random_multiplier_sequence(gen, tree, euclid(2))
    assert seq.is_conditionally_symmetric()
    drifted = pm.AdaptedSequence(
        tree, seq.space, [t + 0.25 for t in seq.tables]
    )
    assert not drifted.is_conditionally_symmetric()


def test_symmetry_means_sign_flip_invariance():
    gen = stream(42, "symflip")
    tree = pm.random_tree(gen, 3, symmetric=True)
    seq = pm.random_multiplier_sequence(gen, tree, euclid(1))
    assert seq.is_conditionally_symmetric()
    flipped_tables = list(seq.tables)
    flipped_tables[0] = -flipped_tables[0]
    flipped = pm.AdaptedSequence(tree, seq.space, flipped_tables)
    for p in (1.0, 2.0, 3.0):
        assert seq.terminal_moment(p) == pytest.approx(flipped.terminal_moment(p), rel=1e-12)


def test_sequence_spec_round_trip():
    tree = pm.paley_walsh(3, exact=True)
    gen = stream(7, "ser")
    seq = pm.random_general_sequence(gen, tree, seq_lp(0.5, 2))
    spec = pm.sequence_spec(seq)
    back = pm.sequence_from_spec(json.loads(json.dumps(spec)))
    assert back.tree.exact
    assert back.space == seq.space
    for a, b in zip(seq.tables, back.tables):
        assert np.array_equal(a, b)
    assert pm.verify_tangency(pm.decouple(back)).ok


def test_sequence_spec_round_trip_inexact():
    tree = pm.symmetric_three_point(2)
    mults = [np.full((tree.num_nodes(n - 1), 1), float(n)) for n in (1, 2)]
    seq = pm.AdaptedSequence.from_multipliers(tree, euclid(1), mults)
    back = pm.sequence_from_spec(pm.sequence_spec(seq))
    assert not back.tree.exact
    assert np.allclose(back.terminal, seq.terminal)
