import networkx as nx
import numpy as np
import pytest

from brlab.decomp import build, contract
from brlab.errors import InvalidInputError
from brlab.families import w_eps_ti_nonneg
from brlab.tree import (
    TreeOrder,
    closure_check,
    isometry_defect,
    left_canonical,
    min_local_eigenvalue,
    normalize_separable_tree,
)
from brlab.wsc import GroupAction, make_cycle, make_line, make_tree, trivial_action


def _random_tree(n, seed):
    rng = np.random.default_rng(seed)
    tree = nx.from_prufer_sequence(rng.integers(0, n, n - 2).tolist())
    return make_tree(n, [(u + 1, v + 1) for u, v in tree.edges])


def test_tree_order_is_leaf_to_root():
    order = TreeOrder.of(make_line(4))
    assert order.root == 4
    assert order.order == (1, 2, 3)
    assert order.parents[1][0] == 2
    assert set(order.parents) == {1, 2, 3}


def test_tree_order_rejects_cycle():
    with pytest.raises(InvalidInputError):
        TreeOrder.of(make_cycle(4))


@pytest.mark.parametrize("n, seed", [(4, 0), (5, 1), (6, 2)])
def test_left_canonical_on_random_trees(random_decomposition, n, seed):
    omega = _random_tree(n, seed)
    dec = random_decomposition("unconstrained", trivial_action(omega), r=2, d=2)
    canonical = left_canonical(dec)
    assert np.allclose(contract(canonical).data, contract(dec).data, atol=1e-10)
    tree = TreeOrder.of(omega)
    for vertex, (_, copy) in tree.parents.items():
        assert isometry_defect(canonical, vertex, copy) < 1e-10


def test_left_canonical_with_other_root(random_decomposition):
    dec = random_decomposition("unconstrained", trivial_action(make_line(5)), r=3, d=2)
    canonical = left_canonical(dec, root=3)
    assert np.allclose(contract(canonical).data, contract(dec).data, atol=1e-10)
    # the leaf has two rows, so its bond shrinks to two
    assert canonical.bond_shape(1) == (2,)


def test_left_canonical_needs_trivial_action(random_decomposition):
    reflection = GroupAction(make_line(3), [[3, 2, 1]])
    dec = random_decomposition("unconstrained", reflection, r=2, d=2)
    with pytest.raises(InvalidInputError):
        left_canonical(dec)


def _tree_instances(count):
    for seed in range(count):
        n = 3 + seed % 4
        r = 1 + seed % 3
        yield seed, _random_tree(n, seed), r


def test_left_canonical_on_many_trees(random_decomposition):
    for seed, omega, r in _tree_instances(200):
        dec = random_decomposition("unconstrained", trivial_action(omega), r=r, d=2)
        canonical = left_canonical(dec)
        expected = contract(dec).data
        deviation = np.abs(contract(canonical).data - expected).max()
        assert deviation <= 1e-10 * max(1.0, np.abs(expected).max()), seed
        for vertex, (_, copy) in TreeOrder.of(omega).parents.items():
            assert isometry_defect(canonical, vertex, copy) < 1e-10, seed


def _assert_trace_marginals(normalized, rho):
    tree = TreeOrder.of(normalized.omega)
    for vertex, (_, copy) in tree.parents.items():
        traces = np.trace(normalized.local(vertex), axis1=-2, axis2=-1).real
        axis = normalized.omega.copy_indices_at(vertex).index(copy)
        per_parent = np.moveaxis(traces, axis, 0).reshape(traces.shape[axis], -1).sum(axis=1)
        assert np.allclose(per_parent, 1.0, atol=1e-12)
        assert traces.max() <= 1 + 1e-12
        if len(normalized.omega.copy_indices_at(vertex)) == 1:
            # a leaf has only its parent bond
            assert np.allclose(traces, 1.0, atol=1e-12)
    root = np.trace(normalized.local(tree.root), axis1=-2, axis2=-1).real.sum()
    assert np.isclose(root, rho.trace().real, rtol=1e-10)


def test_normalize_separable_tree(random_decomposition):
    dec = random_decomposition("separable", trivial_action(_random_tree(5, 3)), r=2, d=2)
    normalized = normalize_separable_tree(dec)
    rho = contract(dec)
    assert np.allclose(contract(normalized).data, rho.data, atol=1e-10)
    assert min_local_eigenvalue(normalized) >= -1e-12
    _assert_trace_marginals(normalized, rho)


def test_normalize_separable_on_many_trees(random_decomposition):
    for seed, omega, r in _tree_instances(200):
        dec = random_decomposition("separable", trivial_action(omega), r=r, d=2)
        normalized = normalize_separable_tree(dec)
        rho = contract(dec)
        deviation = np.abs(contract(normalized).data - rho.data).max()
        assert deviation <= 1e-10 * max(1.0, np.abs(rho.data).max()), seed
        assert min_local_eigenvalue(normalized) >= -1e-10, seed
        _assert_trace_marginals(normalized, rho)


def test_zero_bond_values_are_pruned(rng):
    omega = make_line(3)
    leaf = np.stack([np.eye(2), np.zeros((2, 2))])
    middle = np.einsum("ab,ij->abij", np.ones((2, 2)), np.diag([1.0, 2.0]))
    root = np.stack([np.eye(2), 0.5 * np.eye(2)])
    dec = build("separable", omega, [leaf, middle, root])
    normalized = normalize_separable_tree(dec)
    assert normalized.bonds[0] == 1
    assert np.allclose(contract(normalized).data, contract(dec).data)


def _scaled(dec, factor):
    locals_ = [np.array(a) for a in dec.locals]
    locals_[0] = locals_[0] * factor
    return dec.with_locals(locals_)


def test_closure_on_separable_sequence(random_decomposition):
    base = random_decomposition("separable", trivial_action(make_line(4)), r=2, d=2)
    sequence = [_scaled(base, 1 + eps) for eps in (1e-1, 1e-2, 1e-3, 1e-4)]
    report = closure_check(sequence)
    assert report.tree
    assert report.bounded
    assert report.bound == 1.0
    assert all(r.trace is not None for r in report.norms)
    for record, dec in zip(report.norms, sequence):
        assert np.isclose(record.trace, contract(dec).trace().real)
    assert report.cauchy_gaps[0] > report.cauchy_gaps[-1]


def test_closure_on_unconstrained_sequence(random_decomposition):
    base = random_decomposition("unconstrained", trivial_action(make_line(4)), r=2, d=2)
    sequence = [_scaled(base, 1 + eps) for eps in (1e-1, 1e-2, 1e-3)]
    report = closure_check(sequence)
    assert report.bounded
    assert np.isclose(report.bound, np.sqrt(2))
    assert report.limit_bond <= 2


def test_closure_rejects_divergent_sequence(random_decomposition):
    base = random_decomposition("unconstrained", trivial_action(make_line(3)), r=2, d=2)
    sequence = [_scaled(base, f) for f in (1.0, 1.1, 2.0)]
    with pytest.raises(InvalidInputError):
        closure_check(sequence)


def test_forced_diagnostic_on_cycle_family():
    eps = np.logspace(-1, -4, 7)
    sequence = [w_eps_ti_nonneg(5, e) for e in eps]
    with pytest.raises(InvalidInputError):
        closure_check(sequence)
    report = closure_check(sequence, forced=True, epsilons=eps)
    assert not report.tree
    assert report.forced
    assert abs(report.growth_slope + 0.25) < 0.03
    assert not report.bounded
