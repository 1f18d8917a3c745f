"""
Normal forms of decompositions on tree complexes.

On a tree every facet is an edge, so every non-root vertex has exactly one
bond towards the root. Sweeping from the leaves, the local at each vertex is
made an isometry (unconstrained) or trace-normalized (separable) and the
remaining factor is pushed into the parent. Both sweeps keep the contraction.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import networkx as nx
import numpy as np
from scipy import stats

from .config import DEFAULT_TOLERANCES, Tolerances
from .decomp import Decomposition, Variant, build, contract
from .errors import InvalidInputError
from .schemas import ClosureReport, NormRecord
from .tensor import frobenius_norm, min_eigenvalue
from .wsc import WeightedSimplicialComplex, is_tree

logger = logging.getLogger(__name__)

BOUND_SLACK = 1e-8
PRUNE_RELATIVE = 1e-14
GROWTH_TOLERANCE = 0.05


@dataclass(frozen=True)
class TreeOrder:
    """
    Leaf-to-root elimination order of a tree complex.

    ``parents[v]`` is (parent vertex, canonical index of the connecting facet
    copy) for every vertex except the root.
    """

    root: int
    order: tuple[int, ...]
    parents: dict[int, tuple[int, int]]

    @classmethod
    def of(cls, omega: WeightedSimplicialComplex, root: int | None = None) -> "TreeOrder":
        if not is_tree(omega):
            raise InvalidInputError("the complex is not a tree", complex=repr(omega))
        root = omega.n if root is None else root
        if not 1 <= root <= omega.n:
            raise InvalidInputError("root out of range", root=root, n=omega.n)
        graph = omega.graph()
        parents = {}
        for parent, child in nx.bfs_edges(graph, root):
            copy = next(
                c for c in omega.copy_indices_at(child) if parent in omega.facet_copies[c]
            )
            parents[child] = (parent, copy)
        order = tuple(reversed([v for v in nx.bfs_tree(graph, root) if v != root]))
        return cls(root, order, parents)


def _require_plain(dec: Decomposition, variant: Variant) -> None:
    if dec.variant is not variant:
        raise InvalidInputError(f"expected a {variant.value} decomposition", variant=dec.variant.value)
    if not dec.action.is_trivial:
        raise InvalidInputError(
            "tree normal forms need a trivial action; symmetric gauges are not supported"
        )


def _axis(dec_omega: WeightedSimplicialComplex, vertex: int, copy: int) -> int:
    return dec_omega.copy_indices_at(vertex).index(copy)


def left_canonical(dec: Decomposition, root: int | None = None) -> Decomposition:
    """
    Gauge-equivalent unconstrained decomposition whose non-root locals are
    isometries from the parent bond: with W the local reshaped to
    (other axes) x (parent bond), W^dagger W = identity.

    The parent bond of a vertex shrinks to min(bond, rows) when the local
    has fewer rows than columns.
    """
    _require_plain(dec, Variant.UNCONSTRAINED)
    tree = TreeOrder.of(dec.omega, root)
    locals_ = [np.array(a) for a in dec.locals]
    for vertex in tree.order:
        parent, copy = tree.parents[vertex]
        axis = _axis(dec.omega, vertex, copy)
        local = np.moveaxis(locals_[vertex - 1], axis, -1)
        shape = local.shape
        q, r = np.linalg.qr(local.reshape(-1, shape[-1]))
        k = q.shape[1]
        locals_[vertex - 1] = np.moveaxis(q.reshape(shape[:-1] + (k,)), -1, axis)
        p_axis = _axis(dec.omega, parent, copy)
        absorbed = np.tensordot(r, locals_[parent - 1], axes=([1], [p_axis]))
        locals_[parent - 1] = np.moveaxis(absorbed, 0, p_axis)
    return build(Variant.UNCONSTRAINED, dec.omega, locals_)


def isometry_defect(dec: Decomposition, vertex: int, copy: int) -> float:
    """max |W^dagger W - I| for the local at ``vertex`` against bond ``copy``."""
    axis = _axis(dec.omega, vertex, copy)
    local = np.moveaxis(dec.local(vertex), axis, -1)
    w = local.reshape(-1, local.shape[-1])
    return float(np.max(np.abs(w.conj().T @ w - np.eye(w.shape[1]))))


def _traces(local: np.ndarray) -> np.ndarray:
    return np.trace(local, axis1=-2, axis2=-1).real


def _normalize_separable_tree_joint(
    decs: Sequence[Decomposition], root: int | None = None
) -> list[Decomposition]:
    """
    Trace-rebalance a family of separable decompositions on one tree.

    For every non-root vertex and value b of its parent bond the traces
    tr(A_beta) over beta with parent index b sum to 1; the removed weight
    multiplies the parent's matrices at b. Parent-bond values with total
    trace 0 carry only zero matrices and are pruned from both ends.
    """
    out = []
    for dec in decs:
        _require_plain(dec, Variant.SEPARABLE)
        tree = TreeOrder.of(dec.omega, root)
        locals_ = [np.array(a) for a in dec.locals]
        for vertex in tree.order:
            parent, copy = tree.parents[vertex]
            axis = _axis(dec.omega, vertex, copy)
            p_axis = _axis(dec.omega, parent, copy)
            local = np.moveaxis(locals_[vertex - 1], axis, 0)
            mass = _traces(local).reshape(local.shape[0], -1).sum(axis=1)
            keep = mass > PRUNE_RELATIVE * max(float(mass.max(initial=0.0)), 0.0)
            if not keep.any():
                raise InvalidInputError("the contraction vanishes", vertex=vertex)
            if not keep.all():
                logger.warning(
                    "pruning %d zero-trace values of the bond between %d and %d",
                    int((~keep).sum()),
                    vertex,
                    parent,
                )
            local = local[keep] / mass[keep].reshape((-1,) + (1,) * (local.ndim - 1))
            locals_[vertex - 1] = np.moveaxis(local, 0, axis)
            upper = np.moveaxis(locals_[parent - 1], p_axis, 0)[keep]
            upper = upper * mass[keep].reshape((-1,) + (1,) * (upper.ndim - 1))
            locals_[parent - 1] = np.moveaxis(upper, 0, p_axis)
        out.append(build(Variant.SEPARABLE, dec.omega, locals_))
    return out


def normalize_separable_tree(dec: Decomposition, root: int | None = None) -> Decomposition:
    """
    Separable decomposition of the same operator whose non-root local
    matrices have trace at most 1 (marginally exactly 1 per parent-bond value,
    exactly 1 at leaves); the root carries tr(rho).
    """
    return _normalize_separable_tree_joint([dec], root)[0]


def min_local_eigenvalue(dec: Decomposition) -> float:
    return min(
        min_eigenvalue(a) for v in range(1, dec.n + 1) for a in dec.local_matrices(v)
    )


def _local_norms(dec: Decomposition, root: int) -> tuple[float, float | None]:
    """Largest non-root local size and, for separable decompositions, the root trace."""
    others = [v for v in range(1, dec.n + 1) if v != root]
    if dec.variant is Variant.SEPARABLE:
        largest = max(
            (float(_traces(dec.local_matrices(v)).max()) for v in others), default=0.0
        )
        return largest, float(_traces(dec.local_matrices(root)).sum())
    return max((frobenius_norm(dec.local(v)) for v in others), default=0.0), None


def _max_entry(dec: Decomposition) -> float:
    return max(float(np.max(np.abs(a))) for a in dec.locals)


def _cauchy_gaps(decs: Sequence[Decomposition], tolerances: Tolerances) -> list[float]:
    values = [contract(d, tolerances).data for d in decs]
    return [frobenius_norm(a - b) for a, b in zip(values, values[1:])]


def closure_check(
    sequence: Sequence[Decomposition],
    *,
    forced: bool = False,
    epsilons: Sequence[float] | None = None,
    root: int | None = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> ClosureReport:
    """
    Normalize a convergent sequence of tree decompositions and check that the
    local norms stay bounded.

    With ``forced`` a non-tree sequence is accepted and only the raw largest
    local entry is tracked; given ``epsilons`` its log-log growth slope is
    fitted, and a slope below -0.05 marks the sequence as unbounded.
    """
    if not sequence:
        raise InvalidInputError("closure_check needs a nonempty sequence")
    first = sequence[0]
    if any(d.variant is not first.variant or d.omega != first.omega for d in sequence):
        raise InvalidInputError("sequence elements must share complex and variant")
    if epsilons is not None and len(epsilons) != len(sequence):
        raise InvalidInputError("one epsilon per sequence element is required")
    gaps = _cauchy_gaps(sequence, tolerances)
    if len(gaps) > 1 and gaps[-1] > gaps[0]:
        raise InvalidInputError(
            "contractions do not form a Cauchy sequence", first_gap=gaps[0], last_gap=gaps[-1]
        )
    tree = is_tree(first.omega)
    if not tree:
        if not forced:
            raise InvalidInputError("closure_check needs a tree complex", complex=repr(first.omega))
        return _forced_report(sequence, gaps, epsilons)

    root = first.n if root is None else root
    if first.variant is Variant.UNCONSTRAINED:
        normalized = [left_canonical(d, root) for d in sequence]
    elif first.variant is Variant.SEPARABLE:
        normalized = _normalize_separable_tree_joint(sequence, root)
    else:
        raise InvalidInputError(
            "closure_check normalizes unconstrained and separable decompositions",
            variant=first.variant.value,
        )
    norms = []
    for index, dec in enumerate(normalized):
        largest, trace = _local_norms(dec, root)
        norms.append(NormRecord(index=index, max_local_norm=largest, trace=trace))
    if first.variant is Variant.SEPARABLE:
        bound = 1.0
        traces = [abs(contract(d, tolerances).trace().real) for d in sequence]
        bounded = all(r.max_local_norm <= bound + BOUND_SLACK for r in norms) and all(
            r.trace <= t + BOUND_SLACK for r, t in zip(norms, traces)
        )
    else:
        bound = math.sqrt(max(d.bond for d in sequence))
        bounded = all(r.max_local_norm <= bound + BOUND_SLACK for r in norms)
    limit = normalized[-1]
    return ClosureReport(
        variant=first.variant.value,
        tree=True,
        forced=forced,
        norms=norms,
        cauchy_gaps=gaps,
        bound=bound,
        bounded=bounded,
        limit_bond=limit.bond,
        limit_error=gaps[-1] if gaps else 0.0,
        growth_slope=_growth(norms, epsilons),
    )


def _growth(norms: Sequence[NormRecord], epsilons: Sequence[float] | None) -> float | None:
    if epsilons is None or len(epsilons) < 3:
        return None
    values = [r.max_local_norm for r in norms]
    if min(values) <= 0:
        return None
    fit = stats.linregress(np.log(epsilons), np.log(values))
    return float(fit.slope)


def _forced_report(
    sequence: Sequence[Decomposition],
    gaps: list[float],
    epsilons: Sequence[float] | None,
) -> ClosureReport:
    norms = [
        NormRecord(index=i, max_local_norm=_max_entry(d)) for i, d in enumerate(sequence)
    ]
    slope = _growth(norms, epsilons)
    bounded = slope is None or slope >= -GROWTH_TOLERANCE
    if not bounded:
        logger.info("local entries grow with slope %.3f in log epsilon", slope)
    return ClosureReport(
        variant=sequence[0].variant.value,
        tree=False,
        forced=True,
        norms=norms,
        cauchy_gaps=gaps,
        bounded=bounded,
        growth_slope=slope,
    )
