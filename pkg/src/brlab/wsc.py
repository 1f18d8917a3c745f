"""
Weighted simplicial complexes and group actions on them.

A complex fixes which summation indices a decomposition has and which sites
they attach to: every facet copy is one index. Subsets of the vertex set
{1..n} are encoded as bitmasks (bit i-1 for vertex i); vertices are 1-based in
every public signature.
"""

import logging
from collections import deque
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass
from functools import cached_property

import networkx as nx
import numpy as np

from .config import DEFAULT_TOLERANCES
from .errors import InvalidInputError, ResourceLimitError
from .schemas import ActionData, ComplexData, WeightEntry

logger = logging.getLogger(__name__)

MAX_VERTICES = 63
EXHAUSTIVE_VERTICES = 20
SAMPLED_SIMPLICES = 4096


def mask_of(subset: Iterable[int]) -> int:
    """Bitmask of a collection of 1-based vertices."""
    mask = 0
    for vertex in subset:
        mask |= 1 << (vertex - 1)
    return mask


def members(mask: int) -> tuple[int, ...]:
    """Sorted 1-based vertices of a bitmask."""
    out = []
    vertex = 1
    while mask:
        if mask & 1:
            out.append(vertex)
        mask >>= 1
        vertex += 1
    return tuple(out)


def _submasks(mask: int) -> Iterator[int]:
    sub = mask
    while sub:
        yield sub
        sub = (sub - 1) & mask


@dataclass(frozen=True, order=True)
class FacetCopy:
    """One element of the facet multiset: copy ``ordinal`` of facet ``mask``."""

    mask: int
    ordinal: int = 0

    @property
    def vertices(self) -> tuple[int, ...]:
        return members(self.mask)

    def __contains__(self, vertex: int) -> bool:
        return bool(self.mask >> (vertex - 1) & 1)

    def __str__(self) -> str:
        body = ",".join(map(str, self.vertices))
        return f"{{{body}}}#{self.ordinal}"


class WeightedSimplicialComplex:
    """
    A map from vertex subsets to nonnegative integer weights.

    Args:
        n: Number of vertices.
        weights: Explicit weights keyed by bitmask or by an iterable of
            1-based vertices. Singletons not listed weigh 1.
        closed: When true, unlisted subsets of a positively weighted listed
            simplex weigh 1; otherwise unlisted subsets weigh 0.
    """

    def __init__(
        self,
        n: int,
        weights: Mapping[int | Iterable[int], int],
        *,
        closed: bool = False,
    ):
        if not 1 <= n <= MAX_VERTICES:
            raise InvalidInputError(
                f"vertex count must lie in 1..{MAX_VERTICES}", n=n
            )
        self.n = n
        self.closed = closed
        listed: dict[int, int] = {}
        full = (1 << n) - 1
        for key, weight in weights.items():
            mask = key if isinstance(key, int) else mask_of(key)
            if mask == 0:
                continue
            if mask & ~full:
                raise InvalidInputError(
                    "subset mentions a vertex outside 1..n", subset=members(mask), n=n
                )
            if weight < 0:
                raise InvalidInputError(
                    "weights must be nonnegative", subset=members(mask), weight=weight
                )
            if weight == 0 and mask.bit_count() == 1:
                raise InvalidInputError(
                    "every singleton needs positive weight", subset=members(mask)
                )
            listed[mask] = int(weight)
        self._listed = listed
        self._check()

    def weight(self, subset: int | Iterable[int]) -> int:
        mask = subset if isinstance(subset, int) else mask_of(subset)
        if mask == 0:
            return 0
        if mask in self._listed:
            return self._listed[mask]
        if mask.bit_count() == 1:
            return 1
        if self.closed and any(
            w > 0 and mask & big == mask for big, w in self._listed.items()
        ):
            return 1
        return 0

    @cached_property
    def _generators(self) -> tuple[int, ...]:
        # Positive simplices every other positive simplex lies below.
        tops = {m for m, w in self._listed.items() if w > 0}
        tops.update(1 << k for k in range(self.n))
        return tuple(sorted(tops))

    def positive_simplices(self, *, sample_seed: int = 0) -> Iterator[int]:
        """
        Every simplex of positive weight; a deterministic sample above
        ``EXHAUSTIVE_VERTICES`` vertices.
        """
        if not self.closed:
            yield from (m for m in self._generators if self.weight(m) > 0)
            return
        if self.n <= EXHAUSTIVE_VERTICES:
            seen: set[int] = set()
            for top in self._generators:
                if self.weight(top) == 0:
                    continue
                for sub in _submasks(top):
                    if sub not in seen:
                        seen.add(sub)
                        yield sub
            return
        rng = np.random.default_rng(sample_seed)
        tops = [t for t in self._generators if self.weight(t) > 0]
        yield from tops
        for _ in range(SAMPLED_SIMPLICES):
            top = tops[int(rng.integers(len(tops)))]
            keep = [v for v in members(top) if rng.random() < 0.5]
            if keep:
                yield mask_of(keep)

    def _check(self) -> None:
        # Divisibility is transitive, so codimension-one faces suffice.
        for mask in self.positive_simplices():
            weight = self.weight(mask)
            for vertex in members(mask):
                face = mask & ~(1 << (vertex - 1))
                if face == 0:
                    continue
                below = self.weight(face)
                if below == 0:
                    raise InvalidInputError(
                        "support is not closed under taking subsets",
                        simplex=members(mask),
                        face=members(face),
                    )
                if weight % below:
                    raise InvalidInputError(
                        "weight of a face does not divide the weight of the simplex",
                        simplex=members(mask),
                        face=members(face),
                        weights=[below, weight],
                    )

    @cached_property
    def facets(self) -> tuple[int, ...]:
        """Inclusion-maximal positive simplices, ascending by bitmask."""
        tops = [m for m in self._generators if self.weight(m) > 0]
        return tuple(
            m
            for m in tops
            if not any(o != m and o & m == m for o in tops)
        )

    @cached_property
    def facet_copies(self) -> tuple[FacetCopy, ...]:
        """The facet multiset in canonical order."""
        return tuple(
            FacetCopy(mask, k) for mask in self.facets for k in range(self.weight(mask))
        )

    @cached_property
    def copy_index(self) -> dict[FacetCopy, int]:
        return {copy: k for k, copy in enumerate(self.facet_copies)}

    def copies_at(self, vertex: int) -> tuple[FacetCopy, ...]:
        """The sub-multiset of facet copies containing ``vertex``, canonical order."""
        self._check_vertex(vertex)
        return tuple(c for c in self.facet_copies if vertex in c)

    def copy_indices_at(self, vertex: int) -> tuple[int, ...]:
        return tuple(self.copy_index[c] for c in self.copies_at(vertex))

    def _check_vertex(self, vertex: int) -> None:
        if not 1 <= vertex <= self.n:
            raise InvalidInputError("vertex out of range", vertex=vertex, n=self.n)

    @property
    def facet_weights(self) -> dict[int, int]:
        return {mask: self.weight(mask) for mask in self.facets}

    def graph(self) -> nx.Graph:
        """Vertices 1..n joined by every two-vertex facet."""
        g = nx.Graph()
        g.add_nodes_from(range(1, self.n + 1))
        g.add_edges_from(members(m) for m in self.facets if m.bit_count() == 2)
        return g

    def to_data(self) -> ComplexData:
        return ComplexData(
            n=self.n,
            weights=[
                WeightEntry(subset=list(members(m)), w=w)
                for m, w in sorted(self._listed.items())
            ],
            closed=self.closed,
        )

    @classmethod
    def from_data(cls, data: ComplexData) -> "WeightedSimplicialComplex":
        return cls(
            data.n,
            {mask_of(e.subset): e.w for e in data.weights},
            closed=data.closed,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WeightedSimplicialComplex):
            return NotImplemented
        return self.to_data() == other.to_data()

    def __hash__(self) -> int:
        return hash((self.n, self.closed, tuple(sorted(self._listed.items()))))

    def __repr__(self) -> str:
        body = ", ".join(
            "{" + ",".join(map(str, members(m))) + "}" + (f"x{w}" if w > 1 else "")
            for m, w in self.facet_weights.items()
        )
        return f"WeightedSimplicialComplex(n={self.n}, facets=[{body}])"


def make_simplex(n: int) -> WeightedSimplicialComplex:
    """The full simplex: every subset weighs 1."""
    if n < 1:
        raise InvalidInputError("a simplex needs at least one vertex", n=n)
    return WeightedSimplicialComplex(n, {(1 << n) - 1: 1}, closed=True)


def make_cycle(n: int) -> WeightedSimplicialComplex:
    """The n-cycle with facets {1,2}, {2,3}, ..., {n,1}."""
    if n < 3:
        raise InvalidInputError("a cycle needs at least three vertices", n=n)
    edges = {mask_of((i, i % n + 1)): 1 for i in range(1, n + 1)}
    return WeightedSimplicialComplex(n, edges, closed=True)


def make_line(n: int) -> WeightedSimplicialComplex:
    """The line with facets {1,2}, ..., {n-1,n}."""
    if n < 2:
        raise InvalidInputError("a line needs at least two vertices", n=n)
    edges = {mask_of((i, i + 1)): 1 for i in range(1, n)}
    return WeightedSimplicialComplex(n, edges, closed=True)


def make_tree(n: int, edges: Iterable[Sequence[int]]) -> WeightedSimplicialComplex:
    """The tree complex with one weight-1 facet per edge (1-based vertices)."""
    edges = [tuple(e) for e in edges]
    graph = nx.Graph(edges)
    graph.add_nodes_from(range(1, n + 1))
    if any(len(e) != 2 for e in edges) or graph.number_of_nodes() != n or not nx.is_tree(graph):
        raise InvalidInputError("edges do not form a tree on 1..n", n=n, edges=edges)
    return WeightedSimplicialComplex(n, {mask_of(e): 1 for e in edges}, closed=True)


def is_tree(omega: WeightedSimplicialComplex) -> bool:
    if any(mask.bit_count() > 2 for mask in omega.facets):
        return False
    if any(omega.weight(mask) > 1 for mask in omega.positive_simplices()):
        return False
    return nx.is_tree(omega.graph())


def is_cycle(omega: WeightedSimplicialComplex) -> bool:
    return omega.n >= 3 and omega.facet_weights == make_cycle(omega.n).facet_weights


def is_simplex(omega: WeightedSimplicialComplex) -> bool:
    return omega.facets == ((1 << omega.n) - 1,)


def left_copy(omega: WeightedSimplicialComplex, vertex: int) -> FacetCopy:
    """On a cycle, the facet {vertex-1, vertex}."""
    prev = (vertex - 2) % omega.n + 1
    return FacetCopy(mask_of((prev, vertex)))


def right_copy(omega: WeightedSimplicialComplex, vertex: int) -> FacetCopy:
    """On a cycle, the facet {vertex, vertex+1}."""
    return FacetCopy(mask_of((vertex, vertex % omega.n + 1)))


# A group element: 0-based vertex images and facet-copy images (canonical indices).
Element = tuple[tuple[int, ...], tuple[int, ...]]


class GroupAction:
    """
    A finite group acting on the vertices and on the facet multiset of a complex.

    Args:
        omega: The complex acted on.
        generators: Vertex permutations as 1-based image lists.
        facet_maps: Per generator, the canonical index of the image of every
            facet copy. Omitted maps send copy k of F to copy k of gF.
        cap: Maximal number of group elements enumerated.
    """

    def __init__(
        self,
        omega: WeightedSimplicialComplex,
        generators: Sequence[Sequence[int]] = (),
        facet_maps: Sequence[Sequence[int]] | None = None,
        *,
        cap: int = DEFAULT_TOLERANCES.group_cap,
    ):
        self.omega = omega
        self.cap = cap
        n = omega.n
        gens = []
        for images in generators:
            images = tuple(int(v) for v in images)
            if sorted(images) != list(range(1, n + 1)):
                raise InvalidInputError(
                    "generator is not a permutation of 1..n", generator=images, n=n
                )
            gens.append(tuple(v - 1 for v in images))
        if facet_maps is not None and len(facet_maps) != len(gens):
            raise InvalidInputError(
                "one facet map per generator is required",
                generators=len(gens),
                facet_maps=len(facet_maps),
            )
        copies = omega.facet_copies
        maps = []
        for k, perm in enumerate(gens):
            if facet_maps is None:
                targets = (
                    FacetCopy(self._image_mask(perm, c.mask), c.ordinal) for c in copies
                )
                image = tuple(omega.copy_index.get(t, -1) for t in targets)
            else:
                image = tuple(int(x) for x in facet_maps[k])
            self._check_generator(perm, image)
            maps.append(image)
        self.generators: tuple[tuple[int, ...], ...] = tuple(gens)
        self.facet_maps: tuple[tuple[int, ...], ...] = tuple(maps)

    @staticmethod
    def _image_mask(perm: tuple[int, ...], mask: int) -> int:
        out = 0
        for vertex in members(mask):
            out |= 1 << perm[vertex - 1]
        return out

    def _check_generator(self, perm: tuple[int, ...], image: tuple[int, ...]) -> None:
        omega = self.omega
        copies = omega.facet_copies
        for mask in omega.positive_simplices():
            moved = self._image_mask(perm, mask)
            if omega.weight(moved) != omega.weight(mask):
                raise InvalidInputError(
                    "generator does not preserve weights",
                    generator=[v + 1 for v in perm],
                    simplex=members(mask),
                )
        if sorted(image) != list(range(len(copies))):
            raise InvalidInputError(
                "facet map is not a permutation of the facet multiset",
                generator=[v + 1 for v in perm],
                facet_map=list(image),
            )
        for k, copy in enumerate(copies):
            if copies[image[k]].mask != self._image_mask(perm, copy.mask):
                raise InvalidInputError(
                    "facet map does not cover the vertex action",
                    generator=[v + 1 for v in perm],
                    copy=str(copy),
                    image=str(copies[image[k]]),
                )

    @property
    def is_trivial(self) -> bool:
        return not self.generators

    @cached_property
    def elements(self) -> tuple[Element, ...]:
        """All group elements, by breadth-first closure over generator words."""
        identity = (
            tuple(range(self.omega.n)),
            tuple(range(len(self.omega.facet_copies))),
        )
        seen = {identity}
        order = [identity]
        queue = deque([identity])
        while queue:
            vperm, cperm = queue.popleft()
            for gv, gc in zip(self.generators, self.facet_maps):
                nxt = (
                    tuple(gv[x] for x in vperm),
                    tuple(gc[x] for x in cperm),
                )
                if nxt in seen:
                    continue
                if len(seen) >= self.cap:
                    raise ResourceLimitError(
                        "group closure exceeds the element cap", cap=self.cap
                    )
                seen.add(nxt)
                order.append(nxt)
                queue.append(nxt)
        logger.debug("group closure has %d elements", len(order))
        return tuple(order)

    def vertex_orbits(self) -> list[list[int]]:
        """Vertex orbits as sorted 1-based lists, ordered by smallest member."""
        parent = list(range(self.omega.n))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for perm in self.generators:
            for x, y in enumerate(perm):
                rx, ry = find(x), find(y)
                if rx != ry:
                    parent[max(rx, ry)] = min(rx, ry)
        orbits: dict[int, list[int]] = {}
        for x in range(self.omega.n):
            orbits.setdefault(find(x), []).append(x + 1)
        return [orbits[k] for k in sorted(orbits)]

    def transport_paths(self) -> dict[int, tuple[int, Element]]:
        """
        For every vertex, its orbit representative and a group element taking
        the representative to it.
        """
        identity = (
            tuple(range(self.omega.n)),
            tuple(range(len(self.omega.facet_copies))),
        )
        paths: dict[int, tuple[int, Element]] = {}
        for rep in orbit_representatives(self):
            paths[rep] = (rep, identity)
            queue = deque([identity])
            while queue:
                vperm, cperm = queue.popleft()
                for gv, gc in zip(self.generators, self.facet_maps):
                    nxt = (
                        tuple(gv[x] for x in vperm),
                        tuple(gc[x] for x in cperm),
                    )
                    target = nxt[0][rep - 1] + 1
                    if target not in paths:
                        paths[target] = (rep, nxt)
                        queue.append(nxt)
        return paths

    def to_data(self) -> ActionData:
        return ActionData(
            generators=[[v + 1 for v in perm] for perm in self.generators],
            facet_maps=[list(m) for m in self.facet_maps],
        )

    @classmethod
    def from_data(
        cls, omega: WeightedSimplicialComplex, data: ActionData
    ) -> "GroupAction":
        return cls(omega, data.generators, data.facet_maps)

    def __repr__(self) -> str:
        gens = [[v + 1 for v in perm] for perm in self.generators]
        return f"GroupAction(n={self.omega.n}, generators={gens})"


def trivial_action(omega: WeightedSimplicialComplex) -> GroupAction:
    return GroupAction(omega)


def cyclic_action(omega: WeightedSimplicialComplex) -> GroupAction:
    """The translation group C_n on the n-cycle, generated by i -> i+1."""
    if not is_cycle(omega):
        raise InvalidInputError("cyclic action needs an n-cycle", complex=repr(omega))
    n = omega.n
    return GroupAction(omega, [[i % n + 1 for i in range(1, n + 1)]])


def symmetric_action(omega: WeightedSimplicialComplex) -> GroupAction:
    """S_n on the full simplex, generated by adjacent transpositions."""
    if not is_simplex(omega):
        raise InvalidInputError(
            "symmetric action needs the full simplex", complex=repr(omega)
        )
    n = omega.n
    gens = []
    for k in range(1, n):
        images = list(range(1, n + 1))
        images[k - 1], images[k] = images[k], images[k - 1]
        gens.append(images)
    return GroupAction(omega, gens)


def is_external(action: GroupAction) -> bool:
    """
    True iff every element fixing a vertex also fixes every facet copy at
    that vertex.
    """
    omega = action.omega
    at = [omega.copy_indices_at(v) for v in range(1, omega.n + 1)]
    for vperm, cperm in action.elements:
        for x, y in enumerate(vperm):
            if x == y and any(cperm[c] != c for c in at[x]):
                return False
    return True


def orbit_representatives(action: GroupAction) -> list[int]:
    """Smallest vertex of every vertex orbit."""
    return [orbit[0] for orbit in action.vertex_orbits()]
