"""
The five (Omega, G)-decomposition variants, their validation and contraction.

Every variant stores one local array per vertex. Its leading axes carry the
bond indices of the facet copies at that vertex, in canonical order (facet
bitmask ascending, copy ordinal ascending); trailing axes carry the site
data:

    unconstrained, nonnegative   bonds + (d,)
    psd                          bonds + bonds + (d,)      ket then bra
    separable                    bonds + (d, d)
    purification                 bonds + (d, d_ancilla)

Bond dimensions may differ between facet copies. Symmetric decompositions are
built from one local per vertex orbit and the other vertices hold read-only
transposed views of it, so G-compatibility holds by construction.
"""

import itertools
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        def __str__(self) -> str:
            return str(self.value)

        __format__ = str.__format__
from functools import cached_property

import numpy as np
import opt_einsum as oe

from .config import DEFAULT_TOLERANCES, Tolerances
from .errors import (
    ConsistencyError,
    InvalidInputError,
    ResourceLimitError,
    SymmetryError,
)
from .schemas import DecompositionData, OrbitLocal, ValidationReport
from .tensor import (
    DenseTensor,
    MultipartiteOperator,
    array_from_data,
    array_to_data,
    frobenius_norm,
    is_hermitian,
    min_eigenvalue,
)
from .wsc import (
    Element,
    FacetCopy,
    GroupAction,
    WeightedSimplicialComplex,
    orbit_representatives,
    trivial_action,
)

logger = logging.getLogger(__name__)


class Variant(StrEnum):
    UNCONSTRAINED = "unconstrained"
    NONNEGATIVE = "nonnegative"
    PSD = "psd"
    SEPARABLE = "separable"
    PURIFICATION = "purification"

    @property
    def bond_groups(self) -> int:
        return 2 if self is Variant.PSD else 1

    @property
    def tail(self) -> int:
        return 2 if self in (Variant.SEPARABLE, Variant.PURIFICATION) else 1

    @property
    def is_vector(self) -> bool:
        return self in (Variant.UNCONSTRAINED, Variant.NONNEGATIVE)


def _freeze(array: np.ndarray) -> np.ndarray:
    out = np.asarray(array, dtype=np.complex128)
    if not np.all(np.isfinite(out)):
        raise InvalidInputError("local tensors must be finite")
    if out.flags.writeable:
        out = out.copy()
        out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Decomposition:
    """
    An (Omega, G)-decomposition of one of the five variants.

    ``locals[i - 1]`` is the local array at vertex i in the layout described
    in the module docstring.
    """

    variant: Variant
    omega: WeightedSimplicialComplex
    action: GroupAction
    locals: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "locals", tuple(_freeze(a) for a in self.locals))
        if self.action.omega is not self.omega and self.action.omega != self.omega:
            raise InvalidInputError("action and decomposition use different complexes")
        if len(self.locals) != self.omega.n:
            raise InvalidInputError(
                "one local tensor per vertex is required",
                vertices=self.omega.n,
                locals=len(self.locals),
            )
        # Computing bonds checks shape agreement along every facet copy.
        _ = self.bonds

    @cached_property
    def bonds(self) -> tuple[int, ...]:
        """Bond dimension of every facet copy, canonical order."""
        groups, tail = self.variant.bond_groups, self.variant.tail
        sizes: dict[int, int] = {}
        for vertex, local in enumerate(self.locals, start=1):
            at = self.omega.copy_indices_at(vertex)
            m = len(at)
            if local.ndim != groups * m + tail:
                raise InvalidInputError(
                    "local tensor has the wrong number of axes",
                    vertex=vertex,
                    expected=groups * m + tail,
                    shape=list(local.shape),
                )
            shape = local.shape[:m]
            if groups == 2 and local.shape[m : 2 * m] != shape:
                raise InvalidInputError(
                    "ket and bra bond dimensions differ", vertex=vertex
                )
            if self.variant is Variant.SEPARABLE and local.shape[-1] != local.shape[-2]:
                raise InvalidInputError(
                    "separable local matrices must be square", vertex=vertex
                )
            for copy, size in zip(at, shape):
                if sizes.setdefault(copy, size) != size:
                    raise InvalidInputError(
                        "bond dimension of a facet copy differs between its vertices",
                        copy=str(self.omega.facet_copies[copy]),
                        vertex=vertex,
                    )
        return tuple(sizes[c] for c in range(len(self.omega.facet_copies)))

    @property
    def bond(self) -> int:
        return max(self.bonds, default=1)

    @property
    def n(self) -> int:
        return self.omega.n

    @property
    def dims(self) -> tuple[int, ...]:
        """Physical dimension at every vertex."""
        offset = -self.variant.tail
        return tuple(local.shape[offset] for local in self.locals)

    @property
    def ancillas(self) -> tuple[int, ...]:
        if self.variant is not Variant.PURIFICATION:
            raise InvalidInputError("only purifications carry ancilla dimensions")
        return tuple(local.shape[-1] for local in self.locals)

    def local(self, vertex: int) -> np.ndarray:
        return self.locals[vertex - 1]

    def bond_shape(self, vertex: int) -> tuple[int, ...]:
        return tuple(self.bonds[c] for c in self.omega.copy_indices_at(vertex))

    def vectors(self, vertex: int) -> np.ndarray:
        """Local vectors as an (R_i, d_i) array, rows indexed by beta."""
        if not self.variant.is_vector:
            raise InvalidInputError("vectors are defined for vector variants only")
        local = self.local(vertex)
        return local.reshape(-1, local.shape[-1])

    def psd_matrices(self, vertex: int) -> np.ndarray:
        """The matrices E_j as a (d_i, R_i, R_i) array."""
        if self.variant is not Variant.PSD:
            raise InvalidInputError("psd matrices are defined for psd decompositions")
        local = self.local(vertex)
        size = math.prod(self.bond_shape(vertex))
        return np.moveaxis(local, -1, 0).reshape(local.shape[-1], size, size)

    def local_matrices(self, vertex: int) -> np.ndarray:
        """Local matrices as an (R_i, d_i, d'_i) array, indexed by beta."""
        if self.variant.tail != 2:
            raise InvalidInputError("local matrices need a matrix variant")
        local = self.local(vertex)
        return local.reshape(-1, *local.shape[-2:])

    def with_locals(self, locals_: Sequence[np.ndarray]) -> "Decomposition":
        """Same complex and variant with new locals and a trivial action."""
        return Decomposition(
            self.variant, self.omega, trivial_action(self.omega), tuple(locals_)
        )

    def to_data(self) -> DecompositionData:
        return DecompositionData(
            variant=self.variant.value,
            complex=self.omega.to_data(),
            action=self.action.to_data(),
            locals=[
                OrbitLocal(vertex=v, tensor=array_to_data(self.local(v)))
                for v in orbit_representatives(self.action)
            ],
        )

    @classmethod
    def from_data(cls, data: DecompositionData) -> "Decomposition":
        omega = WeightedSimplicialComplex.from_data(data.complex)
        action = GroupAction.from_data(omega, data.action)
        reps = {entry.vertex: array_from_data(entry.tensor) for entry in data.locals}
        dec = from_orbits(data.variant, omega, action, reps)
        require_valid(dec)
        return dec


def _bond_permutation(
    omega: WeightedSimplicialComplex, vertex: int, element: Element
) -> tuple[int, tuple[int, ...]]:
    """Target vertex and axis order taking a local at ``vertex`` along ``element``."""
    vperm, cperm = element
    target = vperm[vertex - 1] + 1
    source_at = omega.copy_indices_at(vertex)
    target_at = omega.copy_indices_at(target)
    position = {c: k for k, c in enumerate(target_at)}
    axes = [0] * len(source_at)
    for k, copy in enumerate(source_at):
        axes[position[cperm[copy]]] = k
    return target, tuple(axes)


def _permute_bonds(variant: Variant, array: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    m = len(axes)
    full = list(axes)
    if variant.bond_groups == 2:
        full += [m + a for a in axes]
    full += list(range(variant.bond_groups * m, array.ndim))
    return np.transpose(array, full)


def transport(
    variant: Variant,
    omega: WeightedSimplicialComplex,
    array: np.ndarray,
    vertex: int,
    element: Element,
) -> tuple[int, np.ndarray]:
    """Move a local at ``vertex`` to the image vertex of ``element``."""
    target, axes = _bond_permutation(omega, vertex, element)
    return target, _permute_bonds(variant, array, axes)


def arrange_local(
    variant: Variant | str,
    omega: WeightedSimplicialComplex,
    vertex: int,
    copies: Sequence[FacetCopy],
    array: np.ndarray,
) -> np.ndarray:
    """Reorder a local given with bond axes in ``copies`` order into canonical order."""
    variant = Variant(variant)
    canonical = omega.copies_at(vertex)
    if sorted(copies) != list(canonical):
        raise InvalidInputError(
            "copies must be exactly the facet copies at the vertex",
            vertex=vertex,
            copies=[str(c) for c in copies],
        )
    given = {c: k for k, c in enumerate(copies)}
    axes = [given[c] for c in canonical]
    return _permute_bonds(variant, np.asarray(array), axes)


def build(
    variant: Variant | str,
    omega: WeightedSimplicialComplex,
    locals_: Sequence[np.ndarray],
    action: GroupAction | None = None,
) -> Decomposition:
    return Decomposition(
        Variant(variant), omega, action or trivial_action(omega), tuple(locals_)
    )


def from_orbits(
    variant: Variant | str,
    omega: WeightedSimplicialComplex,
    action: GroupAction,
    reps: Mapping[int, np.ndarray],
) -> Decomposition:
    """
    Build a decomposition from one local per vertex-orbit representative.

    Locals at the other vertices are transported views of the representative's
    array.
    """
    variant = Variant(variant)
    expected = orbit_representatives(action)
    if sorted(reps) != expected:
        raise InvalidInputError(
            "locals must be given exactly at the orbit representatives",
            expected=expected,
            given=sorted(reps),
        )
    frozen = {v: _freeze(a) for v, a in reps.items()}
    locals_: list[np.ndarray | None] = [None] * omega.n
    for vertex, (rep, element) in action.transport_paths().items():
        _, view = transport(variant, omega, frozen[rep], rep, element)
        locals_[vertex - 1] = view
    return Decomposition(variant, omega, action, tuple(locals_))


def validate(
    dec: Decomposition,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    symmetry_tol: float = 0.0,
) -> ValidationReport:
    """Every violated positivity or symmetry invariant of ``dec``."""
    report = ValidationReport(subject=f"{dec.variant.value} decomposition")
    for vertex in range(1, dec.n + 1):
        local = dec.local(vertex)
        if dec.variant is Variant.NONNEGATIVE:
            imag = float(np.max(np.abs(local.imag), initial=0.0))
            low = float(np.min(local.real, initial=0.0))
            if imag > 1e-12:
                report.add(
                    "nonnegativity",
                    "local vector has complex entries",
                    vertex=vertex,
                    value=imag,
                )
            if low < -1e-12:
                report.add(
                    "nonnegativity",
                    "local vector has a negative entry",
                    vertex=vertex,
                    value=low,
                )
        elif dec.variant is Variant.PSD:
            for j, e in enumerate(dec.psd_matrices(vertex)):
                _check_psd(report, e, tolerances, vertex, f"E_{j}")
        elif dec.variant is Variant.SEPARABLE:
            for beta, a in enumerate(dec.local_matrices(vertex)):
                _check_psd(report, a, tolerances, vertex, f"A_{beta}")
    for vperm, cperm in zip(dec.action.generators, dec.action.facet_maps):
        for vertex in range(1, dec.n + 1):
            target, moved = transport(
                dec.variant, dec.omega, dec.local(vertex), vertex, (vperm, cperm)
            )
            other = dec.local(target)
            if moved.shape != other.shape:
                report.add(
                    "symmetry",
                    f"local shapes differ between vertices {vertex} and {target}",
                    vertex=vertex,
                )
                continue
            deviation = float(np.max(np.abs(moved - other), initial=0.0))
            if deviation > symmetry_tol:
                report.add(
                    "symmetry",
                    f"locals at vertices {vertex} and {target} are not related "
                    "by the action",
                    vertex=vertex,
                    value=deviation,
                )
    return report


def _check_psd(
    report: ValidationReport,
    m: np.ndarray,
    tolerances: Tolerances,
    vertex: int,
    label: str,
) -> None:
    if not is_hermitian(m, tolerances.hermitian):
        deviation = float(np.max(np.abs(m - m.conj().T)))
        report.add("psd", f"{label} is not Hermitian", vertex=vertex, value=deviation)
        return
    low = min_eigenvalue(m)
    if low < -tolerances.psd * max(1.0, float(np.linalg.norm(m))):
        report.add("psd", f"{label} has a negative eigenvalue", vertex=vertex, value=low)


def require_valid(dec: Decomposition, tolerances: Tolerances = DEFAULT_TOLERANCES) -> None:
    """Raise unless ``validate`` finds nothing."""
    report = validate(dec, tolerances)
    if report.valid:
        return
    first = report.violations[0]
    error = SymmetryError if first.kind == "symmetry" else InvalidInputError
    raise error(
        first.message,
        violations=[v.model_dump() for v in report.violations],
    )


def _check_cap(dec: Decomposition, tolerances: Tolerances) -> None:
    count = math.prod(dec.bonds)
    if count > 1 << tolerances.enumeration_bits:
        raise ResourceLimitError(
            "number of global index assignments exceeds the enumeration cap",
            assignments=count,
            cap=1 << tolerances.enumeration_bits,
        )


def _bond_symbols(dec: Decomposition, vertex: int, offset: int = 0) -> str:
    return "".join(oe.get_symbol(offset + c) for c in dec.omega.copy_indices_at(vertex))


def contract_vector(
    dec: Decomposition, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> DenseTensor:
    """T = sum over global assignments of the product of local vectors."""
    if not dec.variant.is_vector:
        raise InvalidInputError("contract_vector needs a vector variant")
    _check_cap(dec, tolerances)
    base = len(dec.omega.facet_copies)
    terms, phys = [], []
    for vertex in range(1, dec.n + 1):
        p = oe.get_symbol(base + vertex)
        phys.append(p)
        terms.append(_bond_symbols(dec, vertex) + p)
    expr = ",".join(terms) + "->" + "".join(phys)
    return DenseTensor(oe.contract(expr, *dec.locals))


def contract_psd(
    dec: Decomposition, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> DenseTensor:
    """T_j = sum over ket and bra assignments of the product of E-entries."""
    if dec.variant is not Variant.PSD:
        raise InvalidInputError("contract_psd needs a psd decomposition")
    _check_cap(dec, tolerances)
    base = len(dec.omega.facet_copies)
    terms, phys = [], []
    for vertex in range(1, dec.n + 1):
        p = oe.get_symbol(2 * base + vertex)
        phys.append(p)
        terms.append(
            _bond_symbols(dec, vertex) + _bond_symbols(dec, vertex, base) + p
        )
    expr = ",".join(terms) + "->" + "".join(phys)
    values = oe.contract(expr, *dec.locals)
    scale = max(1.0, float(np.max(np.abs(values), initial=0.0)))
    low = float(np.min(values.real, initial=0.0))
    if low < -1e-9 * scale:
        raise InvalidInputError(
            "psd contraction has negative entries; the input is corrupted",
            min_entry=low,
        )
    return DenseTensor(values.real)


def contract_matrix(
    dec: Decomposition, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> MultipartiteOperator:
    """rho = sum over global assignments of the tensor product of local matrices."""
    if dec.variant is not Variant.SEPARABLE:
        raise InvalidInputError("contract_matrix needs a separable decomposition")
    _check_cap(dec, tolerances)
    base = len(dec.omega.facet_copies)
    terms, rows, cols = [], [], []
    for vertex in range(1, dec.n + 1):
        r = oe.get_symbol(base + 2 * vertex)
        c = oe.get_symbol(base + 2 * vertex + 1)
        rows.append(r)
        cols.append(c)
        terms.append(_bond_symbols(dec, vertex) + r + c)
    expr = ",".join(terms) + "->" + "".join(rows) + "".join(cols)
    return MultipartiteOperator(oe.contract(expr, *dec.locals))


def contract_factor(
    dec: Decomposition, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> np.ndarray:
    """The factor L of a purification, shape dims + ancillas."""
    if dec.variant is not Variant.PURIFICATION:
        raise InvalidInputError("contract_factor needs a purification")
    _check_cap(dec, tolerances)
    base = len(dec.omega.facet_copies)
    terms, rows, cols = [], [], []
    for vertex in range(1, dec.n + 1):
        r = oe.get_symbol(base + 2 * vertex)
        c = oe.get_symbol(base + 2 * vertex + 1)
        rows.append(r)
        cols.append(c)
        terms.append(_bond_symbols(dec, vertex) + r + c)
    expr = ",".join(terms) + "->" + "".join(rows) + "".join(cols)
    return oe.contract(expr, *dec.locals)


def contract_purification(
    dec: Decomposition, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> MultipartiteOperator:
    """rho = L L^dagger for the contracted factor L."""
    factor = contract_factor(dec, tolerances)
    dims = dec.dims
    size = math.prod(dims)
    l_mat = factor.reshape(size, -1)
    rho = l_mat @ l_mat.conj().T
    low = min_eigenvalue(rho)
    if low < -tolerances.psd * max(1.0, float(np.linalg.norm(rho))):
        raise ConsistencyError("L L^dagger is not positive semidefinite", min_eig=low)
    return MultipartiteOperator.from_matrix(rho, dims)


def contract(
    dec: Decomposition, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> DenseTensor | MultipartiteOperator:
    if dec.variant.is_vector:
        return contract_vector(dec, tolerances)
    if dec.variant is Variant.PSD:
        return contract_psd(dec, tolerances)
    if dec.variant is Variant.SEPARABLE:
        return contract_matrix(dec, tolerances)
    return contract_purification(dec, tolerances)


def contract_exhaustive(
    dec: Decomposition, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> np.ndarray:
    """
    Reference contraction by mixed-radix enumeration of all assignments.

    Vector variants return the tensor, psd the (complex) tensor, separable
    the operator array, purification the factor L.
    """
    _check_cap(dec, tolerances)
    if dec.variant is Variant.PSD and math.prod(dec.bonds) ** 2 > 1 << tolerances.enumeration_bits:
        raise ResourceLimitError(
            "ket and bra assignments exceed the enumeration cap",
            assignments=math.prod(dec.bonds) ** 2,
        )
    at = [dec.omega.copy_indices_at(v) for v in range(1, dec.n + 1)]
    assignments = list(itertools.product(*(range(b) for b in dec.bonds)))

    def factor(vertex: int, alpha: tuple[int, ...]) -> np.ndarray:
        return dec.local(vertex)[tuple(alpha[c] for c in at[vertex - 1])]

    if dec.variant is Variant.PSD:
        total = np.zeros(dec.dims, dtype=np.complex128)
        for alpha in assignments:
            for alpha_bar in assignments:
                term = np.ones((), dtype=np.complex128)
                for vertex in range(1, dec.n + 1):
                    local = factor(vertex, alpha)
                    local = local[tuple(alpha_bar[c] for c in at[vertex - 1])]
                    term = np.multiply.outer(term, local)
                total += term
        return total

    total = None
    for alpha in assignments:
        parts = [factor(v, alpha) for v in range(1, dec.n + 1)]
        if dec.variant.tail == 1:
            term = np.ones((), dtype=np.complex128)
            for part in parts:
                term = np.multiply.outer(term, part)
        else:
            term = parts[0]
            for part in parts[1:]:
                term = np.kron(term, part)
            cols = tuple(p.shape[1] for p in parts)
            term = term.reshape(dec.dims + cols)
        total = term if total is None else total + term
    return total


def structure_tensor(
    omega: WeightedSimplicialComplex, r: int | Sequence[int]
) -> DenseTensor:
    """
    The unnormalized structure tensor |Omega_r>: the sum over global
    assignments of the basis products |alpha restricted to i>.

    Site i has dimension equal to the product of the bonds at i.
    """
    bonds = (
        (r,) * len(omega.facet_copies) if isinstance(r, int) else tuple(r)
    )
    if any(b < 1 for b in bonds):
        raise InvalidInputError("bond dimensions must be positive", bonds=list(bonds))
    locals_ = []
    for vertex in range(1, omega.n + 1):
        shape = tuple(bonds[c] for c in omega.copy_indices_at(vertex))
        size = math.prod(shape)
        locals_.append(np.eye(size).reshape(shape + (size,)))
    return contract_vector(build(Variant.UNCONSTRAINED, omega, locals_))


def apply_locals(
    dec: Decomposition, tol: float = 1e-10
) -> tuple[list[np.ndarray], float]:
    """
    The maps W_i = sum_beta |v_beta><beta| and the relative deviation of
    (W_1 x ... x W_n)|Omega_r> from the direct contraction.
    """
    if not dec.variant.is_vector:
        raise InvalidInputError("apply_locals needs a vector variant")
    maps = [dec.vectors(v).T for v in range(1, dec.n + 1)]
    omega_r = structure_tensor(dec.omega, dec.bonds)
    n = dec.n
    out_syms = "".join(oe.get_symbol(k) for k in range(n))
    in_syms = "".join(oe.get_symbol(n + k) for k in range(n))
    expr = in_syms + "," + ",".join(o + i for o, i in zip(out_syms, in_syms)) + "->" + out_syms
    rebuilt = oe.contract(expr, omega_r.data, *maps)
    direct = contract_vector(dec).data
    scale = max(frobenius_norm(direct), 1e-300)
    deviation = frobenius_norm(rebuilt - direct) / scale
    if deviation > tol:
        raise ConsistencyError(
            "local maps applied to the structure tensor disagree with the contraction",
            deviation=deviation,
        )
    return maps, deviation


def psd_to_unconstrained(dec: Decomposition) -> Decomposition:
    """
    Decomposition of bond r^2 with <j|v_beta> = (E_j)_{ket(beta), bra(beta)}.

    The pair (a, a') on a facet copy of bond b becomes the index a * b + a'.
    """
    if dec.variant is not Variant.PSD:
        raise InvalidInputError("psd_to_unconstrained needs a psd decomposition")

    def merge(vertex: int, local: np.ndarray) -> np.ndarray:
        shape = dec.bond_shape(vertex)
        m = len(shape)
        axes = list(itertools.chain.from_iterable((k, m + k) for k in range(m)))
        merged = np.transpose(local, axes + [2 * m])
        return merged.reshape(tuple(b * b for b in shape) + (local.shape[-1],))

    reps = {v: merge(v, dec.local(v)) for v in orbit_representatives(dec.action)}
    return from_orbits(Variant.UNCONSTRAINED, dec.omega, dec.action, reps)


def nonnegative_to_separable(dec: Decomposition) -> Decomposition:
    """Separable decomposition of diag_embed(T) with A_beta = diag(v_beta)."""
    if dec.variant is not Variant.NONNEGATIVE:
        raise InvalidInputError("nonnegative_to_separable needs a nonnegative decomposition")
    reps = {}
    for v in orbit_representatives(dec.action):
        local = dec.local(v)
        reps[v] = local[..., :, None] * np.eye(local.shape[-1])
    return from_orbits(Variant.SEPARABLE, dec.omega, dec.action, reps)


def psd_to_purification(dec: Decomposition) -> Decomposition:
    """
    Purification of diag_embed(T) from a psd decomposition of T.

    With E_j = X_j X_j^dagger, the local factor is
    L_beta[j, (j', k)] = delta_{j j'} X_j[beta, k], so L L^dagger is diagonal
    with diagonal T.
    """
    if dec.variant is not Variant.PSD:
        raise InvalidInputError("psd_to_purification needs a psd decomposition")
    reps = {}
    for v in orbit_representatives(dec.action):
        mats = dec.psd_matrices(v)
        d, size, _ = mats.shape
        factor = np.zeros((size, d, d, size), dtype=np.complex128)
        for j, e in enumerate(mats):
            lam, vecs = np.linalg.eigh((e + e.conj().T) / 2)
            factor[:, j, j, :] = vecs * np.sqrt(np.clip(lam, 0.0, None))
        reps[v] = factor.reshape(dec.bond_shape(v) + (d, d * size))
    out = from_orbits(Variant.PURIFICATION, dec.omega, dec.action, reps)
    require_valid(out)
    return out
