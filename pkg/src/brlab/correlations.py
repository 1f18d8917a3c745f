"""
Correspondences between decompositions and correlation models.

Nonnegative decompositions on the simplex are hidden-variable models, psd
decompositions are quantum states with local POVMs, and purifications are
quantum states with local channels. Measurements and channels are stored once
per vertex orbit, so G-invariance of a model holds by construction; the
resource state is an unconstrained decomposition on the same complex and
action.
"""

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
import opt_einsum as oe

from .config import DEFAULT_TOLERANCES, Tolerances
from .decomp import (
    Decomposition,
    Variant,
    build,
    contract,
    contract_psd,
    contract_vector,
    from_orbits,
    require_valid,
    transport,
)
from .errors import ConstructionError, InvalidInputError, SymmetryError
from .families import w_eps_psd, w_state
from .ranks import flattening_lower_bound, lookup_reference
from .schemas import (
    HiddenVariableModelData,
    NonclosureWitness,
    QuantumModelData,
    ValidationReport,
)
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
    GroupAction,
    WeightedSimplicialComplex,
    is_external,
    is_simplex,
    make_simplex,
    orbit_representatives,
    symmetric_action,
)

logger = logging.getLogger(__name__)

NEGATIVE_ENTRY_TOL = 1e-12
HVM_TOL = 1e-12
STATE_NORM_TOL = 1e-9
MODEL_MATCH_TOL = 1e-9
CHANNEL_MATCH_TOL = 1e-8


def check_distribution(
    t: DenseTensor,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    auto_renormalize: bool = False,
) -> DenseTensor:
    """Return ``t`` as a real distribution or raise InvalidInputError."""
    imag = float(np.max(np.abs(t.data.imag), initial=0.0))
    if imag > tolerances.distribution:
        raise InvalidInputError("distribution has complex entries", max_imag=imag)
    values = t.data.real
    low = float(np.min(values, initial=0.0))
    if low < -NEGATIVE_ENTRY_TOL:
        raise InvalidInputError("distribution has negative entries", min_entry=low)
    total = float(values.sum())
    if abs(total - 1.0) > tolerances.distribution:
        if not auto_renormalize or total <= 0:
            raise InvalidInputError(
                "entries do not sum to 1", total=total, deviation=abs(total - 1.0)
            )
        logger.warning("renormalizing a distribution with total %.6g", total)
        values = values / total
    return DenseTensor(values)


def _total(dec: Decomposition, tolerances: Tolerances) -> float:
    value = contract(dec, tolerances)
    if isinstance(value, MultipartiteOperator):
        return float(value.trace().real)
    return float(value.data.real.sum())


def normalize_decomposition(
    dec: Decomposition, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> Decomposition:
    """
    Rescale every local equally so the contraction sums to 1 (tensors) or
    has trace 1 (operators). Orbit sharing is kept.
    """
    total = _total(dec, tolerances)
    if total <= 0:
        raise InvalidInputError("cannot normalize a contraction with total <= 0", total=total)
    power = 1.0 / (2 * dec.n) if dec.variant is Variant.PURIFICATION else 1.0 / dec.n
    factor = total ** (-power)
    reps = {v: dec.local(v) * factor for v in orbit_representatives(dec.action)}
    return from_orbits(dec.variant, dec.omega, dec.action, reps)


def _prepare(
    dec: Decomposition, tolerances: Tolerances, auto_renormalize: bool
) -> Decomposition:
    total = _total(dec, tolerances)
    if abs(total - 1.0) <= tolerances.distribution:
        return dec
    if not auto_renormalize:
        raise InvalidInputError(
            "decomposition is not normalized", total=total, deviation=abs(total - 1.0)
        )
    logger.warning("renormalizing a decomposition with total %.6g", total)
    return normalize_decomposition(dec, tolerances)


@dataclass(frozen=True, eq=False)
class HiddenVariableModel:
    """
    A hidden variable with ``prior`` P(L = a) and per-site conditionals; column
    a of ``conditionals[i]`` is the distribution of X_{i+1} given L = a.
    """

    prior: np.ndarray
    conditionals: tuple[np.ndarray, ...]

    def __post_init__(self):
        prior = np.asarray(self.prior, dtype=np.float64)
        conditionals = tuple(np.asarray(c, dtype=np.float64) for c in self.conditionals)
        if prior.ndim != 1 or any(c.ndim != 2 or c.shape[1] != prior.size for c in conditionals):
            raise InvalidInputError(
                "conditionals must have one column per hidden value",
                r=prior.size,
                shapes=[list(c.shape) for c in conditionals],
            )
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "conditionals", conditionals)

    @property
    def r(self) -> int:
        return self.prior.size

    @property
    def n(self) -> int:
        return len(self.conditionals)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(c.shape[0] for c in self.conditionals)

    @property
    def is_symmetric(self) -> bool:
        first = self.conditionals[0]
        return all(c.shape == first.shape and np.array_equal(c, first) for c in self.conditionals)

    def to_data(self) -> HiddenVariableModelData:
        return HiddenVariableModelData(
            prior=self.prior.tolist(),
            conditionals=[array_to_data(c) for c in self.conditionals],
        )

    @classmethod
    def from_data(cls, data: HiddenVariableModelData) -> "HiddenVariableModel":
        return cls(
            np.asarray(data.prior),
            tuple(array_from_data(c).real for c in data.conditionals),
        )


def validate_hvm(
    model: HiddenVariableModel, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> ValidationReport:
    report = ValidationReport(subject="hidden-variable model")
    vectors = [("prior", model.prior[:, None], None)]
    vectors += [(f"conditionals at site {i}", c, i) for i, c in enumerate(model.conditionals, 1)]
    for label, columns, vertex in vectors:
        low = float(np.min(columns, initial=0.0))
        if low < -NEGATIVE_ENTRY_TOL:
            report.add("probability", f"{label} has a negative entry", vertex=vertex, value=low)
        deviation = float(np.max(np.abs(columns.sum(axis=0) - 1.0), initial=0.0))
        if deviation > tolerances.distribution:
            report.add("probability", f"{label} do not sum to 1", vertex=vertex, value=deviation)
    return report


def eval_hvm(model: HiddenVariableModel) -> DenseTensor:
    """P(j_1..j_n) = sum_a prior(a) prod_i P(X_i = j_i | a)."""
    n = model.n
    rank = oe.get_symbol(n)
    expr = rank + "," + ",".join(oe.get_symbol(i) + rank for i in range(n))
    expr += "->" + "".join(oe.get_symbol(i) for i in range(n))
    return DenseTensor(oe.contract(expr, model.prior, *model.conditionals))


def nn_to_hvm(
    dec: Decomposition,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    auto_renormalize: bool = False,
) -> HiddenVariableModel:
    """
    Hidden-variable model of a nonnegative decomposition on the simplex.

    Conditionals are the local vectors normalized per hidden value; the prior
    is the product of the per-site masses. Hidden values with an all-zero
    local vector contribute nothing and are dropped.
    """
    if dec.variant is not Variant.NONNEGATIVE:
        raise InvalidInputError("nn_to_hvm needs a nonnegative decomposition")
    if not is_simplex(dec.omega) or len(dec.omega.facet_copies) != 1:
        raise InvalidInputError("hidden-variable models need the simplex with one facet copy")
    require_valid(dec, tolerances)
    dec = _prepare(dec, tolerances, auto_renormalize)
    target = check_distribution(contract_vector(dec, tolerances), tolerances)
    vectors = [dec.vectors(v).real for v in range(1, dec.n + 1)]
    masses = np.stack([v.sum(axis=1) for v in vectors])
    keep = np.all(masses > 0, axis=0)
    if not keep.all():
        logger.warning("dropping %d hidden values with zero local vectors", int((~keep).sum()))
    if not keep.any():
        raise InvalidInputError("every hidden value has a zero local vector")
    prior = np.prod(masses[:, keep], axis=0)
    conditionals = tuple((v[keep] / m[keep, None]).T for v, m in zip(vectors, masses))
    model = HiddenVariableModel(prior, conditionals)
    deviation = float(np.max(np.abs(eval_hvm(model).data.real - target.data.real)))
    if deviation > HVM_TOL:
        raise ConstructionError(
            "hidden-variable model does not reproduce the distribution", deviation=deviation
        )
    return model


def hvm_to_nn(model: HiddenVariableModel) -> Decomposition:
    """
    Nonnegative simplex decomposition of bond r.

    A symmetric model (identical conditionals) gives the symmetric
    decomposition <j|v_a> = P(j|a) prior(a)^{1/n}; otherwise the prior is
    carried by site 1.
    """
    omega = make_simplex(model.n)
    if model.is_symmetric and model.n > 1:
        local = model.conditionals[0].T * model.prior[:, None] ** (1.0 / model.n)
        return from_orbits(Variant.NONNEGATIVE, omega, symmetric_action(omega), {1: local})
    locals_ = [c.T for c in model.conditionals]
    locals_[0] = locals_[0] * model.prior[:, None]
    return build(Variant.NONNEGATIVE, omega, locals_)


@dataclass(frozen=True, eq=False)
class Povm:
    """Measurement with ``elements[j]`` the operator of outcome j."""

    elements: np.ndarray

    def __post_init__(self):
        elements = np.asarray(self.elements, dtype=np.complex128)
        if elements.ndim != 3 or elements.shape[1] != elements.shape[2]:
            raise InvalidInputError("POVM elements must be square matrices")
        object.__setattr__(self, "elements", elements)

    @property
    def outcomes(self) -> int:
        return self.elements.shape[0]

    @property
    def dim(self) -> int:
        return self.elements.shape[1]


@dataclass(frozen=True, eq=False)
class KrausChannel:
    """Channel rho -> sum_k A_k rho A_k^dagger with ``kraus`` of shape (K, out, in)."""

    kraus: np.ndarray

    def __post_init__(self):
        kraus = np.asarray(self.kraus, dtype=np.complex128)
        if kraus.ndim != 3 or kraus.shape[0] == 0:
            raise InvalidInputError("Kraus operators must be a nonempty stack of matrices")
        object.__setattr__(self, "kraus", kraus)

    @property
    def dim_out(self) -> int:
        return self.kraus.shape[1]

    @property
    def dim_in(self) -> int:
        return self.kraus.shape[2]


def validate_povm(
    povm: Povm, tolerances: Tolerances = DEFAULT_TOLERANCES, vertex: int | None = None
) -> ValidationReport:
    report = ValidationReport(subject="POVM")
    for j, element in enumerate(povm.elements):
        if not is_hermitian(element, tolerances.hermitian):
            report.add("psd", f"element {j} is not Hermitian", vertex=vertex)
            continue
        low = min_eigenvalue(element)
        if low < -tolerances.psd:
            report.add("psd", f"element {j} has a negative eigenvalue", vertex=vertex, value=low)
    deviation = float(
        np.max(np.abs(povm.elements.sum(axis=0) - np.eye(povm.dim)), initial=0.0)
    )
    if deviation > tolerances.distribution:
        report.add("completeness", "elements do not sum to the identity", vertex=vertex, value=deviation)
    return report


def choi_matrix(ch: KrausChannel) -> np.ndarray:
    """(id x E)(|Phi><Phi|) for the unnormalized |Phi> = sum_i |ii>."""
    vecs = np.transpose(ch.kraus, (0, 2, 1)).reshape(ch.kraus.shape[0], -1)
    return vecs.T @ vecs.conj()


def choi_of_map(fn: Callable[[np.ndarray], np.ndarray], dim_in: int) -> np.ndarray:
    """Choi matrix sum_ij |i><j| x E(|i><j|) of an arbitrary linear map."""
    blocks = []
    for i in range(dim_in):
        row = []
        for j in range(dim_in):
            unit = np.zeros((dim_in, dim_in), dtype=np.complex128)
            unit[i, j] = 1.0
            row.append(np.asarray(fn(unit), dtype=np.complex128))
        blocks.append(row)
    return np.block(blocks)


def check_choi(
    choi: np.ndarray,
    dim_in: int,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    vertex: int | None = None,
) -> ValidationReport:
    """Complete positivity and trace preservation read off a Choi matrix."""
    report = ValidationReport(subject="channel")
    dim_out = choi.shape[0] // dim_in
    low = min_eigenvalue(choi)
    if not is_hermitian(choi, tolerances.hermitian) or low < -tolerances.psd:
        report.add("cptp", "Choi matrix is not positive semidefinite", vertex=vertex, value=low)
    partial = np.trace(choi.reshape(dim_in, dim_out, dim_in, dim_out), axis1=1, axis2=3)
    deviation = float(np.max(np.abs(partial - np.eye(dim_in)), initial=0.0))
    if deviation > tolerances.distribution:
        report.add("cptp", "channel does not preserve the trace", vertex=vertex, value=deviation)
    return report


def validate_channel(
    ch: KrausChannel, tolerances: Tolerances = DEFAULT_TOLERANCES, vertex: int | None = None
) -> ValidationReport:
    report = check_choi(choi_matrix(ch), ch.dim_in, tolerances, vertex)
    gram = np.einsum("koi,koj->ij", ch.kraus.conj(), ch.kraus)
    deviation = float(np.max(np.abs(gram - np.eye(ch.dim_in)), initial=0.0))
    if deviation > tolerances.distribution and not report.violations:
        report.add("cptp", "sum of A_k^dagger A_k is not the identity", vertex=vertex, value=deviation)
    return report


def is_cptp(ch: KrausChannel, tolerances: Tolerances = DEFAULT_TOLERANCES) -> bool:
    return validate_channel(ch, tolerances).valid


def apply_channel(ch: KrausChannel, rho: np.ndarray) -> np.ndarray:
    return np.einsum("koi,ij,kpj->op", ch.kraus, rho, ch.kraus.conj())


def povm_to_channel(
    povm: Povm, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> KrausChannel:
    """
    The channel rho -> sum_j tr(A_j rho) |j><j| with Kraus operators
    |j><phi_{j,m}| from spectral factorizations A_j = sum_m |phi><phi|.
    """
    kraus = []
    for j, element in enumerate(povm.elements):
        lam, vecs = np.linalg.eigh((element + element.conj().T) / 2)
        top = float(lam[-1]) if lam.size else 0.0
        if top <= 0:
            continue
        for value, vec in zip(lam, vecs.T):
            if value > tolerances.kraus * top:
                op = np.zeros((povm.outcomes, povm.dim), dtype=np.complex128)
                op[j] = math.sqrt(value) * vec.conj()
                kraus.append(op)
    channel = KrausChannel(np.stack(kraus))
    report = validate_channel(channel, tolerances)
    if not report.valid:
        raise ConstructionError(
            "POVM does not yield a channel",
            violations=[v.model_dump() for v in report.violations],
        )
    return channel


def _require_external(action: GroupAction) -> None:
    if not is_external(action):
        raise SymmetryError("the group action is not external", action=repr(action))


def g_symmetric_eigendecomposition(
    family: Sequence[np.ndarray],
    omega: WeightedSimplicialComplex,
    action: GroupAction,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """
    Eigendecompositions of a G-symmetric family of Hermitian matrices.

    ``family[i - 1]`` is the matrix at vertex i with axes bonds + bonds. The
    decomposition is computed at orbit representatives and transported by
    relabeling the bond indices, so eigenvalues agree along orbits. Returns
    (eigenvalues ascending, eigenvectors as columns) per vertex.
    """
    _require_external(action)
    if len(family) != omega.n:
        raise InvalidInputError("one matrix per vertex is required")
    arrays = [np.asarray(k, dtype=np.complex128)[..., None] for k in family]
    for element in zip(action.generators, action.facet_maps):
        for vertex in range(1, omega.n + 1):
            target, moved = transport(Variant.PSD, omega, arrays[vertex - 1], vertex, element)
            other = arrays[target - 1]
            deviation = (
                math.inf if moved.shape != other.shape
                else float(np.max(np.abs(moved - other), initial=0.0))
            )
            if deviation > tolerances.psd:
                raise SymmetryError(
                    "matrix family is not G-symmetric", vertex=vertex, deviation=deviation
                )
    out: list[tuple[np.ndarray, np.ndarray] | None] = [None] * omega.n
    spectra = {}
    for rep in orbit_representatives(action):
        shape = arrays[rep - 1].shape[:-1]
        bonds = shape[: len(shape) // 2]
        size = math.prod(bonds)
        matrix = arrays[rep - 1].reshape(size, size)
        if not is_hermitian(matrix, tolerances.hermitian):
            raise InvalidInputError("matrix is not Hermitian", vertex=rep)
        lam, vecs = np.linalg.eigh((matrix + matrix.conj().T) / 2)
        spectra[rep] = (lam, vecs.reshape(bonds + (size,)))
    for vertex, (rep, element) in action.transport_paths().items():
        lam, vecs = spectra[rep]
        _, moved = transport(Variant.UNCONSTRAINED, omega, vecs, rep, element)
        out[vertex - 1] = (lam, moved.reshape(-1, lam.size))
    return out


def _split(lam: np.ndarray, vecs: np.ndarray, threshold: float, vertex: int):
    """T = sum lam^{-1/2} |w><l| and W = sum lam^{1/2} |l><w| on the positive part."""
    top = float(lam[-1]) if lam.size else 0.0
    keep = lam > threshold * top if top > 0 else np.zeros(lam.size, dtype=bool)
    if not keep.any():
        raise ConstructionError("local operator sum vanishes", vertex=vertex)
    w, values = vecs[:, keep], lam[keep]
    return w / np.sqrt(values), (w * np.sqrt(values)).conj().T


@dataclass(frozen=True, eq=False)
class QuantumModel:
    """
    A resource state (unconstrained decomposition) with a POVM or a channel
    per vertex orbit, keyed by orbit representative.
    """

    flavor: Literal["povm", "channel"]
    state: Decomposition
    local_ops: dict[int, Povm | KrausChannel]

    def __post_init__(self):
        if self.state.variant is not Variant.UNCONSTRAINED:
            raise InvalidInputError("the resource state must be an unconstrained decomposition")
        reps = orbit_representatives(self.state.action)
        if sorted(self.local_ops) != reps:
            raise InvalidInputError(
                "one local operation per orbit representative is required",
                expected=reps,
                given=sorted(self.local_ops),
            )
        kind = Povm if self.flavor == "povm" else KrausChannel
        if not all(isinstance(op, kind) for op in self.local_ops.values()):
            raise InvalidInputError(f"{self.flavor} models need {kind.__name__} operations")

    @property
    def n(self) -> int:
        return self.state.n

    @property
    def bond(self) -> int:
        return self.state.bond

    def at(self, vertex: int) -> Povm | KrausChannel:
        rep, _ = self.state.action.transport_paths()[vertex]
        return self.local_ops[rep]

    def to_data(self) -> QuantumModelData:
        reps = orbit_representatives(self.state.action)
        mats = [
            [array_to_data(m) for m in (op.elements if self.flavor == "povm" else op.kraus)]
            for op in (self.local_ops[r] for r in reps)
        ]
        return QuantumModelData(
            flavor=self.flavor,
            state=self.state.to_data(),
            povms=mats if self.flavor == "povm" else None,
            channels=mats if self.flavor == "channel" else None,
        )

    @classmethod
    def from_data(cls, data: QuantumModelData) -> "QuantumModel":
        state = Decomposition.from_data(data.state)
        reps = orbit_representatives(state.action)
        stacks = data.povms if data.flavor == "povm" else data.channels
        if stacks is None or len(stacks) != len(reps):
            raise InvalidInputError(
                "one list of operators per orbit representative is required", expected=len(reps)
            )
        kind = Povm if data.flavor == "povm" else KrausChannel
        ops = {r: kind(np.stack([array_from_data(m) for m in s])) for r, s in zip(reps, stacks)}
        return cls(data.flavor, state, ops)


def validate_model(
    model: QuantumModel, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> ValidationReport:
    """Dimensions, measurement or channel validity, and the state norm."""
    report = ValidationReport(subject=f"{model.flavor} model")
    dims = model.state.dims
    for rep, op in model.local_ops.items():
        dim_in = op.dim if isinstance(op, Povm) else op.dim_in
        if dim_in != dims[rep - 1]:
            report.add(
                "dimension",
                f"operation acts on dimension {dim_in}, the state has {dims[rep - 1]}",
                vertex=rep,
            )
            continue
        sub = validate_povm(op, tolerances, rep) if isinstance(op, Povm) else validate_channel(op, tolerances, rep)
        report.violations.extend(sub.violations)
    norm = frobenius_norm(contract_vector(model.state, tolerances)) ** 2
    if abs(norm - 1.0) > STATE_NORM_TOL:
        report.add("normalization", "resource state does not have norm 1", value=norm)
    return report


def _require_model(model: QuantumModel, tolerances: Tolerances) -> None:
    report = validate_model(model, tolerances)
    if not report.valid:
        raise InvalidInputError(
            report.violations[0].message,
            violations=[v.model_dump() for v in report.violations],
        )


def _resource_maps(model: QuantumModel) -> dict[int, np.ndarray]:
    """X^[i] (m_i x R_i) at every orbit representative."""
    return {r: model.state.vectors(r).T for r in model.local_ops}


def eval_quantum_model(
    model: QuantumModel, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> DenseTensor:
    """P(j_1..j_n) = <psi| A_j1 x ... x A_jn |psi>."""
    if model.flavor != "povm":
        raise InvalidInputError("eval_quantum_model needs a POVM model")
    psi = contract_vector(model.state, tolerances).data
    n = model.n
    bra = "".join(oe.get_symbol(i) for i in range(n))
    ket = "".join(oe.get_symbol(n + i) for i in range(n))
    out = "".join(oe.get_symbol(2 * n + i) for i in range(n))
    terms = [bra, ket] + [out[i] + bra[i] + ket[i] for i in range(n)]
    ops = [model.at(v).elements for v in range(1, n + 1)]
    values = oe.contract(",".join(terms) + "->" + out, psi.conj(), psi, *ops)
    return DenseTensor(values.real)


def eval_channel_model(
    model: QuantumModel, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> MultipartiteOperator:
    """(E_1 x ... x E_n)(|psi><psi|)."""
    if model.flavor != "channel":
        raise InvalidInputError("eval_channel_model needs a channel model")
    psi = contract_vector(model.state, tolerances).data
    n = model.n
    state = "".join(oe.get_symbol(i) for i in range(n))
    rows = "".join(oe.get_symbol(n + i) for i in range(n))
    kraus = "".join(oe.get_symbol(2 * n + i) for i in range(n))
    ops = [model.at(v).kraus for v in range(1, n + 1)]
    terms = [state] + [kraus[i] + rows[i] + state[i] for i in range(n)]
    phi = oe.contract(",".join(terms) + "->" + rows + kraus, psi, *ops)
    dims = phi.shape[:n]
    flat = phi.reshape(math.prod(dims), -1)
    return MultipartiteOperator.from_matrix(flat @ flat.conj().T, dims)


def _psd_layout(mats: np.ndarray, bonds: tuple[int, ...]) -> np.ndarray:
    return np.moveaxis(mats, 0, -1).reshape(bonds + bonds + (mats.shape[0],))


def _state_local(w_map: np.ndarray, bonds: tuple[int, ...]) -> np.ndarray:
    return w_map.T.reshape(bonds + (w_map.shape[0],))


def psd_to_quantum_model(
    dec: Decomposition,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    auto_renormalize: bool = False,
) -> QuantumModel:
    """
    State and G-invariant POVMs reproducing the distribution of a psd
    decomposition, with the same bond.
    """
    if dec.variant is not Variant.PSD:
        raise InvalidInputError("psd_to_quantum_model needs a psd decomposition")
    _require_external(dec.action)
    require_valid(dec, tolerances)
    dec = _prepare(dec, tolerances, auto_renormalize)
    target = check_distribution(contract_psd(dec, tolerances), tolerances)
    sums = [
        _psd_layout(dec.psd_matrices(v).sum(axis=0)[None], dec.bond_shape(v))[..., 0]
        for v in range(1, dec.n + 1)
    ]
    spectra = g_symmetric_eigendecomposition(sums, dec.omega, dec.action, tolerances)
    state_reps, povms = {}, {}
    for rep in orbit_representatives(dec.action):
        lam, vecs = spectra[rep - 1]
        t_map, w_map = _split(lam, vecs, tolerances.eigenvalue, rep)
        elements = np.einsum("am,jab,bn->jmn", t_map.conj(), dec.psd_matrices(rep), t_map)
        elements = (elements + elements.conj().transpose(0, 2, 1)) / 2
        povm = Povm(elements)
        report = validate_povm(povm, tolerances, rep)
        if not report.valid:
            raise ConstructionError(
                "constructed POVM is not valid",
                vertex=rep,
                violations=[v.model_dump() for v in report.violations],
            )
        povms[rep] = povm
        state_reps[rep] = _state_local(w_map, dec.bond_shape(rep))
    state = from_orbits(Variant.UNCONSTRAINED, dec.omega, dec.action, state_reps)
    model = QuantumModel("povm", state, povms)
    norm = frobenius_norm(contract_vector(state, tolerances)) ** 2
    if abs(norm - 1.0) > STATE_NORM_TOL:
        raise ConstructionError("resource state is not normalized", norm=norm)
    deviation = float(np.max(np.abs(eval_quantum_model(model, tolerances).data - target.data)))
    if deviation > MODEL_MATCH_TOL:
        raise ConstructionError("model does not reproduce the distribution", deviation=deviation)
    logger.debug("quantum model with bond %d and local dims %s", state.bond, state.dims)
    return model


def quantum_model_to_psd(
    model: QuantumModel, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> Decomposition:
    """B^[i]_j = X^dagger A_j X for the local maps X of the resource state."""
    if model.flavor != "povm":
        raise InvalidInputError("quantum_model_to_psd needs a POVM model")
    _require_model(model, tolerances)
    reps = {}
    for rep, x in _resource_maps(model).items():
        mats = np.einsum("ma,jmn,nb->jab", x.conj(), model.local_ops[rep].elements, x)
        reps[rep] = _psd_layout(mats, model.state.bond_shape(rep))
    return from_orbits(Variant.PSD, model.state.omega, model.state.action, reps)


def purification_to_channel_model(
    dec: Decomposition,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    auto_renormalize: bool = False,
) -> QuantumModel:
    """State and G-invariant channels producing the purified operator L L^dagger."""
    if dec.variant is not Variant.PURIFICATION:
        raise InvalidInputError("purification_to_channel_model needs a purification")
    _require_external(dec.action)
    dec = _prepare(dec, tolerances, auto_renormalize)
    rho = contract(dec, tolerances)

    def kraus_of(vertex: int) -> np.ndarray:
        # (B_k)_{l, beta} = (L_beta)_{l, k}
        return np.transpose(dec.local_matrices(vertex), (2, 1, 0))

    sums = []
    for v in range(1, dec.n + 1):
        b = kraus_of(v)
        s = np.einsum("klb,klc->bc", b.conj(), b)
        bonds = dec.bond_shape(v)
        sums.append(s.reshape(bonds + bonds))
    spectra = g_symmetric_eigendecomposition(sums, dec.omega, dec.action, tolerances)
    state_reps, channels = {}, {}
    for rep in orbit_representatives(dec.action):
        lam, vecs = spectra[rep - 1]
        t_map, w_map = _split(lam, vecs, tolerances.eigenvalue, rep)
        channel = KrausChannel(kraus_of(rep) @ t_map)
        report = validate_channel(channel, tolerances, rep)
        if not report.valid:
            raise ConstructionError(
                "constructed channel is not CPTP",
                vertex=rep,
                choi_min_eigenvalue=min_eigenvalue(choi_matrix(channel)),
                violations=[v.model_dump() for v in report.violations],
            )
        channels[rep] = channel
        state_reps[rep] = _state_local(w_map, dec.bond_shape(rep))
    state = from_orbits(Variant.UNCONSTRAINED, dec.omega, dec.action, state_reps)
    model = QuantumModel("channel", state, channels)
    norm = frobenius_norm(contract_vector(state, tolerances)) ** 2
    if abs(norm - 1.0) > STATE_NORM_TOL:
        raise ConstructionError("resource state is not normalized", norm=norm)
    deviation = frobenius_norm(eval_channel_model(model, tolerances).data - rho.data)
    if deviation > CHANNEL_MATCH_TOL:
        raise ConstructionError("channels do not reproduce the operator", deviation=deviation)
    return model


def channel_model_to_purification(
    model: QuantumModel, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> Decomposition:
    """L^[i]_beta = sum_k A_k |v_beta><k| for the local vectors v of the state."""
    if model.flavor != "channel":
        raise InvalidInputError("channel_model_to_purification needs a channel model")
    _require_model(model, tolerances)
    reps = {}
    for rep, x in _resource_maps(model).items():
        ax = model.local_ops[rep].kraus @ x
        reps[rep] = np.transpose(ax, (2, 1, 0)).reshape(
            model.state.bond_shape(rep) + ax.shape[1:2] + ax.shape[:1]
        )
    return from_orbits(Variant.PURIFICATION, model.state.omega, model.state.action, reps)


def nonclosure_witness(
    n: int = 5,
    eps_grid: Sequence[float] = (1e-1, 3e-2, 1e-2),
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> NonclosureWitness:
    """
    Bond-2 quantum models of the normalized psd family at every epsilon,
    against the rank of the limit W_n: since rank <= psdrank^2, a bond-2
    model of the limit would force rank(W_n) <= 4.
    """
    errors = []
    bond = 2
    for eps in eps_grid:
        dec = normalize_decomposition(w_eps_psd(n, eps), tolerances)
        model = psd_to_quantum_model(dec, tolerances)
        bond = model.bond
        target = contract_psd(dec, tolerances)
        errors.append(frobenius_norm(eval_quantum_model(model, tolerances) - target))
    reference = lookup_reference("rank", f"W{n}")
    reference_rank = int(reference) if reference is not None else n
    return NonclosureWitness(
        n=n,
        epsilons=list(eps_grid),
        model_errors=errors,
        limit_flattening_rank=flattening_lower_bound(w_state(n)),
        reference_rank=reference_rank,
        bond=bond,
        psd_rank_bound=bond * bond,
        excluded=reference_rank > bond * bond,
    )
