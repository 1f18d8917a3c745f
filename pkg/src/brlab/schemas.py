"""
Pydantic models for brlab's file formats, reports and run ledger.

These schemas define the JSON written and read by the CLI. Numeric arrays use
the tensor format ``{"shape": [...], "re": [...], "im": [...]}`` in row-major
order; Python's float repr is shortest-round-trip, so files reload bit-exactly.
"""

from datetime import datetime
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator


class TensorData(BaseModel):
    """A dense complex array in row-major order."""

    shape: list[int]
    re: list[float]
    im: list[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_sizes(self):
        size = 1
        for extent in self.shape:
            if extent < 1:
                raise ValueError("tensor extents must be positive")
            size *= extent
        if len(self.re) != size:
            raise ValueError(f"expected {size} real parts, got {len(self.re)}")
        if self.im and len(self.im) != size:
            raise ValueError(f"expected {size} imaginary parts, got {len(self.im)}")
        return self


class WeightEntry(BaseModel):
    """Weight of one vertex subset (1-based vertices)."""

    subset: list[int]
    w: int = Field(ge=0)


class ComplexData(BaseModel):
    """
    A weighted simplicial complex.

    Omitted subsets weigh 0 and singletons default to 1. With ``closed`` set,
    omitted subsets of a listed simplex weigh 1 instead.
    """

    n: int = Field(ge=1)
    weights: list[WeightEntry] = Field(default_factory=list)
    closed: bool = False


class ActionData(BaseModel):
    """
    A group action on a complex.

    ``generators`` are 1-based image lists. ``facet_maps`` holds, per
    generator, the image position of every facet copy in canonical order
    (facet bitmask ascending, copy ordinal ascending); omitted means copy k of
    F goes to copy k of gF.
    """

    generators: list[list[int]] = Field(default_factory=list)
    facet_maps: list[list[int]] | None = None


Variant = Literal["unconstrained", "nonnegative", "psd", "separable", "purification"]


class OrbitLocal(BaseModel):
    """Local tensor stored at one orbit representative."""

    vertex: int = Field(ge=1)
    tensor: TensorData


class DecompositionData(BaseModel):
    """Serialized (Omega, G)-decomposition, stored by vertex orbit."""

    variant: Variant
    complex: ComplexData
    action: ActionData = Field(default_factory=ActionData)
    locals: list[OrbitLocal]


class Violation(BaseModel):
    """One violated invariant found by a validation routine."""

    kind: str
    message: str
    vertex: int | None = None
    value: float | None = None


class ValidationReport(BaseModel):
    """Result of a validation pass; ``valid`` iff there are no violations."""

    subject: str
    violations: list[Violation] = Field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def add(self, kind: str, message: str, **fields) -> None:
        self.violations.append(Violation(kind=kind, message=message, **fields))


class ConvergencePoint(BaseModel):
    epsilon: float
    error: float
    included_in_fit: bool
    note: str | None = None


class ConvergenceStudy(BaseModel):
    """Error of an approximating family against its target along an epsilon grid."""

    family: str
    n: int
    params: dict[str, int] = Field(default_factory=dict)
    points: list[ConvergencePoint]
    slope: float | None = None
    slope_stderr: float | None = None
    intercept: float | None = None
    coefficient: float | None = None
    fit_residual: float | None = None
    monotone: bool = True

    def summary(self) -> dict:
        return {
            "family": self.family,
            "n": self.n,
            **self.params,
            "slope": self.slope,
            "slope_stderr": self.slope_stderr,
            "coefficient": self.coefficient,
        }


class ReferenceValue(BaseModel):
    """A rank value stated as a theorem, with the statement it comes from."""

    quantity: str
    tensor: str
    relation: Literal["=", ">=", "<="]
    value: float | None = None
    citation: str
    note: str | None = None


class ResidualEntry(BaseModel):
    rank: int
    residual: float
    iterations: int
    max_factor_norm: float


class RankReport(BaseModel):
    """Rank bounds and multi-start residuals for one tensor."""

    tensor: str
    flattening_lower_bound: int
    unconstrained: list[ResidualEntry] = Field(default_factory=list)
    nonnegative: list[ResidualEntry] = Field(default_factory=list)
    reference: list[ReferenceValue] = Field(default_factory=list)


class FloorRecord(BaseModel):
    """A measured residual floor and the oracle settings that produced it."""

    name: str
    value: float
    starts: int
    iters: int
    seed: int


class FloorsFile(BaseModel):
    version: str
    floors: list[FloorRecord]

    def lookup(self, name: str) -> FloorRecord | None:
        return next((f for f in self.floors if f.name == name), None)


class SeparationRow(BaseModel):
    n: int
    epsilon: float
    unconstrained_witness: float
    psd_witness: float
    nonnegative_floors: dict[int, float]
    persistence_epsilon: float | None


class SeparationReport(BaseModel):
    seed: int
    rows: list[SeparationRow]


class SearchResult(BaseModel):
    """Outcome of the experimental psd cycle search; carries no claim."""

    tensor: str
    bond: int
    starts: int
    seed: int
    residuals: list[float]
    best_residual: float


class HiddenVariableModelData(BaseModel):
    prior: list[float]
    conditionals: list[TensorData]


class QuantumModelData(BaseModel):
    """A resource state given as a decomposition plus per-vertex measurements or channels."""

    flavor: Literal["povm", "channel"]
    state: DecompositionData
    povms: list[list[TensorData]] | None = None
    channels: list[list[TensorData]] | None = None


class NormRecord(BaseModel):
    index: int
    max_local_norm: float
    trace: float | None = None


class ClosureReport(BaseModel):
    """Bounded-norm and Cauchy-tail diagnostics for a sequence of decompositions."""

    variant: str
    tree: bool
    forced: bool = False
    norms: list[NormRecord]
    cauchy_gaps: list[float]
    bound: float | None = None
    bounded: bool
    limit_bond: int | None = None
    limit_error: float | None = None
    growth_slope: float | None = None


class NonclosureWitness(BaseModel):
    n: int
    epsilons: list[float]
    model_errors: list[float]
    limit_flattening_rank: int
    reference_rank: int
    bond: int
    psd_rank_bound: int
    excluded: bool


class ArtifactBase(BaseModel):
    path: str
    sha256: str


class Artifact(ArtifactBase):
    model_config = ConfigDict(from_attributes=True)

    id: int
    run_id: int


class RunCreate(BaseModel):
    subcommand: str
    config_hash: str
    version: str
    status: str = "ok"
    summary: str | None = None


class Run(RunCreate):
    model_config = ConfigDict(from_attributes=True)

    id: int
    created_at: datetime | None = None
    artifacts: list[Artifact] = Field(default_factory=list)
