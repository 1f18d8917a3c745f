"""
Rank bounds and witnesses.

Flattening ranks give lower bounds; multi-start alternating least squares
gives upper-bound witnesses for rank^eps. The nonnegative and symmetric psd
oracles measure residual floors, and ``reference_ranks`` lists the values that
are known as theorems rather than measured.
"""

import json
import logging
import math
import re
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from . import __version__
from .config import DEFAULT_TOLERANCES, worker_count
from .decomp import Decomposition, Variant, build, contract
from .errors import InvalidInputError
from .families import w_eps_psd, w_eps_unconstrained, w_state
from .schemas import (
    FloorRecord,
    FloorsFile,
    RankReport,
    ReferenceValue,
    ResidualEntry,
    SearchResult,
    SeparationReport,
    SeparationRow,
)
from .tensor import DenseTensor, frobenius_norm, matrix_rank, unfold
from .wsc import make_cycle, make_simplex

logger = logging.getLogger(__name__)

DAMPING = 1e-12
STOP_RELATIVE_CHANGE = 1e-12
DEFAULT_STARTS = 20
DEFAULT_ITERS = 2000

FLOORS_PATH = Path("fixtures") / "floors.json"
FLOOR_NN_W3 = "nonnegative_W3_r2"
FLOOR_PSD_W3 = "symmetric_psd_W3_r2"
FLOOR_SLACK = 0.2
FLOOR_GUARD = 1e-4


def start_rng(seed: int, start: int) -> np.random.Generator:
    """Counter-based stream for one start; independent of thread scheduling."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, start])))


def flattening_lower_bound(
    t: DenseTensor, tol: float = DEFAULT_TOLERANCES.rank
) -> int:
    """Largest matrix rank over single-site and contiguous bipartitions."""
    n = t.n_sites
    if n == 1:
        return int(np.any(t.data != 0))
    cuts = {frozenset([i]) for i in range(1, n + 1)}
    for lo in range(1, n + 1):
        for hi in range(lo, n + 1):
            block = frozenset(range(lo, hi + 1))
            if len(block) < n:
                cuts.add(block)
    return max(matrix_rank(unfold(t, cut), tol) for cut in cuts)


@dataclass
class AlsResult:
    """Outcome of one alternating least squares fit."""

    residual: float
    iterations: int
    max_factor_norm: float
    start: int
    history: list[float] = field(default_factory=list)


def _einchars(k: int) -> str:
    return "abcdefghijklmnopqrstuvwxyz"[:k]


def _rhs(t: np.ndarray, factors: Sequence[np.ndarray], mode: int) -> np.ndarray:
    ndim = t.ndim
    rank = "z"
    idx = _einchars(ndim)
    operands, subscripts = [t], [idx]
    for p, factor in enumerate(factors):
        if p != mode:
            operands.append(factor.conj())
            subscripts.append(idx[p] + rank)
    expr = ",".join(subscripts) + "->" + idx[mode] + rank
    return np.einsum(expr, *operands)


def _gamma(factors: Sequence[np.ndarray], mode: int) -> np.ndarray:
    rank = factors[0].shape[1]
    out = np.ones((rank, rank), dtype=factors[0].dtype)
    for p, factor in enumerate(factors):
        if p != mode:
            out = out * (factor.T @ factor.conj())
    return out


def _reconstruct(factors: Sequence[np.ndarray]) -> np.ndarray:
    idx = _einchars(len(factors))
    expr = ",".join(c + "z" for c in idx) + "->" + idx
    return np.einsum(expr, *factors)


def _to_decomposition(
    factors: Sequence[np.ndarray], variant: Variant
) -> Decomposition:
    omega = make_simplex(len(factors))
    return build(variant, omega, [f.T for f in factors])


def _als_sweep(t: np.ndarray, factors: list[np.ndarray]) -> None:
    rank = factors[0].shape[1]
    for mode in range(t.ndim):
        gamma = _gamma(factors, mode) + DAMPING * np.eye(rank)
        rhs = _rhs(t, factors, mode)
        factors[mode] = np.linalg.solve(gamma.T, rhs.T).T


def _hals_sweep(t: np.ndarray, factors: list[np.ndarray]) -> None:
    rank = factors[0].shape[1]
    for mode in range(t.ndim):
        gamma = _gamma(factors, mode).real
        rhs = _rhs(t, factors, mode).real
        u = factors[mode]
        for a in range(rank):
            if gamma[a, a] <= 0:
                continue
            column = u[:, a] + (rhs[:, a] - u @ gamma[:, a]) / gamma[a, a]
            u[:, a] = np.maximum(column, 0.0)


def _fit(
    t: np.ndarray,
    factors: list[np.ndarray],
    iters: int,
    sweep,
    start: int,
) -> tuple[list[np.ndarray], AlsResult]:
    residual = frobenius_norm(_reconstruct(factors) - t)
    history = [residual]
    done = 0
    for done in range(1, iters + 1):
        sweep(t, factors)
        new = frobenius_norm(_reconstruct(factors) - t)
        history.append(new)
        change = abs(residual - new) / max(residual, 1e-300)
        residual = new
        if change < STOP_RELATIVE_CHANGE or residual == 0.0:
            break
    norm = max(float(np.linalg.norm(f)) for f in factors)
    return factors, AlsResult(residual, done, norm, start, history)


def _multi_start(t, r, starts, iters, seed, init, make_start, sweep):
    def run(start: int):
        if start == 0 and init is not None:
            factors = [np.array(f, dtype=t.dtype) for f in init]
        else:
            factors = make_start(start_rng(seed, start))
        return _fit(t, factors, iters, sweep, start)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(run, range(starts)))
    best = min(results, key=lambda item: (item[1].residual, item[1].start))
    logger.info(
        "rank %d: best residual %.3e from start %d of %d",
        r,
        best[1].residual,
        best[1].start,
        starts,
    )
    return best


def _check_init(t: np.ndarray, r: int, init) -> None:
    if init is None:
        return
    if len(init) != t.ndim or any(
        np.shape(f) != (d, r) for f, d in zip(init, t.shape)
    ):
        raise InvalidInputError(
            "initial factors must have shape (d_i, r) for every site", rank=r
        )


def als_cp(
    t: DenseTensor,
    r: int,
    starts: int = DEFAULT_STARTS,
    iters: int = DEFAULT_ITERS,
    seed: int = 0,
    init: Sequence[np.ndarray] | None = None,
) -> tuple[Decomposition, AlsResult]:
    """
    Best-of-multi-start complex ALS for a rank-r decomposition on the simplex.

    ``init`` (factor matrices of shape (d_i, r)) replaces the first random
    start.
    """
    if r < 1:
        raise InvalidInputError("rank must be positive", rank=r)
    data = np.asarray(t.data, dtype=np.complex128)
    _check_init(data, r, init)

    def make_start(rng: np.random.Generator) -> list[np.ndarray]:
        return [
            (rng.standard_normal((d, r)) + 1j * rng.standard_normal((d, r))) / math.sqrt(2)
            for d in data.shape
        ]

    factors, result = _multi_start(data, r, starts, iters, seed, init, make_start, _als_sweep)
    return _to_decomposition(factors, Variant.UNCONSTRAINED), result


def als_nonnegative(
    t: DenseTensor,
    r: int,
    starts: int = DEFAULT_STARTS,
    iters: int = DEFAULT_ITERS,
    seed: int = 0,
    init: Sequence[np.ndarray] | None = None,
) -> tuple[Decomposition, AlsResult]:
    """
    Best-of-multi-start nonnegative fit by hierarchical ALS: every column
    update is the exact nonnegative least squares minimizer, so residuals
    never increase.
    """
    if r < 1:
        raise InvalidInputError("rank must be positive", rank=r)
    if np.max(np.abs(t.data.imag), initial=0.0) > 0 or np.min(t.data.real) < 0:
        raise InvalidInputError("nonnegative fits need an entrywise nonnegative tensor")
    data = np.ascontiguousarray(t.data.real)
    _check_init(data, r, init)

    def make_start(rng: np.random.Generator) -> list[np.ndarray]:
        return [rng.uniform(0.0, 1.0, (d, r)) for d in data.shape]

    factors, result = _multi_start(
        data, r, starts, iters, seed, init, make_start, _hals_sweep
    )
    return _to_decomposition(factors, Variant.NONNEGATIVE), result


def _symmetric_psd_model(params: np.ndarray, d: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Entries sum_{ab} prod_k (A_{j_k})_{ab} for A_j = L_j L_j^dagger, 2x2."""
    p = params.reshape(d, 4)
    lower = np.zeros((d, 2, 2), dtype=np.complex128)
    lower[:, 0, 0] = p[:, 0]
    lower[:, 1, 0] = p[:, 1] + 1j * p[:, 2]
    lower[:, 1, 1] = p[:, 3]
    mats = lower @ lower.conj().transpose(0, 2, 1)
    acc = mats
    for _ in range(n - 1):
        acc = acc[..., None, :, :] * mats
    return acc.sum(axis=(-1, -2)).real, mats


def _fit_symmetric_psd2(
    t: np.ndarray, starts: int, seed: int, iters: int
) -> tuple[float, np.ndarray]:
    d, n = t.shape[0], t.ndim

    def residuals(params: np.ndarray) -> np.ndarray:
        model, _ = _symmetric_psd_model(params, d, n)
        return (model - t).ravel()

    best = (frobenius_norm(t), np.zeros((d, 2, 2)))
    for start in range(starts):
        x0 = start_rng(seed, start).standard_normal(4 * d)
        fit = optimize.least_squares(
            residuals, x0, method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=iters
        )
        value = float(np.linalg.norm(fit.fun))
        if value < best[0]:
            best = (value, _symmetric_psd_model(fit.x, d, n)[1])
    return best


def symm_psd2_residual(
    t: DenseTensor, starts: int = DEFAULT_STARTS, seed: int = 0, iters: int = DEFAULT_ITERS
) -> float:
    """
    Smallest distance found from ``t`` to a symmetric psd decomposition of
    bond 2, over Cholesky-parametrized pairs of 2x2 psd matrices.

    The zero decomposition is always a candidate, so ``t = 0`` gives 0.
    """
    data = t.data
    if any(s != 2 for s in t.shape) or t.n_sites < 2:
        raise InvalidInputError("expected a tensor of shape (2, ..., 2)", shape=list(t.shape))
    if np.max(np.abs(data.imag), initial=0.0) > 0 or np.min(data.real) < 0:
        raise InvalidInputError("symmetric psd fits need an entrywise nonnegative tensor")
    residual, _ = _fit_symmetric_psd2(np.ascontiguousarray(data.real), starts, seed, iters)
    return residual


_W_LABEL = re.compile(r"^W(\d+)$")


def reference_ranks(n: int | None = None) -> list[ReferenceValue]:
    """
    Values known from theorems. With ``n`` the W-state entries are
    instantiated for W_n; otherwise a representative row per statement is
    listed for n = 5.
    """
    n = 5 if n is None else n
    if n < 2:
        raise InvalidInputError("W_n needs n >= 2", n=n)
    label = f"W{n}"
    rows = [
        ReferenceValue(
            quantity="rank",
            tensor=label,
            relation="=",
            value=n,
            citation="rank(W_n) = n",
        ),
        ReferenceValue(
            quantity="brank",
            tensor=label,
            relation="=",
            value=2,
            citation="bsymmrank(W_n) = brank(W_n) = 2",
        ),
        ReferenceValue(
            quantity="tiosr",
            tensor=label,
            relation=">=",
            value=math.sqrt(n),
            citation="tiosr(W_n) >= sqrt(n)",
        ),
        ReferenceValue(
            quantity="rank",
            tensor="any",
            relation="<=",
            citation="rank(T) <= psdrank(T)^2",
            note="holds for every (Omega, G) and is checked through psd_to_unconstrained",
        ),
        ReferenceValue(
            quantity="tipsdosr",
            tensor=label,
            relation=">=",
            citation="tipsdosr(W_n) >= Omega(n^{1/4})",
            note="asymptotic bound with an unspecified constant; recorded only",
        ),
    ]
    if n >= 17:
        rows.append(
            ReferenceValue(
                quantity="tipsdosr",
                tensor=label,
                relation=">=",
                value=3,
                citation="tipsdosr(W_n) >= 3 for n >= 17",
            )
        )
    divisors = [p for p in range(2, n) if (n - 1) % p == 0]
    if divisors:
        rows.append(
            ReferenceValue(
                quantity="btinnosr",
                tensor=label,
                relation="<=",
                value=divisors[0],
                citation="btinnosr(W_n) <= p for p | (n - 1)",
            )
        )
    return rows


def lookup_reference(quantity: str, tensor: str) -> float | None:
    """The value recorded for ``quantity`` of a W tensor label such as 'W5'."""
    match = _W_LABEL.match(tensor)
    if not match:
        return None
    for row in reference_ranks(int(match.group(1))):
        if row.quantity == quantity and row.value is not None:
            return row.value
    return None


def rank_report(
    t: DenseTensor,
    label: str,
    max_rank: int | None = None,
    starts: int = DEFAULT_STARTS,
    iters: int = DEFAULT_ITERS,
    seed: int = 0,
) -> RankReport:
    """
    Flattening bound, multi-start residuals for ranks 1..max_rank and the
    reference values for W tensors.

    Each rank is warm-started from the previous best padded with a zero
    column, so residuals do not increase with the rank.
    """
    bound = flattening_lower_bound(t)
    max_rank = max_rank or max(bound, 2)
    report = RankReport(tensor=label, flattening_lower_bound=bound)
    nonnegative = (
        np.max(np.abs(t.data.imag), initial=0.0) == 0 and np.min(t.data.real) >= 0
    )
    previous: dict[str, list[np.ndarray] | None] = {"cp": None, "nn": None}
    for r in range(1, max_rank + 1):
        dec, result = als_cp(t, r, starts, iters, seed, init=_pad(previous["cp"]))
        previous["cp"] = [dec.local(v).T for v in range(1, dec.n + 1)]
        report.unconstrained.append(_entry(r, result))
        if nonnegative:
            dec, result = als_nonnegative(t, r, starts, iters, seed, init=_pad(previous["nn"]))
            previous["nn"] = [dec.local(v).T.real for v in range(1, dec.n + 1)]
            report.nonnegative.append(_entry(r, result))
    match = _W_LABEL.match(label)
    if match:
        report.reference = reference_ranks(int(match.group(1)))
    return report


def _pad(factors: list[np.ndarray] | None) -> list[np.ndarray] | None:
    if factors is None:
        return None
    return [np.hstack([f, np.zeros((f.shape[0], 1), dtype=f.dtype)]) for f in factors]


def _entry(r: int, result: AlsResult) -> ResidualEntry:
    return ResidualEntry(
        rank=r,
        residual=result.residual,
        iterations=result.iterations,
        max_factor_norm=result.max_factor_norm,
    )


def measure_floors(
    starts: int = 100, iters: int = DEFAULT_ITERS, seed: int = 42
) -> FloorsFile:
    """Run the residual-floor oracles for W_3 at rank 2."""
    w3 = w_state(3)
    _, nn = als_nonnegative(w3, 2, starts, iters, seed)
    psd = symm_psd2_residual(w3, starts, seed, iters)
    return FloorsFile(
        version=__version__,
        floors=[
            FloorRecord(name=FLOOR_NN_W3, value=nn.residual, starts=starts, iters=iters, seed=seed),
            FloorRecord(name=FLOOR_PSD_W3, value=psd, starts=starts, iters=iters, seed=seed),
        ],
    )


def load_floors(path: Path = FLOORS_PATH) -> FloorsFile | None:
    if not path.exists():
        return None
    return FloorsFile.model_validate(json.loads(path.read_text()))


def remeasure_floor(record: FloorRecord) -> float:
    """Rerun the oracle behind ``record`` with the settings it was measured with."""
    w3 = w_state(3)
    if record.name == FLOOR_NN_W3:
        _, result = als_nonnegative(w3, 2, record.starts, record.iters, record.seed)
        return result.residual
    if record.name == FLOOR_PSD_W3:
        return symm_psd2_residual(w3, record.starts, record.seed, record.iters)
    raise InvalidInputError("unknown floor", name=record.name)


def within_floor(record: FloorRecord, measured: float) -> bool:
    """
    Whether a fresh measurement agrees with a frozen floor: within 20% of it
    and never below 1e-4 of it.
    """
    if measured < FLOOR_GUARD * record.value:
        return False
    return abs(measured - record.value) <= FLOOR_SLACK * record.value


def separation_experiment(
    n_list: Sequence[int],
    seed: int,
    eps: float = 1e-3,
    starts: int = DEFAULT_STARTS,
    iters: int = DEFAULT_ITERS,
) -> SeparationReport:
    """
    For each n: distance of the rank-2 and psd-rank-2 families to W_n at
    ``eps``, and the nonnegative residual floors at ranks 2..n-1.

    ``persistence_epsilon`` is the rank-(n-1) nonnegative floor when it
    exceeds both witnesses: below it no nonnegative rank-(n-1) tensor lies
    in the eps-ball, while rank^eps and psdrank^eps stay at most 2.
    """
    if not n_list or any(not 3 <= n <= 7 for n in n_list):
        raise InvalidInputError("separation sizes must lie in 3..7", n_list=list(n_list))
    rows = []
    for n in n_list:
        target = w_state(n)
        plain = frobenius_norm(contract(w_eps_unconstrained(n, eps)).data - target.data)
        psd = frobenius_norm(contract(w_eps_psd(n, eps)).data - target.data)
        floors = {}
        for r in range(2, n):
            _, result = als_nonnegative(target, r, starts, iters, seed)
            floors[r] = result.residual
        top = floors[n - 1]
        persistence = top if top > max(plain, psd) else None
        rows.append(
            SeparationRow(
                n=n,
                epsilon=eps,
                unconstrained_witness=plain,
                psd_witness=psd,
                nonnegative_floors=floors,
                persistence_epsilon=persistence,
            )
        )
    return SeparationReport(seed=seed, rows=rows)


def _cycle_psd_model(params: np.ndarray, n: int, r: int, d: int) -> np.ndarray:
    omega = make_cycle(n)
    size = r * r
    per_site = d * size * size * 2
    locals_ = []
    for vertex in range(n):
        chunk = params[vertex * per_site : (vertex + 1) * per_site].reshape(2, d, size, size)
        factor = chunk[0] + 1j * chunk[1]
        mats = factor @ factor.conj().transpose(0, 2, 1)
        locals_.append(np.moveaxis(mats, 0, -1).reshape(r, r, r, r, d))
    return contract(build(Variant.PSD, omega, locals_)).data.real


def conjecture_search(
    t: DenseTensor,
    r: int,
    starts: int = 5,
    seed: int = 0,
    iters: int = 200,
    label: str = "tensor",
) -> SearchResult:
    """
    Experimental: best residual of a psd cycle decomposition of bond r found
    by local least squares. No claim is attached to the outcome.
    """
    n, d = t.n_sites, t.shape[0]
    if n < 3 or any(s != d for s in t.shape):
        raise InvalidInputError("the search needs n >= 3 sites of equal dimension")
    data = np.ascontiguousarray(t.data.real)
    size = 2 * n * d * (r * r) ** 2

    def residuals(params: np.ndarray) -> np.ndarray:
        return (_cycle_psd_model(params, n, r, d) - data).ravel()

    values = []
    for start in range(starts):
        x0 = start_rng(seed, start).standard_normal(size) / math.sqrt(r)
        fit = optimize.least_squares(residuals, x0, method="trf", max_nfev=iters)
        values.append(float(np.linalg.norm(fit.fun)))
        logger.debug("search start %d: residual %.3e", start, values[-1])
    return SearchResult(
        tensor=label,
        bond=r,
        starts=starts,
        seed=seed,
        residuals=values,
        best_residual=min(values),
    )
