"""
Explicit approximating families with a gap between rank and border rank,
their target tensors, and convergence studies fitting the error exponent.
"""

import itertools
import logging
import math
from collections import defaultdict
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from .config import default_eps_grid, worker_count
from .decomp import (
    Decomposition,
    Variant,
    arrange_local,
    build,
    contract,
    from_orbits,
)
from .errors import ConsistencyError, InvalidInputError, ResourceLimitError
from .schemas import ConvergencePoint, ConvergenceStudy
from .tensor import DenseTensor, frobenius_norm
from .wsc import (
    cyclic_action,
    left_copy,
    make_cycle,
    make_simplex,
    right_copy,
    symmetric_action,
)

logger = logging.getLogger(__name__)

MACHINE_EPS = float(np.finfo(np.float64).eps)
NOISE_FLOOR_FACTOR = 1e3
CANCELLATION_WARNING = 1e-8
LAURENT_ENUMERATION_CAP = 1 << 24


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise InvalidInputError("epsilon must be positive", epsilon=eps)


def _check_n(n: int, minimum: int) -> None:
    if n < minimum:
        raise InvalidInputError(f"n must be at least {minimum}", n=n)


def w_state(n: int) -> DenseTensor:
    """The n-qubit W tensor: unit entries at Hamming-weight-1 bitstrings."""
    _check_n(n, 2)
    out = np.zeros((2,) * n)
    for k in range(n):
        index = [0] * n
        index[k] = 1
        out[tuple(index)] = 1.0
    return DenseTensor(out)


def w_eps_error(n: int, eps: float) -> float:
    """Closed-form distance of the rank-2 W family to W_n."""
    return math.sqrt(
        sum(math.comb(n, k) * eps ** (2 * (k - 1)) for k in range(2, n + 1))
    )


def w_eps_unconstrained(n: int, eps: float) -> Decomposition:
    """
    Symmetric rank-2 decomposition of (1/eps)(|0>+eps|1>)^n - (1/eps)|0...0>.

    Each of the two terms is split evenly over the n sites; the minus sign
    becomes the phase e^{i pi/n} of the second local vector.
    """
    _check_n(n, 3)
    _check_eps(eps)
    if eps < CANCELLATION_WARNING:
        logger.warning(
            "epsilon %.3g loses precision to cancellation of two O(1/eps) terms", eps
        )
    scale = eps ** (-1.0 / n)
    local = np.array(
        [[scale, scale * eps], [scale * np.exp(1j * np.pi / n), 0.0]],
        dtype=np.complex128,
    )
    omega = make_simplex(n)
    return from_orbits(Variant.UNCONSTRAINED, omega, symmetric_action(omega), {1: local})


def psd_constant(n: int) -> float:
    """The constant C making the weight-1 entries of the psd family equal 1."""
    return (2.0 * (1.0 - math.cos(math.pi / n))) ** (-1.0 / (n - 1))


def a_matrices(n: int, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """The rank-one psd matrices A_0 and A_1 of the symmetric psd family."""
    _check_n(n, 3)
    _check_eps(eps)
    phase = np.exp(1j * np.pi / n)
    a0 = psd_constant(n) * eps ** (-1.0 / (n - 1)) * np.array(
        [[1.0, phase], [np.conj(phase), 1.0]]
    )
    a1 = eps * np.ones((2, 2), dtype=np.complex128)
    return a0, a1


def w_eps_psd(n: int, eps: float) -> Decomposition:
    """Symmetric psd decomposition of bond 2 with E_j = A_j at every site."""
    a0, a1 = a_matrices(n, eps)
    omega = make_simplex(n)
    local = np.stack([a0, a1], axis=-1)
    return from_orbits(Variant.PSD, omega, symmetric_action(omega), {1: local})


def w_eps_psd_entries(n: int, eps: float) -> DenseTensor:
    """
    Contraction of the psd family evaluated in Hadamard form.

    T_j = sum_ab prod_k (A_{j_k})_ab depends only on the weight w of j. The
    diagonal positions give c^(n-w) eps^w each, c the diagonal of A_0, and
    the off-diagonal pair adds 2 c^(n-w) eps^w cos(pi (n - w) / n). Phases
    are summed before scaling, so the all-zero entry is exactly 0 where the
    generic contraction leaves rounding of size c^n.
    """
    a0, _ = a_matrices(n, eps)
    c = float(a0[0, 0].real)
    by_weight = np.array(
        [
            c ** (n - w) * eps**w * 2.0 * (1.0 + math.cos(math.pi * (1.0 - w / n)))
            for w in range(n + 1)
        ]
    )
    weights = np.indices((2,) * n).sum(axis=0)
    return DenseTensor(by_weight[weights])


def _translation_invariant(
    variant: Variant, n: int, local_lr: np.ndarray
) -> Decomposition:
    """A C_n-invariant cycle decomposition from a local given in (left, right) order."""
    omega = make_cycle(n)
    copies = (left_copy(omega, 1), right_copy(omega, 1))
    rep = arrange_local(variant, omega, 1, copies, local_lr)
    return from_orbits(variant, omega, cyclic_action(omega), {1: rep})


def w_eps_ti_unconstrained(n: int, eps: float) -> Decomposition:
    """Translation-invariant cycle decomposition of bond 2 with v_12 = v_21 = 0."""
    _check_n(n, 3)
    _check_eps(eps)
    scale = eps ** (-1.0 / n)
    local = np.zeros((2, 2, 2), dtype=np.complex128)
    local[0, 0] = scale * np.array([1.0, eps])
    local[1, 1] = scale * np.array([np.exp(1j * np.pi / n), 0.0])
    return _translation_invariant(Variant.UNCONSTRAINED, n, local)


def w_eps_ti_psd(n: int, eps: float) -> Decomposition:
    """
    Translation-invariant psd cycle decomposition lifting A_j to
    (B_j)_{(a,a'),(b,b')} = delta_{aa'} delta_{bb'} (A_j)_{ab}.
    """
    a0, a1 = a_matrices(n, eps)
    local = np.zeros((2, 2, 2, 2, 2), dtype=np.complex128)
    for j, a in enumerate((a0, a1)):
        for x, y in itertools.product(range(2), repeat=2):
            local[x, x, y, y, j] = a[x, y]
    return _translation_invariant(Variant.PSD, n, local)


def w_eps_ti_nonneg(n: int, eps: float, p: int = 2) -> Decomposition:
    """
    Translation-invariant nonnegative cycle decomposition of bond p.

    (A_j)_{ab} = <j|v_ab> with A_0 = eps^{-1/(n-1)} P, P the translation on
    {1..p}, and A_1 = eps I. Every local carries p^{-2/n}, so the contraction
    is (1/p) tr(A_j1 ... A_jn) / p and tends to (1/p) W_n.
    """
    _check_n(n, 3)
    _check_eps(eps)
    if p < 2 or (n - 1) % p:
        raise InvalidInputError("p must be at least 2 and divide n - 1", n=n, p=p)
    shift = np.roll(np.eye(p), 1, axis=1)
    local = np.zeros((p, p, 2))
    local[..., 0] = eps ** (-1.0 / (n - 1)) * shift
    local[..., 1] = eps * np.eye(p)
    local *= p ** (-2.0 / n)
    return _translation_invariant(Variant.NONNEGATIVE, n, local)


def ti_nonneg_target(n: int, p: int = 2) -> DenseTensor:
    return (1.0 / p) * w_state(n)


def _check_two_domain(n: int, k: int) -> None:
    _check_n(n, 3)
    if k < 2:
        raise InvalidInputError("k must be at least 2", k=k)


def two_domain_eps(n: int, k: int, eps: float) -> Decomposition:
    """
    Nonnegative cycle decomposition of bond k approximating the two-domain
    state: v_ab = eps|a,b> + (1-eps) delta_ab |a,b> at sites 1..n-1 and
    w_ab = delta_ab |a,b> + (1/eps)(1-delta_ab)|a,b> at site n.
    """
    _check_two_domain(n, k)
    if not 0 < eps < 1:
        raise InvalidInputError("epsilon must lie in (0, 1)", epsilon=eps)
    v = np.zeros((k, k, k * k))
    w = np.zeros((k, k, k * k))
    for a, b in itertools.product(range(k), repeat=2):
        v[a, b, a * k + b] = 1.0 if a == b else eps
        w[a, b, a * k + b] = 1.0 if a == b else 1.0 / eps
    omega = make_cycle(n)
    locals_ = []
    for vertex in range(1, n + 1):
        copies = (left_copy(omega, vertex), right_copy(omega, vertex))
        raw = w if vertex == n else v
        locals_.append(arrange_local(Variant.NONNEGATIVE, omega, vertex, copies, raw))
    return build(Variant.NONNEGATIVE, omega, locals_)


Laurent = dict[int, Fraction]


def _laurent_mul(x: Laurent, y: Laurent) -> Laurent:
    out: Laurent = defaultdict(Fraction)
    for ex, cx in x.items():
        for ey, cy in y.items():
            out[ex + ey] += cx * cy
    return {e: c for e, c in out.items() if c}


def _laurent_add(x: Laurent, y: Laurent) -> Laurent:
    out: Laurent = defaultdict(Fraction, x)
    for e, c in y.items():
        out[e] += c
    return {e: c for e, c in out.items() if c}


_ONE: Laurent = {0: Fraction(1)}
_EPS: Laurent = {1: Fraction(1)}
_INV_EPS: Laurent = {-1: Fraction(1)}
# eps + (1 - eps): the diagonal coefficient of v.
_V_DIAGONAL: Laurent = _laurent_add(_EPS, {0: Fraction(1), 1: Fraction(-1)})


def two_domain_laurent(n: int, k: int) -> dict[tuple[int, ...], Laurent]:
    """
    Every nonzero entry of the two-domain family as an exact Laurent
    polynomial in eps.
    """
    _check_two_domain(n, k)
    if k**n > LAURENT_ENUMERATION_CAP:
        raise ResourceLimitError(
            "too many bond assignments for exact bookkeeping", assignments=k**n
        )
    entries: dict[tuple[int, ...], Laurent] = {}
    for bonds in itertools.product(range(k), repeat=n):
        # bonds[i] sits on the facet to the left of site i + 1.
        term = _ONE
        index = []
        for site in range(n):
            a, b = bonds[site], bonds[(site + 1) % n]
            index.append(a * k + b)
            if site == n - 1:
                factor = _ONE if a == b else _INV_EPS
            else:
                factor = _V_DIAGONAL if a == b else _EPS
            term = _laurent_mul(term, factor)
        key = tuple(index)
        entries[key] = _laurent_add(entries.get(key, {}), term)
    return entries


def two_domain_limit(n: int, k: int) -> DenseTensor:
    """The two-domain state: the eps^0 coefficient of the family, computed exactly."""
    out = np.zeros((k * k,) * n)
    for index, poly in two_domain_laurent(n, k).items():
        if poly and min(poly) < 0:
            raise ConsistencyError(
                "two-domain family diverges at an entry", index=list(index)
            )
        out[index] = float(poly.get(0, Fraction(0)))
    return DenseTensor(out)


def two_domain_extrapolate(n: int, k: int, eps: float) -> DenseTensor:
    """Richardson estimate 2 tau^{eps/2} - tau^{eps} of the limit."""
    half = contract(two_domain_eps(n, k, eps / 2)).data
    full = contract(two_domain_eps(n, k, eps)).data
    return DenseTensor(2 * half - full)


@dataclass(frozen=True)
class Family:
    """A named approximating family and the tensor it converges to."""

    name: str
    make: Callable[..., Decomposition]
    target: Callable[..., DenseTensor]
    params: tuple[str, ...] = ()
    defaults: dict[str, int] = field(default_factory=dict)
    expected_slope: Callable[..., float] | None = None
    # evaluates the contraction directly, bypassing make, when set
    exact: Callable[..., DenseTensor] | None = None


FAMILIES: dict[str, Family] = {
    f.name: f
    for f in (
        Family("w", w_eps_unconstrained, w_state, expected_slope=lambda n: 1.0),
        Family(
            "w-psd",
            w_eps_psd,
            w_state,
            expected_slope=lambda n: 1.0 + 1.0 / (n - 1),
            exact=w_eps_psd_entries,
        ),
        Family("w-ti", w_eps_ti_unconstrained, w_state),
        Family(
            "w-ti-psd",
            w_eps_ti_psd,
            w_state,
            expected_slope=lambda n: 1.0 + 1.0 / (n - 1),
        ),
        Family(
            "w-ti-nonneg",
            w_eps_ti_nonneg,
            ti_nonneg_target,
            params=("p",),
            defaults={"p": 2},
            expected_slope=lambda n, p=2: p * n / (n - 1),
        ),
        Family(
            "two-domain",
            two_domain_eps,
            two_domain_limit,
            params=("k",),
            defaults={"k": 3},
            expected_slope=lambda n, k=3: 2.0 if k == 2 else 1.0,
        ),
    )
}


def get_family(name: str) -> Family:
    try:
        return FAMILIES[name]
    except KeyError:
        raise InvalidInputError(
            "unknown family", family=name, known=sorted(FAMILIES)
        ) from None


def _point(
    generator: Callable[..., Decomposition | DenseTensor],
    n: int,
    params: dict[str, int],
    eps: float,
    target: DenseTensor,
) -> tuple[float, str | None]:
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        try:
            made = generator(n=n, eps=eps, **params)
            approx = made if isinstance(made, DenseTensor) else contract(made)
            error = frobenius_norm(approx.data - target.data)
        except (FloatingPointError, InvalidInputError) as exc:
            return math.nan, f"contraction failed: {exc}"
    if not math.isfinite(error):
        return math.nan, "non-finite contraction"
    return error, None


def convergence_study(
    generator: Callable[..., Decomposition | DenseTensor],
    n: int,
    params: dict[str, int] | None = None,
    eps_grid: Sequence[float] | None = None,
    target: DenseTensor | None = None,
    label: str | None = None,
) -> ConvergenceStudy:
    """
    Error of ``generator(n, eps, **params)`` against ``target`` along a
    decreasing epsilon grid, with a least-squares fit of log(error) on
    log(eps).

    Points below the noise floor (1e3 * machine epsilon * |target|) and
    non-finite points are kept in the table but excluded from the fit.
    """
    params = dict(params or {})
    grid = np.asarray(default_eps_grid() if eps_grid is None else eps_grid, float)
    if grid.size < 4:
        raise InvalidInputError("a convergence study needs at least 4 grid points")
    if np.any(grid <= 0) or np.any(np.diff(grid) >= 0):
        raise InvalidInputError("epsilon grid must be positive and strictly decreasing")
    if target is None:
        raise InvalidInputError("a convergence study needs a target tensor")
    floor = NOISE_FLOOR_FACTOR * MACHINE_EPS * frobenius_norm(target)

    # Executor.map keeps grid order, so aggregation is deterministic.
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(
            pool.map(lambda e: _point(generator, n, params, float(e), target), grid)
        )

    points = []
    for eps, (error, note) in zip(grid, results):
        included = note is None and error > floor
        if note is None and not included:
            note = "below noise floor"
        if note is not None:
            logger.warning("epsilon %.3g excluded from fit: %s", eps, note)
        points.append(
            ConvergencePoint(
                epsilon=float(eps), error=error, included_in_fit=included, note=note
            )
        )

    errors = [p.error for p in points if math.isfinite(p.error)]
    monotone = all(a > b for a, b in zip(errors, errors[1:]))
    study = ConvergenceStudy(
        family=label or getattr(generator, "__name__", "family"),
        n=n,
        params=params,
        points=points,
        monotone=monotone,
    )
    fit = [p for p in points if p.included_in_fit]
    if len(fit) < 2:
        logger.warning("fewer than two points usable for the fit")
        return study
    x = np.log([p.epsilon for p in fit])
    y = np.log([p.error for p in fit])
    result = stats.linregress(x, y)
    residual = y - (result.intercept + result.slope * x)
    study.slope = float(result.slope)
    study.slope_stderr = float(result.stderr)
    study.intercept = float(result.intercept)
    study.coefficient = float(math.exp(result.intercept))
    study.fit_residual = float(np.sqrt(np.mean(residual**2)))
    return study


def family_study(
    name: str,
    n: int,
    params: dict[str, int] | None = None,
    eps_grid: Sequence[float] | None = None,
) -> ConvergenceStudy:
    """Run a convergence study for a registered family against its target."""
    family = get_family(name)
    chosen = {**family.defaults, **(params or {})}
    unknown = set(chosen) - set(family.params)
    if unknown:
        raise InvalidInputError(
            "parameters not used by this family", family=name, unknown=sorted(unknown)
        )
    target = family.target(n=n, **chosen)
    generator = family.exact or family.make
    return convergence_study(generator, n, chosen, eps_grid, target, label=name)
