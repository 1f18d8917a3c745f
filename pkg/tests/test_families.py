import itertools
import math

import numpy as np
import pytest

from brlab.decomp import Variant, contract, validate
from brlab.errors import InvalidInputError
from brlab.families import (
    FAMILIES,
    a_matrices,
    convergence_study,
    family_study,
    get_family,
    psd_constant,
    ti_nonneg_target,
    two_domain_eps,
    two_domain_extrapolate,
    two_domain_laurent,
    two_domain_limit,
    w_eps_error,
    w_eps_psd,
    w_eps_psd_entries,
    w_eps_ti_nonneg,
    w_eps_ti_psd,
    w_eps_ti_unconstrained,
    w_eps_unconstrained,
    w_state,
)
from brlab.tensor import frobenius_norm, matrix_rank, unfold

GRID = np.logspace(-1, -3, 7)


def test_w_state_entries():
    w = w_state(3).data
    assert w[1, 0, 0] == w[0, 1, 0] == w[0, 0, 1] == 1
    assert np.isclose(np.abs(w).sum(), 3)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_w_eps_matches_closed_form_error(n):
    for eps in (1e-1, 1e-2):
        dec = w_eps_unconstrained(n, eps)
        assert dec.bond == 2
        error = frobenius_norm(contract(dec).data - w_state(n).data)
        assert math.isclose(error, w_eps_error(n, eps), rel_tol=1e-6)


def test_w_eps_study_slope_and_coefficient():
    study = convergence_study(w_eps_unconstrained, 5, eps_grid=GRID, target=w_state(5))
    assert abs(study.slope - 1.0) < 0.02
    assert math.isclose(study.coefficient, math.sqrt(math.comb(5, 2)), rel_tol=0.05)
    assert study.monotone


def test_psd_family_locals_are_psd():
    a0, a1 = a_matrices(4, 1e-2)
    assert np.all(np.linalg.eigvalsh(a0) >= -1e-12)
    assert np.all(np.linalg.eigvalsh(a1) >= -1e-12)
    assert validate(w_eps_psd(4, 1e-2)).valid


@pytest.mark.parametrize("n", [3, 5, 7])
def test_psd_family_weight_zero_and_one_entries(n):
    for eps in np.logspace(-1, -4, 13):
        t = w_eps_psd_entries(n, eps).data
        index = [0] * n
        assert abs(t[tuple(index)]) < 1e-12
        for k in range(n):
            index = [0] * n
            index[k] = 1
            assert abs(t[tuple(index)] - 1.0) < 1e-12
    assert psd_constant(n) > 0


@pytest.mark.parametrize("n", [3, 4, 5])
def test_psd_entries_match_contraction(n):
    for eps in (1e-1, 1e-2):
        exact = w_eps_psd_entries(n, eps).data
        generic = contract(w_eps_psd(n, eps)).data
        assert np.allclose(exact, generic, rtol=1e-9, atol=1e-9 * np.abs(generic).max())


def test_psd_constant_for_five_sites():
    assert math.isclose(psd_constant(5), 1.27202, rel_tol=1e-5)


def test_psd_family_slope():
    n = 4
    study = family_study("w-psd", n, eps_grid=GRID)
    assert abs(study.slope - (1 + 1 / (n - 1))) < 0.05


def test_translation_invariant_families_converge():
    for make in (w_eps_ti_unconstrained, w_eps_ti_psd):
        errors = [
            frobenius_norm(contract(make(4, eps)).data - w_state(4).data)
            for eps in (1e-1, 1e-2, 1e-3)
        ]
        assert errors[0] > errors[1] > errors[2]


def test_ti_psd_locals_are_valid():
    dec = w_eps_ti_psd(5, 1e-2)
    assert dec.variant is Variant.PSD
    assert dec.bonds == (2,) * 5
    assert validate(dec).valid


@pytest.mark.parametrize("n, p", [(3, 2), (5, 2), (5, 4), (7, 2), (7, 3), (9, 2), (9, 4)])
def test_ti_nonneg_slope(n, p):
    study = family_study("w-ti-nonneg", n, {"p": p})
    assert len(study.points) == 13
    assert sum(point.included_in_fit for point in study.points) >= 4
    assert abs(study.slope - p * n / (n - 1)) < 0.05


@pytest.mark.parametrize("n, p", [(5, 2), (5, 4), (7, 3), (9, 2)])
def test_ti_nonneg_entries_vanish_off_the_residue_class(n, p):
    # tr(P^(n-w)) is nonzero only when p divides n - w, i.e. w = 1 mod p
    t = contract(w_eps_ti_nonneg(n, 1e-2, p)).data
    for index in itertools.product(range(2), repeat=n):
        weight = sum(index)
        if weight % p != 1:
            assert t[index] == 0, index
        else:
            assert t[index].real > 0, index
    if p == 2:
        even = [i for i in itertools.product(range(2), repeat=n) if sum(i) % 2 == 0]
        assert all(t[i] == 0 for i in even)


def test_ti_nonneg_rejects_bad_p():
    with pytest.raises(InvalidInputError):
        w_eps_ti_nonneg(4, 1e-2, p=2)


def test_ti_nonneg_is_nonnegative():
    dec = w_eps_ti_nonneg(5, 1e-2)
    assert validate(dec).valid
    t = contract(dec).data
    assert np.all(t.real >= 0)
    assert np.allclose(ti_nonneg_target(5).data, 0.5 * w_state(5).data)


def test_two_domain_limit_is_exact():
    n, k = 4, 3
    limit = two_domain_limit(n, k)
    extrapolated = two_domain_extrapolate(n, k, 1e-5)
    assert np.max(np.abs(limit.data - extrapolated.data)) < 1e-6


def test_two_domain_limit_rank_gap():
    # a flattening of the limit has more than one singular value
    limit = two_domain_limit(4, 2)
    assert matrix_rank(unfold(limit, [1, 2])) > 1


def test_two_domain_laurent_has_no_poles_in_limit():
    entries = two_domain_laurent(3, 2)
    assert entries
    assert all(min(poly) >= 0 for poly in entries.values() if poly)


@pytest.mark.parametrize("k, slope", [(2, 2.0), (3, 1.0)])
def test_two_domain_slope(k, slope):
    study = family_study("two-domain", 4, {"k": k})
    assert abs(study.slope - slope) < 0.05
    assert get_family("two-domain").expected_slope(4, k) == slope


def test_two_domain_rejects_eps_outside_unit_interval():
    with pytest.raises(InvalidInputError):
        two_domain_eps(4, 2, 1.5)


def test_convergence_study_validates_grid():
    with pytest.raises(InvalidInputError):
        convergence_study(w_eps_unconstrained, 3, eps_grid=[1e-1, 1e-2], target=w_state(3))
    with pytest.raises(InvalidInputError):
        convergence_study(
            w_eps_unconstrained,
            3,
            eps_grid=[1e-3, 1e-2, 1e-1, 1.0],
            target=w_state(3),
        )


def test_noise_floor_points_are_excluded():
    # the target equals every approximation, so every point sits on the floor
    study = convergence_study(
        w_eps_unconstrained,
        3,
        eps_grid=GRID,
        target=contract(w_eps_unconstrained(3, 1e-1)),
    )
    assert not study.points[0].included_in_fit
    assert study.points[0].note == "below noise floor"


def test_registry():
    assert set(FAMILIES) == {"w", "w-psd", "w-ti", "w-ti-psd", "w-ti-nonneg", "two-domain"}
    assert get_family("w").expected_slope(5) == 1.0
    with pytest.raises(InvalidInputError):
        get_family("nope")
    with pytest.raises(InvalidInputError):
        family_study("w", 4, {"p": 2}, eps_grid=GRID)
