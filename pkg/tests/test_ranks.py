import math

import numpy as np
import pytest

from brlab.decomp import Variant, contract, validate
from brlab.errors import InvalidInputError
from brlab.families import w_eps_unconstrained, w_state
from brlab.ranks import (
    FLOOR_NN_W3,
    FLOOR_PSD_W3,
    als_cp,
    als_nonnegative,
    conjecture_search,
    flattening_lower_bound,
    load_floors,
    lookup_reference,
    measure_floors,
    rank_report,
    reference_ranks,
    remeasure_floor,
    separation_experiment,
    start_rng,
    symm_psd2_residual,
    within_floor,
)
from brlab.schemas import FloorRecord
from brlab.tensor import DenseTensor, product_tensor


def _random_rank2(rng):
    first = product_tensor([rng.standard_normal(3) for _ in range(3)])
    second = product_tensor([rng.standard_normal(3) for _ in range(3)])
    return first + second


def test_start_streams_are_reproducible():
    assert start_rng(7, 3).random() == start_rng(7, 3).random()
    assert start_rng(7, 3).random() != start_rng(7, 4).random()


@pytest.mark.parametrize("n", [3, 4, 5])
def test_flattening_bound_of_w_is_two(n):
    assert flattening_lower_bound(w_state(n)) == 2


def test_flattening_bound_of_product_is_one(rng):
    assert flattening_lower_bound(product_tensor([rng.standard_normal(2)] * 4)) == 1


def test_als_recovers_generic_rank_two(rng):
    t = _random_rank2(rng)
    dec, result = als_cp(t, 2, starts=5, iters=500, seed=3)
    assert result.residual < 1e-8
    assert np.allclose(contract(dec).data, t.data, atol=1e-7)


def test_als_rank_one_cannot_reach_w():
    # the best product approximation of W_3 has overlap 2/3 with the normalized state
    _, result = als_cp(w_state(3), 1, starts=3, iters=200, seed=0)
    assert result.residual >= math.sqrt(3 * 5 / 9) - 1e-6


def test_als_is_deterministic():
    t = w_state(3)
    _, a = als_cp(t, 2, starts=3, iters=50, seed=11)
    _, b = als_cp(t, 2, starts=3, iters=50, seed=11)
    assert a.residual == b.residual
    assert a.start == b.start


def test_als_init_shape_checked():
    with pytest.raises(InvalidInputError):
        als_cp(w_state(3), 2, starts=1, init=[np.ones((2, 3))] * 3)


@pytest.mark.parametrize("n", [3, 4, 5, 6])
def test_als_reaches_rank_of_w(n):
    dec, result = als_cp(w_state(n), n, seed=42)
    assert result.residual < 1e-7
    assert dec.bond == n


def test_als_fits_w3_at_rank_three():
    _, result = als_cp(w_state(3), 3, seed=42)
    assert result.residual < 1e-8


def test_als_warm_start_keeps_border_fit():
    family = w_eps_unconstrained(5, 1e-3)
    init = [family.local(v).T for v in range(1, 6)]
    _, result = als_cp(w_state(5), 2, starts=1, iters=50, seed=0, init=init)
    assert result.start == 0
    assert result.residual <= 5e-3


def test_nonnegative_fit_reaches_rank_of_w3():
    _, result = als_nonnegative(w_state(3), 3, seed=42)
    assert result.residual < 1e-6


def test_nonnegative_fit_is_nonnegative():
    dec, result = als_nonnegative(w_state(3), 2, starts=5, iters=300, seed=1)
    assert dec.variant is Variant.NONNEGATIVE
    assert validate(dec).valid
    history = result.history
    assert all(b <= a * (1 + 1e-9) for a, b in zip(history, history[1:]))


def test_nonnegative_floor_is_positive():
    _, result = als_nonnegative(w_state(3), 2, starts=10, iters=500, seed=42)
    assert result.residual > 0.05


def test_nonnegative_fit_rejects_negative_tensor():
    with pytest.raises(InvalidInputError):
        als_nonnegative(DenseTensor(-np.ones((2, 2, 2))), 1)


@pytest.mark.parametrize("name", [FLOOR_NN_W3, FLOOR_PSD_W3])
def test_frozen_floor_regression(name):
    floors = load_floors()
    if floors is None:
        pytest.skip("no measured floors; run `brlab floors-bootstrap --seed 42` first")
    record = floors.lookup(name)
    assert record is not None
    assert within_floor(record, remeasure_floor(record))


def test_bootstrapped_floors_reproduce(tmp_path):
    floors = measure_floors(starts=4, iters=300, seed=42)
    path = tmp_path / "floors.json"
    path.write_text(floors.model_dump_json(), encoding="utf-8")
    loaded = load_floors(path)
    assert loaded == floors
    nn = loaded.lookup(FLOOR_NN_W3)
    psd = loaded.lookup(FLOOR_PSD_W3)
    assert nn.value > 0.05
    assert 0.0 <= psd.value <= math.sqrt(3)
    for record in (nn, psd):
        assert (record.starts, record.iters, record.seed) == (4, 300, 42)
        assert remeasure_floor(record) == record.value


def test_load_floors_without_file(tmp_path):
    assert load_floors(tmp_path / "missing.json") is None


def test_floor_slack_and_guard():
    record = FloorRecord(name=FLOOR_NN_W3, value=0.1, starts=100, iters=2000, seed=42)
    assert within_floor(record, 0.1)
    assert within_floor(record, 0.081)
    assert within_floor(record, 0.119)
    assert not within_floor(record, 0.079)
    assert not within_floor(record, 0.121)
    assert not within_floor(record, 1e-6)
    assert not within_floor(record, 0.0)


def test_unknown_floor_cannot_be_remeasured():
    record = FloorRecord(name="ghz", value=0.1, starts=1, iters=1, seed=0)
    with pytest.raises(InvalidInputError):
        remeasure_floor(record)


def test_symmetric_psd_residual_bounds():
    w3 = w_state(3)
    residual = symm_psd2_residual(w3, starts=3, seed=0, iters=200)
    assert 0.0 <= residual <= math.sqrt(3)
    assert symm_psd2_residual(DenseTensor(np.zeros((2, 2, 2))), starts=1) == 0.0


def test_symmetric_psd_residual_needs_qubits():
    with pytest.raises(InvalidInputError):
        symm_psd2_residual(DenseTensor(np.ones((3, 3, 3))), starts=1)


def test_reference_values_for_w5():
    rows = reference_ranks(5)
    by_quantity = {(r.quantity, r.tensor): r for r in rows}
    assert by_quantity["rank", "W5"].value == 5
    assert by_quantity["brank", "W5"].value == 2
    assert math.isclose(by_quantity["tiosr", "W5"].value, math.sqrt(5))
    assert by_quantity["btinnosr", "W5"].value == 2
    assert by_quantity["tipsdosr", "W5"].value is None
    assert by_quantity["rank", "any"].relation == "<="


def test_reference_values_for_large_n():
    rows = reference_ranks(17)
    assert any(r.quantity == "tipsdosr" and r.value == 3 for r in rows)
    assert lookup_reference("tipsdosr", "W17") == 3
    assert lookup_reference("tipsdosr", "W5") is None


def test_lookup_reference():
    assert lookup_reference("rank", "W5") == 5
    assert lookup_reference("btinnosr", "W7") == 2
    assert lookup_reference("rank", "GHZ3") is None
    with pytest.raises(InvalidInputError):
        reference_ranks(1)


def test_rank_report_residuals_do_not_increase():
    report = rank_report(w_state(3), "W3", max_rank=3, starts=2, iters=200, seed=5)
    assert report.flattening_lower_bound == 2
    assert [e.rank for e in report.unconstrained] == [1, 2, 3]
    assert len(report.nonnegative) == 3
    residuals = [e.residual for e in report.unconstrained]
    assert all(b <= a + 1e-9 for a, b in zip(residuals, residuals[1:]))
    assert report.reference


def test_separation_on_w3():
    report = separation_experiment([3], seed=0, starts=5, iters=300)
    row = report.rows[0]
    assert row.n == 3
    assert set(row.nonnegative_floors) == {2}
    assert row.unconstrained_witness < 1e-2
    assert row.psd_witness < 1e-2
    assert row.nonnegative_floors[2] > row.unconstrained_witness
    assert row.persistence_epsilon == row.nonnegative_floors[2]


def test_separation_rejects_large_n():
    with pytest.raises(InvalidInputError):
        separation_experiment([8], seed=0)


def test_conjecture_search_reports_every_start():
    result = conjecture_search(w_state(3), 1, starts=2, seed=0, iters=20, label="W3")
    assert result.tensor == "W3"
    assert len(result.residuals) == 2
    assert result.best_residual == min(result.residuals)
