import numpy as np
import pytest

from brlab.correlations import (
    HiddenVariableModel,
    KrausChannel,
    Povm,
    QuantumModel,
    apply_channel,
    channel_model_to_purification,
    check_choi,
    check_distribution,
    choi_matrix,
    choi_of_map,
    eval_channel_model,
    eval_hvm,
    eval_quantum_model,
    g_symmetric_eigendecomposition,
    hvm_to_nn,
    is_cptp,
    nn_to_hvm,
    nonclosure_witness,
    normalize_decomposition,
    povm_to_channel,
    psd_to_quantum_model,
    purification_to_channel_model,
    quantum_model_to_psd,
    validate_channel,
    validate_hvm,
    validate_model,
    validate_povm,
)
from brlab.decomp import Variant, contract, validate
from brlab.errors import InvalidInputError, SymmetryError
from brlab.schemas import HiddenVariableModelData, QuantumModelData
from brlab.tensor import DenseTensor
from brlab.wsc import (
    GroupAction,
    cyclic_action,
    make_cycle,
    make_line,
    make_simplex,
    symmetric_action,
    trivial_action,
)

PAULI = [
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]]),
    np.array([[1, 0], [0, -1]], dtype=complex),
]


def _random_hvm(rng, n=3, r=2, d=2):
    prior = rng.uniform(0.1, 1.0, r)
    conditionals = []
    for _ in range(n):
        c = rng.uniform(0.1, 1.0, (d, r))
        conditionals.append(c / c.sum(axis=0))
    return HiddenVariableModel(prior / prior.sum(), tuple(conditionals))


def _density(rng, d=2):
    x = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    rho = x @ x.conj().T
    return rho / np.trace(rho)


def test_hvm_round_trip(rng):
    model = _random_hvm(rng)
    assert validate_hvm(model).valid
    dec = hvm_to_nn(model)
    assert dec.variant is Variant.NONNEGATIVE
    assert dec.bond == 2
    assert np.allclose(contract(dec).data, eval_hvm(model).data)
    again = nn_to_hvm(dec)
    assert np.allclose(eval_hvm(again).data, eval_hvm(model).data, atol=1e-12)


def test_symmetric_hvm_gives_symmetric_decomposition(rng):
    base = _random_hvm(rng, n=1)
    model = HiddenVariableModel(base.prior, base.conditionals * 4)
    assert model.is_symmetric
    dec = hvm_to_nn(model)
    assert len(dec.action.generators) == 3
    assert validate(dec).valid
    assert np.allclose(contract(dec).data, eval_hvm(model).data)


def test_zero_hidden_values_are_dropped():
    conditionals = (np.array([[1.0, 0.0], [0.0, 1.0]]),) * 2
    model = HiddenVariableModel(np.array([1.0, 0.0]), conditionals)
    again = nn_to_hvm(hvm_to_nn(model))
    assert again.r == 1
    assert np.allclose(eval_hvm(again).data, eval_hvm(model).data)


def test_unnormalized_decomposition_needs_auto_renormalize(rng):
    dec = hvm_to_nn(_random_hvm(rng))
    doubled = dec.with_locals([2 * dec.local(v) for v in range(1, dec.n + 1)])
    with pytest.raises(InvalidInputError):
        nn_to_hvm(doubled)
    model = nn_to_hvm(doubled, auto_renormalize=True)
    assert np.isclose(eval_hvm(model).data.real.sum(), 1.0)


def test_nn_to_hvm_needs_simplex(random_decomposition):
    dec = random_decomposition("nonnegative", trivial_action(make_cycle(3)), r=2, d=2)
    with pytest.raises(InvalidInputError):
        nn_to_hvm(dec, auto_renormalize=True)


def test_hvm_data_round_trip(rng):
    model = _random_hvm(rng)
    payload = model.to_data().model_dump()
    again = HiddenVariableModel.from_data(HiddenVariableModelData.model_validate(payload))
    assert np.allclose(eval_hvm(again).data, eval_hvm(model).data)


def test_validate_hvm_flags_bad_prior():
    model = HiddenVariableModel(np.array([0.7, 0.7]), (np.eye(2), np.eye(2)))
    report = validate_hvm(model)
    assert not report.valid
    assert report.violations[0].kind == "probability"


def test_check_distribution():
    with pytest.raises(InvalidInputError):
        check_distribution(DenseTensor(np.array([[0.6, -0.1], [0.3, 0.2]])))
    with pytest.raises(InvalidInputError):
        check_distribution(DenseTensor(np.full((2, 2), 0.5)))
    fixed = check_distribution(DenseTensor(np.full((2, 2), 0.5)), auto_renormalize=True)
    assert np.allclose(fixed.data, 0.25)


def test_identity_channel_choi():
    ch = KrausChannel(np.eye(2)[None])
    choi = choi_matrix(ch)
    assert np.isclose(np.trace(choi), 2)
    assert np.linalg.matrix_rank(choi) == 1
    assert is_cptp(ch)


def test_depolarizing_channel(rng):
    p = 0.3
    kraus = [np.sqrt(1 - 3 * p / 4) * np.eye(2)] + [np.sqrt(p / 4) * s for s in PAULI]
    ch = KrausChannel(np.stack(kraus))
    assert is_cptp(ch)
    out = apply_channel(ch, np.diag([1.0, 0.0]))
    assert np.allclose(out, np.diag([1 - p / 2, p / 2]))
    rho = _density(rng)
    assert np.isclose(np.trace(apply_channel(ch, rho)), 1.0)


def test_choi_of_kraus_matches_choi_of_map(rng):
    ch = KrausChannel(np.stack([np.sqrt(0.5) * np.eye(2), np.sqrt(0.5) * PAULI[0]]))
    assert np.allclose(choi_matrix(ch), choi_of_map(lambda m: apply_channel(ch, m), 2))


def test_transpose_is_not_completely_positive():
    report = check_choi(choi_of_map(lambda m: m.T, 2), 2)
    assert [v.kind for v in report.violations] == ["cptp"]
    assert "positive semidefinite" in report.violations[0].message


def test_trace_decreasing_channel_rejected():
    report = validate_channel(KrausChannel(0.5 * np.eye(2)[None]))
    assert not report.valid
    assert "trace" in report.violations[0].message


def test_povm_to_channel_outputs_classical_register(rng):
    a0 = np.array([[0.7, 0.1], [0.1, 0.4]])
    povm = Povm(np.stack([a0, np.eye(2) - a0]))
    assert validate_povm(povm).valid
    ch = povm_to_channel(povm)
    rho = _density(rng)
    out = apply_channel(ch, rho)
    expected = [np.trace(a @ rho) for a in povm.elements]
    assert np.allclose(out, np.diag(expected))


def test_validate_povm_flags_incompleteness():
    report = validate_povm(Povm(np.stack([np.eye(2), np.eye(2)])))
    assert [v.kind for v in report.violations] == ["completeness"]


def test_validate_povm_flags_negative_element():
    report = validate_povm(Povm(np.stack([np.diag([1.5, 0.5]), np.diag([-0.5, 0.5])])))
    assert any(v.kind == "psd" for v in report.violations)


@pytest.mark.parametrize(
    "action",
    [
        symmetric_action(make_simplex(3)),
        cyclic_action(make_cycle(4)),
        trivial_action(make_line(3)),
    ],
)
def test_psd_model_round_trip(random_decomposition, action):
    dec = normalize_decomposition(random_decomposition("psd", action, r=2, d=2))
    model = psd_to_quantum_model(dec)
    assert model.flavor == "povm"
    assert model.bond == dec.bond
    assert validate_model(model).valid
    assert np.allclose(eval_quantum_model(model).data, contract(dec).data, atol=1e-9)
    back = quantum_model_to_psd(model)
    assert back.variant is Variant.PSD
    assert validate(back).valid
    assert np.allclose(contract(back).data, contract(dec).data, atol=1e-9)


def test_psd_model_with_auto_renormalize(random_decomposition):
    dec = random_decomposition("psd", symmetric_action(make_simplex(3)), r=2, d=2)
    with pytest.raises(InvalidInputError):
        psd_to_quantum_model(dec)
    model = psd_to_quantum_model(dec, auto_renormalize=True)
    assert np.isclose(eval_quantum_model(model).data.sum(), 1.0)


def test_model_data_round_trip(random_decomposition):
    dec = normalize_decomposition(
        random_decomposition("psd", cyclic_action(make_cycle(3)), r=2, d=2)
    )
    model = psd_to_quantum_model(dec)
    payload = model.to_data().model_dump(mode="json")
    assert len(payload["povms"]) == 1
    again = QuantumModel.from_data(QuantumModelData.model_validate(payload))
    assert np.allclose(eval_quantum_model(again).data, eval_quantum_model(model).data)


def test_validate_model_flags_bad_povm(random_decomposition):
    dec = normalize_decomposition(
        random_decomposition("psd", symmetric_action(make_simplex(3)), r=2, d=2)
    )
    model = psd_to_quantum_model(dec)
    bad = Povm(model.local_ops[1].elements * 1.5)
    broken = QuantumModel("povm", model.state, {1: bad})
    report = validate_model(broken)
    assert not report.valid
    assert any(v.kind == "completeness" for v in report.violations)
    with pytest.raises(InvalidInputError):
        quantum_model_to_psd(broken)


def test_model_needs_one_operation_per_orbit(random_decomposition):
    dec = normalize_decomposition(
        random_decomposition("psd", trivial_action(make_line(2)), r=2, d=2)
    )
    model = psd_to_quantum_model(dec)
    with pytest.raises(InvalidInputError):
        QuantumModel("povm", model.state, {1: model.local_ops[1]})


def test_non_external_action_rejected(random_decomposition):
    reflection = GroupAction(make_line(3), [[3, 2, 1]])
    dec = random_decomposition("psd", reflection, r=2, d=2)
    with pytest.raises(SymmetryError):
        psd_to_quantum_model(dec, auto_renormalize=True)


def test_eigendecomposition_rejects_asymmetric_family(rng):
    omega = make_cycle(3)
    family = []
    for _ in range(3):
        x = rng.standard_normal((4, 4))
        family.append((x + x.T).reshape(2, 2, 2, 2))
    with pytest.raises(SymmetryError):
        g_symmetric_eigendecomposition(family, omega, cyclic_action(omega))


def test_eigendecomposition_is_shared_along_orbits(rng):
    omega = make_simplex(3)
    x = rng.standard_normal((2, 2))
    family = [x + x.T] * 3
    spectra = g_symmetric_eigendecomposition(family, omega, symmetric_action(omega))
    assert all(np.array_equal(lam, spectra[0][0]) for lam, _ in spectra)


@pytest.mark.parametrize(
    "action",
    [
        trivial_action(make_line(3)),
        symmetric_action(make_simplex(3)),
        cyclic_action(make_cycle(3)),
    ],
)
def test_purification_channel_round_trip(random_decomposition, action):
    dec = normalize_decomposition(
        random_decomposition("purification", action, r=2, d=2, ancilla=2)
    )
    model = purification_to_channel_model(dec)
    assert model.flavor == "channel"
    assert all(is_cptp(ch) for ch in model.local_ops.values())
    assert np.allclose(eval_channel_model(model).data, contract(dec).data, atol=1e-8)
    back = channel_model_to_purification(model)
    assert back.variant is Variant.PURIFICATION
    assert np.allclose(contract(back).data, contract(dec).data, atol=1e-8)


def test_nonclosure_witness_excludes_bond_two_limit():
    witness = nonclosure_witness(5)
    assert witness.excluded
    assert witness.bond == 2
    assert witness.psd_rank_bound == 4
    assert witness.reference_rank == 5
    assert witness.limit_flattening_rank == 2
    assert max(witness.model_errors) < 1e-8


ROUND_TRIP_ACTIONS = [
    lambda: trivial_action(make_line(3)),
    lambda: trivial_action(make_line(2)),
    lambda: cyclic_action(make_cycle(3)),
    lambda: cyclic_action(make_cycle(4)),
    lambda: symmetric_action(make_simplex(3)),
    lambda: symmetric_action(make_simplex(4)),
]


def _round_trip_instances(count):
    for i in range(count):
        action = ROUND_TRIP_ACTIONS[i % len(ROUND_TRIP_ACTIONS)]()
        r = 2 + i % 2
        d = 2 + (i // 2) % 2
        if action.omega.n == 4 and r == 3:
            d = 2
        yield i, action, r, d


def test_psd_model_round_trips_on_many_instances(random_decomposition):
    for i, action, r, d in _round_trip_instances(100):
        dec = normalize_decomposition(random_decomposition("psd", action, r=r, d=d))
        expected = contract(dec).data
        model = psd_to_quantum_model(dec)
        assert model.bond == dec.bond, i
        assert validate_model(model).valid, i
        assert all(validate_povm(op).valid for op in model.local_ops.values()), i
        assert np.allclose(eval_quantum_model(model).data, expected, atol=1e-9), i
        back = quantum_model_to_psd(model)
        assert back.bonds == dec.bonds, i
        assert np.allclose(contract(back).data, expected, atol=1e-9), i


def test_purification_round_trips_on_many_instances(random_decomposition):
    for i, action, r, d in _round_trip_instances(100):
        dec = normalize_decomposition(
            random_decomposition("purification", action, r=r, d=d, ancilla=2)
        )
        expected = contract(dec).data
        model = purification_to_channel_model(dec)
        assert model.bond == dec.bond, i
        assert all(is_cptp(ch) for ch in model.local_ops.values()), i
        assert np.allclose(eval_channel_model(model).data, expected, atol=1e-9), i
        back = channel_model_to_purification(model)
        assert back.bonds == dec.bonds, i
        assert np.allclose(contract(back).data, expected, atol=1e-9), i


def test_hvm_round_trips_on_many_models():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, r, d = 2 + seed % 3, 2 + seed % 2, 2 + (seed // 2) % 2
        if seed % 2:
            base = _random_hvm(rng, n=1, r=r, d=d)
            model = HiddenVariableModel(base.prior, base.conditionals * n)
            assert model.is_symmetric
        else:
            model = _random_hvm(rng, n=n, r=r, d=d)
        expected = eval_hvm(model).data
        dec = hvm_to_nn(model)
        assert dec.bond == r
        assert np.abs(contract(dec).data - expected).max() < 1e-12, seed
        again = nn_to_hvm(dec)
        assert np.abs(eval_hvm(again).data - expected).max() < 1e-12, seed
