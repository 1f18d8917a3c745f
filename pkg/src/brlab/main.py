"""
Subcommand handlers for the brlab CLI.

Each handler takes a validated ExperimentConfig, writes its artifacts under
``config.out`` and returns a RunOutcome. Every JSON artifact embeds the
tool version and the config hash. Nothing time-dependent is written, so
repeated runs with the same config reproduce byte-identical files.
"""

import csv
import hashlib
import json
import logging
import re
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from pydantic import BaseModel

from . import __version__, correlations, crud, ranks, schemas, tree
from .config import ExperimentConfig, default_eps_grid, parse_eps_grid
from .decomp import Decomposition, Variant
from .errors import InvalidInputError
from .families import FAMILIES, family_study, get_family, w_state
from .tensor import DenseTensor

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_ERROR = 2

SEARCH_STARTS = 5
SEARCH_ITERS = 200
FLOOR_STARTS = 100
SEPARATION_EPS = 1e-3

_W_LABEL = re.compile(r"^W(\d+)$")


@dataclass
class RunOutcome:
    summary: dict[str, Any]
    artifacts: list[Path] = field(default_factory=list)
    exit_code: int = EXIT_OK


def _header(config: ExperimentConfig) -> dict[str, str]:
    return {"brlab_version": __version__, "config_hash": config.config_hash()}


def write_json(path: Path, payload: BaseModel | dict, config: ExperimentConfig) -> Path:
    body = payload.model_dump(mode="json") if isinstance(payload, BaseModel) else payload
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps({**_header(config), **body}, indent=2, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8", newline="\n")
    return path


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    if value is None:
        return ""
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[list[Any]]) -> Path:
    """
    CSV with '.' decimals, ',' separators, LF endings and 17-digit floats.

    The header row comes first; provenance lives in the JSON artifact
    written next to it.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def sha256_of(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError("cannot read input file", path=path, reason=str(exc)) from None


def _out(config: ExperimentConfig) -> Path:
    return Path(config.out)


def _check_local_dimension(config: ExperimentConfig, t: DenseTensor, label: str) -> None:
    if config.d is not None and any(dim != config.d for dim in t.shape):
        raise InvalidInputError(
            "tensor local dimension differs from --d",
            tensor=label,
            d=config.d,
            shape=list(t.shape),
        )


def _tensor(config: ExperimentConfig) -> tuple[DenseTensor, str]:
    t, label = _select_tensor(config)
    _check_local_dimension(config, t, label)
    return t, label


def _select_tensor(config: ExperimentConfig) -> tuple[DenseTensor, str]:
    if config.tensor:
        match = _W_LABEL.match(config.tensor)
        if not match:
            raise InvalidInputError("tensor labels have the form W<n>", tensor=config.tensor)
        return w_state(int(match.group(1))), config.tensor
    if config.n is not None and config.input is None:
        return w_state(config.n), f"W{config.n}"
    if config.input:
        data = schemas.TensorData.model_validate(_read_json(config.input))
        return DenseTensor.from_data(data), Path(config.input).stem
    raise InvalidInputError("select a tensor with --tensor, --n or --input")


def _family_params(config: ExperimentConfig, name: str) -> dict[str, int]:
    family = get_family(name)
    given = {"p": config.p, "k": config.k}
    return {key: given[key] for key in family.params if given[key] is not None}


def run_family_study(config: ExperimentConfig) -> RunOutcome:
    grid = parse_eps_grid(config.eps) if config.eps else default_eps_grid()
    params = _family_params(config, config.family)
    if config.d is not None:
        family = get_family(config.family)
        target = family.target(n=config.n, **{**family.defaults, **params})
        _check_local_dimension(config, target, config.family)
    study = family_study(config.family, config.n, params, grid)
    out = _out(config)
    rows = [[p.epsilon, p.error, p.included_in_fit] for p in study.points]
    artifacts = [
        write_csv(out / "study.csv", ["epsilon", "error", "included_in_fit"], rows),
        write_json(out / "study.json", study, config),
    ]
    return RunOutcome(study.summary(), artifacts)


def run_ranks(config: ExperimentConfig) -> RunOutcome:
    t, label = _tensor(config)
    report = ranks.rank_report(
        t,
        label,
        max_rank=config.r,
        starts=config.starts or ranks.DEFAULT_STARTS,
        iters=config.iters or ranks.DEFAULT_ITERS,
        seed=config.seed,
    )
    path = write_json(_out(config) / "report.json", report, config)
    best = {e.rank: e.residual for e in report.unconstrained}
    return RunOutcome(
        {"tensor": label, "flattening_lower_bound": report.flattening_lower_bound, "residuals": best},
        [path],
    )


def run_floors_bootstrap(config: ExperimentConfig) -> RunOutcome:
    floors = ranks.measure_floors(
        starts=config.starts or FLOOR_STARTS,
        iters=config.iters or ranks.DEFAULT_ITERS,
        seed=config.seed,
    )
    path = write_json(_out(config) / ranks.FLOORS_PATH, floors, config)
    return RunOutcome({f.name: f.value for f in floors.floors}, [path])


def _load_model(path: str) -> correlations.QuantumModel | correlations.HiddenVariableModel:
    raw = _read_json(path)
    if "flavor" in raw:
        return correlations.QuantumModel.from_data(schemas.QuantumModelData.model_validate(raw))
    return correlations.HiddenVariableModel.from_data(
        schemas.HiddenVariableModelData.model_validate(raw)
    )


def _load_decomposition(path: str) -> Decomposition:
    return Decomposition.from_data(schemas.DecompositionData.model_validate(_read_json(path)))


def run_to_model(config: ExperimentConfig) -> RunOutcome:
    dec = _load_decomposition(config.input)
    tol, renorm = config.tolerances, config.auto_renormalize
    if dec.variant is Variant.NONNEGATIVE:
        model = correlations.nn_to_hvm(dec, tol, renorm)
        summary = {"kind": "hidden-variable", "r": model.r}
    elif dec.variant is Variant.PSD:
        model = correlations.psd_to_quantum_model(dec, tol, renorm)
        summary = {"kind": "povm", "bond": model.bond}
    elif dec.variant is Variant.PURIFICATION:
        model = correlations.purification_to_channel_model(dec, tol, renorm)
        summary = {"kind": "channel", "bond": model.bond}
    else:
        raise InvalidInputError(
            "models exist for nonnegative, psd and purification decompositions",
            variant=dec.variant.value,
        )
    path = write_json(_out(config) / "model.json", model.to_data(), config)
    return RunOutcome(summary, [path])


def run_from_model(config: ExperimentConfig) -> RunOutcome:
    model = _load_model(config.input)
    if isinstance(model, correlations.HiddenVariableModel):
        _require(correlations.validate_hvm(model, config.tolerances))
        dec = correlations.hvm_to_nn(model)
    elif model.flavor == "povm":
        dec = correlations.quantum_model_to_psd(model, config.tolerances)
    else:
        dec = correlations.channel_model_to_purification(model, config.tolerances)
    path = write_json(_out(config) / "decomposition.json", dec.to_data(), config)
    return RunOutcome({"variant": dec.variant.value, "bond": dec.bond}, [path])


def _require(report: schemas.ValidationReport) -> None:
    if not report.valid:
        raise InvalidInputError(
            report.violations[0].message,
            violations=[v.model_dump() for v in report.violations],
        )


def run_eval_model(config: ExperimentConfig) -> RunOutcome:
    model = _load_model(config.input)
    if isinstance(model, correlations.HiddenVariableModel):
        _require(correlations.validate_hvm(model, config.tolerances))
        value = correlations.eval_hvm(model)
    elif model.flavor == "povm":
        _require(correlations.validate_model(model, config.tolerances))
        value = correlations.eval_quantum_model(model, config.tolerances)
    else:
        _require(correlations.validate_model(model, config.tolerances))
        value = correlations.eval_channel_model(model, config.tolerances)
    path = write_json(_out(config) / "eval.json", value.to_data(), config)
    return RunOutcome({"shape": list(value.data.shape)}, [path])


def run_validate_model(config: ExperimentConfig) -> RunOutcome:
    model = _load_model(config.input)
    if isinstance(model, correlations.HiddenVariableModel):
        report = correlations.validate_hvm(model, config.tolerances)
    else:
        report = correlations.validate_model(model, config.tolerances)
    path = write_json(_out(config) / "report.json", report, config)
    summary = {"valid": report.valid, "violations": [v.model_dump() for v in report.violations]}
    return RunOutcome(summary, [path], EXIT_OK if report.valid else EXIT_INVALID)


def _closure_sequence(config: ExperimentConfig) -> tuple[list[Decomposition], list[float] | None]:
    if config.input:
        raw = _read_json(config.input)
        decs = [
            Decomposition.from_data(schemas.DecompositionData.model_validate(d))
            for d in raw.get("decompositions", [])
        ]
        return decs, raw.get("epsilons")
    family = get_family(config.family)
    params = {**family.defaults, **_family_params(config, config.family)}
    grid = parse_eps_grid(config.eps) if config.eps else default_eps_grid()
    return [family.make(n=config.n, eps=float(e), **params) for e in grid], [float(e) for e in grid]


def run_tree(config: ExperimentConfig) -> RunOutcome:
    if config.tree_action == "normalize":
        dec = _load_decomposition(config.input)
        if dec.variant is Variant.SEPARABLE:
            normalized = tree.normalize_separable_tree(dec)
        else:
            normalized = tree.left_canonical(dec)
        path = write_json(_out(config) / "decomposition.json", normalized.to_data(), config)
        return RunOutcome({"variant": normalized.variant.value, "bonds": list(normalized.bonds)}, [path])
    decs, epsilons = _closure_sequence(config)
    report = tree.closure_check(
        decs, forced=config.forced, epsilons=epsilons, tolerances=config.tolerances
    )
    path = write_json(_out(config) / "closure.json", report, config)
    return RunOutcome(
        {"bounded": report.bounded, "tree": report.tree, "growth_slope": report.growth_slope},
        [path],
    )


def run_separation(config: ExperimentConfig) -> RunOutcome:
    n_list = config.n_list or ([config.n] if config.n else [3, 4, 5])
    eps = float(parse_eps_grid(config.eps)[0]) if config.eps else SEPARATION_EPS
    report = ranks.separation_experiment(
        n_list,
        config.seed,
        eps=eps,
        starts=config.starts or ranks.DEFAULT_STARTS,
        iters=config.iters or ranks.DEFAULT_ITERS,
    )
    out = _out(config)
    rows = [
        [row.n, row.epsilon, row.unconstrained_witness, row.psd_witness, r, floor, row.persistence_epsilon]
        for row in report.rows
        for r, floor in sorted(row.nonnegative_floors.items())
    ]
    header = ["n", "epsilon", "unconstrained_witness", "psd_witness", "rank", "nonnegative_floor", "persistence_epsilon"]
    artifacts = [
        write_json(out / "separation.json", report, config),
        write_csv(out / "separation.csv", header, rows),
    ]
    return RunOutcome({"rows": len(report.rows)}, artifacts)


def run_reference(config: ExperimentConfig) -> RunOutcome:
    if config.tensor:
        match = _W_LABEL.match(config.tensor)
        if not match:
            raise InvalidInputError("tensor labels have the form W<n>", tensor=config.tensor)
        n = int(match.group(1))
    else:
        n = config.n
    rows = ranks.reference_ranks(n)
    payload = {"reference": [r.model_dump(mode="json") for r in rows]}
    path = write_json(_out(config) / "reference.json", payload, config)
    return RunOutcome(payload, [path])


def run_conjecture_search(config: ExperimentConfig) -> RunOutcome:
    t, label = _tensor(config)
    result = ranks.conjecture_search(
        t,
        config.r or 2,
        starts=config.starts or SEARCH_STARTS,
        seed=config.seed,
        iters=config.iters or SEARCH_ITERS,
        label=label,
    )
    path = write_json(_out(config) / "search.json", result, config)
    return RunOutcome({"best_residual": result.best_residual}, [path])


HANDLERS: dict[str, Callable[[ExperimentConfig], RunOutcome]] = {
    "family-study": run_family_study,
    "ranks": run_ranks,
    "floors-bootstrap": run_floors_bootstrap,
    "to-model": run_to_model,
    "from-model": run_from_model,
    "eval-model": run_eval_model,
    "validate-model": run_validate_model,
    "tree": run_tree,
    "separation": run_separation,
    "reference": run_reference,
    "conjecture-search": run_conjecture_search,
}


def record(session_factory, config: ExperimentConfig, outcome: RunOutcome) -> dict[str, Any]:
    """Store the run in the ledger and compare it with an earlier identical run."""
    db = session_factory()
    try:
        run = crud.record_run(
            db,
            schemas.RunCreate(
                subcommand=config.subcommand,
                config_hash=config.config_hash(),
                version=__version__,
                status="ok" if outcome.exit_code == EXIT_OK else "invalid",
                summary=json.dumps(outcome.summary, sort_keys=True, default=str),
            ),
        )
        for path in outcome.artifacts:
            crud.add_artifact(
                db, run.id, schemas.ArtifactBase(path=str(path), sha256=sha256_of(path))
            )
        db.refresh(run)
        previous = crud.find_reproduction(db, run.config_hash, __version__, exclude_id=run.id)
        return {
            "run_id": run.id,
            "reproduces": None if previous is None else crud.artifacts_match(previous, run),
        }
    finally:
        db.close()


def run(config: ExperimentConfig, session_factory=None) -> RunOutcome:
    """Dispatch ``config`` to its handler and optionally record it in the ledger."""
    logger.info("running %s (config %s)", config.subcommand, config.config_hash()[:12])
    outcome = HANDLERS[config.subcommand](config)
    if session_factory is not None:
        outcome.summary = {**outcome.summary, "ledger": record(session_factory, config, outcome)}
    return outcome


def known_families() -> list[str]:
    return sorted(FAMILIES)
