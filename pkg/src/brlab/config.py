"""
Configuration for brlab: numeric tolerances, experiment configs and the
environment knobs read by the CLI.
"""

import hashlib
import json
import os
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import InvalidInputError

THREADS_ENV = "BRLAB_THREADS"

SUBCOMMANDS = (
    "family-study",
    "ranks",
    "floors-bootstrap",
    "to-model",
    "from-model",
    "eval-model",
    "validate-model",
    "tree",
    "separation",
    "reference",
    "conjecture-search",
)

STOCHASTIC_SUBCOMMANDS = frozenset(
    {"ranks", "floors-bootstrap", "separation", "conjecture-search"}
)

INPUT_SUBCOMMANDS = frozenset({"to-model", "from-model", "eval-model", "validate-model"})


class Tolerances(BaseModel):
    """Numeric tolerances shared by every module; overridable per run."""

    model_config = ConfigDict(frozen=True)

    rank: float = Field(1e-9, gt=0)
    psd: float = Field(1e-10, gt=0)
    hermitian: float = Field(1e-12, gt=0)
    distribution: float = Field(1e-10, gt=0)
    eigenvalue: float = Field(1e-10, gt=0)
    kraus: float = Field(1e-12, gt=0)
    group_cap: int = Field(10**6, gt=0)
    enumeration_bits: int = Field(30, gt=0)


DEFAULT_TOLERANCES = Tolerances()


class ExperimentConfig(BaseModel):
    """Validated input of one CLI run."""

    model_config = ConfigDict(extra="forbid")

    subcommand: Literal[SUBCOMMANDS]
    tree_action: Literal["normalize", "closure-check"] | None = None
    family: str | None = None
    tensor: str | None = None
    n: int | None = Field(None, ge=1)
    d: int | None = Field(None, ge=1)
    r: int | None = Field(None, ge=1)
    p: int | None = Field(None, ge=1)
    k: int | None = Field(None, ge=1)
    eps: str | None = None
    seed: int | None = None
    out: str = "."
    input: str | None = None
    starts: int | None = Field(None, ge=1)
    iters: int | None = Field(None, ge=1)
    n_list: list[int] | None = None
    forced: bool = False
    auto_renormalize: bool = False
    tolerances: Tolerances = Tolerances()

    @model_validator(mode="after")
    def check_requirements(self):
        if self.subcommand in STOCHASTIC_SUBCOMMANDS and self.seed is None:
            raise ValueError(f"--seed is required for '{self.subcommand}'")
        if self.subcommand == "tree" and self.tree_action is None:
            raise ValueError("tree requires an action: normalize or closure-check")
        if self.subcommand == "family-study" and (self.family is None or self.n is None):
            raise ValueError("family-study requires --family and --n")
        if self.tree_action is not None and self.subcommand != "tree":
            raise ValueError("a tree action is only valid for the tree subcommand")
        if self.subcommand in INPUT_SUBCOMMANDS and self.input is None:
            raise ValueError(f"'{self.subcommand}' requires --input")
        if self.tree_action == "normalize" and self.input is None:
            raise ValueError("tree normalize requires --input")
        if self.tree_action == "closure-check" and self.input is None and (
            self.family is None or self.n is None
        ):
            raise ValueError("tree closure-check requires --input or --family and --n")
        if self.eps is not None:
            parse_eps_grid(self.eps)
        return self

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form, ignoring the output directory."""
        payload = self.model_dump(mode="json", exclude={"out"})
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def worker_count() -> int:
    """Number of worker threads allowed by BRLAB_THREADS (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        value = int(raw)
    except ValueError:
        raise InvalidInputError(f"{THREADS_ENV} must be an integer", value=raw)
    return max(1, value)


def default_eps_grid() -> np.ndarray:
    """13 log-spaced points from 1e-1 down to 1e-4."""
    return np.logspace(-1.0, -4.0, 13)


def parse_eps_grid(spec: str) -> np.ndarray:
    """
    Parse an epsilon grid.

    Accepted forms are ``a..b`` (13 log-spaced points), ``a..b:points`` and a
    comma separated list. The result is strictly decreasing and positive.
    """
    try:
        if ".." in spec:
            bounds, _, count = spec.partition(":")
            lo_text, hi_text = bounds.split("..")
            start, stop = float(lo_text), float(hi_text)
            points = int(count) if count else 13
            if start <= 0 or stop <= 0 or points < 2:
                raise ValueError
            grid = np.logspace(np.log10(start), np.log10(stop), points)
        else:
            grid = np.array([float(x) for x in spec.split(",")])
    except ValueError:
        raise InvalidInputError("malformed epsilon grid", spec=spec)
    grid = np.sort(grid)[::-1]
    if np.any(grid <= 0) or np.any(np.diff(grid) >= 0):
        raise InvalidInputError(
            "epsilon grid must be positive and strictly decreasing", spec=spec
        )
    return grid
