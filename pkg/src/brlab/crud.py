"""CRUD operations for the run ledger."""

from sqlalchemy import and_
from sqlalchemy.orm import Session

from . import models, schemas


def record_run(db: Session, run: schemas.RunCreate) -> models.Run:
    db_run = models.Run(**run.model_dump())
    db.add(db_run)
    db.commit()
    db.refresh(db_run)
    return db_run


def add_artifact(
    db: Session, run_id: int, artifact: schemas.ArtifactBase
) -> models.Artifact:
    db_artifact = models.Artifact(run_id=run_id, **artifact.model_dump())
    db.add(db_artifact)
    db.commit()
    db.refresh(db_artifact)
    return db_artifact


def get_runs(
    db: Session,
    subcommand: str | None = None,
    config_hash: str | None = None,
    status: str | None = None,
):
    """All runs, newest first, with optional filtering."""
    query = db.query(models.Run)
    if subcommand:
        query = query.filter(models.Run.subcommand == subcommand)
    if config_hash:
        query = query.filter(models.Run.config_hash == config_hash)
    if status:
        query = query.filter(models.Run.status == status)
    return query.order_by(models.Run.id.desc()).all()


def get_run(db: Session, run_id: int) -> models.Run | None:
    return db.query(models.Run).filter(models.Run.id == run_id).first()


def find_reproduction(
    db: Session, config_hash: str, version: str, exclude_id: int | None = None
) -> models.Run | None:
    """
    The most recent successful run with the same configuration and version.

    ``exclude_id`` skips the run being compared.
    """
    query = db.query(models.Run).filter(
        and_(
            models.Run.config_hash == config_hash,
            models.Run.version == version,
            models.Run.status == "ok",
        )
    )
    if exclude_id is not None:
        query = query.filter(models.Run.id != exclude_id)
    return query.order_by(models.Run.id.desc()).first()


def artifacts_match(previous: models.Run, current: models.Run) -> bool:
    """True iff both runs wrote the same files with identical digests."""

    def digests(run: models.Run) -> dict[str, str]:
        return {a.path: a.sha256 for a in run.artifacts}

    return digests(previous) == digests(current)
