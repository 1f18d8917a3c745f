"""
SQLAlchemy ORM models for the run ledger.

- Runs: one row per CLI invocation with its config hash and tool version
- Artifacts: every file a run wrote, with its SHA-256 digest
"""

from sqlalchemy import Column, DateTime, ForeignKey, Integer, String, Text
from sqlalchemy.orm import relationship
from sqlalchemy.sql import func

from .database import Base


class Run(Base):
    """
    One CLI run.

    Attributes:
        id: The primary key.
        subcommand: The subcommand that ran, e.g. "family-study".
        config_hash: SHA-256 of the validated configuration.
        version: The brlab version that produced the run.
        status: "ok" or "error".
        summary: JSON summary of the run's outcome.
        created_at: When the run was recorded.
    """

    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    subcommand = Column(String, nullable=False, index=True)
    config_hash = Column(String, nullable=False, index=True)
    version = Column(String, nullable=False)
    status = Column(String, default="ok", index=True)
    summary = Column(Text)
    created_at = Column(DateTime(timezone=True), server_default=func.now())

    artifacts = relationship(
        "Artifact", back_populates="run", cascade="all, delete-orphan"
    )


class Artifact(Base):
    """A file written by a run."""

    __tablename__ = "artifacts"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("runs.id"), nullable=False, index=True)
    path = Column(String, nullable=False)
    sha256 = Column(String, nullable=False)

    run = relationship("Run", back_populates="artifacts")
