"""
Database configuration and session management for the run ledger.

The ledger is an optional SQLite database recording every CLI run and the
artifacts it wrote. ``--ledger`` accepts either a SQLAlchemy URL or a plain
file path.
"""

from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

SQLALCHEMY_DATABASE_URL = "sqlite:///./brlab-runs.db"

Base = declarative_base()


def ledger_url(target: str) -> str:
    return target if "://" in target else f"sqlite:///{target}"


def session_factory(target: str = SQLALCHEMY_DATABASE_URL) -> sessionmaker:
    """Session factory for the ledger at ``target``; tables are created on first use."""
    engine = create_engine(
        ledger_url(target), connect_args={"check_same_thread": False}
    )
    Base.metadata.create_all(bind=engine)
    return sessionmaker(autocommit=False, autoflush=False, bind=engine)
