import math

import numpy as np
import pytest
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

from brlab.database import Base
from brlab.decomp import Variant, from_orbits
from brlab.wsc import orbit_representatives

SQLALCHEMY_DATABASE_URL = "sqlite:///:memory:"

engine = create_engine(
    SQLALCHEMY_DATABASE_URL,
    connect_args={"check_same_thread": False},
    poolclass=StaticPool,
)
TestingSessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)


@pytest.fixture(scope="function")
def db_session():
    # Set up the database and tables
    Base.metadata.create_all(bind=engine)
    db = TestingSessionLocal()
    try:
        yield db
    finally:
        db.close()
        # Drop all tables after the test
        Base.metadata.drop_all(bind=engine)


@pytest.fixture(scope="function")
def ledger_factory(db_session):
    """A session factory bound to the in-memory ledger of ``db_session``."""
    return TestingSessionLocal


@pytest.fixture(scope="function")
def rng():
    return np.random.default_rng(20240617)


def _complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _bond_shape(omega, vertex, r):
    return (r,) * len(omega.copy_indices_at(vertex))


@pytest.fixture
def random_decomposition(rng):
    """
    Factory for random decompositions with one random local per orbit
    representative: make(variant, action, r, d).
    """

    def make(variant, action, r, d, ancilla=None):
        variant = Variant(variant)
        omega = action.omega
        reps = {}
        for v in orbit_representatives(action):
            bonds = _bond_shape(omega, v, r)
            size = math.prod(bonds)
            if variant is Variant.UNCONSTRAINED:
                reps[v] = _complex(rng, bonds + (d,))
            elif variant is Variant.NONNEGATIVE:
                reps[v] = rng.uniform(0.0, 1.0, bonds + (d,))
            elif variant is Variant.PSD:
                x = _complex(rng, (d, size, size))
                mats = x @ x.conj().transpose(0, 2, 1)
                reps[v] = np.moveaxis(mats, 0, -1).reshape(bonds + bonds + (d,))
            elif variant is Variant.SEPARABLE:
                x = _complex(rng, (size, d, d))
                mats = x @ x.conj().transpose(0, 2, 1)
                reps[v] = mats.reshape(bonds + (d, d))
            else:
                reps[v] = _complex(rng, bonds + (d, ancilla or d))
        return from_orbits(variant, omega, action, reps)

    return make
