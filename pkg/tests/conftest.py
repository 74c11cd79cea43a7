"""Shared fixtures: the benchmark models reused across test modules."""

import os

import pytest

from amascheck.bench import gen_asv, gen_selene
from amascheck.core import build_undeadlocked
from amascheck.dsl import instantiate

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def asv_model():
    """The one-voter two-candidate benchmark, 15 states."""
    return build_undeadlocked(gen_asv(1, 2))


@pytest.fixture(scope="session")
def selene_tiny():
    """Smallest closed tracker-voting instance: one coerced voter, two
    candidates, two rounds.  Returns (spec, model)."""
    spec = gen_selene(voters=0, coerced=1, candidates=2, rounds=2)
    model = build_undeadlocked(instantiate(spec))
    return spec, model
