"""Shared builders for solver and identification fixtures."""

import numpy as np
import pytest

from chromident import (
    ColumnConfig,
    InjectionProfile,
    Langmuir,
    ModelTemplate,
    ParamSpec,
)
from chromident.identification import synthetic_problem

TRUE_K = 0.0388
TRUE_NSTAR = 107.0

EXPERT_RANGE_K = (0.01, 0.05)
EXPERT_RANGE_NSTAR = (50.0, 150.0)
WIDE_RANGE_K = (0.001, 1.0)
EXPERT_GUESS = (0.03, 100.0)


def standard_column(length=0.5):
    return ColumnConfig(length=length, velocity=1.0, porosity=0.5)


def standard_injection(duration=8.0, pulse_end=1.0, concentration=10.0):
    return InjectionProfile(
        species_count=1,
        duration=duration,
        segments=[(0.0, pulse_end, [concentration])],
    )


def langmuir_model():
    return Langmuir(K=[TRUE_K], Nstar=TRUE_NSTAR)


def table1_specs(guess=True):
    g_k, g_n = EXPERT_GUESS if guess else (None, None)
    return (
        ParamSpec("K1", *EXPERT_RANGE_K, guess=g_k),
        ParamSpec("Nstar", *EXPERT_RANGE_NSTAR, guess=g_n),
    )


def table1_problem(dt=0.016, duration=8.0):
    """Single-species Langmuir roundtrip on a 500-step grid (expert ranges)."""
    problem, grid = synthetic_problem(
        ModelTemplate("langmuir", 1),
        [TRUE_K, TRUE_NSTAR],
        table1_specs(),
        standard_column(),
        standard_injection(duration=duration),
        dt=dt,
    )
    return problem, grid


def coarse_problem(n_time=80):
    """Small, fast roundtrip fixture for optimizer plumbing tests."""
    duration = 8.0
    problem, grid = synthetic_problem(
        ModelTemplate("langmuir", 1),
        [TRUE_K, TRUE_NSTAR],
        table1_specs(),
        standard_column(),
        standard_injection(duration=duration),
        dt=duration / n_time,
    )
    return problem, grid


@pytest.fixture(scope="session")
def table1():
    return table1_problem()


@pytest.fixture(scope="session")
def coarse():
    return coarse_problem()


def rng_stream(seed):
    return np.random.default_rng(seed)
