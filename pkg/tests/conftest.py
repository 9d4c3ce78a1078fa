"""Shared fixtures: the five-bottom toy hierarchy and random-instance helpers."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hierrec import HierarchySpec, balance, build_hierarchy
from hierrec.synthetic import random_hierarchy

settings.register_profile(
    "repo", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


def toy_spec() -> HierarchySpec:
    """T over X, Y; X over A, B; Y over C, D, E."""
    return HierarchySpec(
        levels=[["T"], ["X", "Y"]],
        bottom=["A", "B", "C", "D", "E"],
        edges=[("T", "X"), ("T", "Y"), ("X", "A"), ("X", "B"), ("Y", "C"), ("Y", "D"), ("Y", "E")],
    )


def unbalanced_spec() -> HierarchySpec:
    """Tot over A, B, C with C childless at the bottom level."""
    return HierarchySpec(
        levels=[["Tot"], ["A", "B", "C"]],
        bottom=["AA", "AB", "BA", "BB"],
        edges=[("Tot", "A"), ("Tot", "B"), ("Tot", "C"), ("A", "AA"), ("A", "AB"), ("B", "BA"), ("B", "BB")],
    )


@pytest.fixture
def toy():
    return build_hierarchy(toy_spec())


@pytest.fixture
def two_bottom():
    return build_hierarchy(HierarchySpec([["T"]], ["A", "B"], [("T", "A"), ("T", "B")]))


@pytest.fixture
def unbalanced():
    return balance(unbalanced_spec())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=range(12), ids=lambda i: f"h{i}")
def random_h(request):
    kind = "nested" if request.param % 2 == 0 else "grouped"
    return random_hierarchy(1000 + request.param, kind=kind)
