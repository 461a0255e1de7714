"""Cost-aware sequential diagnostic testing with doubly robust Q-learning."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import _costq
from ._costq import ConfigError, CostqError, Policy

__all__ = [
    "ConfigError",
    "CostqError",
    "FitResult",
    "METHODS",
    "Policy",
    "default_costs",
    "evaluate",
    "fit",
    "load_policy",
    "recommend",
    "simulate",
    "test_set",
    "version",
    "what_if",
]

METHODS: list[str] = list(_costq.METHODS)


def version() -> str:
    return _costq.version()


def simulate(n: int, seed: int, config: str = "") -> tuple[dict[str, Any], dict[str, Any]]:
    """Observed and fully observed training data for one (n, seed) cell.

    Missing test blocks are rows of NaN in x1 / x2.
    """
    return _costq.simulate(n, seed, config)


def test_set(seed: int, config: str = "") -> dict[str, Any]:
    return _costq.test_set(seed, config)


def default_costs(config: str = "") -> tuple[float, float]:
    return _costq.default_costs(config)


@dataclass
class FitResult:
    policy: Policy
    diagnostics: dict[str, Any]
    value_estimate: float | None


def fit(
    method: str,
    data: dict[str, Any],
    costs: tuple[float, float] | None = None,
    config: str = "",
    setting: str = "A",
    seed: int = 1,
) -> FitResult:
    """Fit one of METHODS. `config` is TOML text in the run-configuration format."""
    policy, diagnostics, value = _costq.fit(method, data, costs, config, setting, seed)
    return FitResult(policy, json.loads(diagnostics), value)


def evaluate(
    policy: Policy,
    data: dict[str, Any],
    costs: tuple[float, float] | None = None,
    train: dict[str, Any] | None = None,
) -> dict[str, Any]:
    return json.loads(_costq.evaluate(policy, data, costs, train))


def load_policy(path: str) -> Policy:
    with open(path, encoding="utf-8") as f:
        return Policy.from_json(f.read())


def _vec(x: Any) -> np.ndarray | None:
    return None if x is None else np.atleast_1d(np.asarray(x, dtype=float))


def recommend(policy: Policy, state: str, x0: Any, x1: Any = None, x2: Any = None) -> dict[str, Any]:
    return json.loads(policy.recommend(state, _vec(x0), _vec(x1), _vec(x2)))


def what_if(policy: Policy, state: str, x0: Any, x1: Any = None, x2: Any = None) -> dict[str, Any]:
    return json.loads(policy.what_if(state, _vec(x0), _vec(x1), _vec(x2)))
