"""Multi-state hazard models with two-factor frailty.

Thin wrappers over the compiled core. Configurations are plain dicts with the
same keys as the JSON files read by the ``msms`` command line tool.
"""

import json
from os import PathLike
from typing import Optional, Union

import numpy as np

from . import _core
from ._core import FitResult, InputError, NumericalError

__all__ = [
    "FitResult",
    "InputError",
    "Likelihood",
    "NumericalError",
    "att",
    "cumulative_baseline",
    "default_model",
    "default_rules",
    "default_scenario",
    "fit",
    "frailty_correlation",
    "ingest",
    "latent_mean",
    "simulate",
    "trend_test",
]

Path = Union[str, PathLike]


def _dump(config: Union[dict, str]) -> str:
    return config if isinstance(config, str) else json.dumps(config)


def default_scenario() -> dict:
    """Reference simulation scenario."""
    return json.loads(_core.default_scenario_json())


def default_model() -> dict:
    """Default estimation spec."""
    return json.loads(_core.default_model_json())


def default_rules() -> dict:
    """Default ingestion rules."""
    return json.loads(_core.default_rules_json())


def frailty_correlation(psi, phi) -> np.ndarray:
    """4x4 correlation matrix of the frailty terms for the given loadings."""
    return np.asarray(_core.frailty_correlation(list(psi), list(phi)))


def cumulative_baseline(breaks, rates, t: float, upper: float = float("inf")) -> float:
    return _core.cumulative_baseline(list(breaks), list(rates), t, upper)


def latent_mean(breaks, rates, k: float = 1.0, horizon: float = float("inf"),
                upper: float = float("inf")) -> float:
    """E[min(T, horizon)] for hazard k times the step baseline."""
    return _core.latent_mean(list(breaks), list(rates), k, horizon, upper)


def simulate(scenario: Union[dict, str], out: Path, threads: int = 1) -> dict:
    """Simulates a population into ``out`` and returns its transition shares."""
    return json.loads(_core.simulate(_dump(scenario), str(out), threads))


def ingest(events: Path, out: Path, rules: Optional[Union[dict, str]] = None):
    """Builds spells.csv from an event CSV; returns (spells, excluded patients)."""
    return _core.ingest(str(events), _dump(rules if rules is not None else default_rules()), str(out))


def fit(spells: Path, model: Union[dict, str], threads: int = 1, max_iter: int = 500,
        tol: float = 1e-8, covariance: bool = True) -> FitResult:
    return _core.fit(str(spells), _dump(model), threads, max_iter, tol, covariance)


def att(fit_result: FitResult, spells: Path, transition: int, group: str = "overall",
        eps_draws: int = 100, kr_draws: int = 500, seed: int = 1,
        horizon: Optional[float] = None, threads: int = 1) -> dict:
    """Duration ATT with Krinsky-Robb standard errors for one transition."""
    return json.loads(_core.att(fit_result, str(spells), transition, group, eps_draws,
                                kr_draws, seed, horizon, threads))


def trend_test(spells: Path, model: Union[dict, str], threads: int = 1) -> dict:
    """Pre-reform parallel-trend Wald tests, one per transition."""
    return json.loads(_core.trend_test(str(spells), _dump(model), threads))


class Likelihood:
    """Simulated log-likelihood over a spell file, for direct evaluation."""

    def __init__(self, spells: Path, model: Union[dict, str], threads: int = 1):
        self._impl = _core.Likelihood(str(spells), _dump(model), threads)

    @property
    def keys(self):
        return self._impl.keys

    def starting_values(self) -> np.ndarray:
        return np.asarray(self._impl.starting_values())

    def __call__(self, theta) -> float:
        return self._impl.value(np.asarray(theta, dtype=float))

    def value_and_gradient(self, theta):
        v, g = self._impl.value_and_gradient(np.asarray(theta, dtype=float))
        return v, np.asarray(g)
