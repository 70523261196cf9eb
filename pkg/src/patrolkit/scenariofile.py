"""Scenario files: the JSON schema binding environments to detectors.

One document holds region coordinates (or an explicit travel matrix),
processing distributions, density parameters, priors, the anomaly
schedule, and the detector threshold. Round-trips exactly:
parse -> emit -> parse yields the same internal model.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np

from .envmodel import (
    AnomalySchedule,
    DensityPair,
    Environment,
    Gaussian,
    HypothesisFamily,
    MultivariateGaussian,
    ObservationModel,
    ProcessingDistribution,
    Weights,
    weights_from_priors,
)

__all__ = [
    "Scenario",
    "ScenarioError",
    "load_scenario",
    "parse_scenario",
    "scenario_to_dict",
    "builtin_scenario",
    "builtin_names",
]


class ScenarioError(ValueError):
    """Raised on malformed or inconsistent scenario documents."""


@dataclass(frozen=True)
class Scenario:
    """A fully specified surveillance scenario."""

    name: str
    env: Environment
    model: ObservationModel
    schedule: AnomalySchedule
    eta: float
    horizon: Optional[float] = None
    coords: Optional[tuple] = None
    speed: float = 1.0

    @property
    def weights(self) -> Weights:
        return weights_from_priors(self.env.priors)

    @property
    def n(self) -> int:
        return self.env.n


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ScenarioError(f"{where}: missing required key {key!r}")
    return doc[key]


def _parse_density(doc, where: str):
    if not isinstance(doc, dict):
        raise ScenarioError(f"{where}: density must be an object")
    kind = _require(doc, "kind", where)
    try:
        if kind == "gaussian":
            return Gaussian(float(_require(doc, "mean", where)), float(_require(doc, "var", where)))
        if kind == "mv_gaussian":
            return MultivariateGaussian(
                np.asarray(_require(doc, "mean", where), dtype=float),
                np.asarray(_require(doc, "cov", where), dtype=float),
            )
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}") from exc
    raise ScenarioError(f"{where}: unknown density kind {kind!r}")


def _parse_anomalous(doc, f0, where: str):
    kind = doc.get("kind") if isinstance(doc, dict) else None
    if kind == "hypotheses":
        components = tuple(
            _parse_density(c, f"{where}.components[{i}]")
            for i, c in enumerate(_require(doc, "components", where))
        )
        true = doc.get("true")
        try:
            return HypothesisFamily(f0, components, None if true is None else int(true))
        except ValueError as exc:
            raise ScenarioError(f"{where}: {exc}") from exc
    f1 = _parse_density(doc, where)
    try:
        return DensityPair(f0, f1)
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}") from exc


def _parse_processing(doc, where: str) -> ProcessingDistribution:
    if not isinstance(doc, dict):
        raise ScenarioError(f"{where}: processing must be an object")
    try:
        return ProcessingDistribution(
            str(_require(doc, "kind", where)), float(_require(doc, "param", where))
        )
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}") from exc


def parse_scenario(doc: dict, name: str = "scenario") -> Scenario:
    """Build a Scenario from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    regions = _require(doc, "regions", "scenario")
    if not isinstance(regions, list) or not regions:
        raise ScenarioError("scenario.regions: must be a nonempty list")
    n = len(regions)
    processing, priors, pairs, appearance, coords = [], [], [], [], []
    for i, region in enumerate(regions):
        where = f"regions[{i}]"
        if not isinstance(region, dict):
            raise ScenarioError(f"{where}: must be an object")
        processing.append(_parse_processing(_require(region, "processing", where), f"{where}.processing"))
        prior = float(_require(region, "prior", where))
        if not (0.0 < prior < 1.0):
            raise ScenarioError(f"{where}.prior: must lie strictly inside (0,1), got {prior}")
        priors.append(prior)
        f0 = _parse_density(_require(region, "nominal", where), f"{where}.nominal")
        pairs.append(_parse_anomalous(_require(region, "anomalous", where), f0, f"{where}.anomalous"))
        app = region.get("appearance")
        if app is not None and float(app) < 0:
            raise ScenarioError(f"{where}.appearance: must be nonnegative, got {app}")
        appearance.append(None if app is None else float(app))
        coords.append(region.get("coords"))
    speed = float(doc.get("speed", 1.0))
    travel_doc = doc.get("travel")
    try:
        if travel_doc is not None:
            env = Environment(np.asarray(travel_doc, dtype=float), tuple(processing), tuple(priors))
        else:
            if any(c is None for c in coords):
                raise ScenarioError(
                    "scenario: every region needs coords when no travel matrix is given"
                )
            env = Environment.from_coordinates(coords, processing, priors, speed=speed)
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(f"scenario.travel: {exc}") from exc
    eta = float(doc.get("eta", 5.0))
    if eta <= 0:
        raise ScenarioError(f"scenario.eta: must be positive, got {eta}")
    horizon = doc.get("horizon")
    schedule = AnomalySchedule(tuple(appearance), bool(doc.get("remove_on_detection", True)))
    return Scenario(
        name=str(doc.get("name", name)),
        env=env,
        model=ObservationModel(tuple(pairs)),
        schedule=schedule,
        eta=eta,
        horizon=None if horizon is None else float(horizon),
        coords=None if any(c is None for c in coords) else tuple(tuple(c) for c in coords),
        speed=speed,
    )


def load_scenario(path) -> Scenario:
    """Load a scenario from a JSON file path or builtin name."""
    name = str(path)
    if name in builtin_names():
        return builtin_scenario(name)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    return parse_scenario(doc, name=str(path))


def _density_to_dict(density) -> dict:
    if isinstance(density, Gaussian):
        return {"kind": "gaussian", "mean": density.mean, "var": density.var}
    return {
        "kind": "mv_gaussian",
        "mean": density.mean.tolist(),
        "cov": density.cov.tolist(),
    }


def scenario_to_dict(scenario: Scenario) -> dict:
    """Inverse of parse_scenario."""
    regions = []
    for i in range(scenario.n):
        pair = scenario.model.pairs[i]
        if isinstance(pair, HypothesisFamily):
            anomalous = {
                "kind": "hypotheses",
                "components": [_density_to_dict(c) for c in pair.components],
                "true": pair.true_index,
            }
            f0 = pair.f0
        else:
            anomalous = _density_to_dict(pair.f1)
            f0 = pair.f0
        region = {
            "processing": {
                "kind": scenario.env.processing[i].kind,
                "param": scenario.env.processing[i].param,
            },
            "prior": scenario.env.priors[i],
            "nominal": _density_to_dict(f0),
            "anomalous": anomalous,
            "appearance": scenario.schedule.appearance[i],
        }
        if scenario.coords is not None:
            region["coords"] = list(scenario.coords[i])
        regions.append(region)
    doc = {
        "name": scenario.name,
        "eta": scenario.eta,
        "horizon": scenario.horizon,
        "remove_on_detection": scenario.schedule.remove_on_detection,
        "speed": scenario.speed,
        "regions": regions,
    }
    if scenario.coords is None:
        doc["travel"] = scenario.env.travel.tolist()
    return doc


def builtin_names() -> tuple:
    files = resources.files("patrolkit.scenarios")
    return tuple(sorted(p.name[: -len(".json")] for p in files.iterdir() if p.name.endswith(".json")))


def builtin_scenario(name: str) -> Scenario:
    """Load one of the scenarios shipped with the package."""
    try:
        text = resources.files("patrolkit.scenarios").joinpath(f"{name}.json").read_text()
    except FileNotFoundError as exc:
        raise ScenarioError(f"unknown builtin scenario {name!r}; have {builtin_names()}") from exc
    return parse_scenario(json.loads(text), name=name)
