"""Scenario configuration files.

A scenario is a JSON object::

    {
      "scene": "demo_scene.json",          # paths are relative to this file
      "trace": "demo_trace.csv",
      "profiles": "profiles.json",         # optional, defaults to the built-in profiles
      "profile": "wifi-80211p",
      "backend": {"type": "stochastic" | "rt-inprocess" | "rt-remote", "endpoint": "host:port"},
      "duration": 90.0,
      "seed": 7,
      "min_move": 0.5,
      "rt": {"method": "exhaustive", "max_depth": 2, ...}
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from .channels import DEFAULT_PROFILES, RatProfile, load_profiles
from .geometry import load_scene
from .raytracer import RtConfig
from .vanet import Scenario, load_mobility_trace

BACKENDS = ("stochastic", "rt-inprocess", "rt-remote")


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioFile:
    scenario: Scenario
    profiles: dict[str, RatProfile]
    profile_name: str
    backend: str
    endpoint: tuple[str, int] | None

    def with_profile(self, name: str, fc: float | None = None) -> Scenario:
        try:
            profile = self.profiles[name]
        except KeyError:
            raise ConfigError(f"unknown profile {name!r}; have {sorted(self.profiles)}") from None
        if fc is not None:
            profile = replace(profile, fc=fc)
        return replace(self.scenario, profile=profile)


def data_path(name: str) -> Path:
    return Path(str(resources.files("dntwin") / "data" / name))


def demo_scenario_path() -> Path:
    return data_path("demo_scenario.json")


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"endpoint must look like host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def load_scenario(path: str | Path) -> ScenarioFile:
    """Load a scenario file; ``"demo"`` names the bundled urban-canyon scenario."""
    path = demo_scenario_path() if str(path) == "demo" else Path(path)
    base = path.parent
    doc = json.loads(path.read_text())
    try:
        scene = load_scene((base / doc["scene"]).read_text())
        trace = load_mobility_trace((base / doc["trace"]).read_text(), scene)
        profiles = dict(DEFAULT_PROFILES)
        if "profiles" in doc:
            profiles.update(load_profiles((base / doc["profiles"]).read_text()))
        name = doc.get("profile", "wifi-80211p")
        if name not in profiles:
            raise ConfigError(f"unknown profile {name!r}")
        backend_doc = doc.get("backend", {"type": "stochastic"})
        backend = backend_doc.get("type", "stochastic")
        if backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {backend!r}")
        endpoint = parse_endpoint(backend_doc["endpoint"]) if "endpoint" in backend_doc else None
        scenario = Scenario(
            scene=scene,
            trace=trace,
            profile=profiles[name],
            duration=float(doc["duration"]),
            seed=int(doc.get("seed", 0)),
            rt_config=RtConfig.from_dict(doc.get("rt", {})),
            min_move=float(doc.get("min_move", 0.5)),
        )
    except KeyError as exc:
        raise ConfigError(f"{path}: missing key {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return ScenarioFile(scenario, profiles, name, backend, endpoint)
