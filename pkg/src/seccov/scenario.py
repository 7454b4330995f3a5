"""Scenario files: a single versioned JSON document describing one run.

Unknown keys are rejected everywhere (catches typos in gain names), and
validation errors carry the dotted field path of the offending entry.
"""

from dataclasses import dataclass, field
import json

SCHEMA_VERSION = 1

DEFAULTS = {
    "region": {"name": "annulus", "params": {}},
    "density": {"name": "uniform", "params": {}, "total_mass": None},
    "agents": {"n": None, "initial_psi": None},
    "gains": {"k_psi": 0.03, "k_p": 0.1, "dt": 0.05},
    "search": {"eps_p": None, "k_star": 30, "t_eps": 10.0},
    "sim": {"duration": 10.0, "profile_bins": 256,
            "snapshot_times": None},
    "seed": 0,
    "output_dir": "out",
}


class ConfigError(ValueError):
    """Scenario validation failure; carries the dotted field path."""

    def __init__(self, path: str, message: str):
        self.field_path = path
        super().__init__(f"{path}: {message}")


@dataclass
class Scenario:
    region: dict
    density: dict
    agents: dict
    gains: dict
    search: dict
    sim: dict
    seed: int
    output_dir: str
    source_path: str | None = None

    def to_dict(self) -> dict:
        return {"version": SCHEMA_VERSION, "region": self.region,
                "density": self.density, "agents": self.agents,
                "gains": self.gains, "search": self.search, "sim": self.sim,
                "seed": self.seed, "output_dir": self.output_dir}


def _merge_section(name: str, given: dict, defaults: dict) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(name, f"expected an object, got {type(given).__name__}")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"{name}.{sorted(unknown)[0]}", "unknown key")
    out = dict(defaults)
    out.update(given)
    return out


def _require_number(path: str, value, positive=False, integer=False):
    if integer and not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if positive and value <= 0:
        raise ConfigError(path, f"must be strictly positive, got {value}")
    return value


def validate_scenario(doc: dict, source_path: str | None = None) -> Scenario:
    if not isinstance(doc, dict):
        raise ConfigError("", "scenario must be a JSON object")
    version = doc.get("version")
    if version != SCHEMA_VERSION:
        raise ConfigError("version", f"expected {SCHEMA_VERSION}, got {version!r}")
    unknown = set(doc) - set(DEFAULTS) - {"version"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")

    sections = {}
    for name in ("region", "density", "agents", "gains", "search", "sim"):
        sections[name] = _merge_section(name, doc.get(name, {}), DEFAULTS[name])

    n = sections["agents"]["n"]
    if n is None:
        raise ConfigError("agents.n", "missing agent count")
    _require_number("agents.n", n, integer=True)
    if n < 2:
        raise ConfigError("agents.n", f"need at least 2 agents, got {n}")
    psi0 = sections["agents"]["initial_psi"]
    if psi0 is not None:
        if not isinstance(psi0, list) or len(psi0) != n:
            raise ConfigError("agents.initial_psi",
                              f"expected a list of {n} angles")
        for j, v in enumerate(psi0):
            _require_number(f"agents.initial_psi[{j}]", v)

    for key in ("k_psi", "k_p", "dt"):
        _require_number(f"gains.{key}", sections["gains"][key], positive=True)

    s = sections["search"]
    if s["eps_p"] is not None:
        _require_number("search.eps_p", s["eps_p"], positive=True)
    if s["k_star"] is not None:
        _require_number("search.k_star", s["k_star"], positive=True,
                        integer=True)
    if s["eps_p"] is None and s["k_star"] is None:
        raise ConfigError("search", "one of eps_p or k_star is required")
    _require_number("search.t_eps", s["t_eps"])
    if s["t_eps"] < 0:
        raise ConfigError("search.t_eps", "episode time must be nonnegative")

    _require_number("sim.duration", sections["sim"]["duration"], positive=True)
    _require_number("sim.profile_bins", sections["sim"]["profile_bins"],
                    positive=True, integer=True)
    snaps = sections["sim"]["snapshot_times"]
    if snaps is not None:
        if not isinstance(snaps, list):
            raise ConfigError("sim.snapshot_times", "expected a list of times")
        for j, v in enumerate(snaps):
            _require_number(f"sim.snapshot_times[{j}]", v)

    if not isinstance(sections["region"]["name"], str):
        raise ConfigError("region.name", "expected a generator name")
    if not isinstance(sections["region"]["params"], dict):
        raise ConfigError("region.params", "expected an object")
    if not isinstance(sections["density"]["name"], str):
        raise ConfigError("density.name", "expected a generator name")
    if not isinstance(sections["density"]["params"], dict):
        raise ConfigError("density.params", "expected an object")
    tm = sections["density"]["total_mass"]
    if tm is not None:
        _require_number("density.total_mass", tm, positive=True)

    seed = doc.get("seed", DEFAULTS["seed"])
    _require_number("seed", seed, integer=True)
    if seed < 0:
        raise ConfigError("seed", "seed must be nonnegative")
    out_dir = doc.get("output_dir", DEFAULTS["output_dir"])
    if not isinstance(out_dir, str):
        raise ConfigError("output_dir", "expected a path string")

    return Scenario(region=sections["region"], density=sections["density"],
                    agents=sections["agents"], gains=sections["gains"],
                    search=sections["search"], sim=sections["sim"],
                    seed=int(seed), output_dir=out_dir,
                    source_path=source_path)


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"invalid JSON: {exc}") from exc
    return validate_scenario(doc, source_path=str(path))
