"""Run configuration: JSON parsing, validation and serialization.

Schema (omitted ``solver``/``simulation`` blocks and fields take defaults)::

    {
      "system": {
        "sensors": [
          {"name": "s1", "A": [[1.4]], "C": [[1]], "Q": [[1]], "R": [[1]],
           "Pi0": [[1]], "d": 3},
          ...
        ],
        "m": 1,
        "tau_max": 30
      },
      "solver": {"mode": "relative_vi", "alpha": 0.999, "span_tol": null,
                 "max_iters": 1000000, "damping": 0.5},
      "simulation": {"horizon": 200, "runs": 10000, "seed": 0,
                     "burn_in": null, "rollout_horizon": 10000},
      "output_dir": "out"
    }

Matrices are row-major nested lists; scalars are accepted for 1x1 entries.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError, ValidationError
from .estimation import ProcessModel
from .export import dumps
from .mdp import SystemConfig
from .simulation import McConfig
from .solver import SolverOptions

SENSOR_KEYS = ("name", "A", "C", "Q", "R", "Pi0", "d")
SYSTEM_KEYS = ("sensors", "m", "tau_max")
TOP_KEYS = ("system", "solver", "simulation", "output_dir")


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig
    solver: SolverOptions = field(default_factory=SolverOptions)
    simulation: McConfig = field(default_factory=McConfig)
    output_dir: str = "out"

    def to_dict(self):
        sensors = []
        for mod in self.system.models:
            entry = {k: getattr(mod, k).tolist() for k in ("A", "C", "Q", "R", "Pi0")}
            entry["d"] = mod.d
            if mod.name:
                entry["name"] = mod.name
            sensors.append(entry)
        return {
            "system": {"sensors": sensors, "m": self.system.m, "tau_max": self.system.tau_max},
            "solver": dataclasses.asdict(self.solver),
            "simulation": dataclasses.asdict(self.simulation),
            "output_dir": self.output_dir,
        }

    def dumps(self):
        return dumps(self.to_dict())

    def digest(self):
        """SHA-256 of the canonical serialization."""
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ValidationError(f"expected an object, got {type(obj).__name__}", where)
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise ValidationError(f"unknown key(s) {extra}; allowed: {list(allowed)}", where)


def _integer(value, where):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"expected an integer, got {value!r}", where)
    return value


def _sensor(obj, i):
    where = f"system.sensors[{i}]"
    _check_keys(obj, SENSOR_KEYS, where)
    missing = [k for k in ("A", "C", "Q", "R", "d") if k not in obj]
    if missing:
        raise ValidationError(f"missing key(s) {missing}", where)
    _integer(obj["d"], f"{where}.d")
    try:
        return ProcessModel(A=obj["A"], C=obj["C"], Q=obj["Q"], R=obj["R"], d=obj["d"],
                            Pi0=obj.get("Pi0"), name=str(obj.get("name", "")))
    except ValidationError as exc:
        raise type(exc)(exc.reason, f"{where}.{exc.field}") from None


def _block(cls, obj, where):
    if obj is None:
        return cls()
    names = [f.name for f in dataclasses.fields(cls)]
    _check_keys(obj, names, where)
    for key in ("max_iters", "horizon", "runs", "seed", "burn_in", "rollout_horizon"):
        if obj.get(key) is not None:
            _integer(obj[key], f"{where}.{key}")
    for key in ("alpha", "span_tol", "damping"):
        val = obj.get(key)
        if val is not None and (isinstance(val, bool) or not isinstance(val, (int, float))):
            raise ValidationError(f"expected a number, got {val!r}", f"{where}.{key}")
    try:
        return cls(**obj)
    except ValidationError as exc:
        if exc.field and not exc.field.startswith(where):
            raise type(exc)(exc.reason, f"{where}.{exc.field}") from None
        raise


def config_from_dict(doc):
    _check_keys(doc, TOP_KEYS, "<root>")
    if "system" not in doc:
        raise ValidationError("missing required block", "system")
    system = doc["system"]
    _check_keys(system, SYSTEM_KEYS, "system")
    sensors = system.get("sensors")
    if not isinstance(sensors, list):
        raise ValidationError("expected a list of sensor objects", "system.sensors")
    models = [_sensor(s, i) for i, s in enumerate(sensors)]
    m = _integer(system.get("m", 1), "system.m")
    tau_max = _integer(system.get("tau_max", 30), "system.tau_max")
    cfg = SystemConfig(tuple(models), m, tau_max)
    output_dir = doc.get("output_dir", "out")
    if not isinstance(output_dir, str):
        raise ValidationError("expected a path string", "output_dir")
    return RunConfig(cfg, _block(SolverOptions, doc.get("solver"), "solver"),
                     _block(McConfig, doc.get("simulation"), "simulation"), output_dir)


def parse_config(text, overrides=None):
    """Parse a JSON document into a validated ``RunConfig``.

    ``overrides`` maps dotted paths (``"system.tau_max"``) to values applied
    before validation.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}",
                         "<document>") from None
    for path, value in (overrides or {}).items():
        node = doc
        *parents, leaf = path.split(".")
        for key in parents:
            if not isinstance(node, dict):
                raise ValidationError("cannot apply override", path)
            node = node.setdefault(key, {})
        node[leaf] = value
    return config_from_dict(doc)


def bundled_configs():
    return sorted(p.name for p in (Path(__file__).parent / "configs").glob("*.json"))


def resolve_config_path(path):
    """``path`` itself if it exists, else a bundled config of that name."""
    p = Path(path)
    if p.exists():
        return p
    bundled = Path(__file__).parent / "configs" / p.name
    if bundled.exists():
        return bundled
    raise ValidationError(f"no such file; bundled configs are {bundled_configs()}", str(path))


def load_config(path, overrides=None):
    p = resolve_config_path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(str(exc), str(path)) from None
    return parse_config(text, overrides)
