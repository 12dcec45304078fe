"""JSON run configuration and report files.

Relative paths inside a config file resolve against the config's directory.
Unknown fields are rejected everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .attacks import AttackSpec, BreachReport, PageMap, generate_trace, isolation_breach_report
from .controller import MitigationPolicy, Request, SimReport, Simulator, TimingParams, load_trace
from .disturbance import DisturbanceProfile
from .dram import Geometry, RemapTable
from .errors import ConfigError, HammerSimError

SCHEMA_VERSION = 1

_TOP_FIELDS = {
    "schema", "geometry", "remap", "timing", "policy", "profile_path",
    "trace_path", "attack", "page_map", "output", "init_fill",
}


@dataclass
class OutputSpec:
    format: str = "json"
    path: Path | None = None


@dataclass
class Config:
    geometry: Geometry
    timing: TimingParams = field(default_factory=TimingParams)
    policy: MitigationPolicy = field(default_factory=MitigationPolicy)
    profile: DisturbanceProfile = field(default_factory=DisturbanceProfile)
    remap: RemapTable | None = None
    trace: list[Request] | None = None
    attack: AttackSpec | None = None
    page_map: PageMap | None = None
    output: OutputSpec = field(default_factory=OutputSpec)
    init_fill: bytes = b"\x00"
    profile_path: Path | None = None
    trace_path: Path | None = None

    def requests(self) -> list[Request]:
        if self.trace is not None:
            return self.trace
        pages = self.page_map if self.page_map is not None else PageMap(self.geometry)
        return generate_trace(self.attack, self.geometry, pages)


def _obj(value: Any, path: str, allowed: set[str], required: set[str] = frozenset()) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(path, "expected an object")
    for key in value:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown field")
    for key in required:
        if key not in value:
            raise ConfigError(f"{path}.{key}" if path else key, "required field missing")
    return value


def _int(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    return value


def _build(path: str, factory, *args, **kwargs):
    try:
        return factory(*args, **kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, HammerSimError):
            raise
        raise ConfigError(path, str(exc)) from None


def _hex_bytes(value: Any, path: str) -> bytes:
    if not isinstance(value, str):
        raise ConfigError(path, "expected a hex byte string")
    token = value[2:] if value.lower().startswith("0x") else value
    try:
        data = bytes.fromhex(token)
    except ValueError:
        raise ConfigError(path, f"bad hex byte string {value!r}") from None
    if not data:
        raise ConfigError(path, "empty byte pattern")
    return data


def _geometry(d: Any) -> Geometry:
    d = _obj(d, "geometry", {"banks", "rows_per_bank", "row_size_bits", "page_size_bits"},
             {"banks", "rows_per_bank", "row_size_bits"})
    return _build("geometry", Geometry, **d)


def _timing(d: Any) -> TimingParams:
    d = _obj(d, "timing", {"t_rc", "t_refw", "refresh_multiplier_k"})
    return _build("timing", TimingParams, **d)


def _policy(d: Any) -> MitigationPolicy:
    d = _obj(d, "policy", {"kind", "k", "p", "rng_seed"}, {"kind"})
    return _build("policy", MitigationPolicy, **d)


def _remap(d: Any, geometry: Geometry) -> RemapTable:
    d = _obj(d, "remap", {str(b) for b in range(geometry.banks)})
    for bank, perm in d.items():
        if not isinstance(perm, list):
            raise ConfigError(f"remap.{bank}", "expected a list of physical row positions")
    return _build("remap", RemapTable, geometry.rows_per_bank, {int(b): p for b, p in d.items()})


def _attack(d: Any) -> AttackSpec:
    d = dict(_obj(d, "attack",
                  {"kind", "target_victim_row", "bank", "iterations", "seed", "conflict_row", "op", "write_pattern"},
                  {"kind", "target_victim_row"}))
    for key in ("target_victim_row", "bank", "iterations", "seed", "conflict_row"):
        if key in d and d[key] is not None:
            _int(d[key], f"attack.{key}")
    if "write_pattern" in d:
        d["write_pattern"] = _hex_bytes(d["write_pattern"], "attack.write_pattern")
    return _build("attack", AttackSpec, **d)


def _page_map(items: Any, geometry: Geometry) -> PageMap:
    if not isinstance(items, list):
        raise ConfigError("page_map", "expected a list of owner ranges")
    pm = PageMap(geometry)
    for i, entry in enumerate(items):
        path = f"page_map[{i}]"
        entry = _obj(entry, path, {"owner", "bank", "rows"}, {"owner", "bank", "rows"})
        rows = entry["rows"]
        if not (isinstance(rows, list) and len(rows) == 2):
            raise ConfigError(f"{path}.rows", "expected [first, last]")
        _build(path, pm.assign, entry["owner"], _int(entry["bank"], f"{path}.bank"),
               _int(rows[0], f"{path}.rows[0]"), _int(rows[1], f"{path}.rows[1]"))
    return pm


def _existing(base: Path, value: Any, path: str) -> Path:
    if not isinstance(value, str):
        raise ConfigError(path, "expected a file path")
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    if not p.is_file():
        raise ConfigError(path, f"file not found: {p}")
    return p


def parse_config(doc: Any, base_dir: str | Path = ".") -> Config:
    base = Path(base_dir)
    doc = _obj(doc, "", _TOP_FIELDS, {"schema", "geometry", "profile_path"})
    if doc["schema"] != SCHEMA_VERSION:
        raise ConfigError("schema", f"unsupported schema version {doc['schema']!r} (expected {SCHEMA_VERSION})")
    has_trace, has_attack = "trace_path" in doc, "attack" in doc
    if has_trace == has_attack:
        raise ConfigError("trace_path/attack", "exactly one of trace_path and attack must be given")

    geometry = _geometry(doc["geometry"])
    cfg = Config(geometry=geometry)
    if "timing" in doc:
        cfg.timing = _timing(doc["timing"])
    if "policy" in doc:
        cfg.policy = _policy(doc["policy"])
    if "remap" in doc:
        cfg.remap = _remap(doc["remap"], geometry)
    if "init_fill" in doc:
        cfg.init_fill = _hex_bytes(doc["init_fill"], "init_fill")

    cfg.profile_path = _existing(base, doc["profile_path"], "profile_path")
    try:
        cfg.profile = DisturbanceProfile.load(cfg.profile_path)
        cfg.profile.validate(geometry)
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError("profile_path", f"{cfg.profile_path}: {exc}") from None

    if "page_map" in doc:
        cfg.page_map = _page_map(doc["page_map"], geometry)
    if has_trace:
        cfg.trace_path = _existing(base, doc["trace_path"], "trace_path")
        cfg.trace = load_trace(cfg.trace_path, geometry)
    else:
        cfg.attack = _attack(doc["attack"])
        # surface ownership problems at load time
        cfg.requests()

    if "output" in doc:
        out = _obj(doc["output"], "output", {"format", "path"})
        fmt = out.get("format", "json")
        if fmt not in ("json", "csv"):
            raise ConfigError("output.format", f"expected 'json' or 'csv', got {fmt!r}")
        path = out.get("path")
        if path is not None and not isinstance(path, str):
            raise ConfigError("output.path", "expected a file path")
        cfg.output = OutputSpec(fmt, None if path is None else (base / path if not Path(path).is_absolute() else Path(path)))
    return cfg


def load_config(path: str | Path) -> Config:
    path = Path(path)
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path}: invalid JSON ({exc})") from None
    return parse_config(doc, path.parent)


def run_config(cfg: Config) -> tuple[SimReport, BreachReport | None]:
    sim = Simulator(cfg.geometry, cfg.timing, cfg.policy, cfg.profile, remap=cfg.remap, fill=cfg.init_fill)
    sim.run(cfg.requests())
    report = sim.report(cfg.page_map)
    breach = isolation_breach_report(report, cfg.page_map) if cfg.page_map is not None else None
    return report, breach


def with_override(cfg: Config, param: str, value, seed: int) -> Config:
    """Copy of ``cfg`` for one sweep point. ``seed`` feeds PARA and random attacks."""
    policy, attack = cfg.policy, cfg.attack
    if param == "para_p":
        policy = MitigationPolicy.para(float(value), seed)
    elif param == "refresh_k":
        policy = MitigationPolicy.increased_refresh(int(value))
    elif param == "iterations":
        if attack is None:
            raise ConfigError("attack", "sweeping iterations requires an attack config")
        attack = replace(attack, iterations=int(value))
    else:
        raise ConfigError("param", f"unknown sweep parameter {param!r}")
    if policy.kind.value == "para" and param != "para_p":
        policy = replace(policy, rng_seed=seed)
    if attack is not None and attack.kind.value == "random_baseline":
        attack = replace(attack, seed=seed)
    return replace(cfg, policy=policy, attack=attack)


def report_document(report: SimReport, breach: BreachReport | None) -> dict:
    doc: dict = {"schema": SCHEMA_VERSION, "report": report.to_dict()}
    if breach is not None:
        doc["isolation"] = breach.to_dict()
    return doc


def dumps_report(report: SimReport, breach: BreachReport | None = None) -> str:
    return json.dumps(report_document(report, breach), indent=2, sort_keys=True) + "\n"


def load_report(path: str | Path) -> tuple[SimReport, dict | None]:
    with open(path) as f:
        doc = json.load(f)
    return SimReport.from_dict(doc["report"]), doc.get("isolation")
