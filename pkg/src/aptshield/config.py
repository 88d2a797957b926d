"""Run configuration: one INI file per experiment, overridable from the CLI.

Every key has a default, so an empty file (or no file) is a valid config.
Unknown sections or keys are rejected, values are range-checked at load, and
the effective settings hash to a short id that names the run directory.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError, DomainError
from .sparse_ae import SparsityConfig
from .scenario import ScenarioConfig


@dataclass(frozen=True)
class PathsSection:
    # empty string means "use the file the pipeline wrote into the run directory"
    flows: str = ""
    alerts: str = ""
    topology: str = ""
    truth: str = ""
    schema: str = ""


@dataclass(frozen=True)
class ScenarioSection:
    n_background_flows: int = 2000
    n_hosts: int = 6
    stage_gap_seconds: float = 600.0
    noise_alert_rate: float = 0.2
    calibrated: bool = False


@dataclass(frozen=True)
class PreprocessSection:
    test_fraction: float = 0.3


@dataclass(frozen=True)
class SparsitySection:
    suppression: float = 0.5
    excitation: float = 0.1
    threshold_mode: str = "quartile_v"
    beta: float = 1e-3
    clamp_eps: float = 1e-3


@dataclass(frozen=True)
class AESection:
    d_hidden: int = 8
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 10.0


@dataclass(frozen=True)
class ClassifierSection:
    epochs: int = 1000
    learning_rate: float = 5.0


@dataclass(frozen=True)
class GraphSection:
    target: str = ""  # empty: take the target host from the ground truth
    window_seconds: float = 60.0
    link_max_severity: int = 2
    with_permissions: bool = False
    gae: bool = False


@dataclass(frozen=True)
class GAESection:
    hidden: int = 16
    embedding: int = 8
    epochs: int = 200
    learning_rate: float = 0.5


SECTIONS = {
    "paths": PathsSection,
    "scenario": ScenarioSection,
    "preprocess": PreprocessSection,
    "sparsity": SparsitySection,
    "ae": AESection,
    "classifier": ClassifierSection,
    "graph": GraphSection,
    "gae": GAESection,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    paths: PathsSection = PathsSection()
    scenario: ScenarioSection = ScenarioSection()
    preprocess: PreprocessSection = PreprocessSection()
    sparsity: SparsitySection = SparsitySection()
    ae: AESection = AESection()
    classifier: ClassifierSection = ClassifierSection()
    graph: GraphSection = GraphSection()
    gae: GAESection = GAESection()

    def __post_init__(self):
        _validate(self)

    def scenario_config(self) -> ScenarioConfig:
        s = self.scenario
        return ScenarioConfig(self.seed, s.n_background_flows, s.n_hosts, s.stage_gap_seconds,
                              s.noise_alert_rate, s.calibrated)

    def sparsity_config(self) -> SparsityConfig:
        s = self.sparsity
        return SparsityConfig(s.suppression, s.excitation, s.threshold_mode, s.beta, s.clamp_eps)

    def to_dict(self) -> dict:
        out: dict = {"run": {"seed": self.seed}}
        for name in SECTIONS:
            section = getattr(self, name)
            out[name] = {f.name: getattr(section, f.name) for f in fields(section)}
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]

    def to_ini(self) -> str:
        lines = []
        for name, values in self.to_dict().items():
            lines.append(f"[{name}]")
            for key, value in values.items():
                lines.append(f"{key} = {_format_value(value)}")
            lines.append("")
        return "\n".join(lines)

    def with_overrides(self, seed: int | None = None, **section_values) -> "RunConfig":
        """Return a copy with ``seed`` and ``section__key=value`` overrides applied."""
        updates: dict[str, dict] = {}
        for compound, value in section_values.items():
            if value is None:
                continue
            section, key = compound.split("__", 1)
            updates.setdefault(section, {})[key] = value
        new = {name: replace(getattr(self, name), **vals) for name, vals in updates.items()}
        return replace(self, seed=self.seed if seed is None else seed, **new)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(text: str, kind: type, where: str):
    text = text.strip()
    if kind is bool:
        lowered = text.lower()
        if lowered in ("true", "yes", "on", "1"):
            return True
        if lowered in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {text!r}")
    if kind is int:
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{where}: expected an integer, got {text!r}") from None
    if kind is float:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{where}: expected a number, got {text!r}") from None
    return text


def _field_types(cls) -> dict[str, type]:
    types = {"int": int, "float": float, "bool": bool, "str": str}
    return {f.name: types[f.type if isinstance(f.type, str) else f.type.__name__] for f in fields(cls)}


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None

    seed = RunConfig.seed
    sections = {}
    for name in parser.sections():
        if name == "run":
            extra = set(parser[name]) - {"seed"}
            if extra:
                raise ConfigError(f"[run]: unknown keys {sorted(extra)}")
            if "seed" in parser[name]:
                seed = _parse_value(parser[name]["seed"], int, "[run] seed")
            continue
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        cls = SECTIONS[name]
        types = _field_types(cls)
        values = {}
        for key, raw in parser[name].items():
            if key not in types:
                raise ConfigError(f"[{name}]: unknown key {key!r}")
            values[key] = _parse_value(raw, types[key], f"[{name}] {key}")
        sections[name] = cls(**values)
    return RunConfig(seed=seed, **sections)


def _validate(cfg: RunConfig) -> None:
    def need(ok: bool, msg: str):
        if not ok:
            raise ConfigError(msg)

    need(cfg.seed >= 0, f"seed must be non-negative, got {cfg.seed}")
    need(0.0 < cfg.preprocess.test_fraction < 1.0, "[preprocess] test_fraction must lie in (0, 1)")
    need(cfg.ae.d_hidden >= 1, "[ae] d_hidden must be at least 1")
    need(cfg.ae.epochs >= 1, "[ae] epochs must be at least 1")
    need(cfg.ae.batch_size >= 0, "[ae] batch_size must be non-negative (0 means full batch)")
    need(cfg.ae.learning_rate > 0, "[ae] learning_rate must be positive")
    need(cfg.classifier.epochs >= 1, "[classifier] epochs must be at least 1")
    need(cfg.classifier.learning_rate > 0, "[classifier] learning_rate must be positive")
    need(cfg.graph.window_seconds >= 0, "[graph] window_seconds must be non-negative")
    need(cfg.graph.link_max_severity in (1, 2, 3), "[graph] link_max_severity must be 1, 2 or 3")
    need(cfg.gae.hidden >= 1 and cfg.gae.embedding >= 1, "[gae] hidden and embedding must be at least 1")
    need(cfg.gae.epochs >= 1, "[gae] epochs must be at least 1")
    need(cfg.gae.learning_rate > 0, "[gae] learning_rate must be positive")
    try:
        cfg.sparsity_config()
        cfg.scenario_config()
    except DomainError as exc:
        raise ConfigError(f"[sparsity] {exc}") from None


def resolve_path(cfg_value: str, run_dir: Path, default_name: str) -> Path:
    return Path(cfg_value) if cfg_value else run_dir / default_name
