"""
Experiment configuration: a sectioned INI file, validated before any
computation.  Unknown sections or keys are errors; every default is
materialized so that the JSON summary echoes the complete configuration.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

SCENARIOS = (
    "full_run",
    "decoherence_scan",
    "subensemble_relaxation",
    "maxent_check",
    "born_frequencies",
    "hierarchy_demo",
)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


def _key(conv):
    return {"conv": conv}


@dataclass(frozen=True)
class ExperimentSection:
    scenario: str = field(default="full_run", metadata=_key(str))
    seed: int = field(default=0, metadata=_key(int))
    n_seeds: int = field(default=1, metadata=_key(int))


@dataclass(frozen=True)
class SystemSection:
    # observable diag(levels); repeated levels give degenerate projectors
    levels: tuple[float, ...] = field(default=(1.0, -1.0), metadata=_key(_float_list))
    # plus_x | diag:a,b,.. | pure:a,b,.. | random
    state: str = field(default="plus_x", metadata=_key(str))
    # diagonal of H_S, empty for H_S = 0
    energies: tuple[float, ...] = field(default=(), metadata=_key(_float_list))


@dataclass(frozen=True)
class ApparatusSection:
    kind: str = field(default="dephasing", metadata=_key(str))
    M: int = field(default=12, metadata=_key(int))
    g_low: float = field(default=0.5, metadata=_key(float))
    g_high: float = field(default=1.5, metadata=_key(float))
    G: int = field(default=16, metadata=_key(int))
    w: float = field(default=1.0, metadata=_key(float))
    lam: float | None = field(default=None, metadata=_key(_opt_float))
    field_strength: float | None = field(default=None, metadata=_key(_opt_float))
    fill: float = field(default=0.5, metadata=_key(float))


@dataclass(frozen=True)
class ScheduleSection:
    t_off: float | None = field(default=None, metadata=_key(_opt_float))
    t_split: float | None = field(default=None, metadata=_key(_opt_float))
    t_f: float | None = field(default=None, metadata=_key(_opt_float))
    n_grid: int = field(default=200, metadata=_key(int))
    window: float = field(default=1000.0, metadata=_key(float))
    avg_grid: int = field(default=2001, metadata=_key(int))


@dataclass(frozen=True)
class ScanSection:
    G: tuple[int, ...] = field(default=(), metadata=_key(_int_list))
    M: tuple[int, ...] = field(default=(), metadata=_key(_int_list))


@dataclass(frozen=True)
class MaxEntSection:
    levels: tuple[float, ...] = field(default=(0.0, 1.0), metadata=_key(_float_list))
    energy: float = field(default=1.0 / (1.0 + math.e), metadata=_key(float))
    beta_expected: float = field(default=1.0, metadata=_key(float))
    fd_step: float = field(default=1e-5, metadata=_key(float))


@dataclass(frozen=True)
class StatisticsSection:
    N: int = field(default=10000, metadata=_key(int))
    depth: int = field(default=3, metadata=_key(int))
    n_sigma: float = field(default=3.0, metadata=_key(float))


@dataclass(frozen=True)
class InjectSection:
    sector_mixing: float = field(default=0.0, metadata=_key(float))
    corrupt_merge: bool = field(default=False, metadata=_key(_bool))


SECTIONS = {
    "experiment": ExperimentSection,
    "system": SystemSection,
    "apparatus": ApparatusSection,
    "schedule": ScheduleSection,
    "scan": ScanSection,
    "maxent": MaxEntSection,
    "statistics": StatisticsSection,
    "inject": InjectSection,
}

# kind-dependent schedule defaults (t_off, t_split, t_f)
SCHEDULE_DEFAULTS = {
    "dephasing": (45.0, 45.0, 50.0),
    "ergodic": (5.0, 10.0, 50.0),
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = ExperimentSection()
    system: SystemSection = SystemSection()
    apparatus: ApparatusSection = ApparatusSection()
    schedule: ScheduleSection = ScheduleSection()
    scan: ScanSection = ScanSection()
    maxent: MaxEntSection = MaxEntSection()
    statistics: StatisticsSection = StatisticsSection()
    inject: InjectSection = InjectSection()

    @property
    def scenario(self) -> str:
        return self.experiment.scenario

    @property
    def seeds(self) -> tuple[int, ...]:
        s = self.experiment.seed
        return tuple(range(s, s + self.experiment.n_seeds))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, experiment=replace(self.experiment, seed=int(seed)))

    def echo(self) -> dict:
        """Every setting, defaults included, as plain JSON-ready values."""
        out = {}
        for name in SECTIONS:
            d = asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        return out


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str  # keys are case-sensitive (G vs g)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from exc
    sections = {}
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        cls = SECTIONS[name]
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"unknown key [{name}] {key}")
            try:
                kwargs[key] = known[key].metadata["conv"](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for [{name}] {key}: {raw!r} ({exc})") from exc
        sections[name] = cls(**kwargs)
    return resolve(ExperimentConfig(**sections))


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    return parse_config(text)


def resolve(cfg: ExperimentConfig) -> ExperimentConfig:
    """Fill kind-dependent defaults and validate every setting."""
    e, a, s = cfg.experiment, cfg.apparatus, cfg.schedule
    if e.scenario not in SCENARIOS:
        raise ConfigError(f"bad value for [experiment] scenario: {e.scenario!r}, expected one of {SCENARIOS}")
    if not 0 <= e.seed < 2**63:
        raise ConfigError("bad value for [experiment] seed: must be a non-negative 64-bit integer")
    if e.n_seeds < 1:
        raise ConfigError("bad value for [experiment] n_seeds: must be positive")
    if a.kind not in SCHEDULE_DEFAULTS:
        raise ConfigError(f"bad value for [apparatus] kind: {a.kind!r}")
    if not 1 <= a.M <= 14:
        raise ConfigError("bad value for [apparatus] M: must lie in 1..14")
    if not 0 < a.g_low <= a.g_high:
        raise ConfigError("bad value for [apparatus] g_low/g_high: need 0 < g_low <= g_high")
    if a.G < 2:
        raise ConfigError("bad value for [apparatus] G: must be at least 2")
    if a.w <= 0:
        raise ConfigError("bad value for [apparatus] w: must be positive")
    if not 0 < a.fill <= 1:
        raise ConfigError("bad value for [apparatus] fill: must lie in (0, 1]")
    a = replace(a, lam=5.0 * a.w if a.lam is None else a.lam,
                field_strength=a.w if a.field_strength is None else a.field_strength)
    t_off, t_split, t_f = SCHEDULE_DEFAULTS[a.kind]
    s = replace(s, t_off=t_off if s.t_off is None else s.t_off,
                t_split=t_split if s.t_split is None else s.t_split,
                t_f=t_f if s.t_f is None else s.t_f)
    if not 0 < s.t_off <= s.t_split < s.t_f:
        raise ConfigError("bad value for [schedule] t_off/t_split/t_f: need 0 < t_off <= t_split < t_f")
    if s.n_grid < 2 or s.avg_grid < 2:
        raise ConfigError("bad value for [schedule] n_grid/avg_grid: need at least 2 points")
    if s.window <= 0:
        raise ConfigError("bad value for [schedule] window: must be positive")
    if any(g < 2 for g in cfg.scan.G):
        raise ConfigError("bad value for [scan] G: every entry must be at least 2")
    if any(not 1 <= m <= 14 for m in cfg.scan.M):
        raise ConfigError("bad value for [scan] M: entries must lie in 1..14")
    sysc = cfg.system
    if len(sysc.levels) < 2:
        raise ConfigError("bad value for [system] levels: need at least two")
    if sysc.energies and len(sysc.energies) != len(sysc.levels):
        raise ConfigError("bad value for [system] energies: one per level")
    kind = sysc.state.split(":", 1)[0]
    if kind not in ("plus_x", "diag", "pure", "random"):
        raise ConfigError(f"bad value for [system] state: {sysc.state!r}")
    if kind == "plus_x" and len(sysc.levels) != 2:
        raise ConfigError("bad value for [system] state: plus_x needs two levels")
    if kind in ("diag", "pure"):
        try:
            vals = _float_list(sysc.state.split(":", 1)[1])
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"bad value for [system] state: {sysc.state!r}") from exc
        if len(vals) != len(sysc.levels):
            raise ConfigError("bad value for [system] state: one entry per level")
    m = cfg.maxent
    if len(m.levels) < 2 or m.fd_step <= 0:
        raise ConfigError("bad value for [maxent] levels/fd_step")
    st = cfg.statistics
    if st.N < 1 or st.depth < 1 or st.n_sigma <= 0:
        raise ConfigError("bad value for [statistics]: N, depth and n_sigma must be positive")
    if cfg.inject.sector_mixing < 0:
        raise ConfigError("bad value for [inject] sector_mixing: must be non-negative")
    return replace(cfg, apparatus=a, schedule=s)
