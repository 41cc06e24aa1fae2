"""Sectioned ``key = value`` run configuration.

The stdlib ``configparser`` does not keep line numbers for individual keys, so
a small reader is used instead; every error names the offending line or key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from .controller import ControllerConfig, GainVector
from .dynamics import FallThresholds, RobotModel
from .episode import CostConstants, EpisodeConfig
from .sweep import SweepPlan


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CmaSettings:
    sigma: float = 0.2
    budget: int = 480
    fitness_tolerance: float = 1e-3
    sigma_floor: float = 1e-4


@dataclass(frozen=True)
class SweepSettings:
    grid: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    seed_speed: float = 0.4
    seed_gains: tuple = (-0.2, -0.5, 50.0, 200.0)


@dataclass(frozen=True)
class RunConfig:
    model: RobotModel = RobotModel()
    episode: EpisodeConfig = EpisodeConfig(desired_speed=0.4)
    controller: ControllerConfig = ControllerConfig()
    cma: CmaSettings = CmaSettings()
    sweep: SweepSettings = SweepSettings()
    seed: int = 0
    out: str = "out"

    @property
    def seed_gains(self) -> GainVector:
        return GainVector.from_array(self.sweep.seed_gains)

    def episode_for(self, speed: float) -> EpisodeConfig:
        return replace(self.episode, desired_speed=float(speed))

    def plan(self) -> SweepPlan:
        return SweepPlan(
            grid=self.sweep.grid, seed_speed=self.sweep.seed_speed, seed_gains=self.seed_gains,
            sigma=self.cma.sigma, budget=self.cma.budget, episode=self.episode,
            controller=self.controller, fitness_tolerance=self.cma.fitness_tolerance,
            sigma_floor=self.cma.sigma_floor, master_seed=self.seed,
        )


# ---------------------------------------------------------------------------
# key table: section -> key -> (kind, check)
# ---------------------------------------------------------------------------

def _positive(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _any(x):
    return True


_MODEL_KEYS = {f.name: ("float", _nonneg if f.name in ("gravity", "c_loss") else _positive)
               for f in fields(RobotModel)}

SCHEMA = {
    "model": _MODEL_KEYS,
    "episode": {
        "desired_speed": ("float", _positive),
        "t_sim": ("float", _positive),
        "dt": ("float", _positive),
        "perturbation": ("float", _nonneg),
        "hip_height_fraction": ("float", lambda x: 0 < x < 1),
        "max_pitch": ("float", _positive),
        "cost_fall": ("float", _positive),
        "cost_time": ("float", _positive),
        "cost_cot": ("float", _positive),
        "cost_speed": ("float", _positive),
    },
    "controller": {
        "lower_bounds": ("floats4", _any),
        "upper_bounds": ("floats4", _any),
        "damping_hip": ("float", _nonneg),
        "damping_knee": ("float", _nonneg),
        "step_length_offset": ("float", _any),
        "step_length_slope": ("float", _any),
        "torso_lean": ("float", _any),
        "torso_lean_slope": ("float", _any),
        "clearance": ("float", _positive),
        "stance_knee": ("float", _nonneg),
        "swing_lead": ("float", _positive),
    },
    "cma": {
        "sigma": ("float", _positive),
        "budget": ("int", _positive),
        "fitness_tolerance": ("float", _positive),
        "sigma_floor": ("float", _positive),
    },
    "sweep": {
        "grid": ("floats", lambda xs: len(xs) > 0 and all(x > 0 for x in xs)),
        "seed_speed": ("float", _positive),
        "seed_gains": ("floats4", _any),
    },
    "run": {
        "seed": ("int", _nonneg),
        "out": ("str", lambda s: bool(s)),
    },
}


def _convert(kind: str, text: str):
    if kind == "str":
        return text
    if kind == "int":
        return int(text)
    if kind == "float":
        v = float(text)
        if not math.isfinite(v):
            raise ValueError("not finite")
        return v
    vals = tuple(float(x) for x in text.split(","))
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("not finite")
    if kind == "floats4" and len(vals) != 4:
        raise ValueError(f"expected 4 comma-separated values, got {len(vals)}")
    return vals


def parse_sections(text: str, source: str = "<config>") -> dict:
    """Raw ``{section: {key: (value, line)}}`` with syntax and schema checks."""
    out: dict[str, dict] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"{where}: malformed section header {line!r}")
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"{where}: unknown section [{section}]")
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        sec = section
        if "." in key:
            # a dotted key names its own section
            sec, key = key.split(".", 1)
            if sec not in SCHEMA:
                raise ConfigError(f"{where}: unknown key '{sec}.{key}'")
        if sec is None:
            raise ConfigError(f"{where}: key {key!r} outside of any section")
        if key not in SCHEMA[sec]:
            raise ConfigError(f"{where}: unknown key {key!r} in [{sec}]")
        block = out.setdefault(sec, {})
        if key in block:
            raise ConfigError(f"{where}: duplicate key {sec}.{key}")
        kind, check = SCHEMA[sec][key]
        try:
            parsed = _convert(kind, value)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {sec}.{key}: {exc}") from None
        if not check(parsed):
            raise ConfigError(f"{where}: {sec}.{key} = {value} is out of range")
        block[key] = (parsed, lineno)
    return out


def _build(sections: dict, base: RunConfig, source: str) -> RunConfig:
    def vals(name):
        return {k: v for k, (v, _) in sections.get(name, {}).items()}

    def make(name, fn):
        try:
            return fn()
        except (ValueError, TypeError) as exc:
            lines = sorted(ln for _, ln in sections.get(name, {}).values())
            at = f"{source}:{lines[0]}" if lines else source
            raise ConfigError(f"{at}: invalid [{name}] block: {exc}") from None

    model = make("model", lambda: replace(base.model, **vals("model")))

    ep = vals("episode")
    ctrl = vals("controller")
    damping = (ctrl.pop("damping_hip", base.episode.damping[0]),
               ctrl.pop("damping_knee", base.episode.damping[1]))
    falls = replace(base.episode.falls, **{k: ep.pop(k) for k in ("hip_height_fraction", "max_pitch") if k in ep})
    costs = replace(base.episode.costs, **{k[5:]: ep.pop(k) for k in list(ep) if k.startswith("cost_")})
    episode = make("episode", lambda: replace(base.episode, falls=falls, costs=costs, damping=damping, **ep))
    controller = make("controller", lambda: replace(base.controller, **ctrl))
    cma_settings = replace(base.cma, **vals("cma"))
    sweep = replace(base.sweep, **vals("sweep"))
    run = vals("run")
    cfg = replace(base, model=model, episode=episode, controller=controller, cma=cma_settings,
                  sweep=sweep, **run)
    make("sweep", cfg.plan)
    return cfg


def loads(text: str, source: str = "<config>", base: RunConfig | None = None) -> RunConfig:
    """Parse config text; keys not given keep the values of ``base`` (default: shipped defaults)."""
    return _build(parse_sections(text, source), default_config() if base is None else base, source)


def load(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return loads(text, str(p))


_DEFAULT: RunConfig | None = None


def default_text() -> str:
    return resources.files(__package__).joinpath("default.ini").read_text()


def default_config() -> RunConfig:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = _build(parse_sections(default_text(), "default.ini"), RunConfig(), "default.ini")
    return _DEFAULT


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dumps(cfg: RunConfig) -> str:
    """Canonical text form; ``loads(dumps(c)) == c``."""
    ep = cfg.episode
    blocks = {
        "model": {f.name: getattr(cfg.model, f.name) for f in fields(RobotModel)},
        "episode": {
            "desired_speed": ep.desired_speed, "t_sim": ep.t_sim, "dt": ep.dt,
            "perturbation": ep.perturbation,
            "hip_height_fraction": ep.falls.hip_height_fraction, "max_pitch": ep.falls.max_pitch,
            **{f"cost_{f.name}": getattr(ep.costs, f.name) for f in fields(CostConstants)},
        },
        "controller": {
            "lower_bounds": cfg.controller.lower_bounds, "upper_bounds": cfg.controller.upper_bounds,
            "damping_hip": float(ep.damping[0]), "damping_knee": float(ep.damping[1]),
            **{f.name: getattr(cfg.controller, f.name) for f in fields(ControllerConfig)
               if f.name not in ("lower_bounds", "upper_bounds")},
        },
        "cma": {f.name: getattr(cfg.cma, f.name) for f in fields(CmaSettings)},
        "sweep": {f.name: getattr(cfg.sweep, f.name) for f in fields(SweepSettings)},
        "run": {"seed": cfg.seed, "out": cfg.out},
    }
    lines = []
    for name, block in blocks.items():
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {_fmt(v)}" for k, v in block.items())
        lines.append("")
    return "\n".join(lines)
