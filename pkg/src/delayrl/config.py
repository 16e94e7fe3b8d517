"""Run configuration: a flat `key = value` format with [run], [env],
[delays], and [agent] sections. Unknown keys are errors, defaults match
the published hyperparameter table, and serialization is canonical so a
parse/serialize round trip is stable."""

from __future__ import annotations

from dataclasses import dataclass, field

from .agents import Hyperparams
from .delay_channel import DelayProcess, load_delay_histogram
from .envs import ContinuousOneDWorld, DelayedTask, PointMass
from .errors import ConfigError


def _parse_hidden(text):
    try:
        sizes = tuple(int(p) for p in str(text).replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"bad hidden sizes {text!r}")
    if not sizes:
        raise ConfigError("hidden sizes cannot be empty")
    return sizes


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes"):
        return True
    if t in ("0", "false", "no"):
        return False
    raise ConfigError(f"bad boolean {text!r}")


def _identity(x):
    return x


# section -> key -> (parser, default)
SCHEMA = {
    "run": {
        "seed": (int, 0),
        "steps": (int, 100_000),
        "out": (_identity, ""),
    },
    "env": {
        "id": (_identity, "pointmass"),
        "horizon": (int, 200),
        "dt": (float, 0.1),
        "goal": (float, 0.5),
        "accel": (float, 1.0),
        "num_cells": (int, 7),
        "reward_mode": (_identity, "rightmost"),
        "slip": (float, 0.0),
        "start_cell": (int, 0),
    },
    "delays": {
        "kind": (_identity, "constant"),
        "alpha": (int, 2),
        "beta": (int, 3),
        "alpha_min": (int, 0),
        "alpha_max": (int, 2),
        "beta_min": (int, 1),
        "beta_max": (int, 3),
        "file": (_identity, ""),
        "max_alpha": (int, -1),
        "max_beta": (int, -1),
        "buffer_k": (int, -1),
    },
    "agent": {
        "id": (_identity, "dcac"),
        "learning_rate": (float, 3e-4),
        "gamma": (float, 0.99),
        "batch_size": (int, 128),
        "tau": (float, 0.005),
        "grad_steps_per_env_step": (int, 1),
        "reward_scale": (float, 5.0),
        "entropy_scale": (float, 1.0),
        "replay_capacity": (int, 1_000_000),
        "warmup_samples": (int, 10_000),
        "hidden": (_parse_hidden, (64, 64)),
        "activation": (_identity, "softplus"),
        "fixed_n": (int, -1),
        "eval_every": (int, 1000),
        "eval_episodes": (int, 5),
    },
}

_SECTION_ORDER = ("run", "env", "delays", "agent")


@dataclass
class RunConfig:
    run: dict = field(default_factory=dict)
    env: dict = field(default_factory=dict)
    delays: dict = field(default_factory=dict)
    agent: dict = field(default_factory=dict)

    def __post_init__(self):
        for section in _SECTION_ORDER:
            values = getattr(self, section)
            merged = {k: d for k, (_p, d) in SCHEMA[section].items()}
            for key, value in values.items():
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                merged[key] = value
            setattr(self, section, merged)
        self.validate()

    def validate(self):
        if self.env["id"] not in ("pointmass", "onedworld"):
            raise ConfigError(f"unknown environment id {self.env['id']!r}")
        if self.agent["id"] not in ("dcac", "sac", "rtac", "sac-naive"):
            raise ConfigError(f"unknown agent id {self.agent['id']!r}")
        kind = self.delays["kind"]
        if kind not in ("constant", "uniform", "histogram"):
            raise ConfigError(f"unknown delay kind {kind!r}")
        if kind == "histogram":
            if not self.delays["file"]:
                raise ConfigError("delays.kind = histogram requires delays.file")
            if self.delays["max_alpha"] < 0 or self.delays["max_beta"] < 0:
                raise ConfigError("histogram delays require max_alpha and max_beta")
        max_a, max_b = self.delay_maxima()
        if max_b < 1:
            raise ConfigError("action delays must be at least one tick")
        k = self.delays["buffer_k"]
        if k >= 0 and k < max_a + max_b:
            raise ConfigError(
                f"buffer_k = {k} violates the constraint K >= max_alpha + max_beta"
                f" = {max_a + max_b}"
            )

    def delay_maxima(self):
        d = self.delays
        if d["kind"] == "constant":
            return d["alpha"], d["beta"]
        if d["kind"] == "uniform":
            return d["alpha_max"], d["beta_max"]
        return d["max_alpha"], d["max_beta"]

    def hyperparams(self) -> Hyperparams:
        a = self.agent
        fixed_n = a["fixed_n"] if a["fixed_n"] >= 0 else None
        return Hyperparams(
            learning_rate=a["learning_rate"],
            gamma=a["gamma"],
            batch_size=a["batch_size"],
            tau=a["tau"],
            grad_steps_per_env_step=a["grad_steps_per_env_step"],
            reward_scale=a["reward_scale"],
            entropy_scale=a["entropy_scale"],
            replay_capacity=a["replay_capacity"],
            warmup_samples=a["warmup_samples"],
            hidden=tuple(a["hidden"]),
            activation=a["activation"],
            fixed_n=fixed_n,
            eval_every=a["eval_every"],
            eval_episodes=a["eval_episodes"],
        )

    def build_env(self):
        e = self.env
        if e["id"] == "pointmass":
            return PointMass(dt=e["dt"], horizon=e["horizon"], goal=e["goal"],
                             accel=e["accel"])
        return ContinuousOneDWorld(num_cells=e["num_cells"], horizon=e["horizon"],
                                   reward_mode=e["reward_mode"], slip=e["slip"],
                                   start_cell=e["start_cell"])

    def build_delay_processes(self):
        d = self.delays
        if d["kind"] == "constant":
            return DelayProcess.constant(d["alpha"]), DelayProcess.constant(d["beta"])
        if d["kind"] == "uniform":
            if d["beta_min"] < 1:
                raise ConfigError("beta_min must be at least 1")
            return (DelayProcess.uniform(d["alpha_min"], d["alpha_max"]),
                    DelayProcess.uniform(d["beta_min"], d["beta_max"]))
        obs = load_delay_histogram(d["file"], max_delay=d["max_alpha"])
        act = load_delay_histogram(d["file"], max_delay=d["max_beta"])
        act = _shift_min_one(act)
        return obs, act

    def build_task(self) -> DelayedTask:
        obs_latency, act_latency = self.build_delay_processes()
        max_a, max_b = self.delay_maxima()
        k = self.delays["buffer_k"]
        return DelayedTask(self.build_env(), obs_latency, act_latency, max_a, max_b,
                           buffer_k=k if k >= 0 else None)

    def delay_label(self) -> str:
        d = self.delays
        if d["kind"] == "constant":
            return f"constant({d['alpha']},{d['beta']})"
        if d["kind"] == "uniform":
            return (f"uniform({d['alpha_min']}-{d['alpha_max']},"
                    f"{d['beta_min']}-{d['beta_max']})")
        return f"histogram({d['file']})"


def _shift_min_one(proc: DelayProcess) -> DelayProcess:
    """Action latencies include the inference tick, so fold any zero-delay
    mass into one tick."""
    masses = proc.table.copy()
    if masses.shape[0] < 2:
        raise ConfigError("an action-latency histogram needs delays >= 1")
    masses[1] += masses[0]
    masses[0] = 0.0
    return DelayProcess.histogram(masses)


def _coerce(section: str, key: str, raw: str, lineno=None):
    if section not in SCHEMA:
        raise ConfigError(_at(f"unknown section [{section}]", lineno))
    if key not in SCHEMA[section]:
        raise ConfigError(_at(f"unknown key {key!r} in section [{section}]", lineno))
    parser, _default = SCHEMA[section][key]
    try:
        return parser(raw)
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(_at(f"bad value {raw!r} for {section}.{key}", lineno))


def _at(message, lineno):
    return message if lineno is None else f"line {lineno}: {message}"


def parse_config_text(text: str) -> RunConfig:
    sections = {name: {} for name in _SECTION_ORDER}
    current = "run"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in SCHEMA:
                raise ConfigError(_at(f"unknown section [{current}]", lineno))
            continue
        if "=" not in line:
            raise ConfigError(_at(f"expected 'key = value', got {line!r}", lineno))
        key, raw_value = (p.strip() for p in line.split("=", 1))
        sections[current][key] = _coerce(current, key, raw_value, lineno)
    return RunConfig(**sections)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def apply_overrides(config: RunConfig, overrides) -> RunConfig:
    """Apply repeatable `section.key=value` strings on top of a config."""
    sections = {name: dict(getattr(config, name)) for name in _SECTION_ORDER}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        dotted, raw_value = (p.strip() for p in item.split("=", 1))
        if "." not in dotted:
            raise ConfigError(f"override key {dotted!r} must be section.key")
        section, key = dotted.split(".", 1)
        if section not in SCHEMA:
            raise ConfigError(f"unknown section {section!r} in override")
        sections[section][key] = _coerce(section, key, raw_value)
    return RunConfig(**sections)


def serialize_config(config: RunConfig) -> str:
    """Canonical form: every key explicit, fixed ordering."""
    lines = []
    for section in _SECTION_ORDER:
        lines.append(f"[{section}]")
        values = getattr(config, section)
        for key in SCHEMA[section]:
            value = values[key]
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
