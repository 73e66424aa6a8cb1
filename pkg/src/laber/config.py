"""Run configuration: INI-style sections, validated before any compute.

Precedence is command line > config file > defaults. Unknown sections or
keys are rejected with a :class:`ConfigError` naming ``section.key``.

Example::

    [env]
    name = gridworld
    width = 5
    height = 5
    goal = 4,4
    traps = 2,2; 3,1

    [agent]
    sampler = laber-mean
    m = 4

    [run]
    seed = 3
    steps = 20000
"""

import configparser
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .agents import AgentConfig
from .envs import chain_mdp, gridworld
from .errors import ConfigError

ENV_DEFAULTS = {
    "name": "chain",
    "n_states": 10,
    "slip_prob": 0.0,
    "step_penalty": 0.01,
    "width": 5,
    "height": 5,
    "goal": "4,4",
    "traps": "2,2; 3,1",
    "start": "0,0",
    "episode_cap": 200,
}
RUN_DEFAULTS = {"seed": 0, "steps": 10_000, "out": "runs/default", "checkpoint": True}
DIAG_DEFAULTS = {
    "format": "csv",
    "record_tv": False,
    "record_variance": True,
    "tv_bins": 40,
    "window_fraction": 0.1,
}
SECTIONS = ("env", "agent", "run", "diagnostics")


@dataclass
class RunConfig:
    env: dict = field(default_factory=lambda: dict(ENV_DEFAULTS))
    agent: AgentConfig = field(default_factory=AgentConfig)
    run: dict = field(default_factory=lambda: dict(RUN_DEFAULTS))
    diagnostics: dict = field(default_factory=lambda: dict(DIAG_DEFAULTS))

    @property
    def seed(self):
        return self.run["seed"]

    @property
    def steps(self):
        return self.run["steps"]

    def to_dict(self):
        agent = dataclasses.asdict(self.agent)
        agent["hidden"] = list(agent["hidden"])
        return {"env": dict(self.env), "agent": agent, "run": dict(self.run), "diagnostics": dict(self.diagnostics)}


def _coerce(section, key, raw, default):
    name = f"{section}.{key}"
    try:
        if isinstance(default, bool):
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(str(raw).strip())
        if isinstance(default, float):
            return float(str(raw).strip())
        if isinstance(default, tuple):
            text = str(raw).strip()
            return tuple(int(v) for v in text.split(",") if v.strip()) if text else ()
        return str(raw).strip()
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}", key=name) from None


def _agent_defaults():
    return {f.name: f.default for f in dataclasses.fields(AgentConfig)}


def parse_cell(text, key="env.goal"):
    try:
        x, y = (int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"{key}: expected 'x,y', got {text!r}", key=key) from None
    return x, y


def parse_cells(text, key="env.traps"):
    return [parse_cell(part, key) for part in text.split(";") if part.strip()]


def load_config(path=None, overrides=None, base=None):
    """Build a validated :class:`RunConfig` from an optional file plus overrides.

    ``overrides`` and ``base`` map ``"section.key"`` to a raw value; ``base``
    replaces built-in defaults and is itself overridden by the file.
    """
    values = {"env": dict(ENV_DEFAULTS), "agent": {}, "run": dict(RUN_DEFAULTS), "diagnostics": dict(DIAG_DEFAULTS)}
    defaults = {"env": ENV_DEFAULTS, "agent": _agent_defaults(), "run": RUN_DEFAULTS, "diagnostics": DIAG_DEFAULTS}

    def put(section, key, raw):
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", key=section)
        if key not in defaults[section]:
            raise ConfigError(f"{section}.{key}: unknown key", key=f"{section}.{key}")
        values[section][key] = _coerce(section, key, raw, defaults[section][key])

    for dotted, raw in (base or {}).items():
        section, _, key = dotted.partition(".")
        put(section, key, raw)
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"--config: cannot read {path}: {exc}", key="--config") from None
        except configparser.Error as exc:
            raise ConfigError(f"--config: malformed file {path}: {exc}", key="--config") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                put(section, key, raw)
    for dotted, raw in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        put(section, key, raw)

    agent_kwargs = values["agent"]
    agent_kwargs.setdefault("record_tv", values["diagnostics"]["record_tv"])
    agent_kwargs.setdefault("record_variance", values["diagnostics"]["record_variance"])
    try:
        agent = AgentConfig(**agent_kwargs)
    except ConfigError as exc:
        raise ConfigError(f"agent.{exc}", key=f"agent.{exc.key}") from None
    cfg = RunConfig(values["env"], agent, values["run"], values["diagnostics"])
    validate(cfg)
    return cfg


def validate(cfg):
    env = cfg.env
    if env["name"] not in ("chain", "gridworld"):
        raise ConfigError(f"env.name: unknown environment {env['name']!r}", key="env.name")
    if env["name"] == "chain" and env["n_states"] < 3:
        raise ConfigError("env.n_states: need at least 3 states", key="env.n_states")
    if not 0.0 <= env["slip_prob"] <= 0.5:
        raise ConfigError("env.slip_prob: must be in [0, 0.5]", key="env.slip_prob")
    if env["episode_cap"] < 1:
        raise ConfigError("env.episode_cap: must be >= 1", key="env.episode_cap")
    if env["name"] == "gridworld":
        if env["width"] < 1 or env["height"] < 1:
            raise ConfigError("env.width: grid dimensions must be >= 1", key="env.width")
        goal = parse_cell(env["goal"], "env.goal")
        traps = parse_cells(env["traps"], "env.traps")
        start = parse_cell(env["start"], "env.start")
        for key, cells in (("env.goal", [goal]), ("env.traps", traps), ("env.start", [start])):
            for x, y in cells:
                if not (0 <= x < env["width"] and 0 <= y < env["height"]):
                    raise ConfigError(f"{key}: cell {x},{y} lies outside the grid", key=key)
        if goal in traps:
            raise ConfigError("env.traps: a trap sits on the goal", key="env.traps")
        if start == goal or start in traps:
            raise ConfigError("env.start: start must not be the goal or a trap", key="env.start")
    if cfg.run["steps"] < 0:
        raise ConfigError("run.steps: must be >= 0", key="run.steps")
    if not 0 <= cfg.run["seed"] < 2**64:
        raise ConfigError("run.seed: must be a 64-bit unsigned integer", key="run.seed")
    if cfg.diagnostics["format"] not in ("csv", "json"):
        raise ConfigError("diagnostics.format: must be csv or json", key="diagnostics.format")
    if cfg.diagnostics["tv_bins"] < 1:
        raise ConfigError("diagnostics.tv_bins: must be >= 1", key="diagnostics.tv_bins")
    if not 0 < cfg.diagnostics["window_fraction"] <= 1:
        raise ConfigError("diagnostics.window_fraction: must be in (0, 1]", key="diagnostics.window_fraction")
    try:
        make_env(cfg)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"env: {exc}", key="env") from None


def make_env(cfg, seed=None):
    env = cfg.env
    if env["name"] == "chain":
        return chain_mdp(env["n_states"], env["slip_prob"], step_penalty=env["step_penalty"], seed=seed,
                         episode_cap=env["episode_cap"])
    return gridworld(
        env["width"],
        env["height"],
        parse_cell(env["goal"]),
        parse_cells(env["traps"]),
        start=parse_cell(env["start"], "env.start"),
        seed=seed,
        episode_cap=env["episode_cap"],
    )


def tv_bin_edges(cfg):
    return np.linspace(0.0, 2.0, cfg.diagnostics["tv_bins"] + 1)
