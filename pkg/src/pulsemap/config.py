"""Run configuration: a flat JSON schema with validated, paper-default values.

Unknown keys are rejected by name. The drive bounds and detunings are quoted
in GHz and converted to rad/ns with a 2*pi factor by default; set
`drive_two_pi` to false to read them as plain rad/ns instead (the quoted
numbers are ambiguous on this point, so the conversion is one switch).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass

from .nv_model import NvParams

TWO_PI = 2.0 * math.pi

ENVS = ("toy", "toy_shifted", "nv_closed", "nv_open")
ENCODINGS = ("raw", "periodic")


class ConfigError(ValueError):
    """A config file violates the schema."""


@dataclass
class RunConfig:
    # Environment / physics.
    env: str = "nv_closed"
    n_steps: int = 9
    omega_bound_ghz: float = 20.0
    delta1_ghz: float = 50.0
    delta2_ghz: float = 0.0
    b_ext: float = 0.15
    t_min: float = 0.2
    t_max: float = 0.8
    drive_two_pi: bool = True
    toy_full_sphere: bool = False
    # RL hyperparameters (paper values where the paper states one).
    seed: int = 0
    neurons: int = 600
    episodes: int = 800000
    lr: float = 1e-5
    clip_eps: float = 0.05
    gamma: float = 1.0
    eta: float = 0.5
    penalty_factor: float = 0.2
    batch_episodes: int = 32
    inner_updates: int = 10
    target_kl: float = 0.015
    target_encoding: str = "raw"
    sigma_init: float = 0.5
    advantage_norm: bool = True
    buffer_retain_batches: int = 1
    sampler_grid: int = 20
    sampler_window: int = 10000
    curve_bin: int = 100
    checkpoint_every: int = 0
    out_dir: str = "runs"

    def validate(self) -> "RunConfig":
        if self.env not in ENVS:
            raise ConfigError(f"env must be one of {ENVS}, got {self.env!r}")
        if self.target_encoding not in ENCODINGS:
            raise ConfigError(f"target_encoding must be one of {ENCODINGS}, got {self.target_encoding!r}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"eta must be in [0, 1], got {self.eta}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.clip_eps <= 0:
            raise ConfigError(f"clip_eps must be > 0, got {self.clip_eps}")
        if self.episodes < 1:
            raise ConfigError(f"episodes must be >= 1, got {self.episodes}")
        if self.neurons < 1:
            raise ConfigError(f"neurons must be >= 1, got {self.neurons}")
        if self.n_steps < 1:
            raise ConfigError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.batch_episodes < 1:
            raise ConfigError(f"batch_episodes must be >= 1, got {self.batch_episodes}")
        if self.inner_updates < 1:
            raise ConfigError(f"inner_updates must be >= 1, got {self.inner_updates}")
        if self.buffer_retain_batches < 1:
            raise ConfigError(f"buffer_retain_batches must be >= 1, got {self.buffer_retain_batches}")
        if not 0 < self.t_min < self.t_max:
            raise ConfigError(f"need 0 < t_min < t_max, got ({self.t_min}, {self.t_max})")
        if self.omega_bound_ghz <= 0:
            raise ConfigError(f"omega_bound_ghz must be > 0, got {self.omega_bound_ghz}")
        if self.sigma_init <= 0:
            raise ConfigError(f"sigma_init must be > 0, got {self.sigma_init}")
        if self.sampler_grid < 1 or self.sampler_window < 1 or self.curve_bin < 1:
            raise ConfigError("sampler_grid, sampler_window and curve_bin must be >= 1")
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if self.checkpoint_every and self.checkpoint_every % self.batch_episodes != 0:
            raise ConfigError(
                "checkpoint_every must be a multiple of batch_episodes "
                f"({self.checkpoint_every} vs {self.batch_episodes}); checkpoints "
                "land on update boundaries so resumed runs match uninterrupted ones"
            )
        if self.penalty_factor < 0:
            raise ConfigError(f"penalty_factor must be >= 0, got {self.penalty_factor}")
        if self.target_kl < 0:
            raise ConfigError(f"target_kl must be >= 0 (0 disables), got {self.target_kl}")
        return self

    def nv_params(self) -> NvParams:
        scale = TWO_PI if self.drive_two_pi else 1.0
        om = scale * self.omega_bound_ghz
        return NvParams(
            b_ext=self.b_ext,
            delta1=scale * self.delta1_ghz,
            delta2=scale * self.delta2_ghz,
            omega_bounds=(-om, om),
            t_bounds=(self.t_min, self.t_max),
            n_steps=self.n_steps,
            mode="open" if self.env == "nv_open" else "closed",
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def config_from_dict(data: dict) -> RunConfig:
    known = {f.name: f for f in dataclasses.fields(RunConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    kwargs = {}
    for key, value in data.items():
        ftype = known[key].type
        if ftype == "int" and isinstance(value, bool):
            raise ConfigError(f"config key {key!r} must be an integer, got {value!r}")
        if ftype == "int" and not isinstance(value, int):
            raise ConfigError(f"config key {key!r} must be an integer, got {value!r}")
        if ftype == "float" and not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} must be a number, got {value!r}")
        if ftype == "float":
            value = float(value)
        if ftype == "bool" and not isinstance(value, bool):
            raise ConfigError(f"config key {key!r} must be a boolean, got {value!r}")
        if ftype == "str" and not isinstance(value, str):
            raise ConfigError(f"config key {key!r} must be a string, got {value!r}")
        kwargs[key] = value
    return RunConfig(**kwargs).validate()


def load_config(path: str) -> RunConfig:
    """Parse and validate a JSON config file; missing keys take defaults."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return config_from_dict(data)
