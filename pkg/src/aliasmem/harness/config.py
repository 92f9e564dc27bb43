"""Run configuration as a flat ``key = value`` text file."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from ..errors import ConfigError

VARIANTS = ("full", "no_memory", "memory_bank", "vanilla_ssm", "no_dorsal", "no_holohead")


@dataclass
class RunConfig:
    task: str = "spatial"
    variant: str = "full"
    seed: int = 0
    # perception
    image_size: int = 32
    patch: int = 8
    width: int = 64
    code_width: int = 32
    geo_hidden: int = 32
    perception_heads: int = 4
    epipolar_epsilon: float = 1e-8
    epipolar_temperature: float = 0.05
    sequential_cross: bool = False
    # memory
    work_width: int = 64
    anchors: int = 4
    slots: int = 4
    layers: int = 2
    episodic_state: int = 16
    working_state: int = 8
    expand: int = 2
    conv: int = 4
    priors: str = "0.001,0.005,0.02,flex"
    flexible_init: float = 0.01
    router_hidden: int = 64
    use_phase: bool = True
    # heads
    holo_anchors: int = 8
    holo_compass: int = 8
    holo_hidden: int = 64
    holo_latent: int = 32
    holo_fuse: bool = False
    policy_width: int = 64
    policy_depth: int = 3
    policy_heads: int = 4
    horizon: int = 8
    flow_steps: int = 50
    # optimisation
    steps: int = 2000
    batch: int = 4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-6
    warmup: int = 100
    min_lr_ratio: float = 0.0
    clip: float = 100.0
    ema: float = 0.999
    checkpoint_every: int = 500
    # sequences and losses
    chunk_len: int = 64
    chunk_stride: int = 1
    loss_window: int = 8
    chunk_ends: str = "act"
    weight_flow: float = 1.0
    weight_holo2d: float = 0.5
    weight_holo3d: float = 0.5
    # data and evaluation
    episodes: int = 120
    data_seed: int = 0
    eval_trials: int = 50
    replan_every: int = 4
    # the 0.999 shadow still carries ~13% of the initial weights after 2K steps
    use_ema: bool = False
    act_frame_budget: int = 40
    probe_episodes: int = 120
    probe_steps: int = 200
    probe_lr: float = 0.05
    min_swaps: int = 1
    max_swaps: int = 2

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.task not in ("episodic", "spatial", "sequential"):
            raise ConfigError(f"unknown task {self.task!r}")
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type in ("int", "float") and f.name not in ("seed", "data_seed", "min_lr_ratio",
                                                          "weight_decay", "beta1", "beta2", "ema",
                                                          "weight_flow", "weight_holo2d", "weight_holo3d"):
                if v <= 0:
                    raise ConfigError(f"{f.name} must be positive, got {v}")
        if self.chunk_ends not in ("act", "any"):
            raise ConfigError(f"chunk_ends must be 'act' or 'any', got {self.chunk_ends!r}")
        if self.chunk_len < self.loss_window:
            raise ConfigError("chunk_len must be at least loss_window")
        if self.width % self.perception_heads or self.policy_width % self.policy_heads:
            raise ConfigError("widths must be divisible by their head counts")
        self.prior_values()

    def prior_values(self) -> tuple:
        out = []
        for tok in self.priors.split(","):
            tok = tok.strip()
            if tok == "flex":
                out.append(None)
                continue
            try:
                out.append(float(tok))
            except ValueError:
                raise ConfigError(f"bad temporal prior {tok!r}") from None
        if len(out) != self.slots:
            raise ConfigError(f"{len(out)} temporal priors for {self.slots} slots")
        return tuple(out)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"


def _coerce(name: str, kind: str, raw: str):
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"config key {name}: cannot parse {raw!r} as {kind}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    parser.read_string("[run]\n" + text)
    known = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for key, raw in parser["run"].items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, known[key], raw)
    return (base or RunConfig()).replace(**values)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())
