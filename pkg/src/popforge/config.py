"""Experiment configuration files: ``key = value`` lines, ``#`` comments.

Unknown keys and malformed values are rejected with the offending line
number.  ``serialize_config`` writes a file that parses back to an equal
configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .envs import ENV_NAMES
from .optim import OptimizerKind, SamplingBand

MODES = ("single", "pbt", "sweep", "grid")
RETENTIONS = ("none", "last", "all")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mode: str = "single"
    env: str = "pointmass"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    out: str = "runs/out"
    # single-agent / grid-cell agent
    optimizer: OptimizerKind = OptimizerKind.ADAM
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    batch_size: int = 256
    damping: float | None = None
    train_steps: int = 100_000
    eval_steps: int = 20_000
    # networks / replay
    hidden: tuple[int, int] = (64, 64)
    warmup_steps: int = 1_000
    buffer_capacity: int = 200_000
    # population
    population_size: int = 8
    composition: dict[OptimizerKind, int] | None = None
    perturbation_interval: int = 10_000
    intervals: int = 20
    step_adjusted: bool = False
    exploit_fraction: float = 0.2
    batch_min: int = 64
    batch_max: int = 512
    checkpoint_retention: str = "last"
    kfac_decay: float = 0.95
    # initial-sampling bands (per optimizer kind)
    batch_choices: tuple[int, ...] = (128, 256)
    adam_lr_low: float = 1e-4
    adam_lr_high: float = 1e-3
    ggn_lr_low: float = 1e-4
    ggn_lr_high: float = 1e-3
    ggn_damping_low: float = 1e-3
    ggn_damping_high: float = 1.0
    kfac_lr_low: float = 1e-4
    kfac_lr_high: float = 1e-3
    kfac_damping_low: float = 1.0
    kfac_damping_high: float = 10.0
    # sweep / grid
    sweep_sizes: tuple[int, ...] = (4, 8, 16)
    grid_lr: tuple[float, ...] = (1e-4, 3e-4, 1e-3)
    grid_damping: tuple[float, ...] = (0.1, 1.0, 10.0)
    baseline: str = ""

    def resolved_composition(self) -> dict[OptimizerKind, int]:
        if self.composition is None:
            return {OptimizerKind.ADAM: self.population_size}
        return dict(self.composition)

    def bands(self) -> dict[OptimizerKind, SamplingBand]:
        return {
            OptimizerKind.ADAM: SamplingBand(
                self.adam_lr_low, self.adam_lr_high, self.batch_choices
            ),
            OptimizerKind.DIAG_GGN: SamplingBand(
                self.ggn_lr_low,
                self.ggn_lr_high,
                self.batch_choices,
                self.ggn_damping_low,
                self.ggn_damping_high,
            ),
            OptimizerKind.KFAC: SamplingBand(
                self.kfac_lr_low,
                self.kfac_lr_high,
                self.batch_choices,
                self.kfac_damping_low,
                self.kfac_damping_high,
            ),
        }


def _parse_bool(text: str) -> bool:
    key = text.strip().lower()
    if key in ("true", "1", "yes", "on"):
        return True
    if key in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


def _parse_composition(text: str) -> dict[OptimizerKind, int]:
    comp: dict[OptimizerKind, int] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise ValueError(f"expected kind:count, got {part!r}")
        name, count_text = part.split(":", 1)
        kind = OptimizerKind.parse(name)
        count = int(count_text)
        if count <= 0:
            raise ValueError(f"count for {kind} must be positive")
        if kind in comp:
            raise ValueError(f"duplicate kind {kind}")
        comp[kind] = count
    if not comp:
        raise ValueError("empty composition")
    return comp


def composition_label(comp: dict[OptimizerKind, int]) -> str:
    """Canonical composition string: kinds in enum order, zero counts omitted."""
    parts = [f"{kind.value}:{comp[kind]}" for kind in OptimizerKind if comp.get(kind)]
    return ",".join(parts)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, OptimizerKind):
        return value.value
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, dict):
        return composition_label(value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse_choice(choices: tuple[str, ...]):
    def parse(text: str) -> str:
        value = text.strip()
        if value not in choices:
            raise ValueError(f"expected one of {choices}, got {value!r}")
        return value

    return parse


# key -> (parser, help text); defaults live on the dataclass
_KEYS = {
    "mode": (_parse_choice(MODES), "experiment mode"),
    "env": (_parse_choice(ENV_NAMES), "environment name"),
    "seeds": (_parse_int_list, "comma-separated run seeds"),
    "out": (str.strip, "output directory"),
    "optimizer": (OptimizerKind.parse, "optimizer for single/grid modes"),
    "lr_actor": (float, "actor learning rate (single/grid)"),
    "lr_critic": (float, "critic learning rate (single/grid)"),
    "batch_size": (int, "minibatch size (single/grid)"),
    "damping": (float, "damping for second-order optimizers"),
    "train_steps": (int, "environment steps per single-agent run"),
    "eval_steps": (int, "greedy evaluation steps after training"),
    "hidden": (_parse_int_list, "hidden layer sizes, e.g. 64,64"),
    "warmup_steps": (int, "uniform-random warm-up steps before learning"),
    "buffer_capacity": (int, "replay buffer capacity"),
    "population_size": (int, "number of population members"),
    "composition": (_parse_composition, "e.g. adam:6,kfac:2 (must sum to size)"),
    "perturbation_interval": (int, "environment steps between exploit rounds"),
    "intervals": (int, "number of perturbation intervals"),
    "step_adjusted": (_parse_bool, "runtime-normalized gradient schedule"),
    "exploit_fraction": (float, "top/bottom quantile for exploit (0, 0.5]"),
    "batch_min": (int, "lower batch-size clamp for perturbation"),
    "batch_max": (int, "upper batch-size clamp for perturbation"),
    "checkpoint_retention": (_parse_choice(RETENTIONS), "none | last | all"),
    "kfac_decay": (float, "EMA decay for Kronecker factor statistics"),
    "batch_choices": (_parse_int_list, "initial batch-size choices"),
    "adam_lr_low": (float, "Adam initial lr band, low"),
    "adam_lr_high": (float, "Adam initial lr band, high"),
    "ggn_lr_low": (float, "Diag-GGN initial lr band, low"),
    "ggn_lr_high": (float, "Diag-GGN initial lr band, high"),
    "ggn_damping_low": (float, "Diag-GGN initial damping band, low"),
    "ggn_damping_high": (float, "Diag-GGN initial damping band, high"),
    "kfac_lr_low": (float, "K-FAC initial lr band, low"),
    "kfac_lr_high": (float, "K-FAC initial lr band, high"),
    "kfac_damping_low": (float, "K-FAC initial damping band, low (>= 1)"),
    "kfac_damping_high": (float, "K-FAC initial damping band, high"),
    "sweep_sizes": (_parse_int_list, "population sizes for sweep mode"),
    "grid_lr": (_parse_float_list, "learning-rate axis for grid mode"),
    "grid_damping": (_parse_float_list, "damping axis for grid mode"),
    "baseline": (str.strip, "baseline composition label for summary deltas"),
}

# convenience keys that fan out to several fields
_ALIASES = {"lr": ("lr_actor", "lr_critic")}


def config_help() -> str:
    default = ExperimentConfig()
    lines = ["configuration keys (key = value per line, # comments):"]
    for key, (_, help_text) in _KEYS.items():
        value = getattr(default, key)
        shown = "unset" if value is None else _fmt(value)
        lines.append(f"  {key:<22} {help_text} [default: {shown}]")
    lines.append("  lr                     shorthand setting lr_actor and lr_critic")
    return "\n".join(lines)


def parse_config(text: str) -> ExperimentConfig:
    """Parse config text; raises ConfigError naming the offending line."""
    config = ExperimentConfig()
    key_lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value_text = (part.strip() for part in line.split("=", 1))
        if key in _ALIASES:
            targets = _ALIASES[key]
        elif key in _KEYS:
            targets = (key,)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        for target in targets:
            parser, _ = _KEYS[target]
            try:
                value = parser(value_text)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
            setattr(config, target, value)
            key_lines[target] = lineno
    validate_config(config, key_lines)
    return config


def validate_config(config: ExperimentConfig, key_lines: dict[str, int] | None = None) -> None:
    key_lines = key_lines or {}

    def where(key: str) -> str:
        return f"line {key_lines[key]}: " if key in key_lines else ""

    if not config.seeds:
        raise ConfigError(where("seeds") + "seed list must not be empty")
    if len(config.hidden) != 2:
        raise ConfigError(where("hidden") + "hidden must give exactly two layer sizes")
    if config.train_steps <= 0 or config.eval_steps <= 0:
        raise ConfigError("step budgets must be positive")
    if config.perturbation_interval <= 0 or config.intervals <= 0:
        raise ConfigError("interval settings must be positive")
    if not 0.0 < config.exploit_fraction <= 0.5:
        raise ConfigError(
            where("exploit_fraction") + "exploit_fraction must be in (0, 0.5]"
        )
    if config.batch_min < 1 or config.batch_min > config.batch_max:
        raise ConfigError("batch bounds must satisfy 1 <= batch_min <= batch_max")
    if config.composition is not None:
        total = sum(config.composition.values())
        if total != config.population_size:
            raise ConfigError(
                where("composition")
                + f"composition sums to {total}, population_size is "
                f"{config.population_size}"
            )
    if config.mode in ("single", "grid"):
        from .optim import HyperparamSet  # local to avoid cycle at import time

        if config.mode == "single":
            hyper = HyperparamSet(
                config.lr_actor,
                config.lr_critic,
                config.batch_size,
                config.damping,
            )
            try:
                hyper.validate(config.optimizer, (config.batch_min, config.batch_max))
            except ValueError as exc:
                raise ConfigError(where("damping") + str(exc)) from exc
    if config.kfac_damping_low < 1.0:
        raise ConfigError(
            where("kfac_damping_low") + "K-FAC damping band must start at >= 1.0"
        )


def serialize_config(config: ExperimentConfig) -> str:
    lines = []
    for key in _KEYS:
        value = getattr(config, key)
        if value is None:
            continue
        lines.append(f"{key} = {_fmt(value)}")
    return "\n".join(lines) + "\n"


def config_from_file(path) -> ExperimentConfig:
    from pathlib import Path

    return parse_config(Path(path).read_text(encoding="utf-8"))
