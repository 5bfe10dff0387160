"""Experiment configuration: one flat key-value document.

Keys use dotted section names (``fed.rounds = 15``) and map one-to-one to
CLI flags. Every key has a default, unknown keys are rejected by name, and
the fully resolved document is echoed into each run's summary so any output
is reproducible from (config, seed) alone.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

from .data import PartitionSpec
from .errors import ConfigError
from .federation import MODES, FedConfig, TrainConfig

_CLI_MODES = MODES + ("all",)


def _parse_hidden(text: str) -> Tuple[int, ...]:
    try:
        dims = tuple(int(part) for part in str(text).split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"model.hidden must be comma-separated integers, got {text!r}") from None
    if not dims or any(d < 1 for d in dims):
        raise ConfigError(f"model.hidden needs positive layer sizes, got {text!r}")
    return dims


# key -> (parser, default, help)
SCHEMA: Dict[str, tuple] = {
    "fed.mode": (str, "fedcompress", f"training mode, one of {', '.join(MODES)}"),
    "fed.rounds": (int, 15, "federated rounds"),
    "fed.clients": (int, 10, "total clients"),
    "fed.participants": (int, 10, "clients sampled per round"),
    "train.lr_client": (float, 0.05, "client learning rate"),
    "train.lr_server": (float, 0.05, "server learning rate"),
    "train.epochs_client": (int, 10, "local epochs per round"),
    "train.epochs_server": (int, 10, "self-compression epochs per round"),
    "train.batch_size": (int, 32, "mini-batch size"),
    "train.beta_client": (float, 1.0, "clustering weight after warm-up"),
    "train.beta_server": (float, 1.0, "clustering weight during self-compression"),
    "train.beta_warmup_epochs": (int, 2, "plain-SGD epochs before clustering kicks in"),
    "train.temperature": (float, 3.0, "distillation temperature"),
    "cluster.min": (int, 4, "initial / minimum cluster count"),
    "cluster.max": (int, 32, "maximum cluster count"),
    "cluster.window": (int, 3, "moving-average window of the controller"),
    "cluster.patience": (int, 3, "rounds of stagnation before raising the count"),
    "cluster.tolerance": (float, 1e-3, "improvement below this counts as stagnation"),
    "cluster.fixed": (int, 15, "cluster count of the fixed-cluster baseline"),
    "part.size_cv": (float, 0.25, "coefficient of variation of client shard sizes"),
    "part.alpha": (float, 1.0, "Dirichlet concentration of per-client label mix"),
    "part.unlabeled_fraction": (float, 0.2, "fraction of each shard kept unlabeled"),
    "data.classes": (int, 8, "number of classes"),
    "data.dim": (int, 16, "input dimensionality"),
    "data.samples": (int, 4000, "training samples"),
    "data.test_samples": (int, 1000, "held-out test samples"),
    "data.spread": (float, 1.0, "within-class standard deviation"),
    "data.center_radius": (float, 4.0, "radius of the class-center hypersphere"),
    "model.hidden": (_parse_hidden, "32", "hidden layer sizes, comma separated"),
    "ood.samples": (int, 512, "server-side distillation samples"),
    "seed": (int, 0, "master seed"),
    "trials": (int, 1, "trials averaged over consecutive seeds"),
    "workers": (int, 1, "threads for intra-round client updates"),
    "out.dir": (str, None, "output directory (default $FEDCOMPRESS_OUT or ./out)"),
}


@dataclass
class ExperimentConfig:
    """Fully resolved experiment settings (one attribute per schema key)."""

    mode: str
    rounds: int
    clients: int
    participants: int
    lr_client: float
    lr_server: float
    epochs_client: int
    epochs_server: int
    batch_size: int
    beta_client: float
    beta_server: float
    beta_warmup_epochs: int
    temperature: float
    cluster_min: int
    cluster_max: int
    cluster_window: int
    cluster_patience: int
    cluster_tolerance: float
    cluster_fixed: int
    size_cv: float
    alpha: float
    unlabeled_fraction: float
    classes: int
    dim: int
    samples: int
    test_samples: int
    spread: float
    center_radius: float
    hidden: Tuple[int, ...]
    ood_samples: int
    seed: int
    trials: int
    workers: int
    out_dir: str

    def echo(self) -> List[str]:
        """Resolved document, one ``key = value`` line per schema key.

        ``out.dir`` is omitted: it changes no result, and summaries must be
        reproducible from (config, seed) regardless of where they land.
        """
        values = _config_to_values(self)
        return [f"{key} = {values[key]}" for key in SCHEMA if key != "out.dir"]

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr_client=self.lr_client,
            lr_server=self.lr_server,
            epochs_client=self.epochs_client,
            epochs_server=self.epochs_server,
            batch_size=self.batch_size,
            beta_client=self.beta_client,
            beta_server=self.beta_server,
            beta_warmup_epochs=self.beta_warmup_epochs,
            temperature=self.temperature,
        )

    def fed_config(self, mode: Optional[str] = None, seed: Optional[int] = None) -> FedConfig:
        return FedConfig(
            total_clients=self.clients,
            participants=self.participants,
            rounds=self.rounds,
            seed=self.seed if seed is None else seed,
            mode=self.mode if mode is None else mode,
            fixed_cluster_count=self.cluster_fixed,
            workers=self.workers,
        )

    def partition_spec(self, seed: int) -> PartitionSpec:
        return PartitionSpec(
            clients=self.clients,
            size_cv=self.size_cv,
            alpha=self.alpha,
            unlabeled_fraction=self.unlabeled_fraction,
            seed=seed,
        )


_KEY_TO_ATTR = {
    "fed.mode": "mode",
    "fed.rounds": "rounds",
    "fed.clients": "clients",
    "fed.participants": "participants",
    "train.lr_client": "lr_client",
    "train.lr_server": "lr_server",
    "train.epochs_client": "epochs_client",
    "train.epochs_server": "epochs_server",
    "train.batch_size": "batch_size",
    "train.beta_client": "beta_client",
    "train.beta_server": "beta_server",
    "train.beta_warmup_epochs": "beta_warmup_epochs",
    "train.temperature": "temperature",
    "cluster.min": "cluster_min",
    "cluster.max": "cluster_max",
    "cluster.window": "cluster_window",
    "cluster.patience": "cluster_patience",
    "cluster.tolerance": "cluster_tolerance",
    "cluster.fixed": "cluster_fixed",
    "part.size_cv": "size_cv",
    "part.alpha": "alpha",
    "part.unlabeled_fraction": "unlabeled_fraction",
    "data.classes": "classes",
    "data.dim": "dim",
    "data.samples": "samples",
    "data.test_samples": "test_samples",
    "data.spread": "spread",
    "data.center_radius": "center_radius",
    "model.hidden": "hidden",
    "ood.samples": "ood_samples",
    "seed": "seed",
    "trials": "trials",
    "workers": "workers",
    "out.dir": "out_dir",
}


def _config_to_values(cfg: ExperimentConfig) -> Dict[str, str]:
    out = {}
    for key, attr in _KEY_TO_ATTR.items():
        value = getattr(cfg, attr)
        if key == "model.hidden":
            value = ",".join(str(d) for d in value)
        out[key] = str(value)
    return out


def read_config_file(path: str) -> Dict[str, str]:
    """Read ``key = value`` lines; '#' starts a comment, blanks are skipped."""
    entries: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in entries:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            entries[key] = value
    return entries


def parse_config(
    path: Optional[str] = None, overrides: Optional[Mapping[str, str]] = None
) -> ExperimentConfig:
    """Resolve a config document plus overrides into a validated config.

    Override values (CLI flags) take precedence over file values, which take
    precedence over defaults. Unknown keys and out-of-range values are
    rejected with the offending key named.
    """
    raw: Dict[str, str] = {}
    if path is not None:
        raw.update(read_config_file(path))
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value

    values: Dict[str, object] = {}
    for key, text in raw.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown configuration key {key!r}")
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(text)
        except ConfigError:
            raise
        except (TypeError, ValueError):
            raise ConfigError(f"invalid value for {key}: {text!r}") from None
    for key, (parser, default, _) in SCHEMA.items():
        if key not in values:
            values[key] = default if default is None else parser(default)
    if values["out.dir"] is None:
        values["out.dir"] = os.environ.get("FEDCOMPRESS_OUT", "out")

    cfg = ExperimentConfig(**{attr: values[key] for key, attr in _KEY_TO_ATTR.items()})
    _validate(cfg)
    return cfg


def _positive(cfg: ExperimentConfig, attr: str, key: str) -> None:
    if getattr(cfg, attr) <= 0:
        raise ConfigError(f"{key} must be positive, got {getattr(cfg, attr)}")


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.mode not in MODES:
        raise ConfigError(f"fed.mode must be one of {MODES}, got {cfg.mode!r}")
    for attr, key in [
        ("rounds", "fed.rounds"), ("clients", "fed.clients"), ("participants", "fed.participants"),
        ("lr_client", "train.lr_client"), ("lr_server", "train.lr_server"),
        ("epochs_client", "train.epochs_client"), ("batch_size", "train.batch_size"),
        ("temperature", "train.temperature"), ("cluster_min", "cluster.min"),
        ("cluster_window", "cluster.window"), ("cluster_patience", "cluster.patience"),
        ("cluster_fixed", "cluster.fixed"), ("alpha", "part.alpha"),
        ("dim", "data.dim"), ("samples", "data.samples"), ("spread", "data.spread"),
        ("center_radius", "data.center_radius"), ("ood_samples", "ood.samples"),
        ("trials", "trials"), ("workers", "workers"),
    ]:
        _positive(cfg, attr, key)
    if cfg.epochs_server < 0:
        raise ConfigError(f"train.epochs_server must be >= 0, got {cfg.epochs_server}")
    if cfg.beta_client < 0 or cfg.beta_server < 0:
        raise ConfigError("train.beta_client and train.beta_server must be >= 0")
    if not 0 <= cfg.beta_warmup_epochs < cfg.epochs_client:
        raise ConfigError(
            f"train.beta_warmup_epochs ({cfg.beta_warmup_epochs}) must be < "
            f"train.epochs_client ({cfg.epochs_client})"
        )
    if cfg.cluster_min > cfg.cluster_max:
        raise ConfigError(
            f"cluster.min ({cfg.cluster_min}) must not exceed cluster.max ({cfg.cluster_max})"
        )
    if cfg.cluster_tolerance < 0:
        raise ConfigError(f"cluster.tolerance must be >= 0, got {cfg.cluster_tolerance}")
    if not 1 <= cfg.participants <= cfg.clients:
        raise ConfigError(
            f"fed.participants ({cfg.participants}) must lie in [1, fed.clients={cfg.clients}]"
        )
    if cfg.size_cv < 0:
        raise ConfigError(f"part.size_cv must be >= 0, got {cfg.size_cv}")
    if not 0.0 < cfg.unlabeled_fraction < 1.0:
        raise ConfigError(
            f"part.unlabeled_fraction must lie in (0, 1), got {cfg.unlabeled_fraction}"
        )
    if cfg.classes < 2:
        raise ConfigError(f"data.classes must be >= 2, got {cfg.classes}")
    if cfg.samples < 2 * cfg.clients:
        raise ConfigError(
            f"data.samples ({cfg.samples}) must cover two samples per client ({cfg.clients} clients)"
        )
    if cfg.test_samples < cfg.classes:
        raise ConfigError(
            f"data.test_samples ({cfg.test_samples}) must be >= data.classes ({cfg.classes})"
        )
    if cfg.seed < 0:
        raise ConfigError(f"seed must be >= 0, got {cfg.seed}")
