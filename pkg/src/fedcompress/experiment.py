"""End-to-end experiment assembly: data, partition, model, rounds, summary.

All randomness derives from the run seed through tagged subsequences, so two
runs of the same (config, seed) produce identical metrics regardless of mode
ordering or thread count. Runs differing only in mode share the dataset,
partition, initial model, and OOD set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from . import codec
from .config import ExperimentConfig
from .data import make_blobs, make_ood, partition, train_test_split
from .federation import (
    ControllerState,
    RoundMetrics,
    ServerState,
    fedavg_reference_bytes,
    run_rounds,
)
from .nn import init_model

_TAG_DATA = 11
_TAG_SPLIT = 12
_TAG_PARTITION = 13
_TAG_MODEL = 14
_TAG_OOD = 15


def _derived_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


@dataclass
class ExperimentResult:
    mode: str
    seed: int
    metrics: List[RoundMetrics]
    summary: Dict[str, object]


def run_experiment(
    cfg: ExperimentConfig,
    mode: Optional[str] = None,
    seed: Optional[int] = None,
    on_round: Optional[Callable[[RoundMetrics], None]] = None,
) -> ExperimentResult:
    """Run one mode for the configured number of rounds.

    ``mode`` and ``seed`` override the config's values so one config can
    drive baseline comparisons and multi-trial averaging.
    """
    fed_cfg = cfg.fed_config(mode=mode, seed=seed)
    run_seed = fed_cfg.seed

    full = make_blobs(
        cfg.classes, cfg.dim, cfg.samples + cfg.test_samples, cfg.spread,
        seed=_derived_seed(run_seed, _TAG_DATA), center_radius=cfg.center_radius,
    )
    train, test = train_test_split(full, cfg.test_samples, seed=_derived_seed(run_seed, _TAG_SPLIT))
    clients = partition(train, cfg.partition_spec(seed=_derived_seed(run_seed, _TAG_PARTITION)))
    lo, hi = float(train.inputs.min()), float(train.inputs.max())
    ood = make_ood(cfg.dim, cfg.ood_samples, seed=_derived_seed(run_seed, _TAG_OOD), low=lo, high=hi)
    model = init_model((cfg.dim, *cfg.hidden, cfg.classes), seed=_derived_seed(run_seed, _TAG_MODEL))

    controller = ControllerState(
        cluster_count=cfg.cluster_min,
        minimum=cfg.cluster_min,
        maximum=cfg.cluster_max,
        window=cfg.cluster_window,
        patience=cfg.cluster_patience,
        tolerance=cfg.cluster_tolerance,
    )
    server = ServerState(
        model=model,
        ood=ood,
        controller=controller,
        train_cfg=cfg.train_config(),
        fed_cfg=fed_cfg,
        eval_inputs=test.inputs,
        eval_labels=test.labels,
    )
    server, metrics = run_rounds(server, clients, on_round=on_round)

    reference = fedavg_reference_bytes(model.dims, fed_cfg)
    total = server.total_upstream + server.total_downstream
    last = metrics[-1]
    summary: Dict[str, object] = {
        "mode": fed_cfg.mode,
        "seed": run_seed,
        "rounds": fed_cfg.rounds,
        "final_accuracy": last.accuracy,
        "final_val_accuracy": last.val_accuracy,
        "final_score": last.score,
        "final_cluster_count": last.cluster_count,
        "final_mcr": last.mcr,
        "cumulative_upstream_bytes": server.total_upstream,
        "cumulative_downstream_bytes": server.total_downstream,
        "cumulative_bytes": total,
        "fedavg_reference_bytes": reference,
        "ccr": reference / total,
        "model_params": model.n_params,
        "raw_model_bytes": codec.raw_nbytes(model.dims),
    }
    return ExperimentResult(mode=fed_cfg.mode, seed=run_seed, metrics=metrics, summary=summary)
