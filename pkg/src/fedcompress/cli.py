"""Command-line entry point.

Flags mirror configuration keys one-to-one (``--fed.rounds 20``); the common
ones get short aliases (``--mode``, ``--seed``, ``--out``, ``--trials``,
``--workers``). ``--mode all`` runs every mode under the same seed and emits
a comparison table against the fedavg baseline. Partial metrics are flushed
if a run dies mid-way.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Dict, List, Optional

from .config import SCHEMA, ExperimentConfig, parse_config
from .errors import FedCompressError
from .experiment import run_experiment
from .federation import MODES, RoundMetrics
from . import reporting

_ALIASES = {
    "fed.mode": "--mode",
    "seed": "--seed",
    "out.dir": "--out",
    "trials": "--trials",
    "workers": "--workers",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedcompress",
        description="Federated weight-clustering simulator with communication accounting.",
    )
    parser.add_argument("--config", metavar="PATH", help="key-value configuration file")
    parser.add_argument("--quiet", action="store_true", help="suppress per-round progress lines")
    for key, (_, default, help_text) in SCHEMA.items():
        flags = [f"--{key}"]
        if key in _ALIASES:
            flags.insert(0, _ALIASES[key])
        if key == "fed.mode":
            help_text += " (CLI also accepts 'all')"
        parser.add_argument(*flags, dest=key, metavar="V", default=None,
                            help=f"{help_text} [default: {default}]")
    return parser


def _overrides_from_args(args: argparse.Namespace) -> Dict[str, str]:
    raw = vars(args)
    return {key: raw[key] for key in SCHEMA if raw.get(key) is not None}


def _run_one(
    cfg: ExperimentConfig, mode: str, seed: int, out_dir: str, quiet: bool
) -> Dict[str, object]:
    collected: List[RoundMetrics] = []

    def on_round(m: RoundMetrics) -> None:
        collected.append(m)
        if not quiet:
            print(
                f"[{mode} seed={seed}] round {m.round:>3}  C={m.cluster_count:<3} "
                f"acc={m.accuracy:.4f}  score={m.score:.3f}  bytes={m.cumulative_bytes}",
                flush=True,
            )

    try:
        result = run_experiment(cfg, mode=mode, seed=seed, on_round=on_round)
    except Exception:
        if collected:
            os.makedirs(out_dir, exist_ok=True)
            reporting.write_metrics_csv(
                os.path.join(out_dir, f"metrics_{mode}.csv"), collected, mode, seed
            )
            print(f"flushed {len(collected)} partial rounds for mode {mode}", file=sys.stderr)
        raise
    reporting.emit_run_outputs(out_dir, result.metrics, result.summary, cfg, mode, seed)
    return result.summary


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = _overrides_from_args(args)
    requested_mode = overrides.pop("fed.mode", None)
    try:
        cfg = parse_config(args.config, overrides)
        if requested_mode is not None and requested_mode != "all":
            cfg = parse_config(args.config, {**overrides, "fed.mode": requested_mode})
        modes = list(MODES) if requested_mode == "all" else [cfg.mode]

        per_trial_rows: List[List[Dict[str, object]]] = []
        for trial in range(cfg.trials):
            seed = cfg.seed + trial
            trial_dir = cfg.out_dir if cfg.trials == 1 else os.path.join(cfg.out_dir, f"trial_{trial}")
            summaries = [_run_one(cfg, mode, seed, trial_dir, args.quiet) for mode in modes]
            if len(modes) > 1:
                rows = reporting.comparison_rows(summaries)
                reporting.write_comparison_csv(os.path.join(trial_dir, "comparison.csv"), rows)
                reporting.plot_comparison(os.path.join(trial_dir, "comparison.png"), rows)
                per_trial_rows.append(rows)

        if per_trial_rows:
            rows = (
                per_trial_rows[0]
                if len(per_trial_rows) == 1
                else reporting.average_comparison_rows(per_trial_rows)
            )
            if len(per_trial_rows) > 1:
                reporting.write_comparison_csv(os.path.join(cfg.out_dir, "comparison.csv"), rows)
                reporting.plot_comparison(os.path.join(cfg.out_dir, "comparison.png"), rows)
            print(reporting.format_comparison_table(rows))
    except FedCompressError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
