"""
few-shot ファインチューニング実験の CLI。

    python main.py pretrain   [--config exp.ini]
    python main.py finetune   --task far-domain --strategy dgst --gamma 1 --shots 5
    python main.py matrix     --config exp.ini --workers 4
    python main.py sweep-gamma --task far-domain --shots 5 --gammas 1,2,3,5,10
    python main.py ablation   --timing-exclusive
    python main.py report

終了コード: 0 成功 / 2 設定エラー / 3 実行時エラー
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Any, Optional, Sequence

from Domain.errors import ConfigError
from Services.experiment_runner import (
    build_report,
    run_ablation,
    run_finetune,
    run_matrix,
    run_pretrain,
    run_sweep_gamma,
)
from settings import configure_logging, load_experiment_config

logger = logging.getLogger("dgst")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

COMMANDS = {
    "pretrain": run_pretrain,
    "finetune": run_finetune,
    "matrix": run_matrix,
    "sweep-gamma": run_sweep_gamma,
    "ablation": run_ablation,
    "report": build_report,
}

# CLI フラグ -> 設定ファイルのキー
FLAG_KEYS = {
    "task": "experiment.task",
    "shots": "experiment.shots",
    "shots_grid": "experiment.shots_grid",
    "seeds": "experiment.seeds",
    "split_seed": "experiment.split_seed",
    "output_dir": "experiment.output_dir",
    "foundation": "experiment.foundation",
    "strategies": "experiment.strategies",
    "gammas": "experiment.gammas",
    "include_all_shot": "experiment.include_all_shot",
    "timing_exclusive": "experiment.timing_exclusive",
    "workers": "experiment.workers",
    "nsd_tolerance": "experiment.nsd_tolerance",
    "strategy": "strategy.kind",
    "gamma": "strategy.gamma",
    "lora_rank": "strategy.lora_rank",
    "adapter_width": "strategy.adapter_width",
    "sgst_warmup_iters": "strategy.sgst_warmup_iters",
    "train_bias_norm": "strategy.train_bias_norm",
    "epochs": "optim.epochs",
    "lr0": "optim.lr0",
    "batch_size": "optim.batch_size",
    "momentum": "optim.momentum",
    "pretrain_epochs": "pretrain.epochs",
    "pretrain_seed": "pretrain.seed",
    "base_width": "model.base_width",
    "depth": "model.depth",
    "dtype": "model.dtype",
    "kernel_granularity": "model.kernel_granularity",
    "image_size": "data.image_size",
    "n_task": "data.n_task",
    "n_source": "data.n_source",
    "augment": "data.augment",
}


def _bool_flag(parser: argparse.ArgumentParser, name: str, help_text: str) -> None:
    parser.add_argument(f"--{name}", dest=name.replace("-", "_"), action=argparse.BooleanOptionalAction,
                        default=None, help=help_text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgst", description="few-shot fine-tuning experiments")
    parser.add_argument("--log-level", default=None, help="DEBUG / INFO / WARNING (env: DGST_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="INI experiment config")
        p.add_argument("--output-dir", dest="output_dir", default=None, help="env: DGST_OUTPUT_ROOT")
        p.add_argument("--task", choices=["near-domain", "far-domain"], default=None)
        p.add_argument("--strategy", default=None)
        p.add_argument("--shots", type=int, default=None)
        p.add_argument("--shots-grid", dest="shots_grid", default=None, help="e.g. 5,10,20")
        p.add_argument("--gamma", type=int, default=None)
        p.add_argument("--gammas", default=None, help="e.g. 1,2,3,5,10")
        p.add_argument("--seed", type=int, default=None, help="single seed (same as --seeds N)")
        p.add_argument("--seeds", default=None, help="e.g. 0,1,2,3,4")
        p.add_argument("--split-seed", dest="split_seed", type=int, default=None)
        p.add_argument("--foundation", default=None, help="foundation checkpoint path")
        p.add_argument("--strategies", default=None, help="comma separated strategy names")
        p.add_argument("--workers", type=int, default=None, help="env: DGST_WORKERS")
        p.add_argument("--nsd-tolerance", dest="nsd_tolerance", type=float, default=None)
        p.add_argument("--lora-rank", dest="lora_rank", type=int, default=None)
        p.add_argument("--adapter-width", dest="adapter_width", type=int, default=None)
        p.add_argument("--sgst-warmup-iters", dest="sgst_warmup_iters", type=int, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr0", type=float, default=None)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
        p.add_argument("--momentum", type=float, default=None)
        p.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int, default=None)
        p.add_argument("--pretrain-seed", dest="pretrain_seed", type=int, default=None)
        p.add_argument("--base-width", dest="base_width", type=int, default=None)
        p.add_argument("--depth", type=int, default=None)
        p.add_argument("--dtype", choices=["float32", "float64"], default=None)
        p.add_argument("--kernel-granularity", dest="kernel_granularity", choices=["filter", "layer"], default=None)
        p.add_argument("--image-size", dest="image_size", type=int, default=None)
        p.add_argument("--n-task", dest="n_task", type=int, default=None)
        p.add_argument("--n-source", dest="n_source", type=int, default=None)
        _bool_flag(p, "timing-exclusive", "run cells one at a time for honest timings")
        _bool_flag(p, "include-all-shot", "add the all-shot from-scratch reference row")
        _bool_flag(p, "train-bias-norm", "also train bias/norm with lora/adapter")
        _bool_flag(p, "augment", "training-time augmentation")
    return parser


def overrides_from_args(args: argparse.Namespace) -> dict[str, Any]:
    values = vars(args)
    overrides = {key: values.get(flag) for flag, key in FLAG_KEYS.items() if values.get(flag) is not None}
    if values.get("seed") is not None:
        overrides["experiment.seeds"] = str(values["seed"])
    return overrides


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    try:
        config = load_experiment_config(args.config, overrides_from_args(args))
    except ConfigError as e:
        logger.error("[Config] %s", e)
        return EXIT_CONFIG

    try:
        result = COMMANDS[args.command](config)
    except ConfigError as e:
        logger.error("[Config] %s", e)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - 実行時エラーは終了コード 3 にまとめる
        logger.exception("[%s] failed: %s", args.command, e)
        return EXIT_RUNTIME

    summary = result.to_dict() if hasattr(result, "to_dict") else result
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
