"""
環境変数と実験設定ファイル（INI）の読み込み、ログ設定。

優先順位: CLI フラグ > 設定ファイル > 環境変数 > 組み込み既定値
"""
from __future__ import annotations

import configparser
import logging
import os
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Union

from dotenv import load_dotenv

from Domain.errors import ConfigError
from Domain.experiment import ExperimentConfig, TaskKind
from Domain.model_config import ModelConfig
from Domain.optim_config import OptimConfig
from Domain.strategy import StrategyConfig, StrategyKind

load_dotenv()

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def get_str_env(name: str, default: str) -> str:
    raw = os.getenv(name)
    return default if raw is None or raw == "" else raw


def get_int_env(name: str, default: int) -> int:
    """
    環境変数 name を int として読み込む。
    不正値 or 未設定の場合は default を返す。
    """
    raw = os.getenv(name)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        logger.warning("[Config] WARN: %s=%r は int 変換できないため %s を使用します", name, raw, default)
        return default


def get_bool_env(name: str, default: bool) -> bool:
    raw = os.getenv(name)
    if raw is None:
        return default
    return raw.strip().lower() in ("1", "true", "yes", "on")


def output_root() -> Path:
    return Path(get_str_env("DGST_OUTPUT_ROOT", "runs"))


def configure_logging(level: Optional[str] = None) -> None:
    level_name = (level or get_str_env("DGST_LOG_LEVEL", "INFO")).upper()
    logging.basicConfig(level=getattr(logging, level_name, logging.INFO), format=LOG_FORMAT)


# ---------------------------------------------------------------------------
# 値の変換（ファイル由来は文字列、CLI 由来は型付き）
# ---------------------------------------------------------------------------


def _as_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _as_int_tuple(value: Any) -> tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    return tuple(int(v) for v in str(value).replace(" ", "").split(",") if v)


def _as_strategies(value: Any) -> tuple[StrategyKind, ...]:
    items = value if isinstance(value, (list, tuple)) else str(value).replace(" ", "").split(",")
    return tuple(StrategyKind(v) for v in items if v)


def _as_optional_int(value: Any) -> Optional[int]:
    if value is None or str(value).strip().lower() in ("", "none", "auto"):
        return None
    return int(value)


def _as_optional_path(value: Any) -> Optional[Path]:
    if value is None or str(value).strip() == "":
        return None
    return Path(value)


_Converter = Callable[[Any], Any]

# (section, key) -> (変換, 反映先, フィールド名)
_FIELDS: dict[tuple[str, str], tuple[_Converter, str, str]] = {
    ("experiment", "task"): (TaskKind, "experiment", "task"),
    ("experiment", "shots"): (int, "experiment", "shots"),
    ("experiment", "shots_grid"): (_as_int_tuple, "experiment", "shots_grid"),
    ("experiment", "seeds"): (_as_int_tuple, "experiment", "seeds"),
    ("experiment", "split_seed"): (int, "experiment", "split_seed"),
    ("experiment", "output_dir"): (Path, "experiment", "output_dir"),
    ("experiment", "foundation"): (_as_optional_path, "experiment", "foundation"),
    ("experiment", "strategies"): (_as_strategies, "experiment", "strategies"),
    ("experiment", "gammas"): (_as_int_tuple, "experiment", "gammas"),
    ("experiment", "include_all_shot"): (_as_bool, "experiment", "include_all_shot"),
    ("experiment", "nsd_tolerance"): (float, "experiment", "nsd_tolerance"),
    ("experiment", "timing_exclusive"): (_as_bool, "experiment", "timing_exclusive"),
    ("experiment", "workers"): (int, "experiment", "workers"),
    ("data", "n_source"): (int, "experiment", "n_source"),
    ("data", "n_source_test"): (int, "experiment", "n_source_test"),
    ("data", "n_task"): (int, "experiment", "n_task"),
    ("data", "image_size"): (int, "experiment", "image_size"),
    ("data", "augment"): (_as_bool, "experiment", "augment"),
    ("model", "in_channels"): (int, "model", "in_channels"),
    ("model", "num_classes"): (int, "model", "num_classes"),
    ("model", "base_width"): (int, "model", "base_width"),
    ("model", "depth"): (int, "model", "depth"),
    ("model", "instance_norm"): (_as_bool, "model", "instance_norm"),
    ("model", "dtype"): (str, "model", "dtype"),
    ("model", "kernel_granularity"): (str, "model", "kernel_granularity"),
    ("model", "bottleneck_as_encoder"): (_as_bool, "model", "bottleneck_as_encoder"),
    ("strategy", "kind"): (StrategyKind, "strategy", "kind"),
    ("strategy", "gamma"): (int, "strategy", "gamma"),
    ("strategy", "lora_rank"): (int, "strategy", "lora_rank"),
    ("strategy", "adapter_width"): (int, "strategy", "adapter_width"),
    ("strategy", "sgst_warmup_iters"): (_as_optional_int, "strategy", "sgst_warmup_iters"),
    ("strategy", "train_bias_norm"): (_as_bool, "strategy", "train_bias_norm"),
    ("pretrain", "seed"): (int, "experiment", "pretrain_seed"),
}
for _key, _conv in (("lr0", float), ("poly_power", float), ("epochs", int), ("batch_size", int), ("momentum", float)):
    _FIELDS[("optim", _key)] = (_conv, "optim", _key)
    _FIELDS[("pretrain", _key)] = (_conv, "pretrain_optim", _key)


def read_config_file(path: Union[str, Path]) -> dict[str, str]:
    """
    INI を "section.key" -> 文字列 の平坦な dict にする。
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from e
    return {
        f"{section}.{key}": value
        for section in parser.sections()
        for key, value in parser.items(section)
    }


def load_experiment_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """
    設定ファイルと CLI 上書き（どちらも "section.key" 形式）から ExperimentConfig を組み立てる。
    不正な値・未知のキーはすべて ConfigError。
    """
    flat: dict[str, Any] = {}
    if path is not None:
        flat.update(read_config_file(path))
    flat.update({k: v for k, v in (overrides or {}).items() if v is not None})

    buckets: dict[str, dict[str, Any]] = {
        "experiment": {
            "output_dir": output_root(),
            "workers": get_int_env("DGST_WORKERS", 1),
        },
        "model": {"dtype": get_str_env("DGST_DTYPE", "float64")},
        "optim": {},
        "pretrain_optim": {},
        "strategy": {},
    }
    for dotted, raw in flat.items():
        section, _, key = dotted.partition(".")
        spec = _FIELDS.get((section, key))
        if spec is None:
            raise ConfigError(f"unknown config key {dotted!r}")
        convert, bucket, field_name = spec
        try:
            buckets[bucket][field_name] = convert(raw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{dotted}: invalid value {raw!r} ({e})") from e

    try:
        model = ModelConfig(**buckets["model"])
        optim = replace(OptimConfig.finetune_defaults(), **buckets["optim"])
        pretrain_optim = replace(OptimConfig.pretrain_defaults(), **buckets["pretrain_optim"])
        strategy = StrategyConfig(**buckets["strategy"])
        return ExperimentConfig(
            model=model,
            optim=optim,
            pretrain_optim=pretrain_optim,
            strategy=strategy,
            **buckets["experiment"],
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
