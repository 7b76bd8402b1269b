from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Union

from Domain.errors import (
    CheckpointCorruptError,
    DigestMismatchError,
    DTypeMismatchError,
)
from Domain.model_config import ModelConfig
from Network.registry import registry_digest
from Network.unet import Model, build_unet
from Repository.archive import NamedTensors, read_archive, write_archive
from Services.structural import inject_from_provenance

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
CHECKPOINT_SUFFIX = ".dgst"


def checkpoint_archive(model: Model) -> NamedTensors:
    """
    モデル → アーカイブ。テンソルはレジストリ順、名前はパラメータ名。
    """
    return NamedTensors(
        tensors=[(m.name, model.params[m.id]) for m in model.registry],
        metadata={
            "format": CHECKPOINT_FORMAT,
            "model_config": model.config.to_dict(),
            "seed": model.seed,
            "registry_digest": registry_digest(model.registry),
            "provenance": model.provenance,
        },
    )


def save_checkpoint(model: Model, path: Union[str, Path]) -> Path:
    path = Path(path)
    blob = write_archive(path, checkpoint_archive(model))
    logger.info("[Checkpoint] saved path=%s bytes=%d params=%d", path, len(blob), len(model.registry))
    return path


def model_from_archive(archive: NamedTensors, expected: Optional[ModelConfig] = None) -> Model:
    """
    アーカイブからモデルを復元する。expected を渡した場合はその構成で組み立て、
    レジストリのダイジェストが一致しなければ DigestMismatchError。
    """
    meta = archive.metadata
    try:
        stored_config = ModelConfig.from_dict(meta["model_config"])
        seed = int(meta["seed"])
        stored_digest = meta["registry_digest"]
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointCorruptError(f"checkpoint metadata incomplete: {e}") from e

    config = expected or stored_config
    provenance = dict(meta.get("provenance") or {})
    model = inject_from_provenance(build_unet(config, seed), provenance)
    digest = registry_digest(model.registry)
    if digest != stored_digest:
        raise DigestMismatchError(
            f"registry digest mismatch (checkpoint={stored_digest[:12]}, config={digest[:12]})"
        )

    tensors = archive.as_dict()
    params = {}
    for m in model.registry:
        if m.name not in tensors:
            raise CheckpointCorruptError(f"missing tensor {m.name}")
        value = tensors[m.name]
        if value.dtype != model.dtype:
            raise DTypeMismatchError(f"{m.name}: stored {value.dtype}, expected {model.dtype}")
        if tuple(value.shape) != m.shape:
            raise CheckpointCorruptError(f"{m.name}: shape {value.shape} != {m.shape}")
        params[m.id] = value
    if len(tensors) != len(model.registry):
        raise CheckpointCorruptError("checkpoint carries tensors outside the registry")

    model.params = params
    model.provenance = provenance
    return model


def load_checkpoint(path: Union[str, Path], expected: Optional[ModelConfig] = None) -> Model:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    model = model_from_archive(read_archive(path), expected)
    logger.info("[Checkpoint] loaded path=%s params=%d", path, len(model.registry))
    return model
