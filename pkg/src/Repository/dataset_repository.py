from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np

from Domain.data import Dataset, DomainSpec, SegSample
from Domain.errors import CheckpointError
from Repository.archive import NamedTensors, encode, read_archive, write_archive
from Services.synth_data import generate_domain

logger = logging.getLogger(__name__)


class DatasetCache:
    """
    合成データセットのディスクキャッシュ。
    <root>/<domain>-s<seed>-n<n>.dgst と同名 .json（domain, seed, n, checksum, spec）を置く。
    少しでも食い違えば作り直す（生成の方を正とする）。
    """

    def __init__(self, root: Optional[Union[str, Path]] = None) -> None:
        self.root = Path(root) if root is not None else None

    def _paths(self, spec: DomainSpec, n: int, seed: int) -> tuple[Path, Path]:
        stem = f"{spec.name}-{spec.image_size}px-s{seed}-n{n}"
        return self.root / f"{stem}.dgst", self.root / f"{stem}.json"

    @staticmethod
    def _archive(dataset: Dataset) -> NamedTensors:
        return NamedTensors(
            tensors=[
                ("images", np.stack([s.image for s in dataset.samples])),
                ("labels", np.stack([s.label for s in dataset.samples]).astype(np.int64)),
            ],
            metadata={"domain": dataset.domain, "seed": dataset.seed, "n": len(dataset)},
        )

    def _try_load(self, spec: DomainSpec, n: int, seed: int) -> Optional[Dataset]:
        archive_path, manifest_path = self._paths(spec, n, seed)
        if not archive_path.exists() or not manifest_path.exists():
            return None
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            if manifest.get("spec") != spec.to_dict() or manifest.get("n") != n or manifest.get("seed") != seed:
                return None
            blob = archive_path.read_bytes()
            if hashlib.sha256(blob).hexdigest() != manifest.get("checksum"):
                return None
            tensors = read_archive(archive_path).as_dict()
        except (OSError, ValueError, CheckpointError) as e:
            logger.warning("[DatasetCache] unreadable cache %s (%s); regenerating", archive_path, e)
            return None
        images, labels = tensors["images"], tensors["labels"]
        samples = [SegSample(image=images[i], label=labels[i]) for i in range(len(images))]
        return Dataset(domain=spec.name, seed=seed, samples=samples)

    def load_or_generate(self, spec: DomainSpec, n: int, seed: int) -> Dataset:
        if self.root is None:
            return generate_domain(spec, n, seed)
        cached = self._try_load(spec, n, seed)
        if cached is not None:
            logger.debug("[DatasetCache] hit domain=%s seed=%d n=%d", spec.name, seed, n)
            return cached
        dataset = generate_domain(spec, n, seed)
        archive_path, manifest_path = self._paths(spec, n, seed)
        blob = write_archive(archive_path, self._archive(dataset))
        manifest_path.write_text(
            json.dumps(
                {
                    "domain": spec.name,
                    "seed": seed,
                    "n": n,
                    "checksum": hashlib.sha256(blob).hexdigest(),
                    "spec": spec.to_dict(),
                },
                indent=2,
                sort_keys=True,
            ),
            encoding="utf-8",
        )
        logger.info("[DatasetCache] stored domain=%s seed=%d n=%d", spec.name, seed, n)
        return dataset


def dataset_checksum(dataset: Dataset) -> str:
    return hashlib.sha256(encode(DatasetCache._archive(dataset))).hexdigest()
