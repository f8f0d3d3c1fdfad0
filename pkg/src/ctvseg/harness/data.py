"""Loading cases from a manifest and making sure datasets exist."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import phantom


class DataError(RuntimeError):
    pass


@dataclass
class Case:
    case_id: str
    record: phantom.ClinicalRecord
    volume: np.ndarray
    mask: np.ndarray
    spacing: tuple
    labels: np.ndarray | None = None


def load_cases(manifest) -> list[Case]:
    try:
        entries = phantom.read_manifest(manifest)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read manifest {manifest}: {exc}") from None
    missing = [str(p) for e in entries for p in (e.record, e.volume, e.mask, e.labels)
               if p is not None and not Path(p).exists()]
    if missing:
        raise DataError("missing files: " + ", ".join(missing))
    cases = []
    for e in entries:
        try:
            vol, spacing, _ = phantom.read_volume(e.volume)
            mask, _, _ = phantom.read_volume(e.mask)
            labels = phantom.read_volume(e.labels)[0] if e.labels is not None else None
            rec = phantom.read_record(e.record)
        except ValueError as exc:
            raise DataError(f"{e.case_id}: {exc}") from None
        if vol.shape != mask.shape:
            raise DataError(f"{e.case_id}: volume {vol.shape} vs mask {mask.shape}")
        cases.append(Case(e.case_id, rec, vol, mask, spacing, labels))
    return cases


def ensure_dataset(root, n: int, seed: int, grid, spacing) -> Path:
    """Manifest of a generated dataset under ``root``, generating it on first use."""
    root = Path(root) / f"n{n}-s{seed}-{'x'.join(map(str, grid))}"
    manifest = root / "manifest.txt"
    if not manifest.exists():
        phantom.generate_dataset(root, n, seed, grid, spacing)
    return manifest


def default_data_root(cfg, out_dir=None) -> Path:
    if cfg.data_dir:
        return Path(cfg.data_dir)
    from ..textenc import cache_dir
    return Path(out_dir) / "data" if out_dir is not None else cache_dir() / "data"


def train_test_manifests(cfg, out_dir=None) -> tuple[Path, Path]:
    root = default_data_root(cfg, out_dir)
    train = ensure_dataset(root, cfg.train_cases, cfg.train_seed, cfg.grid, cfg.spacing)
    test = ensure_dataset(root, cfg.test_cases, cfg.test_seed, cfg.grid, cfg.spacing)
    return train, test
