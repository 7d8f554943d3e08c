"""Mask-driven synthesis and the downstream tasks built on it."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DataError, MaskPattern, MaskSpec, Series, Uniform, patchify, sample_mask, unpatchify, PatchGrid
from .model import ModelBundle, masked_forward


def _normalized_grid(bundle: ModelBundle, s: Series) -> np.ndarray:
    cfg = bundle.config
    if s.values.shape != (cfg.T * cfg.P, cfg.C):
        raise DataError(
            f"series {s.id!r} has shape {list(s.values.shape)}, model expects [{cfg.T * cfg.P}, {cfg.C}]"
        )
    values = bundle.norm.apply(s.values) if bundle.norm is not None else s.values
    return patchify(Series(values, s.id), cfg.P).patches


def _reconstruct(bundle: ModelBundle, grid: np.ndarray, mask: MaskPattern) -> np.ndarray:
    if mask.N == 0:
        raise DataError("at least one patch must stay visible")
    return masked_forward(bundle, grid, mask.masked).value[0]


def _to_series(bundle: ModelBundle, patches: np.ndarray, sid: str) -> Series:
    s = unpatchify(PatchGrid(patches, sid))
    values = bundle.norm.invert(s.values) if bundle.norm is not None else s.values
    return Series(values, sid)


def synthesize(bundle: ModelBundle, s: Series, spec: MaskSpec, rng: np.random.Generator) -> Series:
    """Mask ``s`` per ``spec`` and return the full decoded series."""
    grid = _normalized_grid(bundle, s)
    mask = sample_mask(bundle.config.T, spec, rng)
    return _to_series(bundle, _reconstruct(bundle, grid, mask), s.id)


def denoise(bundle: ModelBundle, s: Series) -> Series:
    return synthesize(bundle, s, Uniform(0), np.random.default_rng(0))


def impute(bundle: ModelBundle, s: Series, missing: MaskPattern) -> Series:
    """Fill ``missing`` patches from the model; observed patches are copied verbatim."""
    cfg = bundle.config
    if missing.T != cfg.T:
        raise DataError(f"mask covers {missing.T} patches, model expects {cfg.T}")
    if missing.M == 0:
        return Series(s.values.copy(), s.id)
    grid = _normalized_grid(bundle, s)
    decoded = _to_series(bundle, _reconstruct(bundle, grid, missing), s.id).values
    out = s.values.copy()
    for t in missing.masked:
        out[t * cfg.P : (t + 1) * cfg.P] = decoded[t * cfg.P : (t + 1) * cfg.P]
    return Series(out, s.id)


def sub_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def augment(
    bundle: ModelBundle, dataset: Sequence[Series], k: int, spec: MaskSpec, seed: int
) -> list[tuple[Series, dict]]:
    """``k`` synthetic copies per series; returns ``(series, provenance)`` pairs.

    Copy ``j`` of series ``i`` uses the generator seeded by ``(seed, i, j)``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    out = []
    for i, s in enumerate(dataset):
        for j in range(k):
            syn = synthesize(bundle, s, spec, sub_rng(seed, i, j))
            syn.id = f"{s.id}#{j}"
            out.append((syn, {"id": syn.id, "source_id": s.id, "copy": j, "spec": spec.describe(), "seed": seed}))
    return out


def write_provenance(records: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["id", "source_id", "copy", "spec", "seed"], lineterminator="\n")
        w.writeheader()
        w.writerows(records)


def read_provenance(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
