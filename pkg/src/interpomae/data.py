"""Series ingestion, the Sines generator, normalization, patching and masks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class Series:
    values: np.ndarray  # [L, C]
    id: str = "0"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise DataError(f"series {self.id!r}: expected [L, C] with L, C >= 1, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataError(f"series {self.id!r}: non-finite values")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]


@dataclass
class PatchGrid:
    patches: np.ndarray  # [T, P, C]
    origin_id: str = "0"

    @property
    def T(self) -> int:
        return self.patches.shape[0]


@dataclass(frozen=True)
class MaskPattern:
    T: int
    masked: tuple[int, ...] = ()

    def __post_init__(self):
        masked = tuple(sorted(int(i) for i in self.masked))
        if len(set(masked)) != len(masked) or any(i < 0 or i >= self.T for i in masked):
            raise DataError(f"mask indices {masked} invalid for T={self.T}")
        object.__setattr__(self, "masked", masked)

    @property
    def visible(self) -> tuple[int, ...]:
        hidden = set(self.masked)
        return tuple(i for i in range(self.T) if i not in hidden)

    @property
    def M(self) -> int:
        return len(self.masked)

    @property
    def N(self) -> int:
        return self.T - len(self.masked)


@dataclass(frozen=True)
class Uniform:
    """Mask ``m`` patches drawn uniformly without replacement."""

    m: int

    def describe(self) -> str:
        return f"uniform(m={self.m})"


@dataclass(frozen=True)
class Blocks:
    """Mask ``count`` disjoint runs of ``size`` consecutive patches."""

    count: int
    size: int

    def describe(self) -> str:
        return f"blocks(count={self.count},size={self.size})"


@dataclass(frozen=True)
class UniformRange:
    """Draw the mask size uniformly from ``lo..hi``, then mask that many patches."""

    lo: int
    hi: int

    def describe(self) -> str:
        return f"uniform_range(lo={self.lo},hi={self.hi})"


MaskSpec = Union[Uniform, Blocks, UniformRange]

MAX_PLACEMENT_ATTEMPTS = 100_000


def check_mask_spec(T: int, spec: MaskSpec) -> None:
    if isinstance(spec, Uniform):
        if not 0 <= spec.m <= T:
            raise DataError(f"cannot mask {spec.m} of {T} patches")
    elif isinstance(spec, UniformRange):
        if not 0 <= spec.lo <= spec.hi <= T:
            raise DataError(f"cannot mask between {spec.lo} and {spec.hi} of {T} patches")
    elif isinstance(spec, Blocks):
        if spec.count < 0 or spec.size < 1 or spec.count * spec.size > T:
            raise DataError(
                f"cannot place {spec.count} blocks of size {spec.size} in {T} patches"
            )
    else:
        raise TypeError(f"unknown mask spec {spec!r}")


def min_masked(spec: MaskSpec) -> int:
    if isinstance(spec, Uniform):
        return spec.m
    if isinstance(spec, UniformRange):
        return spec.lo
    return spec.count * spec.size


def sample_mask(T: int, spec: MaskSpec, rng: np.random.Generator) -> MaskPattern:
    check_mask_spec(T, spec)
    if isinstance(spec, Uniform):
        return MaskPattern(T, tuple(rng.choice(T, size=spec.m, replace=False)))
    if isinstance(spec, UniformRange):
        m = int(rng.integers(spec.lo, spec.hi + 1))
        return MaskPattern(T, tuple(rng.choice(T, size=m, replace=False)))
    # independent uniform starts, rejected on overlap: uniform over valid placements
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        starts = np.sort(rng.integers(0, T - spec.size + 1, size=spec.count))
        if np.all(np.diff(starts) >= spec.size):
            masked = [s + j for s in starts for j in range(spec.size)]
            return MaskPattern(T, tuple(masked))
    raise DataError(
        f"no valid placement of {spec.count} blocks of size {spec.size} in {T} patches "
        f"after {MAX_PLACEMENT_ATTEMPTS} attempts"
    )


def patchify(s: Series, P: int) -> PatchGrid:
    L, C = s.values.shape
    if P < 1 or L % P:
        raise DataError(f"patch length {P} does not divide series length {L} (remainder {L % P if P else L})")
    return PatchGrid(s.values.reshape(L // P, P, C).copy(), s.id)


def unpatchify(g: PatchGrid) -> Series:
    T, P, C = g.patches.shape
    return Series(g.patches.reshape(T * P, C).copy(), g.origin_id)


def split_patches(g: PatchGrid, m: MaskPattern) -> tuple[np.ndarray, np.ndarray]:
    if m.T != g.T:
        raise DataError(f"mask covers {m.T} patches but grid has {g.T}")
    vis = np.asarray(m.visible, dtype=int)
    hid = np.asarray(m.masked, dtype=int)
    return g.patches[vis], g.patches[hid]


def merge_patches(visible: np.ndarray, masked: np.ndarray, m: MaskPattern, origin_id: str = "0") -> PatchGrid:
    """Inverse of :func:`split_patches`."""
    shape = visible.shape[1:] if len(visible) else masked.shape[1:]
    out = np.empty((m.T,) + tuple(shape))
    out[list(m.visible)] = visible
    out[list(m.masked)] = masked
    return PatchGrid(out, origin_id)


@dataclass
class NormStats:
    min: np.ndarray
    max: np.ndarray
    constant: np.ndarray = field(init=False)

    def __post_init__(self):
        self.min = np.asarray(self.min, dtype=np.float64)
        self.max = np.asarray(self.max, dtype=np.float64)
        if np.any(self.max < self.min):
            raise DataError("normalizer max below min")
        self.constant = self.max == self.min

    def apply(self, x: np.ndarray) -> np.ndarray:
        span = np.where(self.constant, 1.0, self.max - self.min)
        out = (np.asarray(x, dtype=np.float64) - self.min) / span
        return np.where(self.constant, 0.5, out)

    def invert(self, y: np.ndarray) -> np.ndarray:
        span = np.where(self.constant, 0.0, self.max - self.min)
        return np.asarray(y, dtype=np.float64) * span + self.min


def fit_normalizer(train: Sequence[Series]) -> NormStats:
    if not train:
        raise DataError("cannot fit normalizer on an empty training set")
    stacked = np.concatenate([s.values for s in train], axis=0)
    return NormStats(stacked.min(axis=0), stacked.max(axis=0))


def invert(norm: NormStats | None, y: np.ndarray) -> np.ndarray:
    if norm is None:
        raise DataError("normalizer must be fitted before invert")
    return norm.invert(y)


def generate_sines(n: int, L: int, C: int, seed: int) -> list[Series]:
    """Independent per-channel sinusoids with random frequency and phase."""
    if min(n, L, C) < 1:
        raise ValueError("n, L and C must be >= 1")
    rng = np.random.default_rng(seed)
    t = np.arange(L, dtype=np.float64)[:, None]
    out = []
    for i in range(n):
        freq = rng.uniform(0.01, 0.05, size=C)
        phase = rng.uniform(0.0, 2 * math.pi, size=C)
        out.append(Series(np.sin(2 * math.pi * freq * t + phase), str(i)))
    return out


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path: str | Path, id_column: str | None = None, drop_columns: Sequence[str] = ()) -> list[Series]:
    """Read one row per time step; group rows by ``id_column`` when given.

    A first row with any non-numeric cell is taken as a header. Columns named
    in ``drop_columns`` (a date column, say) are skipped.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: no data rows")
    header = None
    if not all(_is_number(c) for i, c in enumerate(rows[0])):
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: no data rows")
    id_idx = None
    if id_column is not None:
        if header is None or id_column not in header:
            raise DataError(f"{path}: id column {id_column!r} not found in header")
        id_idx = header.index(id_column)
    skip = set()
    for name in drop_columns:
        if header is None or name not in header:
            raise DataError(f"{path}: column {name!r} not found in header")
        skip.add(header.index(name))

    width = len(rows[0])
    groups: dict[str, list[list[float]]] = {}
    first_line = 2 if header else 1
    for r, row in enumerate(rows):
        line = r + first_line
        if len(row) != width:
            raise DataError(f"{path}: row {line} has {len(row)} cells, expected {width}")
        key = row[id_idx].strip() if id_idx is not None else "0"
        parsed = []
        for c, cell in enumerate(row):
            if c == id_idx or c in skip:
                continue
            try:
                v = float(cell)
            except ValueError:
                v = math.nan
            if not math.isfinite(v):
                raise DataError(f"{path}: row {line}, column {c + 1}: cannot parse {cell!r}")
            parsed.append(v)
        groups.setdefault(key, []).append(parsed)

    series = [Series(np.array(v), k) for k, v in groups.items()]
    lengths = {s.length for s in series}
    if len(lengths) > 1:
        raise DataError(f"{path}: ragged groups with lengths {sorted(lengths)}")
    return series


def write_csv(series: Sequence[Series], path: str | Path, id_column: str = "id") -> None:
    """Write series in the format :func:`load_csv` reads (``id_column`` grouped)."""
    if not series:
        raise DataError("nothing to write")
    C = series[0].channels
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([id_column] + [f"c{j}" for j in range(C)])
        for s in series:
            for row in s.values:
                w.writerow([s.id] + [repr(float(v)) for v in row])


def to_grids(series: Sequence[Series], P: int, norm: NormStats | None = None) -> np.ndarray:
    """Stack (optionally normalized) series into a ``[n, T, P, C]`` array."""
    out = []
    for s in series:
        values = norm.apply(s.values) if norm is not None else s.values
        out.append(patchify(Series(values, s.id), P).patches)
    return np.stack(out)


def train_test_split(series: Sequence[Series], test_fraction: float, seed: int):
    idx = np.random.default_rng(seed).permutation(len(series))
    n_test = int(round(len(series) * test_fraction))
    test = [series[i] for i in sorted(idx[:n_test])]
    train = [series[i] for i in sorted(idx[n_test:])]
    return train, test


def make_windows(series: Sequence[Series], length: int, stride: int = 1) -> list[Series]:
    """Cut each series into overlapping windows of ``length`` steps."""
    if length < 1 or stride < 1:
        raise DataError("window length and stride must be >= 1")
    out = []
    for s in series:
        if s.length < length:
            raise DataError(f"series {s.id!r} has {s.length} steps, shorter than window {length}")
        for start in range(0, s.length - length + 1, stride):
            out.append(Series(s.values[start : start + length].copy(), f"{s.id}@{start}"))
    return out
