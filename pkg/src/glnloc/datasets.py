"""Feature-table ingestion, multi-view sample assembly, train/test splitting,
and a synthetic corridor-world generator for desk-scale experiments.

Feature file (binary `FTB1`): magic, u32 record count, u32 feature dim, then
records of (u32 location, u8 view, u32 group, dim x f32), all little-endian.
A text CSV alternative `location,view,group,f0,...` (header row) is accepted
for paths ending in `.csv`.
Sample-split file (text): lines `train <group>` / `test <group>`.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .floorplan import FloorPlan

FTB_MAGIC = b"FTB1"

VIEW_NAMES = ("front", "behind", "right", "left")


class DataError(ValueError):
    """Malformed or inconsistent feature data."""


@dataclass(frozen=True)
class FeatureRecord:
    location: int
    view: int
    group: int


@dataclass(frozen=True)
class FeatureTable:
    """Per-(location, view) feature vectors; every group holds the 4 views."""

    dim: int
    locations: np.ndarray   # (n,) int
    views: np.ndarray       # (n,) int in 0..3
    groups: np.ndarray      # (n,) int
    features: np.ndarray    # (n, dim) float

    @property
    def n_records(self) -> int:
        return self.locations.shape[0]

    def group_ids(self):
        out, seen = [], set()
        for g in self.groups:
            g = int(g)
            if g not in seen:
                seen.add(g)
                out.append(g)
        return out


@dataclass(frozen=True)
class MultiViewSample:
    """One query: a location plus its four view features in front/behind/right/left order."""

    location: int
    views: np.ndarray       # (4, dim)
    group: int

    def __post_init__(self):
        if self.views.shape[0] != 4:
            raise DataError(f"sample {self.group} needs exactly 4 views")


@dataclass(frozen=True)
class SampleSet:
    samples: tuple
    plan_k: int

    def __post_init__(self):
        for s in self.samples:
            if not 0 <= s.location < self.plan_k:
                raise DataError(f"sample group {s.group} has location {s.location} outside plan")

    def __len__(self):
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.location for s in self.samples], dtype=np.intp)

    def view_matrix(self, view: int) -> np.ndarray:
        return np.stack([s.views[view] for s in self.samples])


def validate_table(table: FeatureTable) -> None:
    """Reject duplicate (group, view) records and incomplete view groups."""
    by_group: dict[int, set[int]] = {}
    for loc, view, group in zip(table.locations, table.views, table.groups):
        if not 0 <= view <= 3:
            raise DataError(f"group {group}: view index {view} outside 0..3")
        views = by_group.setdefault(int(group), set())
        if int(view) in views:
            raise DataError(f"duplicate record for group {group} view {view}")
        views.add(int(view))
    incomplete = sorted(g for g, v in by_group.items() if len(v) != 4)
    if incomplete:
        raise DataError(f"incomplete view groups (need all 4 views): {incomplete}")


def load_features(path) -> FeatureTable:
    path = str(path)
    table = _load_features_csv(path) if path.endswith(".csv") else _load_features_binary(path)
    validate_table(table)
    return table


def _load_features_binary(path) -> FeatureTable:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FTB_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {FTB_MAGIC!r}")
        head = fh.read(8)
        if len(head) != 8:
            raise DataError(f"{path}: truncated header")
        n, dim = struct.unpack("<II", head)
        rec_size = 4 + 1 + 4 + 4 * dim
        payload = fh.read()
    if len(payload) != n * rec_size:
        raise DataError(f"{path}: truncated records ({len(payload)} bytes for {n} records)")
    locations = np.empty(n, dtype=np.int64)
    views = np.empty(n, dtype=np.int64)
    groups = np.empty(n, dtype=np.int64)
    features = np.empty((n, dim), dtype=np.float64)
    for i in range(n):
        off = i * rec_size
        loc, view, group = struct.unpack_from("<IBI", payload, off)
        locations[i], views[i], groups[i] = loc, view, group
        features[i] = np.frombuffer(payload, dtype="<f4", count=dim, offset=off + 9)
    return FeatureTable(dim=dim, locations=locations, views=views, groups=groups, features=features)


def _load_features_csv(path) -> FeatureTable:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[:3] != ["location", "view", "group"]:
            raise DataError(f"{path}: bad CSV header {header[:3]}")
        dim = len(header) - 3
        locations, views, groups, rows = [], [], [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3 + dim:
                raise DataError(f"{path}:{lineno}: expected {3 + dim} fields, got {len(parts)}")
            locations.append(int(parts[0]))
            views.append(int(parts[1]))
            groups.append(int(parts[2]))
            rows.append(np.array(parts[3:], dtype=np.float64))
    return FeatureTable(
        dim=dim,
        locations=np.array(locations, dtype=np.int64),
        views=np.array(views, dtype=np.int64),
        groups=np.array(groups, dtype=np.int64),
        features=np.stack(rows) if rows else np.zeros((0, dim)),
    )


def save_features(path, table: FeatureTable) -> None:
    with open(path, "wb") as fh:
        fh.write(FTB_MAGIC)
        fh.write(struct.pack("<II", table.n_records, table.dim))
        feats32 = table.features.astype("<f4")
        for i in range(table.n_records):
            fh.write(struct.pack("<IBI", int(table.locations[i]), int(table.views[i]),
                                 int(table.groups[i])))
            fh.write(feats32[i].tobytes())


def group_samples(table: FeatureTable):
    """Group records into MultiViewSamples, views ordered front..left."""
    validate_table(table)
    order = table.group_ids()
    index = {(int(g), int(v)): i for i, (g, v) in enumerate(zip(table.groups, table.views))}
    samples = []
    for g in order:
        rows = [index[(g, v)] for v in range(4)]
        locs = {int(table.locations[i]) for i in rows}
        if len(locs) != 1:
            raise DataError(f"group {g} spans multiple locations {sorted(locs)}")
        views = table.features[rows]
        samples.append(MultiViewSample(location=locs.pop(), views=views, group=g))
    return tuple(samples)


def assemble_samples(table: FeatureTable, plan: FloorPlan) -> SampleSet:
    """Group records and bind them to a plan (locations must exist there)."""
    return SampleSet(samples=group_samples(table), plan_k=plan.k)


def subset_by_locations(sample_set: SampleSet, locations) -> SampleSet:
    wanted = set(locations)
    return SampleSet(samples=tuple(s for s in sample_set.samples if s.location in wanted),
                     plan_k=sample_set.plan_k)


def table_subset_by_locations(table: FeatureTable, locations) -> FeatureTable:
    mask = np.isin(table.locations, np.array(sorted(set(locations)), dtype=np.int64))
    return FeatureTable(dim=table.dim, locations=table.locations[mask],
                        views=table.views[mask], groups=table.groups[mask],
                        features=table.features[mask])


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def standard_split(sample_set: SampleSet, ratio_or_file, seed: int = 0):
    """Partition samples into (train, test).

    A float ratio splits stratified by location (shuffled with `seed`) so
    every location keeps at least one training sample; a path reproduces the
    listed `train <group>` / `test <group>` assignment exactly.
    """
    if isinstance(ratio_or_file, (int, float)):
        ratio = float(ratio_or_file)
        if not 0.0 < ratio < 1.0:
            raise DataError(f"split ratio must be in (0, 1), got {ratio}")
        return _ratio_split(sample_set, ratio, seed)
    return _file_split(sample_set, ratio_or_file)


def _ratio_split(sample_set: SampleSet, ratio: float, seed: int):
    rng = np.random.default_rng(seed)
    by_loc: dict[int, list[int]] = {}
    for i, s in enumerate(sample_set.samples):
        by_loc.setdefault(s.location, []).append(i)
    train_idx, test_idx = [], []
    for loc in sorted(by_loc):
        idx = np.array(by_loc[loc])
        if len(idx) == 1:
            warnings.warn(f"location {loc} has a single sample; assigning it to train",
                          stacklevel=2)
            train_idx.extend(idx.tolist())
            continue
        perm = rng.permutation(len(idx))
        n_train = max(1, round(len(idx) * ratio))
        n_train = min(n_train, len(idx) - 1) if ratio < 1.0 else n_train
        chosen = idx[perm]
        train_idx.extend(chosen[:n_train].tolist())
        test_idx.extend(chosen[n_train:].tolist())
    train = SampleSet(tuple(sample_set.samples[i] for i in sorted(train_idx)), sample_set.plan_k)
    test = SampleSet(tuple(sample_set.samples[i] for i in sorted(test_idx)), sample_set.plan_k)
    return train, test


def _file_split(sample_set: SampleSet, path):
    assign: dict[int, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2 or parts[0] not in ("train", "test"):
                raise DataError(f"{path}:{lineno}: expected 'train <group>' or 'test <group>'")
            assign[int(parts[1])] = parts[0]
    train, test = [], []
    for s in sample_set.samples:
        side = assign.get(s.group)
        if side is None:
            raise DataError(f"split file {path} misses group {s.group}")
        (train if side == "train" else test).append(s)
    return (SampleSet(tuple(train), sample_set.plan_k),
            SampleSet(tuple(test), sample_set.plan_k))


def save_sample_split(path, train: SampleSet, test: SampleSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in train.samples:
            fh.write(f"train {s.group}\n")
        for s in test.samples:
            fh.write(f"test {s.group}\n")


# ---------------------------------------------------------------------------
# synthetic corridor world
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Grid world with 1-meter spacing and corridor-structured view features.

    Each view feature mixes a location-identity basis vector with a shared
    corridor-direction vector: views that look down the same corridor (same
    row for right/left, same column for front/behind) share that vector, so
    `rho` near 1 makes parallel corridor views nearly indistinguishable.
    """

    width: int = 6
    height: int = 10
    rho: float = 0.5
    noise: float = 0.1
    samples_per_location: int = 8
    dim: int | None = None          # None: smallest basis that fits, k + 2(w+h)
    seed: int = 0

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise DataError("grid must be at least 2x2")
        if not 0.0 <= self.rho < 1.0:
            raise DataError(f"rho must be in [0, 1), got {self.rho}")
        if self.noise < 0:
            raise DataError(f"noise must be >= 0, got {self.noise}")
        if self.samples_per_location < 1:
            raise DataError("samples_per_location must be >= 1")

    @property
    def k(self) -> int:
        return self.width * self.height

    @property
    def min_dim(self) -> int:
        return self.k + 2 * (self.width + self.height)


def grid_floorplan(width: int, height: int) -> FloorPlan:
    """Grid corridors at 1-meter spacing; location id = y * width + x."""
    coords = np.array([(x, y) for y in range(height) for x in range(width)], dtype=np.float64)
    edges = []
    for y in range(height):
        for x in range(width):
            i = y * width + x
            if x + 1 < width:
                edges.append((i, i + 1))
            if y + 1 < height:
                edges.append((i, i + width))
    return FloorPlan(coords=coords, edges=tuple(sorted(edges)))


def generate_synthetic(config: SynthConfig):
    """Build (FloorPlan, FeatureTable) for the corridor world; bit-reproducible per seed.

    view feature = (1 - rho) * e_location + rho * u_corridor_direction + N(0, noise^2).
    """
    w, h, k = config.width, config.height, config.k
    dim = config.dim if config.dim is not None else config.min_dim
    if dim < config.min_dim:
        raise DataError(f"dim {dim} too small; corridor basis needs >= {config.min_dim}")
    rng = np.random.default_rng(config.seed)
    plan = grid_floorplan(w, h)

    # basis slots: [identity 0..k) | +x rows | -x rows | +y cols | -y cols]
    def direction_slot(x, y, view):
        if view == 2:            # right, +x, shared along row y
            return k + y
        if view == 3:            # left, -x
            return k + h + y
        if view == 0:            # front, +y, shared along column x
            return k + 2 * h + x
        return k + 2 * h + w + x  # behind, -y

    n = k * config.samples_per_location * 4
    locations = np.empty(n, dtype=np.int64)
    views = np.empty(n, dtype=np.int64)
    groups = np.empty(n, dtype=np.int64)
    features = np.zeros((n, dim))
    row = 0
    group = 0
    for y in range(h):
        for x in range(w):
            loc = y * w + x
            for _ in range(config.samples_per_location):
                for view in range(4):
                    vec = features[row]
                    vec[loc] = 1.0 - config.rho
                    vec[direction_slot(x, y, view)] += config.rho
                    if config.noise > 0:
                        vec += rng.normal(0.0, config.noise, size=dim)
                    locations[row], views[row], groups[row] = loc, view, group
                    row += 1
                group += 1
    table = FeatureTable(dim=dim, locations=locations, views=views, groups=groups,
                         features=features)
    return plan, table
