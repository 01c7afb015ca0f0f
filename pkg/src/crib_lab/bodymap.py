"""Compression of raw tactile vectors into per-part body map activations.

Each of the 68 body parts owns a fixed set of sensors; the part activation is
the mean of absolute sensor activations over that set. Summation is performed
member-by-member in sensor order, so results are bit-identical to a plain
python loop over the same indices (no pairwise-summation reordering).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .body import BodySpec

TOUCH_THRESHOLD = 0.1


@dataclass
class GroupingTable:
    group_names: List[str]
    group_sides: List[str]           # 'left' | 'right' per group
    group_regions: List[str]
    sensor_lists: List[np.ndarray]   # sensor indices per group, ascending
    mirror: np.ndarray               # group index of the left/right twin
    padded: np.ndarray               # (n_groups, max_size) indices, pad = n_sensors
    counts: np.ndarray               # (n_groups,) true member counts
    n_sensors: int

    @property
    def n_groups(self) -> int:
        return len(self.group_names)


def build_grouping(spec: BodySpec) -> GroupingTable:
    lists = []
    for g in range(spec.n_segments):
        start = spec.segment_sensor_start[g]
        n = spec.segment_sensor_count[g]
        lists.append(np.arange(start, start + n))
    counts = spec.segment_sensor_count.astype(int).copy()
    width = int(counts.max())
    padded = np.full((spec.n_segments, width), spec.sensor_count, dtype=int)
    for g, idx in enumerate(lists):
        padded[g, :len(idx)] = idx
    return GroupingTable(
        group_names=list(spec.group_names),
        group_sides=[s.side for s in spec.segments],
        group_regions=[s.region for s in spec.segments],
        sensor_lists=lists,
        mirror=spec.segment_mirror.copy(),
        padded=padded,
        counts=counts,
        n_sensors=spec.sensor_count,
    )


def aggregate(table: GroupingTable, activations: np.ndarray) -> np.ndarray:
    """Per-part mean of |activation|, summed in member order.

    Padded slots index a trailing zero, so they add +0.0 without perturbing
    the running sums.
    """
    activations = np.asarray(activations, dtype=float)
    if activations.shape != (table.n_sensors,):
        raise ValueError(f"expected {table.n_sensors} sensor values")
    ext = np.empty(table.n_sensors + 1)
    np.abs(activations, out=ext[:-1])
    ext[-1] = 0.0
    acc = ext[table.padded[:, 0]].copy()
    for k in range(1, table.padded.shape[1]):
        acc += ext[table.padded[:, k]]
    return acc / table.counts


def touched_mask(body_map: np.ndarray,
                 threshold: float = TOUCH_THRESHOLD) -> np.ndarray:
    """Parts counted as touched: activation strictly above the threshold."""
    return np.asarray(body_map) > threshold


def side_counts(table: GroupingTable, touched: np.ndarray) -> Tuple[int, int]:
    """(left, right) touched-part counts for the balance bonus."""
    left = sum(1 for g in range(table.n_groups)
               if touched[g] and table.group_sides[g] == "left")
    right = sum(1 for g in range(table.n_groups)
                if touched[g] and table.group_sides[g] == "right")
    return left, right


def write_grouping_csv(path, table: GroupingTable) -> None:
    """Dump the sensor-to-part assignment for offline inspection."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["group", "name", "side", "region", "sensor_count",
                    "first_sensor", "last_sensor"])
        for g in range(table.n_groups):
            idx = table.sensor_lists[g]
            w.writerow([g, table.group_names[g], table.group_sides[g],
                        table.group_regions[g], len(idx),
                        int(idx[0]), int(idx[-1])])
