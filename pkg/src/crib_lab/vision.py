"""Blob-level vision: find skin-colored hand blobs and learn what 'hand' looks like.

Detection is classic: HSV range segmentation, 3x3 morphological cleanup,
4-connected components, area filtering, at most two blobs per eye. Tracks are
formed per eye by greedy nearest-neighbor matching. During a motor-babbling
phase, tracks whose on-screen motion correlates with some proprioceptive
channel are taken to be the agent's own hands and their pixels are used to
refit the color model; everything else (toys, shadows) fails the correlation
test and is ignored.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import dump_kv_text, parse_kv_text

CORRELATION_KEEP = 0.6
MIN_TRACK_LENGTH = 30
MATCH_GATE_PX = 12.0
MAX_MISSES = 2
PERCENTILE_LO = 2.0
PERCENTILE_HI = 98.0

_HUE_BINS = 3600    # 0.1 degree resolution
_UNIT_BINS = 1000   # 0.001 resolution for saturation / value


def rgb_to_hsv(img: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized HSV: hue in [0, 360), saturation and value in [0, 1]."""
    rgb = np.asarray(img, dtype=float) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = np.max(rgb, axis=-1)
    minc = np.min(rgb, axis=-1)
    delta = maxc - minc
    h = np.zeros_like(maxc)
    nz = delta > 0
    rmax = nz & (maxc == r)
    gmax = nz & ~rmax & (maxc == g)
    bmax = nz & ~rmax & ~gmax
    h[rmax] = ((g[rmax] - b[rmax]) / delta[rmax]) % 6.0
    h[gmax] = (b[gmax] - r[gmax]) / delta[gmax] + 2.0
    h[bmax] = (r[bmax] - g[bmax]) / delta[bmax] + 4.0
    h *= 60.0
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    return h, s, maxc


@dataclass
class HandAppearanceModel:
    """HSV box plus an area window; the hue interval may wrap past 360."""
    hue_lo: float = 0.0
    hue_hi: float = 60.0
    sat_lo: float = 0.15
    sat_hi: float = 0.90
    val_lo: float = 0.20
    val_hi: float = 1.00
    area_lo: float = 8.0
    area_hi: float = 2000.0

    def hue_wraps(self) -> bool:
        return self.hue_lo > self.hue_hi

    def mask(self, img: np.ndarray) -> np.ndarray:
        h, s, v = rgb_to_hsv(img)
        if self.hue_wraps():
            hue_ok = (h >= self.hue_lo) | (h <= self.hue_hi)
        else:
            hue_ok = (h >= self.hue_lo) & (h <= self.hue_hi)
        return (hue_ok & (s >= self.sat_lo) & (s <= self.sat_hi)
                & (v >= self.val_lo) & (v <= self.val_hi))

    def to_kv(self) -> str:
        keys = ("hue_lo", "hue_hi", "sat_lo", "sat_hi", "val_lo", "val_hi",
                "area_lo", "area_hi")
        return dump_kv_text({k: getattr(self, k) for k in keys})

    @classmethod
    def from_kv(cls, text: str) -> "HandAppearanceModel":
        vals = parse_kv_text(text)
        return cls(**{k: float(v) for k, v in vals.items()})


def seed_hand_model() -> HandAppearanceModel:
    return HandAppearanceModel()


# -- morphology ---------------------------------------------------------------


def _shifts(mask: np.ndarray, border: bool):
    h, w = mask.shape
    padded = np.full((h + 2, w + 2), border, dtype=bool)
    padded[1:-1, 1:-1] = mask
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            yield padded[dy:dy + h, dx:dx + w]

def erode(mask: np.ndarray) -> np.ndarray:
    """3x3 erosion; pixels beyond the border count as foreground."""
    out = np.ones_like(mask, dtype=bool)
    for s in _shifts(mask, border=True):
        out &= s
    return out


def dilate(mask: np.ndarray) -> np.ndarray:
    """3x3 dilation; pixels beyond the border count as background."""
    out = np.zeros_like(mask, dtype=bool)
    for s in _shifts(mask, border=False):
        out |= s
    return out


def morph_open(mask: np.ndarray) -> np.ndarray:
    return dilate(erode(mask))


def morph_close(mask: np.ndarray) -> np.ndarray:
    return erode(dilate(mask))


def morph_clean(mask: np.ndarray) -> np.ndarray:
    """Opening then closing: drops speckle, fills pinholes. Idempotent."""
    return morph_close(morph_open(mask))


# -- connected components ------------------------------------------------------


def label_components(mask: np.ndarray) -> Tuple[np.ndarray, int]:
    """4-connected component labels, 0 = background, labels 1..n in scan order."""
    labels = np.zeros(mask.shape, dtype=np.int32)
    h, w = mask.shape
    current = 0
    for sy in range(h):
        row = mask[sy]
        for sx in range(w):
            if not row[sx] or labels[sy, sx]:
                continue
            current += 1
            queue = deque([(sy, sx)])
            labels[sy, sx] = current
            while queue:
                y, x = queue.popleft()
                if y > 0 and mask[y - 1, x] and not labels[y - 1, x]:
                    labels[y - 1, x] = current
                    queue.append((y - 1, x))
                if y + 1 < h and mask[y + 1, x] and not labels[y + 1, x]:
                    labels[y + 1, x] = current
                    queue.append((y + 1, x))
                if x > 0 and mask[y, x - 1] and not labels[y, x - 1]:
                    labels[y, x - 1] = current
                    queue.append((y, x - 1))
                if x + 1 < w and mask[y, x + 1] and not labels[y, x + 1]:
                    labels[y, x + 1] = current
                    queue.append((y, x + 1))
    return labels, current


# -- blobs ----------------------------------------------------------------------


@dataclass
class Blob:
    centroid: Tuple[float, float]          # (x, y) pixel coordinates
    area: int
    hsv: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None


MAX_BLOBS_PER_EYE = 2


def extract_blobs(img: np.ndarray, model: HandAppearanceModel,
                  keep_pixels: bool = False) -> List[Blob]:
    """Candidate hand blobs: cleaned model mask, size-filtered, two largest."""
    mask = morph_clean(model.mask(img))
    labels, n = label_components(mask)
    if n == 0:
        return []
    flat = labels.ravel()
    areas = np.bincount(flat, minlength=n + 1)
    full_hsv = rgb_to_hsv(img) if keep_pixels else None
    candidates = []
    for lab in range(1, n + 1):
        area = int(areas[lab])
        if not (model.area_lo <= area <= model.area_hi):
            continue
        ys, xs = np.nonzero(labels == lab)
        cx = xs.mean() + 0.5
        cy = ys.mean() + 0.5
        hsv = None
        if full_hsv is not None:
            h, s, v = full_hsv
            hsv = (h[ys, xs], s[ys, xs], v[ys, xs])
        candidates.append(Blob((cx, cy), area, hsv))
    candidates.sort(key=lambda b: (-b.area, b.centroid[1], b.centroid[0]))
    return candidates[:MAX_BLOBS_PER_EYE]


# -- tracking --------------------------------------------------------------------


@dataclass
class Track:
    track_id: int
    frames: List[int] = field(default_factory=list)
    points: List[Tuple[float, float]] = field(default_factory=list)
    misses: int = 0
    hist: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None
    areas: List[int] = field(default_factory=list)

    def add(self, frame: int, blob: Blob) -> None:
        self.frames.append(frame)
        self.points.append(blob.centroid)
        self.areas.append(blob.area)
        self.misses = 0
        if self.hist is not None and blob.hsv is not None:
            hh, ss, vv = blob.hsv
            self.hist[0][:] += np.bincount(
                np.minimum((hh * (_HUE_BINS / 360.0)).astype(int), _HUE_BINS - 1),
                minlength=_HUE_BINS)
            self.hist[1][:] += np.bincount(
                np.minimum((ss * _UNIT_BINS).astype(int), _UNIT_BINS - 1),
                minlength=_UNIT_BINS)
            self.hist[2][:] += np.bincount(
                np.minimum((vv * _UNIT_BINS).astype(int), _UNIT_BINS - 1),
                minlength=_UNIT_BINS)

    @property
    def length(self) -> int:
        return len(self.frames)

    def last_step_motion(self, resolution: int = 64) -> float:
        """Centroid displacement between the last two observations, in units
        of image widths."""
        if self.length < 2:
            return 0.0
        (x0, y0), (x1, y1) = self.points[-2], self.points[-1]
        return math.hypot(x1 - x0, y1 - y0) / resolution


class BlobTracker:
    """Greedy nearest-neighbor data association for one eye."""

    def __init__(self, gate: float = MATCH_GATE_PX, max_misses: int = MAX_MISSES,
                 keep_hist: bool = False, resolution: int = 64):
        self.gate = gate
        self.max_misses = max_misses
        self.keep_hist = keep_hist
        self.resolution = resolution
        self.active: List[Track] = []
        self.finished: List[Track] = []
        self._next_id = 0

    def _new_track(self, frame: int, blob: Blob) -> Track:
        hist = None
        if self.keep_hist:
            hist = (np.zeros(_HUE_BINS, dtype=np.int64),
                    np.zeros(_UNIT_BINS, dtype=np.int64),
                    np.zeros(_UNIT_BINS, dtype=np.int64))
        track = Track(self._next_id, hist=hist)
        self._next_id += 1
        track.add(frame, blob)
        return track

    def update(self, frame: int, blobs: Sequence[Blob]) -> List[Track]:
        """Associate this frame's blobs; returns the tracks matched or started."""
        pairs = []
        for ti, track in enumerate(self.active):
            tx, ty = track.points[-1]
            for bi, blob in enumerate(blobs):
                d = math.hypot(blob.centroid[0] - tx, blob.centroid[1] - ty)
                if d <= self.gate:
                    pairs.append((d, ti, bi))
        pairs.sort()
        used_tracks, used_blobs = set(), set()
        matched: List[Track] = []
        for d, ti, bi in pairs:
            if ti in used_tracks or bi in used_blobs:
                continue
            used_tracks.add(ti)
            used_blobs.add(bi)
            self.active[ti].add(frame, blobs[bi])
            matched.append(self.active[ti])
        for bi, blob in enumerate(blobs):
            if bi not in used_blobs:
                track = self._new_track(frame, blob)
                self.active.append(track)
                matched.append(track)
        survivors = []
        for ti, track in enumerate(self.active):
            if ti not in used_tracks and track.frames[-1] != frame:
                track.misses += 1
                if track.misses > self.max_misses:
                    self.finished.append(track)
                    continue
            survivors.append(track)
        self.active = survivors
        return matched

    def finish_all(self) -> List[Track]:
        """Close out remaining tracks; returns every track ever seen."""
        self.finished.extend(self.active)
        self.active = []
        return self.finished


# -- correlation against proprioception ----------------------------------------


def correlate_track(track: Track, proprio: np.ndarray,
                    min_length: int = MIN_TRACK_LENGTH
                    ) -> Tuple[float, int, str]:
    """Best |Pearson correlation| between track motion and any proprio channel.

    Returns (rho, channel, axis). Tracks shorter than `min_length` frames and
    constant series score zero.
    """
    if track.length < min_length:
        return 0.0, -1, ""
    pts = np.asarray(track.points)
    frames = np.asarray(track.frames)
    best = (0.0, -1, "")
    for axis_idx, axis_name in ((0, "x"), (1, "y")):
        series = pts[:, axis_idx]
        s_std = series.std()
        if s_std == 0.0:
            continue
        s_centered = series - series.mean()
        for ch in range(proprio.shape[1]):
            signal = proprio[frames, ch]
            g_std = signal.std()
            if g_std == 0.0:
                continue
            rho = float(np.mean(s_centered * (signal - signal.mean()))
                        / (s_std * g_std))
            if abs(rho) > best[0]:
                best = (abs(rho), ch, axis_name)
    return best


# -- calibration -----------------------------------------------------------------


@dataclass
class TrackReport:
    eye: int
    track_id: int
    length: int
    rho: float
    channel: int
    axis: str
    kept: bool


@dataclass
class CalibrationResult:
    model: HandAppearanceModel
    reports: List[TrackReport]
    kept_tracks: int
    fallback: bool                     # true when nothing correlated

    def write_audit_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["eye", "track_id", "length", "rho", "channel",
                        "axis", "kept"])
            for r in self.reports:
                w.writerow([r.eye, r.track_id, r.length, f"{r.rho:.6f}",
                            r.channel, r.axis, int(r.kept)])


def _hist_percentiles(hist: np.ndarray, scale: float, lo_pct: float,
                      hi_pct: float) -> Tuple[float, float]:
    total = hist.sum()
    cum = np.cumsum(hist)
    lo_rank = lo_pct / 100.0 * total
    hi_rank = hi_pct / 100.0 * total
    lo_bin = int(np.searchsorted(cum, lo_rank, side="left"))
    hi_bin = int(np.searchsorted(cum, hi_rank, side="left"))
    return lo_bin * scale, (hi_bin + 1) * scale


def calibrate_hand_model(babble_blobs: Sequence[Sequence[Sequence[Blob]]],
                         proprio: np.ndarray,
                         seed: Optional[HandAppearanceModel] = None,
                         keep_threshold: float = CORRELATION_KEEP
                         ) -> CalibrationResult:
    """Refit the appearance model from babble observations.

    `babble_blobs[eye][frame]` are the blobs extracted with the seed model and
    `keep_pixels=True`; `proprio[frame]` the matching proprioceptive vectors.
    Tracks are matched per eye, scored against proprioception, and pixels of
    tracks beating `keep_threshold` define the refit HSV ranges (2nd..98th
    percentile) and area window. With no qualifying track, the seed model is
    returned unchanged with `fallback=True`.
    """
    seed = seed or seed_hand_model()
    reports: List[TrackReport] = []
    kept: List[Track] = []
    for eye, frames in enumerate(babble_blobs):
        tracker = BlobTracker(keep_hist=True)
        for frame_idx, blobs in enumerate(frames):
            tracker.update(frame_idx, blobs)
        for track in tracker.finish_all():
            rho, channel, axis = correlate_track(track, proprio)
            keep = rho > keep_threshold
            reports.append(TrackReport(eye, track.track_id, track.length,
                                       rho, channel, axis, keep))
            if keep:
                kept.append(track)
    reports.sort(key=lambda r: (r.eye, r.track_id))
    if not kept:
        return CalibrationResult(seed, reports, 0, True)

    hue_hist = np.zeros(_HUE_BINS, dtype=np.int64)
    sat_hist = np.zeros(_UNIT_BINS, dtype=np.int64)
    val_hist = np.zeros(_UNIT_BINS, dtype=np.int64)
    areas: List[int] = []
    for track in kept:
        hue_hist += track.hist[0]
        sat_hist += track.hist[1]
        val_hist += track.hist[2]
        areas.extend(track.areas)

    hue_scale = 360.0 / _HUE_BINS
    if seed.hue_wraps():
        # rotate so the seed interval is contiguous, fit, rotate back
        half = _HUE_BINS // 2
        hue_lo, hue_hi = _hist_percentiles(np.roll(hue_hist, half), hue_scale,
                                           PERCENTILE_LO, PERCENTILE_HI)
        hue_lo = (hue_lo - 180.0) % 360.0
        hue_hi = (hue_hi - 180.0) % 360.0
    else:
        hue_lo, hue_hi = _hist_percentiles(hue_hist, hue_scale,
                                           PERCENTILE_LO, PERCENTILE_HI)
    sat_lo, sat_hi = _hist_percentiles(sat_hist, 1.0 / _UNIT_BINS,
                                       PERCENTILE_LO, PERCENTILE_HI)
    val_lo, val_hi = _hist_percentiles(val_hist, 1.0 / _UNIT_BINS,
                                       PERCENTILE_LO, PERCENTILE_HI)
    model = HandAppearanceModel(
        hue_lo=hue_lo, hue_hi=min(hue_hi, 360.0),
        sat_lo=sat_lo, sat_hi=min(sat_hi, 1.0),
        val_lo=val_lo, val_hi=min(val_hi, 1.0),
        area_lo=0.5 * min(areas), area_hi=2.0 * max(areas))
    return CalibrationResult(model, reports, len(kept), False)


def count_hands(blobs_left: Sequence[Blob], blobs_right: Sequence[Blob]) -> int:
    """Total hand detections across both eyes, 0..4."""
    return min(len(blobs_left), MAX_BLOBS_PER_EYE) + min(len(blobs_right),
                                                         MAX_BLOBS_PER_EYE)
