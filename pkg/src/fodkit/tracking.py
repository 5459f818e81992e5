"""Deterministic streamline tracking over detected peak fields.

A simplified tracker: streamlines are seeded at every voxel center, one per
detected peak, and stepped in both directions.  At each step the direction
snaps to the current voxel's peak best aligned with the incoming heading
(nearest-voxel lookup, no interpolation); tracking ends on leaving the
grid, entering a peakless voxel, or exceeding the turning limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .metrics import PeakSet


@dataclass(frozen=True)
class TrackingConfig:
    step: float = 0.5             # voxel units
    turn_deg: float = 60.0
    min_length: float = 2.0
    max_steps: int = 2000

    def __post_init__(self):
        if self.step <= 0 or self.min_length < 0:
            raise ValidationError("step must be > 0 and min_length >= 0")
        if not (0 < self.turn_deg <= 90):
            raise ValidationError("turn_deg must lie in (0, 90]")


@dataclass
class Streamline:
    points: np.ndarray   # (m, 3) positions in voxel units

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


def _voxel_of(pos: np.ndarray, dims) -> tuple[int, int, int] | None:
    idx = np.rint(pos).astype(np.int64)
    if np.any(idx < 0) or np.any(idx >= np.array(dims)):
        return None
    return int(idx[0]), int(idx[1]), int(idx[2])


def _best_peak(peaks: PeakSet, heading: np.ndarray):
    """Peak most aligned with the heading, sign-matched; None if empty."""
    if peaks.count == 0:
        return None
    dots = peaks.directions @ heading
    scores = np.abs(dots)
    # deterministic tie-break on the direction components
    order = np.lexsort((peaks.directions[:, 2], peaks.directions[:, 1],
                        peaks.directions[:, 0], -scores))
    k = order[0]
    d = peaks.directions[k] if dots[k] >= 0 else -peaks.directions[k]
    return d, float(scores[k])


def _march(start: np.ndarray, heading: np.ndarray, field: dict,
           dims, cfg: TrackingConfig) -> list[np.ndarray]:
    cos_limit = math.cos(math.radians(cfg.turn_deg))
    pos = start.copy()
    out = []
    h = heading / np.linalg.norm(heading)
    for _ in range(cfg.max_steps):
        nxt = pos + cfg.step * h
        vox = _voxel_of(nxt, dims)
        if vox is None:
            break
        peaks = field.get(vox)
        if peaks is None:
            break
        best = _best_peak(peaks, h)
        if best is None or best[1] < cos_limit:
            break
        out.append(nxt)
        pos = nxt
        h = best[0]
    return out


def track(peaks: list[PeakSet], dims: tuple[int, int, int],
          cfg: TrackingConfig = TrackingConfig()):
    """Trace streamlines through a peak field; returns (tracts, summary)."""
    n_vox = int(np.prod(dims))
    if len(peaks) != n_vox:
        raise ValidationError("need one PeakSet per grid voxel")
    field = {}
    for v in range(n_vox):
        if peaks[v].count > 0:
            field[tuple(int(c) for c in np.unravel_index(v, dims))] = peaks[v]

    tracts: list[Streamline] = []
    for v in range(n_vox):
        vox = tuple(int(c) for c in np.unravel_index(v, dims))
        ps = field.get(vox)
        if ps is None:
            continue
        center = np.array(vox, dtype=np.float64)
        for k in range(ps.count):
            d = ps.directions[k]
            fwd = _march(center, d, field, dims, cfg)
            bwd = _march(center, -d, field, dims, cfg)
            pts = np.array(list(reversed(bwd)) + [center] + fwd)
            line = Streamline(pts)
            if line.length >= cfg.min_length:
                tracts.append(line)

    lengths = [t.length for t in tracts]
    summary = {
        "count": len(tracts),
        "median_length": float(np.median(lengths)) if lengths else 0.0,
    }
    return tracts, summary
