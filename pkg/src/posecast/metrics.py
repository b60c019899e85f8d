"""Evaluation metrics: angle-space MAE at fixed horizons, PCK, zero-velocity.

The horizon error is the plain Euclidean distance between the full
predicted and ground-truth pose vectors at that future frame, averaged
over all evaluated windows.  Horizons are wall-clock milliseconds and must
land on frame boundaries.

PCK normalizer note: the per-frame normalizer is the max dimension of the
ground-truth joint bounding box.  Published PCK numbers depend on the
normalizer convention, so absolute cross-paper comparisons should be made
with care.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError
from .posedata import PoseSequence

__all__ = [
    "DEFAULT_HORIZONS_MS",
    "HorizonReport",
    "horizon_frame_index",
    "angle_mae",
    "aggregate_reports",
    "zero_velocity_forecast",
    "pck",
]

DEFAULT_HORIZONS_MS = (80, 160, 320, 400, 560, 1000)


@dataclass
class HorizonReport:
    horizons_ms: tuple
    errors: dict  # horizon ms -> mean error
    n_windows: int
    per_action: dict = field(default_factory=dict)  # action -> (errors dict, n)


def horizon_frame_index(horizon_ms: float, frame_interval_ms: float) -> int:
    """0-based future-frame index for a horizon; must be a frame boundary."""
    k = horizon_ms / frame_interval_ms
    if abs(k - round(k)) > 1e-9 or round(k) < 1:
        raise ConfigError(
            f"horizon {horizon_ms} ms is not a positive multiple of the "
            f"frame interval {frame_interval_ms} ms")
    return int(round(k)) - 1


def angle_mae(pred: PoseSequence, truth: PoseSequence,
              horizons_ms=DEFAULT_HORIZONS_MS) -> HorizonReport:
    """Per-horizon Euclidean pose error for one predicted window."""
    if pred.dim != truth.dim or pred.n_frames != truth.n_frames:
        raise InputError(
            f"angle_mae: pred {pred.frames.shape} vs truth {truth.frames.shape}")
    if pred.frame_interval_ms != truth.frame_interval_ms:
        raise InputError("angle_mae: frame intervals differ")
    errors = {}
    for hz in horizons_ms:
        k = horizon_frame_index(hz, truth.frame_interval_ms)
        if k >= truth.n_frames:
            raise InputError(f"angle_mae: horizon {hz} ms beyond window "
                             f"({truth.n_frames} frames)")
        errors[hz] = float(np.linalg.norm(pred.frames[k] - truth.frames[k]))
    rep = HorizonReport(horizons_ms=tuple(horizons_ms), errors=errors, n_windows=1)
    if truth.action:
        rep.per_action[truth.action] = (dict(errors), 1)
    return rep


def aggregate_reports(reports: list[HorizonReport]) -> HorizonReport:
    """Window-count weighted mean of per-window (or partial) reports."""
    if not reports:
        raise InputError("aggregate_reports: no reports")
    horizons = reports[0].horizons_ms
    total = sum(r.n_windows for r in reports)
    errors = {hz: sum(r.errors[hz] * r.n_windows for r in reports) / total
              for hz in horizons}
    per_action = {}
    for r in reports:
        for act, (errs, n) in r.per_action.items():
            if act not in per_action:
                per_action[act] = ({hz: 0.0 for hz in horizons}, 0)
            acc, cnt = per_action[act]
            for hz in horizons:
                acc[hz] += errs[hz] * n
            per_action[act] = (acc, cnt + n)
    per_action = {act: ({hz: acc[hz] / cnt for hz in horizons}, cnt)
                  for act, (acc, cnt) in per_action.items()}
    return HorizonReport(horizons_ms=horizons, errors=errors, n_windows=total,
                         per_action=per_action)


def zero_velocity_forecast(seed: PoseSequence, n_steps: int) -> PoseSequence:
    """Repeat the last observed pose for every future frame."""
    if seed.n_frames < 1:
        raise InputError("zero_velocity_forecast: empty seed")
    if n_steps < 1:
        raise InputError(f"zero_velocity_forecast: n_steps must be >= 1, got {n_steps}")
    frames = np.tile(seed.frames[-1], (n_steps, 1))
    return PoseSequence(frames=frames, frame_interval_ms=seed.frame_interval_ms,
                        space=seed.space, action=seed.action)


def pck(pred: PoseSequence, truth: PoseSequence, threshold: float = 0.05):
    """Percentage of correct 2D keypoints per frame.

    A joint is correct when its Euclidean distance to the ground truth is
    strictly less than threshold times the frame normalizer (max dimension
    of the ground-truth joint bounding box).  Returns (scores, skipped):
    scores has one percentage per frame, NaN where the frame was skipped
    for a degenerate bounding box; skipped lists those frame indices.
    """
    if truth.space != "planar_2d" or pred.space != "planar_2d":
        raise InputError("pck: sequences must be planar_2d")
    if pred.dim != truth.dim or pred.n_frames != truth.n_frames:
        raise InputError("pck: shape mismatch between pred and truth")
    if pred.dim % 2 != 0:
        raise InputError(f"pck: dim {pred.dim} is not 2 * n_joints")
    n_joints = pred.dim // 2
    scores = []
    skipped = []
    for k in range(truth.n_frames):
        tj = truth.frames[k].reshape(n_joints, 2)
        pj = pred.frames[k].reshape(n_joints, 2)
        span = tj.max(axis=0) - tj.min(axis=0)
        norm = float(span.max())
        if norm <= 0:
            scores.append(float("nan"))
            skipped.append(k)
            continue
        dists = np.linalg.norm(pj - tj, axis=1)
        scores.append(100.0 * float(np.count_nonzero(dists < threshold * norm)) / n_joints)
    return scores, skipped
