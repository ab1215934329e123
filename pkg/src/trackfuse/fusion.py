"""Tracklet pairing across modalities and uncertainty-weighted fusion.

Pairing compares windowed tracklet histories with one of three costs
(average IoU, average polyline area, average center distance) and keeps a
sticky one-to-one registry. Paired tracklets are fused by weighting each
modality with the variability of its recent per-frame displacement
magnitudes: the steadier track pulls the fused center toward itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .geometry import Box3D, bev_footprint, bev_iou, polygon_area
from .matching import min_cost_matching
from .tracker import ACTIVE, CAMERA, RADAR, Tracklet

PAIR_METRIC_IOU = "iou"
PAIR_METRIC_AOP = "aop"
PAIR_METRIC_CD = "cd"

WEIGHT_UNIFORM = "uniform"
WEIGHT_RECIPROCAL = "weighted_sum"
WEIGHT_SOFTMAX = "softmax"

FUSED = "fused"

# Clamp for the non-normalized literal weighting variant, which would
# overflow exp() for large spreads.
_SIGMA_CLAMP = 30.0


@dataclass(frozen=True)
class TrackletPair:
    """A camera-radar tracklet association with a stable fused identity."""

    pair_id: int
    camera_id: int
    radar_id: int
    cost: float
    frames_paired: int = 1
    miss_streak: int = 0


@dataclass(frozen=True)
class DisplacementWindow:
    """Per-frame displacement magnitudes and their spread score."""

    deltas: tuple[float, ...]
    mean: float
    sigma: float


@dataclass(frozen=True)
class FusedTrack:
    """One output track: a fused pair or a passed-through single tracklet."""

    source: str  # "fused" | "camera" | "radar"
    track_id: int  # pair id for fused, tracklet id for passthrough
    box: Box3D
    score: float
    w_camera: float
    w_radar: float
    obs_camera: str | None
    obs_radar: str | None
    members: tuple[int, int] | None = None  # (camera tid, radar tid) when fused


def _common_frames(tr1: Tracklet, tr2: Tracklet, n: int) -> list[int]:
    frames = sorted(set(tr1.history_frames()) & set(tr2.history_frames()))
    return frames[-n:]


def _center_at(tr: Tracklet, frame: int) -> tuple[float, float]:
    for entry in tr.history:
        if entry.frame == frame:
            return entry.box.bev_center
    raise KeyError(f"no history entry at frame {frame}")


def pair_cost_avg_iou(tr1: Tracklet, tr2: Tracklet, n: int) -> float:
    """1 minus the mean BEV IoU over the last n common history frames."""
    frames = _common_frames(tr1, tr2, n)
    if not frames:
        return math.inf
    total = 0.0
    for f in frames:
        b1 = next(e.box for e in tr1.history if e.frame == f)
        b2 = next(e.box for e in tr2.history if e.frame == f)
        total += bev_iou(bev_footprint(b1), bev_footprint(b2))
    return 1.0 - total / len(frames)


def pair_cost_avg_aop(tr1: Tracklet, tr2: Tracklet, n: int) -> float:
    """Area of the polygon enclosing the two center polylines, per frame.

    Coincident or collinear polylines (tracklets in the same lane) give
    zero, which is exactly why this metric degrades as a pairing cost.
    """
    frames = _common_frames(tr1, tr2, n)
    if len(frames) < 2:
        return math.inf
    poly = [_center_at(tr1, f) for f in frames]
    poly.extend(_center_at(tr2, f) for f in reversed(frames))
    return polygon_area(poly) / len(frames)


def pair_cost_avg_cd(tr1: Tracklet, tr2: Tracklet, n: int) -> float:
    """Mean Euclidean BEV center distance over common history frames."""
    frames = _common_frames(tr1, tr2, n)
    if not frames:
        return math.inf
    total = 0.0
    for f in frames:
        c1 = _center_at(tr1, f)
        c2 = _center_at(tr2, f)
        total += math.hypot(c1[0] - c2[0], c1[1] - c2[1])
    return total / len(frames)


_PAIR_COSTS = {
    PAIR_METRIC_IOU: pair_cost_avg_iou,
    PAIR_METRIC_AOP: pair_cost_avg_aop,
    PAIR_METRIC_CD: pair_cost_avg_cd,
}


def pair_tracklets(
    existing: Sequence[TrackletPair],
    camera_tracklets: Sequence[Tracklet],
    radar_tracklets: Sequence[Tracklet],
    camera_alive: set[int],
    radar_alive: set[int],
    metric: str,
    gate: float,
    n: int,
    next_pair_id: int,
    dissolve_after: int = 3,
) -> tuple[list[TrackletPair], int]:
    """Maintain the sticky pair registry and form new pairs.

    Existing pairs persist while their cost stays gated; a pair dissolves
    after `dissolve_after` consecutive failing frames or as soon as a
    member is removed from its tracker. Unclaimed tracklets are then
    paired one-to-one by minimum cost on the chosen metric.
    """
    cost_fn = _PAIR_COSTS[metric]
    cam_map = {t.tid: t for t in camera_tracklets}
    radar_map = {t.tid: t for t in radar_tracklets}

    kept: list[TrackletPair] = []
    claimed_cam: set[int] = set()
    claimed_radar: set[int] = set()
    for pair in existing:
        if pair.camera_id not in camera_alive or pair.radar_id not in radar_alive:
            continue
        tr1 = cam_map.get(pair.camera_id)
        tr2 = radar_map.get(pair.radar_id)
        cost = cost_fn(tr1, tr2, n) if tr1 is not None and tr2 is not None else math.inf
        if cost <= gate:
            kept.append(
                replace(pair, cost=cost, frames_paired=pair.frames_paired + 1, miss_streak=0)
            )
        elif pair.miss_streak + 1 < dissolve_after:
            kept.append(replace(pair, miss_streak=pair.miss_streak + 1))
        else:
            continue
        claimed_cam.add(pair.camera_id)
        claimed_radar.add(pair.radar_id)

    free_cam = [t for t in camera_tracklets if t.tid not in claimed_cam]
    free_radar = [t for t in radar_tracklets if t.tid not in claimed_radar]
    if free_cam and free_radar:
        cost = np.empty((len(free_cam), len(free_radar)))
        for r, tr1 in enumerate(free_cam):
            for c, tr2 in enumerate(free_radar):
                cost[r, c] = cost_fn(tr1, tr2, n)
        pairs, _, _ = min_cost_matching(cost, gate=gate)
        for r, c in pairs:
            kept.append(
                TrackletPair(next_pair_id, free_cam[r].tid, free_radar[c].tid, float(cost[r, c]))
            )
            next_pair_id += 1
    return kept, next_pair_id


def displacement_std(tr: Tracklet, n: int, sample: bool = False) -> DisplacementWindow:
    """Spread of the BEV displacement magnitudes between consecutive
    history entries (at most n of them).

    The default score divides the root of the squared deviations by
    (count - 1); `sample` switches to the conventional sample standard
    deviation. Fewer than two displacements give an infinite score, i.e.
    maximal uncertainty.
    """
    entries = list(tr.history)[-(n + 1):]
    deltas = []
    for prev, cur in zip(entries, entries[1:]):
        c0, c1 = prev.box.bev_center, cur.box.bev_center
        deltas.append(math.hypot(c1[0] - c0[0], c1[1] - c0[1]))
    if len(deltas) < 2:
        mean = deltas[0] if deltas else 0.0
        return DisplacementWindow(tuple(deltas), mean, math.inf)
    mean = sum(deltas) / len(deltas)
    ssq = sum((d - mean) ** 2 for d in deltas)
    if sample:
        sigma = math.sqrt(ssq / (len(deltas) - 1))
    else:
        sigma = math.sqrt(ssq) / (len(deltas) - 1)
    return DisplacementWindow(tuple(deltas), mean, sigma)


def fusion_weights(
    sigma1: float, sigma2: float, scheme: str = WEIGHT_SOFTMAX, literal: bool = False
) -> tuple[float, float]:
    """Fusion weights from two displacement-spread scores.

    The default scheme is softmax(-sigma), a normalized convex weighting:
    the steadier modality gets the larger weight, an infinite score gets
    zero, and equal scores split evenly. `weighted_sum` normalizes the
    reciprocals instead. `literal` switches softmax to the raw
    reciprocal-of-softmax form, whose weights do not sum to one; it exists
    only for ablation.
    """
    if sigma1 < 0.0 or sigma2 < 0.0:
        raise ValueError("spread scores must be non-negative")
    if scheme == WEIGHT_UNIFORM:
        return 0.5, 0.5
    both_inf = math.isinf(sigma1) and math.isinf(sigma2)
    if scheme == WEIGHT_RECIPROCAL:
        if both_inf:
            return 0.5, 0.5
        if sigma1 == 0.0 and sigma2 == 0.0:
            return 0.5, 0.5
        if sigma1 == 0.0 or math.isinf(sigma2):
            return 1.0, 0.0
        if sigma2 == 0.0 or math.isinf(sigma1):
            return 0.0, 1.0
        r1, r2 = 1.0 / sigma1, 1.0 / sigma2
        return r1 / (r1 + r2), r2 / (r1 + r2)
    if scheme != WEIGHT_SOFTMAX:
        raise ValueError(f"unknown weighting scheme: {scheme!r}")
    if literal:
        s1 = min(sigma1, _SIGMA_CLAMP)
        s2 = min(sigma2, _SIGMA_CLAMP)
        w1 = 1.0 + math.exp(s2 - s1)
        w2 = 1.0 + math.exp(s1 - s2)
        return w1, w2
    if both_inf:
        return 0.5, 0.5
    if math.isinf(sigma1):
        return 0.0, 1.0
    if math.isinf(sigma2):
        return 1.0, 0.0
    shift = min(sigma1, sigma2)
    e1 = math.exp(-(sigma1 - shift))
    e2 = math.exp(-(sigma2 - shift))
    return e1 / (e1 + e2), e2 / (e1 + e2)


def fuse_pair(
    pair: TrackletPair,
    camera_tr: Tracklet,
    radar_tr: Tracklet,
    frame: int,
    n: int,
    weighting: str = WEIGHT_SOFTMAX,
    eq3_literal: bool = False,
    std_sample: bool = False,
    prev_center: tuple[float, float, float] | None = None,
) -> FusedTrack:
    """Fuse one pair into a single box.

    The fused center is the weighted combination of the members' current
    centers; size and heading are taken verbatim from the higher-weight
    member since detectors disagree on conventions. When `prev_center` is
    given, the fused center integrates the weighted displacement vectors
    from it instead of mixing absolute positions.
    """
    w_cam, w_radar = fusion_weights(
        displacement_std(camera_tr, n, sample=std_sample).sigma,
        displacement_std(radar_tr, n, sample=std_sample).sigma,
        scheme=weighting,
        literal=eq3_literal,
    )
    box_c, src_c = camera_tr.current_box(frame)
    box_r, src_r = radar_tr.current_box(frame)
    if prev_center is not None:
        dc = _last_displacement(camera_tr, frame)
        dr = _last_displacement(radar_tr, frame)
        center = (
            prev_center[0] + w_cam * dc[0] + w_radar * dr[0],
            prev_center[1] + w_cam * dc[1] + w_radar * dr[1],
            w_cam * box_c.z + w_radar * box_r.z,
        )
    else:
        center = (
            w_cam * box_c.x + w_radar * box_r.x,
            w_cam * box_c.y + w_radar * box_r.y,
            w_cam * box_c.z + w_radar * box_r.z,
        )
    donor = box_c if w_cam >= w_radar else box_r
    fused_box = Box3D(
        center[0], center[1], center[2],
        donor.l, donor.w, donor.h, donor.sin_yaw, donor.cos_yaw,
    )
    score = w_cam * camera_tr.score + w_radar * radar_tr.score
    denom = w_cam + w_radar
    if denom > 0.0:
        score = min(max(score / denom, 0.0), 1.0)
    return FusedTrack(
        source=FUSED,
        track_id=pair.pair_id,
        box=fused_box,
        score=score,
        w_camera=w_cam,
        w_radar=w_radar,
        obs_camera=src_c,
        obs_radar=src_r,
        members=(camera_tr.tid, radar_tr.tid),
    )


def _last_displacement(tr: Tracklet, frame: int) -> tuple[float, float]:
    entries = list(tr.history)
    if len(entries) >= 2 and entries[-1].frame == frame:
        c0 = entries[-2].box.bev_center
        c1 = entries[-1].box.bev_center
        return (c1[0] - c0[0], c1[1] - c0[1])
    return (0.0, 0.0)


def fuse_all(
    pairs: Sequence[TrackletPair],
    camera_tracklets: Mapping[int, Tracklet],
    radar_tracklets: Mapping[int, Tracklet],
    frame: int,
    n: int,
    weighting: str = WEIGHT_SOFTMAX,
    eq3_literal: bool = False,
    std_sample: bool = False,
    dedup_iou: float = 0.5,
    fuse_displacements: bool = False,
    prev_centers: Mapping[int, tuple[float, float, float]] | None = None,
) -> tuple[list[FusedTrack], dict[int, tuple[float, float, float]]]:
    """Fused tracks for all pairs plus deduplicated passthrough tracks.

    A pair is emitted when at least one member was observed this frame.
    Unpaired active tracklets that were observed pass through under a
    modality-namespaced identity, greedily suppressed against already-kept
    outputs by BEV IoU, fused tracks first, then higher scores first.
    """
    outputs: list[FusedTrack] = []
    centers: dict[int, tuple[float, float, float]] = {}
    paired_cam: set[int] = set()
    paired_radar: set[int] = set()
    for pair in pairs:
        paired_cam.add(pair.camera_id)
        paired_radar.add(pair.radar_id)
        tr_c = camera_tracklets.get(pair.camera_id)
        tr_r = radar_tracklets.get(pair.radar_id)
        if tr_c is None or tr_r is None:
            continue
        prev = prev_centers.get(pair.pair_id) if (fuse_displacements and prev_centers) else None
        fused = fuse_pair(
            pair, tr_c, tr_r, frame, n,
            weighting=weighting, eq3_literal=eq3_literal, std_sample=std_sample,
            prev_center=prev,
        )
        centers[pair.pair_id] = (fused.box.x, fused.box.y, fused.box.z)
        if tr_c.observed_at(frame) or tr_r.observed_at(frame):
            outputs.append(fused)

    kept_feet = [bev_footprint(track.box) for track in outputs]
    passthrough = []
    for modality, tracklets, paired in (
        (CAMERA, camera_tracklets, paired_cam),
        (RADAR, radar_tracklets, paired_radar),
    ):
        for tid in sorted(tracklets):
            tr = tracklets[tid]
            if tid in paired or tr.status != ACTIVE or not tr.observed_at(frame):
                continue
            box, src = tr.current_box(frame)
            passthrough.append((tr.score, modality, tid, box, src))
    passthrough.sort(key=lambda item: (-item[0], item[1], item[2]))
    for score, modality, tid, box, src in passthrough:
        foot = bev_footprint(box)
        if any(bev_iou(foot, kf) > dedup_iou for kf in kept_feet):
            continue
        kept_feet.append(foot)
        outputs.append(
            FusedTrack(
                source=modality,
                track_id=tid,
                box=box,
                score=score,
                w_camera=1.0 if modality == CAMERA else 0.0,
                w_radar=1.0 if modality == RADAR else 0.0,
                obs_camera=src if modality == CAMERA else None,
                obs_radar=src if modality == RADAR else None,
            )
        )
    return outputs, centers
