"""Cross-modality checks.

Two recovery paths between the per-modality trackers: unmatched tracklets
borrow the current detection of their paired opposite-modality tracklet,
and unmatched detections are vetted in the view where the opposite sensor
is strong (radar candidates in the camera's perspective view, camera
candidates in BEV) before they may seed new tracklets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import (
    Box3D,
    CameraModel,
    bev_footprint,
    bev_iou,
    diou,
    overlap_fraction,
    project_box,
    rect_iou,
)
from .matching import min_cost_matching
from .tracker import CAMERA, RADAR, Detection3D

PERSPECTIVE = "perspective"
BEV = "bev"


@dataclass(frozen=True)
class RecoveryAction:
    """Fill order for one unmatched tracklet from its paired opposite."""

    tracklet_id: int
    pseudo_box: Box3D
    pair_id: int


@dataclass(frozen=True)
class ConfirmAction:
    """An unmatched detection vouched for by the opposite modality."""

    detection_index: int
    opposite_index: int
    view: str
    cost: float


@dataclass(frozen=True)
class CheckResult:
    """Partition of the checked detections.

    discarded, confirmed detection indices, and candidates are disjoint and
    cover every input index.
    """

    discarded: tuple[int, ...]
    confirmed: tuple[ConfirmAction, ...]
    candidates: tuple[int, ...]


def recover_unmatched_tracklets(
    unmatched: Iterable[int],
    pairs: Sequence,
    opposite_matched: Mapping[int, Box3D],
    side: str,
) -> list[RecoveryAction]:
    """Recovery actions for this side's unmatched tracklets.

    An action is emitted for each pair whose member on `side` went unmatched
    while the opposite member was matched this frame; the pseudo box is the
    opposite member's current detected box (both modalities share the ego
    frame, so no transform is needed).
    """
    if side not in (CAMERA, RADAR):
        raise ValueError(f"unknown side: {side!r}")
    unmatched_set = set(unmatched)
    actions = []
    for pair in pairs:
        box = opposite_matched.get(pair.pair_id)
        if box is None:
            continue
        own_id = pair.camera_id if side == CAMERA else pair.radar_id
        if own_id in unmatched_set:
            actions.append(RecoveryAction(own_id, box, pair.pair_id))
    return actions


def check_unmatched_radar(
    unmatched_radar: Sequence[Detection3D],
    established: Sequence[Box3D],
    camera_dets: Sequence[Detection3D],
    cam: CameraModel,
    occlusion_overlap: float = 0.5,
    match_iou: float = 0.3,
) -> CheckResult:
    """Vet unmatched radar detections in the camera's perspective view.

    A radar detection whose projection is mostly covered by an established
    tracklet is discarded as an occlusion artifact. Survivors are matched
    against unmatched camera detections by image IoU; matches confirm new
    radar tracklets and the rest are returned as spawn candidates.
    """
    radar_rects = [project_box(d.box, cam) for d in unmatched_radar]
    est_rects = [r for r in (project_box(b, cam) for b in established) if r is not None]

    discarded = []
    testable = []  # indices with a valid projection that survived the occlusion test
    blind = []  # no projection: cannot be vetted in this view
    for i, rect in enumerate(radar_rects):
        if rect is None:
            blind.append(i)
        elif any(overlap_fraction(rect, er) > occlusion_overlap for er in est_rects):
            discarded.append(i)
        else:
            testable.append(i)

    cam_rects = [project_box(d.box, cam) for d in camera_dets]
    cam_cols = [j for j, r in enumerate(cam_rects) if r is not None]

    confirmed = []
    matched_rows: set[int] = set()
    if testable and cam_cols:
        cost = np.empty((len(testable), len(cam_cols)))
        for r, i in enumerate(testable):
            for c, j in enumerate(cam_cols):
                cost[r, c] = 1.0 - rect_iou(radar_rects[i], cam_rects[j])
        pairs, _, _ = min_cost_matching(cost, gate=1.0 - match_iou)
        for r, c in pairs:
            confirmed.append(
                ConfirmAction(testable[r], cam_cols[c], PERSPECTIVE, float(cost[r, c]))
            )
            matched_rows.add(testable[r])

    candidates = tuple(
        sorted(i for i in testable + blind if i not in matched_rows)
    )
    return CheckResult(tuple(discarded), tuple(confirmed), candidates)


def check_unmatched_camera(
    unmatched_camera: Sequence[Detection3D],
    established: Sequence[Box3D],
    radar_dets: Sequence[Detection3D],
    occlusion_iou: float = 0.3,
    match_diou: float = 0.9,
) -> CheckResult:
    """BEV mirror of the radar check for unmatched camera detections.

    Distance-IoU is used for the matching stage because monocular depth is
    too loose for plain IoU at range.
    """
    cam_feet = [bev_footprint(d.box) for d in unmatched_camera]
    est_feet = [bev_footprint(b) for b in established]

    discarded = []
    testable = []
    for i, foot in enumerate(cam_feet):
        if any(bev_iou(foot, ef) > occlusion_iou for ef in est_feet):
            discarded.append(i)
        else:
            testable.append(i)

    radar_feet = [bev_footprint(d.box) for d in radar_dets]
    confirmed = []
    matched_rows: set[int] = set()
    if testable and radar_feet:
        cost = np.empty((len(testable), len(radar_feet)))
        for r, i in enumerate(testable):
            for c, foot in enumerate(radar_feet):
                cost[r, c] = diou(cam_feet[i], foot)
        pairs, _, _ = min_cost_matching(cost, gate=match_diou)
        for r, c in pairs:
            confirmed.append(ConfirmAction(testable[r], c, BEV, float(cost[r, c])))
            matched_rows.add(testable[r])

    candidates = tuple(sorted(i for i in testable if i not in matched_rows))
    return CheckResult(tuple(discarded), tuple(confirmed), candidates)
