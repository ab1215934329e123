"""Inner-modality online tracker.

Constant-velocity Kalman tracking over the 8-dim detection vector
[x, y, z, l, w, h, sin_yaw, cos_yaw] with two-stage score-split
association. New tracklets are never spawned during association; the
pipeline owns spawning so unmatched detections can be cross-checked
against the other modality first.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .geometry import Box3D, bev_footprint, diou
from .matching import min_cost_matching

CAMERA = "camera"
RADAR = "radar"

# Tracklet lifecycle states.
TENTATIVE = "tentative"
ACTIVE = "active"
LOST = "lost"
REMOVED = "removed"

# History entry sources.
DETECTED = "detected"
RECOVERED = "recovered"
PREDICTED = "predicted"

APPEARANCE_SMOOTHING = 0.9


class FrameRegressionError(ValueError):
    """Raised when a tracker is stepped to a non-increasing frame index."""


class StaleTrackletError(KeyError):
    """Raised when an operation targets an unknown or removed tracklet."""


@dataclass(frozen=True)
class Detection3D:
    """One sensor measurement: oriented box, confidence, and provenance."""

    box: Box3D
    score: float
    modality: str
    frame: int
    appearance: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if self.modality not in (CAMERA, RADAR):
            raise ValueError(f"unknown modality: {self.modality!r}")
        if self.appearance is not None:
            vec = np.asarray(self.appearance, dtype=float)
            norm = float(np.linalg.norm(vec))
            if abs(norm - 1.0) > 1e-6:
                raise ValueError(f"appearance vector must be unit-norm, got {norm}")
            object.__setattr__(self, "appearance", vec)


@dataclass
class MotionState:
    """Kalman state: 11-vector mean and its covariance.

    mean = [x, y, z, l, w, h, sin_yaw, cos_yaw, vx, vy, vz] with
    velocities in meters per frame.
    """

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float)
        self.covariance = np.asarray(self.covariance, dtype=float)
        if self.mean.shape != (11,) or self.covariance.shape != (11, 11):
            raise ValueError("motion state must be an 11-vector with 11x11 covariance")
        if np.abs(self.covariance - self.covariance.T).max() >= 1e-9:
            raise ValueError("covariance must be symmetric")
        if (np.diag(self.covariance) <= 0.0).any():
            raise ValueError("covariance diagonal must be positive")


class HistoryEntry(NamedTuple):
    frame: int
    box: Box3D
    source: str


class BoxKalmanFilter:
    """Constant-velocity filter over [x y z l w h sin cos vx vy vz].

    Size and heading are modeled as slowly varying measured states without
    velocities; only the position block carries velocity.
    """

    def __init__(self) -> None:
        self.motion_mat = np.eye(11)
        for i in range(3):
            self.motion_mat[i, 8 + i] = 1.0
        self.meas_mat = np.zeros((8, 11))
        self.meas_mat[:8, :8] = np.eye(8)
        # Per-frame process noise; sizes and heading nearly static.
        self.process_noise = np.diag(
            [0.01, 0.01, 0.01, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 0.01, 0.01, 0.01]
        )
        # Measurement noise: 0.5 m position, 0.2 m size, 0.1 heading.
        self.meas_noise = np.diag([0.25, 0.25, 0.25, 0.04, 0.04, 0.04, 0.01, 0.01])
        self.init_cov = np.diag(
            [0.25, 0.25, 0.25, 0.04, 0.04, 0.04, 0.01, 0.01, 1.0, 1.0, 1.0]
        )

    def initiate(self, measurement: np.ndarray) -> MotionState:
        mean = np.zeros(11)
        mean[:8] = measurement
        return MotionState(mean, self.init_cov.copy())

    def predict(self, state: MotionState) -> MotionState:
        mean = self.motion_mat @ state.mean
        cov = self.motion_mat @ state.covariance @ self.motion_mat.T + self.process_noise
        return MotionState(mean, 0.5 * (cov + cov.T))

    def update(
        self, state: MotionState, measurement: np.ndarray, noise_scale: float = 1.0
    ) -> MotionState:
        r = self.meas_noise * noise_scale
        h = self.meas_mat
        s = h @ state.covariance @ h.T + r
        gain = np.linalg.solve(s.T, (state.covariance @ h.T).T).T
        innovation = measurement - h @ state.mean
        mean = state.mean + gain @ innovation
        # Joseph form keeps the covariance symmetric positive-definite.
        ikh = np.eye(11) - gain @ h
        cov = ikh @ state.covariance @ ikh.T + gain @ r @ gain.T
        norm = math.hypot(mean[6], mean[7])
        if norm > 1e-12:
            mean[6] /= norm
            mean[7] /= norm
        return MotionState(mean, 0.5 * (cov + cov.T))


@dataclass(eq=False)
class Tracklet:
    """A tracked identity: motion state plus a bounded observation window."""

    tid: int
    modality: str
    status: str
    motion: MotionState
    history: deque[HistoryEntry]
    age: int = 0
    time_since_update: int = 0
    hits: int = 1
    score: float = 0.0
    appearance: np.ndarray | None = None

    def posterior_box(self) -> Box3D:
        m = self.motion.mean
        return Box3D(
            m[0], m[1], m[2],
            max(m[3], 1e-3), max(m[4], 1e-3), max(m[5], 1e-3),
            m[6], m[7],
        )

    def current_box(self, frame: int) -> tuple[Box3D, str]:
        """Box for this frame: the observation if one landed, else the
        motion-model prediction."""
        if self.history and self.history[-1].frame == frame:
            entry = self.history[-1]
            return entry.box, entry.source
        return self.posterior_box(), PREDICTED

    def observed_at(self, frame: int) -> bool:
        return bool(self.history) and self.history[-1].frame == frame

    def history_frames(self) -> list[int]:
        return [entry.frame for entry in self.history]

    def _smooth_appearance(self, feat: np.ndarray) -> None:
        if self.appearance is None:
            self.appearance = feat.copy()
        else:
            blended = APPEARANCE_SMOOTHING * self.appearance + (1.0 - APPEARANCE_SMOOTHING) * feat
            norm = np.linalg.norm(blended)
            self.appearance = blended / norm if norm > 1e-12 else feat.copy()


@dataclass(frozen=True)
class StepResult:
    """Association outcome for one frame.

    matched, unmatched_tracklets, and unmatched_detections partition the
    inputs: every detection index and every previously-alive tracklet id
    appears exactly once across the relevant fields.
    """

    matched: tuple[tuple[int, int], ...]
    unmatched_tracklets: tuple[int, ...]
    unmatched_detections: tuple[int, ...]
    spawned: tuple[int, ...] = ()


class Tracker:
    """Single-modality online tracker with deferred spawning."""

    def __init__(
        self,
        modality: str,
        history_len: int = 5,
        tau_high: float = 0.6,
        tau_low: float = 0.1,
        match_gate: float = 0.9,
        appearance_weight: float = 0.7,
        max_lost_frames: int = 10,
        hit_streak: int = 2,
        recover_noise_scale: float = 4.0,
    ) -> None:
        self.modality = modality
        self.history_len = history_len
        self.tau_high = tau_high
        self.tau_low = tau_low
        self.match_gate = match_gate
        self.appearance_weight = appearance_weight
        self.max_lost_frames = max_lost_frames
        self.hit_streak = hit_streak
        self.recover_noise_scale = recover_noise_scale
        self.kf = BoxKalmanFilter()
        self.tracklets: dict[int, Tracklet] = {}
        self.frame: int | None = None
        self._next_id = 1
        self._removed_ids: set[int] = set()

    # ------------------------------------------------------------------
    # lifecycle

    def predict(self, frame: int) -> None:
        """Advance every alive tracklet to the given frame."""
        if self.frame is not None and frame <= self.frame:
            raise FrameRegressionError(
                f"frame regression: {frame} after {self.frame}"
            )
        steps = 0 if self.frame is None else frame - self.frame
        for tracklet in self.tracklets.values():
            for _ in range(steps):
                tracklet.motion = self.kf.predict(tracklet.motion)
            tracklet.age += steps
            tracklet.time_since_update += steps
        self.frame = frame

    def associate(self, detections: Sequence[Detection3D]) -> StepResult:
        """Two-stage score-split association.

        Stage 1 matches high-score detections against every alive tracklet
        on a blended DIoU/appearance cost; stage 2 matches the remaining
        detections above the low threshold against still-unmatched
        non-tentative tracklets on pure DIoU.
        """
        tracklet_ids = sorted(self.tracklets)
        det_feet = [bev_footprint(d.box) for d in detections]
        track_feet = {
            tid: bev_footprint(self.tracklets[tid].posterior_box()) for tid in tracklet_ids
        }

        matches: list[tuple[int, int]] = []
        matched_tids: set[int] = set()
        matched_dets: set[int] = set()

        # Stage 1: high-score detections vs all alive tracklets.
        high = [i for i, d in enumerate(detections) if d.score >= self.tau_high]
        if high and tracklet_ids:
            cost = np.empty((len(tracklet_ids), len(high)))
            for r, tid in enumerate(tracklet_ids):
                tracklet = self.tracklets[tid]
                for c, di in enumerate(high):
                    det = detections[di]
                    geo = diou(track_feet[tid], det_feet[di])
                    if det.appearance is not None and tracklet.appearance is not None:
                        cos_sim = float(np.dot(det.appearance, tracklet.appearance))
                        cost[r, c] = (
                            self.appearance_weight * geo
                            + (1.0 - self.appearance_weight) * (1.0 - cos_sim)
                        )
                    else:
                        cost[r, c] = geo
            pairs, _, _ = min_cost_matching(cost, gate=self.match_gate)
            for r, c in pairs:
                matches.append((tracklet_ids[r], high[c]))

        matched_tids = {t for t, _ in matches}
        matched_dets = {d for _, d in matches}

        # Stage 2: remaining detections above the low threshold vs
        # still-unmatched non-tentative tracklets, geometric cost only.
        second = [
            i
            for i, d in enumerate(detections)
            if i not in matched_dets and d.score >= self.tau_low
        ]
        remaining = [
            tid
            for tid in tracklet_ids
            if tid not in matched_tids and self.tracklets[tid].status != TENTATIVE
        ]
        if second and remaining:
            cost = np.empty((len(remaining), len(second)))
            for r, tid in enumerate(remaining):
                for c, di in enumerate(second):
                    cost[r, c] = diou(track_feet[tid], det_feet[di])
            pairs, _, _ = min_cost_matching(cost, gate=self.match_gate)
            for r, c in pairs:
                matches.append((remaining[r], second[c]))

        matches.sort()
        for tid, di in matches:
            self._apply_match(self.tracklets[tid], detections[di])

        matched_tids = {t for t, _ in matches}
        matched_dets = {d for _, d in matches}
        unmatched_tracklets = tuple(t for t in tracklet_ids if t not in matched_tids)
        unmatched_detections = tuple(
            i for i in range(len(detections)) if i not in matched_dets
        )
        return StepResult(tuple(matches), unmatched_tracklets, unmatched_detections)

    def _apply_match(self, tracklet: Tracklet, det: Detection3D) -> None:
        tracklet.motion = self.kf.update(tracklet.motion, det.box.to_vector())
        tracklet.history.append(HistoryEntry(self.frame, det.box, DETECTED))
        tracklet.time_since_update = 0
        tracklet.hits += 1
        tracklet.score = det.score
        if det.appearance is not None:
            tracklet._smooth_appearance(det.appearance)
        if tracklet.status == TENTATIVE:
            if tracklet.hits >= self.hit_streak:
                tracklet.status = ACTIVE
        else:
            tracklet.status = ACTIVE

    def spawn(self, det: Detection3D, confirmed: bool) -> int:
        """Create a tracklet from a detection.

        Cross-modality confirmed detections start active; everything else
        starts tentative and must earn promotion through consecutive hits.
        """
        tid = self._next_id
        self._next_id += 1
        history: deque[HistoryEntry] = deque(maxlen=self.history_len)
        history.append(HistoryEntry(det.frame, det.box, DETECTED))
        tracklet = Tracklet(
            tid=tid,
            modality=self.modality,
            status=ACTIVE if confirmed else TENTATIVE,
            motion=self.kf.initiate(det.box.to_vector()),
            history=history,
            score=det.score,
            appearance=None if det.appearance is None else det.appearance.copy(),
        )
        self.tracklets[tid] = tracklet
        return tid

    def apply_recovery(self, tid: int, pseudo_box: Box3D, update_motion: bool) -> None:
        """Fill a missed frame with a pseudo observation from the paired
        modality; optionally feed it to the motion model with inflated
        measurement noise."""
        tracklet = self.tracklets.get(tid)
        if tracklet is None:
            raise StaleTrackletError(f"stale tracklet: {tid}")
        if tracklet.history and self.frame is not None and tracklet.history[-1].frame >= self.frame:
            raise ValueError(f"tracklet {tid} already observed at frame {self.frame}")
        tracklet.history.append(HistoryEntry(self.frame, pseudo_box, RECOVERED))
        tracklet.time_since_update = 0
        if tracklet.status == LOST:
            tracklet.status = ACTIVE
        if update_motion:
            tracklet.motion = self.kf.update(
                tracklet.motion, pseudo_box.to_vector(), noise_scale=self.recover_noise_scale
            )

    def prune(self) -> list[int]:
        """Demote unmatched actives, drop stale and unconfirmed tracklets."""
        removed = []
        for tid, tracklet in list(self.tracklets.items()):
            if tracklet.time_since_update > self.max_lost_frames:
                removed.append(tid)
            elif tracklet.status == TENTATIVE and tracklet.time_since_update > 0:
                removed.append(tid)
            elif tracklet.status == ACTIVE and tracklet.time_since_update > 0:
                tracklet.status = LOST
            elif tracklet.status == LOST and tracklet.time_since_update == 0:
                tracklet.status = ACTIVE
        for tid in removed:
            self.tracklets[tid].status = REMOVED
            del self.tracklets[tid]
            self._removed_ids.add(tid)
        return removed

    # ------------------------------------------------------------------
    # views

    def active_tracklets(self) -> list[Tracklet]:
        return [t for t in self.tracklets.values() if t.status == ACTIVE]

    def get(self, tid: int) -> Tracklet:
        tracklet = self.tracklets.get(tid)
        if tracklet is None:
            raise StaleTrackletError(f"stale tracklet: {tid}")
        return tracklet
