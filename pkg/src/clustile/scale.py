"""Per-cluster object scale estimation and its regression loss.

The "scale" of a box is sqrt(area), a length in pixels. Each cluster
gets a reference scale (median of its member detections' scales) and an
estimated scale; the regression target is the relative offset
(reference - estimate) / reference. Estimators are deliberately simple,
deterministic stand-ins for a learned scale regressor: pass_through
returns the reference scale, offset_regressor is a closed-form linear
model on density features, and oracle reads the ground truth (test use
only).
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import ValidationError
from .geometry import Box, area, contains_point
from .records import Annotation, Cluster, Detection, ImageRecord

__all__ = [
    "ScaleRecord",
    "object_scale",
    "reference_scale",
    "relative_offset",
    "smooth_l1",
    "smooth_l1_grad",
    "scale_loss",
    "scale_loss_gradient",
    "ScaleEstimator",
    "PassThroughEstimator",
    "OracleEstimator",
    "OffsetRegressor",
    "fit_offset_regressor",
    "build_estimator",
    "estimate_scale",
    "cluster_member_detections",
    "cluster_ground_truth_scale",
    "make_scale_record",
]


@dataclass(frozen=True)
class ScaleRecord:
    """Scales and offsets for one cluster.

    target_scale and target_offset are absent when no ground truth is
    attached. offset must equal
    (reference_scale - estimated_scale) / reference_scale.
    """

    cluster_id: int
    reference_scale: float
    estimated_scale: float
    offset: float
    target_scale: float | None = None
    target_offset: float | None = None

    def __post_init__(self) -> None:
        if self.reference_scale <= 0:
            raise ValidationError(
                f"reference_scale must be positive, got {self.reference_scale}"
            )
        expected = relative_offset(self.reference_scale, self.estimated_scale)
        if abs(self.offset - expected) > 1e-12:
            raise ValidationError(
                f"offset {self.offset} does not match (reference - estimated) / "
                f"reference = {expected}"
            )
        if (self.target_scale is None) != (self.target_offset is None):
            raise ValidationError("target_scale and target_offset must come together")
        if self.target_scale is not None and self.target_offset is not None:
            expected = relative_offset(self.reference_scale, self.target_scale)
            if abs(self.target_offset - expected) > 1e-12:
                raise ValidationError(
                    f"target_offset {self.target_offset} does not match "
                    f"(reference - target) / reference = {expected}"
                )


def make_scale_record(
    cluster_id: int,
    reference: float,
    estimated: float,
    target: float | None = None,
) -> ScaleRecord:
    """Build a ScaleRecord with offsets derived from the given scales."""
    return ScaleRecord(
        cluster_id=cluster_id,
        reference_scale=reference,
        estimated_scale=estimated,
        offset=relative_offset(reference, estimated),
        target_scale=target,
        target_offset=None if target is None else relative_offset(reference, target),
    )


def object_scale(b: Box) -> float:
    """Scale of a single box: sqrt(area), a length in pixels."""
    return math.sqrt(area(b))


def reference_scale(detections_in_cluster: Sequence[Detection]) -> float:
    """Median scale of the member detections, robust to outliers."""
    if not detections_in_cluster:
        raise ValidationError("reference_scale needs at least one detection")
    return float(statistics.median(object_scale(d.box) for d in detections_in_cluster))


def relative_offset(reference: float, scale: float) -> float:
    """(reference - scale) / reference."""
    if reference <= 0:
        raise ValidationError(f"reference scale must be positive, got {reference}")
    return (reference - scale) / reference


def smooth_l1(x: float) -> float:
    """0.5 x^2 inside |x| < 1, |x| - 0.5 outside; C1 at the junction."""
    ax = abs(x)
    if ax < 1.0:
        return 0.5 * x * x
    return ax - 0.5


def smooth_l1_grad(x: float) -> float:
    """Derivative of smooth_l1: x inside |x| < 1, sign(x) outside."""
    if abs(x) < 1.0:
        return x
    return math.copysign(1.0, x)


def _require_targets(records: Sequence[ScaleRecord]) -> None:
    if not records:
        raise ValidationError("scale loss needs at least one record")
    for r in records:
        if r.target_offset is None:
            raise ValidationError(
                f"record for cluster {r.cluster_id} has no target offset"
            )


def scale_loss(records: Sequence[ScaleRecord]) -> float:
    """Mean smooth-L1 of (offset - target_offset) over the records."""
    _require_targets(records)
    total = sum(smooth_l1(r.offset - r.target_offset) for r in records)
    return total / len(records)


def scale_loss_gradient(records: Sequence[ScaleRecord]) -> list[float]:
    """Partial derivatives of scale_loss with respect to each offset."""
    _require_targets(records)
    inv = 1.0 / len(records)
    return [inv * smooth_l1_grad(r.offset - r.target_offset) for r in records]


def cluster_member_detections(
    cluster: Cluster, detections: Sequence[Detection]
) -> list[Detection]:
    """Detections whose center falls inside the cluster box."""
    return [d for d in detections if contains_point(cluster.box, *d.box.center)]


def cluster_ground_truth_scale(
    cluster: Cluster, annotations: Sequence[Annotation]
) -> float:
    """Average scale of the ground-truth boxes centered in the cluster."""
    scales = [
        object_scale(a.box)
        for a in annotations
        if contains_point(cluster.box, *a.box.center)
    ]
    if not scales:
        raise ValidationError("cluster contains no ground-truth objects")
    return float(np.mean(scales))


class ScaleEstimator(Protocol):
    name: str

    def estimate(
        self, cluster: Cluster, members: Sequence[Detection], image: ImageRecord
    ) -> float: ...


class PassThroughEstimator:
    """Returns the reference scale unchanged (predicted offset is zero)."""

    name = "pass_through"

    def estimate(
        self, cluster: Cluster, members: Sequence[Detection], image: ImageRecord
    ) -> float:
        return reference_scale(members)


class OracleEstimator:
    """Reads the true average member scale from the annotations. Test only."""

    name = "oracle"

    def estimate(
        self, cluster: Cluster, members: Sequence[Detection], image: ImageRecord
    ) -> float:
        return cluster_ground_truth_scale(cluster, image.annotations)


# Predicted offsets outside this range would produce non-positive or
# absurd scales; the regressor clamps to stay usable on odd inputs.
_OFFSET_CLAMP = (-10.0, 0.95)


class OffsetRegressor:
    """Least-squares linear model predicting the relative scale offset.

    Features are [1, log member_count, log(cluster area / image area)];
    coefficients come from the closed-form normal equations. The
    predicted offset is clamped, then estimated = reference * (1 - offset).
    """

    name = "offset_regressor"

    def __init__(self, coefficients: Sequence[float] | None = None) -> None:
        self.coefficients = None if coefficients is None else [float(c) for c in coefficients]

    @staticmethod
    def features(member_count: int, cluster_area: float, image_area: float) -> list[float]:
        return [1.0, math.log(max(member_count, 1)), math.log(cluster_area / image_area)]

    def fit(self, rows: Sequence[Sequence[float]], targets: Sequence[float]) -> None:
        """Solve the normal equations for feature rows and target offsets."""
        if len(rows) < 1:
            raise ValidationError("offset regressor needs at least one training row")
        x = np.asarray(rows, dtype=np.float64)
        y = np.asarray(targets, dtype=np.float64)
        gram = x.T @ x
        try:
            beta = np.linalg.solve(gram, x.T @ y)
        except np.linalg.LinAlgError:
            beta = np.linalg.lstsq(x, y, rcond=None)[0]
        self.coefficients = [float(b) for b in beta]

    def predict_offset(self, features: Sequence[float]) -> float:
        if self.coefficients is None:
            raise ValidationError("offset regressor is not fitted")
        raw = float(np.dot(self.coefficients, features))
        return min(max(raw, _OFFSET_CLAMP[0]), _OFFSET_CLAMP[1])

    def estimate(
        self, cluster: Cluster, members: Sequence[Detection], image: ImageRecord
    ) -> float:
        reference = reference_scale(members)
        feats = self.features(
            len(members),
            area(cluster.box),
            float(image.extent.width * image.extent.height),
        )
        return reference * (1.0 - self.predict_offset(feats))

    def to_json(self) -> dict:
        if self.coefficients is None:
            raise ValidationError("offset regressor is not fitted")
        return {"model": "offset_regressor", "coefficients": self.coefficients}

    @classmethod
    def from_json(cls, payload: dict) -> "OffsetRegressor":
        if payload.get("model") != "offset_regressor":
            raise ValidationError("payload field 'model' must be 'offset_regressor'")
        return cls(payload["coefficients"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "OffsetRegressor":
        return cls.from_json(json.loads(Path(path).read_text()))


def fit_offset_regressor(
    samples: Sequence[tuple[Cluster, Sequence[Detection], ImageRecord]],
) -> OffsetRegressor:
    """Fit the linear offset model from (cluster, member detections, image)
    triples; clusters without ground-truth members are skipped."""
    rows, targets = [], []
    for cluster, members, image in samples:
        if not members:
            continue
        try:
            target = cluster_ground_truth_scale(cluster, image.annotations)
        except ValidationError:
            continue
        reference = reference_scale(members)
        rows.append(
            OffsetRegressor.features(
                len(members),
                area(cluster.box),
                float(image.extent.width * image.extent.height),
            )
        )
        targets.append(relative_offset(reference, target))
    model = OffsetRegressor()
    model.fit(rows, targets)
    return model


def estimate_scale(
    cluster: Cluster,
    global_dets: Sequence[Detection],
    estimator: ScaleEstimator,
    image: ImageRecord,
) -> float:
    """Estimated object scale for one cluster, always positive.

    Member detections are the whole-image detections centered inside the
    cluster box. Clusters with no members cannot be estimated except by
    the oracle; callers should skip such clusters.
    """
    members = cluster_member_detections(cluster, global_dets)
    if not members and estimator.name != "oracle":
        raise ValidationError(
            "cluster has no member detections; skip it or use the oracle estimator"
        )
    estimate = estimator.estimate(cluster, members, image)
    if estimate <= 0:
        raise ValidationError(f"estimator produced non-positive scale {estimate}")
    return estimate


def build_estimator(name: str, model_path: str | Path | None = None) -> ScaleEstimator:
    """Estimator factory used by configuration files."""
    if name == "pass_through":
        return PassThroughEstimator()
    if name == "oracle":
        return OracleEstimator()
    if name == "offset_regressor":
        if model_path is None:
            raise ValidationError("offset_regressor requires a fitted model path")
        return OffsetRegressor.load(model_path)
    raise ValidationError(f"unknown estimator {name!r}")
