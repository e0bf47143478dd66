"""Segmentation evaluation: overlap, boundary distances, axis geometry, composite score.

Masks are 2-D integer label maps over {0 background, 1 pubic symphysis (PS),
2 fetal head (FH)}; ALL denotes the union of both foreground labels.
Boundaries use 4-adjacency: a foreground pixel touching background or the
image edge. Distances are Euclidean in pixel units scaled by the mask's
pixel spacing.

The angle of progression is reconstructed from the masks: the PS long axis is
the principal direction of its pixels, and from the axis endpoint nearer the
FH the two rays tangent to the FH pixel set are formed; the reported angle is
the larger of the two angles each tangent makes with the ray toward the other
PS endpoint (the tangent on the side the head descends past the symphysis).
"""

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.spatial import cKDTree

PS = "PS"
FH = "FH"
ALL = "ALL"
STRUCTURES = (FH, PS, ALL)

WORST_DISTANCE = 100.0  # sentinel recorded when a region is empty
WORST_ANGLE_DELTA = 180.0


class EmptyRegionError(ValueError):
    """A boundary-distance metric was asked about an empty region."""

    def __init__(self, structure: str, side: str):
        super().__init__(f"{structure} region empty in {side} mask")
        self.structure = structure
        self.side = side


class GeometryError(ValueError):
    """Axis geometry cannot be extracted from the given mask."""


@dataclass(frozen=True)
class SegMask:
    """Label map plus pixel spacing (distance units per pixel)."""

    labels: np.ndarray
    pixel_spacing: float = 1.0

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        if not np.isin(arr, (0, 1, 2)).all():
            raise ValueError("mask labels must be in {0, 1, 2}")
        if not self.pixel_spacing > 0:
            raise ValueError("pixel spacing must be positive")
        object.__setattr__(self, "labels", arr.astype(np.uint8))


@dataclass(frozen=True)
class AopGeometry:
    """PS axis endpoints, FH tangent touch point, and the angle in degrees."""

    ps_axis: tuple[tuple[float, float], tuple[float, float]]
    fh_tangent: tuple[float, float]
    aop: float


@dataclass(frozen=True)
class ScoreReport:
    """Per-case metric set; ``score`` always equals the formula over its own fields."""

    dsc_fh: float
    dsc_ps: float
    dsc_all: float
    hd_fh: float
    hd_ps: float
    hd_all: float
    asd_fh: float
    asd_ps: float
    asd_all: float
    delta_aop: float
    score: float
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d


# -- region helpers -------------------------------------------------------------


def structure_mask(mask: SegMask, structure: str) -> np.ndarray:
    if structure == PS:
        return mask.labels == 1
    if structure == FH:
        return mask.labels == 2
    if structure == ALL:
        return mask.labels >= 1
    raise ValueError(f"unknown structure {structure!r}")


def boundary_points(foreground: np.ndarray) -> np.ndarray:
    """Coordinates [n, 2] of foreground pixels 4-adjacent to background or edge."""
    fg = np.asarray(foreground, dtype=bool)
    padded = np.pad(fg, 1)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return np.argwhere(fg & ~interior).astype(float)


# -- overlap and distance metrics -------------------------------------------------


def dsc(pred: SegMask, gt: SegMask, structure: str) -> float:
    """Dice overlap 2|A n B| / (|A| + |B|); 1.0 when both regions are empty."""
    _check_pair(pred, gt)
    a = structure_mask(pred, structure)
    b = structure_mask(gt, structure)
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / denom


def _boundary_pair(pred: SegMask, gt: SegMask, structure: str):
    a = boundary_points(structure_mask(pred, structure))
    b = boundary_points(structure_mask(gt, structure))
    if len(a) == 0:
        raise EmptyRegionError(structure, "predicted")
    if len(b) == 0:
        raise EmptyRegionError(structure, "reference")
    d_ab = cKDTree(b).query(a)[0]
    d_ba = cKDTree(a).query(b)[0]
    return d_ab, d_ba


def hausdorff(pred: SegMask, gt: SegMask, structure: str) -> float:
    """Symmetric (100th percentile) Hausdorff distance between boundaries."""
    _check_pair(pred, gt)
    d_ab, d_ba = _boundary_pair(pred, gt, structure)
    return float(max(d_ab.max(), d_ba.max())) * pred.pixel_spacing


def asd(pred: SegMask, gt: SegMask, structure: str) -> float:
    """Pooled symmetric mean of boundary nearest-neighbor distances."""
    _check_pair(pred, gt)
    d_ab, d_ba = _boundary_pair(pred, gt, structure)
    pooled = (float(d_ab.sum()) + float(d_ba.sum())) / (len(d_ab) + len(d_ba))
    return pooled * pred.pixel_spacing


def _check_pair(pred: SegMask, gt: SegMask) -> None:
    if pred.labels.shape != gt.labels.shape:
        raise ValueError(f"mask shapes differ: {pred.labels.shape} vs {gt.labels.shape}")
    if pred.pixel_spacing != gt.pixel_spacing:
        raise ValueError("masks carry different pixel spacings")


# -- axis geometry -----------------------------------------------------------------


def _wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


def angle_of_progression(mask: SegMask) -> AopGeometry:
    """Extract the PS-axis / FH-tangent angle from a single mask.

    Raises GeometryError when PS or FH is empty, the PS pixel set has no
    usable long axis, or the chosen endpoint sits inside the FH region.
    """
    ps = np.argwhere(mask.labels == 1).astype(float)
    fh = np.argwhere(mask.labels == 2).astype(float)
    if len(ps) == 0 or len(fh) == 0:
        raise GeometryError("PS and FH regions must both be non-empty")
    if len(ps) < 2:
        raise GeometryError("PS region too small to define an axis")

    mu = ps.mean(axis=0)
    centered = ps - mu
    cov = centered.T @ centered / len(ps)
    eigvals, eigvecs = np.linalg.eigh(cov)
    axis = eigvecs[:, int(np.argmax(eigvals))]
    proj = centered @ axis
    spread = proj.max() - proj.min()
    if spread < 1e-9:
        raise GeometryError("PS pixels are degenerate (no spatial extent along an axis)")
    lo = mu + proj.min() * axis
    hi = mu + proj.max() * axis

    fh_centroid = fh.mean(axis=0)
    if np.linalg.norm(lo - fh_centroid) <= np.linalg.norm(hi - fh_centroid):
        near, far = lo, hi
    else:
        near, far = hi, lo

    rel = fh - near
    dist = np.linalg.norm(rel, axis=1)
    if dist.min() < 1e-9:
        raise GeometryError("PS axis endpoint touches the FH region")
    theta = np.arctan2(rel[:, 1], rel[:, 0])
    center_dir = fh_centroid - near
    theta_c = math.atan2(center_dir[1], center_dir[0])
    delta = _wrap_angle(theta - theta_c)
    lo_i, hi_i = int(np.argmin(delta)), int(np.argmax(delta))
    if delta[hi_i] - delta[lo_i] >= math.pi:
        raise GeometryError("FH surrounds the PS axis endpoint; tangents undefined")

    theta_axis = math.atan2((far - near)[1], (far - near)[0])
    candidates = []
    for i in (lo_i, hi_i):
        tangent_dir = theta_c + delta[i]
        ang = abs(_wrap_angle(tangent_dir - theta_axis))
        candidates.append((math.degrees(ang), i))
    aop_deg, touch = max(candidates)

    return AopGeometry(
        ps_axis=(tuple(near), tuple(far)),
        fh_tangent=tuple(fh[touch]),
        aop=float(aop_deg),
    )


def delta_aop(pred: SegMask, gt: SegMask) -> float:
    """Absolute angle-of-progression difference in degrees, clamped to [0, 180]."""
    _check_pair(pred, gt)
    diff = abs(angle_of_progression(pred).aop - angle_of_progression(gt).aop)
    return float(min(max(diff, 0.0), 180.0))


# -- composite score ------------------------------------------------------------------


def challenge_score(
    dsc_fh: float, dsc_ps: float, dsc_all: float,
    hd_fh: float, hd_ps: float, hd_all: float,
    asd_fh: float, asd_ps: float, asd_all: float,
    delta_aop_deg: float,
) -> float:
    """Composite score in [0, 1] weighting overlap 0.25, distances 0.25, angle 0.5.

    Each distance contributes max(0, 1 - d/100), so values beyond 100 cannot
    push the score negative.
    """
    for name, v in (("dsc_fh", dsc_fh), ("dsc_ps", dsc_ps), ("dsc_all", dsc_all)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name}={v} outside [0, 1]")
    for name, v in (("hd_fh", hd_fh), ("hd_ps", hd_ps), ("hd_all", hd_all),
                    ("asd_fh", asd_fh), ("asd_ps", asd_ps), ("asd_all", asd_all)):
        if v < 0.0:
            raise ValueError(f"{name}={v} must be non-negative")
    if not 0.0 <= delta_aop_deg <= 180.0:
        raise ValueError(f"delta_aop={delta_aop_deg} outside [0, 180]")

    def dist_term(d):
        return min(max(1.0 - d / 100.0, 0.0), 1.0)

    overlap = 0.25 * (dsc_fh + dsc_ps + dsc_all) / 3.0
    distances = 0.25 * (
        0.5 * (dist_term(hd_fh) + dist_term(hd_ps) + dist_term(hd_all)) / 3.0
        + 0.5 * (dist_term(asd_fh) + dist_term(asd_ps) + dist_term(asd_all)) / 3.0
    )
    angle = 0.5 * (1.0 - delta_aop_deg / 180.0)
    return overlap + distances + angle


def evaluate_pair(pred: SegMask, gt: SegMask) -> ScoreReport:
    """All nine region metrics plus angle delta and composite score for one case.

    Empty regions and degenerate geometry do not abort evaluation: the
    affected metric is recorded at its worst clamp (distance 100, angle delta
    180) and the case is flagged.
    """
    _check_pair(pred, gt)
    flags: list[str] = []
    values: dict[str, float] = {}
    for structure in STRUCTURES:
        key = structure.lower()
        values[f"dsc_{key}"] = dsc(pred, gt, structure)
        try:
            values[f"hd_{key}"] = hausdorff(pred, gt, structure)
            values[f"asd_{key}"] = asd(pred, gt, structure)
        except EmptyRegionError as err:
            values[f"hd_{key}"] = WORST_DISTANCE
            values[f"asd_{key}"] = WORST_DISTANCE
            flags.append(f"empty_{key}_{err.side}")
    try:
        values["delta_aop"] = delta_aop(pred, gt)
    except GeometryError:
        values["delta_aop"] = WORST_ANGLE_DELTA
        flags.append("aop_degenerate")

    score = challenge_score(
        values["dsc_fh"], values["dsc_ps"], values["dsc_all"],
        values["hd_fh"], values["hd_ps"], values["hd_all"],
        values["asd_fh"], values["asd_ps"], values["asd_all"],
        values["delta_aop"],
    )
    return ScoreReport(score=score, flags=tuple(flags), **values)


_MEAN_FIELDS = (
    "dsc_fh", "dsc_ps", "dsc_all",
    "hd_fh", "hd_ps", "hd_all",
    "asd_fh", "asd_ps", "asd_all",
    "delta_aop", "score",
)


def aggregate_reports(reports: list[ScoreReport]) -> dict:
    """Arithmetic per-field means over a corpus, in case order."""
    if not reports:
        raise ValueError("cannot aggregate an empty corpus")
    summary = {"cases": len(reports), "flagged": sum(1 for r in reports if r.flags)}
    for fname in _MEAN_FIELDS:
        summary[f"mean_{fname}"] = sum(getattr(r, fname) for r in reports) / len(reports)
    return summary
