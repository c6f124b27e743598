"""Interest-point extraction, matching, and the two benchmark metrics.

Point coordinates are (x, y) with x the column. The matching score and the
homography-correctness indicator follow the shared-viewpoint conventions:
denominators count only points whose ground-truth mapping stays inside the
other image, and a match is correct when the mapped point lands within
``epsilon`` pixels of its partner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelOutput
from .properties import neighborhood_max
from .simulate import map_points


@dataclass
class PointSet:
    """Extracted points: (n, 2) xy coordinates, scores, unit descriptors."""

    xy: np.ndarray
    scores: np.ndarray
    descriptors: np.ndarray

    def __len__(self) -> int:
        return self.xy.shape[0]

    @classmethod
    def empty(cls, descriptor_dim: int) -> "PointSet":
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros((0, descriptor_dim)))


@dataclass
class MatchSet:
    """One-to-one mutual nearest-neighbor matches between two point sets."""

    index_a: np.ndarray
    index_b: np.ndarray
    similarity: np.ndarray

    def __len__(self) -> int:
        return self.index_a.shape[0]


def extract_points(
    output: ModelOutput, prob_threshold: float, rad: int, max_points: int
) -> PointSet:
    """Strict NMS, then probability threshold, then top-K by score.

    Ties in score are broken by scan order (row-major), so extraction is
    deterministic.
    """
    if not 0.0 < prob_threshold < 1.0:
        raise ValueError(f"prob_threshold must be in (0, 1), got {prob_threshold}")
    prob = output.prob_map
    keep = (prob > neighborhood_max(prob, rad)) & (prob > prob_threshold)
    rows, cols = np.nonzero(keep)
    if rows.size == 0:
        return PointSet.empty(output.desc_field.shape[-1])
    scores = prob[rows, cols]
    order = np.argsort(-scores, kind="stable")[:max_points]
    rows, cols, scores = rows[order], cols[order], scores[order]
    return PointSet(
        xy=np.stack([cols, rows], axis=1).astype(float),
        scores=scores,
        descriptors=output.desc_field[rows, cols].copy(),
    )


def match_two_way(a: PointSet, b: PointSet) -> MatchSet:
    """Mutual nearest neighbors by descriptor similarity; ties pick the lowest index."""
    if len(a) == 0 or len(b) == 0:
        return MatchSet(np.zeros(0, dtype=int), np.zeros(0, dtype=int), np.zeros(0))
    sims = a.descriptors @ b.descriptors.T
    fwd = sims.argmax(axis=1)
    bwd = sims.argmax(axis=0)
    ia = np.flatnonzero(bwd[fwd] == np.arange(len(a)))
    ib = fwd[ia]
    return MatchSet(ia, ib, sims[ia, ib])


def match_correctness(
    matches: MatchSet, a: PointSet, b: PointSet, h_gt: np.ndarray, epsilon: float
) -> np.ndarray:
    """True where the ground-truth-mapped point lies within epsilon of its partner."""
    if len(matches) == 0:
        return np.zeros(0, dtype=bool)
    mapped = np.hstack([a.xy[matches.index_a], np.ones((len(matches), 1))]) @ h_gt.T
    ok = np.abs(mapped[:, 2]) > 1e-9
    mapped_xy = np.full((len(matches), 2), np.inf)
    mapped_xy[ok] = mapped[ok, :2] / mapped[ok, 2:3]
    dist = np.linalg.norm(mapped_xy - b.xy[matches.index_b], axis=1)
    return ok & (dist <= epsilon)


def points_in_shared_region(points: PointSet, h: np.ndarray, other_shape) -> np.ndarray:
    """True for points whose mapping under ``h`` stays inside the other image."""
    if len(points) == 0:
        return np.zeros(0, dtype=bool)
    height, width = other_shape[:2]
    _, valid = map_points(points.xy, h, (width, height))
    return valid


def matching_score(
    matches: MatchSet,
    a: PointSet,
    b: PointSet,
    h_gt: np.ndarray,
    shape_a,
    shape_b,
    epsilon: float = 3.0,
) -> float:
    """Symmetric ratio of correct matches over in-region extracted points.

    Empty in-region sets contribute 0 to their direction. Result in [0, 1].
    """
    correct = int(match_correctness(matches, a, b, h_gt, epsilon).sum())
    n_a = int(points_in_shared_region(a, h_gt, shape_b).sum())
    n_b = int(points_in_shared_region(b, np.linalg.inv(h_gt), shape_a).sum())
    score = 0.0
    if n_a > 0:
        score += 0.5 * correct / n_a
    if n_b > 0:
        score += 0.5 * correct / n_b
    return float(min(score, 1.0))


# ---------------------------------------------------------------------------
# homography estimation (normalized DLT inside RANSAC)
# ---------------------------------------------------------------------------


def _normalization(points: np.ndarray) -> np.ndarray:
    centroid = points.mean(axis=0)
    spread = np.linalg.norm(points - centroid, axis=1).mean()
    scale = np.sqrt(2.0) / max(spread, 1e-12)
    return np.array([
        [scale, 0.0, -scale * centroid[0]],
        [0.0, scale, -scale * centroid[1]],
        [0.0, 0.0, 1.0],
    ])


def dlt_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray | None:
    """Direct linear transform with Hartley normalization; None if degenerate."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape[0] < 4:
        return None
    t1 = _normalization(src)
    t2 = _normalization(dst)
    s = (np.hstack([src, np.ones((src.shape[0], 1))]) @ t1.T)[:, :2]
    d = (np.hstack([dst, np.ones((dst.shape[0], 1))]) @ t2.T)[:, :2]
    rows = []
    for (x, y), (u, v) in zip(s, d):
        rows.append([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u])
        rows.append([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v])
    try:
        _, sing, vt = np.linalg.svd(np.array(rows))
    except np.linalg.LinAlgError:
        return None
    if sing[0] <= 0 or sing[-2] / sing[0] < 1e-10:  # rank-deficient configuration
        return None
    h = np.linalg.inv(t2) @ vt[-1].reshape(3, 3) @ t1
    if abs(h[2, 2]) < 1e-12:
        return None
    return h / h[2, 2]


def _reprojection_errors(h: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    mapped = np.hstack([src, np.ones((src.shape[0], 1))]) @ h.T
    w = mapped[:, 2]
    err = np.full(src.shape[0], np.inf)
    ok = np.abs(w) > 1e-12
    err[ok] = np.linalg.norm(mapped[ok, :2] / w[ok, None] - dst[ok], axis=1)
    return err


def _spread_out(points: np.ndarray) -> bool:
    """Reject minimal samples with near-collinear triples."""
    for skip in range(4):
        tri = np.delete(points, skip, axis=0)
        area = abs(
            (tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1])
            - (tri[1, 1] - tri[0, 1]) * (tri[2, 0] - tri[0, 0])
        )
        if area < 1e-6:
            return False
    return True


def estimate_homography(
    matches: MatchSet,
    a: PointSet,
    b: PointSet,
    seed: int = 0,
    max_iters: int = 2000,
    inlier_threshold: float = 3.0,
    confidence: float = 0.99,
) -> np.ndarray | None:
    """RANSAC over 4-point samples with a final refit on the inliers.

    Deterministic for a fixed seed. Returns None when fewer than 4 matches
    exist or every sample is degenerate.
    """
    if len(matches) < 4:
        return None
    src = a.xy[matches.index_a]
    dst = b.xy[matches.index_b]
    n = src.shape[0]
    rng = np.random.default_rng(seed)
    best_inliers = None
    best_count = 0
    best_err = np.inf
    needed = max_iters
    trial = 0
    while trial < min(max_iters, needed):
        trial += 1
        pick = rng.choice(n, size=4, replace=False)
        if not (_spread_out(src[pick]) and _spread_out(dst[pick])):
            continue
        h = dlt_homography(src[pick], dst[pick])
        if h is None:
            continue
        errors = _reprojection_errors(h, src, dst)
        inliers = errors < inlier_threshold
        count = int(inliers.sum())
        err_sum = float(errors[inliers].sum())
        if count > best_count or (count == best_count and err_sum < best_err):
            best_count, best_err, best_inliers = count, err_sum, inliers
            if count >= 4:
                ratio = count / n
                misses = 1.0 - ratio**4
                if misses <= 1e-12:
                    needed = trial
                else:
                    needed = int(np.ceil(np.log(1.0 - confidence) / np.log(misses)))
    if best_inliers is None or best_count < 4:
        return None
    refit = dlt_homography(src[best_inliers], dst[best_inliers])
    return refit if refit is not None else None


def homography_error(h_est: np.ndarray | None, h_gt: np.ndarray, size, epsilon: float = 3.0):
    """Mean four-corner reprojection distance and the correctness indicator.

    ``size`` is (width, height); a failed estimate gives (inf, 0).
    """
    if h_est is None:
        return float("inf"), 0
    width, height = size
    corners = np.array([
        [0.0, 0.0], [width - 1.0, 0.0], [width - 1.0, height - 1.0], [0.0, height - 1.0]
    ])
    ones = np.ones((4, 1))
    gt = np.hstack([corners, ones]) @ h_gt.T
    est = np.hstack([corners, ones]) @ h_est.T
    if np.any(np.abs(gt[:, 2]) < 1e-12) or np.any(np.abs(est[:, 2]) < 1e-12):
        return float("inf"), 0
    gt_xy = gt[:, :2] / gt[:, 2:3]
    est_xy = est[:, :2] / est[:, 2:3]
    error = float(np.linalg.norm(gt_xy - est_xy, axis=1).mean())
    return error, int(error <= epsilon)


# ---------------------------------------------------------------------------
# visualization
# ---------------------------------------------------------------------------

_POINT_COLOR = (0.25, 0.45, 1.0)
_MATCH_LINE = (0.1, 0.9, 0.1)
_MATCH_DOT = (1.0, 0.15, 0.15)


def _to_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        return np.repeat(img[:, :, None], 3, axis=2)
    return img[:, :, :3]


def _stamp(img, x, y, color, half=1):
    h, w, _ = img.shape
    r0, r1 = max(y - half, 0), min(y + half + 1, h)
    c0, c1 = max(x - half, 0), min(x + half + 1, w)
    img[r0:r1, c0:c1] = color


def _line(img, x0, y0, x1, y1, color):
    steps = int(max(abs(x1 - x0), abs(y1 - y0), 1)) * 2
    xs = np.clip(np.rint(np.linspace(x0, x1, steps)).astype(int), 0, img.shape[1] - 1)
    ys = np.clip(np.rint(np.linspace(y0, y1, steps)).astype(int), 0, img.shape[0] - 1)
    img[ys, xs] = color


def render_matches(
    img_a, img_b, a: PointSet, b: PointSet, matches: MatchSet, correctness=None
) -> np.ndarray:
    """Side-by-side composite: every point marked, correct matches as lines.

    Output shape is (max height, width_a + width_b, 3) in [0, 1].
    """
    left = _to_rgb(img_a)
    right = _to_rgb(img_b)
    height = max(left.shape[0], right.shape[0])
    canvas = np.zeros((height, left.shape[1] + right.shape[1], 3))
    canvas[: left.shape[0], : left.shape[1]] = left
    canvas[: right.shape[0], left.shape[1] :] = right
    offset = left.shape[1]

    for x, y in np.rint(a.xy).astype(int):
        _stamp(canvas, x, y, _POINT_COLOR)
    for x, y in np.rint(b.xy).astype(int):
        _stamp(canvas, x + offset, y, _POINT_COLOR)
    if correctness is None:
        correctness = np.ones(len(matches), dtype=bool)
    for ia, ib, good in zip(matches.index_a, matches.index_b, correctness):
        if not good:
            continue
        xa, ya = np.rint(a.xy[ia]).astype(int)
        xb, yb = np.rint(b.xy[ib]).astype(int)
        _line(canvas, xa, ya, xb + offset, yb, _MATCH_LINE)
        _stamp(canvas, xa, ya, _MATCH_DOT)
        _stamp(canvas, xb + offset, yb, _MATCH_DOT)
    return canvas
