"""Scene simulation: photometric transforms, random homographies, warping.

A scene is one canonical image; a training sample is a set of J transformed
views, each produced by warping under a random homography and then applying
a short list of photometric operations. Correspondence between the canonical
pixel grid and every view is tracked alongside, with validity masks for
points that leave the frame.

Every sampler takes an explicit numpy Generator, so all randomness is
reproducible from seed streams derived per (seed, scene id, view index).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

ILLUM_KINDS = ("blur", "channel_shuffle", "contrast", "grayscale_mix", "invert",
               "salt_pepper", "shadow")
ILLUM_MILD_KINDS = ("blur", "contrast", "shadow")

# (max rotation deg, corner perturbation as a fraction of the image diagonal)
# "gentle" suits small toy models that cannot absorb large rotations
VIEWPOINT_RANGES = {
    "viewpoint_gentle": (15.0, 0.05),
    "viewpoint_medium": (45.0, 0.10),
    "viewpoint_full": (180.0, 0.18),
}

_W_COORD_EPS = 1e-9


@dataclass(frozen=True)
class PhotometricOp:
    """One fully specified photometric transform record."""

    kind: str
    params: tuple  # sorted (key, value) pairs; values are plain scalars/tuples

    def get(self, key):
        return dict(self.params)[key]

    def to_text(self) -> str:
        inner = ",".join(f"{k}={v}" for k, v in self.params)
        return f"{self.kind}({inner})"


def spec_to_text(spec) -> str:
    """Serialize an ordered transform list to one reproducibility record."""
    return ";".join(op.to_text() for op in spec)


def _op(kind, **params):
    packed = []
    for key in sorted(params):
        val = params[key]
        if isinstance(val, np.ndarray):
            val = tuple(map(tuple, np.round(val, 6).tolist()))
        packed.append((key, val))
    return PhotometricOp(kind, tuple(packed))


def sample_photometric(rng: np.random.Generator, level: str = "illum_full"):
    """Draw an ordered list of 1..3 photometric transform records.

    ``illum_mild`` draws only from blur / contrast / shadow; ``illum_full``
    draws uniformly from all seven kinds.
    """
    if level == "illum_full":
        kinds = ILLUM_KINDS
    elif level == "illum_mild":
        kinds = ILLUM_MILD_KINDS
    else:
        raise ValueError(f"unknown illumination level {level!r}")
    spec = []
    for _ in range(int(rng.integers(1, 4))):
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind == "blur":
            spec.append(_op("blur",
                            mode=("gaussian", "average", "median")[int(rng.integers(3))],
                            radius=int(rng.integers(1, 4))))
        elif kind == "channel_shuffle":
            spec.append(_op("channel_shuffle", order=tuple(int(i) for i in rng.permutation(3))))
        elif kind == "contrast":
            spec.append(_op("contrast", strength=float(rng.uniform(-0.5, 0.5))))
        elif kind == "grayscale_mix":
            spec.append(_op("grayscale_mix", weight=float(rng.uniform(0.0, 1.0))))
        elif kind == "invert":
            spec.append(_op("invert"))
        elif kind == "salt_pepper":
            spec.append(_op("salt_pepper", fraction=float(rng.uniform(0.002, 0.02)),
                            seed=int(rng.integers(2**31))))
        elif kind == "shadow":
            spec.append(_op("shadow", polygons=_sample_shadow_polygons(rng)))
    return spec


def _sample_shadow_polygons(rng: np.random.Generator):
    """1-3 convex dark polygons in relative [0,1]^2 coordinates."""
    polygons = []
    for _ in range(int(rng.integers(1, 4))):
        center = rng.uniform(0.2, 0.8, size=2)
        radius = rng.uniform(0.1, 0.3)
        pts = center + rng.uniform(-radius, radius, size=(int(rng.integers(4, 8)), 2))
        hull = _convex_hull(pts)
        attenuation = float(rng.uniform(0.3, 0.7))
        polygons.append((tuple(map(tuple, np.round(hull, 6).tolist())), attenuation))
    return tuple(polygons)


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull, counter-clockwise, no repeated endpoint."""
    pts = sorted(map(tuple, points))
    if len(pts) <= 2:
        return np.array(pts)

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2:
                ox, oy = out[-2]
                ax, ay = out[-1]
                if (ax - ox) * (p[1] - oy) - (ay - oy) * (p[0] - ox) <= 0:
                    out.pop()
                else:
                    break
            out.append(p)
        return out

    lower = half(pts)
    upper = half(reversed(pts))
    return np.array(lower[:-1] + upper[:-1])


def _points_in_convex_polygon(xs, ys, vertices):
    """Vectorized membership test; vertices counter-clockwise."""
    inside = np.ones(xs.shape, dtype=bool)
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        cross = (x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0)
        inside &= cross >= 0
    return inside


def apply_photometric(image: np.ndarray, spec) -> np.ndarray:
    """Apply transform records in order; output stays in [0, 1]."""
    img = np.asarray(image, dtype=float).copy()
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    for op in spec:
        img = _apply_one(img, op)
        np.clip(img, 0.0, 1.0, out=img)
    return img[:, :, 0] if squeeze else img


def _apply_one(img, op: PhotometricOp):
    h, w, c = img.shape
    if op.kind == "blur":
        radius = op.get("radius")
        mode = op.get("mode")
        out = np.empty_like(img)
        for ch in range(c):
            if mode == "gaussian":
                out[:, :, ch] = ndimage.gaussian_filter(img[:, :, ch], sigma=0.5 * radius,
                                                        mode="nearest")
            elif mode == "average":
                out[:, :, ch] = ndimage.uniform_filter(img[:, :, ch], size=2 * radius + 1,
                                                       mode="nearest")
            else:
                out[:, :, ch] = ndimage.median_filter(img[:, :, ch], size=2 * radius + 1,
                                                      mode="nearest")
        return out
    if op.kind == "channel_shuffle":
        if c == 1:
            return img
        order = list(op.get("order"))[:c]
        return img[:, :, order]
    if op.kind == "contrast":
        return 0.5 + (img - 0.5) * (1.0 + op.get("strength"))
    if op.kind == "grayscale_mix":
        weight = op.get("weight")
        if c == 1:
            return img
        gray = img[:, :, 0] * 0.299 + img[:, :, 1] * 0.587 + img[:, :, 2] * 0.114
        return weight * gray[:, :, None] + (1.0 - weight) * img
    if op.kind == "invert":
        return 1.0 - img
    if op.kind == "salt_pepper":
        rng = np.random.default_rng(op.get("seed"))
        hit = rng.random((h, w)) < op.get("fraction")
        salt = rng.random((h, w)) < 0.5
        out = img.copy()
        out[hit & salt] = 1.0
        out[hit & ~salt] = 0.0
        return out
    if op.kind == "shadow":
        xs, ys = np.meshgrid(np.arange(w) / max(w - 1, 1), np.arange(h) / max(h - 1, 1))
        out = img.copy()
        for vertices, attenuation in op.get("polygons"):
            mask = _points_in_convex_polygon(xs, ys, vertices)
            out[mask] *= 1.0 - attenuation
        return out
    raise ValueError(f"unknown photometric kind {op.kind!r}")


# ---------------------------------------------------------------------------
# homographies
# ---------------------------------------------------------------------------


def homography_from_corners(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Exact homography from 4 point correspondences, normalized to h33 = 1."""
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i in range(4):
        x, y = src[i]
        u, v = dst[i]
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i] = u
        b[2 * i + 1] = v
    h = np.linalg.solve(a, b)
    return np.append(h, 1.0).reshape(3, 3)


def decomposed_rotation_deg(h: np.ndarray, size) -> float:
    """Rotation angle of the map's Jacobian at the image center (polar part)."""
    height, width = size
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    a = h[:2, :2]
    t = h[:2, 2]
    q = h[2, :2]
    s = h[2, 2]
    denom = q @ (cx, cy) + s
    num = a @ (cx, cy) + t
    jac = (a * denom - np.outer(num, q)) / denom**2
    u, _, vt = np.linalg.svd(jac)
    rot = u @ vt
    if np.linalg.det(rot) < 0:
        return 180.0
    return float(abs(np.degrees(np.arctan2(rot[1, 0], rot[0, 0]))))


def _is_convex_quad(corners: np.ndarray) -> bool:
    signs = []
    for i in range(4):
        p0, p1, p2 = corners[i], corners[(i + 1) % 4], corners[(i + 2) % 4]
        cross = (p1[0] - p0[0]) * (p2[1] - p1[1]) - (p1[1] - p0[1]) * (p2[0] - p1[0])
        signs.append(np.sign(cross))
    return abs(sum(signs)) == 4


def sample_homography(
    rng: np.random.Generator,
    max_rotation_deg: float,
    perturb: float,
    size=(480, 640),
) -> np.ndarray:
    """Random homography: rotation about the image center plus independent
    corner displacements bounded by ``perturb`` of the image diagonal.

    Resamples on fold-over, near-singularity, or a decomposed rotation at or
    above the cap; fails after 100 rejections.
    """
    if not 0 < max_rotation_deg <= 180:
        raise ValueError(f"max_rotation_deg must be in (0, 180], got {max_rotation_deg}")
    if not 0 <= perturb <= 0.3:
        raise ValueError(f"perturb must be in [0, 0.3], got {perturb}")
    height, width = size
    diag = np.hypot(height, width)
    src = np.array([[0.0, 0.0], [width - 1.0, 0.0], [width - 1.0, height - 1.0],
                    [0.0, height - 1.0]])
    center = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    bound = perturb * diag / np.sqrt(2.0)
    for _ in range(100):
        theta = np.radians(rng.uniform(-0.75 * max_rotation_deg, 0.75 * max_rotation_deg))
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        dst = (src - center) @ rot.T + center
        dst = dst + rng.uniform(-bound, bound, size=(4, 2))
        if not _is_convex_quad(dst):
            continue
        h = homography_from_corners(src, dst)
        if abs(np.linalg.det(h)) <= 1e-6:
            continue
        if decomposed_rotation_deg(h, size) >= max_rotation_deg:
            continue
        return h
    raise RuntimeError("homography sampling failed 100 times; ranges too aggressive")


def sample_homography_for_level(rng, level: str, size) -> np.ndarray:
    if level not in VIEWPOINT_RANGES:
        raise ValueError(f"unknown viewpoint level {level!r}")
    max_rot, perturb = VIEWPOINT_RANGES[level]
    return sample_homography(rng, max_rot, perturb, size)


def map_points(points, h: np.ndarray, bounds):
    """Projective transform of (x, y) points; valid iff inside ``bounds``.

    ``bounds`` is (width, height); a point is valid when both coordinates lie
    in [0, width - 1] x [0, height - 1] and the homogeneous w stays away
    from zero.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    width, height = bounds
    ones = np.ones((pts.shape[0], 1))
    mapped = np.hstack([pts, ones]) @ h.T
    w = mapped[:, 2]
    safe = np.abs(w) >= _W_COORD_EPS
    out = np.full_like(pts, np.nan)
    out[safe] = mapped[safe, :2] / w[safe, None]
    valid = safe & (out[:, 0] >= 0) & (out[:, 0] <= width - 1) \
        & (out[:, 1] >= 0) & (out[:, 1] <= height - 1)
    return out, valid


def warp_image(image: np.ndarray, h: np.ndarray):
    """Inverse-mapped bilinear warp; returns (warped, validity mask).

    Output pixels whose source falls outside the input are zero and masked
    invalid.
    """
    img = np.asarray(image, dtype=float)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    height, width, _ = img.shape
    h_inv = np.linalg.inv(h)
    cols, rows = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    src, _ = map_points(np.stack([cols.ravel(), rows.ravel()], axis=1), h_inv, (width, height))
    sx = src[:, 0].reshape(height, width)
    sy = src[:, 1].reshape(height, width)
    mask = np.isfinite(sx) & (sx >= 0) & (sx <= width - 1) & (sy >= 0) & (sy <= height - 1)
    sx = np.where(mask, sx, 0.0)
    sy = np.where(mask, sy, 0.0)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    tx = (sx - x0)[:, :, None]
    ty = (sy - y0)[:, :, None]
    top = img[y0, x0] * (1 - tx) + img[y0, x1] * tx
    bottom = img[y1, x0] * (1 - tx) + img[y1, x1] * tx
    warped = top * (1 - ty) + bottom * ty
    warped[~mask] = 0.0
    if squeeze:
        warped = warped[:, :, 0]
    return warped, mask


# ---------------------------------------------------------------------------
# scenes
# ---------------------------------------------------------------------------


@dataclass
class SceneBatch:
    """One canonical image plus J transformed views and their correspondence.

    ``map_rows``/``map_cols`` give, for every canonical pixel, the nearest
    pixel of each view; ``valid`` marks points that stay inside the view and
    land on warped content.
    """

    canonical: np.ndarray
    images: list
    homographies: list
    photometric_specs: list
    map_rows: np.ndarray  # (J, H, W) int
    map_cols: np.ndarray  # (J, H, W) int
    valid: np.ndarray  # (J, H, W) bool
    outputs: list | None = field(default=None, repr=False)

    @property
    def num_views(self) -> int:
        return len(self.images)


def view_rng(seed: int, scene_id: int, view: int) -> np.random.Generator:
    """Independent stream per (seed, scene id, view index)."""
    return np.random.default_rng(np.random.SeedSequence([seed, scene_id, view]))


def make_scene(
    image: np.ndarray,
    num_views: int,
    seed: int,
    scene_id: int,
    illumination: str = "illum_mild",
    viewpoint: str = "viewpoint_medium",
    border_margin: int = 0,
) -> SceneBatch:
    """Simulate J views of one canonical image with tracked correspondence.

    A positive ``border_margin`` additionally invalidates correspondences
    landing within that many pixels of a view's frame. The default keeps
    them: label-free frame bands give the detector an unsupervised region to
    dump probability mass into, which measurably destabilizes training.
    """
    img = np.asarray(image, dtype=float)
    height, width = img.shape[:2]
    cols, rows = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    grid = np.stack([cols.ravel(), rows.ravel()], axis=1)

    images, homs, specs = [], [], []
    map_rows = np.zeros((num_views, height, width), dtype=int)
    map_cols = np.zeros((num_views, height, width), dtype=int)
    valid = np.zeros((num_views, height, width), dtype=bool)
    for j in range(num_views):
        rng = view_rng(seed, scene_id, j)
        hom = sample_homography_for_level(rng, viewpoint, (height, width))
        warped, warp_mask = warp_image(img, hom)
        spec = sample_photometric(rng, illumination)
        images.append(apply_photometric(warped, spec))
        homs.append(hom)
        specs.append(spec)

        mapped, ok = map_points(grid, hom, (width, height))
        cc = np.clip(np.rint(np.where(ok, mapped[:, 0], 0.0)).astype(int), 0, width - 1)
        rr = np.clip(np.rint(np.where(ok, mapped[:, 1], 0.0)).astype(int), 0, height - 1)
        ok = ok & warp_mask[rr, cc]
        if border_margin:
            ok &= ((cc >= border_margin) & (cc < width - border_margin)
                   & (rr >= border_margin) & (rr < height - border_margin))
        map_rows[j] = rr.reshape(height, width)
        map_cols[j] = cc.reshape(height, width)
        valid[j] = ok.reshape(height, width)
    return SceneBatch(
        canonical=img,
        images=images,
        homographies=homs,
        photometric_specs=specs,
        map_rows=map_rows,
        map_cols=map_cols,
        valid=valid,
    )


def make_pair(
    image: np.ndarray,
    rng: np.random.Generator,
    illumination: str = "illum_mild",
    viewpoint: str = "viewpoint_medium",
):
    """One evaluation pair: (original, transformed view, ground-truth H)."""
    img = np.asarray(image, dtype=float)
    hom = sample_homography_for_level(rng, viewpoint, img.shape[:2])
    warped, _ = warp_image(img, hom)
    transformed = apply_photometric(warped, sample_photometric(rng, illumination))
    return img, transformed, hom
