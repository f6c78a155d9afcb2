"""Soft semantic masks and the operations that build and combine them.

A SoftMaskSet is a stack of aligned per-category probability channels in
[0, 1]. This module covers: rescaling raw probability maps, picking the
top-K categories for a content/style pair, rule-based skin detection in
YCbCr space, assembling facial-part masks from 68 landmarks, Gaussian
blurring, and concatenating weighted mask channels onto feature maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from maskmrf import tensor

# composite colours; "skin" is accepted as an alias for the face channel
COMPOSITE_COLORS = {
    "body": (1.0, 0.0, 0.0),
    "background": (0.0, 1.0, 0.0),
    "face": (0.0, 0.0, 1.0),
    "skin": (0.0, 0.0, 1.0),
    "eyes": (0.0, 1.0, 1.0),
    "nose": (1.0, 1.0, 0.0),
    "mouth": (1.0, 0.0, 1.0),
}


class SoftMaskSet:
    """K labeled probability channels over one image, values in [0, 1]."""

    def __init__(self, masks, labels):
        masks = tensor.as_tensor(masks)
        labels = tuple(str(x) for x in labels)
        if len(labels) != masks.shape[2]:
            raise ValueError(
                f"{len(labels)} labels for {masks.shape[2]} mask channels"
            )
        if not labels:
            raise ValueError("mask set needs at least one channel")
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate mask labels in {labels}")
        lo, hi = masks.min(), masks.max()
        if lo < -1e-9 or hi > 1.0 + 1e-9:
            raise ValueError(f"mask values must lie in [0,1], got range [{lo}, {hi}]")
        self.masks = np.clip(masks, 0.0, 1.0)
        self.labels = labels

    @property
    def source_size(self):
        return self.masks.shape[0], self.masks.shape[1]

    @property
    def count(self):
        return len(self.labels)

    def channel(self, label: str):
        """The (H, W) channel for one label."""
        try:
            k = self.labels.index(label)
        except ValueError:
            raise KeyError(f"no mask labeled {label!r}; have {self.labels}") from None
        return self.masks[:, :, k]

    def resampled(self, height: int, width: int) -> "SoftMaskSet":
        """Bilinear resample of all channels to a new spatial size."""
        return SoftMaskSet(tensor.resample_bilinear(self.masks, height, width), self.labels)


def rescale_probability_maps(raw, labels=None) -> SoftMaskSet:
    """Per-channel min-max rescale of raw probability maps to [0, 1].

    Constant channels become all zeros. Default labels are ch0, ch1, ...
    """
    raw = tensor.as_tensor(raw)
    k = raw.shape[2]
    if labels is None:
        labels = tuple(f"ch{i}" for i in range(k))
    lo = raw.min(axis=(0, 1), keepdims=True)
    hi = raw.max(axis=(0, 1), keepdims=True)
    span = hi - lo
    out = np.zeros_like(raw)
    np.divide(raw - lo, span, out=out, where=span > 0)
    return SoftMaskSet(out, labels)


def select_top_k(content_masks: SoftMaskSet, style_masks: SoftMaskSet, k: int):
    """Keep the k labels with the highest joint mean probability.

    The score of a label is the mean of the two per-image channel means,
    so image sizes do not bias the ranking. Both outputs carry the same
    labels in descending score order; ties break by label ascending.
    """
    if set(content_masks.labels) != set(style_masks.labels):
        only_c = sorted(set(content_masks.labels) - set(style_masks.labels))
        only_s = sorted(set(style_masks.labels) - set(content_masks.labels))
        raise ValueError(
            f"label sets differ: content-only {only_c}, style-only {only_s}"
        )
    if not 1 <= k <= content_masks.count:
        raise ValueError(f"k must be in [1, {content_masks.count}], got {k}")
    scores = {}
    for label in content_masks.labels:
        scores[label] = 0.5 * (
            float(content_masks.channel(label).mean())
            + float(style_masks.channel(label).mean())
        )
    order = sorted(scores, key=lambda label: (-scores[label], label))[:k]

    def take(ms):
        chans = np.stack([ms.channel(label) for label in order], axis=2)
        return SoftMaskSet(chans, order)

    return take(content_masks), take(style_masks)


@dataclass(frozen=True)
class SkinRule:
    """Threshold box in full-range BT.601 YCbCr (values on the 0..255 scale)."""

    y_min: float = 80.0
    cb_min: float = 77.0
    cb_max: float = 127.0
    cr_min: float = 133.0
    cr_max: float = 173.0


def rgb_to_ycbcr(image):
    """Full-range BT.601 conversion; input RGB in [0,1], output on the
    0..255 scale with Cb/Cr offset by 128."""
    image = tensor.as_tensor(image)
    if image.shape[2] != 3:
        raise ValueError(f"expected 3 channels, got {image.shape[2]}")
    r = image[:, :, 0] * 255.0
    g = image[:, :, 1] * 255.0
    b = image[:, :, 2] * 255.0
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return np.stack([y, cb, cr], axis=2)


def detect_skin(image, rule: SkinRule | None = None):
    """Binary skin mask from the YCbCr threshold rule; returns (H, W, 1)."""
    if rule is None:
        rule = SkinRule()
    ycc = rgb_to_ycbcr(image)
    y, cb, cr = ycc[:, :, 0], ycc[:, :, 1], ycc[:, :, 2]
    skin = (
        (y > rule.y_min)
        & (cb >= rule.cb_min)
        & (cb <= rule.cb_max)
        & (cr >= rule.cr_min)
        & (cr <= rule.cr_max)
    )
    return skin.astype(tensor.DTYPE)[:, :, np.newaxis]


def intersect_masks(a, b):
    """Soft intersection (elementwise product) of two 1-channel masks."""
    a = tensor.as_tensor(a)
    b = tensor.as_tensor(b)
    if a.shape[:2] != b.shape[:2]:
        raise ValueError(f"mask sizes differ: {a.shape[:2]} vs {b.shape[:2]}")
    if a.shape[2] != 1 or b.shape[2] != 1:
        raise ValueError("intersect_masks expects 1-channel masks")
    return a * b


@dataclass(frozen=True)
class LandmarkSet:
    """68 (x, y) pixel coordinates plus the index ranges (inclusive) of the
    eye, nose, inner-mouth and outer-mouth points."""

    points: np.ndarray
    eyes: tuple = (36, 47)
    nose: tuple = (27, 35)
    inner_mouth: tuple = (60, 67)
    outer_mouth: tuple = (48, 59)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=tensor.DTYPE)
        if pts.shape != (68, 2):
            raise ValueError(f"expected 68 (x, y) points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmark coordinates must be finite")
        object.__setattr__(self, "points", pts)
        for name in ("eyes", "nose", "inner_mouth", "outer_mouth"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi <= 67):
                raise ValueError(f"bad {name} index range ({lo}, {hi})")

    def region_points(self, name: str):
        lo, hi = getattr(self, name)
        return self.points[lo : hi + 1]


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _convex_hull(points):
    """Monotone-chain hull; collinear points dropped. Returns a list of
    (x, y) tuples; 1 or 2 points for degenerate input."""
    pts = sorted(set((float(p[0]), float(p[1])) for p in points))
    if len(pts) <= 2:
        return pts
    lower = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def _raster_segment(p0, p1, shape):
    """Bresenham line between rounded endpoints, clipped to the canvas."""
    out = np.zeros(shape, dtype=tensor.DTYPE)
    x0, y0 = int(round(p0[0])), int(round(p0[1]))
    x1, y1 = int(round(p1[0])), int(round(p1[1]))
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        if 0 <= y0 < shape[0] and 0 <= x0 < shape[1]:
            out[y0, x0] = 1.0
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
    return out


def _fill_hull(points, shape):
    """Binary raster of the filled convex hull of a point set. Boundary
    pixels (centers exactly on a hull edge) are included. Degenerate hulls
    rasterize as a segment or single pixel."""
    hull = _convex_hull(points)
    if len(hull) == 1:
        return _raster_segment(hull[0], hull[0], shape)
    if len(hull) == 2:
        return _raster_segment(hull[0], hull[1], shape)
    hull_arr = np.array(hull, dtype=tensor.DTYPE)
    # orient counterclockwise in (x, y) algebra so inside tests share a sign
    area2 = 0.0
    for i in range(len(hull_arr)):
        j = (i + 1) % len(hull_arr)
        area2 += hull_arr[i, 0] * hull_arr[j, 1] - hull_arr[j, 0] * hull_arr[i, 1]
    if area2 < 0:
        hull_arr = hull_arr[::-1]
    ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]]
    inside = np.ones(shape, dtype=bool)
    eps = 1e-9
    for i in range(len(hull_arr)):
        x0, y0 = hull_arr[i]
        x1, y1 = hull_arr[(i + 1) % len(hull_arr)]
        side = (x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0)
        inside &= side >= -eps
    return inside.astype(tensor.DTYPE)


def facial_part_masks(
    landmarks: LandmarkSet,
    image_size,
    person_mask,
    upward_extension: float = 0.5,
    blur_radius: float = 5.0,
) -> SoftMaskSet:
    """Build {face, eyes, nose, mouth} soft masks from 68 landmarks.

    Each part is the filled convex hull of its landmark subset. The face
    uses all 68 points with the hull extended upward by
    upward_extension x (bounding-box height), then soft-intersected with
    person_mask. Every channel is blurred by blur_radius at the end.
    """
    h, w = int(image_size[0]), int(image_size[1])
    pts = landmarks.points
    if (
        pts[:, 0].min() < 0
        or pts[:, 1].min() < 0
        or pts[:, 0].max() > w - 1
        or pts[:, 1].max() > h - 1
    ):
        raise ValueError(f"landmarks fall outside the {h}x{w} image bounds")
    person_mask = tensor.as_tensor(person_mask)
    if person_mask.shape[:2] != (h, w):
        raise ValueError(
            f"person mask size {person_mask.shape[:2]} does not match image {(h, w)}"
        )

    bbox_height = pts[:, 1].max() - pts[:, 1].min()
    lifted = pts - np.array([0.0, upward_extension * bbox_height])
    face = _fill_hull(np.vstack([pts, lifted]), (h, w))
    face = face[:, :, np.newaxis] * person_mask

    eyes = _fill_hull(landmarks.region_points("eyes"), (h, w))[:, :, np.newaxis]
    nose = _fill_hull(landmarks.region_points("nose"), (h, w))[:, :, np.newaxis]
    mouth_pts = np.vstack(
        [landmarks.region_points("outer_mouth"), landmarks.region_points("inner_mouth")]
    )
    mouth = _fill_hull(mouth_pts, (h, w))[:, :, np.newaxis]

    channels = [blur_mask(c, blur_radius) for c in (face, eyes, nose, mouth)]
    return SoftMaskSet(np.concatenate(channels, axis=2), ("face", "eyes", "nose", "mouth"))


def _gaussian_taps(radius: float):
    sigma = radius / 2.0
    half = int(np.floor(3.0 * sigma))
    offsets = np.arange(-half, half + 1)
    taps = np.exp(-(offsets.astype(tensor.DTYPE) ** 2) / (2.0 * sigma * sigma))
    return offsets, taps / taps.sum()


def _blur_axis(x, offsets, taps, axis):
    half = int(offsets.max())
    pad = [(0, 0)] * x.ndim
    pad[axis] = (half, half)
    padded = np.pad(x, pad, mode="symmetric")
    # difference form: constants pass through bit-exactly even though the
    # normalized tap sum is only 1.0 up to rounding
    out = x.copy()
    for off, tap in zip(offsets, taps):
        start = off + half
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(start, start + x.shape[axis])
        out += tap * (padded[tuple(sl)] - x)
    return out


def blur_mask(mask, radius: float):
    """Gaussian blur with sigma = radius/2, taps truncated at 3 sigma and
    renormalized, symmetric (reflective) borders. Radius 0 is the identity;
    constant fields pass through unchanged."""
    mask = tensor.as_tensor(mask)
    if radius < 0:
        raise ValueError(f"blur radius must be >= 0, got {radius}")
    if radius == 0:
        return mask.copy()
    offsets, taps = _gaussian_taps(radius)
    if len(offsets) == 1:
        return mask.copy()
    out = _blur_axis(mask, offsets, taps, axis=0)
    out = _blur_axis(out, offsets, taps, axis=1)
    return np.clip(out, 0.0, 1.0)


def augment_features(features, mask_set: SoftMaskSet, beta: float):
    """Concatenate beta-weighted mask channels onto a feature map.

    Masks are bilinearly resampled to the feature map's spatial size first.
    Output channels [0, N) are the features unchanged; [N, N+K) hold
    beta x mask values in the mask set's label order.
    """
    features = tensor.as_tensor(features)
    h, w = features.shape[:2]
    resampled = tensor.resample_bilinear(mask_set.masks, h, w)
    return np.concatenate([features, beta * resampled], axis=2)


def composite_visualization(mask_set: SoftMaskSet):
    """RGB overlay: body=red, background=green, face=blue, eyes=cyan,
    nose=yellow, mouth=magenta; channels sum then clamp to [0, 1]."""
    h, w = mask_set.source_size
    out = np.zeros((h, w, 3), dtype=tensor.DTYPE)
    for label in mask_set.labels:
        if label not in COMPOSITE_COLORS:
            raise ValueError(
                f"no composite colour for label {label!r}; "
                f"known labels: {', '.join(sorted(set(COMPOSITE_COLORS)))}"
            )
        out += mask_set.channel(label)[:, :, np.newaxis] * np.array(COMPOSITE_COLORS[label])
    return np.clip(out, 0.0, 1.0)
