"""Patch dictionary, nearest-neighbour matching, and energy terms.

Patches are t x t windows of a feature map flattened in (row, column,
channel) order. A query or dictionary entry is the concatenation of a
feature sub-vector (length t*t*N) and a mask sub-vector (length t*t*K,
already carrying the beta weight). Matching maximizes raw normalized
cross-correlation; the style energy is the squared distance between each
query and its matched entry, with gradients flowing to feature channels
only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from maskmrf import tensor

_NN_BLOCK = 512  # queries per similarity block; fixed for determinism


@dataclass(frozen=True)
class PatchDictionary:
    """Pooled style patches across rotation/scale variants.

    entries is (P, D) with D = t*t*(N+K); norms holds per-entry L2 norms;
    positions, rotation_indices and scale_indices record where each entry
    came from (top-left corner in the transformed map, index into the
    rotation list, index into the scale list).
    """

    patch_size: int
    beta: float
    feature_channels: int
    mask_channels: int
    entries: np.ndarray
    norms: np.ndarray
    positions: np.ndarray
    rotation_indices: np.ndarray
    scale_indices: np.ndarray

    @property
    def feature_length(self) -> int:
        return self.patch_size * self.patch_size * self.feature_channels

    @property
    def entry_length(self) -> int:
        return self.patch_size * self.patch_size * (self.feature_channels + self.mask_channels)

    def __len__(self) -> int:
        return self.entries.shape[0]

    def validate_norms(self, rel_tol: float = 1e-5) -> None:
        fresh = np.linalg.norm(self.entries, axis=1)
        if not np.allclose(fresh, self.norms, rtol=rel_tol, atol=rel_tol):
            raise ValueError("stored entry norms disagree with recomputed norms")


@dataclass(frozen=True)
class NNAssignment:
    """Per-query matched dictionary index and its similarity score."""

    indices: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return self.indices.shape[0]


def extract_patches(feature_map, t: int, stride: int):
    """All t x t patches at the given stride, flattened row-major.

    Returns (patches, positions): patches is (P, t*t*C); positions is
    (P, 2) holding (row, col) of each top-left corner. Patches are
    enumerated in row-major order of their corners; only fully supported
    positions are produced (no padding).
    """
    m = tensor.as_tensor(feature_map)
    h, w, c = m.shape
    if t < 1:
        raise ValueError(f"patch size must be >= 1, got {t}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if t > h or t > w:
        raise ValueError(f"patch size {t} exceeds map size {h}x{w}")
    windows = np.lib.stride_tricks.sliding_window_view(m, (t, t), axis=(0, 1))
    windows = windows[::stride, ::stride]
    nh, nw = windows.shape[:2]
    # window axes arrive as (..., c, dy, dx); reorder so each flattened
    # patch is (dy, dx, c) row-major like the tensor layout
    patches = windows.transpose(0, 1, 3, 4, 2).reshape(nh * nw, t * t * c)
    rows, cols = np.meshgrid(
        np.arange(nh) * stride, np.arange(nw) * stride, indexing="ij"
    )
    positions = np.stack([rows.ravel(), cols.ravel()], axis=1)
    return np.ascontiguousarray(patches), positions


def concatenated_patches(features, weighted_masks, t: int, stride: int):
    """Query vectors: feature patches then beta-weighted mask patches,
    extracted from spatially aligned maps. Returns (queries, positions)."""
    features = tensor.as_tensor(features)
    weighted_masks = tensor.as_tensor(weighted_masks)
    if features.shape[:2] != weighted_masks.shape[:2]:
        raise ValueError(
            f"feature map {features.shape[:2]} and mask map "
            f"{weighted_masks.shape[:2]} are not aligned"
        )
    feat, positions = extract_patches(features, t, stride)
    msk, _ = extract_patches(weighted_masks, t, stride)
    return np.hstack([feat, msk]), positions


def _transform_map(concat_map, angle: float, scale: float):
    """Rotate (about the center) and scale an (N+K)-channel map as one
    tensor via inverse-mapped bilinear sampling.

    Returns (out_map, valid) where valid marks output pixels whose source
    coordinate lies inside the original support. The output canvas is the
    bounding box of the rotated, scaled support, so a rotation of k*90
    degrees reproduces exact gathers (sample coordinates snap to integers)
    and no part of the source is cropped away.
    """
    h, w = concat_map.shape[:2]
    cos_a, sin_a = abs(np.cos(angle)), abs(np.sin(angle))
    oh = max(1, int(round(scale * (cos_a * (h - 1) + sin_a * (w - 1)))) + 1)
    ow = max(1, int(round(scale * (sin_a * (h - 1) + cos_a * (w - 1)))) + 1)
    cy_out, cx_out = (oh - 1) / 2.0, (ow - 1) / 2.0
    cy_src, cx_src = (h - 1) / 2.0, (w - 1) / 2.0
    ii, jj = np.meshgrid(np.arange(oh, dtype=tensor.DTYPE), np.arange(ow, dtype=tensor.DTYPE), indexing="ij")
    vy = ii - cy_out
    vx = jj - cx_out
    cos_t, sin_t = np.cos(angle), np.sin(angle)
    src_y = (cos_t * vy + sin_t * vx) / scale + cy_src
    src_x = (-sin_t * vy + cos_t * vx) / scale + cx_src
    # snap near-integer coordinates so right-angle rotations are exact
    sy_round = np.round(src_y)
    sx_round = np.round(src_x)
    src_y = np.where(np.abs(src_y - sy_round) < 1e-9, sy_round, src_y)
    src_x = np.where(np.abs(src_x - sx_round) < 1e-9, sx_round, src_x)
    eps = 1e-9
    valid = (
        (src_y >= -eps) & (src_y <= h - 1 + eps) & (src_x >= -eps) & (src_x <= w - 1 + eps)
    )
    return tensor.sample_bilinear(concat_map, src_y, src_x), valid


def build_dictionary(
    style_features,
    style_masks_resampled,
    beta: float,
    t: int,
    rotations=(0.0,),
    scales=(1.0,),
) -> PatchDictionary:
    """Pool style patches over every (rotation, scale) pair.

    The feature map and the raw mask map (resampled to the same spatial
    size) are concatenated (masks weighted by beta) and transformed as one
    tensor per pair; patches touching out-of-support samples are dropped.
    Entry vectors use the (feature block, mask block) layout.
    """
    features = tensor.as_tensor(style_features)
    msk = tensor.as_tensor(style_masks_resampled)
    if features.shape[:2] != msk.shape[:2]:
        raise ValueError(
            f"style features {features.shape[:2]} and masks {msk.shape[:2]} are not aligned"
        )
    n = features.shape[2]
    k = msk.shape[2]
    concat = np.concatenate([features, beta * msk], axis=2)

    all_entries = []
    all_pos = []
    all_rot = []
    all_scale = []
    for ri, angle in enumerate(rotations):
        for si, scale in enumerate(scales):
            if scale <= 0:
                raise ValueError(f"scale factors must be positive, got {scale}")
            out_map, valid = _transform_map(concat, float(angle), float(scale))
            if out_map.shape[0] < t or out_map.shape[1] < t:
                continue
            patches, positions = extract_patches(out_map, t, stride=1)
            ok = np.lib.stride_tricks.sliding_window_view(valid, (t, t)).all(axis=(2, 3))
            keep = ok.ravel()
            if not keep.any():
                continue
            patches = patches[keep]
            positions = positions[keep]
            # split interleaved (dy, dx, channel) patches into the
            # feature-block / mask-block entry layout
            per_pix = patches.reshape(len(patches), t * t, n + k)
            entries = np.concatenate(
                [per_pix[:, :, :n].reshape(len(patches), -1),
                 per_pix[:, :, n:].reshape(len(patches), -1)],
                axis=1,
            )
            all_entries.append(entries)
            all_pos.append(positions)
            all_rot.append(np.full(len(patches), ri, dtype=np.int64))
            all_scale.append(np.full(len(patches), si, dtype=np.int64))

    if not all_entries:
        raise ValueError(
            "patch dictionary is empty after filtering; the style map is too "
            "small for the requested patch size and transforms"
        )
    entries = np.vstack(all_entries)
    return PatchDictionary(
        patch_size=t,
        beta=float(beta),
        feature_channels=n,
        mask_channels=k,
        entries=entries,
        norms=np.linalg.norm(entries, axis=1),
        positions=np.vstack(all_pos),
        rotation_indices=np.concatenate(all_rot),
        scale_indices=np.concatenate(all_scale),
    )


def find_nn(query_patches, dictionary: PatchDictionary) -> NNAssignment:
    """Best dictionary entry per query under normalized cross-correlation.

    Similarity is (q . d) / (|q| |d|) with no mean centering; zero-norm
    vectors contribute similarity 0; ties take the smallest entry index.
    """
    queries = np.asarray(query_patches, dtype=tensor.DTYPE)
    if queries.ndim != 2:
        raise ValueError(f"queries must be a 2-D array, got shape {queries.shape}")
    if queries.shape[1] != dictionary.entry_length:
        raise ValueError(
            f"query length {queries.shape[1]} does not match dictionary "
            f"entry length {dictionary.entry_length}"
        )
    qnorms = np.linalg.norm(queries, axis=1)
    dnorms = dictionary.norms
    p = queries.shape[0]
    indices = np.empty(p, dtype=np.int64)
    scores = np.empty(p, dtype=tensor.DTYPE)
    for start in range(0, p, _NN_BLOCK):
        stop = min(start + _NN_BLOCK, p)
        dots = queries[start:stop] @ dictionary.entries.T
        denom = qnorms[start:stop, np.newaxis] * dnorms[np.newaxis, :]
        sim = np.zeros_like(dots)
        np.divide(dots, denom, out=sim, where=denom > 0)
        idx = sim.argmax(axis=1)
        indices[start:stop] = idx
        scores[start:stop] = np.take_along_axis(sim, idx[:, np.newaxis], axis=1)[:, 0]
    return NNAssignment(indices=indices, scores=scores)


class StyleEnergy(NamedTuple):
    energy: float
    grad: np.ndarray
    feature_term: float
    mask_term: float


def style_energy_and_grad(
    x_features, x_masks_w, assignment: NNAssignment, dictionary: PatchDictionary,
    t: int, stride: int,
) -> StyleEnergy:
    """Squared distance between each query patch and its matched entry.

    energy = feature_term + mask_term, both plain squared Euclidean sums
    over the respective sub-vectors (mask sub-vectors carry beta on both
    sides). The gradient accumulates 2*(q - d) into overlapping positions
    of x_features only; masks are constants of the optimization. The
    assignment is held fixed.
    """
    x_features = tensor.as_tensor(x_features)
    if x_features.shape[2] != dictionary.feature_channels:
        raise ValueError(
            f"feature map has {x_features.shape[2]} channels, dictionary "
            f"expects {dictionary.feature_channels}"
        )
    queries, positions = concatenated_patches(x_features, x_masks_w, t, stride)
    if queries.shape[1] != dictionary.entry_length:
        raise ValueError(
            f"query length {queries.shape[1]} does not match dictionary "
            f"entry length {dictionary.entry_length}"
        )
    if len(assignment) != queries.shape[0]:
        raise ValueError(
            f"assignment covers {len(assignment)} patches but the map yields "
            f"{queries.shape[0]}; recompute the assignment"
        )
    diff = queries - dictionary.entries[assignment.indices]
    fl = dictionary.feature_length
    dfeat = diff[:, :fl]
    dmask = diff[:, fl:]
    feature_term = float(np.dot(dfeat.ravel(), dfeat.ravel()))
    mask_term = float(np.dot(dmask.ravel(), dmask.ravel()))

    h, w, n = x_features.shape
    nh = (h - t) // stride + 1
    nw = (w - t) // stride + 1
    contrib = (2.0 * dfeat).reshape(nh, nw, t, t, n)
    grad = np.zeros_like(x_features)
    for dy in range(t):
        for dx in range(t):
            grad[dy : dy + nh * stride : stride, dx : dx + nw * stride : stride] += contrib[
                :, :, dy, dx, :
            ]
    return StyleEnergy(feature_term + mask_term, grad, feature_term, mask_term)


def style_report_value(feature_term: float, mask_term: float, beta: float) -> float:
    """Style energy with the mask component rescaled from quadratic to
    linear weighting (the mask sub-vectors carry beta on both sides, so
    dividing the mask term by beta reports a linearly weighted penalty)."""
    if beta > 0:
        return feature_term + mask_term / beta
    return feature_term


def content_energy_and_grad(x_features, content_features):
    """Squared Euclidean distance to the content features and its gradient."""
    x_features = tensor.as_tensor(x_features)
    content_features = tensor.as_tensor(content_features)
    if x_features.shape != content_features.shape:
        raise ValueError(
            f"feature shapes differ: {x_features.shape} vs {content_features.shape}"
        )
    d = x_features - content_features
    energy = float(np.dot(d.ravel(), d.ravel()))
    return energy, 2.0 * d


def assignment_as_map(assignment: NNAssignment, n_rows: int, n_cols: int):
    """Diagnostic view of an assignment as an (n_rows, n_cols, 2) tensor:
    channel 0 holds entry indices, channel 1 similarity scores."""
    if len(assignment) != n_rows * n_cols:
        raise ValueError(
            f"assignment length {len(assignment)} does not fill a "
            f"{n_rows}x{n_cols} grid"
        )
    out = np.empty((n_rows, n_cols, 2), dtype=tensor.DTYPE)
    out[:, :, 0] = assignment.indices.reshape(n_rows, n_cols)
    out[:, :, 1] = assignment.scores.reshape(n_rows, n_cols)
    return out
