import numpy as np
import pytest

from maskmrf import masks
from maskmrf.masks import LandmarkSet, SkinRule, SoftMaskSet

import oracles


# ------------------------------------------------------------- SoftMaskSet


def test_mask_set_validation():
    good = SoftMaskSet(np.zeros((4, 4, 2)), ("a", "b"))
    assert good.count == 2
    assert good.source_size == (4, 4)
    with pytest.raises(ValueError):
        SoftMaskSet(np.zeros((4, 4, 2)), ("a", "a"))  # duplicate labels
    with pytest.raises(ValueError):
        SoftMaskSet(np.zeros((4, 4, 2)), ("a",))  # label count mismatch
    with pytest.raises(ValueError):
        SoftMaskSet(np.full((4, 4, 1), 1.5), ("a",))  # out of range
    with pytest.raises(KeyError):
        good.channel("zzz")


def test_mask_set_resampled_stays_in_range():
    rng = np.random.default_rng(1)
    ms = SoftMaskSet(rng.random((6, 6, 3)), ("a", "b", "c"))
    out = ms.resampled(13, 4)
    assert out.source_size == (13, 4)
    assert out.labels == ("a", "b", "c")
    assert out.masks.min() >= 0.0 and out.masks.max() <= 1.0


# ----------------------------------------------------------------- rescale


def test_rescale_two_point_channel():
    raw = np.array([[[2.0], [4.0]]])
    out = masks.rescale_probability_maps(raw)
    assert np.array_equal(out.masks[:, :, 0], np.array([[0.0, 1.0]]))


def test_rescale_constant_channel_is_zero():
    raw = np.full((3, 3, 1), 7.0)
    out = masks.rescale_probability_maps(raw)
    assert np.all(out.masks == 0.0)


def test_rescale_random_channels_hit_zero_and_one():
    rng = np.random.default_rng(2)
    raw = rng.normal(0, 5, (4, 4, 3))
    out = masks.rescale_probability_maps(raw, ("x", "y", "z"))
    for c in range(3):
        chan = out.masks[:, :, c]
        lo = raw[:, :, c].min()
        hi = raw[:, :, c].max()
        # scanning oracle: min cell maps to 0, max cell maps to 1
        assert chan[np.unravel_index(raw[:, :, c].argmin(), (4, 4))] == 0.0
        assert chan[np.unravel_index(raw[:, :, c].argmax(), (4, 4))] == 1.0
        want = (raw[:, :, c] - lo) / (hi - lo)
        assert np.allclose(chan, want)
    assert out.masks.min() >= 0.0 and out.masks.max() <= 1.0


# ------------------------------------------------------------------- top-k


def _random_pair(seed, k=20, h=6, w=8):
    rng = np.random.default_rng(seed)
    labels = tuple(f"cat{i:02d}" for i in range(k))
    c = SoftMaskSet(rng.random((h, w, k)), labels)
    s = SoftMaskSet(rng.random((h + 2, w - 1, k)), labels)
    return c, s, labels


def test_select_all_is_identity_up_to_order():
    c, s, labels = _random_pair(3, k=5)
    oc, os = masks.select_top_k(c, s, 5)
    assert set(oc.labels) == set(labels)
    assert oc.labels == os.labels
    for label in labels:
        assert np.array_equal(oc.channel(label), c.channel(label))
        assert np.array_equal(os.channel(label), s.channel(label))


def test_select_dominant_channel():
    ones = np.zeros((4, 4, 3))
    ones[:, :, 1] = 1.0
    c = SoftMaskSet(ones, ("a", "b", "c"))
    s = SoftMaskSet(ones.copy(), ("a", "b", "c"))
    oc, _ = masks.select_top_k(c, s, 1)
    assert oc.labels == ("b",)
    assert np.all(oc.masks == 1.0)


def test_select_top_k_matches_fullsort_oracle():
    for seed in range(8):
        c, s, labels = _random_pair(100 + seed)
        oc, os = masks.select_top_k(c, s, 5)
        want = oracles.topk_fullsort(c.masks, s.masks, labels, 5)
        assert list(oc.labels) == want
        assert list(os.labels) == want


def test_select_top_k_tie_breaks_by_label():
    flat = np.full((4, 4, 3), 0.5)
    c = SoftMaskSet(flat, ("zeta", "alpha", "mid"))
    s = SoftMaskSet(flat.copy(), ("zeta", "alpha", "mid"))
    oc, _ = masks.select_top_k(c, s, 2)
    assert oc.labels == ("alpha", "mid")


def test_select_top_k_label_mismatch_lists_difference():
    c = SoftMaskSet(np.zeros((2, 2, 2)), ("a", "b"))
    s = SoftMaskSet(np.zeros((2, 2, 2)), ("a", "c"))
    with pytest.raises(ValueError) as err:
        masks.select_top_k(c, s, 1)
    assert "b" in str(err.value) and "c" in str(err.value)


def test_select_top_k_rejects_bad_k():
    c = SoftMaskSet(np.zeros((2, 2, 2)), ("a", "b"))
    with pytest.raises(ValueError):
        masks.select_top_k(c, c, 3)
    with pytest.raises(ValueError):
        masks.select_top_k(c, c, 0)


# -------------------------------------------------------------------- skin


def test_skin_black_pixel_rejected():
    img = np.zeros((1, 1, 3))
    out = masks.detect_skin(img)
    assert out.shape == (1, 1, 1)
    assert out[0, 0, 0] == 0.0


def test_skin_derived_ycbcr_pixel_accepted():
    # invert the conversion to land exactly on YCbCr = (150, 100, 150)
    rgb = oracles.rgb_for_ycbcr(150.0, 100.0, 150.0)
    assert np.all(rgb >= 0) and np.all(rgb <= 255)
    y, cb, cr = oracles.ycbcr_pixel(*rgb)
    assert (y, cb, cr) == pytest.approx((150.0, 100.0, 150.0))
    img = (rgb / 255.0).reshape(1, 1, 3)
    assert masks.detect_skin(img)[0, 0, 0] == 1.0


def test_skin_pure_blue_rejected():
    img = np.array([[[0.0, 0.0, 1.0]]])
    # conversion oracle: Cr of pure blue is far below the skin box
    _, _, cr = oracles.ycbcr_pixel(0.0, 0.0, 255.0)
    assert cr < 133.0
    assert masks.detect_skin(img)[0, 0, 0] == 0.0


def test_skin_matches_pixel_oracle_on_random_rgb():
    rng = np.random.default_rng(4)
    img = rng.random((10, 20, 3))
    out = masks.detect_skin(img)
    for i in range(10):
        for j in range(20):
            wanted = oracles.skin_pixel(*(img[i, j] * 255.0))
            assert out[i, j, 0] == wanted


def test_skin_rule_overridable():
    img = np.zeros((1, 1, 3))  # Y=0 fails the default threshold
    loose = SkinRule(y_min=-1.0, cb_min=0, cb_max=255, cr_min=0, cr_max=255)
    assert masks.detect_skin(img, loose)[0, 0, 0] == 1.0


def test_skin_rejects_wrong_channel_count():
    with pytest.raises(ValueError):
        masks.detect_skin(np.zeros((2, 2, 1)))


# --------------------------------------------------------------- intersect


def test_intersect_identity_and_annihilator():
    rng = np.random.default_rng(5)
    m = rng.random((3, 3, 1))
    assert np.array_equal(masks.intersect_masks(m, np.ones((3, 3, 1))), m)
    assert np.all(masks.intersect_masks(m, np.zeros((3, 3, 1))) == 0.0)


def test_intersect_product_semantics():
    a = np.full((1, 1, 1), 0.5)
    assert masks.intersect_masks(a, a)[0, 0, 0] == 0.25


def test_intersect_size_mismatch():
    with pytest.raises(ValueError):
        masks.intersect_masks(np.zeros((2, 2, 1)), np.zeros((3, 2, 1)))


# ------------------------------------------------------------ facial parts


def _landmarks_with(nose_pts=None, eye_pts=None, h=40, w=40):
    """68 landmarks spread over the canvas, with optional overrides for
    the nose (indices 27..35) and eye (36..47) regions."""
    rng = np.random.default_rng(6)
    pts = np.column_stack(
        [rng.uniform(5, w - 6, 68), rng.uniform(12, h - 6, 68)]
    )
    if nose_pts is not None:
        reps = np.resize(np.asarray(nose_pts, dtype=float), (9, 2))
        pts[27:36] = reps
    if eye_pts is not None:
        reps = np.resize(np.asarray(eye_pts, dtype=float), (12, 2))
        pts[36:48] = reps
    return LandmarkSet(points=pts)


def test_nose_square_is_exactly_filled_square():
    square = [(10, 10), (16, 10), (16, 16), (10, 16)]
    lm = _landmarks_with(nose_pts=square)
    out = masks.facial_part_masks(lm, (40, 40), np.ones((40, 40, 1)), blur_radius=0.0)
    nose = out.channel("nose")
    want = np.zeros((40, 40))
    want[10:17, 10:17] = 1.0
    assert np.array_equal(nose, want)


def test_collinear_eyes_match_line_oracle():
    eye_line = [(8.0, 20.0), (20.0, 24.0), (14.0, 22.0)]
    lm = _landmarks_with(eye_pts=eye_line)
    out = masks.facial_part_masks(lm, (40, 40), np.ones((40, 40, 1)), blur_radius=0.0)
    eyes = out.channel("eyes")
    want_pixels = oracles.midpoint_line((8.0, 20.0), (20.0, 24.0))
    got_pixels = {(x, y) for y, x in zip(*np.nonzero(eyes))}
    assert got_pixels == want_pixels


def test_zero_person_mask_kills_face_channel():
    lm = _landmarks_with()
    out = masks.facial_part_masks(lm, (40, 40), np.zeros((40, 40, 1)), blur_radius=0.0)
    assert np.all(out.channel("face") == 0.0)
    assert out.channel("eyes").max() > 0.0  # other parts unaffected


def test_face_extends_upward():
    lm = _landmarks_with()
    pts = lm.points
    top = int(np.floor(pts[:, 1].min()))
    out = masks.facial_part_masks(lm, (40, 40), np.ones((40, 40, 1)), blur_radius=0.0)
    face = out.channel("face")
    assert face[:top, :].sum() > 0.0  # coverage above the landmark bbox


def test_out_of_bounds_landmarks_error():
    lm = _landmarks_with()
    with pytest.raises(ValueError):
        masks.facial_part_masks(lm, (20, 20), np.ones((20, 20, 1)))


def test_facial_labels_and_range():
    lm = _landmarks_with()
    out = masks.facial_part_masks(lm, (40, 40), np.ones((40, 40, 1)))
    assert out.labels == ("face", "eyes", "nose", "mouth")
    assert out.masks.min() >= 0.0 and out.masks.max() <= 1.0


def test_landmark_set_validation():
    with pytest.raises(ValueError):
        LandmarkSet(points=np.zeros((10, 2)))
    with pytest.raises(ValueError):
        LandmarkSet(points=np.zeros((68, 2)), eyes=(40, 20))


# -------------------------------------------------------------------- blur


def test_blur_radius_zero_is_identity():
    rng = np.random.default_rng(7)
    m = rng.random((5, 5, 1))
    assert np.array_equal(masks.blur_mask(m, 0), m)


def test_blur_preserves_constants_exactly():
    for value in (0.0, 0.37, 1.0):
        m = np.full((9, 9, 2), value)
        out = masks.blur_mask(m, 4)
        assert np.array_equal(out, m)


def test_blur_impulse_mass_and_center():
    m = np.zeros((31, 31, 1))
    m[15, 15, 0] = 1.0
    out = masks.blur_mask(m, 4)
    assert out.sum() == pytest.approx(1.0, abs=1e-5)
    assert np.unravel_index(out.argmax(), out.shape) == (15, 15, 0)


def test_blur_matches_dense_naive_oracle():
    rng = np.random.default_rng(8)
    m = rng.random((12, 10, 2))
    got = masks.blur_mask(m, 3)
    want = oracles.gaussian_blur_naive(m, 3)
    assert np.allclose(got, want, atol=1e-12)


def test_blur_preserves_mean_within_tolerance():
    rng = np.random.default_rng(9)
    for _ in range(5):
        m = rng.random((16, 16, 1))
        out = masks.blur_mask(m, 5)
        assert out.mean() == pytest.approx(m.mean(), abs=1e-4)


def test_blur_rejects_negative_radius():
    with pytest.raises(ValueError):
        masks.blur_mask(np.zeros((3, 3, 1)), -1)


# ----------------------------------------------------------- augmentation


def test_augment_beta_zero_appends_zero_channels():
    rng = np.random.default_rng(10)
    feats = rng.random((6, 6, 2))
    ms = SoftMaskSet(rng.random((12, 12, 3)), ("a", "b", "c"))
    out = masks.augment_features(feats, ms, 0.0)
    assert out.shape == (6, 6, 5)
    assert np.all(out[:, :, 2:] == 0.0)
    # dropping the appended channels recovers the features bit for bit
    assert np.array_equal(out[:, :, :2], feats)


def test_augment_beta_scales_mask_value():
    feats = np.zeros((2, 2, 1))
    ms = SoftMaskSet(np.ones((2, 2, 1)), ("a",))
    out = masks.augment_features(feats, ms, 20.0)
    assert np.all(out[:, :, 1] == 20.0)


def test_augment_resamples_masks_to_feature_size():
    feats = np.zeros((3, 3, 1))
    ms = SoftMaskSet(np.ones((9, 9, 2)), ("a", "b"))
    out = masks.augment_features(feats, ms, 5.0)
    assert out.shape == (3, 3, 3)
    assert np.allclose(out[:, :, 1:], 5.0)


# --------------------------------------------------------------- composite


def test_composite_background_is_green():
    ms = SoftMaskSet(np.ones((3, 3, 1)), ("background",))
    out = masks.composite_visualization(ms)
    assert np.array_equal(out, np.tile([0.0, 1.0, 0.0], (3, 3, 1)))


def test_composite_all_zero_is_black():
    ms = SoftMaskSet(np.zeros((3, 3, 2)), ("body", "face"))
    assert np.all(masks.composite_visualization(ms) == 0.0)


def test_composite_onehot_eyes_pixel_is_cyan():
    chan = np.zeros((3, 3, 1))
    chan[1, 2, 0] = 1.0
    ms = SoftMaskSet(chan, ("eyes",))
    out = masks.composite_visualization(ms)
    assert np.array_equal(out[1, 2], [0.0, 1.0, 1.0])
    assert out.sum() == 2.0


def test_composite_full_color_table():
    combos = {
        "body": (1.0, 0.0, 0.0),
        "background": (0.0, 1.0, 0.0),
        "face": (0.0, 0.0, 1.0),
        "skin": (0.0, 0.0, 1.0),
        "eyes": (0.0, 1.0, 1.0),
        "nose": (1.0, 1.0, 0.0),
        "mouth": (1.0, 0.0, 1.0),
    }
    for label, color in combos.items():
        ms = SoftMaskSet(np.ones((2, 2, 1)), (label,))
        out = masks.composite_visualization(ms)
        assert np.array_equal(out[0, 0], color), label


def test_composite_unknown_label_errors():
    ms = SoftMaskSet(np.ones((2, 2, 1)), ("halo",))
    with pytest.raises(ValueError):
        masks.composite_visualization(ms)


def test_composite_clamps_overlaps():
    ms = SoftMaskSet(np.ones((2, 2, 2)), ("nose", "mouth"))  # overlapping red
    out = masks.composite_visualization(ms)
    assert out.max() == 1.0
