"""Semantic mask construction on a synthetic portrait.

Builds every mask kind the library supports, end to end: skin detection
in YCbCr, convex-hull facial parts from 68 landmarks, probability-map
rescaling, joint top-k channel selection, Gaussian softening, and the
color composite. Outputs land in demos/output/masks/.
"""

import os

import numpy as np

from maskmrf import formats, masks

OUT = os.path.join(os.path.dirname(__file__), "output", "masks")


def portrait(h=96, w=96):
    """Skin-toned head ellipse on a blue backdrop."""
    yy, xx = np.mgrid[0:h, 0:w]
    head = ((yy - 52) / 34.0) ** 2 + ((xx - 48) / 26.0) ** 2 <= 1.0
    img = np.empty((h, w, 3))
    img[:, :] = [0.15, 0.25, 0.7]
    img[head] = [0.9, 0.65, 0.5]
    return img, head.astype(float)[:, :, None]


def synthetic_landmarks():
    """68 points laid out like the usual face annotation convention:
    0-16 jaw, 17-26 brows, 27-35 nose, 36-47 eyes, 48-67 mouth."""
    pts = np.zeros((68, 2))
    th = np.linspace(0.0, np.pi, 17)
    pts[0:17] = np.stack([48 + 24 * np.cos(th), 52 + 30 * np.sin(th)], axis=1)
    th = np.linspace(np.pi + 0.45, 2 * np.pi - 0.45, 10)
    pts[17:27] = np.stack([48 + 22 * np.cos(th), 52 + 26 * np.sin(th)], axis=1)
    pts[27:31] = np.stack([np.full(4, 48.0), np.linspace(44, 56, 4)], axis=1)
    pts[31:36] = np.stack([np.linspace(43, 53, 5), np.full(5, 58.0)], axis=1)
    th = np.linspace(0.0, 2 * np.pi, 7)[:6]
    for k, cx in ((36, 37.0), (42, 59.0)):
        pts[k:k + 6] = np.stack([cx + 4 * np.cos(th), 46 + 2.5 * np.sin(th)], axis=1)
    th = np.linspace(0.0, 2 * np.pi, 13)[:12]
    pts[48:60] = np.stack([48 + 10 * np.cos(th), 70 + 4 * np.sin(th)], axis=1)
    th = np.linspace(0.0, 2 * np.pi, 9)[:8]
    pts[60:68] = np.stack([48 + 6 * np.cos(th), 70 + 1.8 * np.sin(th)], axis=1)
    return masks.LandmarkSet(points=pts)


def main():
    os.makedirs(OUT, exist_ok=True)
    img, person = portrait()
    h, w = img.shape[:2]
    formats.write_image_rgb(os.path.join(OUT, "portrait.png"), img)

    print("== skin detection ==")
    skin = masks.detect_skin(img)
    skin = masks.intersect_masks(skin, person)
    print(f"skin covers {skin.mean() * 100:.1f}% of the frame"
          f" (head ellipse is {person.mean() * 100:.1f}%)")

    print("\n== facial parts from landmarks ==")
    lm = synthetic_landmarks()
    parts = masks.facial_part_masks(lm, (h, w), person, blur_radius=2.0)
    for label in parts.labels:
        print(f"  {label:>5}: mean {parts.channel(label).mean():.4f}")
    formats.write_landmarks(os.path.join(OUT, "landmarks.txt"), lm)

    print("\n== assembling a six-channel set ==")
    full = masks.SoftMaskSet(
        np.concatenate([person, 1.0 - person, parts.masks], axis=2),
        ("body", "background") + parts.labels,
    )
    comp = masks.composite_visualization(full)
    formats.write_image_rgb(os.path.join(OUT, "composite.png"), comp)
    print(f"composite.png written ({full.count} colored channels)")

    print("\n== joint top-k selection ==")
    # pretend the style image is the same portrait; keep the 3 channels
    # with the highest mean coverage across both sides
    kept_c, kept_s = masks.select_top_k(full, full, k=3)
    print(f"kept labels, best first: {kept_c.labels}")

    print("\n== softening and raw-map rescale ==")
    soft = masks.blur_mask(full.channel("body")[:, :, None], radius=4.0)
    print(f"body edge softened: hard mean {full.channel('body').mean():.4f}, "
          f"blurred mean {soft.mean():.4f}")
    raw = np.stack([np.hypot(*np.mgrid[0:h, 0:w]), img[:, :, 2]], axis=2)
    scaled = masks.rescale_probability_maps(raw, ("radial", "blueness"))
    print(f"raw ranges {[f'{raw[..., i].min():.1f}..{raw[..., i].max():.1f}' for i in range(2)]}"
          f" -> rescaled to [0, 1] for labels {scaled.labels}")

    manifest = formats.save_mask_set(OUT, kept_c, img, None,
                                     landmarks_path="landmarks.txt")
    print(f"\nmask set + manifest saved under {os.path.relpath(manifest)}")


if __name__ == "__main__":
    main()
