"""Command line front end.

Subcommands:
    synth    run a full synthesis from content/style images and manifests
    masks    build soft-mask sets (rescale, skin, facial, top-k, blur,
             composite) and write manifests
    weights  generate the builtin toy weight file or inspect a weight file

Exit codes: 0 success, 1 data or format error, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from maskmrf import features as features_mod
from maskmrf import formats, masks as masks_mod, optimizer


def _float_list(text):
    try:
        return tuple(float(p) for p in text.split(",") if p.strip() != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _name_list(text):
    names = tuple(p.strip() for p in text.split(",") if p.strip())
    if not names:
        raise argparse.ArgumentTypeError("expected a comma-separated list of layer names")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskmrf",
        description="Patch-based MRF style synthesis guided by soft semantic masks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a stylized image")
    p.add_argument("--content", required=True, help="content image (PNG)")
    p.add_argument("--style", required=True, help="style image (PNG)")
    p.add_argument("--content-masks", required=True, help="content mask manifest")
    p.add_argument("--style-masks", required=True, help="style mask manifest")
    p.add_argument("--weights", required=True, help="feature network weight file (.mmw)")
    p.add_argument("--out", required=True, help="output image path (PNG)")
    p.add_argument("--alpha-style", type=float, default=1e-4, help="style energy weight")
    p.add_argument("--alpha-content", type=float, default=20.0, help="content energy weight")
    p.add_argument(
        "--beta",
        type=float,
        default=20.0,
        help="mask channel weight (useful range roughly 15-35)",
    )
    p.add_argument("--patch-size", type=int, default=3)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--style-layers", type=_name_list, default=("relu1_1", "relu2_1"))
    p.add_argument("--content-layers", type=_name_list, default=("relu1_1", "relu2_1"))
    p.add_argument("--levels", type=int, default=3, help="pyramid levels")
    p.add_argument("--level-scale", type=float, default=0.5)
    p.add_argument("--outer-iters", type=int, default=10)
    p.add_argument("--lbfgs-iters", type=int, default=50)
    p.add_argument(
        "--rotations",
        type=_float_list,
        default=optimizer.DEFAULT_ROTATIONS,
        help="dictionary rotation angles in radians, comma-separated",
    )
    p.add_argument(
        "--scales",
        type=_float_list,
        default=optimizer.DEFAULT_SCALES,
        help="dictionary scale factors, comma-separated",
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", default=None, help="trace CSV path (default: next to --out)")
    p.add_argument("--dump-nn", default=None, help="directory for NN assignment dumps (.mmt)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("masks", help="build soft semantic masks")
    p.add_argument("--image", required=True, help="target image (PNG)")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--maps", default=None, help="raw probability maps (.mmt)")
    p.add_argument("--labels", type=_name_list, default=None, help="labels for --maps channels")
    p.add_argument("--manifest", default=None, help="existing manifest to start from")
    p.add_argument("--rescale", action="store_true", help="min-max rescale raw maps to [0,1]")
    p.add_argument("--skin", action="store_true", help="add a rule-based skin channel")
    p.add_argument(
        "--skin-rule",
        type=_float_list,
        default=None,
        metavar="YMIN,CBMIN,CBMAX,CRMIN,CRMAX",
        help="override the YCbCr skin thresholds",
    )
    p.add_argument("--person-mask", default=None, help="grayscale PNG used to intersect skin/face")
    p.add_argument("--facial", action="store_true", help="add face/eyes/nose/mouth channels")
    p.add_argument("--landmarks", default=None, help="landmark file (68 points)")
    p.add_argument("--face-extend", type=float, default=0.5,
                   help="upward extension of the face hull, as a fraction of its height")
    p.add_argument("--topk", type=int, default=None, metavar="K",
                   help="keep the K best labels over a content/style pair")
    p.add_argument("--style-image", default=None, help="style image for --topk")
    p.add_argument("--style-maps", default=None, help="raw style probability maps (.mmt)")
    p.add_argument("--style-manifest", default=None, help="style manifest for --topk")
    p.add_argument("--blur", type=float, default=None, metavar="R",
                   help="blur all channels with radius R before writing")
    p.add_argument("--composite", action="store_true", help="also write a colour composite PNG")
    p.set_defaults(func=cmd_masks)

    p = sub.add_parser("weights", help="weight file tools")
    wsub = p.add_subparsers(dest="weights_command", required=True)
    g = wsub.add_parser("gen-toy", help="write the deterministic toy network")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output .mmw path")
    g.set_defaults(func=cmd_weights)
    i = wsub.add_parser("inspect", help="print a weight file's layer table")
    i.add_argument("file", help=".mmw path")
    i.set_defaults(func=cmd_weights)

    return parser


def cmd_synth(args) -> int:
    net = features_mod.load_weights(args.weights)
    content = formats.read_image_rgb(args.content)
    style = formats.read_image_rgb(args.style)
    content_masks, _, _ = formats.load_mask_set(args.content_masks)
    style_masks, _, _ = formats.load_mask_set(args.style_masks)
    if content_masks.source_size != content.shape[:2]:
        raise ValueError(
            f"content masks in {args.content_masks} are "
            f"{content_masks.source_size[0]}x{content_masks.source_size[1]} but "
            f"{args.content} is {content.shape[0]}x{content.shape[1]}"
        )
    if style_masks.source_size != style.shape[:2]:
        raise ValueError(
            f"style masks in {args.style_masks} are "
            f"{style_masks.source_size[0]}x{style_masks.source_size[1]} but "
            f"{args.style} is {style.shape[0]}x{style.shape[1]}"
        )
    cfg = optimizer.SynthesisConfig(
        alpha_style=args.alpha_style,
        alpha_content=args.alpha_content,
        beta=args.beta,
        patch_size=args.patch_size,
        stride=args.stride,
        style_layers=tuple(args.style_layers),
        content_layers=tuple(args.content_layers),
        pyramid_levels=args.levels,
        level_scale=args.level_scale,
        outer_iterations=args.outer_iters,
        lbfgs_iterations=args.lbfgs_iters,
        seed=args.seed,
        rotations=tuple(args.rotations),
        scales=tuple(args.scales),
    )
    cfg.validate()
    result = optimizer.synthesize(content, style, content_masks, style_masks, net, cfg)
    formats.write_image_rgb(args.out, result.image)
    trace_path = args.trace or os.path.splitext(args.out)[0] + "_trace.csv"
    formats.write_trace_csv(trace_path, result.rows, cfg)
    if args.dump_nn:
        os.makedirs(args.dump_nn, exist_ok=True)
        for layer, amap in result.assignment_maps.items():
            formats.write_tensor(os.path.join(args.dump_nn, f"nn_{layer}.mmt"), amap)
    if result.rows:
        last = result.rows[-1]
        print(
            f"final energies: total={last.e_total:.6g} style={last.e_style:.6g} "
            f"content={last.e_content:.6g}"
        )
    else:
        print("no outer iterations were run; wrote the initial image")
    print(f"wrote {args.out} and {trace_path}")
    return 0


def _load_map_set(image, maps_path, labels, manifest_path, rescale, what):
    """Mask channels from a raw .mmt tensor or an existing manifest."""
    if maps_path and manifest_path:
        raise ValueError(f"give either {what} maps or a {what} manifest, not both")
    if maps_path:
        raw = formats.read_tensor(maps_path)
        if raw.shape[:2] != image.shape[:2]:
            raise ValueError(
                f"{what} maps are {raw.shape[0]}x{raw.shape[1]} but the image is "
                f"{image.shape[0]}x{image.shape[1]}"
            )
        if labels is not None and len(labels) != raw.shape[2]:
            raise ValueError(
                f"{len(labels)} labels given for {raw.shape[2]} {what} map channels"
            )
        if rescale:
            return masks_mod.rescale_probability_maps(raw, labels)
        names = labels if labels is not None else tuple(f"ch{i}" for i in range(raw.shape[2]))
        return masks_mod.SoftMaskSet(raw, names)
    if manifest_path:
        mask_set, manifest_image, _ = formats.load_mask_set(manifest_path)
        if manifest_image.shape[:2] != image.shape[:2]:
            raise ValueError(
                f"{what} manifest target is "
                f"{manifest_image.shape[0]}x{manifest_image.shape[1]} but the image "
                f"is {image.shape[0]}x{image.shape[1]}"
            )
        if rescale:
            return masks_mod.rescale_probability_maps(mask_set.masks, mask_set.labels)
        return mask_set
    return None


def _append_channel(mask_set, channel, label):
    if mask_set is None:
        return masks_mod.SoftMaskSet(channel, (label,))
    stacked = np.concatenate([mask_set.masks, channel], axis=2)
    return masks_mod.SoftMaskSet(stacked, mask_set.labels + (label,))


def cmd_masks(args) -> int:
    image = formats.read_image_rgb(args.image)
    mask_set = _load_map_set(image, args.maps, args.labels, args.manifest, args.rescale, "content")

    person = None
    if args.person_mask:
        person = formats.read_mask_png(args.person_mask)
        if person.shape[:2] != image.shape[:2]:
            raise ValueError(
                f"person mask is {person.shape[0]}x{person.shape[1]} but the image "
                f"is {image.shape[0]}x{image.shape[1]}"
            )

    if args.skin:
        rule = masks_mod.SkinRule()
        if args.skin_rule is not None:
            if len(args.skin_rule) != 5:
                raise ValueError("--skin-rule needs 5 values: ymin,cbmin,cbmax,crmin,crmax")
            rule = masks_mod.SkinRule(*args.skin_rule)
        skin = masks_mod.detect_skin(image, rule)
        if person is not None:
            skin = masks_mod.intersect_masks(skin, person)
        mask_set = _append_channel(mask_set, skin, "skin")

    landmarks = None
    if args.facial:
        if not args.landmarks:
            raise ValueError("--facial requires --landmarks")
        landmarks = formats.read_landmarks(args.landmarks)
        pm = person if person is not None else np.ones(image.shape[:2] + (1,))
        parts = masks_mod.facial_part_masks(
            landmarks, image.shape[:2], pm, upward_extension=args.face_extend
        )
        for label in parts.labels:
            mask_set = _append_channel(
                mask_set, parts.channel(label)[:, :, np.newaxis], label
            )

    if mask_set is None:
        raise ValueError(
            "no mask channels produced; give --maps/--manifest or enable --skin/--facial"
        )

    style_set = None
    style_image = None
    if args.topk is not None:
        if not args.style_image:
            raise ValueError("--topk needs --style-image plus --style-maps or --style-manifest")
        style_image = formats.read_image_rgb(args.style_image)
        style_set = _load_map_set(
            style_image, args.style_maps, args.labels, args.style_manifest, args.rescale, "style"
        )
        if style_set is None:
            raise ValueError("--topk needs --style-maps or --style-manifest")
        mask_set, style_set = masks_mod.select_top_k(mask_set, style_set, args.topk)

    if args.blur is not None:
        blurred = np.concatenate(
            [
                masks_mod.blur_mask(mask_set.channel(label)[:, :, np.newaxis], args.blur)
                for label in mask_set.labels
            ],
            axis=2,
        )
        mask_set = masks_mod.SoftMaskSet(blurred, mask_set.labels)
        if style_set is not None:
            blurred = np.concatenate(
                [
                    masks_mod.blur_mask(style_set.channel(label)[:, :, np.newaxis], args.blur)
                    for label in style_set.labels
                ],
                axis=2,
            )
            style_set = masks_mod.SoftMaskSet(blurred, style_set.labels)

    landmarks_name = None
    if landmarks is not None:
        landmarks_name = "landmarks.txt"
        os.makedirs(args.out_dir, exist_ok=True)
        formats.write_landmarks(os.path.join(args.out_dir, landmarks_name), landmarks)
    manifest_path = formats.save_mask_set(
        args.out_dir, mask_set, image, None, landmarks_path=landmarks_name
    )
    print(f"wrote {manifest_path} with labels: {', '.join(mask_set.labels)}")
    if style_set is not None:
        style_manifest = formats.save_mask_set(
            args.out_dir,
            style_set,
            style_image,
            None,
            prefix="style_",
            manifest_name="style_manifest.ini",
        )
        print(f"wrote {style_manifest} with labels: {', '.join(style_set.labels)}")

    if args.composite:
        comp = masks_mod.composite_visualization(mask_set)
        comp_path = os.path.join(args.out_dir, "composite.png")
        formats.write_image_rgb(comp_path, comp)
        print(f"wrote {comp_path}")
    return 0


def cmd_weights(args) -> int:
    if args.weights_command == "gen-toy":
        net = features_mod.build_toy_network(args.seed)
        formats.write_network(args.out, net)
        print(f"wrote toy network (seed {args.seed}) to {args.out}")
        return 0
    # inspect
    rows = formats.layer_checksums(args.file)
    net = formats.read_network(args.file)
    print(f"{args.file}: {len(rows)} layers")
    print(f"{'name':<12} {'kind':<5} {'detail':<42} crc32")
    for name, kind, detail, crc in rows:
        crc_text = f"0x{crc:08x}" if kind != "relu" else "-"
        print(f"{name:<12} {kind:<5} {detail:<42} {crc_text}")
    if net.input_offsets is None:
        print("input offsets: none")
    else:
        offs = ", ".join(f"{v:.6g}" for v in net.input_offsets)
        print(f"input offsets: ({offs})")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
