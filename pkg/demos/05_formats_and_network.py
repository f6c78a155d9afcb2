"""The binary containers and the feature extractor behind the pipeline.

Round-trips the weight container and the float tensor container, prints
the layer inventory with checksums, and pushes an image through the
bundled toy network to show how the spatial pyramid of feature maps
comes out. Outputs land in demos/output/formats/.
"""

import os

import numpy as np

from maskmrf import features, formats, optimizer

OUT = os.path.join(os.path.dirname(__file__), "output", "formats")


def main():
    os.makedirs(OUT, exist_ok=True)

    print("== weight container ==")
    path = features.builtin_toy_path()
    net = features.load_weights(path)
    print(f"bundled toy network: {len(net.layer_names())} layers, "
          f"{os.path.getsize(path)} bytes on disk")
    for name, kind, detail, crc in formats.layer_checksums(path):
        print(f"  {name:<8} {kind:<5} crc 0x{crc:08x}  {detail}")

    copy_path = os.path.join(OUT, "toy_copy.mmw")
    features.save_weights(copy_path, net)
    with open(path, "rb") as f, open(copy_path, "rb") as g:
        print(f"rewrite is byte-identical: {f.read() == g.read()}")

    print("\n== forward pass ==")
    rng = np.random.default_rng(3)
    img = rng.random((32, 40, 3))
    caps = forward_all(net, img)
    for name, fmap in caps.items():
        print(f"  {name:<8} -> {fmap.shape[0]:3d} x {fmap.shape[1]:3d} x {fmap.shape[2]:3d}"
              f"   mean {fmap.mean():+.4f}")
    print("padded convolutions keep the grid; pool1 halves it")

    print("\n== tensor container ==")
    fmap = caps["relu2_1"]
    tpath = os.path.join(OUT, "relu2_1.mmt")
    formats.write_tensor(tpath, fmap)
    back = formats.read_tensor(tpath)
    print(f"relu2_1 saved and reloaded: shape {back.shape}, "
          f"max abs diff {np.max(np.abs(back - fmap.astype(np.float32))):g} "
          f"(float32 storage)")

    print("\n== run configuration ==")
    cfg = optimizer.SynthesisConfig(beta=25.0, outer_iterations=6)
    cpath = os.path.join(OUT, "run.ini")
    formats.write_config(cpath, cfg)
    print(f"config written to {os.path.relpath(cpath)}; round-trip equal: "
          f"{formats.read_config(cpath) == cfg}")


def forward_all(net, img):
    return features.forward(net, img, capture=tuple(net.layer_names()))


if __name__ == "__main__":
    main()
