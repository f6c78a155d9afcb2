"""File formats: weight files, tensor files, PNGs, manifests, landmarks,
config files, and the run-trace CSV.

Binary layouts are little-endian throughout. Weight files (.mmw): magic
"MMRF", version u32, layer count u32, then per layer a kind byte
(0 conv, 1 relu, 2 pool), a u16-length UTF-8 name, a kind-specific header
(conv: in, out, k, stride, pad as u32; pool: window, stride, mode as u32)
and for conv the kernel then bias as float32; an optional trailing block
of 3 float32 per-channel input offsets. Tensor files (.mmt): magic
"MMT1", then H, W, C as u32 and the row-major float32 payload.

Text formats: mask manifests and synthesis configs are INI-style
`key = value` files with `#` comments; landmark files hold 68 "x y" lines
followed by four named index-range lines.
"""

from __future__ import annotations

import configparser
import csv
import io
import os
import struct
import zlib
from dataclasses import dataclass, fields as dataclass_fields

import numpy as np
from PIL import Image

from maskmrf import tensor
from maskmrf.features import FeatureNetwork, LayerSpec, KIND_CONV, KIND_RELU, KIND_POOL
from maskmrf.masks import LandmarkSet, SoftMaskSet
from maskmrf.optimizer import SynthesisConfig

WEIGHT_MAGIC = b"MMRF"
TENSOR_MAGIC = b"MMT1"
WEIGHT_VERSION = 1

_KIND_CODES = {KIND_CONV: 0, KIND_RELU: 1, KIND_POOL: 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}
_POOL_CODES = {"max": 0, "average": 1}
_POOL_NAMES = {v: k for k, v in _POOL_CODES.items()}


class FormatError(ValueError):
    """A file violates its format contract."""

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        parts = []
        if path is not None:
            parts.append(f"{path}: ")
        parts.append(message)
        if offset is not None:
            parts.append(f" (at byte offset {offset})")
        super().__init__("".join(parts))


class BadMagicError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class ShapeMismatchError(FormatError):
    pass


class _Reader:
    def __init__(self, data: bytes, path=None):
        self.data = data
        self.pos = 0
        self.path = path

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int, what: str) -> bytes:
        if self.remaining() < n:
            raise TruncatedFileError(
                f"{what} needs {n} bytes, file has {self.remaining()} left",
                path=self.path,
                offset=self.pos,
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f32_array(self, count: int, what: str) -> np.ndarray:
        need = 4 * count
        if self.remaining() < need:
            raise ShapeMismatchError(
                f"{what} declares {count} float32 values ({need} bytes) but only "
                f"{self.remaining()} bytes remain",
                path=self.path,
                offset=self.pos,
            )
        raw = self.take(need, what)
        return np.frombuffer(raw, dtype="<f4").astype(tensor.DTYPE)


def _f32_bytes(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


# ---------------------------------------------------------------- weights


def write_network(path, net: FeatureNetwork) -> None:
    buf = io.BytesIO()
    buf.write(WEIGHT_MAGIC)
    buf.write(struct.pack("<I", WEIGHT_VERSION))
    buf.write(struct.pack("<I", len(net.layers)))
    for spec in net.layers:
        buf.write(struct.pack("<B", _KIND_CODES[spec.kind]))
        name = spec.name.encode("utf-8")
        buf.write(struct.pack("<H", len(name)))
        buf.write(name)
        if spec.kind == KIND_CONV:
            buf.write(
                struct.pack(
                    "<5I",
                    spec.in_channels,
                    spec.out_channels,
                    spec.kernel_size,
                    spec.stride,
                    spec.padding,
                )
            )
            kernel, bias = net.weights[spec.name]
            buf.write(_f32_bytes(kernel))
            buf.write(_f32_bytes(bias))
        elif spec.kind == KIND_POOL:
            buf.write(struct.pack("<3I", spec.window, spec.stride, _POOL_CODES[spec.mode]))
    if net.input_offsets is not None:
        buf.write(_f32_bytes(net.input_offsets))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_network(path) -> FeatureNetwork:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path=os.fspath(path))
    magic = r.take(4, "magic")
    if magic != WEIGHT_MAGIC:
        raise BadMagicError(
            f"bad magic {magic!r}, expected {WEIGHT_MAGIC!r}", path=r.path, offset=0
        )
    version = r.u32("format version")
    if version != WEIGHT_VERSION:
        raise FormatError(f"unsupported format version {version}", path=r.path, offset=4)
    n_layers = r.u32("layer count")
    specs = []
    weights = {}
    for i in range(n_layers):
        kind_code = r.u8(f"layer {i} kind")
        if kind_code not in _KIND_NAMES:
            raise FormatError(
                f"layer {i}: unknown kind code {kind_code}", path=r.path, offset=r.pos - 1
            )
        kind = _KIND_NAMES[kind_code]
        name_len = r.u16(f"layer {i} name length")
        name = r.take(name_len, f"layer {i} name").decode("utf-8")
        if kind == KIND_CONV:
            c_in = r.u32(f"conv {name!r} in_channels")
            c_out = r.u32(f"conv {name!r} out_channels")
            k = r.u32(f"conv {name!r} kernel_size")
            stride = r.u32(f"conv {name!r} stride")
            pad = r.u32(f"conv {name!r} padding")
            spec = LayerSpec(
                kind=KIND_CONV,
                name=name,
                in_channels=c_in,
                out_channels=c_out,
                kernel_size=k,
                stride=stride,
                padding=pad,
            )
            kernel = r.f32_array(c_out * c_in * k * k, f"conv {name!r} kernel").reshape(
                c_out, c_in, k, k
            )
            bias = r.f32_array(c_out, f"conv {name!r} bias")
            weights[name] = (kernel, bias)
        elif kind == KIND_POOL:
            window = r.u32(f"pool {name!r} window")
            stride = r.u32(f"pool {name!r} stride")
            mode_code = r.u32(f"pool {name!r} mode")
            if mode_code not in _POOL_NAMES:
                raise FormatError(
                    f"pool {name!r}: unknown mode code {mode_code}",
                    path=r.path,
                    offset=r.pos - 4,
                )
            spec = LayerSpec(
                kind=KIND_POOL, name=name, window=window, stride=stride, mode=_POOL_NAMES[mode_code]
            )
        else:
            spec = LayerSpec(kind=KIND_RELU, name=name)
        specs.append(spec)
    offsets = None
    if r.remaining() == 12:
        offsets = r.f32_array(3, "input offsets")
    elif r.remaining() != 0:
        raise FormatError(
            f"{r.remaining()} unexpected trailing bytes", path=r.path, offset=r.pos
        )
    return FeatureNetwork(specs, weights, input_offsets=offsets)


def layer_checksums(path):
    """(name, kind, detail, crc32) per layer, for inspection output."""
    net = read_network(path)
    out = []
    for spec in net.layers:
        if spec.kind == KIND_CONV:
            kernel, bias = net.weights[spec.name]
            crc = zlib.crc32(_f32_bytes(kernel) + _f32_bytes(bias))
            detail = (
                f"in={spec.in_channels} out={spec.out_channels} "
                f"k={spec.kernel_size} stride={spec.stride} pad={spec.padding}"
            )
        elif spec.kind == KIND_POOL:
            crc = zlib.crc32(struct.pack("<3I", spec.window, spec.stride, _POOL_CODES[spec.mode]))
            detail = f"window={spec.window} stride={spec.stride} mode={spec.mode}"
        else:
            crc = 0
            detail = ""
        out.append((spec.name, spec.kind, detail, crc))
    return out


# ----------------------------------------------------------------- tensors


def write_tensor(path, t) -> None:
    t = tensor.as_tensor(t)
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<3I", t.shape[0], t.shape[1], t.shape[2]))
        fh.write(_f32_bytes(t))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path=os.fspath(path))
    magic = r.take(4, "magic")
    if magic != TENSOR_MAGIC:
        raise BadMagicError(
            f"bad magic {magic!r}, expected {TENSOR_MAGIC!r}", path=r.path, offset=0
        )
    h = r.u32("height")
    w = r.u32("width")
    c = r.u32("channels")
    if min(h, w, c) < 1:
        raise FormatError(f"dimensions must be >= 1, got {h}x{w}x{c}", path=r.path, offset=4)
    payload = r.f32_array(h * w * c, f"{h}x{w}x{c} tensor payload")
    if r.remaining():
        raise FormatError(
            f"{r.remaining()} unexpected trailing bytes", path=r.path, offset=r.pos
        )
    return payload.reshape(h, w, c)


# ------------------------------------------------------------------ images


def read_image_rgb(path) -> np.ndarray:
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        arr = np.asarray(rgb, dtype=tensor.DTYPE) / 255.0
    return arr


def _quantize(t) -> np.ndarray:
    t = np.clip(tensor.as_tensor(t), 0.0, 1.0)
    return np.floor(t * 255.0 + 0.5).astype(np.uint8)  # round half up


def write_image_rgb(path, t) -> None:
    q = _quantize(t)
    if q.shape[2] != 3:
        raise ValueError(f"expected 3 channels, got {q.shape[2]}")
    Image.fromarray(q, mode="RGB").save(path, format="PNG")


def read_mask_png(path) -> np.ndarray:
    with Image.open(path) as img:
        gray = img.convert("L")
        arr = np.asarray(gray, dtype=tensor.DTYPE) / 255.0
    return arr[:, :, np.newaxis]


def write_mask_png(path, mask) -> None:
    q = _quantize(mask)
    if q.shape[2] != 1:
        raise ValueError(f"expected 1 channel, got {q.shape[2]}")
    Image.fromarray(q[:, :, 0], mode="L").save(path, format="PNG")


# --------------------------------------------------------------- manifests


@dataclass(frozen=True)
class MaskManifest:
    """Labels with their grayscale mask files, the target image, and an
    optional landmark file. Paths are stored as written; resolve()
    interprets them relative to the manifest's directory."""

    entries: tuple  # ((label, path), ...)
    image: str
    landmarks: str | None = None

    def labels(self):
        return tuple(label for label, _ in self.entries)


def write_manifest(path, manifest: MaskManifest) -> None:
    lines = ["# mask manifest", "[masks]"]
    for label, mask_path in manifest.entries:
        lines.append(f"{label} = {mask_path}")
    lines.append("")
    lines.append("[target]")
    lines.append(f"image = {manifest.image}")
    if manifest.landmarks is not None:
        lines.append(f"landmarks = {manifest.landmarks}")
    lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))


def read_manifest(path) -> MaskManifest:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # labels are case-sensitive
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise FormatError(f"manifest parse error: {exc}", path=os.fspath(path)) from exc
    if not parser.has_section("masks") or not parser.options("masks"):
        raise FormatError("manifest has no [masks] entries", path=os.fspath(path))
    if not parser.has_section("target") or not parser.has_option("target", "image"):
        raise FormatError("manifest has no [target] image", path=os.fspath(path))
    entries = tuple((label, parser.get("masks", label)) for label in parser.options("masks"))
    landmarks = parser.get("target", "landmarks", fallback=None)
    return MaskManifest(entries=entries, image=parser.get("target", "image"), landmarks=landmarks)


def _resolve(base_dir, p):
    return p if os.path.isabs(p) else os.path.join(base_dir, p)


def load_mask_set(manifest_path):
    """Read a manifest and its mask PNGs.

    Returns (SoftMaskSet, image array, manifest). Every mask must match
    the target image's dimensions; a mismatch names the offending label.
    """
    manifest = read_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    image = read_image_rgb(_resolve(base, manifest.image))
    channels = []
    for label, mask_path in manifest.entries:
        m = read_mask_png(_resolve(base, mask_path))
        if m.shape[:2] != image.shape[:2]:
            raise FormatError(
                f"mask {label!r} is {m.shape[0]}x{m.shape[1]} but the target "
                f"image is {image.shape[0]}x{image.shape[1]}",
                path=os.fspath(manifest_path),
            )
        channels.append(m[:, :, 0])
    mask_set = SoftMaskSet(np.stack(channels, axis=2), manifest.labels())
    return mask_set, image, manifest


def save_mask_set(out_dir, mask_set: SoftMaskSet, image, image_path,
                  landmarks_path=None, prefix="", manifest_name="manifest.ini"):
    """Write per-label PNGs plus a manifest into out_dir; returns the
    manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for label in mask_set.labels:
        fname = f"{prefix}{label}.png"
        write_mask_png(os.path.join(out_dir, fname), mask_set.channel(label)[:, :, np.newaxis])
        entries.append((label, fname))
    if image is not None:
        image_path = f"{prefix}target.png"
        write_image_rgb(os.path.join(out_dir, image_path), image)
    manifest = MaskManifest(entries=tuple(entries), image=image_path, landmarks=landmarks_path)
    manifest_path = os.path.join(out_dir, manifest_name)
    write_manifest(manifest_path, manifest)
    return manifest_path


# --------------------------------------------------------------- landmarks

_RANGE_NAMES = ("eyes", "nose", "inner_mouth", "outer_mouth")


def write_landmarks(path, landmarks: LandmarkSet) -> None:
    lines = [f"{x:.3f} {y:.3f}" for x, y in landmarks.points]
    for name in _RANGE_NAMES:
        lo, hi = getattr(landmarks, name)
        lines.append(f"{name} {lo} {hi}")
    lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))


def read_landmarks(path) -> LandmarkSet:
    with open(path, "r", encoding="utf-8") as fh:
        raw = [line.strip() for line in fh]
    lines = [line for line in raw if line and not line.startswith("#")]
    if len(lines) < 68 + len(_RANGE_NAMES):
        raise FormatError(
            f"landmark file needs 68 points plus {len(_RANGE_NAMES)} range lines, "
            f"got {len(lines)} lines",
            path=os.fspath(path),
        )
    points = []
    for i, line in enumerate(lines[:68]):
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"line {i + 1}: expected 'x y', got {line!r}", path=os.fspath(path))
        try:
            points.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise FormatError(f"line {i + 1}: bad coordinate in {line!r}", path=os.fspath(path)) from exc
    ranges = {}
    for j, line in enumerate(lines[68:]):
        parts = line.split()
        if len(parts) != 3 or parts[0] not in _RANGE_NAMES:
            raise FormatError(
                f"line {68 + j + 1}: expected '<region> lo hi' with region in "
                f"{_RANGE_NAMES}, got {line!r}",
                path=os.fspath(path),
            )
        try:
            ranges[parts[0]] = (int(parts[1]), int(parts[2]))
        except ValueError as exc:
            raise FormatError(f"line {68 + j + 1}: bad index in {line!r}", path=os.fspath(path)) from exc
    missing = [n for n in _RANGE_NAMES if n not in ranges]
    if missing:
        raise FormatError(f"missing range lines for {missing}", path=os.fspath(path))
    return LandmarkSet(points=np.array(points), **ranges)


# ------------------------------------------------------------------ config


def write_config(path, cfg: SynthesisConfig) -> None:
    lines = ["# synthesis configuration", "[synthesis]"]
    for f in dataclass_fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))


def read_config(path) -> SynthesisConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise FormatError(f"config parse error: {exc}", path=os.fspath(path)) from exc
    if not parser.has_section("synthesis"):
        raise FormatError("config has no [synthesis] section", path=os.fspath(path))
    kwargs = {}
    valid = {f.name: f for f in dataclass_fields(SynthesisConfig)}
    defaults = SynthesisConfig()
    for key in parser.options("synthesis"):
        if key not in valid:
            raise FormatError(f"unknown config key {key!r}", path=os.fspath(path))
        raw = parser.get("synthesis", key)
        current = getattr(defaults, key)
        try:
            if isinstance(current, tuple):
                parts = [p for p in raw.split(",") if p != ""]
                if key in ("style_layers", "content_layers"):
                    kwargs[key] = tuple(p.strip() for p in parts)
                else:
                    kwargs[key] = tuple(float(p) for p in parts)
            elif isinstance(current, bool):
                kwargs[key] = raw.strip().lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                kwargs[key] = int(raw)
            elif isinstance(current, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw
        except ValueError as exc:
            raise FormatError(f"bad value for {key!r}: {raw!r}", path=os.fspath(path)) from exc
    cfg = SynthesisConfig(**kwargs)
    cfg.validate()
    return cfg


# ------------------------------------------------------------------- trace

TRACE_COLUMNS = ("level", "iteration", "e_total", "e_style", "e_content", "elapsed_seconds")


def write_trace_csv(path, rows, cfg: SynthesisConfig | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if cfg is not None:
            for f in dataclass_fields(cfg):
                value = getattr(cfg, f.name)
                if isinstance(value, tuple):
                    value = ",".join(str(v) for v in value)
                fh.write(f"# {f.name} = {value}\n")
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.level,
                    row.iteration,
                    f"{row.e_total:.17g}",
                    f"{row.e_style:.17g}",
                    f"{row.e_content:.17g}",
                    f"{row.elapsed_seconds:.6f}",
                ]
            )


def read_trace_csv(path):
    """Rows as dicts (strings preserved); comment lines skipped."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    return list(reader)
