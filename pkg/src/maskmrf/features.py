"""Configurable convolutional feature extractor.

A FeatureNetwork is an ordered stack of conv / relu / pool layers with
weights loaded from a file (no training here). It supports a forward pass
that captures named post-activation maps and the matching vector-Jacobian
pass that carries energy gradients from captured layers back to the input
pixels.

Two builtin layouts ship with the package: a small deterministic "toy"
network for desk-scale runs, and a "vggish" layout with the familiar
conv/pool prefix shape up to relu4_1 for file-loaded pretrained weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from maskmrf import tensor

KIND_CONV = "conv"
KIND_RELU = "relu"
KIND_POOL = "pool"
POOL_MAX = "max"
POOL_AVERAGE = "average"


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a feature network.

    kind is one of "conv", "relu", "pool". Conv layers use in_channels,
    out_channels, kernel_size, stride, padding; pool layers use window,
    stride, mode. Unused fields stay at their zero defaults.
    """

    kind: str
    name: str
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    window: int = 0
    mode: str = POOL_MAX

    @staticmethod
    def conv(name: str, in_channels: int, out_channels: int, kernel_size: int = 3) -> "LayerSpec":
        return LayerSpec(
            kind=KIND_CONV,
            name=name,
            in_channels=in_channels,
            out_channels=out_channels,
            kernel_size=kernel_size,
            stride=1,
            padding=(kernel_size - 1) // 2,
        )

    @staticmethod
    def relu(name: str) -> "LayerSpec":
        return LayerSpec(kind=KIND_RELU, name=name)

    @staticmethod
    def pool(name: str, window: int = 2, mode: str = POOL_MAX) -> "LayerSpec":
        return LayerSpec(kind=KIND_POOL, name=name, window=window, stride=window, mode=mode)

    def validate(self) -> None:
        if self.kind not in (KIND_CONV, KIND_RELU, KIND_POOL):
            raise ValueError(f"unknown layer kind {self.kind!r} for layer {self.name!r}")
        if not self.name:
            raise ValueError("layer name must be non-empty")
        if self.kind == KIND_CONV:
            if self.kernel_size < 1 or self.kernel_size % 2 == 0:
                raise ValueError(f"conv {self.name!r}: kernel_size must be odd and >= 1")
            if self.stride != 1:
                raise ValueError(f"conv {self.name!r}: only stride 1 is supported")
            if self.padding != (self.kernel_size - 1) // 2:
                raise ValueError(f"conv {self.name!r}: padding must equal (kernel_size-1)/2")
            if self.in_channels < 1 or self.out_channels < 1:
                raise ValueError(f"conv {self.name!r}: channel counts must be >= 1")
        elif self.kind == KIND_POOL:
            if self.window < 1:
                raise ValueError(f"pool {self.name!r}: window must be >= 1")
            if self.stride != self.window:
                raise ValueError(f"pool {self.name!r}: stride must equal window")
            if self.mode not in (POOL_MAX, POOL_AVERAGE):
                raise ValueError(f"pool {self.name!r}: mode must be max or average")


class FeatureNetwork:
    """Immutable conv/relu/pool stack with per-conv-layer weights.

    weights maps conv layer name -> (kernel, bias) with kernel shaped
    (out_channels, in_channels, k, k) and bias shaped (out_channels,).
    input_offsets, when given, holds 3 per-channel values subtracted from
    the input image before the first layer.
    """

    def __init__(self, layers, weights, input_offsets=None):
        self.layers = tuple(layers)
        if not self.layers:
            raise ValueError("network must have at least one layer")
        names = [spec.name for spec in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        current = None
        first_conv = True
        for spec in self.layers:
            spec.validate()
            if spec.kind != KIND_CONV:
                continue
            if first_conv:
                if spec.in_channels != 3:
                    raise ValueError(
                        f"conv {spec.name!r}: first conv must take 3 input channels, "
                        f"got {spec.in_channels}"
                    )
                first_conv = False
            elif current is not None and spec.in_channels != current:
                raise ValueError(
                    f"conv {spec.name!r}: expects {spec.in_channels} input channels "
                    f"but receives {current}"
                )
            current = spec.out_channels

        self.weights = {}
        for spec in self.layers:
            if spec.kind != KIND_CONV:
                continue
            if spec.name not in weights:
                raise ValueError(f"missing weights for conv layer {spec.name!r}")
            kernel, bias = weights[spec.name]
            kernel = np.asarray(kernel, dtype=tensor.DTYPE)
            bias = np.asarray(bias, dtype=tensor.DTYPE)
            want = (spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size)
            if kernel.shape != want:
                raise ValueError(
                    f"conv {spec.name!r}: kernel shape {kernel.shape} does not match "
                    f"declared {want}"
                )
            if bias.shape != (spec.out_channels,):
                raise ValueError(
                    f"conv {spec.name!r}: bias shape {bias.shape} does not match "
                    f"({spec.out_channels},)"
                )
            if not (np.all(np.isfinite(kernel)) and np.all(np.isfinite(bias))):
                raise ValueError(f"conv {spec.name!r}: weights contain non-finite values")
            self.weights[spec.name] = (kernel, bias)

        if input_offsets is None:
            self.input_offsets = None
        else:
            offs = np.asarray(input_offsets, dtype=tensor.DTYPE)
            if offs.shape != (3,):
                raise ValueError(f"input_offsets must have 3 values, got shape {offs.shape}")
            self.input_offsets = offs

    def layer_names(self):
        return tuple(spec.name for spec in self.layers)

    def spec(self, name: str) -> LayerSpec:
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def spatial_size_at(self, name: str, height: int, width: int):
        """Spatial size of the named layer's output for a given input size."""
        h, w = int(height), int(width)
        for spec in self.layers:
            if spec.kind == KIND_POOL:
                if h < spec.window or w < spec.window:
                    raise ValueError(
                        f"pool {spec.name!r}: input {h}x{w} smaller than window {spec.window}"
                    )
                h //= spec.window
                w //= spec.window
            if spec.name == name:
                return h, w
        raise ValueError(f"unknown layer {name!r}; valid names: {', '.join(self.layer_names())}")


def _conv_forward(x, kernel, bias, padding):
    h, w, _ = x.shape
    k = kernel.shape[2]
    if padding:
        x = np.pad(x, ((padding, padding), (padding, padding), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(0, 1))
    cols = windows.reshape(h * w, -1)
    out = cols @ kernel.reshape(kernel.shape[0], -1).T + bias
    return out.reshape(h, w, kernel.shape[0])


def _conv_backward(grad_out, kernel, padding, in_channels):
    h, w, _ = grad_out.shape
    k = kernel.shape[2]
    cols = grad_out.reshape(h * w, -1) @ kernel.reshape(kernel.shape[0], -1)
    cols = cols.reshape(h, w, in_channels, k, k)
    gpad = np.zeros((h + 2 * padding, w + 2 * padding, in_channels), dtype=tensor.DTYPE)
    for i in range(k):
        for j in range(k):
            gpad[i : i + h, j : j + w] += cols[:, :, :, i, j]
    if padding:
        return gpad[padding : padding + h, padding : padding + w]
    return gpad


def _pool_windows(x, window):
    h, w, c = x.shape
    ho, wo = h // window, w // window
    if ho < 1 or wo < 1:
        raise ValueError(f"pool input {h}x{w} smaller than window {window}")
    cropped = x[: ho * window, : wo * window]
    r = cropped.reshape(ho, window, wo, window, c)
    # flat window axis in row-major scan order so argmax ties pick the
    # first-encountered position
    return r.transpose(0, 2, 4, 1, 3).reshape(ho, wo, c, window * window)


def _pool_forward(x, window, mode):
    r = _pool_windows(x, window)
    if mode == POOL_MAX:
        return r.max(axis=3)
    return r.mean(axis=3)


def _pool_backward(grad_out, x, window, mode):
    h, w, c = x.shape
    ho, wo, _ = grad_out.shape
    if mode == POOL_MAX:
        r = _pool_windows(x, window)
        idx = r.argmax(axis=3)
        g = np.zeros_like(r)
        np.put_along_axis(g, idx[..., np.newaxis], grad_out[..., np.newaxis], axis=3)
    else:
        g = np.broadcast_to(
            (grad_out / (window * window))[..., np.newaxis], (ho, wo, c, window * window)
        )
    g = g.reshape(ho, wo, c, window, window).transpose(0, 3, 1, 4, 2)
    full = np.zeros((h, w, c), dtype=tensor.DTYPE)
    full[: ho * window, : wo * window] = g.reshape(ho * window, wo * window, c)
    return full


def _run_layers(net: FeatureNetwork, image):
    """Forward pass; returns the list of activations entering each layer
    plus the final output (index i is the input of layer i)."""
    x = tensor.as_tensor(image)
    if net.input_offsets is not None:
        x = x - net.input_offsets
    acts = [x]
    for spec in net.layers:
        if spec.kind == KIND_CONV:
            if x.shape[2] != spec.in_channels:
                raise ValueError(
                    f"conv {spec.name!r}: expected {spec.in_channels} input channels, "
                    f"got {x.shape[2]}"
                )
            kernel, bias = net.weights[spec.name]
            x = _conv_forward(x, kernel, bias, spec.padding)
        elif spec.kind == KIND_RELU:
            x = np.maximum(x, 0.0)
        else:
            x = _pool_forward(x, spec.window, spec.mode)
        acts.append(x)
    return acts


def _check_names(net: FeatureNetwork, names):
    valid = net.layer_names()
    unknown = [n for n in names if n not in valid]
    if unknown:
        raise ValueError(
            f"unknown layer name(s) {', '.join(sorted(unknown))}; "
            f"valid names: {', '.join(valid)}"
        )


def forward(net: FeatureNetwork, image, capture) -> dict:
    """Run the network on a 3-channel image, returning {name: activation}
    for every captured layer name."""
    capture = set(capture)
    _check_names(net, capture)
    acts = _run_layers(net, image)
    pyramid = {}
    for i, spec in enumerate(net.layers):
        if spec.name in capture:
            pyramid[spec.name] = acts[i + 1]
    return pyramid


def backward_to_input(net: FeatureNetwork, image, grads: dict):
    """Gradient of E = sum over layers of <grads[name], activation[name]>
    with respect to the input image.

    Walks the stack in reverse, injecting each cotangent where its layer's
    output appears. Relu gates by activation sign; max-pool routes to the
    argmax position (first index on ties); average-pool distributes
    uniformly.
    """
    _check_names(net, grads.keys())
    acts = _run_layers(net, image)
    for name, g in grads.items():
        idx = net.layer_names().index(name)
        if np.shape(g) != acts[idx + 1].shape:
            raise ValueError(
                f"gradient for layer {name!r} has shape {np.shape(g)}, "
                f"expected {acts[idx + 1].shape}"
            )
    g = np.zeros_like(acts[-1])
    for i in range(len(net.layers) - 1, -1, -1):
        spec = net.layers[i]
        if spec.name in grads:
            g = g + np.asarray(grads[spec.name], dtype=tensor.DTYPE)
        if spec.kind == KIND_CONV:
            kernel, _ = net.weights[spec.name]
            g = _conv_backward(g, kernel, spec.padding, spec.in_channels)
        elif spec.kind == KIND_RELU:
            g = g * (acts[i] > 0.0)
        else:
            g = _pool_backward(g, acts[i], spec.window, spec.mode)
    return g


def toy_layer_specs():
    """Small deterministic stack: conv3x3(3->8), relu, pool2, conv3x3(8->16), relu."""
    return (
        LayerSpec.conv("conv1_1", 3, 8),
        LayerSpec.relu("relu1_1"),
        LayerSpec.pool("pool1", 2, POOL_MAX),
        LayerSpec.conv("conv2_1", 8, 16),
        LayerSpec.relu("relu2_1"),
    )


def vggish_layer_specs():
    """The conv/pool prefix shape of the classic 19-layer stack up to relu4_1."""
    specs = []
    plan = [
        (1, 2, 3, 64),
        (2, 2, 64, 128),
        (3, 4, 128, 256),
        (4, 1, 256, 512),
    ]
    for block, n_convs, c_in, c_out in plan:
        for i in range(1, n_convs + 1):
            specs.append(LayerSpec.conv(f"conv{block}_{i}", c_in if i == 1 else c_out, c_out))
            specs.append(LayerSpec.relu(f"relu{block}_{i}"))
        if block < 4:
            specs.append(LayerSpec.pool(f"pool{block}", 2, POOL_MAX))
    return tuple(specs)


def build_toy_network(seed: int = 0) -> FeatureNetwork:
    """Toy network with seed-generated kernels (scaled by fan-in) and zero
    biases. The committed weight file is this network at seed 0. Values
    are quantized to float32 so the in-memory network matches its file
    representation bit for bit."""
    rng = np.random.default_rng(seed)
    specs = toy_layer_specs()
    weights = {}
    for spec in specs:
        if spec.kind != KIND_CONV:
            continue
        fan_in = spec.in_channels * spec.kernel_size * spec.kernel_size
        kernel = rng.normal(
            0.0,
            np.sqrt(2.0 / fan_in),
            (spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size),
        ).astype(np.float32)
        bias = np.zeros(spec.out_channels, dtype=np.float32)
        weights[spec.name] = (kernel, bias)
    return FeatureNetwork(specs, weights)


def load_weights(path) -> FeatureNetwork:
    """Read a network from a .mmw weight file."""
    from maskmrf import formats

    return formats.read_network(path)


def save_weights(path, net: FeatureNetwork) -> None:
    """Write a network to a .mmw weight file."""
    from maskmrf import formats

    formats.write_network(path, net)


def builtin_toy_path():
    """Filesystem path of the committed toy weight file."""
    import importlib.resources

    return importlib.resources.files("maskmrf") / "data" / "toy.mmw"
