"""Convolutional network: same-padded 3x3 convs, ceil-mode 2x2 max pooling,
ReLU, flatten, and a linear dense head, composable into depth-1..4 presets.

All layers run batched internally ([B, ...] leading axis); the
single-sample API simply wraps a batch of one. Forward passes return an
explicit cache so concurrent evaluations never share mutable state.
"""

from __future__ import annotations

import math

import numpy as np

from .numerics import Rng, Tensor


def _glorot_uniform(shape, fan_in, fan_out, rng: Rng) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


class ConvLayer:
    """3x3 same-padded stride-1 convolution over [in_ch, H, W] stacks."""

    def __init__(self, in_ch: int, out_ch: int, rng: Rng = None):
        if in_ch < 1 or out_ch < 1:
            raise ValueError("channel counts must be >= 1")
        self.in_ch = in_ch
        self.out_ch = out_ch
        if rng is None:
            self.weights = np.zeros((out_ch, in_ch, 3, 3))
        else:
            self.weights = _glorot_uniform((out_ch, in_ch, 3, 3),
                                           in_ch * 9, out_ch * 9, rng)
        self.bias = np.zeros(out_ch)

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_ch:
            raise ValueError(f"conv expects {self.in_ch} channels, got {c}")
        return (self.out_ch, h, w)

    def forward(self, x):
        b, c, h, w = x.shape
        if c != self.in_ch:
            raise ValueError(f"conv expects {self.in_ch} channels, got {c}")
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
        # [B, C, H, W, 3, 3] -> [B, C*9, H*W]
        cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(b, c * 9, h * w)
        w2 = self.weights.reshape(self.out_ch, c * 9)
        y = (w2 @ cols) + self.bias[None, :, None]
        return y.reshape(b, self.out_ch, h, w), (cols, (h, w))

    def backward(self, dout, cache):
        cols, (h, w) = cache
        b = dout.shape[0]
        do2 = dout.reshape(b, self.out_ch, h * w)
        w2 = self.weights.reshape(self.out_ch, self.in_ch * 9)
        dw = np.matmul(do2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(self.weights.shape)
        db = do2.sum(axis=(0, 2))
        dcols = np.matmul(w2.T, do2)
        dcols = dcols.reshape(b, self.in_ch, 3, 3, h, w)
        dxp = np.zeros((b, self.in_ch, h + 2, w + 2))
        for e in range(3):
            for f in range(3):
                dxp[:, :, e:e + h, f:f + w] += dcols[:, :, e, f]
        return dxp[:, :, 1:-1, 1:-1], {"weights": dw, "bias": db}


class PoolLayer:
    """2x2 stride-2 max pooling, ceil mode: odd borders pool partial windows.

    The argmax map records one winning input cell per output cell; ties go
    to the smallest row-major index so the backward pass is deterministic.
    """

    def out_shape(self, in_shape):
        c, h, w = in_shape
        return (c, (h + 1) // 2, (w + 1) // 2)

    def forward(self, x):
        b, c, h, w = x.shape
        ho, wo = (h + 1) // 2, (w + 1) // 2
        xp = np.full((b, c, ho * 2, wo * 2), -np.inf)
        xp[:, :, :h, :w] = x
        # windows in row-major order: (0,0),(0,1),(1,0),(1,1)
        wins = xp.reshape(b, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, 4)
        arg = wins.argmax(axis=-1)
        y = np.take_along_axis(wins, arg[..., None], axis=-1)[..., 0]
        return y, (arg, (h, w))

    def backward(self, dout, cache):
        arg, (h, w) = cache
        b, c, ho, wo = dout.shape
        dx = np.zeros((b, c, h, w))
        bi, ci, oh, ow = np.indices((b, c, ho, wo))
        r = oh * 2 + arg // 2
        s = ow * 2 + arg % 2
        dx[bi, ci, r, s] = dout
        return dx, {}


class ReluLayer:
    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, dout, mask):
        return dout * mask, {}


class FlattenLayer:
    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, in_shape):
        return dout.reshape(in_shape), {}


class DenseLayer:
    """Affine map out = W x + b with no activation."""

    def __init__(self, in_dim: int, out_dim: int, rng: Rng = None):
        if in_dim < 1 or out_dim < 1:
            raise ValueError("dense dimensions must be >= 1")
        self.in_dim = in_dim
        self.out_dim = out_dim
        if rng is None:
            self.weights = np.zeros((out_dim, in_dim))
        else:
            self.weights = _glorot_uniform((out_dim, in_dim), in_dim, out_dim, rng)
        self.bias = np.zeros(out_dim)

    def out_shape(self, in_shape):
        if in_shape != (self.in_dim,):
            raise ValueError(f"dense expects input of {self.in_dim}, got {in_shape}")
        return (self.out_dim,)

    def forward(self, x):
        if x.shape[1] != self.in_dim:
            raise ValueError(f"dense expects {self.in_dim} inputs, got {x.shape[1]}")
        return x @ self.weights.T + self.bias, x

    def backward(self, dout, x):
        dw = dout.T @ x
        db = dout.sum(axis=0)
        dx = dout @ self.weights
        return dx, {"weights": dw, "bias": db}


PARAM_LAYERS = (ConvLayer, DenseLayer)


class Network:
    """Ordered layer stack with shape chaining checked at construction."""

    def __init__(self, layers, input_shape, meta=None):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.meta = dict(meta or {})
        shape = self.input_shape
        self.shape_chain = [shape]
        for layer in self.layers:
            shape = layer.out_shape(shape)
            self.shape_chain.append(shape)
        self.output_dim = shape[0] if len(shape) == 1 else None
        if not isinstance(self.layers[-1], DenseLayer):
            raise ValueError("network must end in a dense layer")

    def parameters(self):
        """[(layer index, name, array)] for every trainable tensor."""
        out = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, PARAM_LAYERS):
                out.append((i, "weights", layer.weights))
                out.append((i, "bias", layer.bias))
        return out

    def get_state(self):
        return [(i, name, arr.copy()) for i, name, arr in self.parameters()]

    def set_state(self, state):
        for i, name, arr in state:
            getattr(self.layers[i], name)[...] = arr

    def forward_batch(self, x):
        """x: [B, *input_shape] -> (y [B, output_dim], per-layer cache list)."""
        if tuple(x.shape[1:]) != self.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} does not match "
                             f"network input {self.input_shape}")
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def forward(self, x):
        """Single sample [*input_shape] -> (y [output_dim], cache)."""
        y, caches = self.forward_batch(np.asarray(x, dtype=np.float64)[None])
        return y[0], caches

    def backward_batch(self, dout, caches):
        """dout: [B, output_dim] gradient of the loss wrt the output.

        Returns {layer index: {param name: gradient array}} summed over the
        batch (the caller owns any averaging).
        """
        if len(caches) != len(self.layers):
            raise ValueError("cache does not match network layers")
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            dout, g = self.layers[i].backward(dout, caches[i])
            if g:
                grads[i] = g
        return grads


# Channel widths per depth preset, before the desk-scale divisor.
PRESET_CHANNELS = {1: [], 2: [64], 3: [128, 64], 4: [256, 128, 64]}


def build_preset(depth: int, q: int, t_in: int, t_out: int,
                 divisor: int = 1, seed: int = 0) -> Network:
    """Standard depth presets: (conv -> relu -> pool) blocks then a dense head.

    divisor scales conv channel counts down for desk-scale runs; 1 keeps
    the full-width configuration.
    """
    if depth not in PRESET_CHANNELS:
        raise ValueError(f"invalid depth {depth}; valid depths are 1-4")
    if divisor < 1:
        raise ValueError("divisor must be >= 1")
    rng = Rng(seed)
    layers = []
    shape = (1, q, t_in)
    for width in PRESET_CHANNELS[depth]:
        out_ch = max(1, width // divisor)
        conv = ConvLayer(shape[0], out_ch, rng)
        layers += [conv, ReluLayer(), PoolLayer()]
        shape = PoolLayer().out_shape(ReluLayer().out_shape(conv.out_shape(shape)))
    layers.append(FlattenLayer())
    flat = int(np.prod(shape))
    layers.append(DenseLayer(flat, q * t_out, rng))
    meta = {"kind": "cnn", "depth": depth, "q": q, "t_in": t_in,
            "t_out": t_out, "divisor": divisor}
    return Network(layers, (1, q, t_in), meta)


def rebuild_from_meta(meta) -> Network:
    if meta.get("kind") == "cnn":
        return build_preset(meta["depth"], meta["q"], meta["t_in"],
                            meta["t_out"], meta.get("divisor", 1))
    if meta.get("kind") == "mlp":
        from .baselines import mlp_build
        return mlp_build(meta["q"], meta["t_in"], meta["t_out"],
                         meta["hidden_units"], meta.get("n_hidden", 3))
    raise ValueError(f"unknown network kind in model file: {meta.get('kind')}")


def save_network(path, net: Network, extra_meta=None):
    from .modelio import write_container
    meta = dict(net.meta)
    meta.update(extra_meta or {})
    tensors = {f"layer{i}.{name}": arr for i, name, arr in net.parameters()}
    tag = "MLP1" if meta.get("kind") == "mlp" else "TGNET1"
    write_container(path, tag, meta, tensors)


def load_network(path) -> Network:
    from .modelio import read_container
    tag, meta, tensors = read_container(path)
    if tag not in ("TGNET1", "MLP1"):
        raise ValueError(f"not a network model file (tag {tag})")
    net = rebuild_from_meta(meta)
    net.meta = meta
    for i, name, arr in net.parameters():
        arr[...] = tensors[f"layer{i}.{name}"]
    return net
