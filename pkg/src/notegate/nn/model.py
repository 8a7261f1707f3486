"""Network container, the error-detector architecture and losses."""

from __future__ import annotations

import numpy as np

from .layers import MODES, BatchNorm, Conv2D, Dense, Dropout, Flatten, LeakyReLU, ReLU

DETECTOR_INPUT = (72, 81, 3)
DETECTOR_STRIDES = ((2, 1), (2, 3), (3, 3), (3, 3), (2, 3))
DETECTOR_FILTERS = (16, 32, 64, 128, 256)
DETECTOR_MAPS = ((36, 81, 16), (18, 27, 32), (6, 9, 64), (2, 3, 128), (1, 1, 256))
EPS = 1e-7


class Network:
    """A layer sequence with its parameters and running buffers.

    Parameters live in ``self.params`` (name -> array) so optimizers,
    checkpoints and the gradient checker can address them by name.
    """

    def __init__(self, layers, input_shape, seed=0, dtype=np.float32, architecture="custom",
                 hyper=None):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.architecture = architecture
        self.hyper = dict(hyper or {})
        self.shapes = []
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
            self.shapes.append(shape)
        rng = np.random.default_rng(seed)
        self.params = {}
        self.buffers = {}
        for layer in self.layers:
            self.params.update(layer.init_params(rng, dtype))
            self.buffers.update(layer.init_buffers(dtype))
        self.dtype = np.dtype(dtype)

    @property
    def output_shape(self):
        return self.shapes[-1]

    def astype(self, dtype) -> "Network":
        """Copy of this network with parameters and buffers cast to ``dtype``."""
        clone = object.__new__(Network)
        clone.__dict__.update(self.__dict__)
        clone.layers = [_copy_layer(l) for l in self.layers]
        clone.params = {k: v.astype(dtype) for k, v in self.params.items()}
        clone.buffers = {k: v.astype(dtype) for k, v in self.buffers.items()}
        clone.dtype = np.dtype(dtype)
        return clone

    def forward(self, x, mode="eval", rng=None, trace=None, check_finite=False):
        """Run all layers. ``trace``, when a list, receives each layer's output."""
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} does not match network input "
                             f"{self.input_shape}")
        for layer in self.layers:
            x = layer.forward(x, self.params, self.buffers, mode, rng)
            if trace is not None:
                trace.append((layer.name, x))
            if check_finite and not np.all(np.isfinite(x)):
                raise FloatingPointError(f"non-finite activations after layer {layer.name}")
        return x

    def backward(self, dout) -> dict:
        grads = {}
        for layer in reversed(self.layers):
            dout, g = layer.backward(dout, self.params)
            grads.update(g)
        return grads

    def first_nonfinite_layer(self, x, mode="eval", rng=None):
        trace = []
        self.forward(x, mode, rng, trace=trace)
        for name, out in trace:
            if not np.all(np.isfinite(out)):
                return name
        return None


def _copy_layer(layer):
    clone = object.__new__(type(layer))
    clone.__dict__.update({k: v for k, v in layer.__dict__.items() if not k.startswith("_")})
    return clone


def build_error_detector(seed=0, dropout=0.3, slope=0.01, dtype=np.float32) -> Network:
    """Five strided 3x3 conv blocks, then dense 64 -> 32 -> 1 (logit).

    Block 1 is conv + leaky ReLU; blocks 2-5 are conv + batch norm +
    dropout + leaky ReLU. Feature maps for a 72x81x3 input are
    36x81x16, 18x27x32, 6x9x64, 2x3x128 and 1x1x256.
    """
    layers = []
    cin = DETECTOR_INPUT[2]
    for b, (stride, cout) in enumerate(zip(DETECTOR_STRIDES, DETECTOR_FILTERS), start=1):
        layers.append(Conv2D(f"block{b}.conv", cin, cout, stride, bias=(b == 1)))
        if b > 1:
            layers.append(BatchNorm(f"block{b}.bn", cout))
            layers.append(Dropout(f"block{b}.dropout", dropout))
        layers.append(LeakyReLU(f"block{b}.act", slope))
        cin = cout
    layers += [
        Flatten("flatten"),
        Dense("fc1", 256, 64), ReLU("fc1.act"), Dropout("fc1.dropout", dropout),
        Dense("fc2", 64, 32), ReLU("fc2.act"), Dropout("fc2.dropout", dropout),
        Dense("out", 32, 1),
    ]
    net = Network(layers, DETECTOR_INPUT, seed=seed, dtype=dtype, architecture="error-detector-v1",
                  hyper={"dropout": dropout, "slope": slope})
    maps = block_output_shapes(net)
    if maps != DETECTOR_MAPS:
        raise AssertionError(f"feature map chain {maps} differs from {DETECTOR_MAPS}")
    return net


def build_pitch_classifier(seed=0, n_bins=72, context=4, channels=2, dropout=0.1, slope=0.01,
                           dtype=np.float32) -> Network:
    """Small frame-level pitch classifier: two conv blocks and a softmax over
    ``n_bins`` pitch classes plus one unvoiced class."""
    width = 2 * context + 1
    layers = [
        Conv2D("block1.conv", channels, 16, (1, 1)), LeakyReLU("block1.act", slope),
        Conv2D("block2.conv", 16, 32, (2, 3), bias=False), BatchNorm("block2.bn", 32),
        Dropout("block2.dropout", dropout), LeakyReLU("block2.act", slope),
        Flatten("flatten"),
    ]
    flat = (-(-n_bins // 2)) * (-(-width // 3)) * 32
    layers.append(Dense("out", flat, n_bins + 1))
    return Network(layers, (n_bins, width, channels), seed=seed, dtype=dtype,
                   architecture="pitch-classifier-v1",
                   hyper={"n_bins": n_bins, "context": context, "channels": channels,
                          "dropout": dropout, "slope": slope})


def build_network(architecture: str, hyper: dict, seed=0, dtype=np.float32) -> Network:
    if architecture == "error-detector-v1":
        return build_error_detector(seed, hyper.get("dropout", 0.3), hyper.get("slope", 0.01), dtype)
    if architecture == "pitch-classifier-v1":
        return build_pitch_classifier(seed, dtype=dtype, **hyper)
    raise ValueError(f"unknown architecture {architecture!r}")


def block_output_shapes(net: Network):
    """Shape after each block's final activation (conv blocks only)."""
    out = []
    for layer, shape in zip(net.layers, net.shapes):
        if layer.name.startswith("block") and layer.name.endswith(".act"):
            out.append(tuple(shape))
    return tuple(out)


def sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e))


def bce_loss(p, z, eps=EPS):
    """Binary cross entropy with ``p`` clamped to ``[eps, 1 - eps]``."""
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1 - eps)
    z = np.asarray(z, dtype=np.float64)
    out = -(z * np.log(p) + (1 - z) * np.log(1 - p))
    return float(out) if out.ndim == 0 else out


def bce_from_logits(logits, z, weights=None):
    """Mean (optionally weighted) BCE and its gradient with respect to the logits.

    Evaluated as ``log(1 + e^x) - z x`` with the logit clipped where the
    probability clamp of :func:`bce_loss` would bind, which matches it
    exactly but keeps full precision for small losses.
    """
    logits = logits.reshape(-1)
    x = logits.astype(np.float64)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    bound = np.log((1 - EPS) / EPS)
    xc = np.clip(x, -bound, bound)
    losses = np.logaddexp(0.0, xc) - z * xc
    p = sigmoid(x)
    w = np.ones_like(losses) if weights is None else np.asarray(weights, dtype=np.float64)
    N = len(losses)
    loss = float(np.sum(w * losses) / N)
    grad = (w * (p - z) / N).astype(logits.dtype)
    return loss, grad.reshape(-1, 1), p


def softmax(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_ce(logits, classes, weights=None):
    """Mean (optionally weighted) categorical cross entropy and logit gradient."""
    N = logits.shape[0]
    p = softmax(logits.astype(np.float64))
    idx = np.arange(N)
    losses = -np.log(np.clip(p[idx, classes], EPS, 1.0))
    w = np.ones(N) if weights is None else np.asarray(weights, dtype=np.float64)
    loss = float(np.sum(w * losses) / N)
    g = p.copy()
    g[idx, classes] -= 1
    g *= (w / N)[:, None]
    return loss, g.astype(logits.dtype), p
