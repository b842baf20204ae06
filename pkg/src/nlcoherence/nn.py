"""Minimal differentiable 1D convolutional network with Adam.

Used in two roles: a dilated temporal network trained in the forward
direction (excitation to measured response) to supply the model
prediction, and a small short-memory network trained in the reverse
direction (blended response back to excitation).

Convolutions are cross-correlations with zero "same" padding, so every
layer preserves the frame length.  Forward passes lower each window onto
an im2col matrix and run one matrix product per layer; backward passes
return exact gradients for every parameter and for the layer input (the
input gradient carries the loss back into the spectral blend).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from nlcoherence.simulate import FramedDataset

__all__ = [
    "Conv1dLayer",
    "Conv1dNet",
    "Adam",
    "TrainingDivergedError",
    "ForwardModelConfig",
    "FORWARD_MODEL_PRESETS",
    "default_reverse_net",
    "default_forward_net",
    "train_forward_model",
    "interior_slice",
    "save_checkpoint",
    "load_checkpoint",
]

_ACTIVATIONS = ("tanh", "relu", "identity")


class TrainingDivergedError(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


class Conv1dLayer:
    """One zero-padded same-length convolution plus pointwise activation.

    Windows are lowered onto a (channels*kernel, length) matrix so each
    pass is a single matrix product.  The lowering scratch (padded input
    and patch matrix) is pooled per frame length: a cached forward's
    scratch stays valid until the next cached forward of the same length
    on the same layer, which the training loops respect by running
    backward before the next cached forward.  Plain forwards use a
    separate pool and never disturb a pending cache.
    """

    def __init__(self, in_channels, out_channels, kernel, dilation=1,
                 activation="tanh", rng=None):
        if kernel < 1:
            raise ValueError("kernel width must be >= 1")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.dilation = dilation
        self.activation = activation
        total_pad = (kernel - 1) * dilation
        self.pad_left = total_pad // 2
        self.pad_right = total_pad - self.pad_left
        if rng is None:
            self.weight = np.zeros((out_channels, in_channels, kernel))
        else:
            bound = 1.0 / np.sqrt(in_channels * kernel)
            self.weight = rng.uniform(
                -bound, bound, size=(out_channels, in_channels, kernel)
            )
        self.bias = np.zeros(out_channels)
        self._pool: dict = {}

    @property
    def n_params(self) -> int:
        return self.weight.size + self.bias.size

    def _scratch(self, kind: str, m: int) -> dict:
        key = (kind, m)
        buf = self._pool.get(key)
        if buf is None:
            pad = self.pad_left + self.pad_right
            if kind == "bwd":
                channels = self.out_channels
            else:
                channels = self.in_channels
            buf = {
                "padded": np.zeros((channels, m + pad)),
                "cols": np.empty((channels * self.kernel, m)),
            }
            self._pool[key] = buf
        return buf

    def _lower(self, buf: dict, x: np.ndarray, left: int) -> np.ndarray:
        """Copy x into the padded scratch and gather the patch matrix."""
        m = x.shape[1]
        padded = buf["padded"]
        padded[:, left : left + m] = x
        s0, s1 = padded.strides
        view = np.lib.stride_tricks.as_strided(
            padded,
            shape=(x.shape[0], self.kernel, m),
            strides=(s0, self.dilation * s1, s1),
        )
        cols = buf["cols"]
        np.copyto(cols.reshape(view.shape), view)
        return cols

    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        """Map (in_channels, m) to (out_channels, m)."""
        m = x.shape[1]
        span = (self.kernel - 1) * self.dilation + 1
        if m < span:
            raise ValueError(
                f"frame of {m} samples is shorter than the layer span {span}"
            )
        buf = self._scratch("fwd_cached" if cache is not None else "fwd", m)
        cols = self._lower(buf, x, self.pad_left)
        pre = self.weight.reshape(self.out_channels, -1) @ cols
        pre += self.bias[:, None]
        if self.activation == "tanh":
            out = np.tanh(pre)
            act_state = out
        elif self.activation == "relu":
            out = np.maximum(pre, 0.0)
            act_state = pre > 0.0
        else:
            out = pre
            act_state = None
        if cache is not None:
            cache.append((cols, act_state))
        return out

    def backward(self, cache_entry, grad_out: np.ndarray):
        """Gradients of the loss w.r.t. weight, bias and layer input."""
        cols, act_state = cache_entry
        if grad_out.shape[0] != self.out_channels:
            raise ValueError(
                f"upstream gradient has {grad_out.shape[0]} channels, "
                f"layer emits {self.out_channels}"
            )
        if self.activation == "tanh":
            g_pre = grad_out * (1.0 - act_state**2)
        elif self.activation == "relu":
            g_pre = grad_out * act_state
        else:
            g_pre = grad_out
        g_weight = (g_pre @ cols.T).reshape(self.weight.shape)
        g_bias = g_pre.sum(axis=1)
        # Input gradient: correlate the padded upstream gradient with the
        # kernel flipped along its taps and transposed in channels.
        m = grad_out.shape[1]
        buf = self._scratch("bwd", m)
        g_cols = self._lower(buf, g_pre, self.pad_right)
        w_rot = (
            self.weight[:, :, ::-1]
            .transpose(1, 0, 2)
            .reshape(self.in_channels, -1)
        )
        g_input = w_rot @ g_cols
        return g_weight, g_bias, g_input


class Conv1dNet:
    """A stack of same-length conv layers mapping one channel to one.

    ``in_scale``/``out_scale`` standardize the physical signals the net
    sees: ``forward(x) = out_scale * stack(x / in_scale)``.  Both default
    to 1 and are part of the model (stored in checkpoints, differentiated
    through in :meth:`backward`).
    """

    def __init__(self, layers: list[Conv1dLayer], in_scale=1.0, out_scale=1.0):
        if not layers:
            raise ValueError("network needs at least one layer")
        if layers[0].in_channels != 1 or layers[-1].out_channels != 1:
            raise ValueError("network must map 1 input channel to 1 output")
        for a, b in zip(layers, layers[1:]):
            if a.out_channels != b.in_channels:
                raise ValueError("adjacent layers disagree on channel count")
        self.layers = layers
        self.in_scale = float(in_scale)
        self.out_scale = float(out_scale)

    @property
    def receptive_field(self) -> int:
        return 1 + sum((l.kernel - 1) * l.dilation for l in self.layers)

    @property
    def n_params(self) -> int:
        return sum(l.n_params for l in self.layers)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    @property
    def param_names(self) -> list[str]:
        out = []
        for i in range(len(self.layers)):
            out.append(f"layer{i}.weight")
            out.append(f"layer{i}.bias")
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Deterministic map of a frame (m,) to a frame (m,)."""
        y, _ = self.forward_cached(np.asarray(x, dtype=np.float64), cache=False)
        return y

    def forward_cached(self, x: np.ndarray, cache: bool = True):
        if x.ndim != 1:
            raise ValueError("input frame must be one-dimensional")
        if x.shape[0] < self.receptive_field:
            raise ValueError(
                f"frame of {x.shape[0]} samples is shorter than the "
                f"receptive field {self.receptive_field}"
            )
        caches: list | None = [] if cache else None
        h = (x / self.in_scale)[None, :]
        for layer in self.layers:
            h = layer.forward(h, caches)
        return h[0] * self.out_scale, caches

    def backward(self, caches, grad_out: np.ndarray):
        """Propagate d(loss)/d(output frame) back through the stack.

        Returns (param_grads, grad_input) with ``param_grads`` aligned
        with :attr:`params`.
        """
        g = (np.asarray(grad_out) * self.out_scale)[None, :]
        grads: list[np.ndarray | None] = [None] * (2 * len(self.layers))
        for i in range(len(self.layers) - 1, -1, -1):
            g_w, g_b, g = self.layers[i].backward(caches[i], g)
            grads[2 * i] = g_w
            grads[2 * i + 1] = g_b
        return grads, g[0] / self.in_scale


class Adam:
    """Adam with bias correction over a list of parameter arrays."""

    def __init__(self, params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8,
                 names=None):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.names = list(names) if names is not None else None
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def _name(self, i):
        return self.names[i] if self.names else f"parameter {i}"

    def step(self, grads):
        """Update every parameter in place from its gradient."""
        if len(grads) != len(self.params):
            raise ValueError(
                f"got {len(grads)} gradients for {len(self.params)} parameters"
            )
        for g, i in zip(grads, range(len(self.params))):
            if not np.isfinite(g).all():
                raise TrainingDivergedError(
                    f"non-finite gradient in {self._name(i)}"
                )
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def default_reverse_net(seed=0, features=5, kernel=7, n_layers=5,
                        in_scale=1.0, out_scale=1.0) -> Conv1dNet:
    """Short-memory reverse map: 5 undilated layers, kernel 7, 5 features.

    Channel plan (1 -> 5 -> 5 -> 5 -> 5 -> 1) yields 616 parameters and a
    receptive field of 31 samples at the defaults.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 2)))
    layers = []
    for i in range(n_layers):
        c_in = 1 if i == 0 else features
        c_out = 1 if i == n_layers - 1 else features
        act = "identity" if i == n_layers - 1 else "tanh"
        layers.append(Conv1dLayer(c_in, c_out, kernel, 1, act, rng))
    return Conv1dNet(layers, in_scale=in_scale, out_scale=out_scale)


def default_forward_net(kernel, features, seed=0, n_layers=5,
                        dilations=(1, 2, 4, 8, 16),
                        in_scale=1.0, out_scale=1.0) -> Conv1dNet:
    """Dilated temporal net for the forward (excitation to response) map."""
    if len(dilations) != n_layers:
        raise ValueError("need one dilation per layer")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 3)))
    layers = []
    for i in range(n_layers):
        c_in = 1 if i == 0 else features
        c_out = 1 if i == n_layers - 1 else features
        act = "identity" if i == n_layers - 1 else "tanh"
        layers.append(Conv1dLayer(c_in, c_out, kernel, dilations[i], act, rng))
    return Conv1dNet(layers, in_scale=in_scale, out_scale=out_scale)


def interior_slice(m: int, receptive_field: int) -> slice:
    """Samples unaffected by zero padding bias at either frame edge."""
    half = receptive_field // 2
    if 2 * half >= m:
        raise ValueError("frame shorter than the padded edge region")
    return slice(half, m - half)


@dataclass(frozen=True)
class ForwardModelConfig:
    kernel: int
    features: int
    epochs: int
    lr: float = 0.01
    n_layers: int = 5
    dilations: tuple = (1, 2, 4, 8, 16)


FORWARD_MODEL_PRESETS = {
    "poly": ForwardModelConfig(kernel=20, features=10, epochs=1000),
    "sat": ForwardModelConfig(kernel=10, features=3, epochs=100),
    "friction": ForwardModelConfig(kernel=10, features=3, epochs=1000),
}


@dataclass
class ForwardModelResult:
    net: Conv1dNet
    y_z: np.ndarray
    capture: float | None
    final_loss: float


def train_forward_model(
    ds: FramedDataset, config: ForwardModelConfig, seed=0
) -> ForwardModelResult:
    """Fit the forward map on the training frames and predict every frame.

    Trains excitation -> noisy measurement with batch size one frame
    (order reshuffled each epoch) and writes the prediction for all
    frames.  When the dataset carries the noise-free response, reports the
    captured fraction of its energy over the padding-free interior.
    """
    if ds.y_n is None:
        raise ValueError("dataset has no measured response y_n to fit")
    m = ds.n_samples
    avail = np.concatenate([ds.train_indices, ds.val_indices])
    in_scale = float(np.sqrt(np.mean(ds.x[avail] ** 2)))
    out_scale = float(np.sqrt(np.mean(ds.y_n[avail] ** 2)))
    net = default_forward_net(
        config.kernel, config.features, seed=seed, n_layers=config.n_layers,
        dilations=config.dilations, in_scale=in_scale, out_scale=out_scale,
    )
    interior = interior_slice(m, net.receptive_field)
    n_int = interior.stop - interior.start
    adam = Adam(net.params, lr=config.lr, names=net.param_names)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 4)))

    train = ds.train_indices
    last = float("nan")
    for epoch in range(config.epochs):
        order = rng.permutation(train)
        total = 0.0
        for idx in order:
            pred, caches = net.forward_cached(ds.x[idx])
            resid = np.zeros(m)
            resid[interior] = pred[interior] - ds.y_n[idx][interior]
            loss = float(np.mean(resid[interior] ** 2)) / out_scale**2
            total += loss
            grads, _ = net.backward(
                caches, (2.0 / (n_int * out_scale**2)) * resid
            )
            adam.step(grads)
        last = total / len(train)
        if not np.isfinite(last):
            raise TrainingDivergedError(
                f"forward-model loss became non-finite at epoch {epoch}"
            )

    y_z = np.empty_like(ds.x)
    for i in range(ds.n_frames):
        y_z[i] = net.forward(ds.x[i])

    capture = None
    if ds.y is not None:
        err = float(np.sum((ds.y[:, interior] - y_z[:, interior]) ** 2))
        tot = float(np.sum(ds.y[:, interior] ** 2))
        capture = 1.0 - err / tot
    return ForwardModelResult(net=net, y_z=y_z, capture=capture, final_loss=last)


# ---------------------------------------------------------------------------
# Checkpoints: self-describing binary, JSON header + little-endian float64
# parameter blocks, optionally followed by Adam moments for resumable runs.

_MAGIC = b"NLCNET1\n"


def save_checkpoint(path, net: Conv1dNet, adam: Adam | None = None):
    header = {
        "layers": [
            {
                "in": l.in_channels,
                "out": l.out_channels,
                "kernel": l.kernel,
                "dilation": l.dilation,
                "activation": l.activation,
            }
            for l in net.layers
        ],
        "in_scale": net.in_scale,
        "out_scale": net.out_scale,
        "adam": None
        if adam is None
        else {
            "lr": adam.lr,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "eps": adam.eps,
            "t": adam.t,
        },
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for p in net.params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
        if adam is not None:
            for block in (adam.m, adam.v):
                for arr in block:
                    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return Path(path)


def load_checkpoint(path) -> tuple[Conv1dNet, Adam | None]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path} is not a network checkpoint")
        header = json.loads(fh.readline().decode())
        layers = [
            Conv1dLayer(
                spec["in"], spec["out"], spec["kernel"], spec["dilation"],
                spec["activation"],
            )
            for spec in header["layers"]
        ]
        net = Conv1dNet(
            layers, in_scale=header["in_scale"], out_scale=header["out_scale"]
        )

        def read_into(template):
            raw = fh.read(template.size * 8)
            if len(raw) != template.size * 8:
                raise ValueError(f"{path} is truncated")
            return np.frombuffer(raw, dtype="<f8").reshape(template.shape).copy()

        for layer in layers:
            layer.weight = read_into(layer.weight)
            layer.bias = read_into(layer.bias)
        adam = None
        if header["adam"] is not None:
            meta = header["adam"]
            adam = Adam(
                net.params, lr=meta["lr"], beta1=meta["beta1"],
                beta2=meta["beta2"], eps=meta["eps"], names=net.param_names,
            )
            adam.t = meta["t"]
            adam.m = [read_into(p) for p in net.params]
            adam.v = [read_into(p) for p in net.params]
    return net, adam
