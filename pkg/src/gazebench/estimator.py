"""A small trainable gaze regressor, written against numpy only.

The network maps a preprocessed eye strip to a normalized on-screen
point. The stock shape is two strided 3x3 conv blocks, global average
pooling, and three fully connected layers; variants with extra residual
blocks, no conv stack at all (plain vector input), or identity
activations in the head exist for ablations, so the architecture is
data (:class:`ArchSpec`), not code.

Everything trains by plain backprop with momentum SGD on a mean squared
error loss. All tensors are float64 NCHW; gradients are exact, and
:func:`grad_check` compares them against central differences so the
backward passes never have to be trusted blindly.

Weight files are JSON with a format version and an architecture hash;
loading refuses files whose declared architecture does not match the
expected one instead of silently reshaping.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    NumericError,
    TrainingDivergedError,
    ValidationError,
    WeightsCorruptError,
    WeightsHashError,
    WeightsVersionError,
)

WEIGHTS_FORMAT_VERSION = 1

CANVAS_W = 390
CANVAS_H = 85
POOL = 5  # box-average factor from canvas to network input


# ---------------------------------------------------------------------------
# features and targets

def canvas_to_input(canvas: np.ndarray) -> np.ndarray:
    """Canvas strip (85x390 uint8) to network input (1, 17, 78) in [0, 1].

    A 5x5 box average; cheap, antialiased, and exactly invertible in
    expectation, which keeps feature tests closed-form.
    """
    a = np.asarray(canvas)
    if a.shape != (CANVAS_H, CANVAS_W):
        raise ValidationError(f"expected {CANVAS_H}x{CANVAS_W} canvas, got {a.shape}")
    pooled = a.astype(np.float64).reshape(CANVAS_H // POOL, POOL,
                                          CANVAS_W // POOL, POOL).mean(axis=(1, 3))
    return (pooled / 255.0)[None, :, :]


def landmark_features(landmarks: dict, border_fraction: float) -> np.ndarray:
    """Canvas landmark coordinates plus the border fraction, 13 values in ~[0, 1]."""
    names = ("outer_left", "inner_left", "iris_left",
             "outer_right", "inner_right", "iris_right")
    out = []
    for n in names:
        if n not in landmarks:
            raise ValidationError(f"missing landmark {n!r}")
        x, y = np.asarray(landmarks[n], dtype=float)
        out.extend([x / CANVAS_W, y / CANVAS_H])
    out.append(float(border_fraction))
    return np.array(out)


def normalize_points(points_mm, screen_w: float, screen_h: float) -> np.ndarray:
    """In-screen mm to [-1, 1]^2 (top-left maps to (-1, -1))."""
    p = np.atleast_2d(np.asarray(points_mm, dtype=float))
    return np.stack([2.0 * p[:, 0] / screen_w - 1.0,
                     2.0 * p[:, 1] / screen_h - 1.0], axis=1)


def denormalize_points(points, screen_w: float, screen_h: float) -> np.ndarray:
    p = np.atleast_2d(np.asarray(points, dtype=float))
    return np.stack([(p[:, 0] + 1.0) * screen_w / 2.0,
                     (p[:, 1] + 1.0) * screen_h / 2.0], axis=1)


# ---------------------------------------------------------------------------
# layers

def _he_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


class Conv2D:
    """3x3 convolution, 'same' padding, integer stride, out = ceil(in / s)."""

    def __init__(self, in_ch: int, out_ch: int, stride: int, rng: np.random.Generator):
        self.stride = int(stride)
        self.w = _he_init(rng, (out_ch, in_ch, 3, 3), fan_in=in_ch * 9)
        self.b = np.zeros(out_ch)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        s = self.stride
        return -(-h // s), -(-w // s)

    def _pads(self, n: int) -> tuple[int, int]:
        out = -(-n // self.stride)
        total = max((out - 1) * self.stride + 3 - n, 0)
        return total // 2, total - total // 2

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c, h, w = x.shape
        (pt, pb), (pl, pr) = self._pads(h), self._pads(w)
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        win = sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::self.stride, ::self.stride]
        ho, wo = win.shape[2], win.shape[3]
        # im2col once; one GEMM here and two in backward beat per-window
        # einsum by a wide margin at these sizes
        col = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * 9)
        y = col @ self.w.reshape(len(self.w), -1).T + self.b
        self._cache = (col, xp.shape, (pt, pl), (h, w), (n, ho, wo))
        return np.ascontiguousarray(y.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        col, xp_shape, (pt, pl), (h, w), (n, ho, wo) = self._cache
        o = len(self.w)
        dy_mat = np.ascontiguousarray(dy.transpose(0, 2, 3, 1)).reshape(n * ho * wo, o)
        self.dw += (dy_mat.T @ col).reshape(self.w.shape)
        self.db += dy_mat.sum(axis=0)
        dwin = (dy_mat @ self.w.reshape(o, -1)).reshape(n, ho, wo, xp_shape[1], 3, 3)
        s = self.stride
        dxp = np.zeros(xp_shape)
        for i in range(3):
            for j in range(3):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += \
                    dwin[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, pt:pt + h, pl:pl + w]

    def params(self):
        return [("w", self.w, self.dw), ("b", self.b, self.db)]


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return np.where(self._mask, dy, 0.0)

    def params(self):
        return []


class ResidualBlock:
    """Same-shape 3x3 conv with a skip: out = relu(conv(x) + x)."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.conv = Conv2D(channels, channels, stride=1, rng=rng)
        self.relu = ReLU()

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.relu.forward(self.conv.forward(x) + x)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dz = self.relu.backward(dy)
        return self.conv.backward(dz) + dz

    def params(self):
        return self.conv.params()


class GlobalAvgPool:
    def __init__(self):
        self._hw = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._hw = x.shape[2:]
        return x.mean(axis=(2, 3))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        h, w = self._hw
        return np.broadcast_to(dy[:, :, None, None], dy.shape + (h, w)) / (h * w)

    def params(self):
        return []


class Dense:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.w = _he_init(rng, (out_dim, in_dim), fan_in=in_dim)
        self.b = np.zeros(out_dim)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.dw += dy.T @ self._x
        self.db += dy.sum(axis=0)
        return dy @ self.w

    def params(self):
        return [("w", self.w, self.dw), ("b", self.b, self.db)]


# ---------------------------------------------------------------------------
# model

@dataclass(frozen=True)
class ArchSpec:
    """Declarative network shape.

    `input_shape` is (C, H, W) for image input or (D,) for vector
    input; conv settings are ignored for vector input. `fc_activation`
    'identity' turns the head affine for linear ablations.
    """

    input_shape: tuple[int, ...]
    conv_channels: tuple[int, ...] = (8, 16)
    conv_stride: int = 2
    residual_blocks: int = 0
    fc_sizes: tuple[int, ...] = (64, 32)
    out_dim: int = 2
    fc_activation: str = "relu"

    def __post_init__(self):
        if len(self.input_shape) not in (1, 3):
            raise ValidationError("input_shape must be (D,) or (C, H, W)")
        if self.fc_activation not in ("relu", "identity"):
            raise ValidationError(f"unknown fc_activation {self.fc_activation!r}")
        if self.conv_stride < 1 or self.residual_blocks < 0 or self.out_dim < 1:
            raise ValidationError("bad architecture parameter")
        if any(c < 1 for c in self.conv_channels) or any(s < 1 for s in self.fc_sizes):
            raise ValidationError("layer sizes must be positive")

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "conv_channels": list(self.conv_channels),
            "conv_stride": self.conv_stride,
            "residual_blocks": self.residual_blocks,
            "fc_sizes": list(self.fc_sizes),
            "out_dim": self.out_dim,
            "fc_activation": self.fc_activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(input_shape=tuple(d["input_shape"]),
                   conv_channels=tuple(d["conv_channels"]),
                   conv_stride=int(d["conv_stride"]),
                   residual_blocks=int(d["residual_blocks"]),
                   fc_sizes=tuple(d["fc_sizes"]),
                   out_dim=int(d["out_dim"]),
                   fc_activation=str(d["fc_activation"]))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("ascii")
        return hashlib.sha256(blob).hexdigest()[:16]


def default_image_arch() -> ArchSpec:
    return ArchSpec(input_shape=(1, CANVAS_H // POOL, CANVAS_W // POOL))


def default_vector_arch(dim: int = 13) -> ArchSpec:
    return ArchSpec(input_shape=(dim,))


class GazeRegressor:
    """The assembled network. Build with :func:`build_model`."""

    def __init__(self, arch: ArchSpec, layers: list, provenance: str = "random"):
        self.arch = arch
        self.layers = layers
        self.provenance = provenance

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        want = self.arch.input_shape
        if x.shape[1:] != want:
            raise ValidationError(f"input shape {x.shape[1:]} != {want}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def predict(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        outs = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        out = np.concatenate(outs, axis=0) if outs else np.zeros((0, self.arch.out_dim))
        if not np.all(np.isfinite(out)):
            raise NumericError("non-finite network output")
        return out

    def params(self):
        named = []
        for li, layer in enumerate(self.layers):
            for pname, p, g in layer.params():
                named.append((f"{self._layer_name(li)}.{pname}", p, g))
        return named

    def _layer_name(self, index: int) -> str:
        # stable names independent of activation layers interleaved
        counts: dict[str, int] = {}
        for li, layer in enumerate(self.layers):
            kind = {Conv2D: "conv", ResidualBlock: "res", Dense: "fc"}.get(type(layer))
            if kind is None:
                name = None
            else:
                name = f"{kind}{counts.get(kind, 0)}"
                counts[kind] = counts.get(kind, 0) + 1
            if li == index:
                return name or f"layer{li}"
        raise IndexError(index)

    def zero_grad(self):
        for _, _, g in self.params():
            g[...] = 0.0

    def n_params(self) -> int:
        return sum(p.size for _, p, _ in self.params())

    def copy(self) -> "GazeRegressor":
        clone = build_model(self.arch, seed=0)
        clone.provenance = self.provenance
        for (_, p, _), (_, q, _) in zip(clone.params(), self.params()):
            p[...] = q
        return clone


def build_model(arch: ArchSpec, seed: int = 0) -> GazeRegressor:
    """Construct and He-initialize a model; same seed, same weights."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    layers: list = []
    if len(arch.input_shape) == 3:
        c, h, w = arch.input_shape
        for depth, out_ch in enumerate(arch.conv_channels):
            conv = Conv2D(c, out_ch, arch.conv_stride, rng)
            if depth == 0:
                # unit-range inputs carry a big DC term; cancel it at init
                # so early gradients see the signal instead of the offset
                conv.b[:] = -0.5 * conv.w.sum(axis=(1, 2, 3))
            layers.extend([conv, ReLU()])
            h, w = conv.out_hw(h, w)
            c = out_ch
        for _ in range(arch.residual_blocks):
            layers.append(ResidualBlock(c, rng))
        layers.append(GlobalAvgPool())
        dim = c
    else:
        dim = arch.input_shape[0]
    for size in arch.fc_sizes:
        layers.append(Dense(dim, size, rng))
        if arch.fc_activation == "relu":
            layers.append(ReLU())
        dim = size
    layers.append(Dense(dim, arch.out_dim, rng))
    return GazeRegressor(arch, layers)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over all elements; returns the loss and d loss / d pred."""
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 1e-2
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 32
    # linear per-epoch anneal toward this rate; None keeps the rate flat
    final_learning_rate: float | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError("momentum must be in [0, 1)")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.final_learning_rate is not None:
            if not 0 < self.final_learning_rate <= self.learning_rate:
                raise ValidationError(
                    "final_learning_rate must be in (0, learning_rate]")

    def rate_at(self, epoch: int) -> float:
        """Learning rate for `epoch` under the linear anneal."""
        if self.final_learning_rate is None or self.epochs <= 1:
            return self.learning_rate
        frac = epoch / (self.epochs - 1)
        # this form is exact when the two rates coincide
        return self.learning_rate + frac * (self.final_learning_rate -
                                            self.learning_rate)

    def to_dict(self) -> dict:
        return {"learning_rate": self.learning_rate, "momentum": self.momentum,
                "epochs": self.epochs, "batch_size": self.batch_size,
                "final_learning_rate": self.final_learning_rate}


FINE_TUNE_LR = 1e-3


def fine_tune_hyperparams(epochs: int = 200, batch_size: int = 32) -> Hyperparams:
    """Adaptation settings: same loop, ten times smaller steps."""
    return Hyperparams(learning_rate=FINE_TUNE_LR, epochs=epochs, batch_size=batch_size)


@dataclass(eq=False)
class TrainResult:
    provenance: str
    epochs_run: int
    final_loss: float
    history: list[float] = field(default_factory=list)


def train(model: GazeRegressor, x: np.ndarray, y: np.ndarray,
          hyper: Hyperparams, seed: int = 0,
          provenance: str | None = None) -> TrainResult:
    """Momentum SGD on the MSE loss; mutates `model` in place.

    Epoch shuffling derives from `seed` alone, so identical inputs give
    identical weights. Zero epochs is legal and leaves the model
    untouched (used by evaluation-only paths). A non-finite loss aborts
    with TrainingDivergedError rather than silently continuing.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y):
        raise ValidationError("x and y lengths differ")
    if len(x) == 0:
        raise ValidationError("training set is empty")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    velocity = [np.zeros_like(p) for _, p, _ in model.params()]
    history = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(x))
        rate = hyper.rate_at(epoch)
        total, seen = 0.0, 0
        for start in range(0, len(x), hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            model.zero_grad()
            pred = model.forward(x[idx])
            loss, dpred = mse_loss(pred, y[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}", epoch=epoch)
            model.backward(dpred)
            for v, (_, p, g) in zip(velocity, model.params()):
                v *= hyper.momentum
                v -= rate * g
                p += v
            total += loss * len(idx)
            seen += len(idx)
        history.append(total / seen)
    if provenance is not None:
        model.provenance = provenance
    final = history[-1] if history else float(mse_loss(model.predict(x), y)[0])
    return TrainResult(provenance=model.provenance, epochs_run=hyper.epochs,
                       final_loss=final, history=history)


def grad_check(model: GazeRegressor, x: np.ndarray, y: np.ndarray,
               eps: float = 1e-6, samples_per_tensor: int = 4,
               seed: int = 0) -> float:
    """Max relative error between backprop and central differences.

    Checks a seeded subset of coordinates in every parameter tensor.
    The error measure is |a - n| / max(|a|, |n|, 1e-8). ReLU units
    sitting exactly at zero (dead patches with zero-initialized biases)
    make the two sides legitimately disagree; nudge biases off zero
    before checking if that matters.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    model.zero_grad()
    pred = model.forward(x)
    _, dpred = mse_loss(pred, y)
    model.backward(dpred)
    analytic = [(name, p, g.copy()) for name, p, g in model.params()]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p, g in analytic:
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in rng.choice(flat_p.size, size=min(samples_per_tensor, flat_p.size),
                            replace=False):
            orig = flat_p[i]
            flat_p[i] = orig + eps
            lo_plus, _ = mse_loss(model.forward(x), y)
            flat_p[i] = orig - eps
            lo_minus, _ = mse_loss(model.forward(x), y)
            flat_p[i] = orig
            numeric = (lo_plus - lo_minus) / (2.0 * eps)
            err = abs(flat_g[i] - numeric) / max(abs(flat_g[i]), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# closed-form baseline

def ridge_fit(x: np.ndarray, y: np.ndarray, lam: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Ridge regression with an unregularized intercept; returns (W, b)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y):
        raise ValidationError("ridge_fit expects matching 2D x and y")
    xa = np.column_stack([x, np.ones(len(x))])
    reg = lam * np.eye(xa.shape[1])
    reg[-1, -1] = 0.0
    coef = np.linalg.solve(xa.T @ xa + reg, xa.T @ y)
    return coef[:-1].T, coef[-1]


def ridge_predict(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) @ np.asarray(w).T + b


# ---------------------------------------------------------------------------
# persistence

def save_weights(model: GazeRegressor, path) -> None:
    payload = {
        "format_version": WEIGHTS_FORMAT_VERSION,
        "arch": model.arch.to_dict(),
        "arch_hash": model.arch.hash(),
        "provenance": model.provenance,
        "layers": {name: p.tolist() for name, p, _ in model.params()},
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_weights(path, expect_arch: ArchSpec | None = None) -> GazeRegressor:
    """Rebuild a model from disk, verifying format and architecture."""
    try:
        with open(path, "r", encoding="ascii") as fh:
            payload = json.load(fh)
    except (OSError, ValueError) as e:
        raise WeightsCorruptError(f"cannot read weights file {path}: {e}") from e
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise WeightsCorruptError(f"weights file {path} has no format version")
    if payload["format_version"] != WEIGHTS_FORMAT_VERSION:
        raise WeightsVersionError(
            f"weights format {payload['format_version']} unsupported "
            f"(expected {WEIGHTS_FORMAT_VERSION})")
    try:
        arch = ArchSpec.from_dict(payload["arch"])
        stored_hash = payload["arch_hash"]
        layers = payload["layers"]
    except (KeyError, TypeError, ValidationError) as e:
        raise WeightsCorruptError(f"weights file {path} is malformed: {e}") from e
    if stored_hash != arch.hash():
        raise WeightsCorruptError(f"weights file {path} hash does not match its own arch")
    if expect_arch is not None and arch.hash() != expect_arch.hash():
        raise WeightsHashError(
            f"weights file {path} was written for a different architecture")
    model = build_model(arch, seed=0)
    model.provenance = str(payload.get("provenance", "unknown"))
    for name, p, _ in model.params():
        if name not in layers:
            raise WeightsCorruptError(f"weights file {path} missing tensor {name}")
        arr = np.asarray(layers[name], dtype=np.float64)
        if arr.shape != p.shape:
            raise WeightsCorruptError(
                f"tensor {name} has shape {arr.shape}, expected {p.shape}")
        p[...] = arr
    return model
