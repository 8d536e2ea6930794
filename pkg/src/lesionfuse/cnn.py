"""Small VGG-style convnet trained from scratch in numpy (float64).

The architecture is a configurable stack of [conv3x3, relu, conv3x3, relu,
maxpool2] blocks followed by flatten, a 2-way dense layer, and a terminal
softmax.  Convolutions use the VGG convention: 3x3 kernels, stride 1,
padding 1.  Patches are resized to ``input_side`` and scaled to [0, 1]
before entering the network.

Training is plain SGD with momentum on the mean cross-entropy; the terminal
softmax and the loss are fused for the backward pass (gradient at the
logits is (p - onehot) / batch), which is the numerically stable form.
Initialization, shuffling, and updates all draw from streams derived from
the training seed, so identical inputs give bit-identical models.
"""

import copy
import struct
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .imaging import Patch, extract_patches, resize_bilinear


class Conv3x3:
    """3x3 convolution, stride 1, pad 1; weights (out_ch, in_ch, 3, 3)."""

    def __init__(self, in_ch: int, out_ch: int):
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.weights = np.zeros((out_ch, in_ch, 3, 3))
        self.bias = np.zeros(out_ch)

    def _cols(self, x):
        n, c, h, w = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
        # (n, c, h, w, 3, 3) -> (n, h*w, c*9)
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, h * w, c * 9)

    def forward(self, x):
        n, c, h, w = x.shape
        if c != self.in_ch:
            raise ValueError(f"conv expects {self.in_ch} channels, got {c}")
        cols = self._cols(x)
        out = cols @ self.weights.reshape(self.out_ch, -1).T + self.bias
        return out.transpose(0, 2, 1).reshape(n, self.out_ch, h, w)

    def backward(self, x, grad):
        n, c, h, w = x.shape
        cols = self._cols(x)
        gmat = grad.reshape(n, self.out_ch, h * w).transpose(0, 2, 1)  # (n, hw, out)
        dw = np.einsum("npo,npk->ok", gmat, cols).reshape(self.weights.shape)
        db = grad.sum(axis=(0, 2, 3))
        dcols = gmat @ self.weights.reshape(self.out_ch, -1)  # (n, hw, c*9)
        dcols = dcols.reshape(n, h, w, c, 3, 3)
        dxp = np.zeros((n, c, h + 2, w + 2))
        for di in range(3):
            for dj in range(3):
                dxp[:, :, di : di + h, dj : dj + w] += dcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
        return dxp[:, :, 1:-1, 1:-1], [dw, db]

    def parameters(self):
        return [self.weights, self.bias]

    def init(self, rng):
        limit = np.sqrt(6.0 / (self.in_ch * 9))
        self.weights = rng.uniform(-limit, limit, size=self.weights.shape)
        self.bias = np.zeros(self.out_ch)


class ReLU:
    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, x, grad):
        return grad * (x > 0.0), []

    def parameters(self):
        return []


class MaxPool2:
    """Non-overlapping 2x2 max pooling; spatial dims must be even."""

    @staticmethod
    def _windows(x):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"maxpool2 requires even spatial dims, got {h}x{w}")
        return x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
            n, c, h // 2, w // 2, 4
        )

    def forward(self, x):
        return self._windows(x).max(axis=-1)

    def backward(self, x, grad):
        n, c, h, w = x.shape
        win = self._windows(x)
        idx = win.argmax(axis=-1)  # first max; ties route to one window slot
        dwin = np.zeros_like(win)
        np.put_along_axis(dwin, idx[..., None], grad[..., None], axis=-1)
        dx = dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(x.shape)
        return dx, []

    def parameters(self):
        return []


class Flatten:
    def forward(self, x):
        return x.reshape(x.shape[0], -1)

    def backward(self, x, grad):
        return grad.reshape(x.shape), []

    def parameters(self):
        return []


class Dense:
    def __init__(self, in_features: int, out_features: int):
        self.in_features = in_features
        self.out_features = out_features
        self.weights = np.zeros((out_features, in_features))
        self.bias = np.zeros(out_features)

    def forward(self, x):
        if x.shape[1] != self.in_features:
            raise ValueError(f"dense expects {self.in_features} features, got {x.shape[1]}")
        return x @ self.weights.T + self.bias

    def backward(self, x, grad):
        dw = grad.T @ x
        db = grad.sum(axis=0)
        return grad @ self.weights, [dw, db]

    def parameters(self):
        return [self.weights, self.bias]

    def init(self, rng):
        limit = np.sqrt(6.0 / self.in_features)
        self.weights = rng.uniform(-limit, limit, size=self.weights.shape)
        self.bias = np.zeros(self.out_features)


class Softmax:
    def forward(self, x):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def parameters(self):
        return []


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0


@dataclass
class CnnModel:
    layers: list
    input_side: int = 256
    loss_history: list = field(default_factory=list)  # (epoch, batch, loss)

    def validate(self):
        if not self.layers or not isinstance(self.layers[-1], Softmax):
            raise ValueError("model must end with a single terminal softmax")
        if any(isinstance(l, Softmax) for l in self.layers[:-1]):
            raise ValueError("softmax is only allowed as the terminal layer")
        dense = [l for l in self.layers if isinstance(l, Dense)]
        if not dense or dense[-1].out_features != 2:
            raise ValueError("final dense layer must have 2 outputs")


def build_cnn(input_side: int = 256, channels: tuple = (8, 16)) -> CnnModel:
    """Default VGG-style stack: per entry in ``channels`` one block of
    [conv3x3, relu, conv3x3, relu, maxpool2], then flatten, dense-2, softmax.
    ``input_side`` must be divisible by 2**len(channels)."""
    if input_side % (2 ** len(channels)):
        raise ValueError("input_side must be divisible by 2 ** number of blocks")
    layers = []
    in_ch = 3
    for ch in channels:
        layers += [Conv3x3(in_ch, ch), ReLU(), Conv3x3(ch, ch), ReLU(), MaxPool2()]
        in_ch = ch
    side = input_side // (2 ** len(channels))
    layers += [Flatten(), Dense(in_ch * side * side, 2), Softmax()]
    model = CnnModel(layers, input_side)
    model.validate()
    return model


def initialize_parameters(model: CnnModel, seed: int) -> None:
    """He-uniform weights, zero biases; one derived stream per layer index."""
    for i, layer in enumerate(model.layers):
        if hasattr(layer, "init"):
            layer.init(seeding.derive_rng(seed, seeding.CNN_INIT, i))


def softmax(logits) -> np.ndarray:
    """Numerically stable softmax of a single logit vector."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax requires finite logits")
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def conv3x3_forward(x, weights, bias) -> np.ndarray:
    """3x3 stride-1 pad-1 convolution of a single (in_ch, h, w) tensor."""
    x = np.asarray(x, dtype=np.float64)
    layer = Conv3x3(weights.shape[1], weights.shape[0])
    layer.weights = np.asarray(weights, dtype=np.float64)
    layer.bias = np.asarray(bias, dtype=np.float64)
    return layer.forward(x[None])[0]


def relu(x) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def maxpool2(x) -> np.ndarray:
    """Non-overlapping 2x2 max pooling of a single (ch, h, w) tensor."""
    x = np.asarray(x, dtype=np.float64)
    return MaxPool2().forward(x[None])[0]


def _patch_array(patch) -> np.ndarray:
    return patch.image if isinstance(patch, Patch) else np.asarray(patch)


def _to_input_batch(patches, input_side: int) -> np.ndarray:
    """Stack patches into an (n, 3, side, side) float64 batch scaled to [0, 1]."""
    arrs = []
    for p in patches:
        a = _patch_array(p)
        if a.shape[0] != input_side or a.shape[1] != input_side:
            a = resize_bilinear(a, input_side, input_side)
        arrs.append(a)
    batch = np.stack(arrs).astype(np.float64) / 255.0
    return batch.transpose(0, 3, 1, 2)


def _forward_batch(model: CnnModel, x: np.ndarray) -> np.ndarray:
    for layer in model.layers:
        x = layer.forward(x)
    return x


def forward(model: CnnModel, patch) -> np.ndarray:
    """Probability vector for one patch (resized to the model input side,
    scaled to [0, 1])."""
    return _forward_batch(model, _to_input_batch([patch], model.input_side))[0]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss_and_gradients(model: CnnModel, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy loss and per-layer parameter gradients.

    Returns (loss, grads) where grads[i] is the list of gradients aligned
    with model.layers[i].parameters().
    """
    inputs = []
    a = x
    for layer in model.layers[:-1]:
        inputs.append(a)
        a = layer.forward(a)
    logits = a
    n = x.shape[0]
    log_p = _log_softmax(logits)
    loss = float(-log_p[np.arange(n), y].mean())
    probs = np.exp(log_p)
    grad = probs.copy()
    grad[np.arange(n), y] -= 1.0
    grad /= n
    grads = [[] for _ in model.layers]
    for i in range(len(model.layers) - 2, -1, -1):
        grad, param_grads = model.layers[i].backward(inputs[i], grad)
        grads[i] = param_grads
    return loss, grads


def compute_loss(model: CnnModel, x: np.ndarray, y: np.ndarray) -> float:
    """Mean cross-entropy of a batch, without gradients."""
    a = x
    for layer in model.layers[:-1]:
        a = layer.forward(a)
    log_p = _log_softmax(a)
    return float(-log_p[np.arange(x.shape[0]), y].mean())


def backward_and_step(model: CnnModel, batch, cfg: TrainConfig, velocities=None) -> float:
    """One SGD-with-momentum step on a batch of (patch, label) pairs.

    Returns the pre-update mean cross-entropy.  ``velocities`` (as built by
    ``init_velocities``) carries momentum state across steps; omitting it
    performs a momentum-free step.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    x = _to_input_batch([p for p, _ in batch], model.input_side)
    y = np.asarray([label for _, label in batch], dtype=np.intp)
    loss, grads = loss_and_gradients(model, x, y)
    if velocities is None:
        velocities = init_velocities(model)
    _apply_update(model, grads, velocities, cfg)
    return loss


def init_velocities(model: CnnModel):
    return [[np.zeros_like(p) for p in layer.parameters()] for layer in model.layers]


def _apply_update(model, grads, velocities, cfg):
    for layer, layer_grads, layer_vel in zip(model.layers, grads, velocities):
        for p, g, v in zip(layer.parameters(), layer_grads, layer_vel):
            v *= cfg.momentum
            v -= cfg.learning_rate * g
            p += v


def train_cnn(dataset, model: CnnModel, cfg: TrainConfig) -> CnnModel:
    """Train a fresh copy of ``model`` on (patch, label) pairs.

    Parameters are He-uniform initialized from cfg.seed, minibatches are
    reshuffled every epoch from a derived stream, and the loss history
    (epoch, batch, loss) is recorded on the returned model.
    """
    labels = np.asarray([int(label) for _, label in dataset], dtype=np.intp)
    if labels.size == 0 or np.unique(labels).size < 2:
        raise ValueError("training data must contain both classes")
    model = copy.deepcopy(model)
    model.validate()
    model.loss_history = []
    initialize_parameters(model, cfg.seed)
    # resize once up front; keep uint8 and scale per batch
    resized = []
    for p, _ in dataset:
        a = _patch_array(p)
        if a.shape[0] != model.input_side or a.shape[1] != model.input_side:
            a = resize_bilinear(a, model.input_side, model.input_side)
        resized.append(a)
    data = np.stack(resized)
    shuffle_rng = seeding.derive_rng(cfg.seed, seeding.CNN_SHUFFLE)
    velocities = init_velocities(model)
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(labels.size)
        for b, start in enumerate(range(0, labels.size, cfg.batch_size)):
            idx = perm[start : start + cfg.batch_size]
            x = data[idx].astype(np.float64).transpose(0, 3, 1, 2) / 255.0
            loss, grads = loss_and_gradients(model, x, labels[idx])
            _apply_update(model, grads, velocities, cfg)
            model.loss_history.append((epoch, b, loss))
    return model


def predict_image(model: CnnModel, image: np.ndarray, aggregate: str = "mean") -> np.ndarray:
    """Probability vector for a whole lesion crop.

    The crop is tiled into patches, each patch is classified, and the patch
    probabilities are combined: arithmetic mean by default, or "max"
    (positive-class max) or "vote" (majority, mean over one-hot votes).
    """
    patches = extract_patches(image)
    probs = _forward_batch(model, _to_input_batch(patches, model.input_side))
    if aggregate == "mean":
        return probs.mean(axis=0)
    if aggregate == "max":
        i = int(np.argmax(probs[:, 1]))
        return probs[i]
    if aggregate == "vote":
        votes = np.zeros(2)
        for row in probs:
            votes[int(row[1] > 0.5)] += 1.0
        return votes / votes.sum()
    raise ValueError(f"unknown aggregate mode {aggregate!r}")


# --- binary serialization (little-endian; embedded in the model bundle) ----

_LAYER_CODES = {"conv": 0, "relu": 1, "maxpool": 2, "flatten": 3, "dense": 4, "softmax": 5}


def cnn_to_bytes(model: CnnModel) -> bytes:
    buf = bytearray()
    buf += struct.pack("<II", model.input_side, len(model.layers))
    for layer in model.layers:
        if isinstance(layer, Conv3x3):
            buf += struct.pack("<BII", _LAYER_CODES["conv"], layer.in_ch, layer.out_ch)
            buf += layer.weights.astype("<f8").tobytes()
            buf += layer.bias.astype("<f8").tobytes()
        elif isinstance(layer, ReLU):
            buf += struct.pack("<B", _LAYER_CODES["relu"])
        elif isinstance(layer, MaxPool2):
            buf += struct.pack("<B", _LAYER_CODES["maxpool"])
        elif isinstance(layer, Flatten):
            buf += struct.pack("<B", _LAYER_CODES["flatten"])
        elif isinstance(layer, Dense):
            buf += struct.pack("<BII", _LAYER_CODES["dense"], layer.in_features, layer.out_features)
            buf += layer.weights.astype("<f8").tobytes()
            buf += layer.bias.astype("<f8").tobytes()
        elif isinstance(layer, Softmax):
            buf += struct.pack("<B", _LAYER_CODES["softmax"])
        else:
            raise ValueError(f"unserializable layer {type(layer).__name__}")
    return bytes(buf)


def cnn_from_bytes(data: bytes) -> CnnModel:
    input_side, n_layers = struct.unpack_from("<II", data, 0)
    pos = 8
    layers = []
    for _ in range(n_layers):
        (code,) = struct.unpack_from("<B", data, pos)
        pos += 1
        if code == _LAYER_CODES["conv"]:
            in_ch, out_ch = struct.unpack_from("<II", data, pos)
            pos += 8
            layer = Conv3x3(in_ch, out_ch)
            nw = out_ch * in_ch * 9
            layer.weights = np.frombuffer(data, "<f8", nw, pos).reshape(out_ch, in_ch, 3, 3).copy()
            pos += nw * 8
            layer.bias = np.frombuffer(data, "<f8", out_ch, pos).copy()
            pos += out_ch * 8
        elif code == _LAYER_CODES["relu"]:
            layer = ReLU()
        elif code == _LAYER_CODES["maxpool"]:
            layer = MaxPool2()
        elif code == _LAYER_CODES["flatten"]:
            layer = Flatten()
        elif code == _LAYER_CODES["dense"]:
            nin, nout = struct.unpack_from("<II", data, pos)
            pos += 8
            layer = Dense(nin, nout)
            layer.weights = np.frombuffer(data, "<f8", nout * nin, pos).reshape(nout, nin).copy()
            pos += nout * nin * 8
            layer.bias = np.frombuffer(data, "<f8", nout, pos).copy()
            pos += nout * 8
        elif code == _LAYER_CODES["softmax"]:
            layer = Softmax()
        else:
            raise ValueError(f"bad layer code {code}")
        layers.append(layer)
    if pos != len(data):
        raise ValueError("trailing bytes after network data")
    model = CnnModel(layers, input_side)
    model.validate()
    return model
