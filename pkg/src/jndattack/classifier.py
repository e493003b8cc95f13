"""The attacked model: a small convolutional classifier.

Defines the layer-descriptor model spec, parameter initialization, SGD
training, prediction with confidence, input-gradient queries used by the
attacks, and a versioned binary checkpoint format.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError, FormatError, InputError

CHECKPOINT_MAGIC = b"JNDM"
CHECKPOINT_VERSION = 1

PARAMETRIC_KINDS = ("conv", "dense")


@dataclass(frozen=True)
class LayerSpec:
    """One layer descriptor; unused fields stay at their defaults."""

    kind: str
    filters: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    units: int = 0
    factor: float = 1.0

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "conv":
            d.update(filters=self.filters, kernel=self.kernel,
                     stride=self.stride, padding=self.padding)
        elif self.kind == "dense":
            d.update(units=self.units)
        elif self.kind == "scale":
            d.update(factor=self.factor)
        return d

    @staticmethod
    def from_dict(d):
        return LayerSpec(**d)


def conv(filters, kernel, stride=1, padding=0):
    return LayerSpec("conv", filters=filters, kernel=kernel, stride=stride, padding=padding)


def relu():
    return LayerSpec("relu")


def pool():
    return LayerSpec("pool")


def avgpool():
    return LayerSpec("avgpool")


def flatten():
    return LayerSpec("flatten")


def dense(units):
    return LayerSpec("dense", units=units)


def softmax():
    return LayerSpec("softmax")


def scale(factor):
    return LayerSpec("scale", factor=factor)


@dataclass(frozen=True)
class ModelSpec:
    """Ordered layer descriptors plus input shape and class count."""

    input_shape: tuple
    num_classes: int
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))

    def validate(self):
        shape = self.shape_walk()[-1]
        if shape != (self.num_classes,):
            raise ConfigurationError(
                f"final layer produces shape {shape}, expected ({self.num_classes},)"
            )

    def shape_walk(self):
        """Shapes after each layer, starting from the input shape."""
        shapes = [self.input_shape]
        s = self.input_shape
        for layer in self.layers:
            k = layer.kind
            if k == "conv":
                h, w, c = s
                oh = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
                ow = (w + 2 * layer.padding - layer.kernel) // layer.stride + 1
                if oh < 1 or ow < 1:
                    raise ConfigurationError(f"conv kernel {layer.kernel} too large for {h}x{w}")
                s = (oh, ow, layer.filters)
            elif k in ("pool", "avgpool"):
                h, w, c = s
                s = (h // 2, w // 2, c)
            elif k == "flatten":
                s = (int(np.prod(s)),)
            elif k == "dense":
                if len(s) != 1:
                    raise ConfigurationError("dense layer requires a flattened input")
                s = (layer.units,)
            elif k in ("relu", "softmax", "scale"):
                pass
            else:
                raise ConfigurationError(f"unknown layer kind {k!r}")
            shapes.append(s)
        return shapes

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @staticmethod
    def from_dict(d):
        return ModelSpec(
            input_shape=tuple(d["input_shape"]),
            num_classes=int(d["num_classes"]),
            layers=tuple(LayerSpec.from_dict(ld) for ld in d["layers"]),
        )


def desk_model_spec(input_shape=(32, 32, 3), num_classes=10):
    """Default small architecture: two conv/pool stages and a dense head."""
    return ModelSpec(
        input_shape=input_shape,
        num_classes=num_classes,
        layers=(
            conv(8, 3),
            relu(),
            pool(),
            conv(16, 3),
            relu(),
            pool(),
            flatten(),
            dense(num_classes),
            softmax(),
        ),
    )


@dataclass
class LayerParams:
    weights: np.ndarray
    bias: np.ndarray

    def copy(self):
        return LayerParams(self.weights.copy(), self.bias.copy())


def init_parameters(spec: ModelSpec, seed: int):
    """Glorot-uniform weights, zero biases; one entry per layer (None if bare)."""
    rng = np.random.default_rng(seed)
    params = []
    shapes = spec.shape_walk()
    for layer, in_shape in zip(spec.layers, shapes[:-1]):
        if layer.kind == "conv":
            c_in = in_shape[2]
            fan_in = layer.kernel * layer.kernel * c_in
            fan_out = layer.kernel * layer.kernel * layer.filters
            s = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-s, s, size=(layer.filters, layer.kernel, layer.kernel, c_in))
            params.append(LayerParams(w, np.zeros(layer.filters)))
        elif layer.kind == "dense":
            fan_in = in_shape[0]
            fan_out = layer.units
            s = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-s, s, size=(fan_in, layer.units))
            params.append(LayerParams(w, np.zeros(layer.units)))
        else:
            params.append(None)
    return params


@dataclass
class Model:
    """A ModelSpec with its trained (or initial) parameters."""

    spec: ModelSpec
    params: list

    def predict(self, image):
        return predict(self, image)

    def copy_params(self):
        return [p.copy() if p is not None else None for p in self.params]


@dataclass(frozen=True)
class Prediction:
    label: int
    confidence: float
    full_distribution: np.ndarray


@dataclass(frozen=True)
class LossSpec:
    target_label: int
    loss_kind: str = "cross_entropy"


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int
    batch_size: int
    learning_rate: float
    seed: int


def _forward_logits(model: Model, image, image_grad=False, param_grad=False):
    """Build the graph up to the logits; the softmax layer is left to callers."""
    img = np.asarray(image, dtype=np.float64)
    if img.shape != model.spec.input_shape:
        raise DimensionError(
            f"image shape {img.shape} does not match model input {model.spec.input_shape}"
        )
    x = T.Tensor(img, requires_grad=image_grad)
    leaf = x
    param_tensors = []
    for layer, lp in zip(model.spec.layers, model.params):
        k = layer.kind
        if k == "conv":
            w = T.Tensor(lp.weights, requires_grad=param_grad)
            b = T.Tensor(lp.bias, requires_grad=param_grad)
            param_tensors.append((w, b))
            x = T.add(T.conv2d(x, w, stride=layer.stride, padding=layer.padding), b)
        elif k == "dense":
            w = T.Tensor(lp.weights, requires_grad=param_grad)
            b = T.Tensor(lp.bias, requires_grad=param_grad)
            param_tensors.append((w, b))
            x = T.add(T.matmul(x, w), b)
        elif k == "relu":
            x = T.relu(x)
        elif k == "pool":
            x = T.maxpool2(x)
        elif k == "avgpool":
            x = T.avgpool2(x)
        elif k == "flatten":
            x = T.flatten(x)
        elif k == "scale":
            x = T.mul(x, layer.factor)
        elif k == "softmax":
            break
        else:
            raise ConfigurationError(f"unknown layer kind {k!r}")
    return x, leaf, param_tensors


def _probabilities(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max())
    return e / e.sum()


def predict(model: Model, image) -> Prediction:
    """Deterministic forward pass; confidence is the argmax softmax probability."""
    logits, _, _ = _forward_logits(model, image)
    probs = _probabilities(logits.data)
    label = int(np.argmax(probs))
    return Prediction(label=label, confidence=float(probs[label]), full_distribution=probs)


def loss_and_input_gradient(model: Model, image, label: int):
    """One forward/backward pass: prediction, cross-entropy toward ``label``,
    and its gradient w.r.t. every input pixel."""
    logits, leaf, _ = _forward_logits(model, image, image_grad=True)
    ce = T.cross_entropy(logits, label)
    ce.backward(np.asarray(1.0))
    probs = _probabilities(logits.data)
    pred_label = int(np.argmax(probs))
    pred = Prediction(pred_label, float(probs[pred_label]), probs)
    return pred, float(ce.data), leaf.grad


def input_gradient(model: Model, image, loss_spec: LossSpec) -> np.ndarray:
    """Gradient of the configured loss w.r.t. the input image."""
    if loss_spec.loss_kind != "cross_entropy":
        raise ConfigurationError(f"unknown loss kind {loss_spec.loss_kind!r}")
    if not 0 <= loss_spec.target_label < model.spec.num_classes:
        raise DimensionError(f"target label {loss_spec.target_label} out of range")
    _, _, grad = loss_and_input_gradient(model, image, loss_spec.target_label)
    return grad


def logit_gradients(model: Model, image):
    """Logit vector and the input gradient of every class logit.

    One graph is recorded, then backward runs once per class with a
    one-hot seed (DeepFool's per-class sweep)."""
    logits, leaf, _ = _forward_logits(model, image, image_grad=True)
    n = model.spec.num_classes
    grads = np.empty((n,) + model.spec.input_shape)
    for c in range(n):
        seed = np.zeros(n)
        seed[c] = 1.0
        logits.backward(seed)
        grads[c] = leaf.grad
    return logits.data.copy(), grads


def accuracy(model: Model, images, labels) -> float:
    correct = sum(1 for img, y in zip(images, labels) if predict(model, img).label == y)
    return correct / len(labels)


def logit_margins(model: Model, images, labels) -> np.ndarray:
    """Correct-class logit minus the strongest other logit, per image."""
    out = []
    for img, y in zip(images, labels):
        logits, _, _ = _forward_logits(model, img)
        z = logits.data
        others = np.delete(z, y)
        out.append(z[y] - others.max())
    return np.array(out)


def temperature_scale(model: Model, images, labels, target_margin: float):
    """Confidence calibration: divide the final dense layer by a temperature
    so the median correct-class logit margin equals ``target_margin``.

    Leaves predicted labels (and accuracy) unchanged; only softens or
    sharpens the softmax. Returns (calibrated parameters, temperature).
    """
    if target_margin <= 0:
        raise ConfigurationError("target_margin must be positive")
    margins = logit_margins(model, images, labels)
    correct = margins[margins > 0]
    if correct.size == 0:
        raise InputError("no correctly classified calibration images")
    temperature = float(np.median(correct)) / target_margin
    params = model.copy_params()
    dense_idx = max(i for i, lp in enumerate(params) if lp is not None)
    params[dense_idx].weights /= temperature
    params[dense_idx].bias /= temperature
    return params, temperature


def train(model: Model, dataset, schedule: TrainSchedule):
    """Plain minibatch SGD. Returns (parameters, per-epoch accuracy log).

    Deterministic for a fixed seed: the only randomness is the epoch
    shuffle from a seeded generator. The input model's parameters are not
    modified; the returned list is an updated copy.
    """
    images, labels = list(dataset.images), list(dataset.labels)
    if not images:
        raise InputError("training dataset is empty")
    if any(not 0 <= y < model.spec.num_classes for y in labels):
        raise InputError("dataset contains labels outside the model's class range")
    params = model.copy_params()
    work = Model(model.spec, params)
    rng = np.random.default_rng(schedule.seed)
    log = []
    n = len(images)
    for _ in range(schedule.epochs):
        order = rng.permutation(n)
        for start in range(0, n, schedule.batch_size):
            batch = order[start:start + schedule.batch_size]
            grad_sums = None
            for idx in batch:
                logits, _, ptensors = _forward_logits(work, images[idx], param_grad=True)
                ce = T.cross_entropy(logits, labels[idx])
                ce.backward(np.asarray(1.0))
                if grad_sums is None:
                    grad_sums = [[w.grad.copy(), b.grad.copy()] for w, b in ptensors]
                else:
                    for acc, (w, b) in zip(grad_sums, ptensors):
                        acc[0] += w.grad
                        acc[1] += b.grad
            lr = schedule.learning_rate / len(batch)
            it = iter(grad_sums)
            for lp in params:
                if lp is not None:
                    gw, gb = next(it)
                    lp.weights -= lr * gw
                    lp.bias -= lr * gb
        log.append(accuracy(work, images, labels))
    return params, log


def save_checkpoint(model: Model, path):
    """Write magic, u32 version, length-prefixed JSON spec, then raw
    little-endian float64 weight/bias blocks in layer order."""
    spec_json = json.dumps(model.spec.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(spec_json)))
        f.write(spec_json)
        for lp in model.params:
            if lp is not None:
                f.write(np.ascontiguousarray(lp.weights, dtype="<f8").tobytes())
                f.write(np.ascontiguousarray(lp.bias, dtype="<f8").tobytes())


def _param_shapes(spec: ModelSpec):
    shapes = []
    for layer, in_shape in zip(spec.layers, spec.shape_walk()[:-1]):
        if layer.kind == "conv":
            shapes.append(((layer.filters, layer.kernel, layer.kernel, in_shape[2]),
                           (layer.filters,)))
        elif layer.kind == "dense":
            shapes.append(((in_shape[0], layer.units), (layer.units,)))
        else:
            shapes.append(None)
    return shapes


def load_checkpoint(path) -> Model:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:4]!r}")
    if len(blob) < 12:
        raise FormatError("checkpoint truncated in header")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint version {version} != supported {CHECKPOINT_VERSION}")
    (spec_len,) = struct.unpack_from("<I", blob, 8)
    if len(blob) < 12 + spec_len:
        raise FormatError("checkpoint truncated in model spec")
    try:
        spec = ModelSpec.from_dict(json.loads(blob[12:12 + spec_len].decode("utf-8")))
        spec.validate()
    except (ValueError, KeyError, TypeError, ConfigurationError) as exc:
        raise FormatError(f"invalid model spec in checkpoint: {exc}") from exc
    offset = 12 + spec_len
    params = []
    for shapes in _param_shapes(spec):
        if shapes is None:
            params.append(None)
            continue
        wshape, bshape = shapes
        nw, nb = int(np.prod(wshape)), int(np.prod(bshape))
        need = 8 * (nw + nb)
        if len(blob) < offset + need:
            raise FormatError("checkpoint truncated in weight data")
        w = np.frombuffer(blob, dtype="<f8", count=nw, offset=offset).reshape(wshape).copy()
        offset += 8 * nw
        b = np.frombuffer(blob, dtype="<f8", count=nb, offset=offset).reshape(bshape).copy()
        offset += 8 * nb
        params.append(LayerParams(w, b))
    if offset != len(blob):
        raise FormatError(f"checkpoint has {len(blob) - offset} trailing bytes")
    return Model(spec, params)
