"""Binary LoS/NLoS CNN classifier over channel-output tensors."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from carlab.car_model import to_planes
from carlab.errors import (
    ConfigInvalid,
    DivergenceDetected,
    EmptyTestSet,
    EvenKernelLength,
    ShapeArithmeticError,
    ShapeMismatch,
)
from carlab.nn import checkpoint
from carlab.nn.layers import Conv2D, Dense, Flatten, MeanPool2D, ReLU, Sigmoid
from carlab.nn.losses import bce_loss
from carlab.nn.network import ParamStore, Sequential
from carlab.nn.optim import SGD

STAGES = 2


@dataclass
class ClassifierConfig:
    filters: int = 8
    kernel_h: int = 3
    kernel_t: int = 5
    hidden: int = 32
    input_rows: int = 256
    input_T: int = 64
    epochs: int = 15
    batch_size: int = 32
    learning_rate: float = 0.001
    threshold: float = 0.5
    seed: int = 0
    dtype: str = "float32"

    def validate(self) -> "ClassifierConfig":
        if self.kernel_h % 2 == 0 or self.kernel_t % 2 == 0:
            raise EvenKernelLength(f"kernel sides must be odd, got ({self.kernel_h}, {self.kernel_t})")
        if min(self.filters, self.hidden, self.batch_size, self.input_rows, self.input_T) < 1:
            raise ConfigInvalid("filters, hidden, batch_size and input sizes must be >= 1")
        step = 2**STAGES
        if self.input_rows % step or self.input_T % step:
            raise ShapeArithmeticError(
                f"input ({self.input_rows}, {self.input_T}) must be divisible by {step}"
            )
        if not 0.0 < self.threshold < 1.0:
            raise ConfigInvalid("threshold must lie in (0, 1)")
        return self

    @property
    def flat_dim(self) -> int:
        return self.filters * self.input_rows * self.input_T // 4**STAGES

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigInvalid(f"unknown classifier keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ClassifierTrace:
    epoch_losses: list[float] = field(default_factory=list)
    epoch_accuracies: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


class Classifier:
    def __init__(self, cfg: ClassifierConfig):
        self.cfg = cfg.validate()
        dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng([cfg.seed, 0xC1F])
        layers, ch = [], 2
        for _ in range(STAGES):
            layers += [Conv2D(ch, cfg.filters, (cfg.kernel_h, cfg.kernel_t), rng, dtype), ReLU(),
                       MeanPool2D((2, 2))]
            ch = cfg.filters
        layers += [Flatten(), Dense(cfg.flat_dim, cfg.hidden, rng, dtype), ReLU(),
                   Dense(cfg.hidden, 1, rng, dtype), Sigmoid()]
        self.net = Sequential(layers, "clf")
        self.store = ParamStore()
        self.store.add_stack("clf", self.net)

    @property
    def dtype(self):
        return np.dtype(self.cfg.dtype)

    def parameters(self) -> ParamStore:
        return self.store

    def forward(self, planes):
        out, caches = self.net.forward(planes)
        return out[:, 0], caches

    def backward(self, dout, caches, need_input=True):
        return self.net.backward(dout[:, None], caches, need_input=need_input)

    def _check(self, x):
        if x.ndim != 4 or x.shape[1:] != (self.cfg.input_rows, self.cfg.input_T, 2):
            raise ShapeMismatch(
                f"expected (S, {self.cfg.input_rows}, {self.cfg.input_T}, 2) inputs, got {x.shape}"
            )


def build_classifier(cfg: ClassifierConfig | None = None) -> Classifier:
    return Classifier(cfg or ClassifierConfig())


def parameter_count(model: Classifier) -> int:
    return model.store.count()


def train_classifier(model: Classifier, inputs, labels, epochs=None, batch_size=None,
                     learning_rate=None, rng=None, log=None) -> ClassifierTrace:
    """Mini-batch SGD on binary cross-entropy. ``inputs`` are ``(S, N^2, T, 2)`` channel outputs."""
    cfg = model.cfg
    epochs = cfg.epochs if epochs is None else epochs
    batch_size = cfg.batch_size if batch_size is None else batch_size
    learning_rate = cfg.learning_rate if learning_rate is None else learning_rate
    model._check(inputs)
    labels = np.asarray(labels)
    if labels.shape != (inputs.shape[0],):
        raise ShapeMismatch("one label per input sample is required")
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, 0x7A2])
    opt = SGD(model.store, learning_rate)
    trace = ClassifierTrace()
    n = inputs.shape[0]
    for epoch in range(epochs):
        loss_sum, correct = 0.0, 0
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = np.sort(order[start:start + batch_size])
            x = to_planes(np.asarray(inputs[idx], dtype=model.dtype))
            y = labels[idx]
            model.store.zero_grad()
            p, caches = model.forward(x)
            loss, dp = bce_loss(p, y)
            if not math.isfinite(loss):
                raise DivergenceDetected(f"non-finite classifier loss at epoch {epoch}")
            model.backward(dp.astype(model.dtype), caches, need_input=False)
            opt.step()
            loss_sum += loss * len(idx)
            correct += int(np.sum((p >= cfg.threshold) == (y == 1)))
        trace.epoch_losses.append(loss_sum / n)
        trace.epoch_accuracies.append(correct / n)
        if log is not None:
            log.info("clf epoch %d/%d loss %.6f acc %.4f", epoch + 1, epochs,
                     trace.epoch_losses[-1], trace.epoch_accuracies[-1])
    return trace


def predict_proba(model: Classifier, inputs, batch_size: int = 128) -> np.ndarray:
    x = np.asarray(inputs)
    model._check(x)
    out = np.empty(x.shape[0], dtype=np.float64)
    for start in range(0, x.shape[0], batch_size):
        chunk = to_planes(np.asarray(x[start:start + batch_size], dtype=model.dtype))
        out[start:start + batch_size] = model.forward(chunk)[0]
    return out


def predict(model: Classifier, inputs, threshold: float | None = None) -> np.ndarray:
    """Hard labels; an output exactly at the threshold predicts 1 (LoS)."""
    threshold = model.cfg.threshold if threshold is None else threshold
    return (predict_proba(model, inputs) >= threshold).astype(np.uint8)


def confusion(pred, labels) -> EvalResult:
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(labels).astype(bool)
    if truth.size == 0:
        raise EmptyTestSet("cannot score an empty test set")
    tp = int(np.sum(pred & truth))
    tn = int(np.sum(~pred & ~truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    return EvalResult((tp + tn) / truth.size, tp, tn, fp, fn)


def evaluate(model: Classifier, inputs, labels, threshold: float | None = None) -> EvalResult:
    if len(labels) == 0:
        raise EmptyTestSet("cannot score an empty test set")
    return confusion(predict(model, inputs, threshold), labels)


def save_weights(model: Classifier, path):
    layers = {"clf": model.net.specs()}
    return checkpoint.save_checkpoint(path, "classifier", model.cfg.to_dict(), layers, model.store)


def load_weights(path) -> Classifier:
    header, arrays = checkpoint.read_checkpoint(path)
    if header.get("kind") != "classifier":
        raise checkpoint.CorruptFile(f"checkpoint holds a {header.get('kind')!r} model, not a classifier")
    model = build_classifier(ClassifierConfig.from_dict(header["config"]))
    checkpoint.restore_params(model.store, arrays)
    return model


class ClassifierProbe:
    """Grad-check adapter: mean BCE of the classifier on fixed inputs and labels."""

    def __init__(self, model: Classifier, labels):
        self.model, self.labels = model, np.asarray(labels)

    def parameters(self):
        return self.model.store

    def forward(self, planes):
        p, caches = self.model.forward(planes)
        loss, dp = bce_loss(p, self.labels)
        return np.array(loss), (caches, dp)

    def backward(self, dout, cache, need_input=True):
        caches, dp = cache
        return self.model.backward(float(dout) * dp, caches, need_input=need_input)
