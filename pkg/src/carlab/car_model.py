"""CNN autoencoder resizer: paired convolutional autoencoders with a shared latent layer.

The low-array encoder and the high-array encoder pool down to the same
flattened length, so a single dense layer (same weights for both paths)
produces the latent vector. Training couples the two autoencoders through
that shared layer, a cross-reconstruction term (low input -> high output) and
a latent alignment term. At inference only ``enc_low -> shared -> dec_high``
is evaluated.

Channel outputs use the ``(N^2, T, 2)`` layout; the network works on
``(2, N^2, T)`` planes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from carlab.errors import (
    ConfigInvalid,
    DivergenceDetected,
    EvenKernelLength,
    ShapeArithmeticError,
    ShapeMismatch,
)
from carlab.nn import checkpoint
from carlab.nn.layers import Conv2D, Dense, Flatten, MeanPool2D, ReLU, Reshape, Upsample2D
from carlab.nn.losses import mse_loss
from carlab.nn.network import ParamStore, Sequential, corrupt
from carlab.nn.optim import Adam

LOSS_TERMS = ("rec_low", "rec_high", "cross", "align")


@dataclass
class CarConfig:
    latent_dim: int = 64
    filters: int = 8
    kernel_h: int = 3
    kernel_t: int = 5
    corruption: float = 0.1
    lambda_rec_low: float = 1.0
    lambda_rec_high: float = 1.0
    lambda_cross: float = 1.0
    lambda_align: float = 1.0
    n_low: int = 4
    n_high: int = 16
    time_T: int = 64
    low_stages: int = 2
    epochs: int = 2
    batch_size: int = 32
    learning_rate: float = 0.001
    seed: int = 0
    dtype: str = "float32"

    @property
    def high_stages(self) -> int:
        return self.low_stages + int(round(math.log2(self.n_high / self.n_low)))

    @property
    def lambdas(self) -> dict[str, float]:
        return {"rec_low": self.lambda_rec_low, "rec_high": self.lambda_rec_high,
                "cross": self.lambda_cross, "align": self.lambda_align}

    def validate(self) -> "CarConfig":
        lam = self.lambdas
        if any(v < 0 for v in lam.values()):
            raise ConfigInvalid("loss weights must be non-negative")
        if lam["cross"] + lam["align"] <= 0:
            raise ConfigInvalid("lambda_cross + lambda_align must be positive to tie the latents")
        if self.kernel_h % 2 == 0 or self.kernel_t % 2 == 0:
            raise EvenKernelLength(f"kernel sides must be odd, got ({self.kernel_h}, {self.kernel_t})")
        if min(self.filters, self.latent_dim, self.n_low, self.batch_size, self.low_stages) < 1:
            raise ConfigInvalid("filters, latent_dim, n_low, batch_size, low_stages must be >= 1")
        if not 0.0 <= self.corruption <= 1.0:
            raise ConfigInvalid("corruption must lie in [0, 1]")
        ratio = self.n_high / self.n_low
        if self.n_high <= self.n_low or ratio != 2 ** round(math.log2(ratio)):
            raise ShapeArithmeticError(
                f"n_high / n_low must be a power of two > 1, got {self.n_high}/{self.n_low}"
            )
        for name, rows, stages in (("low", self.n_low**2, self.low_stages),
                                   ("high", self.n_high**2, self.high_stages)):
            step = 2**stages
            if rows % step or self.time_T % step:
                raise ShapeArithmeticError(
                    f"{name} input ({rows}, {self.time_T}) does not pool {stages} times by 2"
                )
        return self

    @property
    def flat_dim(self) -> int:
        return self.filters * (self.n_low**2 * self.time_T) // 4**self.low_stages

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigInvalid(f"unknown car keys: {sorted(unknown)}")
        return cls(**d)


def _encoder(in_rows, stages, cfg, rng, dtype, name):
    layers, ch = [], 2
    for _ in range(stages):
        layers += [Conv2D(ch, cfg.filters, (cfg.kernel_h, cfg.kernel_t), rng, dtype), ReLU(),
                   MeanPool2D((2, 2))]
        ch = cfg.filters
    layers.append(Flatten())
    return Sequential(layers, name)


def _decoder(rows, stages, cfg, rng, dtype, name):
    step = 2**stages
    seed_shape = (cfg.filters, rows // step, cfg.time_T // step)
    layers = [Dense(cfg.latent_dim, int(np.prod(seed_shape)), rng, dtype), ReLU(),
              Reshape(seed_shape)]
    for _ in range(stages):
        layers += [Upsample2D((2, 2)),
                   Conv2D(cfg.filters, cfg.filters, (cfg.kernel_h, cfg.kernel_t), rng, dtype),
                   ReLU()]
    layers.append(Conv2D(cfg.filters, 2, (cfg.kernel_h, cfg.kernel_t), rng, dtype))
    return Sequential(layers, name)


def to_planes(x):
    """``(S, N^2, T, 2)`` channel outputs -> ``(S, 2, N^2, T)`` network input."""
    return np.ascontiguousarray(np.moveaxis(x, -1, -3))


def from_planes(x):
    return np.ascontiguousarray(np.moveaxis(x, -3, -1))


@dataclass
class TrainTrace:
    batch_losses: list[dict[str, float]] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)


class CarModel:
    def __init__(self, cfg: CarConfig):
        self.cfg = cfg.validate()
        dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng([cfg.seed, 0xCA5])
        self.enc_low = _encoder(cfg.n_low**2, cfg.low_stages, cfg, rng, dtype, "enc_low")
        self.enc_high = _encoder(cfg.n_high**2, cfg.high_stages, cfg, rng, dtype, "enc_high")
        self.shared_latent = Dense(cfg.flat_dim, cfg.latent_dim, rng, dtype)
        self.dec_low = _decoder(cfg.n_low**2, cfg.low_stages, cfg, rng, dtype, "dec_low")
        self.dec_high = _decoder(cfg.n_high**2, cfg.high_stages, cfg, rng, dtype, "dec_high")
        self.store = ParamStore()
        self.store.add_stack("enc_low", self.enc_low)
        self.store.add_stack("enc_high", self.enc_high)
        self.store.add_layer("shared_latent", self.shared_latent)
        self.store.add_stack("dec_low", self.dec_low)
        self.store.add_stack("dec_high", self.dec_high)

    @property
    def dtype(self):
        return np.dtype(self.cfg.dtype)

    def parameters(self) -> ParamStore:
        return self.store

    def layer_specs(self):
        return {name: getattr(self, name).specs() for name in ("enc_low", "enc_high", "dec_low", "dec_high")} | {
            "shared_latent": [self.shared_latent.spec()]
        }

    # -- latent codes ------------------------------------------------------

    def encode_low(self, planes):
        return self.shared_latent.forward(self.enc_low(planes))[0]

    def encode_high(self, planes):
        return self.shared_latent.forward(self.enc_high(planes))[0]

    # -- training objective ------------------------------------------------

    def forward_train(self, in_low, in_high, x_low, x_high):
        """Loss terms for (possibly corrupted) inputs against clean targets, plus a backprop cache."""
        B = in_low.shape[0]
        f_low, c_el = self.enc_low.forward(in_low)
        f_high, c_eh = self.enc_high.forward(in_high)
        z, c_z = self.shared_latent.forward(np.concatenate([f_low, f_high]))
        z_low, z_high = z[:B], z[B:]
        r_low, c_dl = self.dec_low.forward(z_low)
        r_high, c_dh = self.dec_high.forward(z)  # rows [:B] cross, [B:] auto
        terms, grads = {}, {}
        terms["rec_low"], grads["rec_low"] = mse_loss(r_low, x_low)
        terms["rec_high"], grads["rec_high"] = mse_loss(r_high[B:], x_high)
        terms["cross"], grads["cross"] = mse_loss(r_high[:B], x_high)
        gap = z_low.astype(np.float64) - z_high.astype(np.float64)
        terms["align"] = float(np.mean(gap * gap))
        grads["align"] = (2.0 / gap.size) * gap
        lam = self.cfg.lambdas
        total = sum(lam[k] * terms[k] for k in LOSS_TERMS)
        cache = (B, c_el, c_eh, c_z, c_dl, c_dh, grads, z.dtype)
        return terms, total, cache

    def backward_train(self, cache, scale=1.0):
        B, c_el, c_eh, c_z, c_dl, c_dh, grads, dt = cache
        lam = {k: v * scale for k, v in self.cfg.lambdas.items()}
        d_rhigh = np.concatenate([lam["cross"] * grads["cross"], lam["rec_high"] * grads["rec_high"]])
        dz = self.dec_high.backward(d_rhigh.astype(dt, copy=False), c_dh).astype(np.float64)
        dz[:B] += self.dec_low.backward((lam["rec_low"] * grads["rec_low"]).astype(dt, copy=False), c_dl)
        dz[:B] += lam["align"] * grads["align"]
        dz[B:] -= lam["align"] * grads["align"]
        df = self.shared_latent.backward(dz.astype(dt), c_z)
        self.enc_low.backward(df[:B], c_el, need_input=False)
        self.enc_high.backward(df[B:], c_eh, need_input=False)

    # -- inference -----------------------------------------------------------

    def map_planes(self, planes_low):
        return self.dec_high(self.encode_low(planes_low))


def build_car(cfg: CarConfig | None = None) -> CarModel:
    return CarModel(cfg or CarConfig())


def parameter_count(model: CarModel) -> int:
    return model.store.count()


def _batches(n, batch, rng):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch):
        yield order[start:start + batch]


def train_car(model: CarModel, low, high, epochs=None, batch_size=None, learning_rate=None,
              rng=None, log=None) -> TrainTrace:
    """Train on paired channel outputs ``low (S, n_low^2, T, 2)`` / ``high (S, n_high^2, T, 2)``.

    Inputs are corrupted per batch; targets stay clean. Adam updates every
    parameter, the shared latent layer receiving gradient from both paths.
    """
    cfg = model.cfg
    epochs = cfg.epochs if epochs is None else epochs
    batch_size = cfg.batch_size if batch_size is None else batch_size
    learning_rate = cfg.learning_rate if learning_rate is None else learning_rate
    if low.shape[0] != high.shape[0]:
        raise ShapeMismatch("low and high sets must pair up sample for sample")
    _check_layout(low, cfg.n_low, cfg.time_T)
    _check_layout(high, cfg.n_high, cfg.time_T)
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, 0x7A1])
    opt = Adam(model.store, learning_rate)
    trace = TrainTrace()
    dt = model.dtype
    for epoch in range(epochs):
        totals = []
        for idx in _batches(low.shape[0], batch_size, rng):
            idx = np.sort(idx)
            x_low = to_planes(np.asarray(low[idx], dtype=dt))
            x_high = to_planes(np.asarray(high[idx], dtype=dt))
            in_low = corrupt(x_low, cfg.corruption, rng)
            in_high = corrupt(x_high, cfg.corruption, rng)
            model.store.zero_grad()
            terms, total, cache = model.forward_train(in_low, in_high, x_low, x_high)
            if not all(math.isfinite(v) for v in terms.values()):
                raise DivergenceDetected(f"non-finite CAR loss at epoch {epoch}: {terms}")
            model.backward_train(cache)
            opt.step()
            trace.batch_losses.append({**terms, "total": total})
            totals.append(total)
        trace.epoch_losses.append(float(np.mean(totals)))
        if log is not None:
            log.info("car epoch %d/%d loss %.6f", epoch + 1, epochs, trace.epoch_losses[-1])
    return trace


def _check_layout(x, n_side, T):
    if x.ndim != 4 or x.shape[1:] != (n_side**2, T, 2):
        raise ShapeMismatch(f"expected (S, {n_side**2}, {T}, 2) channel outputs, got {x.shape}")


def map_low_to_high(model: CarModel, x_low, batch_size: int = 64):
    """Map low-array channel output(s) to the high-array layout via ``enc_low -> dec_high``.

    Accepts one ``(n_low^2, T, 2)`` tensor or a stack of them; never applies
    corruption and never touches the decoders' training state.
    """
    cfg = model.cfg
    x = np.asarray(x_low)
    single = x.ndim == 3
    if single:
        x = x[None]
    _check_layout(x, cfg.n_low, cfg.time_T)
    out = np.empty((x.shape[0], cfg.n_high**2, cfg.time_T, 2), dtype=model.dtype)
    for start in range(0, x.shape[0], batch_size):
        chunk = to_planes(np.asarray(x[start:start + batch_size], dtype=model.dtype))
        out[start:start + batch_size] = from_planes(model.map_planes(chunk))
    return out[0] if single else out


def latent_gap(model: CarModel, x_low, x_high, batch_size: int = 64) -> float:
    """Per-element mean squared distance between the low- and high-path latent codes of paired inputs."""
    total, n = 0.0, x_low.shape[0]
    dt = model.dtype
    for start in range(0, n, batch_size):
        zl = model.encode_low(to_planes(np.asarray(x_low[start:start + batch_size], dtype=dt)))
        zh = model.encode_high(to_planes(np.asarray(x_high[start:start + batch_size], dtype=dt)))
        total += float(np.sum((zl.astype(np.float64) - zh) ** 2))
    return total / (n * model.cfg.latent_dim)


def row_replication_resize(x_low, n_low: int, n_high: int):
    """Nearest-neighbour resize of the element grid: high element ``(p, q)`` copies low ``(p*n_low//n_high, q*n_low//n_high)``."""
    p, q = np.divmod(np.arange(n_high * n_high), n_high)
    src = (p * n_low // n_high) * n_low + (q * n_low // n_high)
    return np.asarray(x_low)[..., src, :, :]


def mapping_mse(model: CarModel, x_low, x_high, batch_size: int = 64) -> tuple[float, float]:
    """``(CAR mapping MSE, row-replication baseline MSE)`` against the true high outputs."""
    cfg = model.cfg
    car_se = base_se = 0.0
    n = x_low.shape[0]
    for start in range(0, n, batch_size):
        lo = np.asarray(x_low[start:start + batch_size])
        hi = np.asarray(x_high[start:start + batch_size], dtype=np.float64)
        car_se += float(np.sum((map_low_to_high(model, lo, batch_size).astype(np.float64) - hi) ** 2))
        base = row_replication_resize(lo, cfg.n_low, cfg.n_high).astype(np.float64)
        base_se += float(np.sum((base - hi) ** 2))
    count = n * cfg.n_high**2 * cfg.time_T * 2
    return car_se / count, base_se / count


def save_weights(model: CarModel, path):
    return checkpoint.save_checkpoint(path, "car", model.cfg.to_dict(), model.layer_specs(), model.store)


def load_weights(path) -> CarModel:
    header, arrays = checkpoint.read_checkpoint(path)
    if header.get("kind") != "car":
        raise checkpoint.CorruptFile(f"checkpoint holds a {header.get('kind')!r} model, not a CAR")
    model = build_car(CarConfig.from_dict(header["config"]))
    checkpoint.restore_params(model.store, arrays)
    return model


class CarProbe:
    """Grad-check adapter: the total CAR loss on fixed uncorrupted pairs."""

    def __init__(self, model: CarModel):
        self.model = model

    def parameters(self):
        return self.model.store

    def forward(self, inputs):
        x_low, x_high = inputs
        _, total, cache = self.model.forward_train(x_low, x_high, x_low, x_high)
        return np.array(total), cache

    def backward(self, dout, cache, need_input=True):
        self.model.backward_train(cache, scale=float(dout))


def scalar_objective(out):
    return float(out), 1.0
