"""Alternating adversarial training with Adam, prior refresh, checkpoints.

Each batch takes one discriminator step (maximizing the adversarial value
with the generator frozen via detached features) followed by one generator
step (full composite objective with the discriminator frozen).  Videos of
different lengths are processed sequentially and their losses averaged
into one scalar per step, so gradients accumulate across the batch before
the single optimizer update.

Checkpoint layout (little-endian):

    magic    4 bytes  b"GSTC"
    version  u32      1
    config   u32 length + UTF-8 JSON of the training configuration
    epoch    u32
    scaler   f64 y_min, f64 y_max
    prior    u32 dim | f64*dim mu | f64*dim sigma | u32 refresh_count
             | u32 last_refresh_epoch | u32 has_uint32 | u32 uinteger
             | 16-byte PCG64 state | 16-byte PCG64 inc
    params   u32 count, then per parameter (in the order of
             ModelParams.named_all): u32 name length | name UTF-8
             | u32 ndim | u32*ndim dims | f32 data
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from nrvqa import autograd as ag
from nrvqa.autograd import Tensor
from nrvqa.features import MosScaler, read_feature_file
from nrvqa.model import ModelConfig, ModelParams, forward
from nrvqa.regularizer import GaussianPrior, discriminate, refresh_prior, sample_prior

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"GSTC"
CHECKPOINT_VERSION = 1


class NumericsError(RuntimeError):
    """A loss component or gradient went NaN/Inf."""


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    lambda1: float = 0.5
    lambda2: float = 0.05
    learning_rate: float = 1e-4
    batch_size: int = 128
    epochs: int = 200
    refresh_period: int = 20
    seed: int = 0
    concat_no_attention: bool = False
    no_distribution: bool = False
    no_pyramid: bool = False
    non_saturating_gan: bool = False
    fusion_lambda: float = 0.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.refresh_period < 1:
            raise ValueError("refresh period must be at least 1")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")
        if self.fusion_lambda < 0:
            raise ValueError("fusion weight must be nonnegative")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            concat_no_attention=self.concat_no_attention,
            no_distribution=self.no_distribution,
            no_pyramid=self.no_pyramid,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)


class Adam:
    """Bias-corrected Adam over a fixed list of (name, tensor) parameters."""

    def __init__(self, named_params, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.named_params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named_params}

    def grads_finite(self) -> bool:
        return all(
            p.grad is None or np.all(np.isfinite(p.grad))
            for _, p in self.named_params
        )

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.named_params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for _, p in self.named_params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _mean_scalar(terms) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = ag.add(total, t)
    return ag.mul(total, 1.0 / len(terms))


def _check_finite(name: str, value: Tensor):
    if not np.all(np.isfinite(value.data)):
        raise NumericsError(f"loss component {name} is not finite: {value.data}")


def composite_loss(outputs, mos_norm, d_real, d_fake, config: TrainConfig):
    """Generator and discriminator objectives for one batch.

    Returns (generator loss, discriminator loss, components dict).  The
    discriminator maximizes the adversarial value, so its loss is the
    negated value; with the distribution branch ablated both adversarial
    terms and the kernel regression drop out of the generator loss.
    """
    l_vid = _mean_scalar([
        ag.absval(ag.sub(out.q_vid, Tensor(np.asarray(y))))
        for out, y in zip(outputs, mos_norm)
    ])
    _check_finite("l_vid", l_vid)
    if config.no_distribution:
        components = {"l_vid": l_vid.item(), "l_reg": 0.0,
                      "r_gan": 0.0, "d_loss": 0.0}
        return l_vid, None, components

    l_reg = _mean_scalar([
        ag.absval(ag.sub(out.q_reg, Tensor(np.asarray(y))))
        for out, y in zip(outputs, mos_norm)
    ])
    one = Tensor(np.asarray(1.0))
    r_gan = _mean_scalar([
        ag.add(ag.log(dr), ag.log(ag.sub(one, df)))
        for dr, df in zip(d_real, d_fake)
    ])
    _check_finite("l_reg", l_reg)
    _check_finite("r_gan", r_gan)
    if config.non_saturating_gan:
        adversarial = _mean_scalar([ag.neg(ag.log(df)) for df in d_fake])
    else:
        adversarial = r_gan
    gen_loss = ag.add(
        ag.add(l_vid, ag.mul(l_reg, config.lambda1)),
        ag.mul(adversarial, config.lambda2),
    )
    disc_loss = ag.neg(r_gan)
    components = {"l_vid": l_vid.item(), "l_reg": l_reg.item(),
                  "r_gan": r_gan.item(), "d_loss": disc_loss.item()}
    return gen_loss, disc_loss, components


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

@dataclass
class StepStats:
    l_vid: float
    l_reg: float
    r_gan: float
    d_loss: float
    rejected: bool = False


def discriminator_phase(outputs, targets, z, params: ModelParams,
                        adam_d: Adam, config: TrainConfig):
    """Update only the critic; the generator is frozen via detached features."""
    n = len(outputs)
    d_real = [discriminate(Tensor(z[i]), params.disc) for i in range(n)]
    d_fake = [discriminate(out.f_avg.detach(), params.disc) for out in outputs]
    try:
        _, disc_loss, _ = composite_loss(outputs, targets, d_real, d_fake, config)
        ag.backward(disc_loss)
        if not adam_d.grads_finite():
            raise NumericsError("non-finite discriminator gradient")
        adam_d.step()
    finally:
        adam_d.zero_grad()


def generator_phase(outputs, targets, z, params: ModelParams,
                    adam_g: Adam, config: TrainConfig) -> dict:
    """Update everything but the critic; fresh critic outputs, frozen critic."""
    if config.no_distribution:
        d_real, d_fake = [], []
    else:
        n = len(outputs)
        d_real = [discriminate(Tensor(z[i]), params.disc) for i in range(n)]
        d_fake = [discriminate(out.f_avg, params.disc) for out in outputs]
    try:
        gen_loss, _, components = composite_loss(outputs, targets, d_real, d_fake, config)
        ag.backward(gen_loss)
        if not adam_g.grads_finite():
            raise NumericsError("non-finite generator gradient")
        adam_g.step()
    finally:
        adam_g.zero_grad()
        # generator backward also reaches the frozen critic's tensors
        for _, p in params.named_discriminator():
            p.zero_grad()
    return components


def train_step(batch, targets, params: ModelParams, adam_g: Adam, adam_d: Adam,
               prior: GaussianPrior, config: TrainConfig) -> StepStats:
    """One discriminator update then one generator update on a batch.

    `batch` is a list of FeatureSequence, `targets` the matching normalized
    scores.  A non-finite loss or gradient rejects the step (parameters
    stay untouched) and is reported instead of raised.
    """
    outputs = [forward(params, seq) for seq in batch]
    z = None if config.no_distribution else sample_prior(prior, len(batch))
    try:
        if not config.no_distribution:
            discriminator_phase(outputs, targets, z, params, adam_d, config)
        components = generator_phase(outputs, targets, z, params, adam_g, config)
    except NumericsError as err:
        logger.warning("step rejected: %s", err)
        return StepStats(float("nan"), float("nan"), float("nan"),
                         float("nan"), rejected=True)
    return StepStats(**components)


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    l_vid: float
    l_reg: float
    r_gan: float
    d_loss: float
    rejected_steps: int = 0


@dataclass
class Checkpoint:
    params: ModelParams
    prior: GaussianPrior
    scaler: MosScaler
    config: TrainConfig
    epoch: int


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list


def learned_sigma(params: ModelParams) -> np.ndarray:
    return np.logaddexp(0.0, params.reg_rho.data) + 1e-3


def train(records, config: TrainConfig, log_path=None) -> TrainResult:
    """Run the full schedule over manifest records; returns the final-epoch
    checkpoint (no early stopping) and the per-epoch loss history."""
    if not records:
        raise ValueError("manifest is empty")
    seq_model, seq_prior, seq_shuffle = np.random.SeedSequence(config.seed).spawn(3)
    params = ModelParams.init(seq_model, config.model_config())
    prior = GaussianPrior.standard(seed=seq_prior)
    scaler = MosScaler.fit([r.mos for r in records])
    videos = [read_feature_file(r.feature_path) for r in records]
    targets = [scaler.normalize(r.mos) for r in records]
    adam_g = Adam(params.named_generator(), config.learning_rate)
    adam_d = Adam(params.named_discriminator(), config.learning_rate)
    shuffle_rng = np.random.default_rng(seq_shuffle)

    history: list[EpochStats] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        if log_fh:
            log_fh.write("epoch,l_vid,l_reg,r_gan,d_loss\n")
        for epoch in range(1, config.epochs + 1):
            order = shuffle_rng.permutation(len(videos))
            sums = np.zeros(4)
            steps = 0
            rejected = 0
            for lo in range(0, len(order), config.batch_size):
                idx = order[lo:lo + config.batch_size]
                stats = train_step(
                    [videos[i] for i in idx], [targets[i] for i in idx],
                    params, adam_g, adam_d, prior, config,
                )
                if stats.rejected:
                    rejected += 1
                    continue
                sums += [stats.l_vid, stats.l_reg, stats.r_gan, stats.d_loss]
                steps += 1
            mean = sums / max(steps, 1)
            epoch_stats = EpochStats(epoch, *mean, rejected_steps=rejected)
            history.append(epoch_stats)
            if log_fh:
                log_fh.write(
                    f"{epoch},{mean[0]:.8f},{mean[1]:.8f},{mean[2]:.8f},{mean[3]:.8f}\n"
                )
            if not config.no_distribution and epoch % config.refresh_period == 0:
                refresh_prior(prior, params.reg_mu.data, learned_sigma(params),
                              epoch, config.refresh_period)
                logger.info("epoch %d: prior refreshed (%d so far)",
                            epoch, prior.refresh_count)
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(Checkpoint(params, prior, scaler, config, config.epochs),
                       history)


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------

def save_checkpoint(path, ckpt: Checkpoint):
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    config_json = json.dumps(ckpt.config.to_dict(), sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(config_json)) + config_json
    blob += struct.pack("<I", ckpt.epoch)
    blob += struct.pack("<dd", ckpt.scaler.y_min, ckpt.scaler.y_max)
    prior = ckpt.prior
    dim = prior.mu.shape[0]
    blob += struct.pack("<I", dim)
    blob += prior.mu.astype("<f8").tobytes()
    blob += prior.sigma.astype("<f8").tobytes()
    blob += struct.pack("<II", prior.refresh_count, prior.last_refresh_epoch)
    state = prior.rng.bit_generator.state
    blob += struct.pack("<II", state["has_uint32"], state["uinteger"])
    blob += int(state["state"]["state"]).to_bytes(16, "little")
    blob += int(state["state"]["inc"]).to_bytes(16, "little")
    named = ckpt.params.named_all()
    blob += struct.pack("<I", len(named))
    for name, tensor in named:
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded)) + encoded
        blob += struct.pack("<I", tensor.data.ndim)
        blob += struct.pack(f"<{tensor.data.ndim}I", *tensor.data.shape)
        blob += tensor.data.astype("<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    off = 0

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(raw):
            raise CheckpointError(f"{path}: truncated at byte offset {off}")
        values = struct.unpack_from(fmt, raw, off)
        off += size
        return values

    def take_bytes(n, what):
        nonlocal off
        if off + n > len(raw):
            raise CheckpointError(
                f"{path}: truncated while reading {what} at byte offset {off}"
            )
        chunk = raw[off:off + n]
        off += n
        return chunk

    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    off = 4
    (version,) = take("<I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (config_len,) = take("<I")
    config = TrainConfig.from_dict(json.loads(take_bytes(config_len, "config")))
    (epoch,) = take("<I")
    y_min, y_max = take("<dd")
    scaler = MosScaler(y_min, y_max)
    (dim,) = take("<I")
    mu = np.frombuffer(take_bytes(dim * 8, "prior mean"), dtype="<f8").copy()
    sigma = np.frombuffer(take_bytes(dim * 8, "prior scale"), dtype="<f8").copy()
    refresh_count, last_refresh = take("<II")
    has_uint32, uinteger = take("<II")
    pcg_state = int.from_bytes(take_bytes(16, "sampler state"), "little")
    pcg_inc = int.from_bytes(take_bytes(16, "sampler increment"), "little")
    bit_gen = np.random.PCG64()
    bit_gen.state = {
        "bit_generator": "PCG64",
        "state": {"state": pcg_state, "inc": pcg_inc},
        "has_uint32": has_uint32,
        "uinteger": uinteger,
    }
    prior = GaussianPrior(mu, sigma, np.random.Generator(bit_gen),
                          refresh_count=refresh_count,
                          last_refresh_epoch=last_refresh)
    params = ModelParams.init(np.random.SeedSequence(config.seed).spawn(1)[0],
                              config.model_config())
    (count,) = take("<I")
    named = params.named_all()
    if count != len(named):
        raise CheckpointError(
            f"{path}: {count} parameter blocks, expected {len(named)}"
        )
    for name, tensor in named:
        (name_len,) = take("<I")
        stored_name = take_bytes(name_len, "parameter name").decode("utf-8")
        if stored_name != name:
            raise CheckpointError(
                f"{path}: parameter order mismatch: {stored_name!r} != {name!r}"
            )
        (ndim,) = take("<I")
        dims = take(f"<{ndim}I") if ndim else ()
        if tuple(dims) != tensor.data.shape:
            raise CheckpointError(
                f"{path}: {name} has shape {dims}, expected {tensor.data.shape}"
            )
        n = int(np.prod(dims)) if dims else 1
        values = np.frombuffer(take_bytes(n * 4, f"{name} data"), dtype="<f4")
        tensor.data = values.astype(np.float64).reshape(tensor.data.shape)
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return Checkpoint(params, prior, scaler, config, epoch)
