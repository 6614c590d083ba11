"""WaveNet with a discretized logistic mixture output, its loss and training."""
from __future__ import annotations

import copy
import json
import logging
import math
import struct
import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import neuralnet as nn
from .neuralnet import Tensor

log = logging.getLogger(__name__)

PAPER_DILATIONS = tuple(2**i for i in range(10)) * 3


class NumericError(FloatingPointError):
    """Raised when training produces a non-finite loss."""


@dataclass
class WaveNetConfig:
    residual_channels: int = 64
    skip_channels: int = 64
    postnet_channels: int = 128
    filter_width: int = 2
    dilations: tuple = PAPER_DILATIONS
    mixture_components: int = 5
    conditioning_dim: int = 432
    embedding_dim: int = 64
    scale_floor: float = -9.0
    init_log_scale: float = -3.0
    quantization_bits: int = 16
    target_domain: str = "excitation"
    input_width: int = 2
    seed: int = 0

    def __post_init__(self):
        self.dilations = tuple(int(d) for d in self.dilations)
        self.validate()

    def validate(self):
        if self.mixture_components < 1:
            raise ValueError("need at least one mixture component")
        if not math.isfinite(self.scale_floor):
            raise ValueError("scale_floor must be finite")
        if self.skip_channels != self.residual_channels:
            raise ValueError("skip outputs are the gated activations: skip_channels must equal residual_channels")
        if self.target_domain not in ("excitation", "waveform"):
            raise ValueError(f"unknown target domain {self.target_domain!r}")
        if not self.dilations or min(self.dilations) < 1 or self.filter_width < 1 or self.input_width < 1:
            raise ValueError("invalid convolution geometry")

    @property
    def receptive_field(self) -> int:
        return 1 + (self.input_width - 1) + sum(d * (self.filter_width - 1) for d in self.dilations)

    @property
    def output_dim(self) -> int:
        return 3 * self.mixture_components

    @property
    def bin_width(self) -> float:
        return 2.0 / 2**self.quantization_bits

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WaveNetConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def tiny_config(**overrides) -> WaveNetConfig:
    base = dict(
        residual_channels=16, skip_channels=16, postnet_channels=32,
        dilations=tuple(2**i for i in range(7)), mixture_components=2, embedding_dim=16,
    )
    base.update(overrides)
    return WaveNetConfig(**base)


@dataclass
class MixtureParams:
    """Per-timestep mixture parameters, each of shape (..., K)."""

    logits: np.ndarray
    means: np.ndarray
    log_scales: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def step(self, *idx) -> "MixtureParams":
        return MixtureParams(self.logits[idx], self.means[idx], self.log_scales[idx])


class WaveNetModel:
    """Parameter container plus the teacher-forced forward pass."""

    def __init__(self, config: WaveNetConfig, params: dict | None = None):
        self.config = config
        self.params = params if params is not None else init_params(config)

    @property
    def receptive_field(self) -> int:
        return self.config.receptive_field

    def zero_(self):
        for p in self.params.values():
            p.data[...] = 0.0
        return self

    def copy(self) -> "WaveNetModel":
        return WaveNetModel(self.config, {k: Tensor(p.data.copy(), requires_grad=True, name=k) for k, p in self.params.items()})

    def with_weights(self, arrays: dict) -> "WaveNetModel":
        return WaveNetModel(self.config, {k: Tensor(np.array(arrays[k], dtype=np.float64), requires_grad=True, name=k) for k in self.params})

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))


def _param_shapes(cfg: WaveNetConfig) -> dict:
    R, E, P, K = cfg.residual_channels, cfg.embedding_dim, cfg.postnet_channels, cfg.mixture_components
    shapes = {
        "input.w": (R, 1, cfg.input_width),
        "input.b": (R,),
        "embed.w": (E, cfg.conditioning_dim),
        "embed.b": (E,),
    }
    for i, _ in enumerate(cfg.dilations):
        shapes[f"block{i}.w_f"] = (R, R, cfg.filter_width)
        shapes[f"block{i}.w_g"] = (R, R, cfg.filter_width)
        shapes[f"block{i}.cond_w"] = (2 * R, E)
        shapes[f"block{i}.cond_b"] = (2 * R,)
        shapes[f"block{i}.w_res"] = (R, R)
        shapes[f"block{i}.b_res"] = (R,)
    shapes["post1.w"] = (P, 2 * R * len(cfg.dilations))
    shapes["post1.b"] = (P,)
    shapes["post2.w"] = (P, 2 * P)
    shapes["post2.b"] = (P,)
    shapes["out.w"] = (3 * K, P)
    shapes["out.b"] = (3 * K,)
    return shapes


def init_params(cfg: WaveNetConfig) -> dict:
    """Glorot-uniform weights, zero biases except the log-scale outputs."""
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in _param_shapes(cfg).items():
        if len(shape) == 1:
            data = np.zeros(shape)
        else:
            field_size = int(np.prod(shape[2:])) if len(shape) > 2 else 1
            fan_in, fan_out = shape[1] * field_size, shape[0] * field_size
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    K = cfg.mixture_components
    params["out.b"].data[2 * K :] = cfg.init_log_scale - cfg.scale_floor
    return params


def init_scale_from_targets(model: WaveNetModel, signals) -> float:
    """Start every component's log-scale at the logistic matching the spread
    of the training targets, so the first steps are not spent shrinking a
    generic initial scale by orders of magnitude. Returns the log-scale used."""
    cfg = model.config
    std = float(np.sqrt(np.mean(np.concatenate([np.ravel(s) for s in signals]) ** 2)))
    log_s = max(math.log(max(std, 1e-12) * math.sqrt(3.0) / math.pi), cfg.scale_floor)
    model.params["out.b"].data[2 * cfg.mixture_components :] = log_s - cfg.scale_floor
    return log_s


def build_model(config: WaveNetConfig) -> WaveNetModel:
    config.validate()
    return WaveNetModel(config)


def teacher_inputs(signal: np.ndarray, previous=None) -> np.ndarray:
    """Shift right by one sample: input at t is the observation at t-1."""
    signal = np.atleast_2d(np.asarray(signal, dtype=np.float64))
    out = np.zeros_like(signal)
    out[:, 1:] = signal[:, :-1]
    if previous is not None:
        out[:, 0] = previous
    return out


@dataclass
class FrameConditioning:
    """Frame-rate conditioning (B, D, F) plus the (B, F, T) interpolation
    weights that take it to sample rate. The embedding is linear, so it is
    applied per frame and interpolated afterwards; the result equals the
    sample-rate path up to rounding at a fraction of the cost."""

    frames: np.ndarray
    weights: np.ndarray

    @property
    def shape(self):
        return (self.frames.shape[0], self.frames.shape[1], self.weights.shape[2])


def conditioning_streams(model: WaveNetModel, cond) -> list:
    """Per-block (L_f, L_g) from (B, D, T) conditioning through the shared embedding."""
    p, R = model.params, model.config.residual_channels
    if isinstance(cond, FrameConditioning):
        emb = nn.resample(nn.conv1x1(cond.frames, p["embed.w"], p["embed.b"]), cond.weights)
    else:
        emb = nn.conv1x1(cond, p["embed.w"], p["embed.b"])
    out = []
    for i in range(len(model.config.dilations)):
        proj = nn.conv1x1(emb, p[f"block{i}.cond_w"], p[f"block{i}.cond_b"])
        out.append((proj[:, :R], proj[:, R:]))
    return out


def forward_raw(model: WaveNetModel, inputs, cond) -> Tensor:
    """Network output (B, 3K, T) for already shifted inputs (B, T) and
    conditioning (B, D, T)."""
    cfg, p = model.config, model.params
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if not isinstance(cond, (Tensor, FrameConditioning)):
        cond = np.asarray(cond, dtype=np.float64)
    cshape = cond.shape
    if len(cshape) != 3 or cshape[0] != inputs.shape[0] or cshape[2] != inputs.shape[1]:
        raise ValueError(f"conditioning {cshape} not aligned with inputs {inputs.shape}")
    if cshape[1] != cfg.conditioning_dim:
        raise ValueError(f"conditioning dimension {cshape[1]} != model's {cfg.conditioning_dim}")
    x = nn.conv1d(Tensor(inputs[:, None, :]), p["input.w"], p["input.b"], dilation=1)
    skips = []
    for i, (d, (lf, lg)) in enumerate(zip(cfg.dilations, conditioning_streams(model, cond))):
        bp = {k: p[f"block{i}.{k}"] for k in ("w_f", "w_g", "w_res", "b_res")}
        x, skip = nn.residual_block(x, bp, lf, lg, d)
        skips.append(skip)
    h = nn.crelu_dense(nn.concat(skips, axis=1), p["post1.w"], p["post1.b"])
    h = nn.crelu_dense(h, p["post2.w"], p["post2.b"])
    return nn.conv1x1(h, p["out.w"], p["out.b"])


def split_output(out: Tensor, cfg: WaveNetConfig):
    """Logits, means and floored log-scales as (B, K, T) tensors."""
    K = cfg.mixture_components
    logits = out[:, :K]
    means = out[:, K : 2 * K]
    log_scales = nn.clamp_min(nn.add(out[:, 2 * K :], cfg.scale_floor), cfg.scale_floor)
    return logits, means, log_scales


def to_mixture(logits, means, log_scales) -> MixtureParams:
    """(B, K, T) tensors -> MixtureParams with (B, T, K) arrays."""
    t = lambda a: np.moveaxis(a.data if isinstance(a, Tensor) else a, 1, -1)
    return MixtureParams(t(logits), t(means), t(log_scales))


def forward(model: WaveNetModel, signal, cond, previous=None) -> MixtureParams:
    """Teacher-forced mixture parameters for every timestep of ``signal``."""
    signal = np.atleast_2d(np.asarray(signal, dtype=np.float64))
    cond = np.asarray(cond, dtype=np.float64)
    if cond.ndim == 2:
        cond = cond[None]
    out = forward_raw(model, teacher_inputs(signal, previous), cond)
    return to_mixture(*split_output(out, model.config))


# ---------------------------------------------------------------------------
# discretized logistic mixture


def quantize(x, bits: int = 16) -> np.ndarray:
    half = 2 ** (bits - 1)
    return np.clip(np.round(np.asarray(x, dtype=np.float64) * half), -half, half - 1) / half


def _log1mexp(d):
    """log(1 - exp(d)) for d < 0."""
    return np.where(d > -math.log(2.0), np.log(-np.expm1(d)), np.log1p(-np.exp(d)))


def _log_bin_mass(a, b):
    """log(sigmoid(a) - sigmoid(b)) for a > b, evaluated on the tail that
    keeps both arguments non-positive."""
    flip = (a + b) > 0
    hi = np.where(flip, -b, a)
    lo = np.where(flip, -a, b)
    ls_hi = nn.log_sigmoid(hi)
    return ls_hi + _log1mexp(nn.log_sigmoid(lo) - ls_hi)


def log_bin_probs(logits, means, log_scales, x, bits: int = 16):
    """Per-component log bin mass and mixture log-weights; all (..., K) with
    ``x`` broadcast on the last axis. Returns (log_pi, log_mass, a, b, edge)."""
    delta = 2.0 / 2**bits
    x = np.asarray(x, dtype=np.float64)[..., None]
    inv_s = np.exp(-log_scales)
    a = (x + 0.5 * delta - means) * inv_s
    b = (x - 0.5 * delta - means) * inv_s
    lower = x <= -1.0 + 0.5 * delta
    upper = x >= 1.0 - 1.5 * delta
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        mid = _log_bin_mass(np.where(lower | upper, 1.0, a), np.where(lower | upper, 0.0, b))
    log_mass = np.where(lower, nn.log_sigmoid(a), np.where(upper, nn.log_sigmoid(-b), mid))
    z = logits - logits.max(axis=-1, keepdims=True)
    log_pi = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return log_pi, log_mass, a, b, (lower, upper)


def mixture_log_prob(params: MixtureParams, x, bits: int = 16) -> np.ndarray:
    log_pi, log_mass, *_ = log_bin_probs(params.logits, params.means, params.log_scales, x, bits)
    joint = log_pi + log_mass
    m = joint.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(joint - m).sum(axis=-1, keepdims=True)))[..., 0]


def dlm_nll(logits, means, log_scales, targets, bits: int = 16) -> Tensor:
    """Mean negative log-likelihood (nats) of quantized ``targets``.

    ``logits``, ``means``, ``log_scales`` are (B, K, T) tensors and
    ``targets`` is (B, T). Bin masses are differences of logistic CDFs with
    open-ended first and last bins.
    """
    logits, means, log_scales = (nn.as_tensor(t) for t in (logits, means, log_scales))
    for t in (logits, means, log_scales):
        if not np.all(np.isfinite(t.data)):
            raise NumericError("non-finite mixture parameters")
    mv = lambda a: np.moveaxis(a, 1, -1)
    L, M, S = mv(logits.data), mv(means.data), mv(log_scales.data)
    targets = np.asarray(targets, dtype=np.float64)
    log_pi, log_mass, a, b, (lower, upper) = log_bin_probs(L, M, S, targets, bits)
    joint = log_pi + log_mass
    m = joint.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(joint - m).sum(axis=-1, keepdims=True))
    n = targets.size
    loss = -lse.sum() / n

    def backward(g):
        scale = -float(g) / n
        resp = np.exp(joint - lse)  # posterior over components
        pi = np.exp(log_pi)
        # d log_mass / d a and / d b
        with np.errstate(over="ignore", invalid="ignore"):
            da = np.exp(nn.log_sigmoid(a) + nn.log_sigmoid(-a) - log_mass)
            db = -np.exp(nn.log_sigmoid(b) + nn.log_sigmoid(-b) - log_mass)
        da = np.where(upper, 0.0, np.where(lower, np.exp(nn.log_sigmoid(-a)), da))
        db = np.where(lower, 0.0, np.where(upper, -np.exp(nn.log_sigmoid(b)), db))
        inv_s = np.exp(-S)
        g_mass = scale * resp
        g_means = g_mass * (da + db) * -inv_s
        g_logs = g_mass * (da * -a + db * -b)
        g_logits = scale * (resp - pi)
        mb = lambda x: np.moveaxis(x, -1, 1)
        logits._accumulate(mb(g_logits))
        means._accumulate(mb(g_means))
        log_scales._accumulate(mb(g_logs))

    return nn._result(np.asarray(loss), (logits, means, log_scales), backward)


def model_loss(model: WaveNetModel, signal, cond, previous=None) -> Tensor:
    signal = np.atleast_2d(signal)
    out = forward_raw(model, teacher_inputs(signal, previous), cond)
    targets = quantize(signal, model.config.quantization_bits)
    return dlm_nll(*split_output(out, model.config), targets, model.config.quantization_bits)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainOptions:
    epochs: int = 70
    early_stop_patience: int = 10
    segment_length: int = 8000
    batch_size: int = 4
    crops_per_utterance: int = 1
    lr: float = 1e-3
    lr_decay: float = 0.5
    lr_plateau_epochs: int = 2
    ema_decay: float = 0.999
    max_steps: int | None = None
    seed: int = 0
    log_every: int = 50
    time_limit: float | None = None  # seconds
    init_scale_from_data: bool = True


@dataclass
class Utterance:
    name: str
    signal: np.ndarray  # training target (excitation or waveform)
    conditioning: object  # features.ConditioningMatrix

    def crop(self, start: int, length: int):
        stop = start + length
        prev = self.signal[start - 1] if start > 0 else 0.0
        return self.signal[start:stop], self.conditioning.rows(start, stop).T, prev

    def crop_frames(self, start: int, length: int):
        """Like ``crop`` but with frame-rate conditioning and its weights."""
        stop = start + length
        prev = self.signal[start - 1] if start > 0 else 0.0
        first, w = self.conditioning.frame_weights(start, stop)
        return self.signal[start:stop], self.conditioning.stacked[first : first + w.shape[0]].T, w, prev


@dataclass
class Checkpoint:
    """Training state plus the weights used for inference.

    ``best`` holds the EMA weights from the best validation epoch, ``ema``
    the current shadow and ``params`` the raw optimizer iterate.
    """

    config: WaveNetConfig
    params: dict
    ema: dict
    best: dict
    norm_mean: np.ndarray
    norm_std: np.ndarray
    metadata: dict = field(default_factory=dict)
    adam: nn.AdamState | None = None
    rng_state: dict | None = None

    def model(self, which: str = "best") -> WaveNetModel:
        arrays = {"best": self.best, "ema": self.ema, "params": self.params}[which]
        return WaveNetModel(self.config).with_weights(arrays)


def _batches(dataset, opts: TrainOptions, rng, seg_len: int):
    crops = []
    for _ in range(opts.crops_per_utterance):
        for i in rng.permutation(len(dataset)):
            start = int(rng.integers(0, dataset[i].signal.size - seg_len + 1))
            crops.append((int(i), start))
    return [crops[k : k + opts.batch_size] for k in range(0, len(crops), opts.batch_size)]


def _assemble(dataset, batch, seg_len):
    sig, frames, weights, prev = zip(*(dataset[i].crop_frames(s, seg_len) for i, s in batch))
    n = max(f.shape[1] for f in frames)
    # crops may span different frame counts; zero frames with zero weight pad them
    frames = np.stack([np.pad(f, ((0, 0), (0, n - f.shape[1]))) for f in frames])
    weights = np.stack([np.pad(w, ((0, n - w.shape[0]), (0, 0))) for w in weights])
    return np.stack(sig), FrameConditioning(frames, weights), np.asarray(prev)


def evaluate_nll(model: WaveNetModel, dataset, seg_len: int) -> float:
    """Mean NLL over the leading ``seg_len`` samples of each utterance."""
    total, count = 0.0, 0
    for i in range(len(dataset)):
        sig, cond, prev = _assemble(dataset, [(i, 0)], seg_len)
        total += float(model_loss(model, sig, cond, prev).data) * sig.size
        count += sig.size
    return total / count


def train(
    model: WaveNetModel,
    dataset: list,
    options: TrainOptions | None = None,
    validation: list | None = None,
    norm=(None, None),
    resume: Checkpoint | None = None,
    checkpoint_path=None,
    history: list | None = None,
) -> Checkpoint:
    """Minimize the mixture NLL with Adam and EMA weight smoothing.

    Checkpoints are written at epoch ends (on validation improvement when a
    validation set is given). Resuming restores parameters, optimizer, EMA
    shadow and the data-order RNG, so an interrupted run continues exactly.
    """
    opts = options or TrainOptions()
    if not dataset:
        raise ValueError("empty training set")
    seg_len = min(opts.segment_length, min(u.signal.size for u in dataset))
    validation = validation or []
    val_len = min([seg_len] + [u.signal.size for u in validation])
    rng = np.random.default_rng(opts.seed)
    if resume is not None:
        model = resume.model("params")
        adam = copy.deepcopy(resume.adam)
        ema = nn.EmaState({k: v.copy() for k, v in resume.ema.items()}, opts.ema_decay)
        best = {k: v.copy() for k, v in resume.best.items()}
        rng.bit_generator.state = copy.deepcopy(resume.rng_state)
        meta = dict(resume.metadata)
        norm = (resume.norm_mean, resume.norm_std)
    else:
        if opts.init_scale_from_data:
            init_scale_from_targets(model, [u.signal for u in dataset])
        adam = nn.AdamState(lr=opts.lr)
        ema = nn.EmaState.from_params(model.params, opts.ema_decay)
        best = {k: v.copy() for k, v in ema.shadow.items()}
        meta = dict(epoch=0, step=0, best_val=None, best_epoch=None, bad_epochs=0, plateau=0, last_loss=None)
    mean_, std_ = (np.zeros(0) if a is None else np.asarray(a, dtype=np.float64) for a in norm)

    def snapshot():
        return Checkpoint(
            config=model.config,
            params={k: p.data.copy() for k, p in model.params.items()},
            ema={k: v.copy() for k, v in ema.shadow.items()},
            best={k: v.copy() for k, v in best.items()},
            norm_mean=mean_, norm_std=std_,
            metadata=dict(meta),
            adam=copy.deepcopy(adam),
            rng_state=copy.deepcopy(rng.bit_generator.state),
        )

    started = time.perf_counter()
    stop = False
    while meta["epoch"] < opts.epochs and not stop:
        epoch_losses = []
        for batch in _batches(dataset, opts, rng, seg_len):
            sig, cond, prev = _assemble(dataset, batch, seg_len)
            loss = model_loss(model, sig, cond, prev)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericError(
                    f"non-finite loss at step {meta['step']}, batch (utterance, start) = "
                    + json.dumps([[dataset[i].name, s] for i, s in batch])
                )
            for p in model.params.values():
                p.zero_grad()
            loss.backward()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                nn.adam_step(model.params, {k: p.grad for k, p in model.params.items()}, adam)
            nn.ema_update(ema, model.params)
            meta["step"] += 1
            meta["last_loss"] = value
            epoch_losses.append(value)
            if history is not None:
                history.append(value)
            if opts.log_every and meta["step"] % opts.log_every == 0:
                log.info("step %d loss %.4f", meta["step"], value)
            if (opts.max_steps and meta["step"] >= opts.max_steps) or (
                opts.time_limit and time.perf_counter() - started > opts.time_limit
            ):
                stop = True
                break
        meta["epoch"] += 1
        meta["train_loss"] = float(np.mean(epoch_losses)) if epoch_losses else None
        improved = True
        if validation:
            val = evaluate_nll(model.with_weights(ema.shadow), validation, val_len)
            meta["val_loss"] = val
            improved = meta["best_val"] is None or val < meta["best_val"]
            if improved:
                meta.update(best_val=val, best_epoch=meta["epoch"], bad_epochs=0, plateau=0)
            else:
                meta["bad_epochs"] += 1
                meta["plateau"] += 1
                if meta["plateau"] >= opts.lr_plateau_epochs:
                    adam.lr *= opts.lr_decay
                    meta["plateau"] = 0
                if meta["bad_epochs"] >= opts.early_stop_patience:
                    log.info("early stop at epoch %d", meta["epoch"])
                    stop = True
            log.info("epoch %d train %.4f val %.4f", meta["epoch"], meta["train_loss"] or float("nan"), val)
        if improved:
            best = {k: v.copy() for k, v in ema.shadow.items()}
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, snapshot())
    final = snapshot()
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, final)
    return final


# ---------------------------------------------------------------------------
# checkpoint file format

MAGIC = b"GLOTNETC"
FORMAT_VERSION = 1
_DTYPES = {"f": "<f4", "d": "<f8"}


def _write_tensor(f, name: str, arr: np.ndarray, code: str = "d"):
    arr = np.ascontiguousarray(arr, dtype=_DTYPES[code])
    raw = name.encode("utf-8")
    f.write(struct.pack("<H", len(raw)))
    f.write(raw)
    f.write(code.encode("ascii"))
    f.write(struct.pack("<B", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(arr.tobytes())


def _read_tensor(f):
    (n,) = struct.unpack("<H", f.read(2))
    name = f.read(n).decode("utf-8")
    code = f.read(1).decode("ascii")
    (ndim,) = struct.unpack("<B", f.read(1))
    shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
    dtype = np.dtype(_DTYPES[code])
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(f.read(count * dtype.itemsize), dtype=dtype).reshape(shape)
    return name, data.astype(np.float64)


def save_checkpoint(path, ckpt: Checkpoint):
    header = {
        "config": ckpt.config.to_dict(),
        "metadata": ckpt.metadata,
        "adam": None,
        "rng_state": ckpt.rng_state,
    }
    tensors = [(f"param/{k}", v) for k, v in ckpt.params.items()]
    tensors += [(f"ema/{k}", v) for k, v in ckpt.ema.items()]
    tensors += [(f"best/{k}", v) for k, v in ckpt.best.items()]
    tensors += [("norm/mean", ckpt.norm_mean), ("norm/std", ckpt.norm_std)]
    if ckpt.adam is not None:
        a = ckpt.adam
        header["adam"] = dict(lr=a.lr, beta1=a.beta1, beta2=a.beta2, eps=a.eps, step=a.step, skipped=a.skipped)
        tensors += [(f"adam_m/{k}", v) for k, v in a.m.items()]
        tensors += [(f"adam_v/{k}", v) for k, v in a.v.items()]
    text = json.dumps(header, indent=2, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(text)))
        f.write(text)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            _write_tensor(f, name, arr)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, n = struct.unpack("<II", f.read(8))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(f.read(n).decode("utf-8"))
        (count,) = struct.unpack("<I", f.read(4))
        groups: dict = {}
        for _ in range(count):
            name, data = _read_tensor(f)
            group, _, key = name.partition("/")
            groups.setdefault(group, {})[key] = data
    adam = None
    if header.get("adam"):
        adam = nn.AdamState(**header["adam"], m=groups.get("adam_m", {}), v=groups.get("adam_v", {}))
    config = WaveNetConfig.from_dict(header["config"])
    expected = set(_param_shapes(config))
    if any(set(groups.get(g, {})) != expected for g in ("param", "ema", "best")):
        raise ValueError(f"{path}: parameter set does not match the stored configuration")
    return Checkpoint(
        config=config,
        params=groups["param"],
        ema=groups["ema"],
        best=groups["best"],
        norm_mean=groups["norm"]["mean"],
        norm_std=groups["norm"]["std"],
        metadata=header["metadata"],
        adam=adam,
        rng_state=header["rng_state"],
    )
