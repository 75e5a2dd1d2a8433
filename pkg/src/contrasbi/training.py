"""Minibatch training of the encoder and emulator."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import ndmath as nd
from .embednet import Network, NetworkSpec, RatioModel
from .losses import LossConfig, MemoryBank, inter_loss, loss_intra, memory_bank_update
from .simulators.priors import PriorSpec

LOG_COLUMNS = ("epoch", "train_loss", "val_score", "lr", "wall_seconds")


class TrainingError(RuntimeError):
    """Training diverged or was misconfigured."""


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 256
    lr: float = 1e-3
    weight_decay: float = 5e-4
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    val_interval: int = 20
    n_norm_val: int = 2000
    recrop: bool = False
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2 for inter-domain losses")
        if self.val_interval < 1:
            raise ValueError("val_interval must be >= 1")


def lr_schedule(step: int, total_steps: int, initial_lr: float) -> float:
    """Cosine decay from ``initial_lr`` at step 0 to zero at ``total_steps``."""
    return initial_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


class AdamW:
    """Adam with decoupled weight decay (decay applied to the weights directly)."""

    def __init__(self, weight_decay=5e-4, betas=(0.9, 0.999), eps=1e-8):
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, g in grads.items():
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            w = params[name]
            params[name] = w - lr * self.weight_decay * w - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def validation_values(model: RatioModel, params, observations, prior: PriorSpec, n_norm: int, seed) -> np.ndarray:
    """Model posterior ``q(phi_i | y_i)`` for each validation pair."""
    params = np.atleast_2d(params)
    if len(params) == 0:
        raise ValueError("empty validation set")
    draws = prior.sample(n_norm, np.random.default_rng(seed))
    f = model.encoder.forward(observations)
    g_draws = model.emulator.forward(draws)
    g_val = model.emulator.forward(params)
    log_c = logsumexp(f @ g_draws.T / model.tau, axis=1)
    matched = np.sum(f * g_val, axis=1) / model.tau
    return np.exp(math.log(n_norm) + matched - log_c) * prior.density(params)


def validation_score(model: RatioModel, params, observations, prior: PriorSpec, n_norm: int = 2000, seed=0) -> float:
    """Sum of ``q(phi_i | y_i)`` over validation pairs; higher is better."""
    return float(np.sum(validation_values(model, params, observations, prior, n_norm, seed)))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_score: float | None
    lr: float
    wall_seconds: float


@dataclass
class TrainResult:
    model: RatioModel
    log: list[EpochRecord]
    best_epoch: int
    best_median: float
    initial_median: float
    final_model: RatioModel | None = None

    def write_log(self, path):
        write_log(path, self.log)


def _log_row(r: EpochRecord):
    return [r.epoch, repr(r.train_loss), "" if r.val_score is None else repr(r.val_score),
            repr(r.lr), f"{r.wall_seconds:.3f}"]


def write_log(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        w.writerows(_log_row(r) for r in records)


def _batches(n, size, rng):
    perm = rng.permutation(n)
    out = [perm[i : i + size] for i in range(0, n, size)]
    if len(out) > 1 and len(out[-1]) < 2:
        tail = out.pop()
        out[-1] = np.concatenate([out[-1], tail])
    return out


def init_model(dataset, encoder_spec: NetworkSpec, emulator_spec: NetworkSpec, tau: float, seed: int) -> RatioModel:
    rng = np.random.default_rng([int(seed), 0xE11C])
    enc = Network.initialize(encoder_spec, rng)
    emu = Network.initialize(emulator_spec, rng)
    enc.set_standardization(dataset.observations)
    emu.set_standardization(dataset.params)
    return RatioModel(enc, emu, float(tau))


def train(dataset, val_dataset, encoder_spec: NetworkSpec, emulator_spec: NetworkSpec, config: TrainConfig,
          prior: PriorSpec, augmenter=None, log_path=None, model: RatioModel | None = None) -> TrainResult:
    """Fit encoder and emulator; return the checkpoint with the best validation median.

    Each step minimizes the configured inter-domain loss, plus
    ``intra_weight * L_YY`` on augmented views when the weight is positive.
    """
    if len(dataset) == 0:
        raise TrainingError("empty training set")
    lc = config.loss
    if lc.intra_weight > 0 and augmenter is None:
        raise TrainingError("intra-domain loss needs an augmentation source for this simulator")
    if config.recrop and augmenter is None:
        raise TrainingError("re-cropping needs an augmentation source")
    if model is None:
        model = init_model(dataset, encoder_spec, emulator_spec, lc.tau, config.seed)
    else:
        model = model.copy()
    model.metadata = {
        "loss_mode": lc.mode,
        "tau": lc.tau,
        "intra_weight": lc.intra_weight,
        "memory_bank": lc.bank_capacity,
        "memory_bank_side": "parameter negatives of L_phi_y only",
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "lr": config.lr,
        "weight_decay": config.weight_decay,
        "seed": config.seed,
        "n_norm_val": config.n_norm_val,
        "embed_dim": model.encoder.spec.embed_dim,
        "recrop": config.recrop,
    }
    rng = np.random.default_rng([int(config.seed), 1])
    aug_rng = np.random.default_rng([int(config.seed), 2])
    val_seed = [int(config.seed), 3]
    opt = AdamW(config.weight_decay, config.betas, config.eps)
    bank = MemoryBank(lc.bank_capacity)
    n = len(dataset)
    steps_per_epoch = len(_batches(n, config.batch_size, np.random.default_rng(0)))
    total = config.epochs * steps_per_epoch

    def val_median(m):
        return float(np.median(validation_values(m, val_dataset.params, val_dataset.observations,
                                                 prior, config.n_norm_val, val_seed)))

    initial = val_median(model)
    best, best_median, best_epoch = model.copy(), initial, 0
    log: list[EpochRecord] = []
    sink = None
    if log_path is not None:
        sink = open(log_path, "w", newline="")
        writer = csv.writer(sink)
        writer.writerow(LOG_COLUMNS)
    start = time.perf_counter()
    step = 0
    for epoch in range(1, config.epochs + 1):
        if config.recrop:
            observations = augmenter(range(n), aug_rng, distinct=False)
        else:
            observations = dataset.observations
        losses = []
        for b, idx in enumerate(_batches(n, config.batch_size, rng)):
            tape = nd.Tape()
            enc_p = model.encoder.bind(tape, "enc.")
            emu_p = model.emulator.bind(tape, "emu.")
            f = model.encoder.forward(observations[idx], enc_p)
            g = model.emulator.forward(dataset.params[idx], emu_p)
            loss = inter_loss(lc, f, g, bank.negatives())
            if lc.intra_weight > 0:
                f_aug = model.encoder.forward(augmenter(idx, aug_rng), enc_p)
                loss = nd.add(loss, nd.scale(loss_intra(f, f_aug, lc.tau), lc.intra_weight))
            value = float(loss.value[0, 0])
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = tape.backward(loss)
            lr = lr_schedule(step, total, config.lr)
            _apply_update(opt, model, grads, lr)
            memory_bank_update(bank, g)
            losses.append(value)
            step += 1
        score = None
        if epoch % config.val_interval == 0 or epoch == config.epochs:
            values = validation_values(model, val_dataset.params, val_dataset.observations,
                                       prior, config.n_norm_val, val_seed)
            score = float(np.sum(values))
            median = float(np.median(values))
            if median >= best_median:
                best, best_median, best_epoch = model.copy(), median, epoch
        rec = EpochRecord(epoch, float(np.mean(losses)), score, lr_schedule(step, total, config.lr),
                          time.perf_counter() - start)
        log.append(rec)
        if sink is not None:
            writer.writerow(_log_row(rec))
            sink.flush()
    if sink is not None:
        sink.close()
    best.metadata = dict(model.metadata, best_epoch=best_epoch)
    return TrainResult(best, log, best_epoch, best_median, initial, model)


def _apply_update(opt: AdamW, model: RatioModel, grads, lr):
    # optimizer state is keyed by the same prefixed names the tape uses
    heads = {"enc.": model.encoder, "emu.": model.emulator}
    flat = {pre + k: v for pre, head in heads.items() for k, v in head.params.items()}
    opt.step(flat, grads, lr)
    for name, value in flat.items():
        heads[name[:4]].params[name[4:]] = value
