"""Training with dynamic mixing, Adam, plateau halving, and evaluation."""

from __future__ import annotations

import logging
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from ..losses import combined_loss, si_snr
from ..neural import autograd as ag
from ..signal import AudioClip, read_wav
from .checkpoint import Checkpoint, checkpoint_from_model, model_from_checkpoint
from .config import SystemConfig
from .mixing import mix_at_snr, reverberate
from .model import EnhancementModel, analysis_spectrum, build_model, forward, forward_graph

logger = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype, copy=False)


def clip_grad_norm(params, max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * np.asarray(scale, dtype=p.grad.dtype)
    return total


class PlateauHalver:
    """Halve the learning rate after ``patience`` consecutive epochs without a new best."""

    def __init__(self, lr: float, patience: int = 2, factor: float = 0.5):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.best = math.inf
        self.bad_epochs = 0

    def update(self, val_loss: float) -> float:
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


@dataclass
class Example:
    noisy: np.ndarray
    clean: np.ndarray


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    model: EnhancementModel
    losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)


def _as_clip(item):
    return item if isinstance(item, AudioClip) else read_wav(item)


def make_example(clean, noise, snr_db, rng, cfg, rirs=(), crop=True) -> Example:
    """Crop, optionally reverberate, and mix one clean/noise pair."""
    speech = clean.samples
    crop_len = int(round(cfg.crop_seconds * clean.sample_rate))
    if crop and crop_len and len(speech) > crop_len:
        start = int(rng.integers(0, len(speech) - crop_len + 1))
        speech = speech[start : start + crop_len]
    if rirs and rng.random() < cfg.rir_prob:
        rir = rirs[int(rng.integers(len(rirs)))]
        speech = reverberate(speech, rir.samples)
    target = AudioClip(speech, clean.sample_rate)
    noisy = mix_at_snr(target, noise, snr_db)
    return Example(noisy.samples, speech)


def example_loss(example: Example, model: EnhancementModel, cfg: SystemConfig):
    graph = forward_graph(example.noisy, model, cfg)
    clean_spec = analysis_spectrum(example.clean, cfg)
    return combined_loss(graph.wave, example.clean, graph.spectrum, clean_spec, cfg.loss)


def _dump_batch(batch, dump_dir):
    dump_dir = dump_dir or tempfile.gettempdir()
    os.makedirs(dump_dir, exist_ok=True)
    path = os.path.join(dump_dir, "nonfinite_batch.npz")
    np.savez(
        path,
        **{f"noisy_{i}": ex.noisy for i, ex in enumerate(batch)},
        **{f"clean_{i}": ex.clean for i, ex in enumerate(batch)},
    )
    return path


def train(
    dataset,
    cfg: SystemConfig,
    steps: int = None,
    epochs: int = None,
    model: EnhancementModel = None,
    rirs=(),
    validation=None,
    dtype=np.float32,
    dump_dir=None,
    on_step=None,
) -> TrainResult:
    """Train on (clean, noise) pairs given as WAV paths or AudioClips.

    Each epoch is one pass over the pairs; every epoch draws a fresh SNR,
    crop and RIR per pair. Training stops after ``steps`` optimizer steps or
    ``epochs`` epochs, whichever comes first. Validation uses fixed mixes
    of ``validation`` (default: the training pairs) drawn once from a
    separate seeded generator.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    if steps is None and epochs is None:
        epochs = 1
    pairs = [(_as_clip(c), _as_clip(n)) for c, n in dataset]
    rirs = [_as_clip(r) for r in rirs]
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = build_model(cfg, seed=cfg.seed, dtype=dtype)
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr)
    sched = PlateauHalver(cfg.lr)

    val_rng = np.random.default_rng(cfg.seed + 1)
    val_pairs = pairs if validation is None else [(_as_clip(c), _as_clip(n)) for c, n in validation]
    low, high = cfg.snr_range
    val_set = [
        make_example(c, n, val_rng.uniform(low, high), val_rng, cfg, rirs) for c, n in val_pairs
    ]

    result = TrainResult(None, model)
    step = 0
    epoch = 0
    while (steps is None or step < steps) and (epochs is None or epoch < epochs):
        examples = [make_example(c, n, rng.uniform(low, high), rng, cfg, rirs) for c, n in pairs]
        order = rng.permutation(len(examples))
        for start in range(0, len(order), cfg.batch):
            if steps is not None and step >= steps:
                break
            batch = [examples[i] for i in order[start : start + cfg.batch]]
            model.zero_grad()
            total = 0.0
            for ex in batch:
                loss = example_loss(ex, model, cfg) * (1.0 / len(batch))
                value = float(loss.data)
                if not np.isfinite(value):
                    path = _dump_batch(batch, dump_dir)
                    raise NonFiniteLossError(
                        f"non-finite loss at step {step + 1}; batch dumped to {path}", path
                    )
                loss.backward()
                total += value
            clip_grad_norm(params, cfg.grad_clip)
            opt.lr = sched.lr
            opt.step()
            step += 1
            result.losses.append((step, total))
            if on_step is not None:
                on_step(step, total)
        epoch += 1
        with ag.no_grad():
            val = float(np.mean([float(example_loss(ex, model, cfg).data) for ex in val_set]))
        result.val_losses.append(val)
        result.lrs.append(sched.update(val))
        logger.info("epoch %d: val loss %.4f, lr %.2e", epoch, val, sched.lr)

    result.checkpoint = checkpoint_from_model(model, step, rng)
    return result


@dataclass
class Evaluation:
    rows: list
    mean_noisy: float
    mean_enhanced: float

    @property
    def mean_improvement(self):
        return self.mean_enhanced - self.mean_noisy


def evaluate(model, pairs, names=None) -> Evaluation:
    """SI-SNR of noisy and enhanced clips against their clean references.

    ``model`` is a Checkpoint or an EnhancementModel; ``pairs`` holds
    (noisy, clean) AudioClips or WAV paths.
    """
    if isinstance(model, Checkpoint):
        model = model_from_checkpoint(model)
    rows = []
    for i, (noisy, clean) in enumerate(pairs):
        noisy, clean = _as_clip(noisy), _as_clip(clean)
        if len(noisy) != len(clean):
            raise ValueError(f"pair {i}: noisy has {len(noisy)} samples, clean has {len(clean)}")
        enhanced = forward(noisy, model).enhanced
        before = si_snr(noisy.samples, clean.samples)
        after = si_snr(enhanced.samples, clean.samples)
        name = names[i] if names else str(i)
        rows.append((name, before, after, after - before))
    if not rows:
        raise ValueError("no evaluation pairs")
    return Evaluation(rows, float(np.mean([r[1] for r in rows])), float(np.mean([r[2] for r in rows])))
