"""Adversarial training of the conditional discriminator/generator pair.

The discriminator ascends ``LS + LC`` where

    LS = E[log P(S=real | x_real)] + E[log P(S=fake | x_fake)]
    LC = E[log P(C=c | x_real)]    + E[log P(C=c | x_fake)]

and the generator ascends ``log P(S=real | x_fake) + log P(C=c | x_fake)``
(``acgan_standard``) or, with ``generator_sign="paper_literal"``, the same
source term minus the class term.
"""
from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .diffcore import functional as F
from .diffcore.optim import Adam
from .diffcore.tensor import Tensor, no_grad
from .exceptions import InvalidConfigError, InvalidInputError, NumericError
from .io import load_checkpoint, save_checkpoint
from .models import (
    FULL, REDUCED, Architecture, Discriminator, Generator, class_count,
)

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-7


@dataclass
class TrainConfig:
    batch_size: int = 16
    steps: int = 20000
    lr_d: float = 2e-4
    lr_g: float = 2e-4
    d_steps_per_g: int = 1
    noise_kind: str = "normal"
    class_mode: str = "seven"
    generator_sign: str = "acgan_standard"
    seed: int = 0
    checkpoint_every: int = 1000
    reduced: bool = False
    data_dir: Optional[str] = None

    def __post_init__(self):
        if self.batch_size < 2:
            raise InvalidConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.steps < 1:
            raise InvalidConfigError(f"steps must be >= 1, got {self.steps}")
        if self.d_steps_per_g < 1:
            raise InvalidConfigError(f"d_steps_per_g must be >= 1, got {self.d_steps_per_g}")
        if self.noise_kind not in ("normal", "uniform"):
            raise InvalidConfigError(f"noise_kind must be 'normal' or 'uniform', got {self.noise_kind!r}")
        if self.generator_sign not in ("acgan_standard", "paper_literal"):
            raise InvalidConfigError(
                f"generator_sign must be 'acgan_standard' or 'paper_literal', got {self.generator_sign!r}")
        if self.checkpoint_every < 1:
            raise InvalidConfigError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        class_count(self.class_mode)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidConfigError(f"{path}: cannot read config ({exc})") from exc
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise InvalidConfigError(f"{path}: unknown config fields {', '.join(unknown)}")
        return cls(**raw)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")

    def architecture(self) -> Architecture:
        base = REDUCED if self.reduced else FULL
        return base.with_classes(class_count(self.class_mode))


@dataclass
class TrainingSet:
    """Real examples: ``x`` of shape ``(n, S, S)`` in the discriminator's
    input range, integer class labels ``y`` aligned with the class head."""

    x: np.ndarray
    y: np.ndarray
    reference_magnitude: float = 1.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.intp)
        if self.x.ndim != 3 or self.x.shape[1] != self.x.shape[2]:
            raise InvalidInputError(f"training inputs must be (n, S, S), got {self.x.shape}")
        if self.x.shape[0] == 0:
            raise InvalidInputError("empty training set")
        if self.y.shape != (self.x.shape[0],):
            raise InvalidInputError(f"{self.y.shape[0]} labels for {self.x.shape[0]} examples")


@dataclass
class TrainState:
    generator: Generator
    discriminator: Discriminator
    opt_g: Adam
    opt_d: Adam
    rng: np.random.Generator
    label_pool: np.ndarray
    step: int = 0
    history: List[Tuple[int, float, float, float]] = field(default_factory=list)
    reference_magnitude: float = 1.0
    seed: int = 0

    @property
    def arch(self) -> Architecture:
        return self.generator.arch

    def tensors(self):
        """Everything needed to rebuild or resume, as named float arrays."""
        out = {}
        out.update(self.generator.state_dict())
        out.update(self.discriminator.state_dict())
        out.update(self.opt_g.state_dict("opt.g"))
        out.update(self.opt_d.state_dict("opt.d"))
        out["meta.arch"] = self.arch.to_vector()
        out["meta.step"] = np.array([self.step], dtype=np.float64)
        out["meta.reference_magnitude"] = np.array([self.reference_magnitude])
        out["meta.seed"] = np.array([self.seed], dtype=np.float64)
        out["meta.label_pool"] = self.label_pool.astype(np.float64)
        return out


def init_state(arch: Architecture, seed: int = 0, lr_d: float = 2e-4, lr_g: float = 2e-4,
               label_pool: Optional[Sequence[int]] = None, reference_magnitude: float = 1.0) -> TrainState:
    g_seed, d_seed, run_seed = np.random.SeedSequence(seed).generate_state(3)
    generator = Generator(arch, seed=int(g_seed))
    discriminator = Discriminator(arch, seed=int(d_seed))
    pool = np.arange(arch.n_classes) if label_pool is None else np.unique(np.asarray(label_pool, dtype=np.intp))
    return TrainState(
        generator=generator,
        discriminator=discriminator,
        opt_g=Adam(generator.named_parameters(trainable_only=True), lr=lr_g),
        opt_d=Adam(discriminator.named_parameters(trainable_only=True), lr=lr_d),
        rng=np.random.default_rng(int(run_seed)),
        label_pool=pool,
        reference_magnitude=reference_magnitude,
        seed=seed,
    )


def load_state(path) -> TrainState:
    tensors = load_checkpoint(path)
    if "meta.arch" not in tensors:
        raise InvalidInputError(f"{path}: checkpoint has no architecture record")
    arch = Architecture.from_vector(tensors["meta.arch"])
    seed = int(tensors.get("meta.seed", np.zeros(1))[0])
    state = init_state(arch, seed=seed,
                       label_pool=tensors.get("meta.label_pool", np.arange(arch.n_classes)).astype(np.intp),
                       reference_magnitude=float(tensors.get("meta.reference_magnitude", np.ones(1))[0]))
    state.generator.load_state_dict(tensors)
    state.discriminator.load_state_dict(tensors)
    state.opt_g.load_state_dict(tensors, "opt.g")
    state.opt_d.load_state_dict(tensors, "opt.d")
    state.step = int(tensors.get("meta.step", np.zeros(1))[0])
    return state


# -- objectives ------------------------------------------------------------------

def _clamped(p):
    return F.clip(p if isinstance(p, Tensor) else Tensor(p), PROB_FLOOR, 1.0 - PROB_FLOOR)


def loss_source(source_probs_real, source_probs_fake) -> Tensor:
    """``LS = mean log p_real + mean log(1 - p_fake)`` with probabilities
    clamped to ``[1e-7, 1 - 1e-7]``. Larger is better for the discriminator."""
    real = F.log(_clamped(source_probs_real))
    fake = F.log(F.sub(1.0, _clamped(source_probs_fake)))
    return F.add(F.mean(real), F.mean(fake))


def _log_prob_of(class_probs, labels) -> Tensor:
    probs = class_probs if isinstance(class_probs, Tensor) else Tensor(class_probs)
    labels = np.asarray(labels, dtype=np.intp)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise InvalidInputError(f"class probabilities {probs.shape} do not match labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise InvalidInputError(f"labels must be in [0, {probs.shape[1]})")
    return F.mean(F.log(_clamped(F.take_along_last(probs, labels))))


def loss_class(class_probs_real, labels_real, class_probs_fake, labels_fake) -> Tensor:
    """``LC = mean log p_real[c] + mean log p_fake[c]`` (clamped like LS)."""
    return F.add(_log_prob_of(class_probs_real, labels_real), _log_prob_of(class_probs_fake, labels_fake))


def generator_objective(source_probs_fake, class_probs_fake, labels_fake,
                        generator_sign: str = "acgan_standard") -> Tensor:
    """Quantity the generator ascends."""
    source = F.mean(F.log(_clamped(source_probs_fake)))
    cls = _log_prob_of(class_probs_fake, labels_fake)
    if generator_sign == "acgan_standard":
        return F.add(source, cls)
    if generator_sign == "paper_literal":
        return F.sub(source, cls)
    raise InvalidConfigError(f"unknown generator_sign {generator_sign!r}")


# -- steps -----------------------------------------------------------------------

def sample_noise(rng: np.random.Generator, n: int, dim: int, kind: str = "normal") -> np.ndarray:
    if kind == "normal":
        return rng.standard_normal((n, dim))
    if kind == "uniform":
        return rng.uniform(-1.0, 1.0, size=(n, dim))
    raise InvalidConfigError(f"unknown noise kind {kind!r}")


def _layer_stats(net) -> str:
    lines = []
    with warnings.catch_warnings():
        # all-NaN tensors are exactly what this dump is for
        warnings.simplefilter("ignore", RuntimeWarning)
        for name, t in net.named_parameters().items():
            d = t.data
            lines.append(f"  {name}: shape={d.shape} finite={np.isfinite(d).mean():.3f} "
                         f"min={np.nanmin(d):.4g} max={np.nanmax(d):.4g} mean={np.nanmean(d):.4g}")
    return "\n".join(lines)


def _check_finite(value: float, what: str, state: TrainState):
    if not np.isfinite(value):
        raise NumericError(
            f"non-finite {what} at step {state.step}\n"
            f"generator:\n{_layer_stats(state.generator)}\n"
            f"discriminator:\n{_layer_stats(state.discriminator)}")


def d_step(state: TrainState, real_x, real_y, cfg: TrainConfig) -> Tuple[float, float]:
    """One discriminator update on a real batch and a freshly generated fake
    batch. Generator parameters (including its moving statistics) are untouched."""
    real_x = np.asarray(real_x, dtype=np.float64)
    n = real_x.shape[0]
    if n < 2:
        raise InvalidInputError(f"d_step needs a batch of at least 2, got {n}")
    rng = state.rng
    noise = sample_noise(rng, n, state.arch.noise_dim, cfg.noise_kind)
    fake_y = rng.choice(state.label_pool, size=n)
    with no_grad():
        fake = state.generator(noise, fake_y, training=True, rng=rng, update_stats=False).data

    d = state.discriminator
    out_real = d(real_x, training=True, rng=rng)
    # Moving statistics track real data only; inference is always on real inputs.
    out_fake = d(fake, training=True, rng=rng, update_stats=False)
    ls = loss_source(out_real.source_prob, out_fake.source_prob)
    lc = loss_class(out_real.class_probs, real_y, out_fake.class_probs, fake_y)
    objective = F.add(ls, lc)
    _check_finite(objective.item(), "discriminator loss", state)
    state.opt_d.zero_grad()
    F.mul(objective, -1.0).backward()
    state.opt_d.step()
    return ls.item(), lc.item()


def g_step(state: TrainState, cfg: TrainConfig, batch_size: Optional[int] = None) -> float:
    """One generator update through a frozen discriminator; returns the
    objective value before the update."""
    n = batch_size or cfg.batch_size
    rng = state.rng
    noise = sample_noise(rng, n, state.arch.noise_dim, cfg.noise_kind)
    labels = rng.choice(state.label_pool, size=n)
    fake = state.generator(noise, labels, training=True, rng=rng)
    out = state.discriminator(fake, training=True, rng=rng, update_stats=False)
    objective = generator_objective(out.source_prob, out.class_probs, labels, cfg.generator_sign)
    _check_finite(objective.item(), "generator objective", state)
    state.opt_g.zero_grad()
    F.mul(objective, -1.0).backward()
    state.opt_g.step()
    state.discriminator.zero_grad()
    return objective.item()


# -- loop ------------------------------------------------------------------------

def _batches(rng: np.random.Generator, n: int, batch_size: int):
    """Endless stream of index batches; reshuffles each epoch and skips
    trailing batches smaller than 2 (batch statistics need two examples)."""
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            if idx.shape[0] >= 2:
                yield idx
        if n < 2:
            raise InvalidInputError("need at least two training examples")


LOSS_HEADER = ("step", "LS", "LC", "g_objective")


def train(cfg: TrainConfig, dataset: TrainingSet, out_dir=None, arch: Optional[Architecture] = None,
          progress_every: int = 0) -> TrainState:
    """Alternate ``d_steps_per_g`` discriminator steps with one generator step
    for ``cfg.steps`` rounds. Deterministic given ``cfg.seed``.

    With ``out_dir``, writes ``ckpt_<step>.almc`` every ``checkpoint_every``
    steps, ``final.almc`` at the end and appends to ``losses.csv``.
    """
    arch = arch or cfg.architecture()
    if dataset.x.shape[1] != arch.input_size:
        raise InvalidInputError(
            f"training inputs are {dataset.x.shape[1]}x{dataset.x.shape[2]}, "
            f"architecture expects {arch.input_size}x{arch.input_size}")
    if dataset.y.max() >= arch.n_classes:
        raise InvalidInputError(f"label {dataset.y.max()} exceeds the {arch.n_classes}-way class head")
    state = init_state(arch, seed=cfg.seed, lr_d=cfg.lr_d, lr_g=cfg.lr_g, label_pool=dataset.y,
                       reference_magnitude=dataset.reference_magnitude)
    out_dir = Path(out_dir) if out_dir is not None else None
    writer = None
    handle = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        handle = open(out_dir / "losses.csv", "w", newline="", encoding="utf-8")
        writer = csv.writer(handle)
        writer.writerow(LOSS_HEADER)
    batches = _batches(state.rng, dataset.x.shape[0], cfg.batch_size)
    try:
        for _ in range(cfg.steps):
            for _ in range(cfg.d_steps_per_g):
                idx = next(batches)
                ls, lc = d_step(state, dataset.x[idx], dataset.y[idx], cfg)
            g_obj = g_step(state, cfg)
            state.step += 1
            row = (state.step, ls, lc, g_obj)
            state.history.append(row)
            if writer is not None:
                writer.writerow([state.step, repr(ls), repr(lc), repr(g_obj)])
                if state.step % cfg.checkpoint_every == 0:
                    handle.flush()
                    save_checkpoint(out_dir / f"ckpt_{state.step:06d}.almc", state.tensors())
            if progress_every and state.step % progress_every == 0:
                log.info("step %d LS=%.4f LC=%.4f G=%.4f", *row)
        if out_dir is not None:
            save_checkpoint(out_dir / "final.almc", state.tensors())
    finally:
        if handle is not None:
            handle.close()
    return state


def discriminator_accuracy(discriminator: Discriminator, x, y, batch_size: int = 64) -> float:
    """Fraction of ``x`` whose class-head argmax equals ``y`` (inference mode)."""
    return float(np.mean(predict_classes(discriminator, x, batch_size) == np.asarray(y)))


def predict_proba(discriminator: Discriminator, x, batch_size: int = 64) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = []
    with no_grad():
        for start in range(0, x.shape[0], batch_size):
            out.append(discriminator(x[start:start + batch_size]).class_probs.data)
    return np.concatenate(out, axis=0)


def predict_classes(discriminator: Discriminator, x, batch_size: int = 64) -> np.ndarray:
    return predict_proba(discriminator, x, batch_size).argmax(axis=1)
