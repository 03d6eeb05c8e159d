"""Class-conditional generation, spectrogram-to-audio resynthesis and the
machine surrogates used in place of a listening test.

Neither surrogate measures musical quality. ``class_consistency`` asks an
independently trained classifier whether a generated sample carries its
conditioning label; ``feature_distance`` compares coarse spectral statistics
of two sets.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .data import canonical_dastgah, canonical_instrument, class_index, reduce_spectrogram
from .diffcore import functional as F
from .diffcore.optim import Adam
from .diffcore.tensor import no_grad
from .dsp import (
    CLIP_LENGTH, REFERENCE_CONFIG, SAMPLE_RATE, AudioClip, Spectrogram, StftConfig, from_db_normalized,
    griffin_lim,
)
from .exceptions import InvalidInputError, InvalidRequestError
from .io import write_wav
from .models import DASTGAHS, Architecture, Discriminator
from .train import load_state, predict_classes, sample_noise

log = logging.getLogger(__name__)

OUTPUT_SIZE = 256
PEAK = 0.9
# Ridge weight for phase recovery; see dsp.griffin_lim.
REGULARIZATION = 1e-2


@dataclass
class GenerationRequest:
    checkpoint: str
    dastgah: str
    instrument: Optional[str] = None
    count: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise InvalidRequestError(f"count must be >= 1, got {self.count}")
        try:
            self.dastgah = canonical_dastgah(self.dastgah)
            if self.instrument is not None:
                self.instrument = canonical_instrument(self.instrument)
        except InvalidInputError as exc:
            raise InvalidRequestError(str(exc)) from exc


def _label_for(req: GenerationRequest, n_classes: int) -> int:
    if n_classes == 2 * len(DASTGAHS):
        if req.instrument is None:
            raise InvalidRequestError(f"{req.checkpoint}: fourteen-class checkpoint needs an instrument")
        return class_index(req.dastgah, req.instrument, "fourteen")
    if n_classes == len(DASTGAHS):
        return class_index(req.dastgah)
    raise InvalidRequestError(f"{req.checkpoint}: unsupported class head of size {n_classes}")


def upsample_to(x: np.ndarray, size: int = OUTPUT_SIZE) -> np.ndarray:
    """Nearest-neighbour upsampling of the last two axes to ``size``."""
    factor = size // x.shape[-1]
    if factor * x.shape[-1] != size or x.shape[-2] != x.shape[-1]:
        raise InvalidInputError(f"cannot upsample {x.shape[-2:]} to {size}x{size}")
    return np.repeat(np.repeat(x, factor, axis=-2), factor, axis=-1)


def generate_arrays(generator, labels: Sequence[int], seed: int = 0) -> np.ndarray:
    """Inference-mode generator outputs ``(n, S, S)``; sample ``i`` draws its
    noise from ``seed + i``."""
    dim = generator.arch.noise_dim
    noise = np.stack([sample_noise(np.random.default_rng(seed + i), 1, dim)[0] for i in range(len(labels))])
    with no_grad():
        out = generator(noise, np.asarray(labels, dtype=np.intp), training=False)
    return out.data[..., 0]


def generate(req: GenerationRequest) -> List[Spectrogram]:
    """``req.count`` db-normalized 256x256 spectrograms for one label."""
    state = load_state(req.checkpoint)
    label = _label_for(req, state.arch.n_classes)
    if label not in set(state.label_pool.tolist()):
        log.warning("label %d was not present in the training data of %s", label, req.checkpoint)
    arrays = upsample_to(generate_arrays(state.generator, [label] * req.count, req.seed))
    return [Spectrogram(a, "db_normalized", REFERENCE_CONFIG) for a in arrays]


def resynthesize(spec: Spectrogram, cfg: StftConfig = REFERENCE_CONFIG, reference_magnitude: float = 1.0,
                 iterations: int = 32, seed: int = 0, normalize: bool = True,
                 regularization: float = REGULARIZATION) -> AudioClip:
    """Denormalize, recover phase with Griffin-Lim and return a
    131072-sample clip, peak-normalized to 0.9 unless ``normalize`` is off."""
    data = np.asarray(spec.data, dtype=np.float64)
    if data.shape != (cfg.frequency_bins, OUTPUT_SIZE):
        raise InvalidInputError(f"resynthesize needs a {cfg.frequency_bins}x{OUTPUT_SIZE} spectrogram, "
                                f"got {data.shape}")
    mag = from_db_normalized(Spectrogram(data, "db_normalized", cfg), reference_magnitude)
    samples = griffin_lim(mag, cfg, iterations=iterations, seed=seed, target_len=CLIP_LENGTH,
                          regularization=regularization)
    peak = np.max(np.abs(samples))
    if normalize and peak > 0:
        samples = samples * (PEAK / peak)
    return AudioClip(samples, SAMPLE_RATE)


def wav_name(dastgah: str, instrument: Optional[str], index: int) -> str:
    return f"{dastgah}_{instrument or 'any'}_{index}.wav"


def save_png(path, spec: Spectrogram) -> None:
    """Grayscale image of a db-normalized spectrogram, low frequencies at the bottom."""
    try:
        from PIL import Image
    except ImportError as exc:
        raise InvalidRequestError("PNG output needs Pillow (pip install alimnet[png])") from exc
    pixels = np.round((np.clip(spec.data, -1, 1) + 1) * 127.5).astype(np.uint8)[::-1]
    Image.fromarray(pixels, mode="L").save(path)


def write_generation(req: GenerationRequest, out_dir, iterations: int = 32, png: bool = False) -> List[Path]:
    """Generate, resynthesize and write ``<dastgah>_<instrument>_<index>.wav`` files."""
    state = load_state(req.checkpoint)
    specs = generate(req)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, spec in enumerate(specs):
        clip = resynthesize(spec, REFERENCE_CONFIG, state.reference_magnitude, iterations, seed=req.seed + i)
        path = out_dir / wav_name(req.dastgah, req.instrument, i)
        write_wav(path, clip)
        written.append(path)
        if png:
            save_png(path.with_suffix(".png"), spec)
    return written


# -- surrogate evaluation --------------------------------------------------------

def train_classifier(x, y, arch: Architecture, steps: int = 300, batch_size: int = 16, lr: float = 1e-3,
                     seed: int = 0) -> Discriminator:
    """Fit the discriminator architecture on class labels only (no source head loss)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise InvalidInputError(f"{x.shape[0]} examples for {y.shape[0]} labels")
    d_seed, run_seed = np.random.SeedSequence([seed, 1]).generate_state(2)
    net = Discriminator(arch, seed=int(d_seed), prefix="c")
    opt = Adam(net.named_parameters(trainable_only=True), lr=lr)
    rng = np.random.default_rng(int(run_seed))
    order, pos = rng.permutation(x.shape[0]), 0
    for _ in range(steps):
        if pos + batch_size > x.shape[0]:
            order, pos = rng.permutation(x.shape[0]), 0
        idx = order[pos:pos + batch_size]
        pos += batch_size
        opt.zero_grad()
        probs = net(x[idx], training=True, rng=rng).class_probs
        picked = F.take_along_last(F.clip(probs, 1e-7, 1.0), y[idx])
        loss = -F.mean(F.log(picked))
        loss.backward()
        opt.step()
    return net


def _as_array(items) -> np.ndarray:
    arrays = [np.asarray(s.data if isinstance(s, Spectrogram) else s, dtype=np.float64) for s in items]
    return np.stack(arrays) if arrays else np.zeros((0, 0, 0))


def _fit_input(x: np.ndarray, size: int) -> np.ndarray:
    if x.shape[-1] == size:
        return x
    return reduce_spectrogram(x, x.shape[-1] // size)


def class_consistency(generated, labels, classifier: Discriminator, per_class: bool = False):
    """Fraction of ``generated`` whose classifier argmax equals its label."""
    x = _as_array(generated)
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    if x.shape[0] == 0:
        raise InvalidInputError("class_consistency needs at least one generated sample")
    if labels.shape[0] != x.shape[0]:
        raise InvalidInputError(f"{labels.shape[0]} labels for {x.shape[0]} samples")
    n_classes = classifier.arch.n_classes
    if labels.min() < 0 or labels.max() >= n_classes:
        raise InvalidInputError(f"labels must be in [0, {n_classes}) for this classifier")
    hits = predict_classes(classifier, _fit_input(x, classifier.arch.input_size)) == labels
    score = float(hits.mean())
    if not per_class:
        return score
    return score, {int(c): float(hits[labels == c].mean()) for c in np.unique(labels)}


def spectral_features(spec, segments: int = 8) -> np.ndarray:
    """Centroid, bandwidth, flatness, 85% rolloff and RMS for each of
    ``segments`` time segments of a db-normalized spectrogram (frequency on
    axis 0). Frequencies are expressed as fractions of the band."""
    v = np.asarray(spec.data if isinstance(spec, Spectrogram) else spec, dtype=np.float64)
    mag = 10.0 ** ((v - 1.0) * 2.0)  # [-1, 1] -> [-80, 0] dB, linear magnitude
    power = mag ** 2
    bins = np.linspace(0.0, 1.0, power.shape[0])
    feats = []
    for seg in np.array_split(power, segments, axis=1):
        p = seg.mean(axis=1) + 1e-20
        total = p.sum()
        centroid = (bins * p).sum() / total
        bandwidth = np.sqrt(((bins - centroid) ** 2 * p).sum() / total)
        flatness = np.exp(np.mean(np.log(p))) / np.mean(p)
        rolloff = bins[min(np.searchsorted(np.cumsum(p), 0.85 * total), len(bins) - 1)]
        rms = np.sqrt(np.mean(seg))
        feats.extend([centroid, bandwidth, flatness, rolloff, rms])
    return np.asarray(feats)


def _sqrtm_psd(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((a + a.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(f1: np.ndarray, f2: np.ndarray, loading: float = 1e-6) -> float:
    """Frechet distance between Gaussian fits of two feature matrices (rows are samples)."""
    def fit(f):
        mu = f.mean(axis=0)
        cov = np.cov(f, rowvar=False) if f.shape[0] > 1 else np.zeros((f.shape[1], f.shape[1]))
        return mu, np.atleast_2d(cov) + loading * np.eye(f.shape[1])

    mu1, s1 = fit(f1)
    mu2, s2 = fit(f2)
    # tr sqrt(s1^1/2 s2 s1^1/2) is the nuclear norm of s2^1/2 s1^1/2; singular
    # values avoid square-rooting the tiny eigenvalues of rank-deficient fits.
    cross = np.linalg.svd(_sqrtm_psd(s2) @ _sqrtm_psd(s1), compute_uv=False).sum()
    value = np.sum((mu1 - mu2) ** 2) + np.trace(s1) + np.trace(s2) - 2.0 * cross
    return float(max(value, 0.0))


def feature_distance(real, generated, segments: int = 8) -> float:
    """Frechet distance between spectral-feature fits of two spectrogram sets."""
    if len(real) == 0 or len(generated) == 0:
        raise InvalidInputError("feature_distance needs two non-empty sets")
    f1 = np.stack([spectral_features(s, segments) for s in real])
    f2 = np.stack([spectral_features(s, segments) for s in generated])
    return frechet_distance(f1, f2)


@dataclass
class EvalReport:
    class_consistency: float
    feature_distance: float
    per_class: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.class_consistency <= 1.0:
            raise InvalidInputError(f"class_consistency must be in [0, 1], got {self.class_consistency}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def evaluate(generator, classifier: Discriminator, real, labels: Sequence[int], seed: int = 0,
             class_mode: str = "seven") -> EvalReport:
    """Generate one sample per label and score it against ``real``."""
    from .data import class_name

    fake = generate_arrays(generator, labels, seed)
    score, breakdown = class_consistency(fake, labels, classifier, per_class=True)
    return EvalReport(score, feature_distance(list(real), list(fake)),
                      {class_name(c, class_mode): v for c, v in breakdown.items()})
