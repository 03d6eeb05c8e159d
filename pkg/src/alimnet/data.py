"""Labeled audio corpora: MICM-style directory scanning, clip cutting,
spectrogram preprocessing and a seeded synthetic stand-in corpus.

Directory layout: ``<root>/<dastgah>/<instrument>/<name>.wav`` with 8192 Hz
mono 16-bit WAV files.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
from sklearn.model_selection import train_test_split

from .dsp import CLIP_LENGTH, REFERENCE_CONFIG, SAMPLE_RATE, Spectrogram, StftConfig, stft, to_db_normalized
from .exceptions import DataError, InvalidInputError, ManifestError, TooShortError
from .io import load_spectrogram, read_wav, save_spectrogram, write_wav
from .models import DASTGAHS, INSTRUMENTS

log = logging.getLogger(__name__)

# Published MICM class and instrument counts.
MICM_CLASS_COUNTS = {"Shour": 445, "Homayoun": 173, "Mahour": 150, "Segah": 74,
                     "Chahargah": 106, "Rastpanjgah": 94, "Nava": 95}
MICM_INSTRUMENT_COUNTS = {"violin": 506, "ney": 631}
MICM_TOTAL = 1137

MANIFEST_NAME = "manifest.json"


def canonical_dastgah(name: str) -> str:
    """Case-insensitive match against the seven Dastgah spellings."""
    for d in DASTGAHS:
        if d.lower() == name.strip().lower():
            return d
    raise InvalidInputError(f"unknown Dastgah {name!r}; expected one of {', '.join(DASTGAHS)}")


def canonical_instrument(name: str) -> str:
    lowered = name.strip().lower()
    if lowered in INSTRUMENTS:
        return lowered
    raise InvalidInputError(f"unknown instrument {name!r}; expected one of {', '.join(INSTRUMENTS)}")


def class_index(dastgah: str, instrument: Optional[str] = None, class_mode: str = "seven") -> int:
    d = DASTGAHS.index(canonical_dastgah(dastgah))
    if class_mode == "seven":
        return d
    if instrument is None:
        raise InvalidInputError("fourteen-class labels need an instrument")
    return d + len(DASTGAHS) * INSTRUMENTS.index(canonical_instrument(instrument))


def class_name(index: int, class_mode: str = "seven") -> str:
    if class_mode == "seven":
        return DASTGAHS[index]
    return f"{DASTGAHS[index % 7]}/{INSTRUMENTS[index // 7]}"


@dataclass
class ManifestEntry:
    path: str
    dastgah: str
    instrument: str
    spectrogram: Optional[str] = None
    max_magnitude: Optional[float] = None

    @property
    def dastgah_index(self) -> int:
        return DASTGAHS.index(self.dastgah)

    @property
    def instrument_index(self) -> int:
        return INSTRUMENTS.index(self.instrument)


@dataclass
class DatasetManifest:
    entries: List[ManifestEntry] = field(default_factory=list)
    root: Optional[str] = None
    stft: Optional[dict] = None
    reference_magnitude: Optional[float] = None

    def __len__(self):
        return len(self.entries)

    @property
    def class_counts(self) -> Dict[str, int]:
        counts = {d: 0 for d in DASTGAHS}
        for e in self.entries:
            counts[e.dastgah] += 1
        return counts

    @property
    def instrument_counts(self) -> Dict[str, int]:
        counts = {i: 0 for i in INSTRUMENTS}
        for e in self.entries:
            counts[e.instrument] += 1
        return counts

    def to_dict(self) -> dict:
        return {
            "root": self.root,
            "stft": self.stft,
            "reference_magnitude": self.reference_magnitude,
            "class_counts": self.class_counts,
            "instrument_counts": self.instrument_counts,
            "total": len(self),
            "entries": [vars(e) for e in self.entries],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ManifestError(f"{path}: cannot read manifest ({exc})") from exc
        entries = [ManifestEntry(**e) for e in raw.get("entries", [])]
        return cls(entries, root=raw.get("root"), stft=raw.get("stft"),
                   reference_magnitude=raw.get("reference_magnitude"))

    def resolve(self, relative: str) -> Path:
        p = Path(relative)
        return p if p.is_absolute() or self.root is None else Path(self.root) / p


def scan_manifest(root) -> DatasetManifest:
    """Collect every ``<root>/<dastgah>/<instrument>/*.wav``.

    Directory names are matched case-insensitively. Any other directory at
    the label levels raises :class:`ManifestError` listing all offenders.
    """
    root = Path(root)
    if not root.is_dir():
        raise ManifestError(f"{root}: not a directory")
    entries, offenders = [], []
    for ddir in sorted(p for p in root.iterdir() if p.is_dir()):
        try:
            dastgah = canonical_dastgah(ddir.name)
        except InvalidInputError:
            offenders.append(str(ddir.relative_to(root)))
            continue
        for idir in sorted(p for p in ddir.iterdir() if p.is_dir()):
            try:
                instrument = canonical_instrument(idir.name)
            except InvalidInputError:
                offenders.append(str(idir.relative_to(root)))
                continue
            for wav in sorted(idir.glob("*.wav")):
                entries.append(ManifestEntry(str(wav.relative_to(root)), dastgah, instrument))
    if offenders:
        raise ManifestError("unknown Dastgah/instrument directories", offenders)
    return DatasetManifest(entries, root=str(root))


def validate_micm(manifest: DatasetManifest) -> None:
    """Raise unless the counts match the published MICM description."""
    problems = []
    for name, expected in MICM_CLASS_COUNTS.items():
        got = manifest.class_counts[name]
        if got != expected:
            problems.append(f"{name}: {got} != {expected}")
    for name, expected in MICM_INSTRUMENT_COUNTS.items():
        got = manifest.instrument_counts[name]
        if got != expected:
            problems.append(f"{name}: {got} != {expected}")
    if len(manifest) != MICM_TOTAL:
        problems.append(f"total: {len(manifest)} != {MICM_TOTAL}")
    if problems:
        raise ManifestError("manifest does not match the MICM class counts", problems)


def cut_clip(samples, policy: str = "head", seed: Optional[int] = None, length: int = CLIP_LENGTH,
             pad: bool = False) -> np.ndarray:
    """Cut to exactly ``length`` samples: the prefix (``head``) or a seeded
    random window (``random``). Shorter input raises unless ``pad`` is set,
    in which case it is zero-padded at the end."""
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.shape[0] < length:
        if not pad:
            raise TooShortError(f"clip has {x.shape[0]} samples, needs at least {length}")
        return np.concatenate([x, np.zeros(length - x.shape[0])])
    if policy == "head":
        return x[:length].copy()
    if policy == "random":
        start = int(np.random.default_rng(seed).integers(0, x.shape[0] - length + 1))
        return x[start:start + length].copy()
    raise InvalidInputError(f"crop policy must be 'head' or 'random', got {policy!r}")


def spectrogram_of(samples, cfg: StftConfig = REFERENCE_CONFIG, kind: str = "db_normalized"):
    """Spectrogram of a cut clip as float32, plus the clip's max magnitude."""
    mag = stft(samples, cfg).magnitude()
    peak = float(mag.data.max())
    if kind == "magnitude":
        out = mag
    elif kind == "db_normalized":
        out = to_db_normalized(mag)
    else:
        raise InvalidInputError(f"spectrogram kind must be 'magnitude' or 'db_normalized', got {kind!r}")
    return Spectrogram(out.data.astype(np.float32), out.kind, cfg), peak


def _clip_seed(seed: int, path: str) -> int:
    return int(np.random.SeedSequence([seed, *path.encode("utf-8")]).generate_state(1)[0])


def preprocess(in_dir, out_dir, cfg: StftConfig = REFERENCE_CONFIG, crop: str = "head", seed: int = 0,
               kind: str = "db_normalized", expect_micm: bool = False, pad: bool = False,
               threads: int = 1) -> DatasetManifest:
    """Cut every clip, transform it and write one ALIM container per file
    under ``out_dir`` (same layout, ``.alim`` suffix) plus ``manifest.json``.

    ``reference_magnitude`` in the manifest is the median of per-clip max
    magnitudes.
    """
    source = scan_manifest(in_dir)
    if expect_micm:
        validate_micm(source)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(entry: ManifestEntry) -> ManifestEntry:
        clip = read_wav(source.resolve(entry.path))
        samples = cut_clip(clip.samples, crop, seed=_clip_seed(seed, entry.path), pad=pad)
        spec, peak = spectrogram_of(samples, cfg, kind)
        rel = str(Path(entry.path).with_suffix(".alim"))
        save_spectrogram(out_dir / rel, spec)
        return ManifestEntry(str((Path(source.root) / entry.path).resolve()), entry.dastgah,
                             entry.instrument, spectrogram=rel, max_magnitude=peak)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(work, source.entries))
    else:
        entries = [work(e) for e in source.entries]
    peaks = [e.max_magnitude for e in entries]
    manifest = DatasetManifest(
        entries, root=str(out_dir.resolve()),
        stft={"fft_size": cfg.fft_size, "hop": cfg.hop, "window": cfg.window,
              "center_pad": cfg.center_pad, "kind": kind},
        reference_magnitude=float(np.median(peaks)) if peaks else None,
    )
    manifest.save(out_dir / MANIFEST_NAME)
    return manifest


def reduce_spectrogram(x: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean downsampling of the last two axes by ``factor``."""
    x = np.asarray(x, dtype=np.float64)
    if factor == 1:
        return x
    *lead, h, w = x.shape
    if h % factor or w % factor:
        raise InvalidInputError(f"cannot reduce {h}x{w} by {factor}")
    return x.reshape(*lead, h // factor, factor, w // factor, factor).mean(axis=(-3, -1))


@dataclass
class TrainingExample:
    spectrogram: np.ndarray
    class_index: int
    instrument_index: int


@dataclass
class EpochReport:
    epoch: int
    emitted: int = 0
    skipped: List[tuple] = field(default_factory=list)


def _load_example(manifest: DatasetManifest, entry: ManifestEntry, cfg: StftConfig, crop: str,
                  seed: int, kind: str, class_mode: str) -> TrainingExample:
    if entry.spectrogram is not None:
        data = load_spectrogram(manifest.resolve(entry.spectrogram)).data
    else:
        clip = read_wav(manifest.resolve(entry.path))
        data = spectrogram_of(cut_clip(clip.samples, crop, seed=_clip_seed(seed, entry.path)), cfg, kind)[0].data
    return TrainingExample(np.asarray(data), class_index(entry.dastgah, entry.instrument, class_mode),
                           entry.instrument_index)


def batch_iter(manifest: DatasetManifest, batch_size: int, shuffle_seed: int = 0, epoch: int = 0,
               cfg: StftConfig = REFERENCE_CONFIG, crop: str = "head", kind: str = "db_normalized",
               class_mode: str = "seven", report: Optional[EpochReport] = None
               ) -> Iterator[List[TrainingExample]]:
    """One epoch of batches in a shuffle order fixed by ``(shuffle_seed, epoch)``.

    The final partial batch is emitted. Files that cannot be read are
    skipped with a warning and recorded in ``report``.
    """
    if batch_size < 1:
        raise InvalidInputError(f"batch_size must be >= 1, got {batch_size}")
    report = report if report is not None else EpochReport(epoch)
    order = np.random.default_rng([shuffle_seed, epoch]).permutation(len(manifest))
    batch: List[TrainingExample] = []
    for i in order:
        entry = manifest.entries[i]
        try:
            example = _load_example(manifest, entry, cfg, crop, shuffle_seed, kind, class_mode)
        except (DataError, OSError) as exc:
            log.warning("skipping %s: %s", entry.path, exc)
            report.skipped.append((entry.path, str(exc)))
            continue
        batch.append(example)
        report.emitted += 1
        if len(batch) == batch_size:
            yield batch
            batch = []
    if batch:
        yield batch


def load_arrays(manifest: DatasetManifest, class_mode: str = "seven", reduce_factor: int = 1):
    """Stack every preprocessed spectrogram: ``(x, y, instrument)`` arrays."""
    xs, ys, inst = [], [], []
    for entry in manifest.entries:
        if entry.spectrogram is None:
            raise ManifestError(f"{entry.path}: no preprocessed spectrogram; run preprocess first")
        xs.append(reduce_spectrogram(load_spectrogram(manifest.resolve(entry.spectrogram)).data, reduce_factor))
        ys.append(class_index(entry.dastgah, entry.instrument, class_mode))
        inst.append(entry.instrument_index)
    if not xs:
        raise ManifestError("manifest has no entries")
    return np.stack(xs), np.asarray(ys, dtype=np.intp), np.asarray(inst, dtype=np.intp)


def stratified_split(y, test_fraction: float = 0.1, seed: int = 0):
    """Seeded stratified train/held-out index split."""
    idx = np.arange(len(y))
    train_idx, test_idx = train_test_split(idx, test_size=test_fraction, random_state=seed, stratify=y)
    return np.sort(train_idx), np.sort(test_idx)


# -- synthetic corpus ----------------------------------------------------------

# Seven-note pitch sets in cents above each class tonic; every class differs
# in both tonic and interval pattern.
_SCALES_CENTS = (
    (0, 150, 300, 500, 700, 800, 1000),
    (0, 150, 400, 500, 700, 800, 1000),
    (0, 200, 400, 500, 700, 900, 1100),
    (0, 150, 350, 500, 650, 850, 1000),
    (0, 150, 400, 500, 700, 850, 1100),
    (0, 200, 400, 500, 700, 900, 1000),
    (0, 200, 300, 500, 700, 850, 1000),
)
_TONICS_HZ = (131.0, 175.0, 233.0, 311.0, 415.0, 554.0, 740.0)


def pitch_set(class_id: int) -> np.ndarray:
    return _TONICS_HZ[class_id] * 2.0 ** (np.asarray(_SCALES_CENTS[class_id]) / 1200.0)


def render_clip(class_id: int, instrument: str, rng: np.random.Generator,
                length: int = CLIP_LENGTH, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Melody over the class pitch set above a tonic drone, as enveloped
    partials plus a little noise; peak amplitude 0.8.

    Notes follow shuffled passes through the whole set so every clip
    touches every degree.
    """
    notes = pitch_set(class_id)
    partials = (1.0, 0.5, 0.33, 0.25) if instrument == "violin" else (1.0, 0.2)
    breath = 0.002 if instrument == "violin" else 0.01
    t_all = np.arange(length) / sample_rate
    out = 0.3 * np.sin(2 * np.pi * notes[0] * t_all + rng.uniform(0, 2 * np.pi))
    pos, order = 0, []
    while pos < length:
        if not order:
            order = list(rng.permutation(len(notes)))
        degree = order.pop()
        dur = int(sample_rate * rng.uniform(0.2, 0.6))
        n = min(dur, length - pos)
        t = t_all[:n]
        freq = notes[degree]
        env = np.minimum(t / 0.02, 1.0) * np.exp(-t * rng.uniform(1.0, 3.0))
        tone = sum(a * np.sin(2 * np.pi * freq * (k + 1) * t + rng.uniform(0, 2 * np.pi))
                   for k, a in enumerate(partials) if freq * (k + 1) < sample_rate / 2)
        out[pos:pos + n] += env * tone
        pos += dur
    out += breath * rng.standard_normal(length)
    return 0.8 * out / np.max(np.abs(out))


def make_synthetic_corpus(out_dir, num_classes: int = 2, per_class: int = 10, seed: int = 0,
                          length: int = CLIP_LENGTH) -> DatasetManifest:
    """Write a deterministic labeled corpus in the MICM layout.

    Class ``k`` uses the ``k``-th Dastgah name; clips alternate violin / ney.
    """
    if not 2 <= num_classes <= len(DASTGAHS):
        raise InvalidInputError(f"num_classes must be in [2, 7], got {num_classes}")
    if per_class < 1:
        raise InvalidInputError(f"per_class must be >= 1, got {per_class}")
    out_dir = Path(out_dir)
    for k in range(num_classes):
        for i in range(per_class):
            instrument = INSTRUMENTS[i % 2]
            rng = np.random.default_rng([seed, k, i])
            samples = render_clip(k, instrument, rng, length)
            write_wav(out_dir / DASTGAHS[k] / instrument / f"clip_{i:04d}.wav", samples)
    return scan_manifest(out_dir)
