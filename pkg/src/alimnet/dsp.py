"""Short-time spectral analysis and resynthesis.

Defaults follow the AlimNet preprocessing: 8192 Hz audio, 131072-sample clips,
``fft_size=510`` and ``hop=514`` which yields a 256 x 256 spectrogram. Because
the hop is longer than the analysis window, four samples per hop are never
seen by any frame; :func:`istft` reports them through a coverage mask instead
of interpolating.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import DegenerateConfigError, InvalidConfigError, InvalidInputError

SAMPLE_RATE = 8192
CLIP_LENGTH = 131072

WINDOWS = ("hann", "rectangular")
KINDS = ("complex", "magnitude", "db_normalized")


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 510
    hop: int = 514
    window: str = "hann"
    center_pad: bool = True

    def __post_init__(self):
        if int(self.fft_size) != self.fft_size or self.fft_size < 2:
            raise InvalidConfigError(f"fft_size must be an integer >= 2, got {self.fft_size!r}")
        if int(self.hop) != self.hop or self.hop < 1:
            raise InvalidConfigError(f"hop must be an integer >= 1, got {self.hop!r}")
        if self.window not in WINDOWS:
            raise InvalidConfigError(f"window must be one of {WINDOWS}, got {self.window!r}")

    @property
    def frequency_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def pad_left(self) -> int:
        return self.fft_size // 2 if self.center_pad else 0

    @property
    def pad_right(self) -> int:
        return self.fft_size - self.fft_size // 2 if self.center_pad else 0

    def frame_count(self, length: int) -> int:
        if self.center_pad:
            return length // self.hop + 1
        if length < self.fft_size:
            raise InvalidConfigError(
                f"fft_size={self.fft_size} exceeds signal length {length} with center_pad=False"
            )
        return (length - self.fft_size) // self.hop + 1

    def default_length(self, frames: int) -> int:
        """Shortest signal length that produces ``frames`` columns."""
        if self.center_pad:
            return (frames - 1) * self.hop
        return (frames - 1) * self.hop + self.fft_size

    def get_window(self) -> np.ndarray:
        return make_window(self.window, self.fft_size)


REFERENCE_CONFIG = StftConfig()


def make_window(kind: str, size: int) -> np.ndarray:
    """Analysis/synthesis window.

    ``hann`` is the zero-free variant ``0.5 - 0.5 cos(2 pi (n + 1) / (N + 1))``:
    every sample inside a frame gets positive weight, so frame support and
    reconstructable support coincide.
    """
    if kind == "rectangular":
        return np.ones(size)
    if kind == "hann":
        n = np.arange(size)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * (n + 1) / (size + 1))
    raise InvalidConfigError(f"unknown window {kind!r}")


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    dastgah: Optional[str] = None
    instrument: Optional[str] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidInputError(f"audio must be mono (1-D), got shape {self.samples.shape}")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class Spectrogram:
    data: np.ndarray
    kind: str
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"spectrogram kind must be one of {KINDS}, got {self.kind!r}")
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise InvalidInputError(f"spectrogram data must be 2-D, got shape {self.data.shape}")
        if self.data.size and self.kind == "magnitude" and self.data.min() < 0:
            raise InvalidInputError("magnitude spectrogram has negative entries")
        if self.data.size and self.kind == "db_normalized" and (
                self.data.min() < -1.0 - 1e-9 or self.data.max() > 1.0 + 1e-9):
            raise InvalidInputError("db_normalized entries must lie in [-1, 1]")

    @property
    def shape(self):
        return self.data.shape

    def magnitude(self) -> "Spectrogram":
        if self.kind != "complex":
            raise InvalidInputError(f"magnitude() needs a complex spectrogram, got {self.kind}")
        return Spectrogram(np.abs(self.data), "magnitude", self.config)


def _as_samples(clip) -> np.ndarray:
    x = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInputError(f"signal must be 1-D, got shape {x.shape}")
    if x.size == 0:
        raise InvalidInputError("empty signal")
    return x


def _reflect_index(idx: np.ndarray, length: int) -> np.ndarray:
    """Map out-of-range indices into [0, length) by half-sample symmetric
    mirroring (edge sample repeated, as ``np.pad(mode='symmetric')``)."""
    period = 2 * length
    idx = np.mod(idx, period)
    return np.where(idx >= length, period - 1 - idx, idx)


def _frames(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    n_frames = cfg.frame_count(x.shape[0])
    if cfg.center_pad:
        idx = np.arange(-cfg.pad_left, x.shape[0] + cfg.pad_right)
        x = x[_reflect_index(idx, x.shape[0])]
    view = np.lib.stride_tricks.sliding_window_view(x, cfg.fft_size)
    return view[:: cfg.hop][:n_frames]


def stft(clip, cfg: StftConfig = REFERENCE_CONFIG) -> Spectrogram:
    """Complex STFT, shape ``(fft_size // 2 + 1, frame_count(len))``.

    Column ``t`` is the one-sided DFT of the windowed frame starting at
    ``t * hop`` in the padded signal. With ``center_pad`` the signal is
    extended by ``fft_size // 2`` mirrored samples on the left and the
    remainder of ``fft_size`` on the right, so ``frame_count = len // hop + 1``.
    """
    x = _as_samples(clip)
    frames = _frames(x, cfg) * cfg.get_window()
    data = np.fft.rfft(frames, axis=1).T
    return Spectrogram(np.ascontiguousarray(data), "complex", cfg)


def naive_stft(clip, cfg: StftConfig = REFERENCE_CONFIG) -> Spectrogram:
    """Reference STFT: explicit per-sample framing and an O(N^2) DFT per frame.

    Slow; exists to check :func:`stft` against.
    """
    x = _as_samples(clip)
    n = cfg.fft_size
    length = x.shape[0]
    n_frames = cfg.frame_count(length)
    window = cfg.get_window()
    k = np.arange(cfg.frequency_bins)[:, None]
    m = np.arange(n)[None, :]
    basis = np.exp(-2j * np.pi * k * m / n)
    out = np.zeros((cfg.frequency_bins, n_frames), dtype=complex)
    for t in range(n_frames):
        frame = np.empty(n)
        for j in range(n):
            i = t * cfg.hop + j - cfg.pad_left
            # mirror about the signal edges, edge sample repeated
            while i < 0 or i >= length:
                if i < 0:
                    i = -i - 1
                if i >= length:
                    i = 2 * length - 1 - i
            frame[j] = x[i] * window[j]
        out[:, t] = basis @ frame
    return Spectrogram(out, "complex", cfg)


def _overlap_add(frames: np.ndarray, cfg: StftConfig, target_len: int):
    """Overlap-add time-domain frames ``(n_frames, fft_size)`` with the
    synthesis window; returns the weighted sum and the window energy.

    Mirrored padding is folded back onto the samples it copies, which makes
    ``num / den`` the exact least-squares inverse of :func:`stft`.
    """
    n_frames, n = frames.shape
    window = cfg.get_window()
    src = (np.arange(n_frames)[:, None] * cfg.hop + np.arange(n)[None, :] - cfg.pad_left).ravel()
    if cfg.center_pad:
        src = _reflect_index(src, target_len)
    keep = (src >= 0) & (src < target_len)
    src = src[keep]
    num = np.bincount(src, weights=(frames * window).ravel()[keep], minlength=target_len)
    den = np.bincount(src, weights=np.broadcast_to(window**2, frames.shape).ravel()[keep],
                      minlength=target_len)
    return num, den


def istft(spec: Spectrogram, cfg: Optional[StftConfig] = None, target_len: Optional[int] = None,
          return_coverage: bool = False, regularization: float = 0.0):
    """Inverse STFT by window-energy-normalized overlap-add.

    Samples that no analysis frame touches come back as 0; pass
    ``return_coverage=True`` to also get the boolean coverage mask.

    ``regularization`` adds ``regularization * max(window energy)`` to every
    denominator (a ridge penalty on the signal). Zero gives the exact
    least-squares inverse. A positive value keeps samples near the window
    tails bounded when the spectrogram is not consistent, at the price of
    no longer inverting consistent spectrograms exactly.
    """
    if spec.kind != "complex":
        raise InvalidInputError(f"istft needs a complex spectrogram, got {spec.kind!r}")
    cfg = spec.config if cfg is None else cfg
    if cfg != spec.config:
        raise InvalidConfigError(f"spectrogram was produced with {spec.config}, not {cfg}")
    bins, n_frames = spec.data.shape
    if bins != cfg.frequency_bins:
        raise InvalidInputError(f"expected {cfg.frequency_bins} frequency bins, got {bins}")
    if target_len is None:
        target_len = cfg.default_length(n_frames)
    if target_len < 1:
        raise InvalidInputError(f"target_len must be positive, got {target_len}")
    if regularization < 0:
        raise InvalidInputError(f"regularization must be >= 0, got {regularization}")
    frames = np.fft.irfft(spec.data.T, n=cfg.fft_size, axis=1)
    num, den = _overlap_add(frames, cfg, target_len)
    covered = den > 1e-12
    if not covered.any():
        raise DegenerateConfigError(f"no sample of a {target_len}-sample signal is covered by {cfg}")
    y = np.zeros(target_len)
    y[covered] = num[covered] / (den[covered] + regularization * den.max())
    if return_coverage:
        return y, covered
    return y


def coverage_mask(cfg: StftConfig, length: int) -> np.ndarray:
    """Which samples of a ``length``-sample signal fall inside some frame."""
    frames = np.ones((cfg.frame_count(length), cfg.fft_size))
    _, den = _overlap_add(frames, cfg, length)
    return den > 1e-12


def to_db_normalized(spec: Spectrogram, floor_db: float = -80.0) -> Spectrogram:
    """Map magnitudes to dB relative to the spectrogram max, clamp at
    ``floor_db`` and rescale ``[floor_db, 0]`` affinely onto ``[-1, 1]``."""
    if spec.kind != "magnitude":
        raise InvalidInputError(f"to_db_normalized needs a magnitude spectrogram, got {spec.kind!r}")
    if floor_db >= 0:
        raise InvalidInputError(f"floor_db must be negative, got {floor_db}")
    mag = np.asarray(spec.data, dtype=np.float64)
    peak = mag.max() if mag.size else 0.0
    if peak <= 0:
        return Spectrogram(-np.ones_like(mag), "db_normalized", spec.config)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag / peak)
    db = np.clip(db, floor_db, 0.0)
    return Spectrogram(1.0 - 2.0 * db / floor_db, "db_normalized", spec.config)


def from_db_normalized(spec: Spectrogram, reference_magnitude: float,
                       floor_db: float = -80.0) -> Spectrogram:
    if spec.kind != "db_normalized":
        raise InvalidInputError(f"from_db_normalized needs a db_normalized spectrogram, got {spec.kind!r}")
    if not reference_magnitude > 0:
        raise InvalidInputError(f"reference_magnitude must be positive, got {reference_magnitude}")
    v = np.asarray(spec.data, dtype=np.float64)
    if v.size and (v.min() < -1.0 - 1e-9 or v.max() > 1.0 + 1e-9):
        raise InvalidInputError("db_normalized entries must lie in [-1, 1]")
    db = (1.0 - np.clip(v, -1.0, 1.0)) * floor_db / 2.0
    return Spectrogram(reference_magnitude * 10.0 ** (db / 20.0), "magnitude", spec.config)


def spectral_convergence(signal, target: Spectrogram) -> float:
    """``||  |STFT(signal)| - M ||_F / ||M||_F`` for target magnitudes ``M``."""
    mag = np.abs(stft(signal, target.config).data)
    ref = np.asarray(target.data, dtype=np.float64)
    denom = np.linalg.norm(ref)
    if denom == 0:
        return float(np.linalg.norm(mag))
    return float(np.linalg.norm(mag - ref) / denom)


def griffin_lim(spec: Spectrogram, cfg: Optional[StftConfig] = None, iterations: int = 32,
                seed: int = 0, target_len: Optional[int] = None, return_history: bool = False,
                regularization: float = 0.0):
    """Estimate a waveform whose STFT magnitude matches ``spec``.

    Starts from uniformly random phase drawn from ``seed`` and alternates
    ``istft -> stft -> keep phase, reset magnitude``. With
    ``return_history=True`` also returns the spectral convergence of every
    iterate (``iterations + 1`` values, the first for the random-phase start).

    With the default ``regularization=0`` spectral convergence never
    increases. When frames do not overlap every phase is consistent, so the
    plain iteration stays at its random start and the inverse blows up
    near the window tails; a positive ``regularization`` (see :func:`istft`)
    makes the iteration prefer bounded signals instead.
    """
    if spec.kind != "magnitude":
        raise InvalidInputError(f"griffin_lim needs a magnitude spectrogram, got {spec.kind!r}")
    if iterations < 0:
        raise InvalidInputError(f"iterations must be >= 0, got {iterations}")
    cfg = spec.config if cfg is None else cfg
    mag = np.asarray(spec.data, dtype=np.float64)
    if target_len is None:
        target_len = cfg.default_length(mag.shape[1])
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(mag.shape))
    target = Spectrogram(mag, "magnitude", cfg)

    y = istft(Spectrogram(mag * phase, "complex", cfg), cfg, target_len, regularization=regularization)
    history = []
    for _ in range(iterations):
        rebuilt = stft(y, cfg).data
        if return_history:
            history.append(_sc(np.abs(rebuilt), mag))
        size = np.abs(rebuilt)
        phase = np.where(size > 0, rebuilt / np.where(size > 0, size, 1.0), 1.0)
        y = istft(Spectrogram(mag * phase, "complex", cfg), cfg, target_len, regularization=regularization)
    if return_history:
        history.append(spectral_convergence(y, target))
        return y, history
    return y


def _sc(mag: np.ndarray, ref: np.ndarray) -> float:
    denom = np.linalg.norm(ref)
    return float(np.linalg.norm(mag - ref) / denom) if denom else float(np.linalg.norm(mag))
