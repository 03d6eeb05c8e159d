import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from alimnet.dsp import (
    CLIP_LENGTH, REFERENCE_CONFIG, Spectrogram, StftConfig, coverage_mask, from_db_normalized, griffin_lim,
    istft, make_window, naive_stft, spectral_convergence, stft, to_db_normalized,
)
from alimnet.exceptions import DegenerateConfigError, InvalidConfigError, InvalidInputError

COLA = StftConfig(512, 128, "hann")


def test_reference_shape_is_256_by_256():
    x = np.random.default_rng(0).uniform(-1, 1, CLIP_LENGTH)
    spec = stft(x, REFERENCE_CONFIG)
    assert spec.shape == (256, 256)
    assert spec.kind == "complex"


def test_zero_clip_gives_zero_spectrogram():
    spec = stft(np.zeros(CLIP_LENGTH))
    assert spec.shape == (256, 256)
    assert not np.any(spec.data)


def test_config_counts():
    assert REFERENCE_CONFIG.frequency_bins == 256
    assert REFERENCE_CONFIG.frame_count(CLIP_LENGTH) == 256
    assert StftConfig(8, 3).frame_count(10) == 4
    assert StftConfig(8, 3, center_pad=False).frame_count(10) == 1


@pytest.mark.parametrize("kwargs", [{"fft_size": 1}, {"hop": 0}, {"window": "blackman"}, {"fft_size": 3.5}])
def test_config_rejects_invalid(kwargs):
    with pytest.raises(InvalidConfigError):
        StftConfig(**kwargs)


def test_empty_signal_rejected():
    with pytest.raises(InvalidInputError):
        stft(np.zeros(0))


def test_fft_longer_than_signal_without_padding():
    with pytest.raises(InvalidConfigError):
        stft(np.zeros(100), StftConfig(128, 32, center_pad=False))


def test_hann_window_has_no_zero_endpoints():
    w = make_window("hann", 510)
    assert w.min() > 0
    assert np.allclose(w, w[::-1])
    assert np.all(make_window("rectangular", 7) == 1)


def test_sinusoid_peaks_at_bin_and_matches_naive_dft():
    cfg = StftConfig(510, 514, "rectangular")
    n = np.arange(4096)
    x = np.sin(2 * np.pi * 32 * n / 510)
    fast = stft(x, cfg).data
    slow = naive_stft(x, cfg).data
    assert np.all(np.abs(fast).argmax(axis=0)[1:-1] == 32)
    assert np.max(np.abs(fast - slow)) / np.max(np.abs(slow)) < 1e-6


@settings(max_examples=25, deadline=None)
@given(
    length=st.integers(16, 600),
    fft=st.integers(2, 64),
    hop=st.integers(1, 70),
    window=st.sampled_from(["hann", "rectangular"]),
    seed=st.integers(0, 2**16),
)
def test_fast_stft_matches_naive_oracle(length, fft, hop, window, seed):
    cfg = StftConfig(fft, hop, window)
    x = np.random.default_rng(seed).standard_normal(length)
    fast, slow = stft(x, cfg).data, naive_stft(x, cfg).data
    assert fast.shape == slow.shape == (fft // 2 + 1, length // hop + 1)
    assert np.max(np.abs(fast - slow)) <= 1e-6 * max(1.0, np.max(np.abs(slow)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**16), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(2000), rng.standard_normal(2000)
    cfg = StftConfig(64, 20)
    lhs = stft(a * x + b * y, cfg).data
    rhs = a * stft(x, cfg).data + b * stft(y, cfg).data
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * max(1.0, np.max(np.abs(lhs)))


def test_parseval_rectangular_hop_equals_fft():
    cfg = StftConfig(64, 64, "rectangular", center_pad=False)
    x = np.random.default_rng(3).standard_normal(64 * 20 + 17)
    mag2 = np.abs(stft(x, cfg).data) ** 2
    # one-sided spectrum: interior bins stand for two conjugate bins
    total = mag2[0].sum() + mag2[-1].sum() + 2 * mag2[1:-1].sum()
    covered = x[: 64 * 20]
    assert abs(total - 64 * np.sum(covered**2)) / total < 1e-6


def test_zero_spectrogram_inverts_to_zero():
    spec = Spectrogram(np.zeros((257, 11), dtype=complex), "complex", COLA)
    assert not np.any(istft(spec, COLA, 1280))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**16), length=st.integers(600, 5000))
def test_cola_round_trip(seed, length):
    x = np.random.default_rng(seed).uniform(-1, 1, length)
    y = istft(stft(x, COLA), COLA, length)
    assert np.max(np.abs(y - x)) < 1e-6


def test_reference_config_gap_is_four_samples_per_hop():
    cov = coverage_mask(REFERENCE_CONFIG, CLIP_LENGTH)
    gaps = np.flatnonzero(~cov)
    assert gaps.size == 4 * 255
    # gaps sit between consecutive frames: samples t*514 + 255 .. t*514 + 258
    expected = (np.arange(255)[:, None] * 514 + 255 + np.arange(4)[None, :]).ravel()
    assert np.array_equal(gaps, expected)


def test_reference_config_round_trip_on_covered_samples():
    x = np.random.default_rng(1).uniform(-1, 1, CLIP_LENGTH)
    y, covered = istft(stft(x), REFERENCE_CONFIG, CLIP_LENGTH, return_coverage=True)
    assert np.array_equal(covered, coverage_mask(REFERENCE_CONFIG, CLIP_LENGTH))
    assert np.max(np.abs(y[covered] - x[covered])) < 1e-6
    assert not np.any(y[~covered])


def test_degenerate_coverage_raises():
    cfg = StftConfig(4, 2, center_pad=False)
    spec = Spectrogram(np.zeros((3, 0), dtype=complex), "complex", cfg)
    with pytest.raises(DegenerateConfigError):
        istft(spec, cfg, target_len=50)


def test_istft_requires_matching_config_and_kind():
    spec = stft(np.ones(100), COLA)
    with pytest.raises(InvalidConfigError):
        istft(spec, REFERENCE_CONFIG)
    with pytest.raises(InvalidInputError):
        istft(spec.magnitude(), COLA)


def test_db_normalization_anchors():
    mag = Spectrogram(np.array([[1.0, 1e-4, 1e-2, 1e-6]]), "magnitude")
    db = to_db_normalized(mag).data
    assert np.allclose(db, [[1.0, -1.0, 0.0, -1.0]], atol=1e-12)


def test_db_normalization_of_silence():
    out = to_db_normalized(Spectrogram(np.zeros((4, 4)), "magnitude"))
    assert np.all(out.data == -1)


def test_from_db_anchors():
    spec = Spectrogram(np.array([[1.0, -1.0]]), "db_normalized")
    out = from_db_normalized(spec, 3.0).data
    assert np.allclose(out, [[3.0, 3.0e-4]], rtol=1e-12)
    with pytest.raises(InvalidInputError):
        from_db_normalized(spec, 0.0)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (5, 7), elements=st.floats(1e-3, 1.0)))
def test_db_round_trip_above_floor(values):
    values = values / values.max()
    db = to_db_normalized(Spectrogram(values * 2.5, "magnitude"))
    back = from_db_normalized(db, 2.5).data
    assert np.max(np.abs(back - values * 2.5) / (values * 2.5)) < 1e-9


def test_spectrogram_kind_invariants():
    with pytest.raises(InvalidInputError):
        Spectrogram(-np.ones((2, 2)), "magnitude")
    with pytest.raises(InvalidInputError):
        Spectrogram(np.full((2, 2), 1.5), "db_normalized")
    with pytest.raises(InvalidInputError):
        Spectrogram(np.ones(3), "magnitude")


def test_griffin_lim_converges_on_white_noise():
    cfg = StftConfig(512, 256, "hann")
    x = np.random.default_rng(0).standard_normal(16384)
    mag = stft(x, cfg).magnitude()
    y, hist = griffin_lim(mag, cfg, iterations=64, seed=0, target_len=len(x), return_history=True)
    assert hist[-1] < 0.1
    assert spectral_convergence(y, mag) == pytest.approx(hist[-1])


def test_griffin_lim_zero_iterations_is_random_phase_istft():
    cfg = StftConfig(64, 16)
    mag = stft(np.random.default_rng(2).standard_normal(640), cfg).magnitude()
    y = griffin_lim(mag, cfg, iterations=0, seed=5, target_len=640)
    phase = np.exp(2j * np.pi * np.random.default_rng(5).random(mag.shape))
    expected = istft(Spectrogram(mag.data * phase, "complex", cfg), cfg, 640)
    assert np.allclose(y, expected)


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 1000), tonal=st.booleans())
def test_griffin_lim_monotone_reference_config(seed, tonal):
    rng = np.random.default_rng(seed)
    n = 514 * 15
    if tonal:
        t = np.arange(n) / 8192
        x = sum(rng.uniform(0.2, 1) * np.sin(2 * np.pi * rng.uniform(100, 3000) * t) for _ in range(3))
    else:
        x = rng.standard_normal(n)
    mag = stft(x, REFERENCE_CONFIG).magnitude()
    _, hist = griffin_lim(mag, REFERENCE_CONFIG, iterations=32, seed=seed, target_len=n, return_history=True)
    assert len(hist) == 33
    assert np.all(np.diff(hist) <= 1e-9)
    assert hist[32] <= hist[1] + 1e-9


def test_griffin_lim_deterministic():
    cfg = StftConfig(64, 16)
    mag = stft(np.random.default_rng(2).standard_normal(640), cfg).magnitude()
    a = griffin_lim(mag, cfg, iterations=5, seed=9)
    b = griffin_lim(mag, cfg, iterations=5, seed=9)
    assert np.array_equal(a, b)


def test_regularized_istft_bounds_inconsistent_frames():
    mag = np.full((256, 64), 1e-2)
    phase = np.exp(2j * np.pi * np.random.default_rng(0).random(mag.shape))
    spec = Spectrogram(mag * phase, "complex", REFERENCE_CONFIG)
    plain = istft(spec, target_len=514 * 63 + 510)
    ridge = istft(spec, target_len=514 * 63 + 510, regularization=1e-2)
    assert np.abs(ridge).max() < 1e-2 < np.abs(plain).max()
    with pytest.raises(InvalidInputError):
        istft(spec, regularization=-1.0)


def test_regularized_griffin_lim_on_reference_config():
    t = np.arange(514 * 40) / 8192
    x = np.sin(2 * np.pi * 220 * t) + 0.5 * np.sin(2 * np.pi * 330 * t)
    mag = stft(x).magnitude()
    y = griffin_lim(mag, iterations=32, seed=0, target_len=len(x), regularization=1e-2)
    assert spectral_convergence(y, mag) < 0.15
    assert np.abs(y).max() < 3 * np.abs(x).max()
