"""Acceptance suite: one test per criterion, summarised as PASS/FAIL lines
at the end of the pytest run.

Criteria 6 and 7 train the reduced networks end to end (see ``smoke.py``);
they take several minutes on one CPU.
"""
import math
import time

import numpy as np
import pytest

import smoke
from alimnet import data, verify
from alimnet.dsp import (
    CLIP_LENGTH, REFERENCE_CONFIG, StftConfig, coverage_mask, griffin_lim, istft, naive_stft, stft,
    to_db_normalized,
)
from alimnet.io import load_spectrogram, read_wav, write_wav
from alimnet.models import FULL, PUBLISHED_D_COUNTS, PUBLISHED_G_FC_COUNT, build_discriminator, build_generator
from alimnet.models import compare_to_published, param_report
from alimnet.train import loss_class, loss_source

criterion = pytest.mark.criterion


@criterion(1, "reference STFT of a 16 s clip is 256x256 in under 1 s")
def test_criterion_1_stft_shape():
    x = np.random.default_rng(0).uniform(-1, 1, CLIP_LENGTH)
    start = time.perf_counter()
    spec = stft(x, REFERENCE_CONFIG)
    assert time.perf_counter() - start < 1.0
    assert spec.shape == (256, 256)


@criterion(2, "14 discriminator layer counts and generator FC 65792 in under 1 s")
def test_criterion_2_parameter_counts():
    start = time.perf_counter()
    rows = compare_to_published(build_discriminator(FULL, seed=0))
    fc = {r.name: r.count for r in param_report(build_generator(FULL, seed=0))}["fc"]
    assert time.perf_counter() - start < 1.0
    assert len(rows) == 14
    assert [row.count for row, _, _ in rows] == list(PUBLISHED_D_COUNTS)
    assert fc == PUBLISHED_G_FC_COUNT == 65792


@criterion(3, "gradient suite: layers < 1e-4, objectives < 1e-3, under 2 min")
def test_criterion_3_gradient_suite():
    start = time.perf_counter()
    results = verify.run_suite()
    assert time.perf_counter() - start < 120
    assert verify.EPS == 1e-3
    for r in results:
        bound = 1e-3 if r.name in verify.OBJECTIVES else 1e-4
        assert r.error < bound, (r.name, r.error)


@criterion(4, "DSP oracles: naive DFT, COLA round trip, 4-sample gaps, monotone Griffin-Lim, under 1 min")
def test_criterion_4_dsp_oracles():
    start = time.perf_counter()
    rng = np.random.default_rng(4)

    x = rng.standard_normal(4096)
    for cfg in (REFERENCE_CONFIG, StftConfig(64, 20), StftConfig(33, 7, "rectangular")):
        fast, slow = stft(x, cfg).data, naive_stft(x, cfg).data
        assert np.max(np.abs(fast - slow)) < 1e-6 * max(1.0, np.abs(slow).max())

    cola = StftConfig(512, 128, "hann")
    x = rng.uniform(-1, 1, 20000)
    assert np.max(np.abs(istft(stft(x, cola), cola, x.size) - x)) < 1e-6

    gaps = np.flatnonzero(~coverage_mask(REFERENCE_CONFIG, CLIP_LENGTH))
    assert gaps.size == 1020
    assert np.all(gaps.reshape(255, 4) - gaps.reshape(255, 4)[:, :1] == np.arange(4))
    assert np.all(np.diff(gaps.reshape(255, 4)[:, 0]) == 514)

    for cfg, n in ((REFERENCE_CONFIG, 514 * 15), (cola, 8192)):
        mag = stft(rng.standard_normal(n), cfg).magnitude()
        _, hist = griffin_lim(mag, cfg, iterations=32, seed=1, target_len=n, return_history=True)
        assert np.all(np.diff(hist) <= 1e-9)
    assert time.perf_counter() - start < 60


@criterion(5, "uniform discriminator gives LS = 2 log 0.5 and LC = 2 log 1/7 to 1e-9")
def test_criterion_5_uniform_anchors():
    for batch in (1, 8, 33):
        half = np.full((batch, 1), 0.5)
        uniform = np.full((batch, 7), 1 / 7)
        labels = np.arange(batch) % 7
        assert abs(loss_source(half, half).item() - 2 * math.log(0.5)) < 1e-9
        assert abs(loss_class(uniform, labels, uniform, labels[::-1]).item() - 2 * math.log(1 / 7)) < 1e-9


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    return smoke.run(tmp_path_factory.mktemp("smoke_a"))


@pytest.mark.slow
@criterion(6, "end-to-end smoke: held-out accuracy >= 0.90, trained consistency > untrained, under 30 min")
def test_criterion_6_end_to_end(smoke_run):
    print(f"\nheld-out accuracy {smoke_run.heldout_accuracy:.3f}, class consistency trained "
          f"{smoke_run.trained_consistency:.3f} vs untrained {smoke_run.untrained_consistency:.3f}, "
          f"{smoke_run.seconds:.0f} s")
    assert smoke_run.seconds < 30 * 60
    assert smoke_run.heldout_accuracy >= 0.90
    assert smoke_run.trained_consistency > smoke_run.untrained_consistency


@pytest.mark.slow
@criterion(7, "two identical runs give bit-identical checkpoints and loss CSVs")
def test_criterion_7_determinism(smoke_run, tmp_path_factory):
    again = smoke.run(tmp_path_factory.mktemp("smoke_b"))
    names = ("final.almc", "ckpt_001000.almc", "ckpt_002000.almc", "losses.csv")
    for name in names:
        assert (smoke_run.run_dir / name).read_bytes() == (again.run_dir / name).read_bytes(), name
    assert again.heldout_accuracy == smoke_run.heldout_accuracy
    assert again.trained_consistency == smoke_run.trained_consistency


@criterion(8, "preprocess -> container -> read is bit-exact; WAV round trip within 1/32768")
def test_criterion_8_container_round_trips(tmp_path):
    manifest = data.make_synthetic_corpus(tmp_path / "raw", num_classes=2, per_class=2, seed=8)
    pre = data.preprocess(tmp_path / "raw", tmp_path / "pre", seed=8)
    for raw, out in zip(manifest.entries, pre.entries):
        samples = data.cut_clip(read_wav(manifest.resolve(raw.path)).samples)
        expected = to_db_normalized(stft(samples, REFERENCE_CONFIG).magnitude()).data.astype(np.float32)
        stored = load_spectrogram(pre.resolve(out.spectrogram))
        assert stored.data.dtype == np.float32
        assert stored.data.tobytes() == expected.tobytes()
        assert stored.config == REFERENCE_CONFIG

    x = np.random.default_rng(8).uniform(-1, 1, CLIP_LENGTH)
    write_wav(tmp_path / "x.wav", x)
    assert np.max(np.abs(read_wav(tmp_path / "x.wav").samples - x)) <= 1 / 32768
