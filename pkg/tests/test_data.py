import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alimnet import data
from alimnet.dsp import CLIP_LENGTH, SAMPLE_RATE, StftConfig
from alimnet.exceptions import InvalidInputError, ManifestError, TooShortError
from alimnet.io import load_spectrogram, read_wav, write_wav
from alimnet.models import DASTGAHS


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    manifest = data.make_synthetic_corpus(root / "raw", num_classes=2, per_class=5, seed=3)
    pre = data.preprocess(root / "raw", root / "pre", seed=3)
    return root, manifest, pre


def touch_wavs(root, counts):
    for (dastgah, instrument), n in counts.items():
        d = root / dastgah / instrument
        d.mkdir(parents=True, exist_ok=True)
        for i in range(n):
            (d / f"{i}.wav").write_bytes(b"")


def test_empty_directory_gives_empty_manifest(tmp_path):
    m = data.scan_manifest(tmp_path)
    assert len(m) == 0
    assert sum(m.class_counts.values()) == 0


def test_micm_layout_counts(tmp_path):
    # split each class over the two instruments so the instrument totals also match
    violin = {"Shour": 200, "Homayoun": 80, "Mahour": 70, "Segah": 30, "Chahargah": 46, "Rastpanjgah": 40,
              "Nava": 40}
    counts = {}
    for name, total in data.MICM_CLASS_COUNTS.items():
        counts[(name, "violin")] = violin[name]
        counts[(name, "ney")] = total - violin[name]
    touch_wavs(tmp_path, counts)
    m = data.scan_manifest(tmp_path)
    assert m.class_counts == {"Shour": 445, "Homayoun": 173, "Mahour": 150, "Segah": 74, "Chahargah": 106,
                              "Rastpanjgah": 94, "Nava": 95}
    assert len(m) == 1137
    assert m.instrument_counts == {"violin": 506, "ney": 631}
    data.validate_micm(m)


def test_validate_micm_lists_mismatches(tmp_path):
    touch_wavs(tmp_path, {("Shour", "ney"): 2})
    with pytest.raises(ManifestError, match="Shour: 2 != 445"):
        data.validate_micm(data.scan_manifest(tmp_path))


def test_unknown_directories_are_all_reported(tmp_path):
    touch_wavs(tmp_path, {("shour", "VIOLIN"): 1, ("Bayat", "ney"): 1, ("Nava", "setar"): 1})
    with pytest.raises(ManifestError) as err:
        data.scan_manifest(tmp_path)
    assert "Bayat" in str(err.value) and "setar" in str(err.value)


def test_labels_are_case_insensitive(tmp_path):
    touch_wavs(tmp_path, {("sHoUr", "Violin"): 1})
    (entry,) = data.scan_manifest(tmp_path).entries
    assert (entry.dastgah, entry.instrument) == ("Shour", "violin")


def test_class_index_modes():
    assert data.class_index("segah") == 3
    assert data.class_index("Segah", "ney", "fourteen") == 3 + 7
    assert data.class_name(10, "fourteen") == "Segah/ney"
    with pytest.raises(InvalidInputError):
        data.class_index("Segah", None, "fourteen")


def test_cut_clip_policies():
    x = np.arange(200000, dtype=float)
    assert np.array_equal(data.cut_clip(x), x[:CLIP_LENGTH])
    assert CLIP_LENGTH / SAMPLE_RATE == 16
    same = np.arange(CLIP_LENGTH, dtype=float)
    assert np.array_equal(data.cut_clip(same), same)
    r1, r2 = data.cut_clip(x, "random", seed=4), data.cut_clip(x, "random", seed=4)
    assert np.array_equal(r1, r2)
    assert np.all(np.diff(r1) == 1) and r1.shape == (CLIP_LENGTH,)


def test_cut_clip_short_input():
    with pytest.raises(TooShortError, match="100"):
        data.cut_clip(np.ones(100))
    padded = data.cut_clip(np.ones(100), pad=True)
    assert padded.shape == (CLIP_LENGTH,) and padded[:100].sum() == 100 and not padded[100:].any()
    with pytest.raises(InvalidInputError):
        data.cut_clip(np.ones(CLIP_LENGTH), "middle")


def test_synthetic_corpus_contract(corpus):
    root, manifest, _ = corpus
    assert manifest.class_counts["Shour"] == 5 and manifest.class_counts["Homayoun"] == 5
    assert manifest.instrument_counts == {"violin": 6, "ney": 4}
    for entry in manifest.entries:
        clip = read_wav(manifest.resolve(entry.path))
        assert clip.samples.shape == (CLIP_LENGTH,)
        assert np.max(np.abs(clip.samples)) <= 0.9


def test_synthetic_corpus_is_deterministic(corpus, tmp_path):
    root, manifest, _ = corpus
    again = data.make_synthetic_corpus(tmp_path, num_classes=2, per_class=5, seed=3)
    for a, b in zip(manifest.entries, again.entries):
        assert manifest.resolve(a.path).read_bytes() == again.resolve(b.path).read_bytes()


def test_synthetic_corpus_rejects_bad_class_count(tmp_path):
    for n in (1, 8):
        with pytest.raises(InvalidInputError):
            data.make_synthetic_corpus(tmp_path, num_classes=n)


def test_pitch_sets_are_distinct():
    ratios = {tuple(np.round(data.pitch_set(k) / data.pitch_set(k)[0], 6)) for k in range(7)}
    assert len(ratios) == 7
    assert all(len(set(data.pitch_set(k))) == 7 for k in range(7))


def test_synthetic_classes_are_separable(tmp_path):
    """Nearest-centroid on mean log spectra, 7 classes, held-out split.
    Each clip's overall level is removed first; it carries no class information."""
    data.make_synthetic_corpus(tmp_path / "raw", num_classes=7, per_class=12, seed=0)
    m = data.preprocess(tmp_path / "raw", tmp_path / "pre", seed=0)
    x, y, _ = data.load_arrays(m)
    feats = x.mean(axis=2)
    feats -= feats.mean(axis=1, keepdims=True)
    train, test = data.stratified_split(y, 0.3, seed=0)
    centroids = np.stack([feats[train][y[train] == k].mean(axis=0) for k in range(7)])
    dist = ((feats[test][:, None, :] - centroids[None]) ** 2).sum(axis=2)
    assert np.mean(dist.argmin(axis=1) == y[test]) >= 0.95


def test_preprocess_outputs(corpus):
    root, manifest, pre = corpus
    assert len(pre) == len(manifest)
    for entry in pre.entries:
        spec = load_spectrogram(pre.resolve(entry.spectrogram))
        assert spec.shape == (256, 256) and spec.kind == "db_normalized"
        assert spec.data.min() >= -1 and spec.data.max() <= 1
    peaks = [e.max_magnitude for e in pre.entries]
    assert pre.reference_magnitude == pytest.approx(np.median(peaks))
    saved = json.loads((root / "pre" / "manifest.json").read_text(encoding="utf-8"))
    assert saved["total"] == 10 and saved["class_counts"]["Shour"] == 5
    assert data.DatasetManifest.load(root / "pre").entries == pre.entries


def test_preprocess_is_bit_identical_and_thread_independent(corpus, tmp_path):
    root, _, pre = corpus
    again = data.preprocess(root / "raw", tmp_path / "a", seed=3, threads=3)
    for a, b in zip(pre.entries, again.entries):
        assert pre.resolve(a.spectrogram).read_bytes() == again.resolve(b.spectrogram).read_bytes()
    assert again.reference_magnitude == pre.reference_magnitude


def test_preprocess_magnitude_kind_and_random_crop(tmp_path):
    write_wav(tmp_path / "raw" / "Nava" / "ney" / "a.wav", np.random.default_rng(0).uniform(-.5, .5, 140000))
    m = data.preprocess(tmp_path / "raw", tmp_path / "pre", kind="magnitude", crop="random", seed=1)
    spec = load_spectrogram(m.resolve(m.entries[0].spectrogram))
    assert spec.kind == "magnitude" and spec.shape == (256, 256) and spec.data.min() >= 0


def test_preprocess_rejects_short_clip_unless_padding(tmp_path):
    write_wav(tmp_path / "raw" / "Nava" / "ney" / "short.wav", np.zeros(1000))
    with pytest.raises(TooShortError):
        data.preprocess(tmp_path / "raw", tmp_path / "pre")
    m = data.preprocess(tmp_path / "raw", tmp_path / "pre", pad=True)
    assert len(m) == 1


def test_batch_iter_sizes_and_order(corpus):
    _, manifest, _ = corpus
    sub = data.DatasetManifest(manifest.entries, root=manifest.root)
    cfg = StftConfig(510, 514)
    batches = list(data.batch_iter(sub, 4, shuffle_seed=1, cfg=cfg))
    assert [len(b) for b in batches] == [4, 4, 2]
    again = list(data.batch_iter(sub, 4, shuffle_seed=1, cfg=cfg))
    assert all(np.array_equal(a.spectrogram, b.spectrogram) for x, y in zip(batches, again) for a, b in zip(x, y))
    for batch in batches:
        for ex in batch:
            assert ex.spectrogram.shape == (256, 256)
            assert ex.class_index in (0, 1) and ex.instrument_index in (0, 1)


def test_batch_iter_uses_preprocessed_containers(corpus):
    _, _, pre = corpus
    labels = [ex.class_index for b in data.batch_iter(pre, 3, shuffle_seed=2) for ex in b]
    assert sorted(labels) == [0] * 5 + [1] * 5


def test_batch_iter_skips_unreadable_files(corpus, tmp_path):
    _, manifest, _ = corpus
    (tmp_path / "bad.wav").write_bytes(b"garbage")
    entries = manifest.entries[:3] + [data.ManifestEntry(str(tmp_path / "bad.wav"), "Nava", "ney")]
    report = data.EpochReport(0)
    batches = list(data.batch_iter(data.DatasetManifest(entries, root=manifest.root), 2, report=report))
    assert sum(len(b) for b in batches) == 3
    assert report.emitted == 3
    assert len(report.skipped) == 1 and "bad.wav" in report.skipped[0][0]


def test_batch_iter_rejects_zero_batch(corpus):
    with pytest.raises(InvalidInputError):
        next(data.batch_iter(corpus[1], 0))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(0, 1000))
def test_reduce_spectrogram_preserves_mean(exp, seed):
    x = np.random.default_rng(seed).standard_normal((3, 16, 16))
    r = data.reduce_spectrogram(x, 2 ** exp)
    assert r.shape == (3, 16 // 2 ** exp, 16 // 2 ** exp)
    assert abs(r.mean() - x.mean()) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_stratified_split_is_stratified(seed):
    y = np.repeat([0, 1, 2], 20)
    train, test = data.stratified_split(y, 0.1, seed)
    assert np.intersect1d(train, test).size == 0 and train.size + test.size == 60
    assert np.array_equal(np.bincount(y[test]), [2, 2, 2])


def test_dastgah_constants():
    assert set(data.MICM_CLASS_COUNTS) == set(DASTGAHS)
    assert sum(data.MICM_CLASS_COUNTS.values()) == data.MICM_TOTAL == sum(data.MICM_INSTRUMENT_COUNTS.values())
