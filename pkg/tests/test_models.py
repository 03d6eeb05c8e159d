import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alimnet.diffcore.layers import Network
from alimnet.exceptions import InvalidConfigError, InvalidInputError
from alimnet.models import (
    FULL, MINIATURE, PUBLISHED_D_COUNTS, PUBLISHED_D_TOTAL, PUBLISHED_G_FC_COUNT, REDUCED, Architecture,
    Discriminator, Generator, GeneratorInput, build_discriminator, build_generator, compare_to_published,
    condition_input, param_report, report_total,
)


@pytest.fixture(scope="module")
def full_d():
    return build_discriminator(FULL, seed=0)


@pytest.fixture(scope="module")
def full_g():
    return build_generator(FULL, seed=0)


def test_discriminator_counts_match_published_column(full_d):
    start = time.perf_counter()
    rows = compare_to_published(full_d)
    assert [expected for _, expected, _ in rows] == list(PUBLISHED_D_COUNTS)
    assert [row.count for row, _, _ in rows] == list(PUBLISHED_D_COUNTS)
    assert all(ok for _, _, ok in rows)
    assert time.perf_counter() - start < 1.0


def test_published_total_recomputed():
    assert sum(PUBLISHED_D_COUNTS) == PUBLISHED_D_TOTAL == 106043


def test_discriminator_total_includes_source_head(full_d):
    assert full_d.param_count() == PUBLISHED_D_TOTAL + 6
    rows = {r.name: r.count for r in param_report(full_d)}
    assert rows["fc_source"] == 6


def test_discriminator_shape_trace(full_d):
    trace = dict(full_d.shape_trace())
    expected = {
        "conv1": (256, 256, 16), "pool1": (128, 128, 16), "conv2": (128, 128, 32), "pool2": (64, 64, 32),
        "conv3": (64, 64, 32), "pool3": (32, 32, 32), "conv4": (32, 32, 32), "pool4": (16, 16, 32),
        "conv5": (16, 16, 64), "pool5": (8, 8, 64), "reshape": (64, 64), "gru1": (64, 50), "gru2": (100,),
        "fc": (5,), "fc_class": (7,), "fc_source": (1,),
    }
    for name, shape in expected.items():
        assert trace[name] == shape, name


def test_generator_fc_count(full_g):
    rows = {r.name: r.count for r in param_report(full_g)}
    assert rows["fc"] == PUBLISHED_G_FC_COUNT == 256 * 256 + 256
    # closed-form count of a 3x3 conv from one channel to 256
    assert rows["conv1"] == 9 * 1 * 256 + 256 == 2560


def test_generator_shape_trace(full_g):
    trace = dict(full_g.shape_trace())
    assert trace["reshape"] == (16, 16, 1)
    assert trace["conv4"] == (256, 256, 32)
    assert trace["conv_out"] == (256, 256, 1)


def test_param_report_total_and_empty(full_g):
    rows = param_report(full_g)
    assert report_total(rows) == full_g.param_count()
    assert param_report(Network()) == []
    assert report_total([]) == 0


def test_fourteen_class_head_count():
    d = Discriminator(FULL.with_classes(14))
    assert {r.name: r.count for r in param_report(d)}["fc_class"] == 5 * 14 + 14


def test_full_forward_and_end_to_end(full_d, full_g):
    rng = np.random.default_rng(0)
    x = full_g(rng.standard_normal((1, 256)), [3])
    assert x.shape == (1, 256, 256, 1)
    assert np.all(np.abs(x.data) < 1)
    out = full_d(x.data)
    assert out.class_probs.shape == (1, 7)
    assert abs(out.class_probs.data.sum() - 1) < 1e-6
    assert 0 <= out.source_prob.data.item() <= 1


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**16), n=st.integers(1, 4), training=st.booleans())
def test_reduced_networks_produce_valid_outputs(seed, n, training):
    rng = np.random.default_rng(seed)
    g, d = Generator(REDUCED, seed=seed), Discriminator(REDUCED, seed=seed)
    labels = rng.integers(0, 7, n)
    x = g(rng.standard_normal((n, REDUCED.noise_dim)), labels, training=training and n > 1, rng=rng,
          update_stats=False)
    assert x.shape == (n, 64, 64, 1)
    assert np.all(np.abs(x.data) < 1)
    out = d(x.data * rng.uniform(0.1, 3), training=training and n > 1, rng=rng, update_stats=False)
    p = out.class_probs.data
    assert np.all(p >= 0) and np.allclose(p.sum(axis=1), 1, atol=1e-6)
    assert np.all((out.source_prob.data >= 0) & (out.source_prob.data <= 1))


def test_condition_input_anchors():
    g = Generator(MINIATURE, seed=1)
    zero = GeneratorInput(np.zeros(MINIATURE.noise_dim), 2)
    assert not np.any(condition_input(zero, g).data)
    noise = np.random.default_rng(0).standard_normal(MINIATURE.noise_dim)
    a = condition_input(GeneratorInput(noise, 0), g).data
    b = condition_input(GeneratorInput(noise, 1), g).data
    assert not np.array_equal(a, b)
    assert np.array_equal(a, condition_input(GeneratorInput(noise, 0), g).data)
    g.layers["embedding"].params["table"].data[:] = 1.0
    assert np.array_equal(condition_input(GeneratorInput(noise, 4), g).data, noise)


def test_condition_input_fourteen_class_rows():
    g = Generator(MINIATURE.with_classes(14), seed=0)
    table = g.layers["embedding"].params["table"].data
    noise = np.ones(MINIATURE.noise_dim)
    out = condition_input(GeneratorInput(noise, 3, instrument_label=1), g).data
    assert np.array_equal(out, table[3 + 7])
    with pytest.raises(InvalidInputError):
        condition_input(GeneratorInput(noise, 3), g)


@pytest.mark.parametrize("label", [-1, 7])
def test_condition_input_rejects_bad_labels(label):
    g = Generator(MINIATURE, seed=0)
    with pytest.raises(InvalidInputError):
        condition_input(GeneratorInput(np.zeros(MINIATURE.noise_dim), label), g)


def test_condition_input_rejects_wrong_noise_length():
    g = Generator(MINIATURE, seed=0)
    with pytest.raises(InvalidInputError):
        condition_input(GeneratorInput(np.zeros(MINIATURE.noise_dim + 1), 0), g)


def test_discriminator_rejects_wrong_shape():
    with pytest.raises(InvalidInputError):
        Discriminator(MINIATURE)(np.zeros((1, 9, 9)))


def test_architecture_validation_and_vector_round_trip():
    with pytest.raises(InvalidConfigError):
        Architecture(input_size=100)
    with pytest.raises(InvalidConfigError):
        Architecture(n_classes=1)
    for arch in (FULL, REDUCED, MINIATURE, FULL.with_classes(14)):
        assert Architecture.from_vector(arch.to_vector()) == arch


def test_parameter_names_are_canonical(full_d, full_g):
    names = set(full_d.state_dict()) | set(full_g.state_dict())
    assert {"d.conv1.kernel", "d.bn1.moving_mean", "d.gru2.recurrent_kernel", "g.fc.bias",
            "g.embedding.table"} <= names
    assert all(n.startswith(("d.", "g.")) for n in names)


def test_construction_is_deterministic():
    a, b = Generator(REDUCED, seed=5).state_dict(), Generator(REDUCED, seed=5).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
