"""AlimNet discriminator and generator built on :mod:`alimnet.diffcore`.

The discriminator follows the published layer table exactly (five
conv/dropout/batchnorm/pool blocks, two GRUs, FC(5), FC(7) classifier) and
adds a one-unit sigmoid source head on the FC(5) output. The generator maps a
label-conditioned noise vector through FC(256), a 16x16x1 reshape and four
upsample/conv/batchnorm blocks to a 256x256x1 tanh spectrogram.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .diffcore import functional as F
from .diffcore.layers import (
    GRU, BatchNorm, Conv2D, Dense, Dropout, Layer, MaxPool2D, Network, Reshape, UpSample2D,
)
from .diffcore.tensor import Tensor
from .exceptions import InvalidConfigError, InvalidInputError

DASTGAHS = ("Shour", "Homayoun", "Mahour", "Segah", "Chahargah", "Rastpanjgah", "Nava")
INSTRUMENTS = ("violin", "ney")

# "# Parameters" column of the discriminator table, rows with learnable weights.
PUBLISHED_D_COUNTS = (160, 64, 4640, 128, 9248, 128, 9248, 128, 18496, 256, 17400, 45600, 505, 42)
PUBLISHED_D_TOTAL = 106043
PUBLISHED_G_FC_COUNT = 65792


@dataclass(frozen=True)
class Architecture:
    """Sizes for both networks. The defaults are the published full-size
    model; :data:`REDUCED` and :data:`MINIATURE` shrink every width."""

    input_size: int = 256
    d_filters: Tuple[int, ...] = (16, 32, 32, 32, 64)
    d_dropout: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.3, 0.4)
    gru_units: Tuple[int, int] = (50, 100)
    bottleneck: int = 5
    noise_dim: int = 256
    g_base: int = 16
    g_base_channels: int = 1
    g_filters: Tuple[int, ...] = (256, 128, 64, 32)
    n_classes: int = 7
    bn_momentum: float = 0.8
    d_activation: str = "leaky_relu"
    g_activation: str = "relu"

    def __post_init__(self):
        if len(self.d_dropout) != len(self.d_filters):
            raise InvalidConfigError("d_dropout needs one rate per discriminator block")
        if self.input_size % (2 ** len(self.d_filters)):
            raise InvalidConfigError(
                f"input_size {self.input_size} not divisible by 2**{len(self.d_filters)}")
        if self.g_base * 2 ** len(self.g_filters) != self.input_size:
            raise InvalidConfigError(
                f"generator reaches {self.g_base * 2 ** len(self.g_filters)}, not {self.input_size}")
        if self.n_classes < 2:
            raise InvalidConfigError("n_classes must be >= 2")

    @property
    def pooled_size(self) -> int:
        return self.input_size // 2 ** len(self.d_filters)

    def with_classes(self, n_classes: int) -> "Architecture":
        return Architecture(**{**asdict(self), "n_classes": n_classes})

    def to_vector(self) -> np.ndarray:
        """Flat numeric encoding stored in checkpoints."""
        return np.array(
            [self.input_size, self.noise_dim, self.g_base, self.g_base_channels, self.bottleneck,
             self.n_classes, self.bn_momentum, len(self.d_filters), len(self.g_filters),
             *self.d_filters, *self.d_dropout, *self.gru_units, *self.g_filters],
            dtype=np.float64)

    @classmethod
    def from_vector(cls, vec) -> "Architecture":
        v = [float(x) for x in np.asarray(vec).ravel()]
        nd, ng = int(v[7]), int(v[8])
        rest = v[9:]
        d_filters = tuple(int(x) for x in rest[:nd])
        d_dropout = tuple(round(x, 6) for x in rest[nd:2 * nd])
        gru_units = (int(rest[2 * nd]), int(rest[2 * nd + 1]))
        g_filters = tuple(int(x) for x in rest[2 * nd + 2:2 * nd + 2 + ng])
        return cls(input_size=int(v[0]), noise_dim=int(v[1]), g_base=int(v[2]),
                   g_base_channels=int(v[3]), bottleneck=int(v[4]), n_classes=int(v[5]),
                   bn_momentum=round(v[6], 6), d_filters=d_filters, d_dropout=d_dropout,
                   gru_units=gru_units, g_filters=g_filters)


FULL = Architecture()
REDUCED = Architecture(input_size=64, d_filters=(4, 8, 16, 16, 32), gru_units=(16, 32),
                       noise_dim=64, g_base=4, g_base_channels=4, g_filters=(16, 16, 8, 4))
MINIATURE = Architecture(input_size=8, d_filters=(2, 3), d_dropout=(0.1, 0.2), gru_units=(3, 4),
                         noise_dim=6, g_base=2, g_base_channels=2, g_filters=(3, 2))


def class_count(class_mode: str) -> int:
    modes = {"seven": 7, "fourteen": 14}
    if class_mode not in modes:
        raise InvalidConfigError(f"class_mode must be 'seven' or 'fourteen', got {class_mode!r}")
    return modes[class_mode]


class DiscriminatorOutput(NamedTuple):
    source_prob: Tensor   # (N, 1), P(S = real | x)
    class_probs: Tensor   # (N, n_classes)


class Discriminator(Network):
    """Layer stack of the discriminator plus the two output heads.

    Input ``(N, S, S)`` or ``(N, S, S, 1)`` spectrograms; returns a
    :class:`DiscriminatorOutput`.
    """

    def __init__(self, arch: Architecture = FULL, seed: int = 0, prefix: str = "d"):
        super().__init__(prefix=prefix, input_shape=(arch.input_size, arch.input_size, 1))
        self.arch = arch
        rng = np.random.default_rng(seed)
        channels = 1
        for i, (filters, rate) in enumerate(zip(arch.d_filters, arch.d_dropout), start=1):
            self.add(f"conv{i}", Conv2D(channels, filters, rng, activation=arch.d_activation))
            self.add(f"drop{i}", Dropout(rate))
            self.add(f"bn{i}", BatchNorm(filters, momentum=arch.bn_momentum))
            self.add(f"pool{i}", MaxPool2D(2))
            channels = filters
        side = arch.pooled_size
        self.add("reshape", Reshape((side * side, channels)))
        u1, u2 = arch.gru_units
        self.add("gru1", GRU(channels, u1, rng, return_sequence=True))
        self.add("gru2", GRU(u1, u2, rng, return_sequence=False))
        self.add("fc", Dense(u2, arch.bottleneck, rng, activation=arch.d_activation))
        self.add("fc_class", Dense(arch.bottleneck, arch.n_classes, rng, activation="softmax"))
        self.add("fc_source", Dense(arch.bottleneck, 1, rng, activation="sigmoid"))
        self.head_names = ("fc_class", "fc_source")

    def _prepare(self, x):
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        if x.ndim == 3:
            x = F.reshape(x, x.shape + (1,))
        s = self.arch.input_size
        if x.shape[1:] != (s, s, 1):
            raise InvalidInputError(f"discriminator expects (N, {s}, {s}[, 1]) input, got {x.shape}")
        return x

    def features(self, x, training=False, rng=None, update_stats=True):
        x = self._prepare(x)
        for name, layer in self.layers.items():
            if name in self.head_names:
                break
            x = layer.forward(x, training=training, rng=rng, update_stats=update_stats)
        return x

    def forward(self, x, training=False, rng=None, update_stats=True) -> DiscriminatorOutput:
        h = self.features(x, training=training, rng=rng, update_stats=update_stats)
        return DiscriminatorOutput(
            source_prob=self.layers["fc_source"].forward(h),
            class_probs=self.layers["fc_class"].forward(h),
        )

    __call__ = forward

    def shape_trace(self, input_shape=None):
        shape = tuple(input_shape if input_shape is not None else self.input_shape)
        trace = []
        for name, layer in self.layers.items():
            if name in self.head_names:
                trace.append((name, layer.output_shape(trunk_shape)))
                continue
            shape = layer.output_shape(shape)
            trunk_shape = shape
            trace.append((name, shape))
        return trace


class LabelEmbedding(Layer):
    """Per-class vector multiplied elementwise into the generator noise."""

    kind = "embedding"

    def __init__(self, n_classes: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.n_classes, self.dim = n_classes, dim
        self.params["table"] = Tensor(rng.normal(0.0, 1.0, size=(n_classes, dim)), requires_grad=True)

    def lookup(self, labels):
        labels = np.asarray(labels, dtype=np.intp)
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise InvalidInputError(f"class labels must be in [0, {self.n_classes}), got {labels}")
        return F.getitem(self.params["table"], labels)

    def forward(self, x, training=False, rng=None, update_stats=True):
        raise InvalidInputError("LabelEmbedding is applied through Generator.condition")

    def output_shape(self, input_shape):
        return (self.dim,)

    def describe(self):
        return f"Embedding ({self.n_classes}*{self.dim})"


class Generator(Network):
    """Label-conditioned generator: ``G(noise, labels) -> (N, S, S, 1)`` in (-1, 1)."""

    def __init__(self, arch: Architecture = FULL, seed: int = 0, prefix: str = "g"):
        super().__init__(prefix=prefix, input_shape=(arch.noise_dim,))
        self.arch = arch
        rng = np.random.default_rng(seed)
        base, c0 = arch.g_base, arch.g_base_channels
        self.add("embedding", LabelEmbedding(arch.n_classes, arch.noise_dim, rng))
        self.add("fc", Dense(arch.noise_dim, base * base * c0, rng))
        self.add("reshape", Reshape((base, base, c0)))
        self.add("bn0", BatchNorm(c0, momentum=arch.bn_momentum))
        channels = c0
        for i, filters in enumerate(arch.g_filters, start=1):
            self.add(f"up{i}", UpSample2D(2))
            self.add(f"conv{i}", Conv2D(channels, filters, rng, activation=arch.g_activation))
            self.add(f"bn{i}", BatchNorm(filters, momentum=arch.bn_momentum))
            channels = filters
        self.add("conv_out", Conv2D(channels, 1, rng, activation="tanh"))

    def condition(self, noise, labels) -> Tensor:
        noise = noise if isinstance(noise, Tensor) else Tensor(np.asarray(noise, dtype=np.float64))
        if noise.ndim != 2 or noise.shape[1] != self.arch.noise_dim:
            raise InvalidInputError(f"noise must have shape (N, {self.arch.noise_dim}), got {noise.shape}")
        labels = np.asarray(labels, dtype=np.intp).reshape(-1)
        if labels.shape[0] != noise.shape[0]:
            raise InvalidInputError(f"{labels.shape[0]} labels for {noise.shape[0]} noise rows")
        return F.mul(noise, self.layers["embedding"].lookup(labels))

    def forward(self, noise, labels, training=False, rng=None, update_stats=True) -> Tensor:
        x = self.condition(noise, labels)
        for name, layer in self.layers.items():
            if name == "embedding":
                continue
            x = layer.forward(x, training=training, rng=rng, update_stats=update_stats)
        return x

    __call__ = forward


@dataclass
class GeneratorInput:
    noise: np.ndarray
    class_label: int
    instrument_label: Optional[int] = None

    def __post_init__(self):
        self.noise = np.asarray(self.noise, dtype=np.float64).reshape(-1)

    def class_index(self, n_classes: int) -> int:
        """Row of the label embedding: ``dastgah`` in seven-class mode,
        ``dastgah + 7 * instrument`` in fourteen-class mode."""
        if not 0 <= self.class_label < len(DASTGAHS):
            raise InvalidInputError(f"class_label must be in [0, 7), got {self.class_label}")
        if n_classes == len(DASTGAHS):
            return int(self.class_label)
        if self.instrument_label is None or self.instrument_label not in (0, 1):
            raise InvalidInputError(
                f"fourteen-class conditioning needs instrument_label 0 or 1, got {self.instrument_label}")
        return int(self.class_label + len(DASTGAHS) * self.instrument_label)


def condition_input(g_in: GeneratorInput, generator: Generator) -> Tensor:
    """Noise times the learned embedding of the input's label, shape ``(noise_dim,)``."""
    if g_in.noise.shape[0] != generator.arch.noise_dim:
        raise InvalidInputError(
            f"noise must have length {generator.arch.noise_dim}, got {g_in.noise.shape[0]}")
    idx = g_in.class_index(generator.arch.n_classes)
    return F.reshape(generator.condition(g_in.noise[None, :], [idx]), (generator.arch.noise_dim,))


def build_discriminator(arch: Architecture = FULL, seed: int = 0) -> Discriminator:
    return Discriminator(arch, seed=seed)


def build_generator(arch: Architecture = FULL, seed: int = 0) -> Generator:
    return Generator(arch, seed=seed)


class ReportRow(NamedTuple):
    name: str
    description: str
    output_shape: tuple
    count: int


def param_report(net: Network, include_empty: bool = True) -> List[ReportRow]:
    """Per-layer ``(name, description, output shape, parameter count)`` in layer order."""
    if len(net) == 0:
        return []
    shapes = dict(net.shape_trace()) if net.input_shape is not None else {}
    rows = []
    for name, layer in net:
        count = layer.param_count()
        if count or include_empty:
            rows.append(ReportRow(name, layer.describe(), shapes.get(name, ()), count))
    return rows


def report_total(rows: Sequence[ReportRow]) -> int:
    return int(sum(r.count for r in rows))


def compare_to_published(net: Discriminator):
    """Pair the discriminator's weighted layers (source head excluded) with
    the published counts: list of ``(row, expected, matches)``."""
    rows = [r for r in param_report(net, include_empty=False) if r.name != "fc_source"]
    out = []
    for i, row in enumerate(rows):
        expected = PUBLISHED_D_COUNTS[i] if i < len(PUBLISHED_D_COUNTS) else None
        out.append((row, expected, expected == row.count))
    for expected in PUBLISHED_D_COUNTS[len(rows):]:
        out.append((None, expected, False))
    return out
