"""scikit-learn style wrappers: an STFT transformer, a spectrogram
classifier and the conditional GAN itself.

Inputs follow the usual conventions: ``X`` is ``(n_samples, ...)`` and
``fit`` returns ``self``. Spectrogram inputs are ``(n, S, S)`` arrays of
db-normalized values; ``S`` must match the chosen architecture.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dsp import StftConfig, stft, to_db_normalized
from .exceptions import InvalidInputError
from .models import FULL, MINIATURE, REDUCED, Architecture
from .train import TrainConfig, TrainingSet, predict_proba, train

_PRESETS = {"full": FULL, "reduced": REDUCED, "miniature": MINIATURE}


def _architecture(name: str, n_classes: int) -> Architecture:
    if name not in _PRESETS:
        raise InvalidInputError(f"arch must be one of {sorted(_PRESETS)}, got {name!r}")
    return _PRESETS[name].with_classes(max(n_classes, 2))


def _check_spectrograms(X, arch: Architecture) -> np.ndarray:
    X = check_array(X, allow_nd=True, dtype=np.float64)
    if X.ndim != 3 or X.shape[1:] != (arch.input_size, arch.input_size):
        raise InvalidInputError(
            f"expected spectrograms of shape (n, {arch.input_size}, {arch.input_size}), got {X.shape}")
    return X


class StftTransformer(TransformerMixin, BaseEstimator):
    """Waveforms ``(n, L)`` to spectrograms ``(n, bins, frames)``.

    ``kind`` is ``"magnitude"`` or ``"db_normalized"``. Stateless: ``fit``
    only validates parameters.
    """

    def __init__(self, fft_size=510, hop=514, window="hann", center_pad=True, kind="db_normalized"):
        self.fft_size = fft_size
        self.hop = hop
        self.window = window
        self.center_pad = center_pad
        self.kind = kind

    def fit(self, X, y=None):
        if self.kind not in ("magnitude", "db_normalized"):
            raise InvalidInputError(f"kind must be 'magnitude' or 'db_normalized', got {self.kind!r}")
        self.config_ = StftConfig(self.fft_size, self.hop, self.window, self.center_pad)
        X = check_array(X, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        X = check_array(X, dtype=np.float64)
        out = []
        for row in X:
            mag = stft(row, self.config_).magnitude()
            out.append((to_db_normalized(mag) if self.kind == "db_normalized" else mag).data)
        return np.stack(out)


class SpectrogramClassifier(ClassifierMixin, BaseEstimator):
    """The discriminator architecture trained on class labels only."""

    def __init__(self, arch="reduced", steps=300, batch_size=16, lr=1e-3, random_state=0):
        self.arch = arch
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state

    def fit(self, X, y):
        from .synth import train_classifier

        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        self.architecture_ = _architecture(self.arch, len(self.classes_))
        X = _check_spectrograms(X, self.architecture_)
        self.network_ = train_classifier(X, encoded, self.architecture_, steps=self.steps,
                                         batch_size=self.batch_size, lr=self.lr, seed=self.random_state)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        X = _check_spectrograms(X, self.architecture_)
        return predict_proba(self.network_, X)[:, :len(self.classes_)]

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]


class ACGAN(BaseEstimator):
    """Conditional GAN over spectrograms.

    ``fit(X, y)`` runs adversarial training with integer Dastgah labels
    (or ``dastgah + 7 * instrument`` labels in fourteen-class mode);
    ``sample`` draws generator outputs; ``predict`` uses the discriminator's
    class head.
    """

    def __init__(self, arch="reduced", steps=2000, batch_size=8, lr_d=2e-4, lr_g=2e-4, d_steps_per_g=1,
                 class_mode="seven", generator_sign="acgan_standard", reference_magnitude=1.0,
                 random_state=0):
        self.arch = arch
        self.steps = steps
        self.batch_size = batch_size
        self.lr_d = lr_d
        self.lr_g = lr_g
        self.d_steps_per_g = d_steps_per_g
        self.class_mode = class_mode
        self.generator_sign = generator_sign
        self.reference_magnitude = reference_magnitude
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, steps=self.steps, lr_d=self.lr_d, lr_g=self.lr_g,
                           d_steps_per_g=self.d_steps_per_g, class_mode=self.class_mode,
                           generator_sign=self.generator_sign, seed=self.random_state)

    def fit(self, X, y, out_dir=None):
        cfg = self._config()
        self.architecture_ = _architecture(self.arch, cfg.architecture().n_classes)
        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float64)
        X = _check_spectrograms(X, self.architecture_)
        self.state_ = train(cfg, TrainingSet(X, y, self.reference_magnitude), out_dir=out_dir,
                            arch=self.architecture_)
        self.classes_ = np.unique(y)
        return self

    def sample(self, labels, random_state=0):
        from .synth import generate_arrays

        check_is_fitted(self, "state_")
        return generate_arrays(self.state_.generator, np.asarray(labels, dtype=np.intp), random_state)

    def predict_proba(self, X):
        check_is_fitted(self, "state_")
        return predict_proba(self.state_.discriminator, _check_spectrograms(X, self.architecture_))

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def score(self, X, y):
        return float(np.mean(self.predict(X) == np.asarray(y)))
