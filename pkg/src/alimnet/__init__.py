"""Conditional GAN for Persian classical music spectrograms, with the DSP,
autodiff, data and evaluation pieces it needs."""
from .dsp import REFERENCE_CONFIG, AudioClip, Spectrogram, StftConfig, griffin_lim, istft, stft
from .exceptions import AlimnetError, DataError, NumericError
from .models import DASTGAHS, FULL, INSTRUMENTS, MINIATURE, REDUCED, Architecture, build_discriminator, build_generator

__version__ = "0.1.0"

__all__ = [
    "DASTGAHS", "FULL", "INSTRUMENTS", "MINIATURE", "REFERENCE_CONFIG", "REDUCED", "AlimnetError", "Architecture",
    "AudioClip", "DataError", "NumericError", "Spectrogram", "StftConfig", "build_discriminator",
    "build_generator", "griffin_lim", "istft", "stft", "__version__",
]
