"""Binary formats: 16-bit PCM WAV, ALIM spectrogram containers and ALMC
checkpoint containers. All multi-byte integers and floats are little-endian."""
from __future__ import annotations

import struct
import wave
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

from .dsp import SAMPLE_RATE, AudioClip, Spectrogram, StftConfig
from .exceptions import ContainerError, InvalidInputError

ALIM_MAGIC = b"ALIM"
ALMC_MAGIC = b"ALMC"
FORMAT_VERSION = 1
KIND_CODES = {"complex": 0, "magnitude": 1, "db_normalized": 2}
_KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


# -- WAV -----------------------------------------------------------------------

def read_wav(path, expected_rate: int = SAMPLE_RATE) -> AudioClip:
    """Read a mono 16-bit PCM file into samples in [-1, 1) (divide by 32768)."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate = w.getnchannels(), w.getsampwidth(), w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise InvalidInputError(f"{path}: not a readable WAV file ({exc})") from exc
    if channels != 1:
        raise InvalidInputError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise InvalidInputError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if expected_rate is not None and rate != expected_rate:
        raise InvalidInputError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, sample_rate=rate)


def write_wav(path, clip, sample_rate: int = SAMPLE_RATE) -> None:
    """Write mono 16-bit PCM. Samples are clamped to [-1, 1] and scaled by 32768."""
    if isinstance(clip, AudioClip):
        samples, sample_rate = clip.samples, clip.sample_rate
    else:
        samples = np.asarray(clip, dtype=np.float64)
    if samples.ndim != 1:
        raise InvalidInputError(f"write_wav expects mono samples, got shape {samples.shape}")
    pcm = np.clip(np.round(np.clip(samples, -1.0, 1.0) * 32768.0), -32768, 32767).astype("<i2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(sample_rate))
        w.writeframes(pcm.tobytes())


# -- ALIM spectrogram container ------------------------------------------------

def encode_spectrogram(spec: Spectrogram) -> bytes:
    rows, cols = spec.data.shape
    header = ALIM_MAGIC + struct.pack(
        "<6I", FORMAT_VERSION, KIND_CODES[spec.kind], rows, cols,
        spec.config.fft_size, spec.config.hop,
    )
    if spec.kind == "complex":
        payload = np.empty((rows, cols, 2), dtype="<f4")
        payload[..., 0] = spec.data.real
        payload[..., 1] = spec.data.imag
    else:
        payload = np.ascontiguousarray(spec.data, dtype="<f4")
    return header + payload.tobytes()


def decode_spectrogram(blob: bytes, window: str = "hann", center_pad: bool = True) -> Spectrogram:
    """Inverse of :func:`encode_spectrogram`.

    The container does not record window or padding, so they are supplied by
    the caller. Payload values come back as float32.
    """
    if len(blob) < 28 or blob[:4] != ALIM_MAGIC:
        raise ContainerError("not an ALIM container (bad magic)")
    version, kind, rows, cols, fft_size, hop = struct.unpack_from("<6I", blob, 4)
    if version != FORMAT_VERSION:
        raise ContainerError(f"unsupported ALIM version {version}")
    if kind not in _KIND_NAMES:
        raise ContainerError(f"unknown ALIM kind code {kind}")
    per_entry = 2 if kind == 0 else 1
    expected = 28 + 4 * rows * cols * per_entry
    if len(blob) != expected:
        raise ContainerError(f"ALIM payload size mismatch: {len(blob)} bytes, expected {expected}")
    values = np.frombuffer(blob, dtype="<f4", offset=28)
    if kind == 0:
        pairs = values.reshape(rows, cols, 2)
        data = np.empty((rows, cols), dtype=np.complex64)
        data.real = pairs[..., 0]
        data.imag = pairs[..., 1]
    else:
        data = values.reshape(rows, cols).copy()
    cfg = StftConfig(fft_size=fft_size, hop=hop, window=window, center_pad=center_pad)
    return Spectrogram(data, _KIND_NAMES[kind], cfg)


def save_spectrogram(path, spec: Spectrogram) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_spectrogram(spec))


def load_spectrogram(path, **kwargs) -> Spectrogram:
    path = Path(path)
    try:
        return decode_spectrogram(path.read_bytes(), **kwargs)
    except ContainerError as exc:
        raise ContainerError(f"{path}: {exc}") from exc


# -- ALMC checkpoint container -------------------------------------------------

def encode_checkpoint(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [ALMC_MAGIC, struct.pack("<II", FORMAT_VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f4")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise InvalidInputError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise InvalidInputError(f"tensor {name} has rank {arr.ndim} > 255")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    if len(blob) < 12 or blob[:4] != ALMC_MAGIC:
        raise ContainerError("not an ALMC checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise ContainerError(f"unsupported ALMC version {version}")
    out = OrderedDict()
    pos = 12
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * size > len(blob):
                raise ContainerError(f"truncated payload for tensor {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(dims).copy()
            pos += 4 * size
    except struct.error as exc:
        raise ContainerError(f"truncated ALMC checkpoint ({exc})") from exc
    if pos != len(blob):
        raise ContainerError(f"{len(blob) - pos} trailing bytes after {count} tensors")
    return out


def save_checkpoint(path, tensors: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(tensors))
    tmp.replace(path)


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    path = Path(path)
    try:
        return decode_checkpoint(path.read_bytes())
    except ContainerError as exc:
        raise ContainerError(f"{path}: {exc}") from exc
