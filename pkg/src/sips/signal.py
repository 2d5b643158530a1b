"""Amplitude-compressed STFT representation and small audio utilities.

Conventions: periodic Hann window of length 512, hop 128, reflection padding
of ``fft_size // 2`` samples on both sides, unnormalized forward DFT and
``1/N`` inverse. Synthesis divides the windowed overlap-add by the summed
squared window, so analysis followed by synthesis is exact for any length.
"""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FFT_SIZE = 512
HOP = 128
COMPRESS_SCALE = 0.15
COMPRESS_EXPONENT = 0.5
SI_SDR_CAP = 300.0


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim != 1 or not np.all(np.isfinite(x)):
            raise ValueError("waveform samples must be a finite 1-D array")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return len(self.samples)


def hann(n: int = FFT_SIZE) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _samples(w):
    return w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=float)


def stft(w, fft_size: int = FFT_SIZE, hop: int = HOP) -> np.ndarray:
    """One-sided complex STFT of shape ``(fft_size // 2 + 1, frames)``."""
    x = _samples(w)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("stft needs a non-empty 1-D signal")
    pad = fft_size // 2
    xp = np.pad(x, pad, mode="reflect")
    frames = 1 + len(x) // hop
    need = (frames - 1) * hop + fft_size
    if len(xp) < need:
        xp = np.pad(xp, (0, need - len(xp)))
    idx = np.arange(fft_size)[None, :] + hop * np.arange(frames)[:, None]
    return np.fft.rfft(xp[idx] * hann(fft_size), axis=1).T


def istft(spec, length: int, fft_size: int = FFT_SIZE, hop: int = HOP) -> np.ndarray:
    """Inverse of :func:`stft`; returns ``length`` samples."""
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[0] != fft_size // 2 + 1:
        raise ValueError(f"expected {fft_size // 2 + 1} frequency bins, got shape {spec.shape}")
    frames = spec.shape[1]
    if frames != 1 + length // hop:
        raise ValueError(f"{frames} frames cannot come from a signal of length {length}")
    win = hann(fft_size)
    seg = np.fft.irfft(spec.T, n=fft_size, axis=1) * win
    total = (frames - 1) * hop + fft_size
    out = np.zeros(total)
    norm = np.zeros(total)
    for k in range(frames):
        out[k * hop : k * hop + fft_size] += seg[k]
        norm[k * hop : k * hop + fft_size] += win * win
    pad = fft_size // 2
    out, norm = out[pad : pad + length], norm[pad : pad + length]
    return out / np.where(norm > 1e-12, norm, 1.0)


def _polar(x):
    """Magnitude and unit phase factor; the phase of 0 is taken as 0."""
    x = np.asarray(x, dtype=complex)
    mag = np.abs(x)
    safe = np.where(mag > 0, mag, 1.0)
    # componentwise division avoids complex-division overflow for subnormals
    phase = np.where(mag > 0, x.real / safe + 1j * (x.imag / safe), 0.0)
    return mag, phase


def compress(x, b: float = COMPRESS_SCALE, p: float = COMPRESS_EXPONENT):
    """Map magnitude ``|x| -> b |x|^p`` keeping the phase; 0 stays 0."""
    mag, phase = _polar(x)
    return b * mag**p * phase


def decompress(x, b: float = COMPRESS_SCALE, p: float = COMPRESS_EXPONENT):
    mag, phase = _polar(x)
    return (mag / b) ** (1.0 / p) * phase


def stack_channels(spec) -> np.ndarray:
    """Complex ``(F, K)`` -> real ``(2, F, K)`` with real and imaginary channels."""
    spec = np.asarray(spec)
    return np.stack([spec.real, spec.imag])


def unstack_channels(data) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    if data.ndim != 3 or data.shape[0] != 2:
        raise ValueError(f"expected shape (2, F, K), got {data.shape}")
    return data[0] + 1j * data[1]


def to_representation(w) -> np.ndarray:
    """Waveform -> stacked compressed spectrogram ``(2, 257, K)``."""
    return stack_channels(compress(stft(w)))


def from_representation(data, length: int) -> np.ndarray:
    return istft(decompress(unstack_channels(data)), length)


def spectrogram_json(data) -> str:
    data = np.asarray(data, dtype=float)
    return json.dumps({"shape": list(data.shape), "data": data.ravel().tolist()})


def spectral_gate(spec, floor: float = 0.1, noise_percentile: float = 20.0):
    """Per-bin gain ``max(floor, 1 - noise_f / |X|)`` with a percentile noise floor."""
    if not 0.0 <= floor <= 1.0:
        raise ValueError("floor must lie in [0, 1]")
    spec = np.asarray(spec, dtype=complex)
    mag = np.abs(spec)
    noise = np.percentile(mag, noise_percentile, axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(mag > 0, 1.0 - noise / mag, floor)
    return spec * np.maximum(floor, gain)


def spectral_gate_predict(y, floor: float = 0.1, noise_percentile: float = 20.0):
    """Spectral-gate enhancement of a waveform; returns the same type it gets."""
    x = _samples(y)
    if not np.any(x):
        return y
    out = istft(spectral_gate(stft(x), floor, noise_percentile), len(x))
    return Waveform(out, y.sample_rate) if isinstance(y, Waveform) else out


def si_sdr(reference, estimate) -> float:
    """Scale-invariant SDR in dB, capped at ``SI_SDR_CAP``."""
    s = _samples(reference)
    e = _samples(estimate)
    if s.shape != e.shape:
        raise ValueError("reference and estimate lengths differ")
    ref_energy = np.dot(s, s)
    if ref_energy == 0:
        raise ValueError("reference signal is all zeros")
    target = (np.dot(e, s) / ref_energy) * s
    resid = e - target
    num, den = np.dot(target, target), np.dot(resid, resid)
    if den == 0 or num >= den * 10 ** (SI_SDR_CAP / 10):
        return SI_SDR_CAP
    if num == 0:
        return -SI_SDR_CAP
    return float(10.0 * np.log10(num / den))


def read_wav(path) -> Waveform:
    """Read a mono 16-bit PCM WAV file scaled to [-1, 1)."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ValueError(f"{path}: only mono 16-bit PCM is supported")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(float) / 32768.0
    return Waveform(data, rate)


def write_wav(path, w: Waveform) -> None:
    x = np.clip(w.samples, -1.0, 1.0)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(Path(path)), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())
