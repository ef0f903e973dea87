"""Audio front end: WAV decoding, resampling, segmentation, MFCC features.

Everything downstream expects mono 16 kHz audio cut into exact 1 s
segments. A segment is framed with a 30 ms window and 10 ms hop (no
centering), run through a Hann window, a magnitude/power spectrum, a
40-filter mel bank and an orthonormal DCT-II, producing a 40x98 matrix.
All functions are pure; none keep state between calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

TARGET_RATE = 16000
SEGMENT_SAMPLES = TARGET_RATE  # one second at the model rate

# Windowed-sinc resampler: zero crossings kept on each side of the kernel
# and the Kaiser shape parameter. 8 crossings per side = 16 taps per output
# sample at unit ratio; the kernel widens by 1/cutoff when downsampling.
_SINC_ZERO_CROSSINGS = 8
_KAISER_BETA = 8.0


class DecodeError(ValueError):
    """Base class for WAV decoding failures."""


class MalformedWavError(DecodeError):
    """Byte stream is not a readable RIFF/WAVE container."""


class UnsupportedWavError(DecodeError):
    """Readable container, but a codec or bit depth we do not decode."""


class EmptyWavError(DecodeError):
    """Readable container with zero audio samples."""


@dataclass
class AudioBuffer:
    """Mono audio: float amplitudes in [-1, 1] plus their sample rate."""

    samples: np.ndarray
    sample_rate: int

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def _require_samples(audio: AudioBuffer) -> None:
    if len(audio.samples) == 0:
        raise ValueError("audio buffer is empty")
    if not np.all(np.isfinite(audio.samples)):
        raise ValueError("audio buffer contains non-finite samples")


def decode_wav(data: bytes) -> AudioBuffer:
    """Decode a RIFF/WAVE byte string to a mono AudioBuffer.

    Accepts PCM 16-bit (format 1) and IEEE float 32-bit (format 3) with any
    channel count; channels are averaged. Integer samples are scaled by
    1/32768.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError("not a RIFF/WAVE container")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        size = int.from_bytes(data[pos + 4 : pos + 8], "little")
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise MalformedWavError(f"truncated {chunk_id!r} chunk")
        if chunk_id == b"fmt ":
            if size < 16:
                raise MalformedWavError("fmt chunk too short")
            fmt = {
                "code": int.from_bytes(body[0:2], "little"),
                "channels": int.from_bytes(body[2:4], "little"),
                "rate": int.from_bytes(body[4:8], "little"),
                "bits": int.from_bytes(body[14:16], "little"),
            }
        elif chunk_id == b"data":
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None:
        raise MalformedWavError("missing fmt chunk")
    if payload is None:
        raise MalformedWavError("missing data chunk")
    if fmt["channels"] < 1:
        raise MalformedWavError("fmt declares zero channels")
    if fmt["rate"] <= 0:
        raise MalformedWavError("fmt declares non-positive sample rate")

    if fmt["code"] == 1 and fmt["bits"] == 16:
        raw = np.frombuffer(payload[: len(payload) - len(payload) % 2], dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif fmt["code"] == 3 and fmt["bits"] == 32:
        raw = np.frombuffer(payload[: len(payload) - len(payload) % 4], dtype="<f4")
        samples = raw.astype(np.float64)
    else:
        raise UnsupportedWavError(
            f"unsupported codec: format {fmt['code']}, {fmt['bits']}-bit"
        )

    channels = fmt["channels"]
    frames = len(samples) // channels
    if frames == 0:
        raise EmptyWavError("data chunk holds no samples")
    samples = samples[: frames * channels].reshape(frames, channels).mean(axis=1)
    return AudioBuffer(samples=samples, sample_rate=fmt["rate"])


def _sinc_kernel(offsets: np.ndarray, cutoff: float, radius: float) -> np.ndarray:
    inside = np.abs(offsets) <= radius
    taper = np.zeros_like(offsets)
    arg = np.clip(1.0 - (offsets[inside] / radius) ** 2, 0.0, None)
    taper[inside] = np.i0(_KAISER_BETA * np.sqrt(arg)) / np.i0(_KAISER_BETA)
    return cutoff * np.sinc(cutoff * offsets) * taper


def resample(audio: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Resample with a Kaiser-windowed sinc kernel.

    Output length is round(len * target / source). Each output sample is a
    normalized dot product of the kernel with the nearby input samples, so
    constant (DC) signals pass through unchanged. Identical rates return a
    plain copy.
    """
    _require_samples(audio)
    if target_rate <= 0:
        raise ValueError("target rate must be positive")
    if audio.sample_rate == target_rate:
        return AudioBuffer(np.array(audio.samples, dtype=np.float64), target_rate)

    x = np.asarray(audio.samples, dtype=np.float64)
    n = x.size
    out_len = (n * target_rate + audio.sample_rate // 2) // audio.sample_rate
    step = audio.sample_rate / target_rate
    cutoff = min(1.0, 1.0 / step)
    radius = _SINC_ZERO_CROSSINGS / cutoff
    half = int(math.ceil(radius))
    offsets = np.arange(-half, half + 1)

    out = np.empty(out_len, dtype=np.float64)
    chunk = max(1, (1 << 22) // (2 * half + 1))
    for start in range(0, out_len, chunk):
        j = np.arange(start, min(start + chunk, out_len))
        t = j * step
        base = np.floor(t).astype(np.int64)
        idx = base[:, None] + offsets[None, :]
        weights = _sinc_kernel(idx - t[:, None], cutoff, radius)
        weights[(idx < 0) | (idx >= n)] = 0.0
        values = x[np.clip(idx, 0, n - 1)]
        out[j] = (weights * values).sum(axis=1) / weights.sum(axis=1)
    return AudioBuffer(samples=out, sample_rate=target_rate)


def pad_and_segment(audio: AudioBuffer) -> list[AudioBuffer]:
    """Zero-pad to the next whole second, then split into 1 s segments."""
    _require_samples(audio)
    if audio.sample_rate != TARGET_RATE:
        raise ValueError(f"expected {TARGET_RATE} Hz audio, got {audio.sample_rate}")
    n = len(audio.samples)
    total = ((n + SEGMENT_SAMPLES - 1) // SEGMENT_SAMPLES) * SEGMENT_SAMPLES
    padded = np.zeros(total, dtype=np.float64)
    padded[:n] = audio.samples
    return [
        AudioBuffer(padded[i : i + SEGMENT_SAMPLES], TARGET_RATE)
        for i in range(0, total, SEGMENT_SAMPLES)
    ]


@dataclass
class MfccConfig:
    """Feature extraction settings; the defaults are the shipped pipeline."""

    sample_rate: int = 16000
    window_length: float = 0.030
    hop_length: float = 0.010
    n_mels: int = 40
    n_mfcc: int = 40
    fft_size: int = 512
    log_floor: float = 1e-10
    mel_scale: str = "htk"
    spectrum: str = "power"

    def __post_init__(self):
        if self.n_mfcc > self.n_mels:
            raise ValueError("n_mfcc cannot exceed n_mels")
        if self.fft_size < self.window_samples:
            raise ValueError("fft_size smaller than the analysis window")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")
        if self.mel_scale != "htk":
            raise ValueError(f"unknown mel scale {self.mel_scale!r}")
        if self.spectrum not in ("power", "magnitude"):
            raise ValueError(f"unknown spectrum type {self.spectrum!r}")

    @property
    def window_samples(self) -> int:
        return round(self.window_length * self.sample_rate)

    @property
    def hop_samples(self) -> int:
        return round(self.hop_length * self.sample_rate)

    def to_text(self) -> str:
        lines = [f"{f.name}={getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MfccConfig":
        kwargs = {}
        casts = {f.name: f.type for f in fields(cls)}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in casts:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            kind = casts[key]
            if kind in ("int", int):
                kwargs[key] = int(value)
            elif kind in ("float", float):
                kwargs[key] = float(value)
            else:
                kwargs[key] = value
        return cls(**kwargs)


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: MfccConfig) -> np.ndarray:
    """Triangular mel filters, peak 1, spanning 0 Hz to Nyquist.

    Returns an (n_mels, fft_size // 2 + 1) matrix of weights over rfft bins.
    """
    n_bins = config.fft_size // 2 + 1
    bin_hz = np.arange(n_bins) * config.sample_rate / config.fft_size
    edges = mel_to_hz(
        np.linspace(hz_to_mel(0.0), hz_to_mel(config.sample_rate / 2), config.n_mels + 2)
    )
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz[None, :] - lower) / (center - lower)
    falling = (upper - bin_hz[None, :]) / (upper - center)
    return np.clip(np.minimum(rising, falling), 0.0, None)


def dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Orthonormal DCT-II basis: rows are coefficients, columns inputs."""
    j = np.arange(n_in)
    k = np.arange(n_out)[:, None]
    basis = np.cos(np.pi * (2 * j[None, :] + 1) * k / (2 * n_in)) * math.sqrt(2.0 / n_in)
    basis[0] /= math.sqrt(2.0)
    return basis


def frame_count(n_samples: int, config: MfccConfig) -> int:
    """Number of analysis frames for n samples without centering."""
    win, hop = config.window_samples, config.hop_samples
    if n_samples < win:
        raise ValueError("fewer samples than one analysis window")
    return (n_samples - win) // hop + 1


def mfcc(segment: AudioBuffer, config: MfccConfig | None = None) -> np.ndarray:
    """MFCCs of one 1 s segment as an (n_mfcc, frames) float32 matrix.

    Frame t covers samples [t * hop, t * hop + window); with the default
    config a 16000-sample segment gives exactly 98 frames.
    """
    if config is None:
        config = MfccConfig()
    if segment.sample_rate != config.sample_rate:
        raise ValueError(
            f"segment rate {segment.sample_rate} != config rate {config.sample_rate}"
        )
    if len(segment.samples) != config.sample_rate:
        raise ValueError(
            f"expected a 1 s segment of {config.sample_rate} samples, "
            f"got {len(segment.samples)}"
        )
    x = np.asarray(segment.samples, dtype=np.float64)
    win, hop = config.window_samples, config.hop_samples
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)
    spectrum = np.abs(np.fft.rfft(frames * window, n=config.fft_size))
    if config.spectrum == "power":
        spectrum = spectrum**2
    mel_energy = spectrum @ mel_filterbank(config).T
    log_mel = np.log(mel_energy + config.log_floor)
    coeffs = log_mel @ dct_matrix(config.n_mfcc, config.n_mels).T
    return np.ascontiguousarray(coeffs.T, dtype=np.float32)
