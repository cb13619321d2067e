"""WAV decoding, resampling, and the mel + PCEN front end.

Frames are taken without centering: frame i covers samples
[i*shift, i*shift + frame_length), so a gram has
1 + floor((n_samples - frame_length) / frame_shift) frames. Mel filters are
triangular on the HTK mel scale between fmin and fmax, normalized to unit
peak. PCEN follows

    out = (E / (floor + M)^exponent + bias)^root - bias^root

with the causal smoother M_t = (1 - s) * M_{t-1} + s * E_t and M_0 = E_0.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter, resample_poly

from .errors import CorruptHeader, EmptyAudio, TooShort, UnsupportedEncoding


@dataclass(frozen=True)
class PcenParams:
    smoothing: float = 0.025
    exponent: float = 0.98
    bias: float = 2.0
    root: float = 0.5
    floor: float = 1e-6

    def __post_init__(self):
        if not (0.0 < self.smoothing <= 1.0):
            raise ValueError("smoothing must be in (0, 1]")
        if not (0.0 < self.exponent <= 1.0):
            raise ValueError("exponent must be in (0, 1]")
        if self.root <= 0.0:
            raise ValueError("root must be positive")
        if self.floor <= 0.0:
            raise ValueError("floor must be positive")


@dataclass(frozen=True)
class FrontendConfig:
    target_rate: int = 16000
    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0
    n_mels: int = 128
    fft_size: int = 1024
    fmin: float = 0.0
    fmax: float = 8000.0
    pcen: PcenParams = field(default_factory=PcenParams)

    def __post_init__(self):
        if self.target_rate <= 0:
            raise ValueError("target_rate must be positive")
        if self.frame_shift_ms > self.frame_length_ms:
            raise ValueError("frame shift must not exceed frame length")
        if self.n_mels < 1:
            raise ValueError("need at least one mel band")

    @property
    def frame_length(self) -> int:
        """Frame length in samples at the target rate."""
        return int(round(self.frame_length_ms * self.target_rate / 1000.0))

    @property
    def frame_shift(self) -> int:
        """Frame shift in samples at the target rate."""
        return int(round(self.frame_shift_ms * self.target_rate / 1000.0))


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class PcenGram:
    values: np.ndarray
    frame_shift_ms: float

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]


_FMT_PCM = 1
_FMT_FLOAT = 3
_FMT_EXTENSIBLE = 0xFFFE


def load_wav(path) -> Waveform:
    """Decode a RIFF/WAVE file into a mono waveform at its native rate.

    Accepts 16/24/32-bit integer PCM and 32-bit float, 1 to 8 channels.
    Multichannel input is downmixed by arithmetic mean; integer samples are
    scaled by 1 / 2^(bits-1).
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise CorruptHeader(f"{path}: not a RIFF/WAVE container")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise CorruptHeader(f"{path}: fmt chunk truncated")
            fmt = list(struct.unpack_from("<HHIIHH", body, 0))
            if fmt[0] == _FMT_EXTENSIBLE:
                if len(body) < 26:
                    raise CorruptHeader(f"{path}: extensible fmt chunk truncated")
                (sub,) = struct.unpack_from("<H", body, 24)
                fmt[0] = sub
        elif chunk_id == b"data":
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word aligned

    if fmt is None or payload is None:
        raise CorruptHeader(f"{path}: missing fmt or data chunk")

    audio_format, n_channels, sample_rate, _rate_bytes, _block, bits = fmt
    if n_channels < 1 or n_channels > 8:
        raise UnsupportedEncoding(f"{path}: {n_channels} channels not supported")

    if audio_format == _FMT_PCM and bits == 16:
        n = len(payload) // (2 * n_channels) * n_channels
        x = np.frombuffer(payload[: n * 2], dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == _FMT_PCM and bits == 24:
        n = len(payload) // (3 * n_channels) * n_channels
        raw = np.frombuffer(payload[: n * 3], dtype=np.uint8).reshape(-1, 3)
        vals = (
            raw[:, 0].astype(np.int32)
            | (raw[:, 1].astype(np.int32) << 8)
            | (raw[:, 2].astype(np.int32) << 16)
        )
        vals = np.where(vals & 0x800000, vals - (1 << 24), vals)
        x = vals.astype(np.float64) / 8388608.0
    elif audio_format == _FMT_PCM and bits == 32:
        n = len(payload) // (4 * n_channels) * n_channels
        x = np.frombuffer(payload[: n * 4], dtype="<i4").astype(np.float64) / 2147483648.0
    elif audio_format == _FMT_FLOAT and bits == 32:
        n = len(payload) // (4 * n_channels) * n_channels
        x = np.clip(np.frombuffer(payload[: n * 4], dtype="<f4").astype(np.float64), -1.0, 1.0)
    elif audio_format in (_FMT_PCM, _FMT_FLOAT):
        raise UnsupportedEncoding(f"{path}: {bits}-bit format {audio_format} not supported")
    else:
        raise UnsupportedEncoding(f"{path}: compression code {audio_format} not supported")

    if x.size == 0:
        raise EmptyAudio(f"{path}: no samples")
    if n_channels > 1:
        x = x.reshape(-1, n_channels).mean(axis=1)
    return Waveform(x, sample_rate)


def write_wav(path, waveform: Waveform) -> None:
    """Write a mono 16-bit PCM WAV file."""
    x = np.clip(np.asarray(waveform.samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype("<i2")
    payload = pcm.tobytes()
    sr = waveform.sample_rate
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, _FMT_PCM, 1, sr, sr * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(payload))
    Path(path).write_bytes(header + payload)


def resample(waveform: Waveform, target_rate: int) -> Waveform:
    """Band-limited polyphase rate conversion.

    Output length is round(n * target / native). Equal rates return the
    input unchanged.
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == waveform.sample_rate:
        return waveform
    g = math.gcd(int(target_rate), int(waveform.sample_rate))
    up = target_rate // g
    down = waveform.sample_rate // g
    out = resample_poly(waveform.samples, up, down)
    n_out = int(round(len(waveform.samples) * target_rate / waveform.sample_rate))
    if len(out) > n_out:
        out = out[:n_out]
    elif len(out) < n_out:
        out = np.concatenate([out, np.zeros(n_out - len(out))])
    return Waveform(out, target_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, fft_size: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular filters with mel-spaced centers, unit peak. Shape (n_mels, n_bins)."""
    n_bins = fft_size // 2 + 1
    freqs = np.arange(n_bins) * sample_rate / fft_size
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fbank = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        left, center, right = edges[i], edges[i + 1], edges[i + 2]
        rising = (freqs - left) / max(center - left, 1e-12)
        falling = (right - freqs) / max(right - center, 1e-12)
        fbank[i] = np.maximum(0.0, np.minimum(rising, falling))
    return fbank


def pcen(energy: np.ndarray, params: PcenParams) -> np.ndarray:
    """Per-channel energy normalization of a (n_frames, n_bands) energy matrix."""
    e = np.asarray(energy, dtype=np.float64)
    s = params.smoothing
    zi = (1.0 - s) * e[:1]  # makes the smoother start at M_0 = E_0
    m, _ = lfilter([s], [1.0, -(1.0 - s)], e, axis=0, zi=zi)
    out = (e / (params.floor + m) ** params.exponent + params.bias) ** params.root
    return out - params.bias**params.root


def frame_count(n_samples: int, frame_length: int, frame_shift: int) -> int:
    if n_samples < frame_length:
        return 0
    return 1 + (n_samples - frame_length) // frame_shift


def mel_pcen(waveform: Waveform, cfg: FrontendConfig) -> PcenGram:
    """Hann-windowed power STFT, mel filterbank, then PCEN."""
    if waveform.sample_rate != cfg.target_rate:
        raise ValueError(
            f"waveform rate {waveform.sample_rate} != configured rate {cfg.target_rate}; resample first"
        )
    frame_len = cfg.frame_length
    shift = cfg.frame_shift
    if cfg.fft_size < frame_len:
        raise ValueError("fft_size smaller than the frame length in samples")
    x = waveform.samples
    n_frames = frame_count(len(x), frame_len, shift)
    if n_frames == 0:
        raise TooShort(f"{len(x)} samples < one {frame_len}-sample frame")

    idx = np.arange(frame_len)[None, :] + shift * np.arange(n_frames)[:, None]
    frames = x[idx]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(frame_len) / frame_len)  # periodic Hann
    power = np.abs(np.fft.rfft(frames * window, n=cfg.fft_size)) ** 2
    fbank = mel_filterbank(cfg.target_rate, cfg.fft_size, cfg.n_mels, cfg.fmin, cfg.fmax)
    energy = power @ fbank.T
    values = pcen(energy, cfg.pcen)
    return PcenGram(values, cfg.frame_shift_ms)


_PCEN_MAGIC = b"PCEN"


def dump_pcen(path, gram: PcenGram) -> None:
    """Debug dump: 16-byte header then little-endian float32 rows."""
    vals = np.ascontiguousarray(gram.values, dtype="<f4")
    header = struct.pack("<4sIII", _PCEN_MAGIC, vals.shape[0], vals.shape[1], 0)
    Path(path).write_bytes(header + vals.tobytes())


def load_pcen(path, frame_shift_ms: float = 10.0) -> PcenGram:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != _PCEN_MAGIC:
        raise CorruptHeader(f"{path}: bad PCEN dump header")
    n_frames, n_mels, _ = struct.unpack_from("<III", data, 4)
    vals = np.frombuffer(data, dtype="<f4", offset=16)
    if vals.size != n_frames * n_mels:
        raise CorruptHeader(f"{path}: payload size does not match header")
    return PcenGram(vals.reshape(n_frames, n_mels).astype(np.float64), frame_shift_ms)
