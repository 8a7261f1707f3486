"""Constant-Q magnitude spectrogram front end.

Each bin ``j`` is a Hann-windowed complex exponential at ``q_j`` whose length
is ``Q * sample_rate / q_j`` samples, ``Q = 1 / (2 ** (1 / bins_per_octave) - 1)``.
Frame ``i`` is centered on sample ``i * hop`` so it lines up with the label
grid of :func:`notegate.core.rasterize`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import FrequencyGrid, TimeGrid

GAMMA = 1000.0
# frames per matmul block when scanning long signals
_BLOCK = 1024


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = 22050

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if self.samples.ndim != 1:
            raise ValueError("waveform must be mono (1-D)")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class SpectrogramStack:
    """``(n_frames, n_bins, 2)`` model input; channel 0 mixture, 1 vocal."""

    data: np.ndarray
    vocal_is_proxy: bool = False

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError(f"spectrogram stack must be 3-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("spectrogram stack contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]

    @property
    def n_channels(self) -> int:
        return self.data.shape[2]


def q_factor(bins_per_octave: int = 12) -> float:
    return 1.0 / (2.0 ** (1.0 / bins_per_octave) - 1.0)


@lru_cache(maxsize=8)
def _kernels(fg: FrequencyGrid, sample_rate: int):
    """Per-bin (cos, sin) kernel pairs, stacked as ``(N_j, 2)`` arrays."""
    Q = q_factor(fg.bins_per_octave)
    kernels = []
    for f in fg.frequencies:
        N = int(math.ceil(Q * sample_rate / f))
        if N % 2 == 0:
            N += 1
        n = np.arange(N) - N // 2
        win = np.hanning(N + 2)[1:-1]
        win /= win.sum()
        phase = 2 * np.pi * f * n / sample_rate
        k = np.stack([win * np.cos(phase), win * np.sin(phase)], axis=1)
        k.setflags(write=False)
        kernels.append(k)
    return tuple(kernels)


def cqt_magnitude(w: Waveform, fg: FrequencyGrid | None = None,
                  tg: TimeGrid | None = None) -> np.ndarray:
    """Raw filterbank magnitudes, ``(n_frames, n_bins)``, before compression.

    A unit-amplitude sinusoid at a bin's center frequency gives a
    magnitude of about 0.5 in that bin.
    """
    fg = fg or FrequencyGrid()
    tg = tg or TimeGrid()
    if w.sample_rate != tg.sample_rate:
        raise ValueError(
            f"sample rate {w.sample_rate} Hz does not match the time grid's "
            f"{tg.sample_rate} Hz; resample the audio before calling cqt")
    x = w.samples
    if x.size == 0:
        raise ValueError("waveform is empty")
    n_frames = -(-len(x) // tg.hop)
    kernels = _kernels(fg, tg.sample_rate)
    half = max(len(k) for k in kernels) // 2
    padded = np.pad(x, (half, half + tg.hop))
    out = np.empty((n_frames, fg.n_bins))
    for j, k in enumerate(kernels):
        N = len(k)
        offset = half - N // 2
        frames = sliding_window_view(padded[offset:], N)[::tg.hop]
        for b in range(0, n_frames, _BLOCK):
            e = min(b + _BLOCK, n_frames)
            re_im = frames[b:e] @ k
            out[b:e, j] = np.hypot(re_im[:, 0], re_im[:, 1])
    return out


def compress(magnitude: np.ndarray, gamma: float = GAMMA) -> np.ndarray:
    return np.clip(np.log1p(magnitude * gamma) / np.log1p(gamma), 0.0, 1.0)


def cqt(w: Waveform, fg: FrequencyGrid | None = None, tg: TimeGrid | None = None,
        gamma: float = GAMMA) -> np.ndarray:
    """Log-compressed constant-Q magnitudes in ``[0, 1]``, ``(n_frames, n_bins)``.

    ``n_frames = ceil(len(samples) / hop)``. No resampling is performed; a
    sample-rate mismatch raises ``ValueError``.
    """
    return compress(cqt_magnitude(w, fg, tg), gamma).astype(np.float32)


def stack_channels(mix: np.ndarray, vocal: np.ndarray | None = None) -> SpectrogramStack:
    """Pair mixture and vocal spectrograms into a two-channel stack.

    Without a vocal stem the mixture is duplicated into channel 1 and the
    stack is flagged ``vocal_is_proxy``.
    """
    mix = np.asarray(mix, dtype=np.float32)
    if mix.ndim != 2:
        raise ValueError(f"mixture spectrogram must be 2-D, got shape {mix.shape}")
    if vocal is None:
        return SpectrogramStack(np.stack([mix, mix], axis=2), vocal_is_proxy=True)
    vocal = np.asarray(vocal, dtype=np.float32)
    if vocal.shape != mix.shape:
        raise ValueError(f"vocal shape {vocal.shape} does not match mixture shape {mix.shape}")
    return SpectrogramStack(np.stack([mix, vocal], axis=2))


def frame_energy(stack: SpectrogramStack, channel: int = 1) -> np.ndarray:
    """Per-frame sum over bins of one channel."""
    if not 0 <= channel < stack.n_channels:
        raise ValueError(f"channel {channel} out of range for {stack.n_channels}-channel stack")
    return stack.data[:, :, channel].sum(axis=1, dtype=np.float64)


def interior_frames(n_frames: int, fg: FrequencyGrid | None = None,
                    tg: TimeGrid | None = None) -> slice:
    """Frames whose longest analysis window lies inside the signal."""
    fg = fg or FrequencyGrid()
    tg = tg or TimeGrid()
    N = len(_kernels(fg, tg.sample_rate)[0])
    margin = -(-(N // 2) // tg.hop)
    return slice(margin, max(n_frames - margin - 1, margin))
