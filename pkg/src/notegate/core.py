"""Note events, time/frequency grids and label rasterization.

A track's note annotations are turned into a binary ``(n_frames, n_bins)``
label matrix on the same grid as the constant-Q spectrogram: frame ``i``
sits at ``r_i = i * hop / sample_rate`` seconds and bin ``j`` covers the
half-open frequency interval ``(q_{j-1}, q_j]`` with
``q_j = fmin * 2 ** (j / bins_per_octave)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class NoteWarning(UserWarning):
    """A note could not be placed on the frequency grid."""


@dataclass(frozen=True, order=True)
class NoteEvent:
    start_sec: float
    end_sec: float
    freq_hz: float

    def __post_init__(self):
        for name in ("start_sec", "end_sec", "freq_hz"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not math.isfinite(self.freq_hz) or self.freq_hz <= 0:
            raise ValueError(f"freq_hz must be finite and positive, got {self.freq_hz}")
        if not (math.isfinite(self.start_sec) and math.isfinite(self.end_sec)):
            raise ValueError("note times must be finite")
        if self.start_sec < 0:
            raise ValueError(f"start_sec must be >= 0, got {self.start_sec}")

    @property
    def duration(self) -> float:
        return self.end_sec - self.start_sec


@dataclass(frozen=True)
class NoteTrack:
    """Ordered note annotations of one track.

    Notes are sorted by start time on construction. Construction does not
    reject overlapping or zero-length notes (real annotations contain
    them); use :func:`validate_notes` to list violations.
    """

    track_id: str
    notes: tuple[NoteEvent, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "notes", tuple(sorted(self.notes)))

    def __len__(self):
        return len(self.notes)

    def __iter__(self):
        return iter(self.notes)

    @property
    def end_sec(self) -> float:
        return max((n.end_sec for n in self.notes), default=0.0)


@dataclass(frozen=True)
class TimeGrid:
    sample_rate: int = 22050
    hop: int = 256

    def __post_init__(self):
        if self.sample_rate <= 0 or self.hop <= 0:
            raise ValueError("sample_rate and hop must be positive")

    @property
    def period(self) -> float:
        """Frame spacing in seconds (about 11.6 ms for the defaults)."""
        return self.hop / self.sample_rate

    def timestamps(self, n_frames: int) -> np.ndarray:
        return self.period * np.arange(n_frames)

    def n_frames_for(self, duration_sec: float) -> int:
        """Smallest frame count whose grid covers ``duration_sec``."""
        return int(math.floor(duration_sec / self.period)) + 1


@dataclass(frozen=True)
class FrequencyGrid:
    n_bins: int = 72
    bins_per_octave: int = 12
    fmin: float = 65.406

    def __post_init__(self):
        if self.n_bins <= 0 or self.bins_per_octave <= 0 or self.fmin <= 0:
            raise ValueError("n_bins, bins_per_octave and fmin must be positive")

    @property
    def frequencies(self) -> np.ndarray:
        """Bin frequencies ``q_0 .. q_{n_bins-1}``."""
        return self.fmin * 2.0 ** (np.arange(self.n_bins) / self.bins_per_octave)

    @property
    def edges(self) -> np.ndarray:
        """``q_{-1} .. q_{n_bins-1}``; ``q_{-1}`` is extrapolated one bin down."""
        return self.fmin * 2.0 ** (np.arange(-1, self.n_bins) / self.bins_per_octave)

    def bin_of(self, freq_hz: float) -> int | None:
        """Index ``j`` with ``q_{j-1} < freq_hz <= q_j``, or None off-grid."""
        edges = self.edges
        if not (edges[0] < freq_hz <= edges[-1]):
            return None
        return int(np.searchsorted(edges[1:], freq_hz, side="left"))

    def snap(self, freq_hz: float, rtol: float = 1e-9) -> float:
        """``freq_hz`` replaced by the grid frequency within ``rtol`` of it, if any.

        Grid frequencies reached by arithmetic (``q_m * 2 ** (s / 12)``) can
        miss ``q_{m+s}`` by an ulp, which under the half-open bin rule moves
        them one bin up. Snapping restores the exact value.
        """
        q = self.frequencies
        j = int(np.argmin(np.abs(q - freq_hz)))
        return float(q[j]) if abs(q[j] - freq_hz) <= rtol * q[j] else float(freq_hz)


@dataclass(frozen=True)
class LabelMatrix:
    """Binary ``(n_frames, n_bins)`` rasterization of a note track."""

    data: np.ndarray
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.uint8)
        if data.ndim != 2:
            raise ValueError(f"label matrix must be 2-D, got shape {data.shape}")
        if data.size and data.max() > 1:
            raise ValueError("label matrix entries must be 0 or 1")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other):
        if not isinstance(other, LabelMatrix):
            return NotImplemented
        return np.array_equal(self.data, other.data)

    __hash__ = None


class Violation(NamedTuple):
    kind: str  # "overlap" or "duration"
    indices: tuple[int, ...]
    detail: str


def rasterize(notes: NoteTrack | Iterable[NoteEvent], tg: TimeGrid | None = None,
              fg: FrequencyGrid | None = None, n_frames: int | None = None,
              warn: bool = True) -> LabelMatrix:
    """Rasterize notes onto the time/frequency grid.

    Cell ``(i, j)`` is 1 iff some note satisfies
    ``start <= r_i <= end`` and ``q_{j-1} < freq <= q_j``. Notes outside the
    grid's frequency range are skipped and listed in the returned
    matrix's ``warnings`` (and emitted as :class:`NoteWarning`).
    """
    tg = tg or TimeGrid()
    fg = fg or FrequencyGrid()
    notes = tuple(notes)
    if n_frames is None:
        n_frames = tg.n_frames_for(max((n.end_sec for n in notes), default=0.0))
    if n_frames <= 0:
        raise ValueError(f"n_frames must be positive, got {n_frames}")

    r = tg.timestamps(n_frames)
    out = np.zeros((n_frames, fg.n_bins), dtype=np.uint8)
    skipped = []
    for k, note in enumerate(notes):
        j = fg.bin_of(note.freq_hz)
        if j is None:
            skipped.append(f"note {k} at {note.freq_hz:.3f} Hz is outside the frequency grid")
            continue
        out[(r >= note.start_sec) & (r <= note.end_sec), j] = 1
    if warn:
        for msg in skipped:
            warnings.warn(msg, NoteWarning, stacklevel=2)
    return LabelMatrix(out, tuple(skipped))


def validate_notes(notes: NoteTrack | Sequence[NoteEvent]) -> list[Violation]:
    """List overlapping pairs and non-positive-duration notes.

    Overlap is tested on half-open ``[start, end)`` intervals, so notes that
    touch end-to-start are valid.
    """
    notes = sorted(notes)
    violations = []
    for k, note in enumerate(notes):
        if note.end_sec <= note.start_sec:
            violations.append(Violation("duration", (k,), f"note {k} has duration {note.duration:g}"))
    for k in range(len(notes)):
        for m in range(k + 1, len(notes)):
            if notes[m].start_sec >= notes[k].end_sec:
                break
            if notes[m].end_sec > notes[m].start_sec and notes[k].end_sec > notes[k].start_sec:
                violations.append(Violation("overlap", (k, m), f"notes {k} and {m} overlap"))
    return violations


@dataclass(frozen=True)
class Patch:
    """Context window around one frame.

    ``features`` is ``(n_bins, 2n+1, channels)``; ``labels`` is
    ``(n_bins, 2n+1)``. Out-of-range frames are zero.
    """

    features: np.ndarray
    labels: np.ndarray
    center_index: int

    @property
    def context(self) -> int:
        return (self.labels.shape[1] - 1) // 2

    def as_input(self) -> np.ndarray:
        """Stack into the detector's ``(n_bins, 2n+1, channels + 1)`` input."""
        return np.concatenate(
            [self.features, self.labels[:, :, None].astype(self.features.dtype)], axis=2)


def _window(a: np.ndarray, i: int, n: int) -> np.ndarray:
    """Frames ``i-n .. i+n`` of ``a`` (frames on axis 0), zero-padded."""
    T = a.shape[0]
    out = np.zeros((2 * n + 1,) + a.shape[1:], dtype=a.dtype)
    lo, hi = max(i - n, 0), min(i + n + 1, T)
    out[lo - (i - n):hi - (i - n)] = a[lo:hi]
    return out


def extract_patch(X, Y: LabelMatrix | np.ndarray, i: int, n: int = 40) -> Patch:
    """Cut the ``2n+1`` frame window centered at frame ``i``.

    ``X`` is a :class:`~notegate.spectral.SpectrogramStack` or an array of
    shape ``(n_frames, n_bins, channels)``.
    """
    if n <= 0:
        raise ValueError(f"context n must be positive, got {n}")
    x = np.asarray(getattr(X, "data", X))
    y = np.asarray(getattr(Y, "data", Y))
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"frame count mismatch: X has {x.shape[0]}, Y has {y.shape[0]}")
    if not 0 <= i < x.shape[0]:
        raise IndexError(f"frame index {i} outside [0, {x.shape[0]})")
    xf = _window(x, i, n).transpose(1, 0, 2)
    yf = _window(y, i, n).T
    return Patch(np.ascontiguousarray(xf), np.ascontiguousarray(yf), i)
