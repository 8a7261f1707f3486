"""Realistic local corruption of note annotations.

:func:`deform_track` moves onsets and offsets, transposes, deletes and
inserts notes while keeping the result a valid annotation: no overlaps and
no note shorter than ``min_duration``. Every change is logged as a
:class:`DeformationRecord`, so the frames it corrupts can be recovered
without comparing whole label matrices.
"""

from __future__ import annotations

import json
import math
import warnings
import zlib
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .core import FrequencyGrid, LabelMatrix, NoteEvent, NoteTrack, TimeGrid, rasterize

_GRID = FrequencyGrid()

class Kind(str, Enum):
    ONSET = "onset"
    OFFSET = "offset"
    PITCH = "pitch"
    DELETE = "delete"
    INSERT = "insert"


@dataclass(frozen=True)
class DeformationConfig:
    p_onset_shift: float = 0.2
    p_offset_shift: float = 0.2
    p_pitch_shift: float = 0.2
    p_delete: float = 0.1
    p_insert: float = 0.2
    shift_range: tuple[float, float] = (0.05, 0.4)
    pitch_range: tuple[int, int] = (1, 5)
    min_duration: float = 0.1
    rng_seed: int = 0
    passes: int = 1
    max_retries: int = 5

    def __post_init__(self):
        for name in ("p_onset_shift", "p_offset_shift", "p_pitch_shift", "p_delete", "p_insert"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        lo, hi = self.shift_range
        if not 0 < lo <= hi:
            raise ValueError(f"shift_range must satisfy 0 < lo <= hi, got {self.shift_range}")
        lo, hi = self.pitch_range
        if not 1 <= lo <= hi:
            raise ValueError(f"pitch_range must satisfy 1 <= lo <= hi, got {self.pitch_range}")
        if self.min_duration <= 0:
            raise ValueError("min_duration must be positive")
        if self.passes < 1 or self.max_retries < 1:
            raise ValueError("passes and max_retries must be >= 1")
        object.__setattr__(self, "shift_range", tuple(float(v) for v in self.shift_range))
        object.__setattr__(self, "pitch_range", tuple(int(v) for v in self.pitch_range))

    @property
    def is_identity(self) -> bool:
        return not any((self.p_onset_shift, self.p_offset_shift, self.p_pitch_shift,
                        self.p_delete, self.p_insert))

    def with_seed(self, seed: int) -> "DeformationConfig":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw["rng_seed"] = int(seed)
        return DeformationConfig(**kw)

    def for_track(self, track_id: str) -> "DeformationConfig":
        """Per-track config with seed ``rng_seed XOR crc32(track_id)``."""
        return self.with_seed(self.rng_seed ^ zlib.crc32(track_id.encode("utf-8")))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shift_range"] = list(self.shift_range)
        d["pitch_range"] = list(self.pitch_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DeformationConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown deformation config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "DeformationConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class DeformationRecord:
    """One modification. ``index`` is the note's position in the input
    track (None for insertions); ``before``/``after`` are the note before and
    after the change (None for insert/delete respectively)."""

    kind: Kind
    index: int | None
    before: NoteEvent | None
    after: NoteEvent | None
    magnitude: float

    def to_json(self) -> str:
        def note(n):
            return None if n is None else [n.start_sec, n.end_sec, n.freq_hz]
        return json.dumps({"kind": self.kind.value, "index": self.index, "before": note(self.before),
                           "after": note(self.after), "magnitude": self.magnitude}, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "DeformationRecord":
        d = json.loads(line)
        def note(v):
            return None if v is None else NoteEvent(*v)
        return cls(Kind(d["kind"]), d["index"], note(d["before"]), note(d["after"]), d["magnitude"])


def _pick_kind(rng, cfg: DeformationConfig):
    probs = np.array([cfg.p_onset_shift, cfg.p_offset_shift, cfg.p_pitch_shift, cfg.p_delete])
    total = probs.sum()
    if total > 1:
        probs = probs / total
    u = rng.random()
    edges = np.cumsum(probs)
    for kind, edge in zip((Kind.ONSET, Kind.OFFSET, Kind.PITCH, Kind.DELETE), edges):
        if u < edge:
            return kind
    return None


def deform_track(notes: NoteTrack, cfg: DeformationConfig,
                 duration: float | None = None) -> tuple[NoteTrack, list[DeformationRecord]]:
    """Apply random local corruptions to a valid note track.

    Each note receives at most one of onset shift, offset shift, pitch shift
    or deletion. Shifts that would overlap a neighbour or shrink the note
    below ``min_duration`` are clamped to the largest feasible amount and
    recorded with the realised magnitude (a shift clamped to zero is
    dropped). Afterwards each gap between notes (and the tail up to
    ``duration``, when given) receives an inserted note with probability
    ``p_insert``; its length is drawn from the track's own note durations and
    its pitch uniformly from the track's range widened by 2 semitones.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    src = list(notes.notes)
    if not src:
        return NoteTrack(notes.track_id, ()), []

    records: list[DeformationRecord] = []
    out: list[NoteEvent] = []
    lo_s, hi_s = cfg.shift_range
    for k, note in enumerate(src):
        kind = _pick_kind(rng, cfg)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        amount = rng.uniform(lo_s, hi_s)
        semis = int(rng.integers(cfg.pitch_range[0], cfg.pitch_range[1] + 1))
        if kind is None:
            out.append(note)
            continue
        if kind is Kind.DELETE:
            records.append(DeformationRecord(kind, k, note, None, 0.0))
            continue
        # a note shorter than min_duration may keep its own length but not shrink
        floor = min(cfg.min_duration, note.duration)
        if kind is Kind.PITCH:
            s = int(sign * semis)
            new = NoteEvent(note.start_sec, note.end_sec, _GRID.snap(note.freq_hz * 2.0 ** (s / 12)))
            records.append(DeformationRecord(kind, k, note, new, float(s)))
            out.append(new)
            continue
        if kind is Kind.ONSET:
            prev_end = out[-1].end_sec if out else 0.0
            target = note.start_sec + sign * amount
            new_start = min(max(target, prev_end), note.end_sec - floor)
            if new_start == note.start_sec:
                out.append(note)
                continue
            new = NoteEvent(new_start, note.end_sec, note.freq_hz)
            magnitude = new_start - note.start_sec
        else:
            next_start = src[k + 1].start_sec if k + 1 < len(src) else math.inf
            if duration is not None:
                next_start = min(next_start, max(duration, note.end_sec))
            target = note.end_sec + sign * amount
            new_end = max(min(target, next_start), note.start_sec + floor)
            if new_end == note.end_sec:
                out.append(note)
                continue
            new = NoteEvent(note.start_sec, new_end, note.freq_hz)
            magnitude = new_end - note.end_sec
        records.append(DeformationRecord(kind, k, note, new, float(magnitude)))
        out.append(new)

    if cfg.p_insert > 0:
        durations = np.array([n.duration for n in src])
        log_f = np.log2([n.freq_hz for n in src])
        f_lo, f_hi = log_f.min() - 2 / 12, log_f.max() + 2 / 12
        gaps = []
        prev_end = 0.0
        for n in out:
            gaps.append((prev_end, n.start_sec))
            prev_end = n.end_sec
        if duration is not None:
            gaps.append((prev_end, duration))
        inserted = []
        for g0, g1 in gaps:
            hit = rng.random() < cfg.p_insert
            d = float(rng.choice(durations))
            pos = rng.random()
            f = 2.0 ** rng.uniform(f_lo, f_hi)
            if not hit or g1 - g0 < d:
                continue
            start = g0 + pos * (g1 - g0 - d)
            new = NoteEvent(start, min(start + d, g1), f)
            inserted.append(new)
            records.append(DeformationRecord(Kind.INSERT, None, None, new, d))
        out.extend(inserted)

    return NoteTrack(notes.track_id, tuple(out)), records


def diff_frames(Y: LabelMatrix | np.ndarray, Y_mod: LabelMatrix | np.ndarray) -> np.ndarray:
    """Sorted indices of frames whose label rows differ."""
    a = np.asarray(getattr(Y, "data", Y))
    b = np.asarray(getattr(Y_mod, "data", Y_mod))
    if a.shape != b.shape:
        raise ValueError(f"label matrix shapes differ: {a.shape} vs {b.shape}")
    return np.flatnonzero(np.any(a != b, axis=1))


def record_mask(records, n_frames: int, tg: TimeGrid | None = None,
                fg: FrequencyGrid | None = None) -> np.ndarray:
    """Boolean per-frame error mask implied by deformation records alone.

    The notes removed or replaced by the records are rasterized against the
    notes they became; untouched notes never share a frame with either set,
    so the differing rows are exactly the corrupted frames.
    """
    before = rasterize([r.before for r in records if r.before is not None], tg, fg, n_frames,
                       warn=False)
    after = rasterize([r.after for r in records if r.after is not None], tg, fg, n_frames,
                      warn=False)
    return np.any(before.data != after.data, axis=1)


class PatchExample(NamedTuple):
    """Reference to a training patch: frame ``center`` of ``track_id``
    paired with ``labels`` (the original or a deformed label matrix)."""

    track_id: str
    center: int
    z: int
    labels: np.ndarray


def sample_negatives(X, Y: LabelMatrix, notes: NoteTrack, cfg: DeformationConfig,
                     n_samples: int, n: int = 40, tg: TimeGrid | None = None,
                     fg: FrequencyGrid | None = None) -> tuple[list[PatchExample], int]:
    """Draw error examples (z=1) from deformed versions of a track.

    Centers are interior frames (full ``2n+1`` context inside the track)
    whose deformed label row differs from the original, sampled without
    replacement. Up to ``max_retries`` deformation draws are made per pass
    when a draw changes no interior frame. Returns ``(examples, warnings)``
    where ``warnings`` counts passes that yielded nothing.
    """
    T = Y.n_frames
    if T <= 2 * n + 1:
        raise ValueError(f"track of {T} frames is too short for context n={n}")
    rng = np.random.default_rng(cfg.rng_seed)
    duration = T * (tg or TimeGrid()).period
    examples: list[PatchExample] = []
    starved = 0
    per_pass = [n_samples // cfg.passes + (1 if p < n_samples % cfg.passes else 0)
                for p in range(cfg.passes)]
    for want in per_pass:
        cand = np.array([], dtype=int)
        Ym = None
        for _ in range(cfg.max_retries):
            seed = int(rng.integers(2 ** 63))
            deformed, _ = deform_track(notes, cfg.with_seed(seed), duration=duration)
            Ym = rasterize(deformed, tg, fg, T, warn=False).data
            cand = diff_frames(Y, Ym)
            cand = cand[(cand >= n) & (cand < T - n)]
            if cand.size:
                break
        if cand.size == 0:
            starved += 1
            continue
        picks = rng.choice(cand, size=min(want, cand.size), replace=False)
        Ym.setflags(write=False)
        examples.extend(PatchExample(notes.track_id, int(c), 1, Ym) for c in np.sort(picks))
    if starved:
        warnings.warn(f"track {notes.track_id}: {starved} deformation pass(es) changed no interior "
                      "frame", RuntimeWarning, stacklevel=2)
    return examples, starved


def write_records_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_records_jsonl(path) -> list[DeformationRecord]:
    with open(path, encoding="utf-8") as fh:
        return [DeformationRecord.from_json(line) for line in fh if line.strip()]
