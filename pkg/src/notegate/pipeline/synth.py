"""Synthetic planted-error corpora.

Each track is a monophonic melody of pure tones. The clean notes are
rendered to audio; a copy of the notes is corrupted with
:func:`~notegate.deform.deform_track`, so the frames whose labels are wrong
are known exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..core import FrequencyGrid, LabelMatrix, NoteEvent, NoteTrack, TimeGrid, rasterize
from ..deform import (DeformationConfig, deform_track, diff_frames, read_records_jsonl,
                      write_records_jsonl)
from ..io import (load_ngmx, read_json, read_notes_csv, read_wav, save_ngmx, write_json,
                  write_notes_csv, write_wav)
from ..spectral import Waveform


@dataclass(frozen=True)
class NoteGenConfig:
    """Parameters of the random melody generator.

    Pitches are the grid frequencies ``q_m`` with ``m`` drawn
    from ``semitone_range`` (inclusive), moving by at most ``max_step``
    semitones between consecutive notes. After each note a rest of
    ``rest_range`` seconds follows with probability ``p_rest``; otherwise a
    short break of ``gap_range`` seconds.
    """

    duration_sec: float = 3.0
    semitone_range: tuple = (19, 43)
    max_step: int = 5
    note_duration: tuple = (0.15, 0.6)
    gap_range: tuple = (0.03, 0.08)
    rest_range: tuple = (0.15, 0.6)
    p_rest: float = 0.35
    first_onset: tuple = (0.05, 0.4)
    amplitude: float = 0.5
    fade_sec: float = 0.01

    def __post_init__(self):
        if self.duration_sec <= 0:
            raise ValueError("duration_sec must be positive")
        lo, hi = self.semitone_range
        if not 0 <= lo <= hi:
            raise ValueError("semitone_range must satisfy 0 <= low <= high")
        for name in ("note_duration", "gap_range", "rest_range", "first_onset"):
            a, b = getattr(self, name)
            if not 0 <= a <= b:
                raise ValueError(f"{name} must satisfy 0 <= low <= high")
        object.__setattr__(self, "semitone_range", tuple(self.semitone_range))
        for name in ("note_duration", "gap_range", "rest_range", "first_onset"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown note generator keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class SynthTrack:
    track_id: str
    waveform: Waveform
    clean: NoteTrack
    corrupted: NoteTrack
    records: list  # DeformationRecord entries
    mask: np.ndarray  # frame indices whose label rows differ

    @property
    def n_frames(self) -> int:
        return -(-len(self.waveform.samples) // TimeGrid().hop)


@dataclass
class SynthCorpus:
    tracks: list
    note_config: NoteGenConfig = field(default_factory=NoteGenConfig)
    deform_config: DeformationConfig = field(default_factory=DeformationConfig)
    seed: int = 0

    def __len__(self):
        return len(self.tracks)

    def __iter__(self):
        return iter(self.tracks)


def generate_notes(track_id: str, cfg: NoteGenConfig, rng: np.random.Generator,
                   fg: FrequencyGrid | None = None) -> NoteTrack:
    """Random non-overlapping melody that ends before ``cfg.duration_sec``."""
    fg = fg or FrequencyGrid()
    lo, hi = cfg.semitone_range
    if hi >= fg.n_bins:
        raise ValueError(f"semitone_range reaches bin {hi}, the grid has {fg.n_bins}")
    notes = []
    t = rng.uniform(*cfg.first_onset)
    m = int(rng.integers(lo, hi + 1))
    while True:
        dur = rng.uniform(*cfg.note_duration)
        if t + dur > cfg.duration_sec - cfg.fade_sec:
            break
        notes.append(NoteEvent(t, t + dur, float(fg.frequencies[m])))
        gap = rng.uniform(*(cfg.rest_range if rng.random() < cfg.p_rest else cfg.gap_range))
        t = t + dur + gap
        m = int(np.clip(m + rng.integers(-cfg.max_step, cfg.max_step + 1), lo, hi))
    return NoteTrack(track_id, tuple(notes))


def render(notes: NoteTrack, cfg: NoteGenConfig, sample_rate: int = 22050) -> Waveform:
    """Sum of sines, one per note, with linear fades at both ends."""
    n = int(round(cfg.duration_sec * sample_rate))
    out = np.zeros(n, dtype=np.float64)
    fade = max(int(round(cfg.fade_sec * sample_rate)), 1)
    for note in notes:
        a = int(round(note.start_sec * sample_rate))
        b = min(int(round(note.end_sec * sample_rate)), n)
        if b <= a:
            continue
        t = np.arange(b - a) / sample_rate
        env = np.ones(b - a)
        r = np.arange(min(fade, b - a)) / fade
        env[:len(r)] = np.minimum(env[:len(r)], r)
        env[len(env) - len(r):] = np.minimum(env[len(env) - len(r):], r[::-1])
        out[a:b] += cfg.amplitude * env * np.sin(2 * np.pi * note.freq_hz * t)
    return Waveform(out.astype(np.float32), sample_rate)


def track_seed(seed: int, index: int) -> int:
    """Stable per-track seed derived from the corpus seed and track index."""
    h = hashlib.sha256(f"{seed}:{index}".encode()).digest()
    return int.from_bytes(h[:8], "little")


def label_mask(clean: NoteTrack, corrupted: NoteTrack, n_frames: int) -> np.ndarray:
    y0 = rasterize(clean, n_frames=n_frames, warn=False)
    y1 = rasterize(corrupted, n_frames=n_frames, warn=False)
    return diff_frames(y0, y1)


def synth_dataset(n_tracks: int, note_config: NoteGenConfig = NoteGenConfig(),
                  deform_config: DeformationConfig = DeformationConfig(), seed: int = 0,
                  prefix: str = "synth") -> SynthCorpus:
    """Deterministic corpus of ``n_tracks`` planted-error tracks.

    Track ``k`` draws its melody from :func:`track_seed` and its corruption
    from ``deform_config.with_seed(...)`` of the same value, so any track
    can be regenerated alone.
    """
    if n_tracks <= 0:
        raise ValueError("n_tracks must be positive")
    tracks = []
    for k in range(n_tracks):
        tid = f"{prefix}{k:04d}"
        ts = track_seed(seed, k)
        clean = generate_notes(tid, note_config, np.random.default_rng(ts))
        wave = render(clean, note_config)
        corrupted, records = deform_track(clean, deform_config.with_seed(ts ^ 0x5EED),
                                          duration=note_config.duration_sec)
        corrupted = NoteTrack(tid, corrupted.notes)
        n_frames = -(-len(wave.samples) // TimeGrid().hop)
        tracks.append(SynthTrack(tid, wave, clean, corrupted, list(records),
                                 label_mask(clean, corrupted, n_frames)))
    return SynthCorpus(tracks, note_config, deform_config, seed)


def observed_labels(track: SynthTrack) -> LabelMatrix:
    """Rasterized corrupted notes, the labels a cleansing model sees."""
    return rasterize(track.corrupted, n_frames=track.n_frames, warn=False)


def write_corpus(corpus: SynthCorpus, directory) -> list[Path]:
    """Persist a corpus; returns the written paths in a fixed order.

    Per track: ``<id>.wav``, ``<id>.clean.csv``, ``<id>.notes.csv``
    (corrupted), ``<id>.records.jsonl`` and ``<id>.mask.ngmx``. The
    index ``corpus.json`` lists tracks and generator settings.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for t in corpus.tracks:
        paths = [d / f"{t.track_id}.wav", d / f"{t.track_id}.clean.csv",
                 d / f"{t.track_id}.notes.csv", d / f"{t.track_id}.records.jsonl",
                 d / f"{t.track_id}.mask.ngmx"]
        write_wav(paths[0], t.waveform.samples, t.waveform.sample_rate)
        write_notes_csv(paths[1], t.clean)
        write_notes_csv(paths[2], t.corrupted)
        write_records_jsonl(paths[3], t.records)
        save_ngmx(paths[4], np.asarray(t.mask, dtype=np.float32))
        written += paths
    index = d / "corpus.json"
    write_json(index, {"tracks": [t.track_id for t in corpus.tracks], "seed": corpus.seed,
                       "note_config": corpus.note_config.to_dict(),
                       "deform_config": corpus.deform_config.to_dict()})
    written.append(index)
    return written


def read_corpus(directory) -> SynthCorpus:
    d = Path(directory)
    meta = read_json(d / "corpus.json")
    tracks = []
    for tid in meta["tracks"]:
        samples, sr = read_wav(d / f"{tid}.wav")
        clean = read_notes_csv(d / f"{tid}.clean.csv", tid)
        corrupted = read_notes_csv(d / f"{tid}.notes.csv", tid)
        records = read_records_jsonl(d / f"{tid}.records.jsonl")
        mask = load_ngmx(d / f"{tid}.mask.ngmx").astype(int)
        tracks.append(SynthTrack(tid, Waveform(samples, sr), clean, corrupted, records, mask))
    return SynthCorpus(tracks, NoteGenConfig.from_dict(meta["note_config"]),
                       DeformationConfig.from_dict(meta["deform_config"]), meta["seed"])


__all__ = ["NoteGenConfig", "SynthCorpus", "SynthTrack", "generate_notes", "label_mask",
           "observed_labels", "read_corpus", "render", "synth_dataset", "track_seed",
           "write_corpus"]
