"""Assembling detector training data from annotated tracks and fitting it."""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from ..core import LabelMatrix, NoteTrack, rasterize
from ..deform import DeformationConfig, PatchExample, sample_negatives
from ..nn import PatchSource, TrainConfig, train
from ..select import build_training_set, likely_correct_frames, pseudo_salience
from ..spectral import SpectrogramStack, cqt, frame_energy, stack_channels

log = logging.getLogger(__name__)


@dataclass
class TrackData:
    """Everything the detector needs from one track.

    ``labels`` are the rasterized ``notes`` (the annotations under test).
    """

    track_id: str
    X: SpectrogramStack
    notes: NoteTrack
    labels: LabelMatrix

    @property
    def n_frames(self) -> int:
        return self.X.n_frames


def prepare_track(track_id: str, waveform, notes: NoteTrack, vocal=None) -> TrackData:
    """CQT the audio (and optional vocal stem) and rasterize ``notes``."""
    mix = cqt(waveform)
    stack = stack_channels(mix, None if vocal is None else cqt(vocal))
    Y = rasterize(notes, n_frames=stack.n_frames, warn=False)
    return TrackData(track_id, stack, notes, Y)


def map_tracks(fn, items, threads: int = 1):
    """``[fn(x) for x in items]``, optionally on a thread pool; order is kept."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def track_examples(track: TrackData, deform_config: DeformationConfig, n: int = 40,
                   negatives_per_positive: float = 1.0, min_negatives: int = 8,
                   profiles=("train", "test"), **threshold_kw):
    """Positives (likely-correct frames) and deformation negatives of one track.

    The number of negatives drawn is ``negatives_per_positive`` times the
    positive count, and at least ``min_negatives``.
    """
    Y = track.labels
    frames = likely_correct_frames(Y, pseudo_salience(track.X), frame_energy(track.X),
                                   profiles=profiles, n=n, **threshold_kw)
    y = Y.data
    positives = [PatchExample(track.track_id, int(i), 0, y) for i in frames]
    want = max(int(round(negatives_per_positive * len(positives))), min_negatives)
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        negatives, _ = sample_negatives(track.X, Y, track.notes,
                                        deform_config.for_track(track.track_id), want, n=n)
    return positives, negatives


def collect_examples(tracks, deform_config: DeformationConfig = DeformationConfig(), n: int = 40,
                     threads: int = 1, **kw):
    """Concatenate :func:`track_examples` over tracks in input order."""
    parts = map_tracks(lambda t: track_examples(t, deform_config, n, **kw), tracks, threads)
    positives = [e for p, _ in parts for e in p]
    negatives = [e for _, q in parts for e in q]
    return positives, negatives


@dataclass
class DetectorFit:
    checkpoint: object
    history: object
    train_split: list
    holdout_split: list
    n_positives: int
    n_negatives: int


def fit_detector(tracks, deform_config: DeformationConfig = DeformationConfig(),
                 train_config: TrainConfig = TrainConfig(), n: int = 40, balance: float = 1.0,
                 holdout_fraction: float = 0.2, threads: int = 1, **kw) -> DetectorFit:
    """Select positives, synthesize negatives, split by track and train."""
    tracks = list(tracks)
    pos, neg = collect_examples(tracks, deform_config, n, threads, **kw)
    log.info("collected %d positive and %d negative patches", len(pos), len(neg))
    tr, ho = build_training_set(pos, neg, balance, train_config.seed, holdout_fraction)
    source = PatchSource({t.track_id: t.X for t in tracks}, n)
    ckpt, hist = train(tr, ho, source, train_config)
    return DetectorFit(ckpt, hist, tr, ho, len(pos), len(neg))
