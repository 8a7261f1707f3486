"""Scoring, cleansing, reporting, synthetic corpora and the downstream experiment."""

from .detector import DetectorFit, TrackData, collect_examples, fit_detector, prepare_track
from .downstream import (DownstreamConfig, DownstreamReport, DownstreamTrack, corpus_downstream,
                         downstream_experiment, mask_scores, reference_f0)
from .scoring import (CleanseResult, DatasetReport, FrameScoreTrack, cleanse, dataset_report,
                      score_track)
from .synth import (NoteGenConfig, SynthCorpus, SynthTrack, read_corpus, synth_dataset,
                    write_corpus)

__all__ = [
    "CleanseResult", "DatasetReport", "DetectorFit", "DownstreamConfig", "DownstreamReport",
    "DownstreamTrack", "FrameScoreTrack", "NoteGenConfig", "SynthCorpus", "SynthTrack",
    "TrackData", "cleanse", "collect_examples", "corpus_downstream", "dataset_report",
    "downstream_experiment", "fit_detector", "mask_scores", "prepare_track", "read_corpus",
    "reference_f0", "score_track", "synth_dataset", "write_corpus",
]
