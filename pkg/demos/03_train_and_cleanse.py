"""Training the error detector and cleansing a noisy corpus.

A small planted-error corpus is generated, the detector is trained on
selected positives and deformation negatives, and every frame is then
scored. Because the errors were planted, the scores can be checked
against the truth.

This takes a few minutes on a laptop CPU.
Run with ``python demos/03_train_and_cleanse.py``.
"""

import numpy as np

from notegate.deform import DeformationConfig
from notegate.nn import TrainConfig
from notegate.pipeline import (FrameScoreTrack, cleanse, dataset_report, fit_detector,
                               prepare_track, score_track, synth_dataset)
from notegate.pipeline.detector import map_tracks

corpus = synth_dataset(24, seed=0)
tracks = map_tracks(lambda t: prepare_track(t.track_id, t.waveform, t.corrupted),
                    corpus.tracks, threads=4)
share = sum(len(t.mask) for t in corpus.tracks) / sum(t.n_frames for t in corpus.tracks)
print(f"{len(corpus)} tracks; {100 * share:.1f}% of frames carry planted errors")

fit = fit_detector(tracks, DeformationConfig(), TrainConfig(epochs=8, seed=0), threads=4, v=20)
print(f"{fit.n_positives} positive and {fit.n_negatives} negative candidates; "
      f"{len(fit.train_split)} train and {len(fit.holdout_split)} holdout patches")
for row in fit.history.epochs:
    print(f"  epoch {row['epoch']:2d}  train loss {row['train_loss']:.3f}  "
          f"holdout balanced accuracy {row['holdout_balanced_accuracy']:.3f}")

net = fit.checkpoint.to_network()
holdout = {e.track_id for e in fit.holdout_split}
by_id = {t.track_id: t for t in corpus.tracks}
results, tp, fn, fp, tn = [], 0, 0, 0, 0
for t in tracks:
    g = score_track(net, t.X, t.labels, track_id=t.track_id)
    res = cleanse(g)
    results.append(res)
    if t.track_id in holdout:
        truth = np.zeros(t.n_frames, dtype=bool)
        truth[by_id[t.track_id].mask] = True
        flagged = g.scores >= 0.5
        tp += int(np.sum(flagged & truth))
        fn += int(np.sum(~flagged & truth))
        fp += int(np.sum(flagged & ~truth))
        tn += int(np.sum(~flagged & ~truth))

print(f"\nheld-out tracks: recall of planted errors {tp / max(tp + fn, 1):.3f}, "
      f"specificity {tn / max(tn + fp, 1):.3f}")

planted_rate = [len(t.mask) / t.n_frames for t in corpus.tracks]
report = dataset_report(results, external_scores=planted_rate)
print(report.to_text())
