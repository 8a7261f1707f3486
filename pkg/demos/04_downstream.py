"""Does cleansing help a pitch tracker?

A small frame-level pitch classifier is trained three ways on corrupted
labels: on every frame, only on the frames kept by cleansing, and on every
frame with weight ``1 - g``. Here ``g`` is the oracle (the planted error
masks), which shows the ceiling a perfect detector would reach; swap in
``score_track`` with a trained checkpoint to measure a real detector.

Run with ``python demos/04_downstream.py``.
"""

from notegate.pipeline import DownstreamConfig, corpus_downstream, mask_scores, synth_dataset

corpus = synth_dataset(16, seed=1)
cfg = DownstreamConfig(epochs=4, seed=0)
report = corpus_downstream(corpus, cfg=cfg, scores=mask_scores(corpus), threads=4)
print(report.to_text())

all_rpa = report.conditions["all"].mean("rpa")
kept = report.conditions["filtered"]
print(f"cleansing dropped {report.conditions['all'].n_frames - kept.n_frames} training frames "
      f"and moved mean raw pitch accuracy from {100 * all_rpa:.2f}% to "
      f"{100 * kept.mean('rpa'):.2f}%")
