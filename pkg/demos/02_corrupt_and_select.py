"""Manufacturing wrong labels and picking likely-correct ones.

The detector never sees hand-marked errors. Its negative examples come
from deforming annotations (shifted onsets and offsets, transposed,
deleted or inserted notes). Its positive examples are frames where the
annotation agrees with a salience estimate, plus long silent stretches.

Run with ``python demos/02_corrupt_and_select.py``.
"""

import numpy as np

from notegate.core import rasterize
from notegate.deform import DeformationConfig, deform_track, diff_frames, record_mask
from notegate.pipeline import prepare_track, synth_dataset
from notegate.select import (SelectionThresholds, likely_correct_frames, local_agreement_track,
                             pseudo_salience)
from notegate.spectral import frame_energy

track = synth_dataset(1, seed=7).tracks[0]
print(f"track {track.track_id}: {len(track.clean)} clean notes, {track.n_frames} frames")

# 1. Deform the clean notes and inspect what changed.
cfg = DeformationConfig(rng_seed=3)
deformed, records = deform_track(track.clean, cfg, duration=3.0)
for r in records:
    print(f"  {r.kind.value:<7} note {r.index}  magnitude {r.magnitude:+.3f}")

T = track.n_frames
changed = diff_frames(rasterize(track.clean, n_frames=T, warn=False),
                      rasterize(deformed, n_frames=T, warn=False))
implied = np.flatnonzero(record_mask(records, T))
print(f"frames whose labels changed: {len(changed)}; implied by the records alone: "
      f"{len(implied)}; identical: {np.array_equal(changed, implied)}")

# 2. Select likely-correct frames on the clean annotation.
data = prepare_track(track.track_id, track.waveform, track.clean)
s = pseudo_salience(data.X)
kl = local_agreement_track(data.labels, s)
voiced = data.labels.data.any(axis=1)
print(f"\nlocal agreement on voiced frames: median {np.median(kl[voiced]):.3f}")
for profile in ("train", "test"):
    th = SelectionThresholds.named(profile, v=20)
    print(f"  {profile} profile thresholds: {th}")
picked = likely_correct_frames(data.labels, s, frame_energy(data.X), v=20)
print(f"likely-correct frames (both profiles and silence): {len(picked)} of {T}")

# Selection on the corrupted labels avoids most planted errors.
noisy = prepare_track(track.track_id, track.waveform, track.corrupted)
picked_noisy = likely_correct_frames(noisy.labels, pseudo_salience(noisy.X),
                                     frame_energy(noisy.X), v=20)
hits = np.intersect1d(picked_noisy, track.mask)
print(f"on the corrupted labels: {len(picked_noisy)} selected, {len(hits)} of them fall on "
      f"the {len(track.mask)} planted-error frames")
