"""From note events to model inputs.

A melody is written as note events, rasterized onto the time-frequency grid
and rendered to audio. The constant-Q spectrogram of that audio peaks in
the same bins the labels mark, which is what lets a detector compare audio
and annotation frame by frame.

Run with ``python demos/01_labels_and_spectra.py``.
"""

import numpy as np

from notegate.core import FrequencyGrid, NoteEvent, NoteTrack, TimeGrid, rasterize
from notegate.pipeline.synth import NoteGenConfig, render
from notegate.spectral import cqt, stack_channels

fg, tg = FrequencyGrid(), TimeGrid()
q = fg.frequencies

# A four-note phrase on grid pitches, with a rest before the last note.
melody = NoteTrack("phrase", (
    NoteEvent(0.10, 0.45, float(q[24])),
    NoteEvent(0.50, 0.80, float(q[28])),
    NoteEvent(0.85, 1.20, float(q[31])),
    NoteEvent(1.60, 1.95, float(q[26])),
))

wave = render(melody, NoteGenConfig(duration_sec=2.2))
mix = cqt(wave)
stack = stack_channels(mix)  # no vocal stem: the mixture is duplicated
Y = rasterize(melody, n_frames=stack.n_frames)

print(f"audio: {len(wave.samples)} samples at {wave.sample_rate} Hz")
print(f"grid: {Y.n_frames} frames of {tg.hop} samples, {Y.n_bins} semitone bins "
      f"from {fg.fmin:.2f} Hz")
print(f"stack shape {stack.data.shape}, vocal channel is a proxy: {stack.vocal_is_proxy}")

voiced = Y.data.any(axis=1)
peak = np.argmax(mix, axis=1)
label_bin = np.argmax(Y.data, axis=1)
agree = np.mean(peak[voiced] == label_bin[voiced])
print(f"voiced frames: {voiced.sum()} of {Y.n_frames}")
print(f"spectral peak equals the labelled bin on {100 * agree:.1f}% of voiced frames")

print("\nframe  time(s)  label bin  peak bin")
for i in range(0, Y.n_frames, 12):
    lab = str(label_bin[i]) if voiced[i] else "-"
    print(f"{i:5d}  {tg.timestamps(Y.n_frames)[i]:7.3f}  {lab:>9}  {peak[i]:8d}")
