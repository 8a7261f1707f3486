import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from notegate.core import NoteEvent, NoteTrack, rasterize, validate_notes
from notegate.deform import (DeformationConfig, DeformationRecord, Kind, deform_track,
                             diff_frames, read_records_jsonl, record_mask, sample_negatives,
                             write_records_jsonl)
from notegate.spectral import SpectrogramStack
from oracles import rows_differ_loop

ZERO = dict(p_onset_shift=0, p_offset_shift=0, p_pitch_shift=0, p_delete=0, p_insert=0)


def melody(k=5, start=0.1, dur=0.3, gap=0.2, f=220.0):
    return NoteTrack("m", tuple(NoteEvent(start + i * (dur + gap), start + i * (dur + gap) + dur,
                                          f * 2 ** (i / 12)) for i in range(k)))


@st.composite
def tracks(draw):
    k = draw(st.integers(1, 10))
    t = draw(st.floats(0, 0.3))
    notes = []
    for _ in range(k):
        d = draw(st.floats(0.05, 0.6))
        notes.append(NoteEvent(t, t + d, draw(st.floats(80, 3000))))
        t += d + draw(st.floats(0.0, 0.5))
    return NoteTrack("h", tuple(notes))


def test_identity_config():
    tr = melody()
    out, rec = deform_track(tr, DeformationConfig(**ZERO))
    assert out == tr and rec == []
    assert DeformationConfig(**ZERO).is_identity


def test_forced_deletion():
    out, rec = deform_track(melody(5), DeformationConfig(**{**ZERO, "p_delete": 1}))
    assert len(out) == 0
    assert [r.kind for r in rec] == [Kind.DELETE] * 5


def test_forced_pitch_shift_recomputes_from_records():
    tr = melody(6)
    cfg = DeformationConfig(**{**ZERO, "p_pitch_shift": 1, "rng_seed": 11})
    out, rec = deform_track(tr, cfg)
    assert len(rec) == 6
    for r in rec:
        s = int(r.magnitude)
        assert s != 0 and 1 <= abs(s) <= 5
        assert r.after.freq_hz == tr.notes[r.index].freq_hz * 2.0 ** (s / 12)
    again, rec2 = deform_track(tr, cfg)
    assert again == out and rec2 == rec


@given(tracks(), st.integers(0, 2 ** 32))
def test_output_valid_and_mask_matches(track, seed):
    cfg = DeformationConfig(rng_seed=seed)
    out, rec = deform_track(track, cfg, duration=track.end_sec + 0.5)
    assert validate_notes(out) == []
    T = rasterize(track, warn=False).n_frames + 60
    y0 = rasterize(track, n_frames=T, warn=False)
    y1 = rasterize(out, n_frames=T, warn=False)
    np.testing.assert_array_equal(np.flatnonzero(record_mask(rec, T)), diff_frames(y0, y1))


@given(tracks(), st.integers(0, 2 ** 32))
def test_shift_magnitudes_in_range(track, seed):
    _, rec = deform_track(track, DeformationConfig(rng_seed=seed))
    for r in rec:
        if r.kind in (Kind.ONSET, Kind.OFFSET):
            assert 0 < abs(r.magnitude) <= 0.4 + 1e-12
        if r.kind is Kind.PITCH:
            assert 1 <= abs(r.magnitude) <= 5


def test_clamped_shift_is_recorded_as_realized():
    # two touching notes: an onset shift of the second note cannot move left
    tr = NoteTrack("c", (NoteEvent(0.0, 0.5, 220), NoteEvent(0.5, 1.0, 330)))
    for seed in range(50):
        out, rec = deform_track(tr, DeformationConfig(**{**ZERO, "p_onset_shift": 1,
                                                           "rng_seed": seed}))
        assert validate_notes(out) == []
        for r in rec:
            assert r.after.start_sec - r.before.start_sec == pytest.approx(r.magnitude)


def test_per_track_seed_differs():
    cfg = DeformationConfig(rng_seed=5)
    assert cfg.for_track("a").rng_seed != cfg.for_track("b").rng_seed
    assert cfg.for_track("a") == cfg.for_track("a")


def test_config_round_trip(tmp_path):
    cfg = DeformationConfig(p_delete=0.3, shift_range=(0.1, 0.2), rng_seed=4)
    assert DeformationConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        DeformationConfig.from_dict({"p_bogus": 1})
    with pytest.raises(ValueError):
        DeformationConfig(p_delete=1.5)


def test_records_jsonl_round_trip(tmp_path):
    _, rec = deform_track(melody(8), DeformationConfig(rng_seed=3), duration=5.0)
    write_records_jsonl(tmp_path / "r.jsonl", rec)
    assert read_records_jsonl(tmp_path / "r.jsonl") == rec
    assert all(isinstance(r, DeformationRecord) for r in rec)


class TestDiffFrames:
    def test_identical(self):
        y = rasterize(melody(), warn=False)
        assert diff_frames(y, y).size == 0

    def test_onset_shift_three_frames(self):
        period = 256 / 22050
        a = NoteTrack("x", (NoteEvent(10.5 * period, 30.5 * period, 220),))
        b = NoteTrack("x", (NoteEvent(13.5 * period, 30.5 * period, 220),))
        ya, yb = rasterize(a, n_frames=40), rasterize(b, n_frames=40)
        assert diff_frames(ya, yb).tolist() == [11, 12, 13]
        assert diff_frames(ya, yb).tolist() == rows_differ_loop(ya.data, yb.data)

    def test_deleted_note(self):
        period = 256 / 22050
        a = NoteTrack("x", (NoteEvent(9.5 * period, 20.5 * period, 220),))
        ya = rasterize(a, n_frames=30)
        yb = rasterize([], n_frames=30)
        assert diff_frames(ya, yb).tolist() == list(range(10, 21))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            diff_frames(np.zeros((3, 72)), np.zeros((4, 72)))


class TestSampleNegatives:
    def setup_method(self):
        self.notes = melody(6, start=0.3, dur=0.4, gap=0.1)
        self.Y = rasterize(self.notes, n_frames=300, warn=False)
        self.X = SpectrogramStack(np.zeros((300, 72, 2)))

    def test_identity_config_warns_and_returns_nothing(self):
        with pytest.warns(RuntimeWarning):
            ex, starved = sample_negatives(self.X, self.Y, self.notes,
                                           DeformationConfig(**ZERO), 10)
        assert ex == [] and starved == 1

    def test_centers_differ_from_original(self):
        ex, _ = sample_negatives(self.X, self.Y, self.notes,
                                 DeformationConfig(rng_seed=2, passes=3), 60)
        assert ex
        for e in ex:
            assert e.z == 1
            assert 40 <= e.center < 300 - 40
            assert np.any(e.labels[e.center] != self.Y.data[e.center])

    def test_single_onset_shift_region(self):
        notes = NoteTrack("o", (NoteEvent(1.0, 2.0, 220),))
        Y = rasterize(notes, n_frames=300, warn=False)
        cfg = DeformationConfig(**{**ZERO, "p_onset_shift": 1, "rng_seed": 9})
        ex, _ = sample_negatives(self.X, Y, notes, cfg, 1000)
        period = 256 / 22050
        assert ex
        for e in ex:
            # every center lies inside the span an onset shift of at most 0.4 s can touch
            assert (1.0 - 0.4) / period <= e.center <= (1.0 + 0.4) / period
            changed = set(diff_frames(Y, e.labels).tolist())
            assert e.center in changed
        # centers are all the differing interior frames of one deformation
        assert {e.center for e in ex} == changed

    def test_without_replacement_caps_at_region_size(self):
        notes = NoteTrack("o", (NoteEvent(1.0, 2.0, 220),))
        Y = rasterize(notes, n_frames=300, warn=False)
        cfg = DeformationConfig(**{**ZERO, "p_delete": 1})
        ex, _ = sample_negatives(self.X, Y, notes, cfg, 1000)
        assert len(ex) == int(Y.data.any(axis=1).sum())
        assert len({e.center for e in ex}) == len(ex)

    def test_deterministic(self):
        cfg = DeformationConfig(rng_seed=4)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            a, _ = sample_negatives(self.X, self.Y, self.notes, cfg, 20)
            b, _ = sample_negatives(self.X, self.Y, self.notes, cfg, 20)
        assert [e.center for e in a] == [e.center for e in b]


@given(st.integers(0, 2 ** 32), st.integers(5, 60))
def test_pitch_shift_moves_label_by_exact_semitones(seed, m):
    from notegate.core import FrequencyGrid
    fg = FrequencyGrid()
    track = NoteTrack("p", (NoteEvent(0.2, 0.8, float(fg.frequencies[m])),))
    cfg = DeformationConfig(p_onset_shift=0, p_offset_shift=0, p_pitch_shift=1, p_delete=0,
                            p_insert=0, rng_seed=seed)
    out, records = deform_track(track, cfg)
    (rec,) = records
    assert fg.bin_of(out.notes[0].freq_hz) == m + int(rec.magnitude)
