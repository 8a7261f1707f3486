"""Acceptance criteria 1 to 11.

Each test prints one ``C<k> ... PASS|FAIL`` line (also repeated in the
terminal summary) and then asserts the criterion at its stated tolerance.
"""

import json
import time
import warnings

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from notegate.cli import main as cli_main
from notegate.core import FrequencyGrid, NoteEvent, NoteTrack, rasterize, validate_notes
from notegate.deform import DeformationConfig, deform_track, diff_frames, record_mask
from notegate.nn import TrainConfig, block_output_shapes, build_error_detector, grad_check
from notegate.pipeline import (DownstreamConfig, FrameScoreTrack, cleanse, dataset_report,
                               downstream_experiment, fit_detector, prepare_track, reference_f0,
                               score_track, synth_dataset)
from notegate.pipeline.detector import map_tracks
from notegate.pipeline.downstream import DownstreamTrack, split_tracks
from notegate.select import (SelectionThresholds, local_agreement_track, patch_agreement,
                             select_likely_correct)
from notegate.spectral import Waveform, cqt, interior_frames
from oracles import rasterize_loop

THREADS = 4
NO_ERRORS = DeformationConfig(p_onset_shift=0, p_offset_shift=0, p_pitch_shift=0, p_delete=0,
                              p_insert=0)


def verdict(label, ok, detail=""):
    line = f"{label}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else "")
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def random_track(rng, max_notes=10, max_frames=100):
    """Notes inside ``max_frames`` frames, overlaps and off-grid pitches allowed."""
    horizon = max_frames * 256 / 22050
    notes = []
    for _ in range(int(rng.integers(0, max_notes + 1))):
        a, b = np.sort(rng.uniform(0, horizon, 2))
        if b <= a:
            continue
        notes.append(NoteEvent(float(a), float(b), float(rng.uniform(40, 6000))))
    return NoteTrack("r", tuple(notes))


def test_c1_rasterization_oracle():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    bad = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(1000):
            tr = random_track(rng)
            T = int(rng.integers(1, 101))
            if not np.array_equal(rasterize(tr, n_frames=T, warn=False).data,
                                  rasterize_loop(tr, T)):
                bad += 1
    dt = time.perf_counter() - t0
    ok = bad == 0 and dt < 10
    verdict("C1 rasterization oracle equivalence", ok, f"{bad} mismatches / 1000, {dt:.1f} s")
    assert ok


def test_c2_architecture_shapes():
    net = build_error_detector(seed=0)
    expected = ((36, 81, 16), (18, 27, 32), (6, 9, 64), (2, 3, 128), (1, 1, 256))
    trace = []
    net.forward(np.random.default_rng(0).random((1, 72, 81, 3)), "eval", trace=trace)
    got = tuple(tuple(a.shape[1:]) for name, a in trace
                if name.startswith("block") and name.endswith(".act"))
    ok = got == expected and block_output_shapes(net) == expected
    verdict("C2 architecture shape conformance", ok, f"{got}")
    assert ok


def test_c3_gradient_check():
    net = build_error_detector(seed=0)
    x = np.random.default_rng(3).random((1, 72, 81, 3))
    t0 = time.perf_counter()
    res = grad_check(net, x, [1], step=1e-4, n_per_kind=500, seed=3)
    dt = time.perf_counter() - t0
    counts = {k: v["n"] for k, v in res.per_kind.items()}
    ok = (res.max_rel_error < 1e-4 and dt < 300
          and all(counts[k] >= 500 for k in ("conv", "batchnorm", "dense")))
    verdict("C3 gradient correctness", ok,
            f"max rel error {res.max_rel_error:.2e}, compared {counts}, "
            f"{res.n_kink_skipped} kink-skipped, {dt:.0f} s")
    assert ok


def test_c4_cqt_bin_localization():
    fg = FrequencyGrid()
    t = np.arange(2 * 22050) / 22050
    t0 = time.perf_counter()
    wrong = []
    for j in range(2, 70):
        C = cqt(Waveform((0.5 * np.sin(2 * np.pi * fg.frequencies[j] * t)).astype(np.float32),
                         22050))
        inner = np.argmax(C[interior_frames(C.shape[0])], axis=1)
        if inner.size == 0 or np.any(inner != j):
            wrong.append(j)
    dt = time.perf_counter() - t0
    ok = not wrong and dt < 120
    verdict("C4 CQT bin localization", ok, f"bins failing {wrong}, {dt:.1f} s")
    assert ok


def valid_track(rng):
    notes, t = [], float(rng.uniform(0, 0.5))
    for _ in range(int(rng.integers(1, 11))):
        d = float(rng.uniform(0.05, 0.8))
        notes.append(NoteEvent(t, t + d, float(FrequencyGrid().frequencies[rng.integers(72)])))
        t += d + float(rng.uniform(0.0, 0.5))
    return NoteTrack("d", tuple(notes))


def test_c5_deformation_soundness():
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    invalid = mask_mismatch = nondeterministic = 0
    for k in range(10_000):
        tr = valid_track(rng)
        cfg = DeformationConfig(rng_seed=k)
        out, records = deform_track(tr, cfg)
        if validate_notes(out):
            invalid += 1
        T = max(rasterize(tr, warn=False).n_frames, rasterize(out, warn=False).n_frames)
        diff = diff_frames(rasterize(tr, n_frames=T, warn=False),
                           rasterize(out, n_frames=T, warn=False))
        if not np.array_equal(np.flatnonzero(record_mask(records, T)), diff):
            mask_mismatch += 1
        if k % 10 == 0 and deform_track(tr, cfg) != (out, records):
            nondeterministic += 1
    dt = time.perf_counter() - t0
    ok = invalid == 0 and mask_mismatch == 0 and nondeterministic == 0 and dt < 60
    verdict("C5 deformation soundness", ok,
            f"{invalid} invalid, {mask_mismatch} mask mismatches, "
            f"{nondeterministic} nondeterministic of 10000, {dt:.1f} s")
    assert ok


def test_c6_selection_disjoint_and_bounded():
    rng = np.random.default_rng(6)
    overlap = out_of_bounds = unannotated = selected = 0
    for _ in range(300):
        T = int(rng.integers(90, 400))
        y = np.zeros((T, 72), dtype=np.uint8)
        voiced = rng.random(T) < 0.7
        y[np.flatnonzero(voiced), rng.integers(72, size=int(voiced.sum()))] = 1
        s = rng.random((T, 72)) ** rng.uniform(0.05, 1.0)
        s[rng.random(T) < 0.3] = 1.0
        kl = local_agreement_track(y, s)
        kp = patch_agreement(kl, 11)
        out_of_bounds += int(np.sum((kl < 0) | (kl > 1)) + np.sum((kp < 0) | (kp > 1)))
        unannotated += int(np.sum(kl[~voiced] != 0))
        tr = set(select_likely_correct(y, s, SelectionThresholds.train()).tolist())
        te = set(select_likely_correct(y, s, SelectionThresholds.test()).tolist())
        overlap += len(tr & te)
        unannotated += sum(1 for i in tr | te if not voiced[i])
        selected += len(tr) + len(te)
    ok = overlap == 0 and out_of_bounds == 0 and unannotated == 0 and selected > 0
    verdict("C6 selection disjointness and bounds", ok,
            f"{selected} selections, {overlap} overlaps, {out_of_bounds} out of bounds, "
            f"{unannotated} unannotated hits")
    assert ok


def test_c9_cleanse_algebra():
    rng = np.random.default_rng(9)
    thresholds = [k / 10 for k in range(1, 10)]
    failures = 0
    for _ in range(1000):
        g = rng.random(int(rng.integers(1, 200)))
        g[rng.random(len(g)) < 0.1] = rng.choice(thresholds)
        s = FrameScoreTrack("c", g)
        rates = []
        for thr in thresholds:
            r = cleanse(s, thr)
            part = np.sort(np.concatenate([r.filtered_index, r.flagged_index]))
            kept_ok = np.array_equal(r.filtered_index, np.flatnonzero(g < thr))
            if not (np.array_equal(part, np.arange(len(g))) and kept_ok
                    and np.array_equal(r.weights, 1.0 - g)):
                failures += 1
            rates.append(float(np.mean(g >= thr)))
        if np.any(np.diff(rates) > 0):
            failures += 1
    ok = failures == 0
    verdict("C9 cleanse algebra", ok, f"{failures} failures over 1000 vectors x 9 thresholds")
    assert ok


def test_c10_report_integrity():
    rng = np.random.default_rng(10)
    ok = True
    for _ in range(200):
        n = int(rng.integers(1, 40))
        frames = int(rng.integers(1, 50))
        results = [cleanse(FrameScoreTrack(f"t{k}", rng.random(frames))) for k in range(n)]
        rates = [r.error_rate for r in results]
        rep = dataset_report(results, external_scores=rates if n > 1 else None)
        mean = sum(rates) / n
        std = (sum((x - mean) ** 2 for x in rates) / n) ** 0.5
        ok &= abs(rep.mean - mean) <= 1e-12 and abs(rep.std - std) <= 1e-12
        ok &= sum(rep.histogram) == n
        if n > 1 and len(set(rates)) > 1:
            ok &= abs(rep.pearson_r - 1.0) <= 1e-12
    verdict("C10 report integrity", bool(ok), "200 random reports")
    assert ok


# planted-error experiments -------------------------------------------------

@pytest.fixture(scope="module")
def planted():
    """Train the detector once on 60 corrupted tracks (seed 0)."""
    corpus = synth_dataset(60, seed=0)
    tracks = map_tracks(lambda t: prepare_track(t.track_id, t.waveform, t.corrupted),
                        corpus.tracks, THREADS)
    t0 = time.perf_counter()
    fit = fit_detector(tracks, DeformationConfig(), TrainConfig(epochs=20, seed=0),
                       threads=THREADS, v=20)
    return corpus, tracks, fit, time.perf_counter() - t0


def balanced_accuracy(pred, truth):
    tpr = float(np.mean(pred[truth])) if truth.any() else 1.0
    tnr = float(np.mean(~pred[~truth])) if (~truth).any() else 1.0
    return 0.5 * (tpr + tnr), tpr, tnr


@pytest.mark.slow
def test_c7_planted_error_detection(planted):
    corpus, tracks, fit, train_sec = planted
    holdout_ids = sorted({e.track_id for e in fit.holdout_split})
    by_id = {t.track_id: t for t in corpus.tracks}
    net = fit.checkpoint.to_network()
    preds, truth = [], []
    for t in tracks:
        if t.track_id not in holdout_ids:
            continue
        g = score_track(net, t.X, t.labels).scores
        m = np.zeros(t.n_frames, dtype=bool)
        m[by_id[t.track_id].mask] = True
        preds.append(g >= 0.5)
        truth.append(m)
    frame_bal, tpr, tnr = balanced_accuracy(np.concatenate(preds), np.concatenate(truth))
    best = fit.history.epochs[fit.history.best_epoch]
    patch_bal = best["holdout_balanced_accuracy"]
    ok = frame_bal >= 0.80 and patch_bal >= 0.80 and train_sec <= 1800
    verdict("C7 planted-error detection", ok,
            f"holdout frames vs planted masks: balanced {frame_bal:.3f} "
            f"(recall {tpr:.3f}, specificity {tnr:.3f}) on {len(holdout_ids)} tracks; "
            f"holdout patches balanced {patch_bal:.3f} at epoch {fit.history.best_epoch}; "
            f"{train_sec / 60:.1f} min")
    assert ok


def downstream_on(corpus, net, cfg):
    prepared = dict(zip([t.track_id for t in corpus.tracks], map_tracks(
        lambda t: prepare_track(t.track_id, t.waveform, t.corrupted), corpus.tracks, THREADS)))
    by_id = {t.track_id: t for t in corpus.tracks}
    train_ids, test_ids = split_tracks(list(prepared), cfg.test_fraction, cfg.seed)
    train = [DownstreamTrack(i, prepared[i].X, prepared[i].labels) for i in train_ids]
    test = [DownstreamTrack(i, prepared[i].X, prepared[i].labels,
                            reference_f0(by_id[i].clean, by_id[i].n_frames)) for i in test_ids]
    scores = {i: score_track(net, prepared[i].X, prepared[i].labels).scores for i in train_ids}
    return downstream_experiment(train, test, scores, cfg)


@pytest.mark.slow
def test_c8_downstream_improvement(planted):
    net = planted[2].checkpoint.to_network()
    cfg = DownstreamConfig(seed=0)
    t0 = time.perf_counter()
    rep = downstream_on(synth_dataset(60, seed=1), net, cfg)
    ctrl = downstream_on(synth_dataset(60, deform_config=NO_ERRORS, seed=1), net, cfg)
    dt = time.perf_counter() - t0
    r = {k: 100 * c.mean("rpa") for k, c in rep.conditions.items()}
    rc = {k: 100 * c.mean("rpa") for k, c in ctrl.conditions.items()}
    test = rep.tests["filtered-vs-all"]["rpa"]
    ok = (r["filtered"] >= r["all"] + 5 and r["weighted"] >= r["filtered"] - 2
          and max(rc.values()) - min(rc.values()) <= 2 and test["t"] is not None
          and dt <= 2700)
    verdict("C8 downstream improvement", ok,
            "corrupted RPA all/filtered/weighted "
            + "/".join(f"{r[k]:.2f}" for k in ("all", "filtered", "weighted"))
            + f", paired t filtered-vs-all t={test['t']:.2f} p={test['p']:.3g}"
            + "; control " + "/".join(f"{rc[k]:.2f}" for k in ("all", "filtered", "weighted"))
            + f"; {dt / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_c11_cli_determinism(tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({"select": {"v": 20}, "train": {"epochs": 2}}))

    def pipeline(root):
        data, sel, model, scored, filt, rep = (root / "data", root / "select", root / "model",
                                               root / "scores", root / "filtered",
                                               root / "report")
        ckpt = str(model / "detector.ngck")
        steps = [["synth", "--tracks", "20", "--seed", "11", "--out", str(data)],
                 ["select", str(data), "--config", str(cfg), "--out", str(sel)],
                 ["train", str(data), "--config", str(cfg), "--seed", "11",
                  "--selection", str(sel / "selection.json"), "--out", str(model)],
                 ["score", str(data), "--checkpoint", ckpt, "--out", str(scored)],
                 ["filter", str(data), "--checkpoint", ckpt, "--out", str(filt)],
                 ["report", str(filt), "--out", str(rep)]]
        return [cli_main(s) for s in steps]

    codes = pipeline(tmp_path / "one") + pipeline(tmp_path / "two")
    one = sorted(p.relative_to(tmp_path / "one") for p in (tmp_path / "one").rglob("*")
                 if p.is_file())
    two = sorted(p.relative_to(tmp_path / "two") for p in (tmp_path / "two").rglob("*")
                 if p.is_file())
    differing = [str(p) for p in one
                 if (tmp_path / "one" / p).read_bytes() != (tmp_path / "two" / p).read_bytes()]
    n_art = sum(1 for p in one if p.suffix in (".ngmx", ".json", ".ngck"))
    report_path = tmp_path / "one" / "report" / "report.json"
    hist_total = (sum(json.loads(report_path.read_text())["histogram"]["counts"])
                  if report_path.is_file() else None)
    ok = (all(c == 0 for c in codes) and one == two and not differing and n_art > 0
          and hist_total == 20)
    verdict("C11 end-to-end determinism", ok,
            f"exit codes {codes}, {len(one)} files, {n_art} NGMX/JSON/NGCK artifacts, "
            f"{len(differing)} differ, report histogram sums to {hist_total}")
    assert ok
