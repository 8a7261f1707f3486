"""``notegate`` command-line interface.

Every subcommand writes its artifacts under ``--out`` together with a
``run_manifest.json`` that records the resolved configuration, the seed and
SHA-256 hashes of inputs and outputs. Repeating a run with the same inputs
and seed reproduces every artifact byte for byte.

A dataset directory holds ``<id>.wav`` audio, ``<id>.notes.csv``
annotations and optionally ``<id>.vocal.wav`` stems; ``synth`` writes
corpora in this layout.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import rasterize
from .deform import (DeformationConfig, PatchExample, deform_track, diff_frames,
                     sample_negatives, write_records_jsonl)
from .io import (FormatError, read_f0_csv, read_json, read_notes_csv, read_wav,
                 save_ngmx, write_json, write_notes_csv)
from .metrics import FrameF0Sequence, oa, rpa
from .nn import Checkpoint, TrainConfig, build_error_detector, grad_check, train
from .nn.train import PatchSource
from .pipeline.detector import map_tracks, prepare_track
from .pipeline.downstream import DownstreamConfig, corpus_downstream, mask_scores
from .pipeline.scoring import FrameScoreTrack, cleanse, dataset_report, score_track
from .pipeline.synth import NoteGenConfig, read_corpus, synth_dataset, write_corpus
from .select import (SelectionError, build_training_set, likely_correct_frames,
                     pseudo_salience)
from .spectral import Waveform, cqt, frame_energy, stack_channels

log = logging.getLogger("notegate")

DEFAULTS = {
    "context": 40,
    "deform": DeformationConfig().to_dict(),
    "notes": NoteGenConfig().to_dict(),
    "select": {"profiles": ["train", "test"], "k": 11, "v": 200, "energy_quantile": 0.1},
    "train": TrainConfig().to_dict(),
    "training_set": {"balance": 1.0, "holdout_fraction": 0.2, "negatives_per_positive": 1.0,
                     "min_negatives": 8},
    "cleanse": {"threshold": 0.5},
    "downstream": DownstreamConfig().to_dict(),
}


PATH_ARGS = ("notes", "audio", "vocal", "dataset", "selection", "checkpoint", "filtered",
             "external", "corpus", "ref", "est", "out", "config")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random draw")
    common.add_argument("--threads", type=int, default=1, help="workers for per-track stages")
    common.add_argument("--config", help="JSON file overriding module defaults")
    common.add_argument("--out", required=True, help="output directory (or file for rasterize/cqt)")
    common.add_argument("--format", choices=("json", "text"), default="text",
                        help="summary format on standard output")

    parser = _Parser(prog="notegate", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"notegate {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("rasterize", parents=[common], help="note CSV to label matrix (NGMX)")
    p.add_argument("notes")
    frames = p.add_mutually_exclusive_group()
    frames.add_argument("--frames", type=int, help="number of frames")
    frames.add_argument("--audio", help="take the frame count from this WAV")

    p = sub.add_parser("cqt", parents=[common], help="audio to two-channel CQT stack (NGMX)")
    p.add_argument("audio")
    p.add_argument("--vocal", help="isolated vocal WAV for channel 1")

    p = sub.add_parser("deform", parents=[common], help="corrupt a note CSV")
    p.add_argument("notes")
    p.add_argument("--duration", type=float, help="track duration in seconds (allows tail inserts)")

    p = sub.add_parser("select", parents=[common], help="likely-correct frames per track")
    p.add_argument("dataset")

    p = sub.add_parser("train", parents=[common], help="train the error detector")
    p.add_argument("dataset")
    p.add_argument("--selection", help="selection.json from the select subcommand")

    p = sub.add_parser("score", parents=[common], help="per-frame error probabilities")
    p.add_argument("dataset")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("filter", parents=[common], help="filtered index and weights per track")
    p.add_argument("dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threshold", type=float, help="keep frames with score below this")

    p = sub.add_parser("report", parents=[common], help="dataset error-rate report")
    p.add_argument("filtered", help="output directory of the filter subcommand")
    p.add_argument("--external", help="CSV track_id,score to correlate with error rates")

    p = sub.add_parser("synth", parents=[common], help="synthetic planted-error corpus")
    p.add_argument("--tracks", type=int, required=True)

    p = sub.add_parser("eval", parents=[common],
                       help="f0 metrics for two CSVs, or the downstream experiment on a corpus")
    p.add_argument("corpus", nargs="?")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--checkpoint")
    src.add_argument("--oracle", action="store_true", help="use the planted masks as scores")
    p.add_argument("--ref", help="reference f0 CSV")
    p.add_argument("--est", help="estimated f0 CSV")

    p = sub.add_parser("grad-check", parents=[common], help="verify detector gradients")
    p.add_argument("--per-kind", type=int, default=500)
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=1)
    return parser


def resolve_config(path) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    if path is None:
        return cfg
    try:
        user = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    unknown = set(user) - set(cfg)
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    for key, value in user.items():
        if isinstance(cfg[key], dict):
            if not isinstance(value, dict):
                raise UsageError(f"config section {key!r} must be an object")
            extra = set(value) - set(cfg[key])
            if extra:
                raise UsageError(f"unknown keys in config section {key!r}: {sorted(extra)}")
            cfg[key].update(value)
        else:
            cfg[key] = value
    return cfg


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Collects inputs and artifacts of one invocation for its manifest."""

    def __init__(self, args, cfg):
        self.args = args
        self.cfg = cfg
        out = Path(args.out)
        self.file_out = args.command in ("rasterize", "cqt")
        self.dir = out.parent if self.file_out else out
        self.dir.mkdir(parents=True, exist_ok=True)
        self.inputs = []
        self.artifacts = []

    def path(self, name) -> Path:
        return self.dir / name

    def used(self, *paths):
        self.inputs += [Path(p) for p in paths if p is not None]

    def wrote(self, *paths):
        self.artifacts += [Path(p) for p in paths]

    def manifest(self) -> Path:
        """Write ``run_manifest.json``. Paths are reduced to file names so
        that runs in different directories produce the same manifest."""
        args = {k: (Path(v).name if k in PATH_ARGS and isinstance(v, str) else v)
                for k, v in sorted(vars(self.args).items())}
        inputs = {}
        for p in self.inputs:
            if p.is_file():
                inputs[p.name] = _sha256(p)
        doc = {
            "command": self.args.command,
            "version": __version__,
            "seed": self.args.seed,
            "arguments": args,
            "config": self.cfg,
            "inputs": dict(sorted(inputs.items())),
            "artifacts": {_rel(p, self.dir): _sha256(p) for p in sorted(set(self.artifacts))},
        }
        path = self.dir / "run_manifest.json"
        write_json(path, doc)
        return path


def _rel(p: Path, base: Path) -> str:
    try:
        return str(p.relative_to(base))
    except ValueError:
        return str(p)


def _emit(args, summary: dict, text: str):
    if args.format == "json":
        sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


# dataset helpers -----------------------------------------------------------

def _dataset_ids(directory) -> list[str]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"dataset directory {d} does not exist")
    ids = sorted(p.name[:-len(".notes.csv")] for p in d.glob("*.notes.csv"))
    if not ids:
        raise DataError(f"no <id>.notes.csv files in {d}")
    return ids


def _load_wave(path) -> Waveform:
    samples, sr = read_wav(path)
    return Waveform(samples, sr)


def _load_tracks(run: Run, directory, threads):
    d = Path(directory)
    ids = _dataset_ids(d)

    def load(tid):
        wav, notes, vocal = d / f"{tid}.wav", d / f"{tid}.notes.csv", d / f"{tid}.vocal.wav"
        return prepare_track(tid, _load_wave(wav), read_notes_csv(notes, tid),
                             _load_wave(vocal) if vocal.is_file() else None)

    for tid in ids:
        wav, vocal = d / f"{tid}.wav", d / f"{tid}.vocal.wav"
        if not wav.is_file():
            raise DataError(f"missing audio {wav}")
        run.used(wav, d / f"{tid}.notes.csv", vocal if vocal.is_file() else None)
    return map_tracks(load, ids, threads)


def _selection(track, cfg):
    s = dict(cfg["select"])
    profiles = s.pop("profiles")
    return likely_correct_frames(track.labels, pseudo_salience(track.X), frame_energy(track.X),
                                 profiles=tuple(profiles), n=cfg["context"], **s)


# subcommands ---------------------------------------------------------------

def cmd_rasterize(args, cfg, run):
    notes = read_notes_csv(args.notes)
    run.used(args.notes)
    if args.audio:
        run.used(args.audio)
        n_frames = cqt(_load_wave(args.audio)).shape[0]
    elif args.frames is not None:
        n_frames = args.frames
    else:
        n_frames = None
    Y = rasterize(notes, n_frames=n_frames)
    save_ngmx(args.out, Y.data)
    run.wrote(args.out)
    summary = {"frames": Y.n_frames, "bins": Y.n_bins, "active_cells": int(Y.data.sum()),
               "warnings": list(Y.warnings)}
    return summary, f"{args.out}: {Y.n_frames} frames x {Y.n_bins} bins"


def cmd_cqt(args, cfg, run):
    run.used(args.audio, args.vocal)
    mix = cqt(_load_wave(args.audio))
    stack = stack_channels(mix, None if args.vocal is None else cqt(_load_wave(args.vocal)))
    save_ngmx(args.out, stack.data)
    run.wrote(args.out)
    summary = {"frames": stack.n_frames, "bins": stack.n_bins,
               "vocal_is_proxy": stack.vocal_is_proxy}
    return summary, f"{args.out}: {stack.n_frames} frames, vocal proxy={stack.vocal_is_proxy}"


def cmd_deform(args, cfg, run):
    notes = read_notes_csv(args.notes)
    run.used(args.notes)
    dc = DeformationConfig.from_dict(cfg["deform"]).with_seed(args.seed)
    deformed, records = deform_track(notes, dc, duration=args.duration)
    out_notes = run.path(f"{notes.track_id}.notes.csv")
    out_rec = run.path(f"{notes.track_id}.records.jsonl")
    write_notes_csv(out_notes, deformed)
    write_records_jsonl(out_rec, records)
    run.wrote(out_notes, out_rec)
    T = max(rasterize(notes, warn=False).n_frames, rasterize(deformed, warn=False).n_frames)
    changed = diff_frames(rasterize(notes, n_frames=T, warn=False),
                          rasterize(deformed, n_frames=T, warn=False))
    kinds = {}
    for r in records:
        kinds[r.kind.value] = kinds.get(r.kind.value, 0) + 1
    summary = {"notes": len(notes), "records": len(records), "kinds": kinds,
               "changed_frames": int(len(changed))}
    return summary, f"{len(records)} deformations, {len(changed)} frames changed"


def cmd_select(args, cfg, run):
    tracks = _load_tracks(run, args.dataset, args.threads)
    picked = map_tracks(lambda t: _selection(t, cfg), tracks, args.threads)
    doc = {t.track_id: [int(i) for i in p] for t, p in zip(tracks, picked)}
    path = run.path("selection.json")
    write_json(path, doc)
    run.wrote(path)
    total = sum(len(v) for v in doc.values())
    return {"tracks": len(doc), "selected_frames": total}, f"{total} frames over {len(doc)} tracks"


def cmd_train(args, cfg, run):
    tracks = _load_tracks(run, args.dataset, args.threads)
    n = cfg["context"]
    if args.selection:
        run.used(args.selection)
        sel = read_json(args.selection)
        missing = {t.track_id for t in tracks} - set(sel)
        if missing:
            raise DataError(f"selection lacks tracks {sorted(missing)}")
        frames = [np.asarray(sel[t.track_id], dtype=int) for t in tracks]
    else:
        frames = map_tracks(lambda t: _selection(t, cfg), tracks, args.threads)
    ts = cfg["training_set"]
    dc = DeformationConfig.from_dict(cfg["deform"]).with_seed(args.seed)

    def negatives(item):
        track, pos = item
        want = max(int(round(ts["negatives_per_positive"] * len(pos))), ts["min_negatives"])
        return sample_negatives(track.X, track.labels, track.notes, dc.for_track(track.track_id),
                                want, n=n)[0]

    positives = [PatchExample(t.track_id, int(i), 0, t.labels.data)
                 for t, f in zip(tracks, frames) for i in f]
    negs = [e for part in map_tracks(negatives, list(zip(tracks, frames)), args.threads)
            for e in part]
    tc = TrainConfig(**{**cfg["train"], "seed": args.seed})
    train_split, holdout = build_training_set(positives, negs, ts["balance"], args.seed,
                                              ts["holdout_fraction"])
    ckpt, hist = train(train_split, holdout, PatchSource({t.track_id: t.X for t in tracks}, n), tc)
    path, hpath = run.path("detector.ngck"), run.path("history.json")
    ckpt.save(path)
    write_json(hpath, {**hist.to_dict(), "n_positive_candidates": len(positives),
                       "n_negative_candidates": len(negs), "n_train": len(train_split),
                       "n_holdout": len(holdout)})
    run.wrote(path, hpath)
    best = hist.epochs[hist.best_epoch]
    summary = {"best_epoch": hist.best_epoch, "holdout_accuracy": best["holdout_accuracy"],
               "holdout_balanced_accuracy": best["holdout_balanced_accuracy"],
               "n_train": len(train_split), "n_holdout": len(holdout)}
    return summary, (f"best epoch {hist.best_epoch}: holdout accuracy "
                     f"{best['holdout_accuracy']:.4f} ({len(train_split)} train, "
                     f"{len(holdout)} holdout)")


def _load_checkpoint(run, path):
    run.used(path)
    try:
        return Checkpoint.load(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc


def _score_all(args, cfg, run):
    ckpt = _load_checkpoint(run, args.checkpoint)
    tracks = _load_tracks(run, args.dataset, args.threads)
    net = ckpt.to_network()
    # layers cache activations, so each worker needs its own network
    scores = map_tracks(lambda t: score_track(ckpt if args.threads > 1 else net, t.X, t.labels,
                                              cfg["context"], t.track_id), tracks, args.threads)
    for s in scores:
        path = run.path(f"{s.track_id}.scores.ngmx")
        save_ngmx(path, s.scores.astype(np.float32))
        run.wrote(path)
    return scores


def cmd_score(args, cfg, run):
    scores = _score_all(args, cfg, run)
    rates = {s.track_id: float(np.mean(s.scores >= 0.5)) for s in scores}
    return ({"tracks": len(scores), "error_rate": rates},
            "\n".join(f"{k}: {v:.4f}" for k, v in rates.items()))


def cmd_filter(args, cfg, run):
    thr = args.threshold if args.threshold is not None else cfg["cleanse"]["threshold"]
    if not 0 < thr < 1:
        raise UsageError(f"threshold must be in (0, 1), got {thr}")
    cfg["cleanse"]["threshold"] = thr
    scores = _score_all(args, cfg, run)
    # cleanse the stored float32 scores so the outputs match the score files
    results = [cleanse(FrameScoreTrack(s.track_id, s.scores.astype(np.float32)), thr)
               for s in scores]
    summary = {}
    for r in results:
        idx, w = run.path(f"{r.track_id}.filtered.json"), run.path(f"{r.track_id}.weights.ngmx")
        write_json(idx, [int(i) for i in r.filtered_index])
        save_ngmx(w, r.weights.astype(np.float32))
        run.wrote(idx, w)
        summary[r.track_id] = {"error_rate": r.error_rate, "n_frames": r.n_frames,
                               "n_filtered": int(len(r.filtered_index)), "threshold": thr}
    path = run.path("cleanse.json")
    write_json(path, summary)
    run.wrote(path)
    kept = sum(v["n_filtered"] for v in summary.values())
    total = sum(v["n_frames"] for v in summary.values())
    return ({"tracks": len(summary), "kept_frames": kept, "total_frames": total},
            f"kept {kept} of {total} frames over {len(summary)} tracks")


def _read_external(path):
    scores = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["track_id", "score"]:
            raise DataError(f"{path}: expected header track_id,score")
        for line in fh:
            if line.strip():
                tid, value = line.strip().split(",")[:2]
                scores[tid] = float(value)
    return scores


def cmd_report(args, cfg, run):
    src = Path(args.filtered) / "cleanse.json"
    if not src.is_file():
        raise DataError(f"{src} not found; run the filter subcommand first")
    run.used(src)
    summary = read_json(src)

    class _R:
        def __init__(self, tid, rate):
            self.track_id, self.error_rate = tid, rate

    results = [_R(tid, v["error_rate"]) for tid, v in sorted(summary.items())]
    external = None
    if args.external:
        run.used(args.external)
        ext = _read_external(args.external)
        missing = [r.track_id for r in results if r.track_id not in ext]
        if missing:
            raise DataError(f"external scores lack tracks {missing}")
        external = [ext[r.track_id] for r in results]
    rep = dataset_report(results, external)
    path = run.path("report.json")
    write_json(path, rep.to_dict())
    run.wrote(path)
    return rep.to_dict(), rep.to_text()


def cmd_synth(args, cfg, run):
    if args.tracks <= 0:
        raise UsageError("--tracks must be positive")
    corpus = synth_dataset(args.tracks, NoteGenConfig.from_dict(cfg["notes"]),
                           DeformationConfig.from_dict(cfg["deform"]), seed=args.seed)
    run.wrote(*write_corpus(corpus, run.dir))
    n_err = sum(len(t.mask) for t in corpus.tracks)
    n_all = sum(t.n_frames for t in corpus.tracks)
    return ({"tracks": len(corpus), "planted_error_frames": n_err, "frames": n_all},
            f"{len(corpus)} tracks, {n_err} of {n_all} frames carry planted errors")


def cmd_eval(args, cfg, run):
    if args.ref or args.est:
        if not (args.ref and args.est) or args.corpus:
            raise UsageError("f0 evaluation needs both --ref and --est and no corpus")
        run.used(args.ref, args.est)
        _, rf, rv = read_f0_csv(args.ref)
        _, ef, ev = read_f0_csv(args.est)
        ref, est = FrameF0Sequence(rf, rv), FrameF0Sequence(ef, ev)
        tol = cfg["downstream"]["tol_cents"]
        doc = {"rpa": rpa(ref, est, tol), "oa": oa(ref, est, tol), "frames": len(ref)}
        path = run.path("metrics.json")
        write_json(path, doc)
        run.wrote(path)
        r = "n/a" if doc["rpa"] is None else f"{doc['rpa']:.4f}"
        return doc, f"RPA {r}  OA {doc['oa']:.4f}"
    if not args.corpus:
        raise UsageError("eval needs a corpus directory or --ref/--est")
    if not (args.checkpoint or args.oracle):
        raise UsageError("downstream evaluation needs --checkpoint or --oracle")
    corpus_dir = Path(args.corpus)
    if not (corpus_dir / "corpus.json").is_file():
        raise DataError(f"{corpus_dir} is not a synthetic corpus (no corpus.json)")
    corpus = read_corpus(corpus_dir)
    for t in corpus.tracks:
        run.used(corpus_dir / f"{t.track_id}.wav", corpus_dir / f"{t.track_id}.notes.csv",
                 corpus_dir / f"{t.track_id}.clean.csv")
    dcfg = DownstreamConfig(**{**cfg["downstream"], "seed": args.seed})
    if args.oracle:
        rep = corpus_downstream(corpus, cfg=dcfg, scores=mask_scores(corpus), threads=args.threads)
    else:
        rep = corpus_downstream(corpus, _load_checkpoint(run, args.checkpoint), dcfg,
                                threads=args.threads)
    path = run.path("downstream.json")
    write_json(path, rep.to_dict())
    run.wrote(path)
    return rep.to_dict(), rep.to_text()


def cmd_grad_check(args, cfg, run):
    rng = np.random.default_rng(args.seed)
    net = build_error_detector(seed=args.seed)
    x = rng.random((args.batch, 72, 81, 3))
    z = rng.integers(0, 2, args.batch)
    mode = "eval" if args.batch == 1 else "check"
    res = grad_check(net, x, z, step=args.step, n_per_kind=args.per_kind, seed=args.seed,
                     mode=mode)
    doc = {**res.to_dict(), "mode": mode, "tolerance": args.tolerance,
           "passed": res.max_rel_error < args.tolerance}
    path = run.path("gradcheck.json")
    write_json(path, doc)
    run.wrote(path)
    text = (f"max relative error {res.max_rel_error:.3e} over {res.n_checked} parameters "
            f"({'pass' if doc['passed'] else 'FAIL'})")
    if not doc["passed"]:
        raise DataError(text)
    return doc, text


COMMANDS = {"rasterize": cmd_rasterize, "cqt": cmd_cqt, "deform": cmd_deform,
            "select": cmd_select, "train": cmd_train, "score": cmd_score, "filter": cmd_filter,
            "report": cmd_report, "synth": cmd_synth, "eval": cmd_eval,
            "grad-check": cmd_grad_check}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("NOTEGATE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        cfg = resolve_config(args.config)
        run = Run(args, cfg)
        if args.config:
            run.used(args.config)
        summary, text = COMMANDS[args.command](args, cfg, run)
        run.manifest()
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"notegate {args.command}: error: {exc}\n")
        return 1
    except (DataError, FormatError, SelectionError, ValueError, FloatingPointError,
            OSError) as exc:
        sys.stderr.write(f"notegate {args.command}: {exc}\n")
        return 2
    _emit(args, summary, text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
