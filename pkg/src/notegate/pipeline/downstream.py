"""Does cleansing the training labels help a pitch tracker?

A small frame-level pitch classifier is trained three times on the same
tracks: on all frames, on the frames the detector keeps, and on all frames
with loss weight ``1 - g``. Each model is scored on held-out tracks with
clean references.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import FrequencyGrid, LabelMatrix, TimeGrid
from ..metrics import FrameF0Sequence, oa, paired_t, rpa
from ..nn import Adam, build_pitch_classifier
from ..nn.model import softmax, softmax_ce
from .scoring import ERROR_THRESHOLD

log = logging.getLogger(__name__)

CONDITIONS = ("all", "filtered", "weighted")


@dataclass(frozen=True)
class DownstreamConfig:
    test_fraction: float = 0.25
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 1e-3
    context: int = 4
    dropout: float = 0.1
    seed: int = 0
    threshold: float = ERROR_THRESHOLD
    tol_cents: float = 50.0

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must be in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.context < 0:
            raise ValueError("epochs and batch_size must be >= 1 and context >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class DownstreamTrack:
    """Spectrogram stack, training labels and (for test tracks) reference f0."""

    track_id: str
    X: np.ndarray
    labels: LabelMatrix
    ref_f0: np.ndarray | None = None


def frame_classes(labels: LabelMatrix | np.ndarray) -> np.ndarray:
    """Class per frame: the lowest active bin, or ``n_bins`` when unvoiced."""
    y = np.asarray(getattr(labels, "data", labels))
    cls = np.argmax(y, axis=1)
    cls[~y.any(axis=1)] = y.shape[1]
    return cls


def reference_f0(notes, n_frames: int, tg: TimeGrid | None = None,
                 fg: FrequencyGrid | None = None) -> np.ndarray:
    """Per-frame reference f0 from note annotations (0 where no on-grid note)."""
    fg = fg or FrequencyGrid()
    t = (tg or TimeGrid()).timestamps(n_frames)
    f0 = np.zeros(n_frames)
    for note in notes:
        if fg.bin_of(note.freq_hz) is not None:
            f0[(t >= note.start_sec) & (t <= note.end_sec)] = note.freq_hz
    return f0


def context_inputs(X, context: int) -> np.ndarray:
    """``(T, bins, 2c+1, channels)`` frames with zero padding at the ends."""
    x = np.asarray(getattr(X, "data", X), dtype=np.float32)
    xp = np.pad(x, ((context, context), (0, 0), (0, 0)))
    w = np.lib.stride_tricks.sliding_window_view(xp, 2 * context + 1, axis=0)
    return np.ascontiguousarray(w.transpose(0, 1, 3, 2))


def _fit_classifier(x, classes, weights, cfg: DownstreamConfig, n_bins, channels):
    net = build_pitch_classifier(seed=cfg.seed, n_bins=n_bins, context=cfg.context,
                                 channels=channels, dropout=cfg.dropout)
    opt = Adam(net.params, cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            b = order[s:s + cfg.batch_size]
            logits = net.forward(x[b], "train", rng)
            loss, g, _ = softmax_ce(logits, classes[b], None if weights is None else weights[b])
            if not np.isfinite(loss):
                raise FloatingPointError("non-finite classifier loss")
            opt.step(net.params, net.backward(g))
            total += loss * len(b)
        losses.append(total / len(x))
    return net, losses


def _predict(net, x, fg: FrequencyGrid, batch_size=512) -> FrameF0Sequence:
    p = np.concatenate([softmax(net.forward(x[s:s + batch_size], "eval").astype(np.float64))
                        for s in range(0, len(x), batch_size)])
    n_bins = p.shape[1] - 1
    f0 = fg.frequencies[np.argmax(p[:, :n_bins], axis=1)]
    return FrameF0Sequence(f0, np.clip(1.0 - p[:, n_bins], 0.0, 1.0))


@dataclass
class ConditionResult:
    name: str
    status: str = "ok"
    error: str = ""
    n_frames: int = 0
    losses: list = field(default_factory=list)
    rpa: dict = field(default_factory=dict)
    oa: dict = field(default_factory=dict)

    def mean(self, metric):
        vals = [v for v in getattr(self, metric).values() if v is not None]
        return float(np.mean(vals)) if vals else None

    def to_dict(self):
        return {"status": self.status, "error": self.error, "n_frames": self.n_frames,
                "losses": self.losses, "rpa": self.rpa, "oa": self.oa,
                "mean_rpa": self.mean("rpa"), "mean_oa": self.mean("oa")}


@dataclass
class DownstreamReport:
    conditions: dict
    tests: dict
    config: dict

    def to_dict(self):
        return {"conditions": {k: v.to_dict() for k, v in self.conditions.items()},
                "tests": self.tests, "config": self.config}

    def to_text(self):
        lines = [f"{'condition':<10} {'frames':>7} {'RPA':>7} {'OA':>7}  status"]
        for k, c in self.conditions.items():
            r, o = c.mean("rpa"), c.mean("oa")
            lines.append(f"{k:<10} {c.n_frames:>7d} {_pct(r):>7} {_pct(o):>7}  {c.status}")
        for k, t in self.tests.items():
            for m, res in t.items():
                t = "n/a" if res["t"] is None else f"{res['t']:.3f}"
                p = "n/a" if res["p"] is None else f"{res['p']:.3g}"
                lines.append(f"paired t {k} {m}: t={t} p={p} {res['note']}".rstrip())
        return "\n".join(lines) + "\n"


def _pct(v):
    return "n/a" if v is None else f"{100 * v:.2f}"


def downstream_experiment(train_tracks, test_tracks, scores: dict,
                          cfg: DownstreamConfig = DownstreamConfig(),
                          fg: FrequencyGrid | None = None) -> DownstreamReport:
    """Train and evaluate the pitch classifier under each condition.

    ``scores`` maps every training track id to its per-frame error
    probabilities ``g``. Test tracks need ``ref_f0``. Every condition uses
    the same seed, so initialisation and shuffling match; when no frame is
    filtered out the ``all`` and ``filtered`` runs are identical.
    """
    fg = fg or FrequencyGrid()
    train_tracks, test_tracks = list(train_tracks), list(test_tracks)
    if not train_tracks or not test_tracks:
        raise ValueError("downstream_experiment needs training and test tracks")
    xs, cs, gs = [], [], []
    for t in train_tracks:
        g = np.asarray(scores[t.track_id], dtype=np.float64)
        if len(g) != t.labels.n_frames:
            raise ValueError(f"{t.track_id}: {len(g)} scores for {t.labels.n_frames} frames")
        xs.append(context_inputs(t.X, cfg.context))
        cs.append(frame_classes(t.labels))
        gs.append(g)
    x, classes, g = np.concatenate(xs), np.concatenate(cs), np.concatenate(gs)
    n_bins, channels = x.shape[1], x.shape[3]
    keep = g < cfg.threshold
    plans = {"all": (x, classes, None),
             "filtered": (x[keep], classes[keep], None),
             "weighted": (x, classes, 1.0 - g)}

    test_x = {t.track_id: context_inputs(t.X, cfg.context) for t in test_tracks}
    refs = {t.track_id: FrameF0Sequence.from_f0(t.ref_f0) for t in test_tracks}
    results = {}
    for name in CONDITIONS:
        cx, cc, cw = plans[name]
        res = ConditionResult(name, n_frames=int(len(cx)))
        try:
            if len(cx) == 0:
                raise ValueError("no training frames left after filtering")
            net, res.losses = _fit_classifier(cx, cc, cw, cfg, n_bins, channels)
            for tid, tx in test_x.items():
                est = _predict(net, tx, fg)
                res.rpa[tid] = rpa(refs[tid], est, cfg.tol_cents)
                res.oa[tid] = oa(refs[tid], est, cfg.tol_cents)
        except (FloatingPointError, ValueError) as exc:
            res.status, res.error = "failed", str(exc)
            log.warning("downstream condition %s failed: %s", name, exc)
        results[name] = res

    tests = {}
    for a, b in (("filtered", "all"), ("weighted", "all"), ("weighted", "filtered")):
        ra, rb = results[a], results[b]
        if ra.status != "ok" or rb.status != "ok":
            continue
        entry = {}
        for metric in ("rpa", "oa"):
            pairs = [(getattr(ra, metric)[t], getattr(rb, metric)[t]) for t in test_x
                     if getattr(ra, metric)[t] is not None]
            if len(pairs) >= 2:
                entry[metric] = paired_t(pairs).to_dict()
        tests[f"{a}-vs-{b}"] = entry
    return DownstreamReport(results, tests, cfg.to_dict())


def split_tracks(track_ids, test_fraction: float, seed: int):
    """Deterministic track-level split: ``(train_ids, test_ids)`` in input order."""
    ids = list(track_ids)
    n_test = min(max(1, int(round(test_fraction * len(ids)))), len(ids) - 1)
    test = set(np.random.default_rng(seed).permutation(len(ids))[:n_test].tolist())
    return ([t for k, t in enumerate(ids) if k not in test],
            [t for k, t in enumerate(ids) if k in test])


def corpus_downstream(corpus, checkpoint=None, cfg: DownstreamConfig = DownstreamConfig(),
                      scores: dict | None = None, threads: int = 1) -> DownstreamReport:
    """Run :func:`downstream_experiment` on a synthetic corpus.

    Tracks are split by :func:`split_tracks`. Training tracks carry their
    corrupted labels; test tracks are scored against their clean notes.
    Training-track scores come from ``checkpoint`` unless ``scores`` is
    given (for instance the planted masks as an oracle).
    """
    from .detector import map_tracks, prepare_track
    from .scoring import score_track

    if checkpoint is None and scores is None:
        raise ValueError("corpus_downstream needs a checkpoint or precomputed scores")
    by_id = {t.track_id: t for t in corpus.tracks}
    train_ids, test_ids = split_tracks(list(by_id), cfg.test_fraction, cfg.seed)
    prepared = dict(zip(by_id, map_tracks(
        lambda t: prepare_track(t.track_id, t.waveform, t.corrupted), corpus.tracks, threads)))
    train = [DownstreamTrack(i, prepared[i].X, prepared[i].labels) for i in train_ids]
    test = [DownstreamTrack(i, prepared[i].X, prepared[i].labels,
                            reference_f0(by_id[i].clean, by_id[i].n_frames)) for i in test_ids]
    if scores is None:
        scores = dict(zip(train_ids, map_tracks(
            lambda i: score_track(checkpoint, prepared[i].X, prepared[i].labels, track_id=i).scores,
            train_ids, threads)))
    return downstream_experiment(train, test, scores, cfg)


def mask_scores(corpus) -> dict:
    """Planted error masks as 0/1 scores, the oracle detector."""
    out = {}
    for t in corpus.tracks:
        g = np.zeros(t.n_frames)
        g[np.asarray(t.mask, dtype=int)] = 1.0
        out[t.track_id] = g
    return out
