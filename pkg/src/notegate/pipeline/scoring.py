"""Dense per-frame error scores, cleansing and dataset-level reports."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import LabelMatrix
from ..nn import Checkpoint, Network
from ..nn.train import predict

ERROR_THRESHOLD = 0.5


@dataclass(frozen=True)
class FrameScoreTrack:
    """Error probability ``g`` for every frame of one track."""

    track_id: str
    scores: np.ndarray
    threshold: float = ERROR_THRESHOLD

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError("scores must be a 1-D sequence")
        if not np.all(np.isfinite(s)) or np.any((s < 0) | (s > 1)):
            raise ValueError("scores must be finite and in [0, 1]")
        object.__setattr__(self, "scores", s)

    def __len__(self):
        return len(self.scores)


@dataclass(frozen=True)
class CleanseResult:
    track_id: str
    filtered_index: np.ndarray
    weights: np.ndarray
    error_rate: float
    threshold: float

    @property
    def n_frames(self) -> int:
        return len(self.weights)

    @property
    def flagged_index(self) -> np.ndarray:
        keep = np.zeros(self.n_frames, dtype=bool)
        keep[self.filtered_index] = True
        return np.flatnonzero(~keep)


def _frame_inputs(X, Y, n, start, stop):
    """Detector inputs for centers ``start..stop-1`` from zero-padded arrays."""
    w = 2 * n + 1
    win = np.lib.stride_tricks.sliding_window_view
    xs = win(X[start:stop + 2 * n], w, axis=0)  # (B, bins, ch, w)
    ys = win(Y[start:stop + 2 * n], w, axis=0)  # (B, bins, w)
    return np.concatenate([xs.transpose(0, 1, 3, 2), ys[..., None]], axis=3)


def score_track(checkpoint: Checkpoint | Network, X, Y: LabelMatrix | np.ndarray, n: int = 40,
                track_id: str = "", batch_size: int = 256) -> FrameScoreTrack:
    """Score every frame with the detector on zero-padded patches.

    Frame ``i`` is scored from the ``2n+1`` frames centered on it; frames
    beyond either end of the track are zeros in both audio and labels.
    """
    net = checkpoint if isinstance(checkpoint, Network) else checkpoint.to_network()
    x = np.asarray(getattr(X, "data", X), dtype=np.float32)
    y = np.asarray(getattr(Y, "data", Y), dtype=np.float32)
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"spectrogram has {x.shape[0]} frames, labels have {y.shape[0]}")
    if n <= 0:
        raise ValueError("context n must be positive")
    T = x.shape[0]
    xp = np.pad(x, ((n, n), (0, 0), (0, 0)))
    yp = np.pad(y, ((n, n), (0, 0)))
    out = []
    for start in range(0, T, batch_size):
        stop = min(start + batch_size, T)
        out.append(predict(net, _frame_inputs(xp, yp, n, start, stop), batch_size))
    scores = np.clip(np.concatenate(out) if out else np.zeros(0), 0.0, 1.0)
    return FrameScoreTrack(track_id, scores)


def cleanse(scores: FrameScoreTrack, threshold: float = ERROR_THRESHOLD) -> CleanseResult:
    """Keep frames with ``g < threshold``; weight every frame by ``1 - g``.

    ``error_rate`` counts frames with ``g >= 0.5`` irrespective of
    ``threshold``.
    """
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    g = scores.scores
    rate = float(np.mean(g >= ERROR_THRESHOLD)) if len(g) else 0.0
    return CleanseResult(scores.track_id, np.flatnonzero(g < threshold), 1.0 - g, rate,
                         threshold)


@dataclass(frozen=True)
class DatasetReport:
    """Per-track error rates and their summary.

    ``histogram`` has 20 bins of 5 percentage points over [0, 100]; the
    last bin is closed so a rate of 1.0 is counted.
    """

    track_ids: tuple
    per_track: tuple
    mean: float
    std: float
    histogram: tuple
    pearson_r: float | None = None
    high_error_tracks: tuple = ()

    def to_dict(self):
        return {"per_track": [{"track_id": t, "error_rate": r}
                              for t, r in zip(self.track_ids, self.per_track)],
                "mean": self.mean, "std": self.std,
                "histogram": {"bin_width_pct": 5, "edges_pct": list(range(0, 105, 5)),
                              "counts": list(self.histogram)},
                "pearson_r": self.pearson_r,
                "high_error_tracks": list(self.high_error_tracks)}

    def to_text(self):
        lines = [f"tracks: {len(self.per_track)}", f"mean error rate: {self.mean:.4f}",
                 f"std error rate: {self.std:.4f}"]
        if self.pearson_r is not None:
            lines.append(f"pearson r: {self.pearson_r:.4f}")
        lines.append("histogram (% error: tracks)")
        for k, c in enumerate(self.histogram):
            lines.append(f"  {5 * k:3d}-{5 * k + 5:3d}: {c}")
        if self.high_error_tracks:
            lines.append("high-error tracks: " + ", ".join(self.high_error_tracks))
        return "\n".join(lines) + "\n"


def pearson_r(a, b) -> float | None:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da, db = a - a.mean(), b - b.mean()
    den = math.sqrt(float(np.sum(da * da)) * float(np.sum(db * db)))
    if den == 0:
        return None
    return float(np.sum(da * db) / den)


def dataset_report(results, external_scores=None, high_error: float = 0.7) -> DatasetReport:
    """Aggregate cleansing results over tracks.

    ``std`` is the population standard deviation. ``pearson_r`` is the
    correlation of per-track error rates with ``external_scores`` (None
    when not given or when either side is constant). Tracks with an error
    rate above ``high_error`` are listed for inspection.
    """
    results = list(results)
    if not results:
        raise ValueError("dataset_report needs at least one track")
    rates = np.array([r.error_rate for r in results], dtype=np.float64)
    r = None
    if external_scores is not None:
        ext = np.asarray(external_scores, dtype=np.float64)
        if ext.shape != rates.shape:
            raise ValueError(f"{len(ext)} external scores for {len(rates)} tracks")
        r = pearson_r(rates, ext)
    idx = np.minimum(np.floor(rates * 100 / 5 + 1e-9).astype(int), 19)
    hist = np.bincount(idx, minlength=20)
    ids = tuple(res.track_id for res in results)
    return DatasetReport(ids, tuple(float(x) for x in rates), float(rates.mean()),
                         float(rates.std()), tuple(int(c) for c in hist), r,
                         tuple(t for t, x in zip(ids, rates) if x > high_error))
