"""Selection of likely-correct frames by label/salience agreement.

Local agreement is the salience value under the annotated bin of a frame
(zero on unannotated frames); patch agreement is its centered moving
average. Frames where both are high are taken as correct examples, along
with quiet frames far from any annotation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import LabelMatrix
from .deform import PatchExample


class SelectionError(ValueError):
    """A selection stage produced nothing to train on."""


@dataclass(frozen=True)
class SalienceMatrix:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise ValueError(f"salience must be 2-D, got shape {data.shape}")
        if data.size and (data.min() < 0 or data.max() > 1):
            raise ValueError("salience values must lie in [0, 1]")
        object.__setattr__(self, "data", data)


@dataclass(frozen=True)
class SelectionThresholds:
    """Agreement bounds ``kl_low < kappa_l <= kl_high`` and likewise for kappa_p."""

    profile: str = "train"
    kl_low: float = 0.9
    kl_high: float = 0.999
    kp_low: float = 0.7
    kp_high: float = 0.85
    k: int = 11
    v: int = 200
    energy_quantile: float = 0.1

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"moving-average width k must be odd and >= 1, got {self.k}")
        if self.v < 1:
            raise ValueError("silence window v must be >= 1")
        if not 0 <= self.energy_quantile <= 1:
            raise ValueError("energy_quantile must be in [0, 1]")

    @classmethod
    def train(cls, **kw) -> "SelectionThresholds":
        return cls(profile="train", kl_low=0.9, kl_high=0.999, kp_low=0.7, kp_high=0.85, **kw)

    @classmethod
    def test(cls, **kw) -> "SelectionThresholds":
        return cls(profile="test", kl_low=0.999, kl_high=np.inf, kp_low=0.85, kp_high=np.inf, **kw)

    @classmethod
    def named(cls, profile: str, **kw) -> "SelectionThresholds":
        if profile not in ("train", "test"):
            raise ValueError(f"unknown selection profile {profile!r}")
        return getattr(cls, profile)(**kw)


def local_agreement(Y_row, s_row) -> float:
    """``max_j Y_j * s_j`` for one frame."""
    y = np.asarray(Y_row, dtype=np.float64)
    s = np.asarray(s_row, dtype=np.float64)
    if y.shape != s.shape:
        raise ValueError(f"label row and salience row lengths differ: {y.shape} vs {s.shape}")
    if y.size == 0:
        return 0.0
    return float(np.max(y * s))


def local_agreement_track(Y: LabelMatrix | np.ndarray, s: SalienceMatrix | np.ndarray) -> np.ndarray:
    y = np.asarray(getattr(Y, "data", Y), dtype=np.float64)
    sal = np.asarray(getattr(s, "data", s), dtype=np.float64)
    if y.shape != sal.shape:
        raise ValueError(f"label matrix {y.shape} and salience {sal.shape} shapes differ")
    return np.max(y * sal, axis=1)


def patch_agreement(kappa_l, k: int = 11) -> np.ndarray:
    """Centered ``k``-point moving average; edge windows are truncated."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"window k must be odd and >= 1, got {k}")
    x = np.asarray(kappa_l, dtype=np.float64)
    h = k // 2
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(len(x))
    lo = np.maximum(idx - h, 0)
    hi = np.minimum(idx + h + 1, len(x))
    return (c[hi] - c[lo]) / (hi - lo)


def _interior(T: int, n: int) -> np.ndarray:
    return np.arange(n, max(T - n, n))


def select_likely_correct(Y: LabelMatrix, s: SalienceMatrix | np.ndarray,
                          th: SelectionThresholds, n: int = 40) -> np.ndarray:
    """Interior frames whose local and patch agreement fall inside ``th``."""
    kl = local_agreement_track(Y, s)
    kp = patch_agreement(kl, th.k)
    ok = (kl > th.kl_low) & (kl <= th.kl_high) & (kp > th.kp_low) & (kp <= th.kp_high)
    idx = _interior(len(kl), n)
    return idx[ok[idx]]


def select_silence_positives(Y: LabelMatrix, energy, th: SelectionThresholds,
                             n: int = 40) -> np.ndarray:
    """Interior frames with no annotation within ``v/2`` frames either side
    and energy at or below the track's ``energy_quantile`` quantile.

    Only frames whose whole ``v``-window lies inside the track qualify.
    """
    y = np.asarray(getattr(Y, "data", Y))
    energy = np.asarray(energy, dtype=np.float64)
    T = y.shape[0]
    if energy.shape != (T,):
        raise ValueError(f"energy length {energy.shape} does not match {T} frames")
    h = th.v // 2
    if T < th.v or T < 2 * h + 1:
        warnings.warn(f"track of {T} frames is shorter than the silence window v={th.v}",
                      RuntimeWarning, stacklevel=2)
        return np.array([], dtype=int)
    active = np.concatenate([[0], np.cumsum(y.any(axis=1))])
    idx = np.arange(max(h, n), min(T - h, T - n))
    if idx.size == 0:
        return idx
    quiet = active[idx + h + 1] - active[idx - h] == 0
    low = energy[idx] <= np.quantile(energy, th.energy_quantile)
    return idx[quiet & low]


def pseudo_salience(X) -> SalienceMatrix:
    """Vocal channel, max-normalized per frame (all-zero frames stay zero)."""
    data = np.asarray(getattr(X, "data", X), dtype=np.float64)
    vocal = data[:, :, 1] if data.ndim == 3 else data
    peak = vocal.max(axis=1, keepdims=True)
    out = np.divide(vocal, peak, out=np.zeros_like(vocal), where=peak > 0)
    return SalienceMatrix(np.clip(out, 0.0, 1.0))


def likely_correct_frames(Y: LabelMatrix, s, energy, profiles=("train", "test"),
                          n: int = 40, **threshold_kw) -> np.ndarray:
    """Union of agreement selections over ``profiles`` and silence positives."""
    picked = [select_likely_correct(Y, s, SelectionThresholds.named(p, **threshold_kw), n)
              for p in profiles]
    picked.append(select_silence_positives(Y, energy, SelectionThresholds(**threshold_kw), n))
    return np.unique(np.concatenate(picked)).astype(int)


def _balance(pos, neg, ratio, rng):
    """Down-sample the majority class to ``len(pos) : len(neg) = ratio``."""
    n_pos, n_neg = len(pos), len(neg)
    if n_pos > ratio * n_neg:
        n_pos = int(round(ratio * n_neg))
    else:
        n_neg = int(round(n_pos / ratio))
    keep_p = np.sort(rng.choice(len(pos), size=n_pos, replace=False))
    keep_n = np.sort(rng.choice(len(neg), size=n_neg, replace=False))
    return [pos[i] for i in keep_p] + [neg[i] for i in keep_n]


def build_training_set(positives: list[PatchExample], negatives: list[PatchExample],
                       balance: float = 1.0, seed: int = 0, holdout_fraction: float = 0.2):
    """Split examples by track into train/holdout and class-balance each split.

    The majority class is down-sampled so that positives : negatives equals
    ``balance`` within each split. Returns ``(train, holdout)`` lists.
    """
    if not positives:
        raise SelectionError("no positive examples: likely-correct selection (agreement and "
                             "silence) selected no frame")
    if not negatives:
        raise SelectionError("no negative examples: negative sampling (deformation) produced no "
                             "differing interior frame")
    if balance <= 0:
        raise ValueError("balance ratio must be positive")
    rng = np.random.default_rng(seed)
    tracks = sorted({e.track_id for e in positives} | {e.track_id for e in negatives})
    order = [tracks[i] for i in rng.permutation(len(tracks))]
    n_hold = 0
    if len(tracks) > 1:
        n_hold = min(max(1, int(round(holdout_fraction * len(tracks)))), len(tracks) - 1)
    hold = set(order[:n_hold])

    splits = []
    for in_hold in (False, True):
        pos = [e for e in positives if (e.track_id in hold) == in_hold]
        neg = [e for e in negatives if (e.track_id in hold) == in_hold]
        if in_hold and not hold:
            splits.append([])
            continue
        if not pos or not neg:
            stage = "likely-correct selection" if not pos else "negative sampling"
            which = "holdout" if in_hold else "train"
            raise SelectionError(f"{which} split has no {'positive' if not pos else 'negative'} "
                                 f"examples after {stage}")
        splits.append(_balance(pos, neg, balance, rng))
    return splits[0], splits[1]
