"""Frame-level pitch metrics and paired significance testing.

Frequencies are compared in cents, ``1200 * log2(est / ref)``; a frame's
pitch is correct when the absolute deviation is at most ``tol_cents``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class FrameF0Sequence:
    """Per-frame fundamental frequency (0 = unvoiced) and voicing in [0, 1]."""

    f0_hz: np.ndarray
    voicing: np.ndarray

    def __post_init__(self):
        f0 = np.asarray(self.f0_hz, dtype=np.float64)
        v = np.asarray(self.voicing, dtype=np.float64)
        if f0.shape != v.shape or f0.ndim != 1:
            raise ValueError(f"f0 and voicing must be 1-D and equal length, got {f0.shape} and {v.shape}")
        if np.any((v < 0) | (v > 1)):
            raise ValueError("voicing must lie in [0, 1]")
        object.__setattr__(self, "f0_hz", f0)
        object.__setattr__(self, "voicing", v)

    @classmethod
    def from_f0(cls, f0_hz) -> "FrameF0Sequence":
        """Binary voicing from ``f0 > 0``."""
        f0 = np.asarray(f0_hz, dtype=np.float64)
        return cls(f0, (f0 > 0).astype(np.float64))

    def __len__(self):
        return len(self.f0_hz)


def _check(ref: FrameF0Sequence, est: FrameF0Sequence):
    if len(ref) != len(est):
        raise ValueError(f"reference has {len(ref)} frames, estimate has {len(est)}")
    if not np.all((ref.voicing == 0) | (ref.voicing == 1)):
        raise ValueError("reference voicing must be binary")
    if np.any(ref.f0_hz[ref.voicing == 1] <= 0):
        raise ValueError("reference f0 must be positive on voiced frames")


def pitch_correct(ref: FrameF0Sequence, est: FrameF0Sequence, tol_cents: float = 50.0) -> np.ndarray:
    """Boolean per frame: reference voiced and estimate within tolerance."""
    voiced = ref.voicing == 1
    ok = np.zeros(len(ref), dtype=bool)
    both = voiced & (est.f0_hz > 0)
    cents = 1200.0 * np.log2(est.f0_hz[both] / ref.f0_hz[both])
    ok[both] = np.abs(cents) <= tol_cents
    return ok


def rpa(ref: FrameF0Sequence, est: FrameF0Sequence, tol_cents: float = 50.0) -> float | None:
    """Raw pitch accuracy: share of reference-voiced frames with a correct pitch.

    Estimated voicing is ignored. Returns None when the reference has no
    voiced frame.
    """
    _check(ref, est)
    voiced = ref.voicing == 1
    if not voiced.any():
        return None
    return float(pitch_correct(ref, est, tol_cents)[voiced].mean())


def oa(ref: FrameF0Sequence, est: FrameF0Sequence, tol_cents: float = 50.0) -> float:
    """Overall accuracy with continuous estimated voicing.

    Reference-voiced frames earn the estimated voicing when the pitch is
    correct and nothing otherwise; reference-unvoiced frames earn
    ``1 - voicing``. The score is the mean credit over all frames.
    """
    _check(ref, est)
    if len(ref) == 0:
        return float("nan")
    voiced = ref.voicing == 1
    credit = np.where(voiced, np.where(pitch_correct(ref, est, tol_cents), est.voicing, 0.0),
                      1.0 - est.voicing)
    return float(credit.mean())


@dataclass(frozen=True)
class PairedT:
    t: float | None
    p: float | None
    n: int
    mean_difference: float
    note: str = ""

    def to_dict(self):
        return {"t": self.t, "p": self.p, "n": self.n, "mean_difference": self.mean_difference,
                "note": self.note}


def paired_t(pairs) -> PairedT:
    """Two-sided paired t-test on per-item differences ``a - b``."""
    pairs = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    n = len(pairs)
    if n < 2:
        raise ValueError("paired_t needs at least two pairs")
    d = pairs[:, 0] - pairs[:, 1]
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0 or not math.isfinite(sd):
        return PairedT(None, None, n, mean, "degenerate: all differences are identical")
    t = mean / (sd / math.sqrt(n))
    p = float(2 * stats.t.sf(abs(t), df=n - 1))
    return PairedT(float(t), p, n, mean)
