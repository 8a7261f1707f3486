"""Finite-difference verification of the hand-written gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import LeakyReLU
from .model import Network, bce_from_logits, sigmoid


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_kind: dict
    n_checked: int
    worst: tuple
    n_kink_skipped: int = 0

    def to_dict(self):
        return {"max_rel_error": self.max_rel_error, "per_kind": self.per_kind,
                "n_checked": self.n_checked, "worst": list(self.worst),
                "n_kink_skipped": self.n_kink_skipped}


def _logits(net, x, mode):
    """Logits plus the on/off pattern of every rectifier, to spot kink crossings."""
    logits = net.forward(x, mode).reshape(-1)
    pattern = [l._pos for l in net.layers if isinstance(l, LeakyReLU)]
    return logits, pattern


def loss_difference(a, b, z):
    """``mean BCE(a) - mean BCE(b)`` for two logit vectors, without
    subtracting two rounded losses: ``softplus(a) - softplus(b)`` equals
    ``log1p(sigmoid(b) * expm1(a - b))``."""
    d = np.log1p(sigmoid(b) * np.expm1(a - b)) - z * (a - b)
    return float(np.mean(d))


def grad_check(net: Network, x, z, step: float = 1e-4, n_per_kind: int = 500, seed: int = 0,
               mode: str = "eval") -> GradCheckResult:
    """Compare analytic and central-difference gradients.

    Runs on a float64 copy of ``net`` with dropout off. ``mode="eval"``
    freezes batch norm at its running statistics; ``mode="check"`` uses
    batch statistics (needs more than one value per channel). Up to
    ``n_per_kind`` scalar parameters are sampled for each layer kind
    (conv, batchnorm, dense). The error of one parameter is
    ``|a - n| / max(|a|, |n|, 1e-8)``. The loss difference is formed from
    the two logit vectors (see :func:`loss_difference`) so that rounding of
    the loss itself does not swamp gradients near the ``1e-8`` floor.

    A central difference whose two evaluations switch any rectifier on or
    off straddles a kink, where the loss is not differentiable; such
    parameters are skipped (counted in ``n_kink_skipped``) and another is
    drawn, up to ``4 * n_per_kind`` draws per kind.
    """
    if mode not in ("eval", "check"):
        raise ValueError("grad_check mode must be 'eval' or 'check'")
    net = net.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    logits = net.forward(x, mode)
    _, dlogits, _ = bce_from_logits(logits, z)
    grads = net.backward(dlogits)

    rng = np.random.default_rng(seed)
    kinds = {}
    for layer in net.layers:
        for name in layer.param_names:
            kinds.setdefault(layer.kind, []).append(name)

    per_kind = {}
    worst = ("", -1, 0.0)
    total = 0
    skipped = 0
    for kind, names in kinds.items():
        sizes = np.array([net.params[n].size for n in names])
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        n_draw = min(4 * n_per_kind, int(sizes.sum()))
        candidates = rng.choice(sizes.sum(), size=n_draw, replace=False)
        errs = []
        kink = 0
        for f in candidates:
            if len(errs) >= n_per_kind:
                break
            which = int(np.searchsorted(bounds, f, side="right") - 1)
            name = names[which]
            idx = np.unravel_index(int(f - bounds[which]), net.params[name].shape)
            p = net.params[name]
            old = p[idx]
            p[idx] = old + step
            lp, pat_p = _logits(net, x, mode)
            p[idx] = old - step
            lm, pat_m = _logits(net, x, mode)
            p[idx] = old
            if any(not np.array_equal(a, b) for a, b in zip(pat_p, pat_m)):
                kink += 1
                continue
            num = loss_difference(lp, lm, z) / (2 * step)
            ana = float(grads[name][idx])
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            errs.append(err)
            if err > worst[2]:
                worst = (name, tuple(int(i) for i in idx), err)
        per_kind[kind] = {"max_rel_error": float(max(errs)) if errs else float("nan"),
                          "n": len(errs), "kink_skipped": kink}
        total += len(errs)
        skipped += kink
    return GradCheckResult(max(v["max_rel_error"] for v in per_kind.values()), per_kind, total,
                           worst, skipped)
