"""Central finite-difference checks against the tape gradients."""
from dataclasses import dataclass, field

import numpy as np

from gentron.numerics.rng import Rng
from gentron.numerics.tensor import backward


def relative_error(analytic, numeric, floor=1e-10):
    """|a - n| / max(|a|, |n|); pairs that are both below ``floor`` count as exact."""
    scale = max(abs(analytic), abs(numeric))
    if scale < floor:
        return 0.0
    return abs(analytic - numeric) / scale


@dataclass
class GradCheckReport:
    entries: list = field(default_factory=list)  # (name, flat index, analytic, numeric, rel err)

    @property
    def max_error(self):
        return max((e[4] for e in self.entries), default=0.0)

    def passed(self, tol):
        return bool(self.entries) and self.max_error < tol

    def __len__(self):
        return len(self.entries)


def finite_difference(loss_fn, tensor, index, h=1e-3):
    """Central difference of ``loss_fn()`` in one scalar of ``tensor.data``."""
    flat = tensor.data.reshape(-1)
    saved = flat[index]
    flat[index] = saved + h
    up = float(loss_fn().data)
    flat[index] = saved - h
    down = float(loss_fn().data)
    flat[index] = saved
    return (up - down) / (2.0 * h)


def check_gradients(loss_fn, params, n_samples=64, h=1e-3, seed=0, n_zero=0):
    """Compare tape gradients to central differences on sampled scalars.

    ``params`` maps names to leaf tensors; run this on float64 data (the
    shadow copy) so that the difference quotient is not swamped by rounding.
    Sampling prefers scalars with a nonzero analytic gradient; ``n_zero``
    additional scalars are drawn uniformly to confirm vanishing gradients.
    """
    for p in params.values():
        p.grad = None
    backward(loss_fn())
    rng = Rng(seed).fork("gradcheck")

    candidates = []
    for name, p in params.items():
        g = np.zeros(p.size) if p.grad is None else p.grad.reshape(-1)
        for i in np.flatnonzero(np.abs(g) > 1e-12):
            candidates.append((name, int(i)))
    everything = [(name, i) for name, p in params.items() for i in range(p.size)]

    picks = []
    if candidates:
        order = rng.permutation(len(candidates))[:n_samples]
        picks += [candidates[j] for j in order]
    if n_zero:
        order = rng.permutation(len(everything))[:n_zero]
        picks += [everything[j] for j in order]

    report = GradCheckReport()
    for name, i in picks:
        p = params[name]
        analytic = 0.0 if p.grad is None else float(p.grad.reshape(-1)[i])
        numeric = finite_difference(loss_fn, p, i, h)
        report.entries.append((name, i, analytic, numeric, relative_error(analytic, numeric)))
    return report
