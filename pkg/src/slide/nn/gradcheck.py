"""Finite-difference validation of the analytic gradients.

Central differences are compared against the backward pass on a random
subset of parameter coordinates. Relative error uses the larger of the two
gradients as denominator, floored at one-thousandth of the model's largest
gradient magnitude so coordinates with (near-)zero gradient do not amplify
finite-difference round-off into spurious failures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from .config import ModelConfig
from .model import backward, cross_entropy, forward


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    checked_coords: int
    epsilon: float

    def passes(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def _compare(loss_fn, params, grads, coords, epsilon):
    gmax = max(float(np.max(np.abs(g))) for g in grads.values())
    floor = max(1e-3 * gmax, 1e-12)
    worst = 0.0
    worst_name = ""
    for name, flat_idx in coords:
        arr = params[name]
        idx = np.unravel_index(flat_idx, arr.shape)
        orig = arr[idx]
        arr[idx] = orig + epsilon
        loss_plus = loss_fn()
        arr[idx] = orig - epsilon
        loss_minus = loss_fn()
        arr[idx] = orig
        numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
        analytic = grads[name][idx]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        if rel > worst:
            worst = rel
            worst_name = name
    return worst, worst_name


def grad_check(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    batch: tuple[np.ndarray, np.ndarray],
    epsilon: float = 1e-4,
    samples_per_param: int = 4,
    seed: int = 0,
    pos_kind=None,
) -> GradCheckReport:
    """Check the two-tower backward pass on one (tokens_a, tokens_b) batch.

    The checked scalar is next-token cross-entropy on both streams plus a
    fixed random linear probe of the duration head (linear so it adds no
    finite-difference truncation error, unlike the L1 training loss whose
    kinks are not finite-differencable).
    """
    tokens_a, tokens_b = (np.asarray(t, dtype=np.int64) for t in batch)
    if len(tokens_a) < 2:
        raise InputError("grad check batch needs at least 2 tokens per stream")
    rng = np.random.default_rng(seed)
    t = len(tokens_a)
    probe = {st: rng.choice((-1.0, 1.0), size=t) / t for st in ("A", "B")}
    inputs = {"A": tokens_a[:-1], "B": tokens_b[:-1]}
    targets = {"A": tokens_a[1:], "B": tokens_b[1:]}
    kind = None if pos_kind is None else np.asarray(pos_kind)[:-1]

    def run(want_cache=False):
        res = forward(params, config, inputs["A"], inputs["B"], pos_kind=kind, want_cache=want_cache)
        loss = 0.0
        dlogits = {}
        for st in ("A", "B"):
            ce, dl = cross_entropy(res.logits[st], targets[st])
            loss += ce
            dlogits[st] = dl
            loss += float(res.durations[st] @ probe[st][:-1])
        return loss, dlogits, res

    loss, dlogits, res = run(want_cache=True)
    grads = backward(params, config, res.cache, dlogits, {st: probe[st][:-1] for st in ("A", "B")})

    coords = []
    for name in sorted(params):
        size = params[name].size
        n = min(samples_per_param, size)
        for flat in rng.choice(size, size=n, replace=False):
            coords.append((name, int(flat)))
    worst, worst_name = _compare(lambda: run()[0], params, grads, coords, epsilon)
    return GradCheckReport(worst, worst_name, len(coords), epsilon)


def grad_check_linear(
    n_inputs: int = 6,
    n_outputs: int = 4,
    n_batch: int = 16,
    epsilon: float = 1e-4,
    seed: int = 0,
) -> GradCheckReport:
    """Calibration check on a purely linear map with squared error.

    Central differences are exact (to round-off) for a quadratic loss of a
    linear model, so this bounds the checker's intrinsic noise floor.
    """
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n_batch, n_inputs))
    y = rng.normal(size=(n_batch, n_outputs))
    params = {"w": rng.normal(size=(n_inputs, n_outputs)), "b": rng.normal(size=(n_outputs,))}

    def loss_fn():
        r = x @ params["w"] + params["b"] - y
        return float((r * r).mean())

    r = x @ params["w"] + params["b"] - y
    scale = 2.0 / r.size
    grads = {"w": x.T @ r * scale, "b": r.sum(axis=0) * scale}
    coords = [(name, int(flat)) for name in sorted(params) for flat in range(params[name].size)]
    worst, worst_name = _compare(loss_fn, params, grads, coords, epsilon)
    return GradCheckReport(worst, worst_name, len(coords), epsilon)


def overfit_one_batch(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    batch: tuple[np.ndarray, np.ndarray],
    optimizer,
    steps: int,
) -> list[float]:
    """Repeatedly fit a single batch; returns the per-step loss trace."""
    tokens_a, tokens_b = (np.asarray(t, dtype=np.int64) for t in batch)
    inputs = {"A": tokens_a[:-1], "B": tokens_b[:-1]}
    targets = {"A": tokens_a[1:], "B": tokens_b[1:]}
    trace = []
    for _ in range(steps):
        res = forward(params, config, inputs["A"], inputs["B"], want_cache=True)
        loss = 0.0
        dlogits = {}
        for st in ("A", "B"):
            ce, dl = cross_entropy(res.logits[st], targets[st])
            loss += 0.5 * ce
            dlogits[st] = 0.5 * dl
        grads = backward(params, config, res.cache, dlogits)
        optimizer.step(params, grads)
        trace.append(loss)
    return trace
