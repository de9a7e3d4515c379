"""Central finite-difference checks of every training loss against the tape.

Each check draws a random small model (generator 2->4 tanh, classifiers
4->3 linear) and random inputs in [-2, 2], then compares the analytic
gradient over the relevant parameters with central differences. Instances
landing within reach of a kink (|.| at 0, the hinge at the margin, the
norm at 0) are redrawn, since the derivative is not defined there.

The error reported is ``|a - n| / max(|a|, |n|)`` over the concatenated
parameter gradient (Euclidean norms).
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .losses import (
    KernelSpec,
    contrastive_loss,
    cross_entropy_logits,
    cross_entropy_source,
    discrepancy,
    mmd_loss,
    pseudo_label,
    siamese_distance,
)
from .models import ArchitectureSpec, init_model

STEP = 1e-5
TOLERANCE = 1e-4
INSTANCES = 20
KINK_GAP = 1e-3


def numeric_gradient(f: Callable[[], float], params: list[ad.Tensor], step: float = STEP) -> list[np.ndarray]:
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f()
            flat[i] = orig - step
            fm = f()
            flat[i] = orig
            gf[i] = (fp - fm) / (2 * step)
        out.append(g)
    return out


def analytic_gradient(f: Callable[[], ad.Tensor], params: list[ad.Tensor]) -> list[np.ndarray]:
    with ad.Tape() as tape:
        loss = f()
    grads = tape.backward(loss)
    return [grads.get(p, np.zeros_like(p.data)) for p in params]


def relative_error(analytic: list[np.ndarray], numeric: list[np.ndarray]) -> float:
    a = np.concatenate([x.ravel() for x in analytic])
    n = np.concatenate([x.ravel() for x in numeric])
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def check(f: Callable[[], ad.Tensor], params: list[ad.Tensor], step: float = STEP) -> float:
    analytic = analytic_gradient(f, params)
    numeric = numeric_gradient(lambda: f().item(), params, step)
    return relative_error(analytic, numeric)


# ------------------------------------------------------------- loss instances


def _small_model(rng):
    spec = ArchitectureSpec(input_dim=2, generator_hidden=(), feature_dim=4, classifier_hidden=(),
                            num_classes=3, activation="tanh")
    return init_model(spec, int(rng.integers(2**31)))


def _inputs(rng, n):
    return ad.Tensor(rng.uniform(-2.0, 2.0, size=(n, 2)))


def _cross_entropy(rng):
    model = _small_model(rng)
    x = _inputs(rng, 6)
    y = rng.integers(0, 3, size=6)

    def from_logits():
        f = model.g(x)
        return cross_entropy_logits(model.f1(f), model.f2(f), y)

    def from_probs():
        f = model.g(x)
        return cross_entropy_source(ad.softmax_rows(model.f1(f)), ad.softmax_rows(model.f2(f)), y)

    return [from_logits, from_probs], model.parameters()


def _mmd(rng):
    model = _small_model(rng)
    xs, xt = _inputs(rng, 5), _inputs(rng, 7)
    if np.linalg.norm(model.g(xs).data.mean(0)) < KINK_GAP or np.linalg.norm(model.g(xt).data.mean(0)) < KINK_GAP:
        return None
    fns = [
        lambda kernel=kernel: mmd_loss(model.g(xs), model.g(xt), kernel)
        for kernel in (KernelSpec(), KernelSpec("rbf_mean", 0.7))
    ]
    return fns, model.generator_params()


def _discrepancy(rng):
    model = _small_model(rng)
    x = _inputs(rng, 6)

    def probs():
        f = model.g(x)
        return ad.softmax_rows(model.f1(f)), ad.softmax_rows(model.f2(f))

    p1, p2 = probs()
    if np.min(np.abs(p1.data - p2.data)) < KINK_GAP:
        return None
    return [lambda: discrepancy(*probs())], model.parameters()


def _siamese(rng):
    model = _small_model(rng)
    x = _inputs(rng, 2)
    margin = float(rng.uniform(0.5, 2.0))
    d = np.linalg.norm(np.subtract(*model.g(x).data))
    if d < KINK_GAP or abs(d - margin) < KINK_GAP:
        return None

    def fn(same):
        f = model.g(x)
        return siamese_distance(ad.row(f, 0), ad.row(f, 1), same, margin)

    return [lambda: fn(True), lambda: fn(False)], model.generator_params()


def _contrastive(rng):
    model = _small_model(rng)
    xs, xt = _inputs(rng, 5), _inputs(rng, 6)
    ys = rng.integers(0, 3, size=5)
    margin = float(rng.uniform(0.5, 2.0))
    fs, ft = model.g(xs).data, model.g(xt).data
    dists = np.concatenate([
        np.linalg.norm(fs[:, None] - ft[None], axis=-1).ravel(),
        np.linalg.norm(ft[:, None] - ft[None], axis=-1)[np.triu_indices(len(ft), 1)],
    ])
    if dists.min() < KINK_GAP or np.min(np.abs(dists - margin)) < KINK_GAP:
        return None
    # labels are fixed for the instance: they come from detached probabilities
    pseudo = pseudo_label(rng.dirichlet(np.ones(3), size=6), rng.dirichlet(np.ones(3), size=6))

    def fn():
        return contrastive_loss(model.g(xs), ys, model.g(xt), pseudo, margin)

    return [fn], model.generator_params()


CHECKS = {
    "cross_entropy": _cross_entropy,
    "mmd": _mmd,
    "discrepancy": _discrepancy,
    "siamese_distance": _siamese,
    "contrastive": _contrastive,
}


def run_gradcheck(checks=None, instances: int = INSTANCES, seed: int = 0) -> dict:
    """Return ``{name: worst relative error}`` over ``instances`` draws per check."""
    checks = CHECKS if checks is None else checks
    rng = np.random.default_rng(seed)
    report = {}
    for name, make in checks.items():
        worst = 0.0
        done = 0
        attempts = 0
        while done < instances:
            attempts += 1
            if attempts > 50 * instances:
                raise RuntimeError(f"{name}: could not draw kink-free instances")
            inst = make(rng)
            if inst is None:
                continue
            fns, params = inst
            for fn in fns:
                worst = max(worst, check(fn, params))
            done += 1
        report[name] = worst
    return report
