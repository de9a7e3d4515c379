"""Objective terms: source cross-entropy, MMD, classifier discrepancy,
pseudo-labels and the contrastive (Siamese margin) alignment loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels

LOG_FLOOR = 1e-12
NORM_GUARD = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "normalized_mean_sq"
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.kind not in ("normalized_mean_sq", "rbf_mean"):
            raise ValueError(f"unknown MMD kernel {self.kind!r}")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")


@dataclass(frozen=True)
class PseudoLabels:
    labels: np.ndarray
    confidence: np.ndarray


def _check_labels(labels, n: int, k: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be integers")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    return labels.astype(np.intp)


def cross_entropy_source(p1: ad.Tensor, p2: ad.Tensor, labels) -> ad.Tensor:
    """Batch mean of ``-(log p1[y] + log p2[y])`` from probability rows."""
    n, k = p1.shape
    if n < 1:
        raise ValueError("empty batch")
    labels = _check_labels(labels, n, k)
    lp1 = ad.log(ad.max_with_scalar(ad.pick(p1, labels), LOG_FLOOR))
    lp2 = ad.log(ad.max_with_scalar(ad.pick(p2, labels), LOG_FLOOR))
    return ad.neg(ad.mean(ad.add(lp1, lp2)))


def cross_entropy_logits(logits1: ad.Tensor, logits2: ad.Tensor, labels) -> ad.Tensor:
    """Same quantity as :func:`cross_entropy_source`, via log-softmax of the logits."""
    n, k = logits1.shape
    if n < 1:
        raise ValueError("empty batch")
    labels = _check_labels(labels, n, k)
    lp1 = ad.pick(ad.log_softmax_rows(logits1), labels)
    lp2 = ad.pick(ad.log_softmax_rows(logits2), labels)
    return ad.neg(ad.mean(ad.add(lp1, lp2)))


def _normalized_mean(feats: ad.Tensor) -> ad.Tensor:
    g = ad.mean_axis(feats, 0)
    norm = ad.l2_norm(g)
    if norm.item() < NORM_GUARD:
        return g
    return ad.div(g, norm)


def mmd_loss(source_feats: ad.Tensor, target_feats: ad.Tensor, kernel: KernelSpec = KernelSpec()) -> ad.Tensor:
    """Squared MMD between the l2-normalised batch-mean features of two domains."""
    if source_feats.shape[0] < 1 or target_feats.shape[0] < 1:
        raise ValueError("empty batch")
    if source_feats.shape[1:] != target_feats.shape[1:]:
        raise ad.ShapeError(f"feature dims differ: {source_feats.shape} vs {target_feats.shape}")
    gs = _normalized_mean(source_feats)
    gt = _normalized_mean(target_feats)
    sq = ad.sum_(ad.square(ad.sub(gs, gt)))
    if kernel.kind == "normalized_mean_sq":
        return sq
    k = ad.exp(ad.mul(sq, -1.0 / (2.0 * kernel.bandwidth**2)))
    return ad.sub(2.0, ad.mul(2.0, k))


def discrepancy(p1: ad.Tensor, p2: ad.Tensor) -> ad.Tensor:
    """Mean over samples of ``(1/K) * sum_k |p1_k - p2_k|``."""
    if p1.shape != p2.shape:
        raise ad.ShapeError(f"probability shapes differ: {p1.shape} vs {p2.shape}")
    return ad.mean(ad.abs_(ad.sub(p1, p2)))


def pseudo_label(p1, p2) -> PseudoLabels:
    """Argmax of the summed posteriors; ties go to the lowest class index."""
    s = np.asarray(getattr(p1, "data", p1)) + np.asarray(getattr(p2, "data", p2))
    labels = np.argmax(s, axis=1)
    return PseudoLabels(labels=labels, confidence=s[np.arange(len(s)), labels])


def siamese_distance(feat_i: ad.Tensor, feat_j: ad.Tensor, same_class: bool, margin: float) -> ad.Tensor:
    if margin <= 0:
        raise ValueError("margin must be positive")
    sq = ad.sum_(ad.square(ad.sub(feat_i, feat_j)))
    if same_class:
        return sq
    return ad.square(ad.relu(ad.sub(margin, ad.sqrt(sq))))


def pair_indices(n_source: int, n_target: int, pseudo: PseudoLabels, source_labels,
                 conf_threshold: float = 0.0, pair_budget: int = 0, rng=None):
    """Enumerate the source-target and unordered target-target pairs.

    Returns ``(st, tt)`` where each is ``(idx_a, idx_b, same)``. Pairs touching
    a target sample with confidence below ``conf_threshold`` are dropped. With
    a positive ``pair_budget`` smaller than the pair count, a uniform subsample
    of that many pairs (drawn jointly over both groups) is kept.
    """
    t_ok = pseudo.confidence >= conf_threshold
    src = np.repeat(np.arange(n_source), n_target)
    tgt = np.tile(np.arange(n_target), n_source)
    keep = t_ok[tgt]
    st_a, st_b = src[keep], tgt[keep]
    ti, tj = np.triu_indices(n_target, k=1)
    keep = t_ok[ti] & t_ok[tj]
    tt_a, tt_b = ti[keep], tj[keep]
    total = len(st_a) + len(tt_a)
    if 0 < pair_budget < total:
        if rng is None:
            raise ValueError("pair subsampling needs an rng")
        chosen = np.sort(rng.choice(total, size=pair_budget, replace=False))
        in_st = chosen[chosen < len(st_a)]
        in_tt = chosen[chosen >= len(st_a)] - len(st_a)
        st_a, st_b = st_a[in_st], st_b[in_st]
        tt_a, tt_b = tt_a[in_tt], tt_b[in_tt]
    labels_s = np.asarray(source_labels)
    st_same = labels_s[st_a] == pseudo.labels[st_b]
    tt_same = pseudo.labels[tt_a] == pseudo.labels[tt_b]
    return (st_a, st_b, st_same), (tt_a, tt_b, tt_same)


def contrastive_loss(source_feats: ad.Tensor, source_labels, target_feats: ad.Tensor,
                     target_pseudo: PseudoLabels, margin: float = 1.0, pair_budget: int = 0,
                     conf_threshold: float = 0.0, rng=None) -> ad.Tensor:
    """Mean Siamese loss over source-target pairs plus mean over target-target pairs.

    Source samples use their true labels, target samples their pseudo-labels.
    Pseudo-labels are plain integers, so no gradient reaches the classifiers.
    """
    if margin <= 0:
        raise ValueError("margin must be positive")
    ns, nt = source_feats.shape[0], target_feats.shape[0]
    if ns < 1 or nt < 1:
        raise ValueError("empty batch")
    if source_feats.shape[1] != target_feats.shape[1]:
        raise ad.ShapeError("feature dims differ")
    (sa, sb, ss), (ta, tb, ts) = pair_indices(
        ns, nt, target_pseudo, source_labels, conf_threshold, pair_budget, rng
    )
    want_grad = source_feats.tracked or target_feats.tracked
    fs, ft = source_feats.data, target_feats.data
    value = 0.0
    g_s = np.zeros_like(fs) if want_grad else None
    g_t = np.zeros_like(ft) if want_grad else None
    if len(sa):
        tot, ga, gb = kernels.pair_loss(fs, ft, sa, sb, ss, margin, want_grad)
        value += tot / len(sa)
        if want_grad:
            g_s += ga / len(sa)
            g_t += gb / len(sa)
    if len(ta):
        tot, ga, gb = kernels.pair_loss(ft, ft, ta, tb, ts, margin, want_grad)
        value += tot / len(ta)
        if want_grad:
            g_t += (ga + gb) / len(ta)

    def vjp(g):
        return (float(g) * g_s, float(g) * g_t)

    return ad.record(np.array(value), (source_feats, target_feats), vjp)
