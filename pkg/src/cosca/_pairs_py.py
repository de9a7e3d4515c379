"""Pure numpy pair-loss kernel; used when the compiled extension is unavailable."""
import numpy as np


def pair_loss(fa, fb, ia, ib, same, margin, with_grad=True):
    """Sum of Siamese margin losses over index pairs ``(ia[p], ib[p])``.

    Same-class pairs contribute ``|a - b|^2``, others ``max(0, margin - |a - b|)^2``.
    Returns ``(total, grad_fa, grad_fb)``; the gradients are ``None`` when
    ``with_grad`` is false.
    """
    diff = fa[ia] - fb[ib]
    sq = np.einsum("ij,ij->i", diff, diff)
    dist = np.sqrt(sq)
    hinge = np.maximum(margin - dist, 0.0)
    per_pair = np.where(same, sq, hinge * hinge)
    total = float(per_pair.sum())
    if not with_grad:
        return total, None, None
    safe = np.where(dist > 0, dist, 1.0)
    coef = np.where(same, 2.0, np.where(dist > 0, -2.0 * hinge / safe, 0.0))
    contrib = coef[:, None] * diff
    ga = np.zeros_like(fa)
    gb = np.zeros_like(fb)
    np.add.at(ga, ia, contrib)
    np.add.at(gb, ib, -contrib)
    return total, ga, gb
