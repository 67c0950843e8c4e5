"""Training losses, as graph builders and as validated numpy evaluations.

Discriminator outputs are rows ``(p_sim, p_real)``; ``D(.)`` in the
formulas is ``p_sim`` and ``1 - D(.)`` is ``p_real``.
"""
from __future__ import annotations

import numpy as np

from ..numgrad import Graph, Tensor
from ..policynet import Module, discriminator_forward

SIM, REAL = 0, 1


def _labels(m, cls):
    return np.full(m, cls, dtype=np.int64)


def sup_graph(g: Graph, pred: Tensor, target: Tensor) -> Tensor:
    return g.apply("mse", pred, target)


def discriminator_loss_graph(g: Graph, p_src: Tensor, p_tgt: Tensor) -> Tensor:
    # each domain is averaged separately, so unequal batches weigh the domains equally
    a = g.apply("nll", p_src, labels=_labels(p_src.shape[0], SIM))
    b = g.apply("nll", p_tgt, labels=_labels(p_tgt.shape[0], REAL))
    return g.apply("add", a, b).scale(0.5)


def encoder_loss_graph(g: Graph, p_tgt: Tensor) -> Tensor:
    return g.apply("nll", p_tgt, labels=_labels(p_tgt.shape[0], SIM))


def confusion_loss_graph(g: Graph, p_src: Tensor, p_tgt: Tensor) -> Tensor:
    terms = [g.apply("nll", p, labels=_labels(p.shape[0], c))
             for p in (p_src, p_tgt) for c in (SIM, REAL)]
    total = terms[0]
    for t in terms[1:]:
        total = g.apply("add", total, t)
    return total.scale(0.25)


def _batch(a, dim=None, what="batch"):
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if a.shape[0] == 0:
        raise ValueError(f"empty {what}")
    if dim is not None and a.shape[1] != dim:
        raise ValueError(f"{what}: expected width {dim}, got {a.shape[1]}")
    return a


def _eval(build, *arrays):
    g = Graph()
    return float(build(g, *[g.constant(a) for a in arrays]).data)


def loss_perception_sup(preds, targets) -> float:
    """(1/2m) sum ||pred - x*||^2."""
    p, t = _batch(preds, 3), _batch(targets, 3)
    return _eval(sup_graph, p, t)


def loss_control(preds, targets) -> float:
    p, t = _batch(preds, 7), _batch(targets, 7)
    return _eval(sup_graph, p, t)


def _probs(D, feats):
    return discriminator_forward(D, _batch(feats, what="feature batch"))


def loss_discriminator_probs(p_src, p_tgt) -> float:
    p_src, p_tgt = _batch(p_src, 2), _batch(p_tgt, 2)
    if p_src.shape[0] != p_tgt.shape[0]:
        raise ValueError(f"discriminator batches differ: {p_src.shape[0]} vs {p_tgt.shape[0]}")
    return _eval(discriminator_loss_graph, _batch(p_src, 2), _batch(p_tgt, 2))


def loss_encoder_probs(p_tgt) -> float:
    return _eval(encoder_loss_graph, _batch(p_tgt, 2))


def loss_confusion_probs(p_src, p_tgt) -> float:
    p_src, p_tgt = _batch(p_src, 2), _batch(p_tgt, 2)
    if p_src.shape[0] != p_tgt.shape[0]:
        raise ValueError(f"confusion batches differ: {p_src.shape[0]} vs {p_tgt.shape[0]}")
    return _eval(confusion_loss_graph, _batch(p_src, 2), _batch(p_tgt, 2))


def loss_discriminator(D: Module, src_feats, tgt_feats) -> float:
    return loss_discriminator_probs(_probs(D, src_feats), _probs(D, tgt_feats))


def loss_encoder_adv(D: Module, tgt_feats) -> float:
    return loss_encoder_probs(_probs(D, tgt_feats))


def loss_confusion(D: Module, src_feats, tgt_feats, shared_encoder: bool) -> float:
    if not shared_encoder:
        raise ValueError("the confusion loss is defined for a shared source/target encoder")
    return loss_confusion_probs(_probs(D, src_feats), _probs(D, tgt_feats))
