"""Adversarial feature decoupling.

A shared shallow extractor feeds two decouplers: one producing domain
features x_d (carrying subject identity) and one producing class features
x_c (carrying label semantics). Two discriminators enforce the split
adversarially: the class discriminator must read the label from x_c but, via
a gradient reversal layer, must fail to read it from x_d; the domain
discriminator is the mirror image. Both discriminator losses are one-vs-rest
BCE.

The loss functions here return the gradient w.r.t. the decoupled features;
the caller accumulates those and runs one backward pass through the
decouplers and extractor per batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import DenseNet, bce, grl_backward, grl_forward


@dataclass
class DecoupledBatch:
    """Decoupled features for one batch plus the one-hot targets."""

    x_d: np.ndarray  # (batch, feat) domain features
    x_c: np.ndarray  # (batch, feat) class features
    y_d: np.ndarray  # (batch, n_subjects) one-hot subject
    y_c: np.ndarray  # (batch, n_classes) one-hot class

    def __post_init__(self):
        rows = {a.shape[0] for a in (self.x_d, self.x_c, self.y_d, self.y_c)}
        if len(rows) != 1:
            raise ValueError(f"row counts disagree across the batch: {rows}")


@dataclass
class DecoupleCaches:
    """Backward-pass caches from one train-mode decoupling forward."""

    extractor: object
    domain: object
    cls: object


def decouple_forward(
    f_g: DenseNet,
    f_d: DenseNet,
    f_c: DenseNet,
    x: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
):
    """x_d = f_d(f_g(x)), x_c = f_c(f_g(x)); the extractor runs once.

    Returns (x_d, x_c, caches); caches is None in eval mode.
    """
    h, cache_g = f_g.forward(x, train=train, rng=rng)
    x_d, cache_d = f_d.forward(h, train=train, rng=rng)
    x_c, cache_c = f_c.forward(h, train=train, rng=rng)
    caches = DecoupleCaches(cache_g, cache_d, cache_c) if train else None
    return x_d, x_c, caches


def loss_cls(
    d_c: DenseNet,
    x_c: np.ndarray,
    x_d: np.ndarray,
    y_c: np.ndarray,
    lam: float = 1.0,
    rng: np.random.Generator | None = None,
    collect_grads: bool = True,
):
    """Class-discriminator loss: BCE(D_c(x_c), y_c) + BCE(D_c(R(x_d)), y_c).

    The second term sees x_d through the gradient reversal, so its gradient
    pushes the domain decoupler to *hide* class information. Returns
    (loss, grad_x_c, grad_x_d); discriminator parameter gradients accumulate
    into d_c's buffers when collect_grads is set.
    """
    if not collect_grads:
        p1, _ = d_c.forward(x_c)
        p2, _ = d_c.forward(grl_forward(x_d))
        return bce(p1, y_c)[0] + bce(p2, y_c)[0], None, None

    p1, cache1 = d_c.forward(x_c, train=True, rng=rng)
    l1, dp1 = bce(p1, y_c)
    g_xc = d_c.backward(cache1, dp1)

    p2, cache2 = d_c.forward(grl_forward(x_d), train=True, rng=rng)
    l2, dp2 = bce(p2, y_c)
    g_xd = grl_backward(d_c.backward(cache2, dp2), lam)
    return l1 + l2, g_xc, g_xd


def loss_dom(
    d_d: DenseNet,
    x_d: np.ndarray,
    x_c: np.ndarray,
    y_d: np.ndarray,
    lam: float = 1.0,
    rng: np.random.Generator | None = None,
    collect_grads: bool = True,
):
    """Domain-discriminator loss: BCE(D_d(x_d), y_d) + BCE(D_d(R(x_c)), y_d).

    Mirror image of loss_cls with domains and classes swapped. Returns
    (loss, grad_x_d, grad_x_c).
    """
    if not collect_grads:
        p1, _ = d_d.forward(x_d)
        p2, _ = d_d.forward(grl_forward(x_c))
        return bce(p1, y_d)[0] + bce(p2, y_d)[0], None, None

    p1, cache1 = d_d.forward(x_d, train=True, rng=rng)
    l1, dp1 = bce(p1, y_d)
    g_xd = d_d.backward(cache1, dp1)

    p2, cache2 = d_d.forward(grl_forward(x_c), train=True, rng=rng)
    l2, dp2 = bce(p2, y_d)
    g_xc = grl_backward(d_d.backward(cache2, dp2), lam)
    return l1 + l2, g_xd, g_xc


def loss_fd(l_cls: float, l_dom: float) -> float:
    """Feature-decoupling objective: the sum of both discriminator losses."""
    return l_cls + l_dom


def backprop_decoupled(
    f_g: DenseNet,
    f_d: DenseNet,
    f_c: DenseNet,
    caches: DecoupleCaches,
    grad_x_d: np.ndarray,
    grad_x_c: np.ndarray,
) -> None:
    """Push accumulated feature gradients through decouplers and extractor."""
    g_h = f_d.backward(caches.domain, grad_x_d)
    g_h = g_h + f_c.backward(caches.cls, grad_x_c)
    f_g.backward(caches.extractor, g_h)
