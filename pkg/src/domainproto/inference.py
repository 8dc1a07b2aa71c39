"""Prototype-based inference and the pairwise training objective.

Inference is two-staged: a trainable bilinear form scores a sample's domain
features against every superdomain's domain prototype (softmax picks the
superdomain), then cosine similarity between the class features and that
superdomain's class prototypes picks the label.

Training replaces per-sample classification with a pairwise similarity loss
over class-probability vectors, which tolerates label noise: two samples'
probability vectors should be similar exactly when their labels agree. The
superdomain picker is trained by a one-vs-rest BCE against each source
sample's known superdomain, since the inference-time hard argmax carries no
gradient.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, InferenceError, SampleSizeError, StateError
from .nets import bce, one_hot
from .prototypes import PrototypeBank

SIM_EPS = 1e-7
NORM_EPS = 1e-12


def softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    z = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(probs: np.ndarray, d_probs: np.ndarray) -> np.ndarray:
    """dL/dscores given softmax outputs and dL/dprobs (rowwise)."""
    inner = (d_probs * probs).sum(axis=-1, keepdims=True)
    return probs * (d_probs - inner)


class BilinearMap:
    """Trainable (dim x dim) bilinear form h(x, mu) = x^T theta mu.

    No symmetry or definiteness constraint; `identity=True` freezes it to
    the identity matrix (plain dot products) for ablation runs.
    """

    def __init__(self, dim: int, rng: np.random.Generator, identity: bool = False):
        if identity:
            self.matrix = np.eye(dim)
        else:
            bound = np.sqrt(6.0 / (dim + dim))
            self.matrix = rng.uniform(-bound, bound, size=(dim, dim))
        self.grad = np.zeros((dim, dim))
        self.trainable = not identity

    def param_grad_pairs(self):
        if self.trainable:
            yield self.matrix, self.grad

    def weight_arrays(self) -> list[np.ndarray]:
        return [self.matrix] if self.trainable else []


def bilinear_scores(x_d: np.ndarray, theta: np.ndarray, mu_d: np.ndarray) -> np.ndarray:
    """(batch, K) scores h_ik = x_d[i]^T theta mu_d[k]."""
    return x_d @ theta @ mu_d.T


def domain_affinity(x_d: np.ndarray, bank: PrototypeBank, theta: np.ndarray) -> np.ndarray:
    """Softmax-normalized affinity of each sample to every superdomain."""
    if not bank.d_init.all():
        raise StateError("domain prototypes not initialized for every superdomain")
    x_d = np.atleast_2d(x_d)
    if x_d.shape[1] != bank.dim:
        raise DimensionError(f"expected domain features of dim {bank.dim}, got {x_d.shape[1]}")
    return softmax(bilinear_scores(x_d, theta, bank.mu_d), axis=1)


def cosine_scores(x: np.ndarray, protos: np.ndarray):
    """Rowwise cosine similarity of (B, D) features against (M, D) prototypes.

    Near-zero vectors get similarity 0 (and zero gradient). Returns
    (scores, cache) for the backward pass.
    """
    nx = np.linalg.norm(x, axis=1)
    np_ = np.linalg.norm(protos, axis=1)
    safe_nx = np.where(nx < NORM_EPS, 1.0, nx)
    safe_np = np.where(np_ < NORM_EPS, 1.0, np_)
    s = (x @ protos.T) / np.outer(safe_nx, safe_np)
    dead = (nx < NORM_EPS)[:, None] | (np_ < NORM_EPS)[None, :]
    s[dead] = 0.0
    return s, (x, protos, safe_nx, safe_np, s, dead)


def cosine_scores_backward(cache, d_scores: np.ndarray) -> np.ndarray:
    """dL/dx for cosine_scores; prototypes are treated as constants."""
    x, protos, nx, np_, s, dead = cache
    g = np.where(dead, 0.0, d_scores)
    dx = (g / np_[None, :]) @ protos / nx[:, None]
    dx -= ((g * s).sum(axis=1) / nx**2)[:, None] * x
    return dx


def class_probs(x_c: np.ndarray, bank: PrototypeBank, sd: int):
    """Class-probability vectors for (B, D) class features in superdomain sd.

    Softmax over cosine similarity to the superdomain's initialized class
    prototypes; classes never seen in this superdomain get probability 0.
    Returns (P, cache); P rows are length n_classes and sum to 1.
    """
    active = bank.initialized_classes(sd)
    if active.size < 2:
        raise InferenceError(
            f"superdomain {sd} has {active.size} initialized class prototypes; need >= 2"
        )
    x_c = np.atleast_2d(x_c)
    s, cache = cosine_scores(x_c, bank.mu_c[sd, active])
    p = np.zeros((x_c.shape[0], bank.n_classes))
    p[:, active] = softmax(s, axis=1)
    return p, (cache, active, p)


def class_probs_backward(cache, d_p: np.ndarray) -> np.ndarray:
    """dL/dx_c for class_probs."""
    cos_cache, active, p = cache
    d_s = softmax_backward(p[:, active], d_p[:, active])
    return cosine_scores_backward(cos_cache, d_s)


def pair_similarity(p_i: np.ndarray, p_j: np.ndarray) -> float:
    """Cosine similarity of two class-probability vectors, in [0, 1]."""
    ni = np.linalg.norm(p_i)
    nj = np.linalg.norm(p_j)
    if ni < NORM_EPS or nj < NORM_EPS:
        return 0.0
    return float(np.dot(p_i, p_j) / (ni * nj))


def similarity_bce(g_raw: np.ndarray, r: np.ndarray, eps: float = SIM_EPS):
    """BCE between a pair-similarity matrix and same-class indicators.

    loss = -(1/Nb^2) sum_ij [ r_ij log g_ij + (1 - r_ij) log(1 - g_ij) ]
    with g clamped to [eps, 1 - eps]. Returns (loss, dL/dg); the gradient is
    exactly zero where the clamp is active.
    """
    nb = g_raw.shape[0]
    g = np.clip(g_raw, eps, 1.0 - eps)
    loss = float(-(r * np.log(g) + (1.0 - r) * np.log(1.0 - g)).sum() / nb**2)
    d_g = -(r / g - (1.0 - r) / (1.0 - g)) / nb**2
    d_g[(g_raw < eps) | (g_raw > 1.0 - eps)] = 0.0
    return loss, d_g


def pairwise_loss(p: np.ndarray, labels: np.ndarray, eps: float = SIM_EPS):
    """Similarity BCE over all ordered sample pairs in the batch.

    Pair target r_ij = 1 iff labels match; predicted same-class probability
    is the cosine of the probability vectors, clamped to [eps, 1-eps]. The
    i = j pairs are included (their similarity is 1 and carries no
    gradient). Returns (loss, dL/dp).
    """
    p = np.asarray(p, dtype=float)
    nb = p.shape[0]
    if nb < 2:
        raise SampleSizeError(f"pairwise loss needs a batch of >= 2, got {nb}")
    labels = np.asarray(labels)
    norms = np.linalg.norm(p, axis=1)
    safe = np.where(norms < NORM_EPS, 1.0, norms)
    g_raw = (p @ p.T) / np.outer(safe, safe)
    dead = (norms < NORM_EPS)[:, None] | (norms < NORM_EPS)[None, :]
    g_raw[dead] = 0.0
    r = (labels[:, None] == labels[None, :]).astype(float)
    loss, d_g = similarity_bce(g_raw, r, eps)

    d_g[dead] = 0.0
    w = d_g + d_g.T
    np.fill_diagonal(w, 0.0)  # d cos(p_i, p_i) / d p_i = 0
    d_p = (w / np.outer(safe, safe)) @ p
    d_p -= ((w * g_raw).sum(axis=1) / safe**2)[:, None] * p
    return loss, d_p


def pointwise_loss(p: np.ndarray, labels: np.ndarray, eps: float = SIM_EPS):
    """Per-sample cross-entropy on the class-probability vectors.

    Ablation baseline for the pairwise objective; same inputs, same output
    convention. Returns (loss, dL/dp).
    """
    p = np.asarray(p, dtype=float)
    nb = p.shape[0]
    labels = np.asarray(labels)
    picked = p[np.arange(nb), labels]
    clamped = np.clip(picked, eps, None)
    loss = float(-np.log(clamped).mean())
    d_p = np.zeros_like(p)
    d_p[np.arange(nb), labels] = np.where(picked < eps, 0.0, -1.0 / (clamped * nb))
    return loss, d_p


def affinity_alignment_loss(
    x_d: np.ndarray, theta: np.ndarray, mu_d: np.ndarray, superdomains: np.ndarray
):
    """One-vs-rest BCE aligning the bilinear affinity with known superdomains.

    Training-time surrogate for the hard superdomain argmax: each source
    sample's affinity softmax is pushed toward its assigned superdomain.
    Returns (loss, dL/dtheta, dL/dx_d); prototypes are constants.
    """
    k = mu_d.shape[0]
    h = bilinear_scores(x_d, theta, mu_d)
    v = softmax(h, axis=1)
    loss, d_v = bce(v, one_hot(superdomains, k))
    d_h = softmax_backward(v, d_v)
    d_theta = x_d.T @ (d_h @ mu_d)
    d_x_d = (d_h @ mu_d) @ theta.T
    return loss, d_theta, d_x_d


def predict_batch(
    x_d: np.ndarray,
    x_c: np.ndarray,
    bank: PrototypeBank,
    theta: np.ndarray,
    use_domain_prototype: bool = True,
):
    """Two-stage prediction for (B, D) decoupled features.

    Returns (labels, superdomains, affinities, class_probs). With
    use_domain_prototype=False the superdomain stage is skipped and each
    class is scored by its best cosine match across all superdomains.
    """
    if not use_domain_prototype:
        return _predict_nearest_class(x_c, bank)
    v = domain_affinity(x_d, bank, theta)
    k_star = v.argmax(axis=1)
    nb = x_d.shape[0]
    p = np.zeros((nb, bank.n_classes))
    for sd in np.unique(k_star):
        rows = np.flatnonzero(k_star == sd)
        p[rows], _ = class_probs(x_c[rows], bank, int(sd))
    return p.argmax(axis=1), k_star, v, p


def _predict_nearest_class(x_c: np.ndarray, bank: PrototypeBank):
    """Ablation path: best cosine per class over every superdomain's prototypes."""
    nb = x_c.shape[0]
    active_any = bank.c_init.any(axis=0)
    if active_any.sum() < 2:
        raise InferenceError("fewer than 2 classes have any initialized prototype")
    best = np.full((nb, bank.n_classes), -np.inf)
    for sd in range(bank.k):
        active = bank.initialized_classes(sd)
        if active.size == 0:
            continue
        s, _ = cosine_scores(x_c, bank.mu_c[sd, active])
        best[:, active] = np.maximum(best[:, active], s)
    p = np.zeros((nb, bank.n_classes))
    p[:, active_any] = softmax(best[:, active_any], axis=1)
    k_star = np.zeros(nb, dtype=int)
    v = np.full((nb, bank.k), 1.0 / bank.k)
    return p.argmax(axis=1), k_star, v, p


def predict_one(features_d, features_c, bank, theta, use_domain_prototype=True):
    """Single-sample convenience wrapper around predict_batch."""
    labels, k_star, v, p = predict_batch(
        np.atleast_2d(features_d), np.atleast_2d(features_c), bank, theta, use_domain_prototype
    )
    return int(labels[0]), int(k_star[0]), v[0], p[0]


def weight_penalty(weight_arrays: list[np.ndarray]) -> float:
    """Mean squared entry over all weight matrices (biases excluded)."""
    total = sum(w.size for w in weight_arrays)
    if total == 0:
        return 0.0
    return float(sum(float((w**2).sum()) for w in weight_arrays) / total)


def add_weight_penalty_grads(
    weight_arrays: list[np.ndarray], grad_arrays: list[np.ndarray], beta: float
) -> None:
    """Accumulate beta * d(weight_penalty)/dW into the gradient buffers."""
    total = sum(w.size for w in weight_arrays)
    if total == 0:
        return
    for w, g in zip(weight_arrays, grad_arrays):
        g += beta * 2.0 * w / total


def total_loss(l_fd: float, l_pair: float, penalty: float, beta: float) -> float:
    """Full objective: decoupling + pairwise + beta * soft regularization."""
    return l_fd + l_pair + beta * penalty
