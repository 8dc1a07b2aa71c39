"""Independent oracles shared by the test modules.

These stay deliberately naive (loops, central differences) so they cannot
share a bug with the vectorized implementations they check.
"""

import numpy as np


def finite_diff_grad(f, arr, h=1e-4):
    """Central-difference gradient of scalar f() w.r.t. the in-place array."""
    grad = np.zeros_like(arr)
    flat = arr.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def assert_grad_close(analytic, numeric, rtol=1e-3, atol=1e-6, label=""):
    """|a - n| <= max(atol, rtol * max(|a|, |n|)) elementwise."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    err = np.abs(analytic - numeric)
    tol = np.maximum(atol, rtol * np.maximum(np.abs(analytic), np.abs(numeric)))
    bad = err > tol
    assert not bad.any(), (
        f"{label}: {bad.sum()}/{bad.size} gradient entries off; "
        f"worst err {err.max():.3e} vs tol {tol[np.unravel_index(err.argmax(), err.shape)]:.3e}"
    )


def bce_loops(probs, targets, eps=1e-7):
    """Per-element binary cross-entropy summed with explicit loops."""
    total = 0.0
    rows, cols = probs.shape
    for i in range(rows):
        for j in range(cols):
            p = min(max(probs[i, j], eps), 1.0 - eps)
            t = targets[i, j]
            total += -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))
    return total / (rows * cols)


def mmd2_loops(x, y, sigma):
    """Unbiased squared-MMD estimate via explicit double sums."""
    n, m = len(x), len(y)

    def k(a, b):
        d2 = float(np.sum((a - b) ** 2))
        return np.exp(-d2 / (2.0 * sigma**2))

    sxx = sum(k(x[i], x[j]) for i in range(n) for j in range(n) if i != j)
    syy = sum(k(y[i], y[j]) for i in range(m) for j in range(m) if i != j)
    sxy = sum(k(x[i], y[j]) for i in range(n) for j in range(m))
    return sxx / (n * (n - 1)) + syy / (m * (m - 1)) - 2.0 * sxy / (n * m)


def set_partitions(items, k):
    """All ways to split `items` into exactly k non-empty unlabeled blocks."""
    items = list(items)
    if k == 1:
        yield [items]
        return
    if len(items) == k:
        yield [[i] for i in items]
        return
    first, rest = items[0], items[1:]
    # first joins an existing block of a (k)-partition of rest
    for part in set_partitions(rest, k):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1 :]
    # first is its own block alongside a (k-1)-partition of rest
    for part in set_partitions(rest, k - 1):
        yield [[first]] + part


def pairwise_partition_cost(dist, blocks):
    """Sum of within-block pairwise distances, each unordered pair once."""
    total = 0.0
    for block in blocks:
        for a_idx in range(len(block)):
            for b_idx in range(a_idx + 1, len(block)):
                total += dist[block[a_idx], block[b_idx]]
    return total


def best_medoid_partition_cost(dist, blocks):
    """Sum over blocks of the best achievable member-to-medoid distance sum."""
    total = 0.0
    for block in blocks:
        total += min(sum(dist[i, m] for i in block) for m in block)
    return total


def cosine_loops(a, b):
    num = sum(x * y for x, y in zip(a, b))
    na = np.sqrt(sum(x * x for x in a))
    nb = np.sqrt(sum(y * y for y in b))
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return num / (na * nb)


def softmax_loops(scores):
    scores = np.asarray(scores, dtype=float)
    e = np.exp(scores - scores.max())
    return e / e.sum()


def pairwise_loss_loops(p_rows, labels, eps=1e-7):
    """Naive double-loop pairwise similarity BCE, including i == j pairs."""
    nb = len(p_rows)
    total = 0.0
    for i in range(nb):
        for j in range(nb):
            g = cosine_loops(p_rows[i], p_rows[j])
            g = min(max(g, eps), 1.0 - eps)
            r = 1.0 if labels[i] == labels[j] else 0.0
            total += r * np.log(g) + (1.0 - r) * np.log(1.0 - g)
    return -total / (nb * nb)
