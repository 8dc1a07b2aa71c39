"""Gaussian-kernel maximum mean discrepancy between per-subject feature
distributions, and aggregation of subject domains into superdomains.

Superdomain aggregation is k-medoids over the squared-MMD matrix with
k-means++-style seeding: distribution "means" are not computable points, so
cluster centers are member domains (medoids) and distances come straight from
the precomputed matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SampleSizeError

MAX_MEDOID_ROUNDS = 100


@dataclass(frozen=True)
class KernelConfig:
    """Gaussian kernel bandwidth; bandwidth=None selects the median heuristic."""

    bandwidth: float | None = None
    median_max_rows: int = 2000

    def __post_init__(self):
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ConfigError(f"kernel bandwidth must be > 0, got {self.bandwidth}")
        if self.median_max_rows < 2:
            raise ConfigError("median_max_rows must be >= 2")


def gaussian_kernel(x: np.ndarray, y: np.ndarray, sigma: float) -> float:
    """exp(-||x - y||^2 / (2 sigma^2)) for two equal-length vectors."""
    if sigma <= 0:
        raise ConfigError(f"kernel bandwidth must be > 0, got {sigma}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ConfigError(f"kernel inputs must match, got {x.shape} vs {y.shape}")
    return float(np.exp(-np.sum((x - y) ** 2) / (2.0 * sigma**2)))


def _sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Pairwise squared euclidean distances, (n, m)."""
    xn = (x**2).sum(axis=1)[:, None]
    yn = (y**2).sum(axis=1)[None, :]
    d2 = xn + yn - 2.0 * (x @ y.T)
    return np.maximum(d2, 0.0)


def median_heuristic_sigma(rows: np.ndarray, max_rows: int = 2000) -> float:
    """Bandwidth from the median of pairwise squared distances: sigma^2 = median/2.

    Rows beyond `max_rows` are subsampled with a deterministic even stride so
    repeated calls on the same features give the same bandwidth.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.shape[0] < 2:
        raise SampleSizeError("median heuristic needs at least 2 rows")
    if rows.shape[0] > max_rows:
        stride = int(np.ceil(rows.shape[0] / max_rows))
        rows = rows[::stride]
    d2 = _sq_dists(rows, rows)
    med = float(np.median(d2[np.triu_indices(rows.shape[0], k=1)]))
    if med <= 0.0:
        return 1.0  # degenerate cloud; any bandwidth gives kernel 1 everywhere
    return float(np.sqrt(med / 2.0))


def resolve_sigma(rows: np.ndarray, kernel: KernelConfig) -> float:
    if kernel.bandwidth is not None:
        return kernel.bandwidth
    return median_heuristic_sigma(rows, kernel.median_max_rows)


def mmd2_unbiased(x: np.ndarray, y: np.ndarray, sigma: float) -> float:
    """Unbiased squared-MMD estimate between sample sets x (n, d) and y (m, d).

    Three-term estimator with 1/(n(n-1)), 1/(m(m-1)) and -2/(nm) weights;
    self-pairs are excluded from the within-set sums, so the estimate can be
    slightly negative.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = x.shape[0], y.shape[0]
    if n < 2 or m < 2:
        raise SampleSizeError(f"need >= 2 samples per set, got {n} and {m}")
    gamma = 1.0 / (2.0 * sigma**2)
    kxx = np.exp(-gamma * _sq_dists(x, x))
    kyy = np.exp(-gamma * _sq_dists(y, y))
    kxy = np.exp(-gamma * _sq_dists(x, y))
    sxx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    return float(sxx + syy - 2.0 * kxy.mean())


def mmd_matrix(
    features_by_domain: list[np.ndarray], kernel: KernelConfig = KernelConfig()
) -> np.ndarray:
    """Squared-MMD matrix between every pair of domains.

    The bandwidth is resolved once from the pooled rows, negatives from the
    unbiased estimator are clamped to 0, and the result is symmetrized by
    averaging; the diagonal is 0 by convention.
    """
    n_dom = len(features_by_domain)
    feats = [np.asarray(rows, dtype=float) for rows in features_by_domain]
    for i, rows in enumerate(feats):
        if rows.shape[0] < 2:
            raise SampleSizeError(f"domain {i} has fewer than 2 feature rows")
    sigma = resolve_sigma(np.vstack(feats), kernel)
    gamma = 1.0 / (2.0 * sigma**2)

    # each within-domain kernel sum is shared by every pair the domain is in
    within = np.empty(n_dom)
    for i, rows in enumerate(feats):
        k = np.exp(-gamma * _sq_dists(rows, rows))
        n = rows.shape[0]
        within[i] = (k.sum() - np.trace(k)) / (n * (n - 1))

    out = np.zeros((n_dom, n_dom))
    for i in range(n_dom):
        for j in range(i + 1, n_dom):
            cross = np.exp(-gamma * _sq_dists(feats[i], feats[j])).mean()
            v = within[i] + within[j] - 2.0 * cross
            out[i, j] = out[j, i] = max(v, 0.0)
    return out


@dataclass
class SuperdomainAssignment:
    """Mapping of each subject domain to one of k superdomains."""

    k: int
    assign: np.ndarray  # (n_domains,) int, values in [0, k)
    medoids: np.ndarray  # (k,) int subject ids
    objective_trace: list[float] = field(default_factory=list)

    def members(self, sd: int) -> np.ndarray:
        return np.flatnonzero(self.assign == sd)

    @classmethod
    def trivial(cls, n_domains: int) -> "SuperdomainAssignment":
        """Everything in a single superdomain (no aggregation)."""
        return cls(k=1, assign=np.zeros(n_domains, dtype=int), medoids=np.zeros(1, dtype=int))


def medoid_cost(dist: np.ndarray, assign: np.ndarray, medoids: np.ndarray) -> float:
    """Sum over domains of the distance to their superdomain's medoid."""
    return float(dist[np.arange(dist.shape[0]), medoids[assign]].sum())


def pairwise_within_cost(dist: np.ndarray, assign: np.ndarray) -> float:
    """Sum of within-superdomain pairwise distances, each unordered pair once."""
    total = 0.0
    for sd in np.unique(assign):
        idx = np.flatnonzero(assign == sd)
        sub = dist[np.ix_(idx, idx)]
        total += sub.sum() / 2.0
    return float(total)


def _seed_medoids(dist: np.ndarray, k: int, rng: np.random.Generator) -> list[int]:
    """k-means++-style seeding: first medoid uniform, then proportional to the
    squared distance (matrix entry) to the nearest already-chosen medoid."""
    n = dist.shape[0]
    medoids = [int(rng.integers(n))]
    while len(medoids) < k:
        w = dist[:, medoids].min(axis=1).copy()
        w[medoids] = 0.0
        if w.sum() <= 0.0:  # duplicates everywhere; fall back to uniform
            rest = [i for i in range(n) if i not in medoids]
            medoids.append(int(rng.choice(rest)))
        else:
            medoids.append(int(rng.choice(n, p=w / w.sum())))
    return medoids


def aggregate(
    dist: np.ndarray, k: int, rng: np.random.Generator | None = None
) -> SuperdomainAssignment:
    """Cluster n domains into k superdomains over a squared-MMD matrix.

    Alternates (a) assigning each domain to the nearest medoid and (b)
    re-picking each superdomain's medoid as the member minimizing the
    within-cluster distance sum, until a fixed point or MAX_MEDOID_ROUNDS.
    An emptied superdomain is repaired by stealing the domain farthest from
    its current medoid. Ties always break toward the lowest subject id.
    """
    dist = np.asarray(dist, dtype=float)
    n = dist.shape[0]
    if dist.shape != (n, n):
        raise ConfigError(f"distance matrix must be square, got {dist.shape}")
    if not 1 <= k <= n:
        raise ConfigError(f"superdomain count k={k} must be in [1, {n}]")
    if rng is None:
        rng = np.random.default_rng(0)

    medoids = np.array(sorted(_seed_medoids(dist, k, rng)), dtype=int)
    trace: list[float] = []

    def assign_step(medoids):
        # argmin takes the first (lowest-id) medoid column on ties
        assign = dist[:, medoids].argmin(axis=1)
        for sd in range(k):
            if not (assign == sd).any():
                # repair: steal the domain farthest from its current medoid;
                # only domains leaving a multi-member cluster may move, except
                # that the empty cluster may always reclaim its own medoid.
                counts = np.bincount(assign, minlength=k)
                movable = counts[assign] > 1
                movable[medoids] = False
                movable[medoids[sd]] = counts[assign[medoids[sd]]] > 1
                to_medoid = dist[np.arange(n), medoids[assign]].copy()
                to_medoid[~movable] = -np.inf
                if np.isneginf(to_medoid.max()):
                    thief = int(medoids[sd])  # duplicate-row corner: reclaim
                else:
                    thief = int(to_medoid.argmax())
                assign[thief] = sd
                medoids[sd] = thief
        return assign

    for _ in range(MAX_MEDOID_ROUNDS):
        assign = assign_step(medoids)
        trace.append(medoid_cost(dist, assign, medoids))
        new_medoids = medoids.copy()
        for sd in range(k):
            idx = np.flatnonzero(assign == sd)
            cost = dist[np.ix_(idx, idx)].sum(axis=0)
            new_medoids[sd] = idx[int(cost.argmin())]  # argmin: lowest id on ties
        if np.array_equal(new_medoids, medoids):
            break
        medoids = new_medoids
    else:
        assign = assign_step(medoids)
        trace.append(medoid_cost(dist, assign, medoids))

    return SuperdomainAssignment(k=k, assign=assign, medoids=medoids, objective_trace=trace)


def vector_distance_matrix(mmd_mat: np.ndarray) -> np.ndarray:
    """Euclidean distances between the rows of the squared-MMD matrix.

    Alternative aggregation geometry: each domain is represented by its
    vector of squared MMDs to every domain, and domains are clustered by the
    distances between those vectors.
    """
    diffs = mmd_mat[:, None, :] - mmd_mat[None, :, :]
    return np.sqrt((diffs**2).sum(axis=-1))
