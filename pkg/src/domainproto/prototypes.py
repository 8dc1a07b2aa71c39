"""Per-superdomain domain prototypes and per-(superdomain, class) class
prototypes, maintained across epochs with a decaying blend.

A prototype is the mean of its feature rows. Stored prototypes are blended
with each epoch's fresh statistics: mu <- (1 - alpha) * mu_old + alpha *
mu_fresh, where alpha decays from alpha_high to alpha_low over training so
early epochs adapt fast and late epochs stay stable. Superdomain labels can
change when aggregation is re-run, so banks are re-keyed by matching new
superdomains to old ones before blending.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SampleSizeError


@dataclass(frozen=True)
class AlphaSchedule:
    """Blend-weight decay: alpha(t) = low + (high - low) * (1 - t/max_epoch)^power."""

    alpha_high: float = 0.8
    alpha_low: float = 0.2
    power: float = 2.0
    max_epoch: int = 100

    def __post_init__(self):
        if not (0.0 < self.alpha_low <= self.alpha_high <= 1.0):
            raise ConfigError(
                f"need 0 < alpha_low <= alpha_high <= 1, got {self.alpha_low}, {self.alpha_high}"
            )
        if self.power <= 0:
            raise ConfigError(f"power must be > 0, got {self.power}")
        if self.max_epoch <= 0:
            raise ConfigError(f"max_epoch must be > 0, got {self.max_epoch}")


def alpha_at(t: float, sched: AlphaSchedule) -> float:
    if not 0 <= t <= sched.max_epoch:
        raise ConfigError(f"epoch {t} outside [0, {sched.max_epoch}]")
    return sched.alpha_low + (sched.alpha_high - sched.alpha_low) * (
        1.0 - t / sched.max_epoch
    ) ** sched.power


def mean_prototype(rows: np.ndarray) -> np.ndarray:
    """Arithmetic mean of (count, dim) feature rows."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise SampleSizeError("prototype needs at least one feature row")
    return rows.mean(axis=0)


class PrototypeBank:
    """K domain prototypes and K x M class prototypes with init tracking.

    Slots start uninitialized; the first fresh statistic fills a slot
    directly, later ones blend in with weight alpha. Reading an
    uninitialized slot is the caller's bug, guarded by the masks.
    """

    def __init__(self, k: int, n_classes: int, dim: int):
        if k <= 0 or n_classes <= 0 or dim <= 0:
            raise ConfigError("bank dimensions must be positive")
        self.k = k
        self.n_classes = n_classes
        self.dim = dim
        self.mu_d = np.zeros((k, dim))
        self.mu_c = np.zeros((k, n_classes, dim))
        self.d_init = np.zeros(k, dtype=bool)
        self.c_init = np.zeros((k, n_classes), dtype=bool)
        self.epoch = 0

    def copy(self) -> "PrototypeBank":
        out = PrototypeBank(self.k, self.n_classes, self.dim)
        out.mu_d = self.mu_d.copy()
        out.mu_c = self.mu_c.copy()
        out.d_init = self.d_init.copy()
        out.c_init = self.c_init.copy()
        out.epoch = self.epoch
        return out

    def initialized_classes(self, sd: int) -> np.ndarray:
        return np.flatnonzero(self.c_init[sd])


def compute_fresh_prototypes(
    x_d: np.ndarray,
    x_c: np.ndarray,
    class_labels: np.ndarray,
    superdomains: np.ndarray,
    k: int,
    n_classes: int,
):
    """Epoch statistics: per-superdomain domain means and per-(superdomain,
    class) class means over the given feature rows.

    Returns (mu_d, d_mask, mu_c, c_mask); masked-out slots saw no rows.
    """
    dim = x_d.shape[1]
    mu_d = np.zeros((k, dim))
    d_mask = np.zeros(k, dtype=bool)
    mu_c = np.zeros((k, n_classes, dim))
    c_mask = np.zeros((k, n_classes), dtype=bool)
    for sd in range(k):
        in_sd = superdomains == sd
        if not in_sd.any():
            continue
        mu_d[sd] = x_d[in_sd].mean(axis=0)
        d_mask[sd] = True
        for m in range(n_classes):
            sel = in_sd & (class_labels == m)
            if sel.any():
                mu_c[sd, m] = x_c[sel].mean(axis=0)
                c_mask[sd, m] = True
    return mu_d, d_mask, mu_c, c_mask


def adaptive_update(
    bank: PrototypeBank,
    fresh_mu_d: np.ndarray,
    d_mask: np.ndarray,
    fresh_mu_c: np.ndarray,
    c_mask: np.ndarray,
    t: float,
    sched: AlphaSchedule,
) -> PrototypeBank:
    """Blend fresh epoch statistics into the bank; returns an updated copy.

    Initialized slots move to (1 - alpha) * old + alpha * fresh; slots seen
    for the first time take the fresh value; slots with no fresh data keep
    their old value.
    """
    if fresh_mu_d.shape != bank.mu_d.shape or fresh_mu_c.shape != bank.mu_c.shape:
        raise ConfigError("fresh prototype shapes do not match the bank")
    alpha = alpha_at(t, sched)
    out = bank.copy()
    for sd in range(bank.k):
        if d_mask[sd]:
            if out.d_init[sd]:
                out.mu_d[sd] = (1.0 - alpha) * out.mu_d[sd] + alpha * fresh_mu_d[sd]
            else:
                out.mu_d[sd] = fresh_mu_d[sd]
                out.d_init[sd] = True
        for m in range(bank.n_classes):
            if c_mask[sd, m]:
                if out.c_init[sd, m]:
                    out.mu_c[sd, m] = (1.0 - alpha) * out.mu_c[sd, m] + alpha * fresh_mu_c[sd, m]
                else:
                    out.mu_c[sd, m] = fresh_mu_c[sd, m]
                    out.c_init[sd, m] = True
    out.epoch = int(t)
    return out


def rekey_bank(
    bank: PrototypeBank, fresh_mu_d: np.ndarray, d_mask: np.ndarray, new_k: int
) -> PrototypeBank:
    """Carry prototype history across a re-aggregation.

    New superdomain labels have no relation to old ones, so each new
    superdomain greedily claims the nearest old slot by domain-prototype
    distance (closest pairs first, one-to-one). Unmatched new slots start
    uninitialized.
    """
    out = PrototypeBank(new_k, bank.n_classes, bank.dim)
    out.epoch = bank.epoch
    old_ids = np.flatnonzero(bank.d_init)
    new_ids = np.flatnonzero(d_mask[:new_k])
    if old_ids.size == 0 or new_ids.size == 0:
        return out
    d2 = ((fresh_mu_d[new_ids][:, None, :] - bank.mu_d[old_ids][None, :, :]) ** 2).sum(-1)
    pairs = sorted(
        ((d2[a, b], int(new_ids[a]), int(old_ids[b])) for a in range(len(new_ids)) for b in range(len(old_ids)))
    )
    taken_new: set[int] = set()
    taken_old: set[int] = set()
    for _, new_sd, old_sd in pairs:
        if new_sd in taken_new or old_sd in taken_old:
            continue
        taken_new.add(new_sd)
        taken_old.add(old_sd)
        out.mu_d[new_sd] = bank.mu_d[old_sd]
        out.d_init[new_sd] = True
        out.mu_c[new_sd] = bank.mu_c[old_sd]
        out.c_init[new_sd] = bank.c_init[old_sd]
    return out
