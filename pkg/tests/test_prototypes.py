import numpy as np
import pytest

from domainproto.errors import ConfigError, SampleSizeError
from domainproto.prototypes import (
    AlphaSchedule,
    PrototypeBank,
    adaptive_update,
    alpha_at,
    compute_fresh_prototypes,
    mean_prototype,
    rekey_bank,
)

SCHED = AlphaSchedule(alpha_high=0.8, alpha_low=0.2, power=2.0, max_epoch=100)


class TestMeanPrototype:
    def test_two_unit_rows(self):
        rows = np.array([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_array_equal(mean_prototype(rows), [0.5, 0.5])

    def test_single_row_is_itself(self):
        row = np.array([[3.0, -1.0, 2.0]])
        np.testing.assert_array_equal(mean_prototype(row), row[0])

    def test_matches_sequential_sum_oracle(self):
        rng = np.random.default_rng(0)
        rows = rng.normal(size=(100, 16))
        acc = np.zeros(16)
        for r in rows:
            acc += r
        np.testing.assert_allclose(mean_prototype(rows), acc / 100.0, atol=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(SampleSizeError):
            mean_prototype(np.zeros((0, 4)))

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        rows = rng.normal(size=(20, 5))
        perm = rng.permutation(20)
        np.testing.assert_allclose(mean_prototype(rows), mean_prototype(rows[perm]), atol=1e-12)


class TestAlphaSchedule:
    def test_boundary_values(self):
        assert alpha_at(0, SCHED) == pytest.approx(0.8)
        assert alpha_at(100, SCHED) == pytest.approx(0.2)

    def test_midpoint_with_power_two(self):
        assert alpha_at(50, SCHED) == pytest.approx(0.2 + 0.6 * 0.25)

    def test_monotone_non_increasing_and_bounded(self):
        vals = [alpha_at(t, SCHED) for t in range(101)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert all(0.2 <= v <= 0.8 for v in vals)

    def test_out_of_range_rejected(self):
        with pytest.raises(ConfigError):
            alpha_at(-1, SCHED)
        with pytest.raises(ConfigError):
            alpha_at(101, SCHED)

    def test_bad_schedule_rejected(self):
        with pytest.raises(ConfigError):
            AlphaSchedule(alpha_high=0.2, alpha_low=0.8)
        with pytest.raises(ConfigError):
            AlphaSchedule(power=0.0)
        with pytest.raises(ConfigError):
            AlphaSchedule(max_epoch=0)


def fresh_like(bank, d_val, c_val):
    mu_d = np.full_like(bank.mu_d, d_val)
    mu_c = np.full_like(bank.mu_c, c_val)
    return mu_d, np.ones(bank.k, bool), mu_c, np.ones((bank.k, bank.n_classes), bool)


class TestAdaptiveUpdate:
    def test_alpha_one_replaces(self):
        sched = AlphaSchedule(alpha_high=1.0, alpha_low=1.0, power=1.0, max_epoch=10)
        bank = PrototypeBank(2, 2, 3)
        bank = adaptive_update(bank, *fresh_like(bank, 5.0, -5.0), t=1, sched=sched)
        bank = adaptive_update(bank, *fresh_like(bank, 2.0, 7.0), t=2, sched=sched)
        assert (bank.mu_d == 2.0).all()
        assert (bank.mu_c == 7.0).all()

    def test_half_alpha_midpoint(self):
        sched = AlphaSchedule(alpha_high=0.5, alpha_low=0.5, power=1.0, max_epoch=10)
        bank = PrototypeBank(1, 1, 2)
        bank = adaptive_update(bank, *fresh_like(bank, 0.0, 0.0), t=1, sched=sched)
        bank = adaptive_update(bank, *fresh_like(bank, 2.0, 2.0), t=2, sched=sched)
        assert (bank.mu_d == 1.0).all()
        assert (bank.mu_c == 1.0).all()

    def test_uninitialized_slot_takes_fresh_directly(self):
        bank = PrototypeBank(2, 2, 2)
        mu_d, d_mask, mu_c, c_mask = fresh_like(bank, 3.0, 4.0)
        d_mask[1] = False
        c_mask[1, :] = False
        bank = adaptive_update(bank, mu_d, d_mask, mu_c, c_mask, t=0, sched=SCHED)
        assert bank.d_init.tolist() == [True, False]
        assert (bank.mu_d[0] == 3.0).all()
        assert (bank.mu_d[1] == 0.0).all()  # untouched storage

    def test_slot_without_fresh_data_keeps_value(self):
        bank = PrototypeBank(1, 2, 2)
        bank = adaptive_update(bank, *fresh_like(bank, 1.0, 1.0), t=0, sched=SCHED)
        mu_d, d_mask, mu_c, c_mask = fresh_like(bank, 9.0, 9.0)
        d_mask[:] = False
        c_mask[:, 1] = False
        bank2 = adaptive_update(bank, mu_d, d_mask, mu_c, c_mask, t=1, sched=SCHED)
        np.testing.assert_array_equal(bank2.mu_d, bank.mu_d)
        np.testing.assert_array_equal(bank2.mu_c[0, 1], bank.mu_c[0, 1])
        assert (bank2.mu_c[0, 0] != bank.mu_c[0, 0]).all()

    def test_matches_unrolled_recurrence_oracle(self):
        rng = np.random.default_rng(2)
        sched = AlphaSchedule(alpha_high=0.8, alpha_low=0.2, power=2.0, max_epoch=20)
        bank = PrototypeBank(2, 3, 4)
        expected_d = None
        for t in range(21):
            mu_d = rng.normal(size=bank.mu_d.shape)
            mu_c = rng.normal(size=bank.mu_c.shape)
            bank = adaptive_update(
                bank, mu_d, np.ones(2, bool), mu_c, np.ones((2, 3), bool), t=t, sched=sched
            )
            a = alpha_at(t, sched)
            expected_d = mu_d if expected_d is None else (1 - a) * expected_d + a * mu_d
        np.testing.assert_allclose(bank.mu_d, expected_d, atol=1e-9)

    def test_convex_combination_property(self):
        rng = np.random.default_rng(3)
        bank = PrototypeBank(1, 1, 5)
        bank = adaptive_update(bank, *fresh_like(bank, 0.0, 0.0), t=0, sched=SCHED)
        old = rng.normal(size=5)
        bank.mu_d[0] = old.copy()
        fresh = rng.normal(size=5)
        mu_d = fresh[None, :]
        out = adaptive_update(
            bank, mu_d, np.ones(1, bool), bank.mu_c.copy(), np.ones((1, 1), bool), t=50, sched=SCHED
        )
        lo = np.minimum(old, fresh) - 1e-12
        hi = np.maximum(old, fresh) + 1e-12
        assert ((out.mu_d[0] >= lo) & (out.mu_d[0] <= hi)).all()

    def test_contracts_to_stationary_fresh_value(self):
        sched = AlphaSchedule(alpha_high=0.4, alpha_low=0.4, power=1.0, max_epoch=50)
        bank = PrototypeBank(1, 1, 3)
        target = np.array([1.0, 2.0, 3.0])
        bank = adaptive_update(
            bank, np.zeros((1, 3)), np.ones(1, bool), np.zeros((1, 1, 3)), np.ones((1, 1), bool),
            t=0, sched=sched,
        )
        err = np.linalg.norm(bank.mu_d[0] - target)
        for t in range(1, 30):
            bank = adaptive_update(
                bank, target[None, :], np.ones(1, bool), bank.mu_c.copy(),
                np.zeros((1, 1), bool), t=t, sched=sched,
            )
            new_err = np.linalg.norm(bank.mu_d[0] - target)
            assert new_err == pytest.approx(0.6 * err, rel=1e-9)
            err = new_err
        assert err < 1e-5


class TestComputeFresh:
    def test_class_filter_correctness(self):
        x_d = np.arange(8, dtype=float).reshape(4, 2)
        x_c = x_d * 10.0
        labels = np.array([0, 1, 0, 1])
        sds = np.array([0, 0, 0, 0])
        mu_d, d_mask, mu_c, c_mask = compute_fresh_prototypes(x_d, x_c, labels, sds, k=1, n_classes=2)
        assert d_mask[0] and c_mask[0].all()
        np.testing.assert_allclose(mu_d[0], x_d.mean(axis=0))
        np.testing.assert_allclose(mu_c[0, 0], x_c[[0, 2]].mean(axis=0))
        np.testing.assert_allclose(mu_c[0, 1], x_c[[1, 3]].mean(axis=0))

    def test_absent_class_is_masked(self):
        x = np.ones((3, 2))
        labels = np.array([0, 0, 0])
        sds = np.array([0, 0, 1])
        mu_d, d_mask, mu_c, c_mask = compute_fresh_prototypes(x, x, labels, sds, k=2, n_classes=2)
        assert c_mask[0, 0] and not c_mask[0, 1]
        assert c_mask[1, 0] and not c_mask[1, 1]

    def test_empty_superdomain_masked(self):
        x = np.ones((2, 2))
        mu_d, d_mask, _, _ = compute_fresh_prototypes(
            x, x, np.zeros(2, int), np.zeros(2, int), k=3, n_classes=1
        )
        assert d_mask.tolist() == [True, False, False]

    def test_random_case_matches_filtered_sum_oracle(self):
        rng = np.random.default_rng(4)
        n, k, m, d = 200, 3, 4, 6
        x_d = rng.normal(size=(n, d))
        x_c = rng.normal(size=(n, d))
        labels = rng.integers(0, m, size=n)
        sds = rng.integers(0, k, size=n)
        mu_d, d_mask, mu_c, c_mask = compute_fresh_prototypes(x_d, x_c, labels, sds, k, m)
        for sd in range(k):
            sel = sds == sd
            if sel.any():
                np.testing.assert_allclose(mu_d[sd], x_d[sel].mean(axis=0), atol=1e-9)
            for cls in range(m):
                both = sel & (labels == cls)
                if both.any():
                    assert c_mask[sd, cls]
                    np.testing.assert_allclose(mu_c[sd, cls], x_c[both].mean(axis=0), atol=1e-9)


class TestRekey:
    def test_relabeled_superdomains_keep_history(self):
        bank = PrototypeBank(2, 2, 3)
        mu_d = np.array([[0.0, 0.0, 0.0], [10.0, 10.0, 10.0]])
        mu_c = np.zeros((2, 2, 3))
        mu_c[1] = 5.0
        bank = adaptive_update(bank, mu_d, np.ones(2, bool), mu_c, np.ones((2, 2), bool), 0, SCHED)
        # new aggregation swaps the labels: fresh stats arrive permuted
        fresh = mu_d[[1, 0]] + 0.1
        out = rekey_bank(bank, fresh, np.ones(2, bool), new_k=2)
        np.testing.assert_array_equal(out.mu_d[0], bank.mu_d[1])
        np.testing.assert_array_equal(out.mu_d[1], bank.mu_d[0])
        np.testing.assert_array_equal(out.mu_c[0], bank.mu_c[1])
        assert out.d_init.all()

    def test_k_change_leaves_new_slots_uninitialized(self):
        bank = PrototypeBank(1, 1, 2)
        bank = adaptive_update(
            bank, np.zeros((1, 2)), np.ones(1, bool), np.zeros((1, 1, 2)), np.ones((1, 1), bool),
            0, SCHED,
        )
        fresh = np.array([[0.1, 0.1], [8.0, 8.0], [9.0, 9.0]])
        out = rekey_bank(bank, fresh, np.ones(3, bool), new_k=3)
        assert out.d_init.tolist() == [True, False, False]

    def test_empty_bank_rekeys_to_empty(self):
        bank = PrototypeBank(2, 1, 2)
        out = rekey_bank(bank, np.zeros((3, 2)), np.ones(3, bool), new_k=3)
        assert not out.d_init.any()
        assert out.k == 3
