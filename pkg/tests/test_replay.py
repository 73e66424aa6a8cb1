import numpy as np
import pytest
from scipy import stats

from laber.errors import AllZeroError, InsufficientDataError, NegativePriorityError, OutOfRangeError, ShapeMismatchError
from laber.replay import (
    PriorityStore,
    ReplayBuffer,
    Transition,
    ger_store,
    per_store,
    sample_prioritized,
    sample_uniform,
    sample_uniform_large_batch,
    update_priorities,
)
from laber.sampling import PriorityVector, normalize_priorities


def transition(k, dim=2, n_actions=2):
    return Transition(np.full(dim, float(k)), k % n_actions, float(k), np.full(dim, k + 0.5), k % 3 == 0)


def filled(n, capacity=None, dim=2):
    buf = ReplayBuffer(capacity or n, dim, 2)
    for k in range(n):
        buf.push(transition(k, dim))
    return buf


class TestRing:
    def test_first_push(self):
        buf = ReplayBuffer(4, 2, 2)
        assert buf.push(transition(0)) == 0
        assert len(buf) == 1

    def test_wraparound_indices(self):
        buf = ReplayBuffer(4, 2, 2)
        assert [buf.push(transition(k)) for k in range(5)] == [0, 1, 2, 3, 0]
        assert len(buf) == 4

    @pytest.mark.parametrize("extra", [0, 1, 3, 4, 9])
    def test_holds_last_capacity_in_order(self, extra):
        buf = filled(4 + extra, capacity=4)
        rewards = [t.reward for t in buf.in_order()]
        assert rewards == [float(k) for k in range(extra, 4 + extra)]

    def test_get_roundtrip(self):
        buf = filled(3)
        t = buf.get(2)
        assert t.action == 0 and t.reward == 2.0 and not t.done
        np.testing.assert_array_equal(t.next_state, [2.5, 2.5])

    def test_shape_checks(self):
        buf = ReplayBuffer(4, 2, 2)
        with pytest.raises(ShapeMismatchError):
            buf.push(Transition(np.zeros(3), 0, 0.0, np.zeros(2), False))
        with pytest.raises(ShapeMismatchError):
            buf.push(Transition(np.zeros(2), 2, 0.0, np.zeros(2), False))
        with pytest.raises(OutOfRangeError):
            buf.get(0)

    def test_dump_roundtrip(self, tmp_path):
        buf = filled(7, capacity=5, dim=3)
        path = tmp_path / "buf.bin"
        buf.save(path)
        back = ReplayBuffer.load(path)
        assert (back.size, back.cursor, back.capacity) == (buf.size, buf.cursor, buf.capacity)
        for a, b in zip(back.in_order(), buf.in_order()):
            np.testing.assert_array_equal(a.state, b.state)
            assert (a.action, a.reward, a.done) == (b.action, b.reward, b.done)


class TestPriorityStore:
    def test_new_entry_gets_max_priority(self):
        buf = ReplayBuffer(8, 2, 2)
        store = buf.attach(PriorityStore(8, alpha=1.0, c=0.0))
        for k in range(4):
            buf.push(transition(k))
        store.update([0, 1, 2, 3], [0.5, 3.0, 0.1, 0.2])
        i = buf.push(transition(4))
        assert store.raw[i] == 3.0
        idx, _ = store.sample(100_000, np.random.default_rng(0))
        freq = np.mean(idx == i)
        assert freq == pytest.approx(3.0 / 6.8, abs=5 * np.sqrt(0.25 / 100_000))

    def test_update_isolation_against_shadow(self):
        rng = np.random.default_rng(1)
        n = 50
        buf = ReplayBuffer(n, 1, 2)
        store = buf.attach(PriorityStore(n, alpha=0.6, c=1e-10))
        shadow = np.zeros(n)
        seen = 1.0
        for k in range(n):
            buf.push(transition(k, dim=1))
            shadow[k] = store.max_priority
        for _ in range(10_000):
            idx = rng.integers(n, size=rng.integers(1, 5))
            vals = rng.exponential(size=idx.size) * 3
            before = store.raw.copy()
            update_priorities(store, idx, vals)
            for i, v in zip(idx, vals):
                shadow[i] = v
            seen = max(seen, vals.max())
            untouched = np.setdiff1d(np.arange(n), idx)
            assert np.array_equal(store.raw[untouched], before[untouched])
        np.testing.assert_array_equal(store.raw, shadow)
        transformed = (shadow + 1e-10) ** 0.6
        assert store.tree.total == pytest.approx(transformed.sum(), abs=1e-9)
        assert store.max_priority == seen

    def test_update_errors(self):
        buf = filled(3, capacity=4)
        store = PriorityStore(4)
        buf.attach(store)
        buf.push(transition(3))
        with pytest.raises(OutOfRangeError):
            update_priorities(store, [4], [1.0])
        with pytest.raises(NegativePriorityError):
            update_priorities(store, [0], [-1.0])
        with pytest.raises(NegativePriorityError):
            update_priorities(store, [0], [np.nan])

    def test_all_zero_rejected(self):
        buf = ReplayBuffer(2, 2, 2)
        store = buf.attach(PriorityStore(2, alpha=1.0, c=0.0))
        buf.push(transition(0))
        buf.push(transition(1))
        store.update([0, 1], [0.0, 0.0])
        store.max_priority = 0.0
        with pytest.raises(AllZeroError):
            sample_prioritized(buf, store, 4, np.random.default_rng(0))

    def test_defaults(self):
        assert (per_store(4).alpha, per_store(4).c) == (0.6, 1e-10)
        assert (ger_store(4).alpha, ger_store(4).c) == (1.0, 0.0)


class TestSamplePrioritized:
    def make(self, priorities, alpha=1.0, c=0.0):
        buf = ReplayBuffer(len(priorities), 2, 2)
        store = buf.attach(PriorityStore(len(priorities), alpha, c))
        for k in range(len(priorities)):
            buf.push(transition(k))
        store.update(np.arange(len(priorities)), priorities)
        return buf, store

    def test_counter_example_frequencies(self):
        buf, store = self.make([1.0, 4.0])
        n = 1_000_000
        batch = sample_prioritized(buf, store, n, np.random.default_rng(2))
        freq = np.bincount(batch.indices, minlength=2) / n
        sigma = np.sqrt(0.2 * 0.8 / n)
        assert np.all(np.abs(freq - [0.2, 0.8]) < 3 * sigma)
        np.testing.assert_allclose(batch.weights[batch.indices == 0][:1], [1 / (2 * 0.2)])

    def test_chi_square_against_normalized(self):
        pri = np.random.default_rng(3).exponential(size=12)
        buf, store = self.make(pri, alpha=0.6, c=1e-10)
        n = 1_000_000
        batch = sample_prioritized(buf, store, n, np.random.default_rng(4))
        expected = normalize_priorities(PriorityVector(pri, 0.6, 1e-10)) * n
        _, pvalue = stats.chisquare(np.bincount(batch.indices, minlength=12), expected)
        assert pvalue > 1e-3

    def test_equal_priorities_are_uniform(self):
        buf, store = self.make([2.0] * 8)
        n = 200_000
        batch = sample_prioritized(buf, store, n, np.random.default_rng(5))
        _, pvalue = stats.chisquare(np.bincount(batch.indices, minlength=8))
        assert pvalue > 1e-3
        np.testing.assert_allclose(batch.weights, 1.0)

    def test_point_mass(self):
        buf, store = self.make([0.0, 0.0, 5.0, 0.0])
        batch = sample_prioritized(buf, store, 1000, np.random.default_rng(6))
        assert np.all(batch.indices == 2)


class TestLargeBatch:
    def test_exhaustive_is_permutation(self):
        buf = filled(12)
        batch = sample_uniform_large_batch(buf, 1, 12, np.random.default_rng(7))
        assert sorted(batch.indices) == list(range(12))
        np.testing.assert_array_equal(batch.probs, 1 / 12)

    def test_distinct_and_marginal_frequency(self):
        n, m, b, reps = 20, 2, 3, 100_000
        buf = filled(n)
        rng = np.random.default_rng(8)
        counts = np.zeros(n)
        for _ in range(reps):
            idx = sample_uniform_large_batch(buf, m, b, rng).indices
            assert len(set(idx)) == m * b
            counts[idx] += 1
        p = m * b / n
        sigma = np.sqrt(p * (1 - p) / reps)
        # 3 sigma per index, widened to ~4 sigma (Bonferroni over 20 indices) for the family
        z = stats.norm.isf(0.0027 / 2 / n)
        assert np.all(np.abs(counts / reps - p) < z * sigma)

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            sample_uniform_large_batch(filled(5), 2, 3, np.random.default_rng(0))


def test_sample_uniform():
    buf = filled(10)
    batch = sample_uniform(buf, 64, np.random.default_rng(9))
    assert batch.indices.min() >= 0 and batch.indices.max() < 10
    np.testing.assert_array_equal(batch.weights, 1.0)
    with pytest.raises(InsufficientDataError):
        sample_uniform(ReplayBuffer(3, 1, 1), 2, np.random.default_rng(0))
