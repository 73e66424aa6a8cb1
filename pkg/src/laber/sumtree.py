"""Binary sum-tree over non-negative leaf priorities.

Nodes are stored heap-style in a flat array: the root lives at index 1 and
the children of node ``k`` at ``2k`` and ``2k + 1``. Leaves occupy
``[capacity, 2 * capacity)``. Capacity is rounded up to a power of two and
unused leaves hold zero, so they are never sampled.
"""

import math

import numpy as np

from .errors import EmptyTreeError, NegativePriorityError, OutOfRangeError

# Internal sums are rebuilt from the leaves after this many single-leaf updates.
REBUILD_PERIOD = 2**16


def _next_pow2(n):
    return 1 if n <= 1 else 1 << (int(n) - 1).bit_length()


class SumTree:
    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.size = int(capacity)
        self.capacity = _next_pow2(capacity)
        self.depth = self.capacity.bit_length() - 1
        self.nodes = np.zeros(2 * self.capacity, dtype=np.float64)
        self._updates = 0

    @property
    def total(self):
        return float(self.nodes[1])

    @property
    def leaves(self):
        return self.nodes[self.capacity:]

    def __len__(self):
        return self.capacity

    def __getitem__(self, index):
        self._check_index(index)
        return float(self.nodes[self.capacity + index])

    def _check_index(self, index):
        if not 0 <= index < self.capacity:
            raise OutOfRangeError(f"leaf index {index} outside [0, {self.capacity})")

    def set(self, index, priority):
        """Set one leaf and refresh its ancestors in O(log capacity)."""
        index = int(index)
        self._check_index(index)
        priority = float(priority)
        if not math.isfinite(priority):
            raise NegativePriorityError(f"priority must be finite, got {priority}")
        if priority < 0:
            raise NegativePriorityError(f"priority must be >= 0, got {priority}")
        k = self.capacity + index
        nodes = self.nodes
        nodes[k] = priority
        k >>= 1
        while k >= 1:
            nodes[k] = nodes[2 * k] + nodes[2 * k + 1]
            k >>= 1
        self._updates += 1
        if self._updates >= REBUILD_PERIOD:
            self.rebuild()

    def set_many(self, indices, priorities):
        for i, p in zip(np.asarray(indices).ravel(), np.asarray(priorities, dtype=float).ravel()):
            self.set(i, p)

    def load(self, priorities):
        """Replace every leaf at once (missing trailing leaves become zero)."""
        priorities = np.asarray(priorities, dtype=np.float64).ravel()
        if priorities.size > self.capacity:
            raise OutOfRangeError(f"{priorities.size} priorities exceed capacity {self.capacity}")
        if not np.all(np.isfinite(priorities)) or np.any(priorities < 0):
            raise NegativePriorityError("priorities must be finite and >= 0")
        self.nodes[self.capacity:] = 0.0
        self.nodes[self.capacity:self.capacity + priorities.size] = priorities
        self.rebuild()

    def rebuild(self):
        """Recompute every internal node from the leaves."""
        nodes = self.nodes
        lo = self.capacity
        while lo > 1:
            parents = np.arange(lo // 2, lo)
            nodes[parents] = nodes[2 * parents] + nodes[2 * parents + 1]
            lo //= 2
        self._updates = 0

    def find(self, u):
        """Leaf index ``i`` with ``cumsum(i - 1) <= u < cumsum(i)``.

        ``u`` may be a scalar or an array of values in ``[0, total)``.
        """
        root = self.nodes[1]
        if root <= 0:
            raise EmptyTreeError("cannot sample from a tree whose total priority is 0")
        scalar = np.ndim(u) == 0
        u = np.array(u, dtype=np.float64, ndmin=1)
        if np.any(u < 0) or np.any(u >= root) or not np.all(np.isfinite(u)):
            raise OutOfRangeError(f"u must lie in [0, {root})")
        nodes = self.nodes
        idx = np.ones(u.shape, dtype=np.int64)
        for _ in range(self.depth):
            left = 2 * idx
            left_sum = nodes[left]
            go_right = u >= left_sum
            u = np.where(go_right, u - left_sum, u)
            idx = left + go_right
        out = idx - self.capacity
        # Rounding in the subtractions can strand u on a zero leaf past the
        # last positive one; prefix search would return that positive leaf.
        stranded = nodes[idx] <= 0
        if np.any(stranded):
            positive = np.flatnonzero(self.leaves > 0)
            for j in np.flatnonzero(stranded):
                k = np.searchsorted(positive, out[j], side="right") - 1
                out[j] = positive[max(k, 0)]
        return int(out[0]) if scalar else out

    def sample(self, rng, n=None):
        """Draw leaf indices with probability proportional to priority."""
        if self.nodes[1] <= 0:
            raise EmptyTreeError("cannot sample from a tree whose total priority is 0")
        u = rng.random(n) * self.nodes[1]
        return self.find(u)


def naive_find(priorities, u):
    """Linear prefix search; the reference behaviour for :meth:`SumTree.find`."""
    acc = 0.0
    last_positive = None
    for i, p in enumerate(priorities):
        if p > 0:
            last_positive = i
        acc += p
        if u < acc:
            return i
    if last_positive is None:
        raise EmptyTreeError("all priorities are zero")
    return last_positive
