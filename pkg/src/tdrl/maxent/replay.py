"""Bounded FIFO replay buffer whose rewards can be rewritten in place."""

from __future__ import annotations

import numpy as np


class ReplayBuffer:
    """Stores ``(s, a, s', reward, done)``; oldest entries are overwritten when full.

    Index ``i`` in the public accessors counts from the oldest stored
    transition. Only the reward column is writable.
    """

    def __init__(self, state_dim, action_dim, capacity=1_000_000):
        self.capacity = int(capacity)
        self.states = np.zeros((self.capacity, state_dim))
        self.actions = np.zeros((self.capacity, action_dim))
        self.next_states = np.zeros((self.capacity, state_dim))
        self.rewards = np.zeros(self.capacity)
        self.dones = np.zeros(self.capacity, dtype=bool)
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def add(self, s, a, s2, reward, done):
        i = self._next
        self.states[i] = s
        self.actions[i] = a
        self.next_states[i] = s2
        self.rewards[i] = reward
        self.dones[i] = done
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _physical(self, idx):
        start = (self._next - self._size) % self.capacity
        return (start + np.asarray(idx)) % self.capacity

    def state_action_slice(self, start, stop):
        p = self._physical(np.arange(start, stop))
        return self.states[p], self.actions[p]

    def set_rewards(self, start, stop, values):
        p = self._physical(np.arange(start, stop))
        self.rewards[p] = values

    def ordered(self):
        """All stored columns, oldest first."""
        p = self._physical(np.arange(self._size))
        return {"states": self.states[p], "actions": self.actions[p],
                "next_states": self.next_states[p], "rewards": self.rewards[p],
                "dones": self.dones[p]}

    def sample(self, batch_size, rng):
        if self._size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        p = self._physical(rng.integers(0, self._size, size=batch_size))
        return {"states": self.states[p], "actions": self.actions[p],
                "next_states": self.next_states[p], "rewards": self.rewards[p],
                "dones": self.dones[p].astype(np.float64)}

    def state_dict(self):
        data = self.ordered()
        data["capacity"] = np.array(self.capacity)
        return data

    @classmethod
    def from_state_dict(cls, data):
        buf = cls(data["states"].shape[1], data["actions"].shape[1], int(data["capacity"]))
        n = len(data["rewards"])
        buf.states[:n] = data["states"]
        buf.actions[:n] = data["actions"]
        buf.next_states[:n] = data["next_states"]
        buf.rewards[:n] = data["rewards"]
        buf.dones[:n] = data["dones"]
        buf._size = n
        buf._next = n % buf.capacity
        return buf
