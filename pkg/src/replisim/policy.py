"""Replica-count policies: single, fixed-N and an epsilon-greedy n-armed bandit."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FAILURE_REWARD = -5.0
REWARD_BOUND = 5.0  # k: rewards lie in [-k, k]
DEFAULT_MAX_REPLICAS = 10
DEFAULT_BINS = 10


@dataclass(frozen=True)
class State:
    hour: int
    phi_bin: int


@dataclass(frozen=True)
class RewardSignal:
    value: float
    sigma: float
    succeeded: bool


def hour_of_day(t: float) -> int:
    return int(t // 3600) % 24


BIN_TOLERANCE = 1e-9


def phi_bin(phi_prime: float, P: float, n: int) -> int:
    """Index of the contingency interval: 0 for <=0, n+1 above P, else i with
    (i-1)P/n < phi' <= iP/n.

    Values within BIN_TOLERANCE (relative to P) of an upper edge count as on
    the edge, so phi' = phi computed as 0.1000000000000001 still lands in the
    0.1 bin.
    """
    if math.isnan(phi_prime):
        raise ValueError("contingency proportion is NaN")
    if math.isinf(phi_prime):
        return n + 1 if phi_prime > 0 else 0
    x = phi_prime * n / P
    i = math.ceil(x)
    if i - 1 >= 0 and x - (i - 1) <= BIN_TOLERANCE * n:
        i -= 1
    if i <= 0:
        return 0
    if i > n:
        return n + 1
    return i


def discretize(submit_time: float, phi_prime: float, P: float = 1.0, n: int = DEFAULT_BINS) -> State:
    if n < 1 or P <= 0:
        raise ValueError("need n >= 1 and P > 0")
    return State(hour_of_day(submit_time), phi_bin(phi_prime, P, n))


class QTable:
    """Sample-average reward estimates per (hour, phi-bin, replica count)."""

    def __init__(self, max_replicas: int = DEFAULT_MAX_REPLICAS, n: int = DEFAULT_BINS,
                 initial: float = 0.0):
        self.max_replicas = max_replicas
        self.n = n
        self.initial = initial
        shape = (24, n + 2, max_replicas)
        self.counts = np.zeros(shape, dtype=np.int64)
        self.means = np.full(shape, float(initial))

    @property
    def size(self) -> int:
        return self.counts.size

    def values(self, state: State) -> np.ndarray:
        return self.means[state.hour, state.phi_bin]

    def mean(self, state: State, action: int) -> float:
        return float(self.means[state.hour, state.phi_bin, action - 1])

    def count(self, state: State, action: int) -> int:
        return int(self.counts[state.hour, state.phi_bin, action - 1])

    def greedy(self, state: State) -> int:
        # np.argmax returns the first maximum, i.e. the smallest replica count
        return int(np.argmax(self.values(state))) + 1

    def update(self, state: State, action: int, reward: float) -> None:
        idx = (state.hour, state.phi_bin, action - 1)
        c = self.counts[idx] + 1
        self.counts[idx] = c
        if c == 1:
            self.means[idx] = reward
        else:
            self.means[idx] += (reward - self.means[idx]) / c

    def visited_states(self) -> list[State]:
        hs, bs = np.nonzero(self.counts.sum(axis=2))
        return [State(int(h), int(b)) for h, b in zip(hs, bs)]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["hour", "phi_bin", "action", "count", "mean_reward"])
            for (h, b, a), c in np.ndenumerate(self.counts):
                w.writerow([h, b, a + 1, int(c), repr(float(self.means[h, b, a]))])

    @classmethod
    def from_csv(cls, path: str | Path, max_replicas: int | None = None,
                 n: int | None = None) -> "QTable":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if max_replicas is None:
            max_replicas = max(int(r["action"]) for r in rows)
        if n is None:
            n = max(int(r["phi_bin"]) for r in rows) - 1
        table = cls(max_replicas, n)
        for r in rows:
            a = int(r["action"])
            if a > max_replicas:
                continue
            idx = (int(r["hour"]), int(r["phi_bin"]), a - 1)
            table.counts[idx] = int(r["count"])
            table.means[idx] = float(r["mean_reward"])
        return table


def select_action(qtable: QTable, state: State, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy choice: one draw for the branch, one more when exploring."""
    if rng.random() < epsilon:
        return int(rng.integers(1, qtable.max_replicas + 1))
    return qtable.greedy(state)


def compute_sigma(bad_energy: float, a: int, d_t: float, xi: float) -> float:
    """Wasted-work fraction: bad Wh over the budget of a replicas running d_t hours at xi W."""
    return min(1.0, float(bad_energy) / (a * d_t * xi))


def reward(succeeded: bool, sigma: float) -> RewardSignal:
    if succeeded:
        return RewardSignal(1.0 - sigma, sigma, True)
    return RewardSignal(FAILURE_REWARD, sigma, False)


def update(qtable: QTable, state: State, a: int, reward_value: float) -> None:
    qtable.update(state, a, reward_value)


# --- epsilon schedules ---------------------------------------------------------

class ConstantEpsilon:
    variant = "constant"

    def __init__(self, epsilon: float = 0.1):
        self.epsilon = epsilon

    def next_epsilon(self) -> float:
        return self.epsilon

    def tick(self, reward: float, action: int | None = None) -> float:
        return self.epsilon


class InitialHighEpsilon:
    """epsilon1 until ``switch_after`` rewards have been seen, epsilon2 afterwards."""

    variant = "initial_high"

    def __init__(self, epsilon1: float = 0.5, epsilon2: float = 0.05, switch_after: int = 1000):
        self.epsilon1 = epsilon1
        self.epsilon2 = epsilon2
        self.switch_after = switch_after
        self.observed = 0

    @property
    def epsilon(self) -> float:
        return self.epsilon1 if self.observed < self.switch_after else self.epsilon2

    def next_epsilon(self) -> float:
        return self.epsilon

    def tick(self, reward: float, action: int | None = None) -> float:
        self.observed += 1
        return self.epsilon


class DriftWindowEpsilon:
    """Raise epsilon for a while when an action's recent rewards drift from its history.

    Each action keeps its last ``window`` rewards and a running mean over all
    of them. A full window whose mean differs from the running mean by more
    than ``threshold * max(1, |running mean|)`` boosts epsilon for the next
    ``window`` decisions.
    """

    variant = "drift_window"

    def __init__(self, window: int = 100, threshold: float = 0.5,
                 boosted: float = 0.5, base: float = 0.05):
        self.window = window
        self.threshold = threshold
        self.boosted = boosted
        self.base = base
        self.recent: dict[int | None, deque] = {}
        self.totals: dict[int | None, tuple[int, float]] = {}
        self.boost_left = 0

    @property
    def epsilon(self) -> float:
        return self.boosted if self.boost_left > 0 else self.base

    def next_epsilon(self) -> float:
        eps = self.epsilon
        if self.boost_left > 0:
            self.boost_left -= 1
        return eps

    def tick(self, reward: float, action: int | None = None) -> float:
        win = self.recent.setdefault(action, deque(maxlen=self.window))
        win.append(reward)
        n, mean = self.totals.get(action, (0, 0.0))
        n += 1
        mean += (reward - mean) / n
        self.totals[action] = (n, mean)
        if len(win) == self.window:
            wmean = sum(win) / len(win)
            if abs(wmean - mean) > self.threshold * max(1.0, abs(mean)):
                self.boost_left = self.window
        return self.epsilon


def schedule_tick(schedule, latest_reward: float, action: int | None = None) -> float:
    return schedule.tick(latest_reward, action)


def make_schedule(variant: str = "initial_high", **params):
    kinds = {c.variant: c for c in (ConstantEpsilon, InitialHighEpsilon, DriftWindowEpsilon)}
    try:
        return kinds[variant](**params)
    except KeyError:
        raise ValueError(f"unknown epsilon schedule {variant!r}") from None


# --- policies --------------------------------------------------------------------

class SinglePolicy:
    kind = "single"
    max_replicas = 1

    @property
    def label(self) -> str:
        return "single"

    def decide(self, submit_time: float, phi_prime: float) -> int:
        return 1

    def learn(self, state: State, action: int, signal: RewardSignal) -> None:
        pass


class FixedPolicy:
    kind = "fixed"

    def __init__(self, replicas: int):
        if replicas < 1:
            raise ValueError("fixed replica count must be >= 1")
        self.replicas = replicas
        self.max_replicas = replicas

    @property
    def label(self) -> str:
        return f"fixed:{self.replicas}"

    def decide(self, submit_time: float, phi_prime: float) -> int:
        return self.replicas

    def learn(self, state: State, action: int, signal: RewardSignal) -> None:
        pass


class RLPolicy:
    kind = "rl"

    def __init__(self, rng: np.random.Generator, max_replicas: int = DEFAULT_MAX_REPLICAS,
                 P: float = 1.0, n: int = DEFAULT_BINS, schedule=None,
                 qtable: QTable | None = None, frozen: bool = False):
        self.rng = rng
        self.max_replicas = max_replicas
        self.P = P
        self.n = n
        self.schedule = schedule if schedule is not None else InitialHighEpsilon()
        self.qtable = qtable if qtable is not None else QTable(max_replicas, n)
        if self.qtable.max_replicas != max_replicas or self.qtable.n != n:
            raise ValueError("qtable shape does not match policy")
        self.frozen = frozen

    @property
    def label(self) -> str:
        return f"rl:{self.max_replicas}"

    def decide(self, submit_time: float, phi_prime: float) -> int:
        state = discretize(submit_time, phi_prime, self.P, self.n)
        return select_action(self.qtable, state, self.schedule.next_epsilon(), self.rng)

    def learn(self, state: State, action: int, signal: RewardSignal) -> None:
        if self.frozen:
            return
        self.qtable.update(state, action, signal.value)
        self.schedule.tick(signal.value, action)


def decide_replicas(policy, submit_time: float, phi_prime: float) -> int:
    a = policy.decide(submit_time, phi_prime)
    return min(a, policy.max_replicas)


def parse_policy(text: str, rng: np.random.Generator | None = None,
                 max_replicas: int = DEFAULT_MAX_REPLICAS, **rl_kwargs):
    """Build a policy from ``single``, ``fixed:N``, ``rl`` or ``rl:N``."""
    name, _, arg = text.partition(":")
    if name == "single":
        return SinglePolicy()
    if name == "fixed":
        return FixedPolicy(int(arg) if arg else max_replicas)
    if name == "rl":
        if rng is None:
            rng = np.random.default_rng()
        return RLPolicy(rng, int(arg) if arg else max_replicas, **rl_kwargs)
    raise ValueError(f"unknown policy {text!r}")
