"""Replay buffer, exploration schedule, target networks, and the two
actor-critic updates of the deterministic-policy baseline learner."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, WarmupError
from .mdp import Transition
from .nets import (
    DropoutMask,
    Layer,
    NetworkParams,
    NetworkGradients,
    OptimizerState,
    backward,
    forward,
    optimize_step,
)


class ReplayBuffer:
    """Fixed-capacity ring of transitions with strictly FIFO eviction."""

    def __init__(self, capacity: int, rng_seed: int):
        if capacity < 1:
            raise DomainError(f"capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.rng_seed = int(rng_seed)
        self._rng = np.random.default_rng(rng_seed)
        self._data: list[Transition] = []
        self._write = 0

    def __len__(self) -> int:
        return len(self._data)

    def store(self, t: Transition) -> "ReplayBuffer":
        if len(self._data) < self.capacity:
            self._data.append(t)
        else:
            self._data[self._write] = t
            self._write = (self._write + 1) % self.capacity
        return self

    def sample_minibatch(self, n: int) -> list[Transition]:
        """n uniform draws without replacement from the stored entries."""
        if len(self._data) < n:
            raise WarmupError(
                f"buffer holds {len(self._data)} < {n} entries; still warming up"
            )
        idx = self._rng.choice(len(self._data), size=n, replace=False)
        return [self._data[i] for i in idx]

    def entries(self) -> tuple[Transition, ...]:
        """Stored transitions in insertion order (oldest first)."""
        if len(self._data) < self.capacity:
            return tuple(self._data)
        return tuple(self._data[self._write :] + self._data[: self._write])


@dataclass
class NoiseSchedule:
    """Exploration noise variance base_variance * decay^t."""

    base_variance: float
    decay: float = 0.9999
    t: int = 0

    @property
    def variance(self) -> float:
        return self.base_variance * self.decay**self.t


def explore(
    action: np.ndarray,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    low: float,
    high: float,
) -> np.ndarray:
    """Add zero-mean Gaussian noise at the schedule's current variance,
    clamp to the action bounds, and advance the schedule."""
    noisy = np.asarray(action, float) + rng.normal(
        0.0, np.sqrt(sched.variance), size=np.shape(action)
    )
    sched.t += 1
    return np.clip(noisy, low, high)


@dataclass(frozen=True)
class TargetPair:
    """An online network and its slowly tracking target copy."""

    online: NetworkParams
    target: NetworkParams
    tau: float = 0.005

    def __post_init__(self):
        if not (0.0 < self.tau <= 1.0):
            raise DomainError(f"tau must lie in (0, 1], got {self.tau}")
        if len(self.online.layers) != len(self.target.layers):
            raise DomainError("online/target layer counts differ")
        for lo, lt in zip(self.online.layers, self.target.layers):
            if lo.weights.shape != lt.weights.shape:
                raise DomainError("online/target shapes differ")


def make_target_pair(params: NetworkParams, tau: float = 0.005) -> TargetPair:
    return TargetPair(online=params, target=params, tau=tau)


def soft_update(pair: TargetPair) -> TargetPair:
    """target <- (1 - tau) * target + tau * online, elementwise."""
    tau = pair.tau
    layers = tuple(
        Layer(
            weights=(1 - tau) * lt.weights + tau * lo.weights,
            biases=(1 - tau) * lt.biases + tau * lo.biases,
            spec=lt.spec,
        )
        for lo, lt in zip(pair.online.layers, pair.target.layers)
    )
    target = NetworkParams(
        input_dim=pair.target.input_dim, layers=layers, role=pair.target.role
    )
    return TargetPair(online=pair.online, target=target, tau=tau)


def batch_arrays(batch: Sequence[Transition]):
    s = np.stack([t.state for t in batch])
    a = np.stack([t.action for t in batch])
    r = np.array([t.reward for t in batch])
    s2 = np.stack([t.next_state for t in batch])
    term = np.array([t.terminal for t in batch], dtype=float)
    return s, a, r, s2, term


def critic_update(
    pair: TargetPair,
    actor_target: NetworkParams,
    batch: Sequence[Transition],
    gamma: float,
    opt: OptimizerState,
    mask: Optional[DropoutMask] = None,
    action_scale: float = 1.0,
) -> tuple[float, TargetPair, OptimizerState]:
    """One squared-TD-error step on the online critic.

    Targets are r + gamma * Q_target(s', pi_target(s')), or plain r on
    terminal transitions. The training ``mask`` keeps the critic an honest
    dropout posterior; target evaluations run unmasked.
    """
    if not batch:
        raise DomainError("empty minibatch")
    s, a, r, s2, term = batch_arrays(batch)
    n = len(batch)
    a2 = forward(actor_target, s2) * action_scale
    q2 = forward(pair.target, np.concatenate([s2, a2], axis=1))[:, 0]
    y = r + gamma * (1.0 - term) * q2
    x = np.concatenate([s, a], axis=1)
    q = forward(pair.online, x, mask)[:, 0]
    err = q - y
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise DomainError(
            f"non-finite critic loss: q range [{q.min()}, {q.max()}], "
            f"reward range [{r.min()}, {r.max()}]"
        )
    grads = backward(pair.online, x, (2.0 / n) * err[:, None], mask)
    online, new_opt = optimize_step(pair.online, grads, opt)
    return loss, replace(pair, online=online), new_opt


def actor_update(
    pair: TargetPair,
    critic: NetworkParams,
    batch: Sequence[Transition],
    opt: OptimizerState,
    action_scale: float = 1.0,
) -> tuple[TargetPair, OptimizerState, float]:
    """Ascend mean Q(s, pi(s)) through the critic (deterministic policy
    gradient). Returns the mean Q under the pre-update actor for logging.

    ``critic`` is normally NetworkParams; anything exposing
    ``q_and_action_grad(states, actions) -> (q, dq_da)`` works, which the
    tests use to drive the actor against analytic critics.
    """
    if not batch:
        raise DomainError("empty minibatch")
    s = np.stack([t.state for t in batch])
    n = len(batch)
    raw = forward(pair.online, s)
    actions = raw * action_scale
    if isinstance(critic, NetworkParams):
        x = np.concatenate([s, actions], axis=1)
        q = forward(critic, x)[:, 0]
        dq = backward(critic, x, np.ones((n, 1)) / n).input_grad[:, s.shape[1] :]
    else:
        q, dq = critic.q_and_action_grad(s, actions)
        dq = np.asarray(dq) / n
    if not np.isfinite(dq).all():
        raise DomainError("non-finite action gradient from critic")
    grads = backward(pair.online, s, -dq * action_scale)
    online, new_opt = optimize_step(pair.online, grads, opt)
    return replace(pair, online=online), new_opt, float(np.mean(q))
