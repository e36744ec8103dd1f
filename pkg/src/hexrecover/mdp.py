"""MDP value quantities, trajectory bookkeeping, and trace serialization.

The episode model: a sparse goal state is absorbing with reward 1, so being
at the goal is worth 1/(1-gamma), and a trajectory that first reaches the
goal on step t_g is worth gamma^(t_g-1)/(1-gamma). Everything downstream
(simulator thresholds, controller value updates, harness metrics) is tested
against these closed forms, so they live here in one place.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, TextIO, Union

import numpy as np

from .errors import DomainError

TRACE_FORMAT = "trajectory-jsonl-v1"


def _as_vector(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    return arr


@dataclass(frozen=True)
class Transition:
    """One environment step: (state, action, reward, next_state, terminal)."""

    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "state", _as_vector(self.state))
        object.__setattr__(self, "action", _as_vector(self.action))
        object.__setattr__(self, "next_state", _as_vector(self.next_state))
        object.__setattr__(self, "reward", float(self.reward))
        object.__setattr__(self, "terminal", bool(self.terminal))
        if self.state.shape != self.next_state.shape:
            raise DomainError(
                f"state dim {self.state.shape} != next_state dim {self.next_state.shape}"
            )
        if not math.isfinite(self.reward):
            raise DomainError(f"non-finite reward {self.reward!r}")


@dataclass(frozen=True)
class Trajectory:
    """An ordered run of transitions with an optional first-goal step.

    ``goal_reached_at`` is 1-indexed: the value t_g means the goal predicate
    first held on the state produced by transition number t_g.
    """

    transitions: tuple[Transition, ...]
    max_steps: int
    goal_reached_at: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "transitions", tuple(self.transitions))
        if self.max_steps < 1:
            raise DomainError("max_steps must be positive")
        if len(self.transitions) > self.max_steps:
            raise DomainError(
                f"{len(self.transitions)} transitions exceed max_steps={self.max_steps}"
            )
        if self.goal_reached_at is not None:
            t_g = self.goal_reached_at
            if not (1 <= t_g <= len(self.transitions)):
                raise DomainError(f"goal_reached_at={t_g} outside 1..{len(self.transitions)}")

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([t.reward for t in self.transitions])

    @property
    def is_success(self) -> bool:
        return self.goal_reached_at is not None


@dataclass(frozen=True)
class DiscountSpec:
    """Discount factor, restricted to [0, 1) so 1/(1-gamma) stays finite."""

    gamma: float

    def __post_init__(self):
        if not (0.0 <= self.gamma < 1.0):
            raise DomainError(f"gamma must lie in [0, 1), got {self.gamma}")


@dataclass(frozen=True)
class GoalSet:
    """A deterministic predicate over states plus a human-readable label."""

    goal_predicate: Callable[[np.ndarray], bool]
    label: str = "goal"


@dataclass(frozen=True)
class Success:
    """Classification of a trajectory that reached the goal on step ``goal_step``."""

    goal_step: int


@dataclass(frozen=True)
class Failure:
    """Classification of a trajectory that never reached the goal."""


Classification = Union[Success, Failure]


def discounted_return(traj: Trajectory, disc: DiscountSpec) -> float:
    """Sum of gamma^t * r_t over the trajectory (t counted from 0)."""
    if len(traj) == 0:
        raise DomainError("cannot compute the return of an empty trajectory")
    rewards = traj.rewards
    discounts = disc.gamma ** np.arange(len(rewards))
    return float(np.dot(discounts, rewards))


def goal_value(disc: DiscountSpec) -> float:
    """Value of being at an absorbing goal state with per-step reward 1."""
    if disc.gamma >= 1.0:
        raise DomainError("goal value is unbounded for gamma >= 1")
    return 1.0 / (1.0 - disc.gamma)


def success_return(t_g: int, disc: DiscountSpec) -> float:
    """Return of a trajectory that first reaches the goal on step t_g >= 1.

    Equals gamma^(t_g - 1) / (1 - gamma): the full goal value, discounted by
    the steps spent getting there. Monotone decreasing in t_g.
    """
    if t_g < 1:
        raise DomainError(f"t_g must be >= 1, got {t_g}")
    return disc.gamma ** (t_g - 1) / (1.0 - disc.gamma)


def trajectory_log_probability(
    traj: Trajectory,
    policy_logprob: Callable[[np.ndarray, np.ndarray], float],
    dynamics_logprob: Callable[[np.ndarray, np.ndarray, np.ndarray], float],
    initial_logprob: Callable[[np.ndarray], float],
) -> float:
    """log p(s_0) + sum_t [log pi(a_t|s_t) + log p(s_{t+1}|s_t,a_t)].

    A -inf component makes the whole trajectory impossible; the sum is
    returned as -inf rather than raising. NaN components are rejected.
    """
    if len(traj) == 0:
        raise DomainError("cannot score an empty trajectory")
    total = initial_logprob(traj.transitions[0].state)
    for tr in traj.transitions:
        total += policy_logprob(tr.state, tr.action)
        total += dynamics_logprob(tr.state, tr.action, tr.next_state)
    if math.isnan(total):
        raise DomainError("log-probability component evaluated to NaN")
    return float(total)


def classify_trajectory(traj: Trajectory, goals: GoalSet) -> Classification:
    """First-hit classification: Success(t_g) at the first post-step state
    satisfying the goal predicate, Failure if none does."""
    for t, tr in enumerate(traj.transitions, start=1):
        if goals.goal_predicate(tr.next_state):
            return Success(goal_step=t)
    return Failure()


# --- line-delimited JSON trace format ------------------------------------
#
# One header record, then one record per transition. Used by the harness for
# episode replay and debugging.


def write_trajectory(fh: TextIO, traj: Trajectory, disc: DiscountSpec) -> None:
    header = {
        "record": "header",
        "format": TRACE_FORMAT,
        "gamma": disc.gamma,
        "max_steps": traj.max_steps,
        "goal_reached_at": traj.goal_reached_at,
    }
    fh.write(json.dumps(header, sort_keys=True) + "\n")
    for tr in traj.transitions:
        row = {
            "record": "transition",
            "state": tr.state.tolist(),
            "action": tr.action.tolist(),
            "reward": tr.reward,
            "next_state": tr.next_state.tolist(),
            "terminal": tr.terminal,
        }
        fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_trajectory(fh: TextIO) -> tuple[Trajectory, DiscountSpec]:
    header_line = fh.readline()
    if not header_line:
        raise DomainError("empty trajectory stream")
    header = json.loads(header_line)
    if header.get("record") != "header" or header.get("format") != TRACE_FORMAT:
        raise DomainError(f"bad trajectory header: {header_line.strip()!r}")
    transitions = []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        row = json.loads(line)
        if row.get("record") == "header":
            # Caller is iterating a multi-trajectory stream; push back is not
            # possible on a text handle, so multi-trajectory files use
            # read_trajectories() instead.
            raise DomainError("unexpected second header; use read_trajectories()")
        transitions.append(
            Transition(
                state=row["state"],
                action=row["action"],
                reward=row["reward"],
                next_state=row["next_state"],
                terminal=row["terminal"],
            )
        )
    traj = Trajectory(
        transitions=tuple(transitions),
        max_steps=header["max_steps"],
        goal_reached_at=header["goal_reached_at"],
    )
    return traj, DiscountSpec(gamma=header["gamma"])


def read_trajectories(fh: TextIO) -> list[tuple[Trajectory, DiscountSpec]]:
    """Read a stream holding any number of concatenated trajectory records."""
    out = []
    header = None
    transitions: list[Transition] = []

    def flush():
        if header is None:
            return
        traj = Trajectory(
            transitions=tuple(transitions),
            max_steps=header["max_steps"],
            goal_reached_at=header["goal_reached_at"],
        )
        out.append((traj, DiscountSpec(gamma=header["gamma"])))

    for line in fh:
        line = line.strip()
        if not line:
            continue
        row = json.loads(line)
        if row.get("record") == "header":
            flush()
            if row.get("format") != TRACE_FORMAT:
                raise DomainError(f"unsupported trace format {row.get('format')!r}")
            header = row
            transitions = []
        else:
            transitions.append(
                Transition(
                    state=row["state"],
                    action=row["action"],
                    reward=row["reward"],
                    next_state=row["next_state"],
                    terminal=row["terminal"],
                )
            )
    flush()
    return out
