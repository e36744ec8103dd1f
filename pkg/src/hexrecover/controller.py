"""Guided control: arbitrate per step between the learning target policy and
the scripted behavior policy.

Each step, both policies propose an action. One posterior draw of the dropout
critic picks the higher-valued proposal (Thompson selection, with the same
weight sample applied to both candidates so they are compared under one
hypothesis). The fraction of posterior draws on which the current selection
beats the previous step's selection gives the improvement probability p_a;
when it clears the acceptance threshold the selection is emitted, otherwise
the controller falls back to the target policy's own action and queues the
visited state for a hindsight value regression at episode end.

With the behavior policy disabled the whole apparatus reduces, draw for draw
and update for update, to the plain DDPG baseline; the ablation tests pin
that equivalence bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .ddpg import (
    NoiseSchedule,
    ReplayBuffer,
    TargetPair,
    actor_update,
    critic_update,
    explore,
    soft_update,
)
from .errors import DomainError
from .mdp import Transition
from .nets import (
    DropoutMask,
    NetworkParams,
    OptimizerState,
    backward,
    forward,
    forward_mask_stack,
    optimize_step,
)
from .sim import CrawlerEnv, SimState


@dataclass(frozen=True)
class ActionProposalSet:
    """The two candidate actions for the current observation."""

    target_action: np.ndarray
    behavior_action: np.ndarray


@dataclass
class ControllerState:
    """Carry-over between steps: the previous Thompson selection and counters."""

    prev_selection: Optional[tuple[np.ndarray, np.ndarray]] = None  # (action, q_samples)
    accept_count: int = 0
    fallback_count: int = 0
    rng_seed: int = 0

    def reset_episode(self) -> None:
        self.prev_selection = None


@dataclass(frozen=True)
class GuidanceReport:
    """States where one behavior-policy step strictly increased the value."""

    guided_states: frozenset
    total_states: int


@dataclass(frozen=True)
class ThompsonChoice:
    action: np.ndarray
    q_samples: np.ndarray  # posterior Q samples of the winning candidate
    source: str  # "target" | "behavior"


def propose(
    s: np.ndarray,
    actor: NetworkParams,
    behavior: Callable[[np.ndarray], np.ndarray],
    action_scale: float = 1.0,
) -> ActionProposalSet:
    """Evaluate both policies on the observation; pure given parameters."""
    target = forward(actor, s) * action_scale
    beh = np.clip(np.asarray(behavior(s), float), -action_scale, action_scale)
    return ActionProposalSet(target_action=target, behavior_action=beh)


def thompson_select(
    critic: NetworkParams,
    s: np.ndarray,
    proposals: ActionProposalSet,
    n_samples: int,
    seed: int,
) -> ThompsonChoice:
    """Pick the candidate whose Q is larger under one critic posterior draw.

    All candidates share each draw's dropout mask, so the comparison happens
    under a single weight hypothesis. Draw 0 decides the selection; the full
    n_samples-long Q vector of the winner is returned for the improvement
    probability.
    """
    if n_samples < 1:
        raise DomainError(f"need n_samples >= 1, got {n_samples}")
    s = np.asarray(s, float)
    candidates = np.stack(
        [
            np.concatenate([s, proposals.target_action]),
            np.concatenate([s, proposals.behavior_action]),
        ]
    )
    mask_seeds = np.random.SeedSequence(seed).generate_state(n_samples, dtype=np.uint64)
    masks = [DropoutMask.from_seed(critic, int(m)) for m in mask_seeds]
    q = forward_mask_stack(critic, candidates, masks)[:, :, 0]  # (n_samples, 2)
    winner = int(np.argmax(q[0]))
    action = proposals.target_action if winner == 0 else proposals.behavior_action
    return ThompsonChoice(
        action=action,
        q_samples=q[:, winner].copy(),
        source="target" if winner == 0 else "behavior",
    )


def improvement_probability(curr_q_samples, prev_q_samples) -> float:
    """Fraction of index-paired posterior draws on which current > previous."""
    curr = np.asarray(curr_q_samples, float)
    prev = np.asarray(prev_q_samples, float)
    if curr.size == 0 or prev.size == 0:
        raise DomainError("both Q-sample lists must be non-empty")
    m = min(curr.size, prev.size)
    return float(np.mean(curr[:m] > prev[:m]))


def controller_decide(p_a: float, state: ControllerState, threshold: float) -> str:
    """"accept" when p_a clears the threshold, else "fallback"; counts both."""
    if not (0.0 < threshold < 1.0):
        raise DomainError(f"threshold must lie in (0, 1), got {threshold}")
    if p_a > threshold:
        state.accept_count += 1
        return "accept"
    state.fallback_count += 1
    return "fallback"


# --- the composed step ------------------------------------------------------


@dataclass(frozen=True)
class TrainSettings:
    """Learner knobs shared by the baseline and guided runs.

    ``warmup_steps`` transitions must be in the buffer before updates start;
    while guidance is enabled the warmup also acts by the behavior policy
    (the incumbent controller primes the replay with coherent crawl data,
    without which an untrained critic arbitrates between two strangers).
    """

    gamma: float = 0.9
    minibatch: int = 64
    warmup_steps: int = 400
    thompson_samples: int = 16
    accept_threshold: float = 0.5
    action_scale: float = 0.25


@dataclass
class Learner:
    """Everything a training run mutates step to step."""

    actor: TargetPair
    critic: TargetPair
    actor_opt: OptimizerState
    critic_opt: OptimizerState
    buffer: ReplayBuffer
    noise: NoiseSchedule
    controller: ControllerState
    settings: TrainSettings
    rng_noise: np.random.Generator
    rng_dropout: np.random.Generator
    rng_thompson: np.random.Generator


@dataclass(frozen=True)
class StepOutcome:
    next_state: SimState
    transition: Transition
    action: np.ndarray
    done: bool
    source: str  # which proposal was emitted
    decision: str  # "accept" | "fallback"
    p_a: Optional[float]
    q_mean_curr: Optional[float]
    q_mean_prev: Optional[float]
    critic_loss: Optional[float]
    actor_q: Optional[float]


def srl_step(
    env: CrawlerEnv,
    sim_state: SimState,
    learner: Learner,
    behavior: Optional[Callable[[np.ndarray], np.ndarray]],
    add_noise: bool = True,
    learn: bool = True,
) -> StepOutcome:
    """One environment step of the guided learner.

    With ``behavior=None`` the Thompson/acceptance machinery is skipped and
    the call is exactly one DDPG baseline step, consuming the same random
    streams, which keeps the ablation bit-identical.
    """
    cfg = learner.settings
    obs = env.observe(sim_state)
    target_action = forward(learner.actor.online, obs) * cfg.action_scale
    if add_noise:
        target_action = explore(
            target_action,
            learner.noise,
            learner.rng_noise,
            -cfg.action_scale,
            cfg.action_scale,
        )

    p_a = None
    q_mean_curr = None
    q_mean_prev = None
    in_warmup = len(learner.buffer) < max(cfg.warmup_steps, cfg.minibatch)
    if behavior is None:
        emitted = target_action
        source = "target"
        decision = "accept"
    elif in_warmup:
        emitted = np.clip(
            np.asarray(behavior(obs), float), -cfg.action_scale, cfg.action_scale
        )
        source = "behavior"
        decision = "accept"
    else:
        beh_action = np.clip(
            np.asarray(behavior(obs), float), -cfg.action_scale, cfg.action_scale
        )
        proposals = ActionProposalSet(target_action, beh_action)
        seed = int(learner.rng_thompson.integers(np.iinfo(np.int64).max))
        choice = thompson_select(
            learner.critic.online, obs, proposals, cfg.thompson_samples, seed
        )
        prev = learner.controller.prev_selection
        if prev is None:
            p_a = 1.0
        else:
            p_a = improvement_probability(choice.q_samples, prev[1])
            q_mean_prev = float(np.mean(prev[1]))
        q_mean_curr = float(np.mean(choice.q_samples))
        decision = controller_decide(p_a, learner.controller, cfg.accept_threshold)
        emitted = choice.action if decision == "accept" else target_action
        source = choice.source if decision == "accept" else "target"
        learner.controller.prev_selection = (choice.action, choice.q_samples)

    next_state, reward, done = env.step(sim_state, emitted)
    transition = Transition(
        state=obs,
        action=emitted,
        reward=reward,
        next_state=env.observe(next_state),
        terminal=done and env.task.goal_reached(next_state),
    )
    learner.buffer.store(transition)

    critic_loss = None
    actor_q = None
    if learn and len(learner.buffer) >= cfg.minibatch:
        batch = learner.buffer.sample_minibatch(cfg.minibatch)
        mask = DropoutMask.from_seed(
            learner.critic.online,
            int(learner.rng_dropout.integers(np.iinfo(np.int64).max)),
        )
        critic_loss, learner.critic, learner.critic_opt = critic_update(
            learner.critic,
            learner.actor.target,
            batch,
            cfg.gamma,
            learner.critic_opt,
            mask=mask,
            action_scale=cfg.action_scale,
        )
        learner.actor, learner.actor_opt, actor_q = actor_update(
            learner.actor,
            learner.critic.online,
            batch,
            learner.actor_opt,
            action_scale=cfg.action_scale,
        )
        learner.critic = soft_update(learner.critic)
        learner.actor = soft_update(learner.actor)

    return StepOutcome(
        next_state=next_state,
        transition=transition,
        action=emitted,
        done=done,
        source=source,
        decision=decision,
        p_a=p_a,
        q_mean_curr=q_mean_curr,
        q_mean_prev=q_mean_prev,
        critic_loss=critic_loss,
        actor_q=actor_q,
    )


def fallback_value_update(
    learner: Learner,
    states: list[np.ndarray],
    actions: list[np.ndarray],
    returns_to_go: list[float],
) -> Optional[float]:
    """Hindsight regression of the critic toward observed returns-to-go.

    Run at episode end for the states where the controller fell back; the
    conditional expectation of the return is only computable once the episode
    has played out. Returns the regression loss, or None if nothing queued.
    """
    if not states:
        return None
    x = np.concatenate([np.stack(states), np.stack(actions)], axis=1)
    y = np.asarray(returns_to_go, float)
    mask = DropoutMask.from_seed(
        learner.critic.online,
        int(learner.rng_dropout.integers(np.iinfo(np.int64).max)),
    )
    q = forward(learner.critic.online, x, mask)[:, 0]
    err = q - y
    loss = float(np.mean(err * err))
    grads = backward(learner.critic.online, x, (2.0 / len(y)) * err[:, None], mask)
    online, learner.critic_opt = optimize_step(
        learner.critic.online, grads, learner.critic_opt
    )
    learner.critic = TargetPair(
        online=online, target=learner.critic.target, tau=learner.critic.tau
    )
    return loss


def partial_guidance_report(
    value_fn: Callable[[SimState], float],
    behavior: Callable[[np.ndarray], np.ndarray],
    env: CrawlerEnv,
    probe_states: list[SimState],
) -> GuidanceReport:
    """Flag the probe states where one behavior step strictly raises value_fn."""
    guided = set()
    for idx, state in enumerate(probe_states):
        action = behavior(env.observe(state))
        after, _, _ = env.step(state, action)
        if value_fn(after) > value_fn(state):
            guided.add(idx)
    return GuidanceReport(guided_states=frozenset(guided), total_states=len(probe_states))
