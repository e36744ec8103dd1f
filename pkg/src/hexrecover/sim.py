"""Deterministic kinematic simulator of a damageable six-legged crawler.

The body is a 2.5-D particle driven by a leg-level propulsion model: a leg
whose foot is in ground contact converts its hip (coxa) sweep into forward
motion, scaled by how much of the support polygon is intact. Losing a leg
removes its propulsion, shrinks the support factor and the carried mass
fraction, and adds a saturating heading drift toward the missing side, so a
scripted gait that crawls straight on the healthy robot limps and curls after
an amputation. Everything is a pure function of (state, action); there is no
hidden randomness.

Joint layout: leg l owns joints 3l..3l+2 = (coxa, femur, tibia). Legs 0..2
are the left side (+y), legs 3..5 the right side. The alternating tripods are
the even legs {0, 2, 4} and the odd legs {1, 3, 5}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, ContractViolation, DomainError
from .mdp import DiscountSpec, goal_value

COXA, FEMUR, TIBIA = 0, 1, 2
JOINT_NAMES = ("coxa", "femur", "tibia")

_DEFAULT_JOINT_LIMITS = ((-0.6, 0.6), (-0.5, 0.8), (-0.8, 0.8))  # rad, per joint type


def default_joint_limits(num_legs: int = 6, joints_per_leg: int = 3) -> np.ndarray:
    base = np.array(_DEFAULT_JOINT_LIMITS[:joints_per_leg], dtype=float)
    if len(base) < joints_per_leg:
        base = np.vstack([base] + [base[-1:]] * (joints_per_leg - len(base)))
    return np.tile(base, (num_legs, 1))


@dataclass(frozen=True)
class RobotConfig:
    """Geometry and actuation limits of the crawler."""

    num_legs: int = 6
    joints_per_leg: int = 3
    joint_limits: Optional[np.ndarray] = None  # (num_joints, 2) [min, max] rad
    step_dt: float = 0.05  # s, cosmetic: one control tick
    body_mass_per_leg: float = 1.0
    max_joint_delta: float = 0.25  # rad, per-step actuation clamp

    def __post_init__(self):
        if self.num_legs < 2:
            raise ConfigError("need at least 2 legs")
        if self.joints_per_leg < 1:
            raise ConfigError("need at least 1 joint per leg")
        limits = self.joint_limits
        if limits is None:
            limits = default_joint_limits(self.num_legs, self.joints_per_leg)
        limits = np.asarray(limits, dtype=float)
        if limits.shape != (self.num_joints, 2):
            raise ConfigError(
                f"joint_limits shape {limits.shape} != ({self.num_joints}, 2)"
            )
        if not (limits[:, 0] < limits[:, 1]).all():
            raise ConfigError("every joint needs min < max")
        object.__setattr__(self, "joint_limits", limits)
        if self.max_joint_delta <= 0:
            raise ConfigError("max_joint_delta must be positive")

    @property
    def num_joints(self) -> int:
        return self.num_legs * self.joints_per_leg

    def joint_index(self, leg: int, joint: int) -> int:
        return leg * self.joints_per_leg + joint


@dataclass(frozen=True)
class MotionGains:
    """Constants of the body-displacement model.

    propulsion converts summed contact-weighted coxa sweep into body advance;
    drag_gain scales the braking of a planted foot swept forward (gripping
    rearward pushes propel, scraping a loaded foot forward costs more, which
    is what punishes uncoordinated flailing); steering converts left/right
    sweep asymmetry into heading change; limp_bias is the per-step heading
    drift per missing leg once propulsion exceeds limp_saturation (a limp,
    not a pivot: it only acts while moving).
    """

    propulsion: float = 0.1
    drag_gain: float = 2.0
    steering: float = 0.05
    limp_bias: float = 0.002
    limp_saturation: float = 0.1
    contact_reach_lo: float = 0.15
    contact_reach_hi: float = 0.5
    tibia_reach_gain: float = 0.4
    support_legs: float = 3.0


@dataclass(frozen=True)
class DamageMask:
    """Per-joint operability plus per-leg presence. Damage only ever removes."""

    operable: np.ndarray  # bool, (num_joints,)
    leg_present: np.ndarray  # bool, (num_legs,)

    def __post_init__(self):
        operable = np.asarray(self.operable, dtype=bool)
        present = np.asarray(self.leg_present, dtype=bool)
        object.__setattr__(self, "operable", operable)
        object.__setattr__(self, "leg_present", present)
        if operable.size % present.size != 0:
            raise ConfigError(
                f"{operable.size} joints not divisible by {present.size} legs"
            )
        jpl = operable.size // present.size
        for leg in range(present.size):
            if not present[leg] and operable[leg * jpl : (leg + 1) * jpl].any():
                raise ConfigError(f"leg {leg} is absent but has operable joints")

    @property
    def dof(self) -> int:
        return int(self.operable.sum())

    def covers(self, other: "DamageMask") -> bool:
        """True if ``other`` is at least as damaged (pointwise <=) as self."""
        return bool(
            (self.operable | ~other.operable).all()
            and (self.leg_present | ~other.leg_present).all()
        )


def healthy_mask(robot: RobotConfig) -> DamageMask:
    return DamageMask(
        operable=np.ones(robot.num_joints, dtype=bool),
        leg_present=np.ones(robot.num_legs, dtype=bool),
    )


def lock_joint(mask: DamageMask, robot: RobotConfig, leg: int, joint: int) -> DamageMask:
    operable = mask.operable.copy()
    operable[robot.joint_index(leg, joint)] = False
    return DamageMask(operable=operable, leg_present=mask.leg_present.copy())


def remove_leg(mask: DamageMask, robot: RobotConfig, leg: int) -> DamageMask:
    operable = mask.operable.copy()
    operable[leg * robot.joints_per_leg : (leg + 1) * robot.joints_per_leg] = False
    present = mask.leg_present.copy()
    present[leg] = False
    return DamageMask(operable=operable, leg_present=present)


@dataclass(frozen=True)
class SimState:
    """Full simulator state; a value, never mutated in place."""

    joint_angles: np.ndarray  # rad, (num_joints,)
    body_pose: np.ndarray  # (x, y, heading rad)
    gait_phase: float  # in [0, 1)
    step_count: int
    damage: DamageMask
    distance_traveled: float = 0.0  # planar odometer, task bookkeeping


@dataclass(frozen=True)
class TaskMode:
    """Task variant plus the return level that defines episode success.

    kind "x": reward is per-step x displacement, success when x crosses the
    threshold. kind "xy": reward is per-step planar distance traveled,
    success when the odometer crosses the threshold. kind "p2p": reward is
    the per-step decrease in distance to ``target`` plus ``terminal_bonus``
    on entering ``radius``; the threshold is placed so that cumulative reward
    crosses it exactly when the target is reached.
    """

    kind: str  # "x" | "xy" | "p2p"
    oracle_threshold: float
    target: Optional[tuple[float, float]] = None
    radius: Optional[float] = None
    terminal_bonus: float = 0.0

    def __post_init__(self):
        if self.kind not in ("x", "xy", "p2p"):
            raise ConfigError(f"unknown task kind {self.kind!r}")
        if not math.isfinite(self.oracle_threshold):
            raise ConfigError("oracle_threshold must be finite")
        if self.kind == "p2p":
            if self.target is None or self.radius is None:
                raise ConfigError("p2p task needs target and radius")
            if self.radius <= 0:
                raise ConfigError("p2p radius must be positive")

    def distance_to_target(self, state: SimState) -> float:
        tx, ty = self.target
        return math.hypot(state.body_pose[0] - tx, state.body_pose[1] - ty)

    def goal_reached(self, state: SimState) -> bool:
        if self.kind == "x":
            return state.body_pose[0] >= self.oracle_threshold
        if self.kind == "xy":
            return state.distance_traveled >= self.oracle_threshold
        return self.distance_to_target(state) <= self.radius


def task_reward(prev: SimState, next_state: SimState, task: TaskMode) -> float:
    """Per-step task reward; telescopes to the quantity the threshold gates."""
    if task.kind == "x":
        return float(next_state.body_pose[0] - prev.body_pose[0])
    if task.kind == "xy":
        return float(next_state.distance_traveled - prev.distance_traveled)
    d_prev = task.distance_to_target(prev)
    d_next = task.distance_to_target(next_state)
    bonus = task.terminal_bonus if (d_next <= task.radius < d_prev) else 0.0
    return float(d_prev - d_next + bonus)


def task_x(threshold: float) -> TaskMode:
    return TaskMode(kind="x", oracle_threshold=threshold)


def task_xy(threshold: float) -> TaskMode:
    return TaskMode(kind="xy", oracle_threshold=threshold)


def task_p2p(target: tuple[float, float], radius: float, disc: DiscountSpec) -> TaskMode:
    """Point-to-point task with a success-aligned threshold.

    The terminal bonus is the absorbing-goal value 1/(1-gamma). Before the
    target is entered the cumulative reward stays below d0 - radius; entering
    adds the bonus, so a threshold halfway into the bonus gap is crossed
    exactly on success.
    """
    d0 = math.hypot(*target)
    bonus = goal_value(disc)
    threshold = d0 - radius + 0.5 * bonus
    return TaskMode(
        kind="p2p",
        oracle_threshold=threshold,
        target=tuple(target),
        radius=radius,
        terminal_bonus=bonus,
    )


# --- scripted tripod gait --------------------------------------------------


@dataclass(frozen=True)
class GaitParams:
    """Phase-indexed leg posture profile for the alternating tripod crawl.

    One cycle is ``cycle_steps`` control ticks. A leg spends the first half
    of its local phase in stance (foot planted, hip sweeping rearward) and
    the second half in swing (lift, return sweep, lower), so at every tick
    exactly one tripod is propelling. The sweep covers only a third of the
    coxa range, which leaves stroke headroom for learned policies.
    """

    cycle_steps: int = 20
    coxa_amplitude: float = 0.2
    femur_down: float = -0.4
    femur_up: float = 0.2
    tibia_stance: float = 0.5
    tibia_swing: float = 0.0
    lift_end: float = 0.65
    return_end: float = 0.85

    def leg_posture(self, local_phase: float) -> tuple[float, float, float]:
        """(coxa, femur, tibia) targets for a leg at its local phase."""
        p = local_phase % 1.0
        a = self.coxa_amplitude
        if p < 0.5:  # stance: sweep rearward, foot planted
            coxa = a * (4.0 * p - 1.0)
            return coxa, self.femur_down, self.tibia_stance
        if p < self.lift_end:  # lift: unload the foot, hip holds
            u = (p - 0.5) / (self.lift_end - 0.5)
            femur = self.femur_down + (self.femur_up - self.femur_down) * u
            tibia = self.tibia_stance + (self.tibia_swing - self.tibia_stance) * u
            return a, femur, tibia
        if p < self.return_end:  # return: sweep forward in the air
            u = (p - self.lift_end) / (self.return_end - self.lift_end)
            return a - 2.0 * a * u, self.femur_up, self.tibia_swing
        u = (p - self.return_end) / (1.0 - self.return_end)  # lower: plant the foot
        femur = self.femur_up + (self.femur_down - self.femur_up) * u
        tibia = self.tibia_swing + (self.tibia_stance - self.tibia_swing) * u
        return -a, femur, tibia

    def posture(self, phase: float, robot: RobotConfig) -> np.ndarray:
        angles = np.zeros(robot.num_joints)
        for leg in range(robot.num_legs):
            local = (phase + 0.5 * (leg % 2)) % 1.0
            coxa, femur, tibia = self.leg_posture(local)
            base = leg * robot.joints_per_leg
            angles[base + COXA] = coxa
            if robot.joints_per_leg > FEMUR:
                angles[base + FEMUR] = femur
            if robot.joints_per_leg > TIBIA:
                angles[base + TIBIA] = tibia
        return angles


def tripod_gait_policy(
    observation: np.ndarray,
    config: RobotConfig,
    gait: GaitParams = GaitParams(),
) -> np.ndarray:
    """Scripted behavior policy: track the tripod posture one tick ahead.

    Deterministic, damage-unaware, and a pure function of the observation
    (joint angles and gait phase); frozen joints simply ignore its commands.
    """
    n = config.num_joints
    angles = np.asarray(observation[:n], dtype=float)
    phase = float(observation[n + 3])
    target = gait.posture((phase + 1.0 / gait.cycle_steps) % 1.0, config)
    delta = target - angles
    return np.clip(delta, -config.max_joint_delta, config.max_joint_delta)


# --- environment -----------------------------------------------------------


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


class CrawlerEnv:
    """The crawler plus a task; holds configuration only, never episode state.

    Observations are the concatenation of joint angles, body pose, gait
    phase, and (unless ``include_damage_flags`` is off, for ablations) the
    per-joint operable flags. The flags stand in for what joint encoders
    reveal about frozen joints; the dynamics themselves never consult them.
    """

    def __init__(
        self,
        task: TaskMode,
        robot: RobotConfig = RobotConfig(),
        gains: MotionGains = MotionGains(),
        gait: GaitParams = GaitParams(),
        max_steps: int = 400,
        include_damage_flags: bool = True,
    ):
        self.robot = robot
        self.gains = gains
        self.gait = gait
        self.task = task
        self.max_steps = int(max_steps)
        self.include_damage_flags = include_damage_flags
        n_legs, jpl = robot.num_legs, robot.joints_per_leg
        self._coxa_idx = np.arange(n_legs) * jpl + COXA
        self._femur_idx = np.arange(n_legs) * jpl + FEMUR if jpl > FEMUR else None
        self._tibia_idx = np.arange(n_legs) * jpl + TIBIA if jpl > TIBIA else None
        half = n_legs // 2
        self._side_sign = np.where(np.arange(n_legs) < half, 1.0, -1.0)  # +1 left

    @property
    def num_joints(self) -> int:
        return self.robot.num_joints

    @property
    def action_dim(self) -> int:
        return self.robot.num_joints

    @property
    def action_limit(self) -> float:
        return self.robot.max_joint_delta

    @property
    def observation_dim(self) -> int:
        base = self.robot.num_joints + 3 + 1
        return base + (self.robot.num_joints if self.include_damage_flags else 0)

    def reset(self, damage: DamageMask, seed: int = 0) -> tuple[SimState, np.ndarray]:
        """Crawl-ready stance at the origin (the gait posture at phase 0).

        ``seed`` is reserved for start-state jitter; the default dynamics are
        fully deterministic, so it currently has no effect.
        """
        if damage.operable.size != self.num_joints or damage.leg_present.size != self.robot.num_legs:
            raise ConfigError(
                f"damage mask sized for {damage.operable.size} joints / "
                f"{damage.leg_present.size} legs, robot has {self.num_joints} / "
                f"{self.robot.num_legs}"
            )
        state = SimState(
            joint_angles=self.gait.posture(0.0, self.robot),
            body_pose=np.zeros(3),
            gait_phase=0.0,
            step_count=0,
            damage=damage,
            distance_traveled=0.0,
        )
        return state, self.observe(state)

    def observe(self, state: SimState) -> np.ndarray:
        parts = [state.joint_angles, state.body_pose, [state.gait_phase]]
        if self.include_damage_flags:
            parts.append(state.damage.operable.astype(float))
        return np.concatenate(parts)

    def contact_strength(self, joint_angles: np.ndarray) -> np.ndarray:
        """Per-leg ground engagement in [0, 1] from femur depth and tibia extension."""
        g = self.gains
        femur = joint_angles[self._femur_idx] if self._femur_idx is not None else 0.0
        tibia = joint_angles[self._tibia_idx] if self._tibia_idx is not None else 0.0
        reach = -femur + g.tibia_reach_gain * tibia
        return np.clip(
            (reach - g.contact_reach_lo) / (g.contact_reach_hi - g.contact_reach_lo),
            0.0,
            1.0,
        )

    def apply_damage(self, state: SimState, damage: DamageMask) -> SimState:
        """Replace the mask; newly frozen joints hold their current angle.

        Damage never heals: the new mask must be pointwise at most the
        current one.
        """
        if not state.damage.covers(damage):
            raise ContractViolation("damage mask attempts to re-enable a joint or leg")
        return replace(state, damage=damage)

    def step(self, state: SimState, action) -> tuple[SimState, float, bool]:
        a = np.asarray(action, dtype=float)
        if a.shape != (self.num_joints,):
            raise DomainError(
                f"action shape {a.shape} != ({self.num_joints},); actions are never truncated"
            )
        g = self.gains
        mask = state.damage
        a = np.where(mask.operable, a, 0.0)
        a = np.clip(a, -self.robot.max_joint_delta, self.robot.max_joint_delta)
        limits = self.robot.joint_limits
        new_angles = np.clip(state.joint_angles + a, limits[:, 0], limits[:, 1])
        applied = new_angles - state.joint_angles

        # Propulsion from the feet that were planted when the sweep happened;
        # forward sweeps of a planted foot brake harder than rearward sweeps
        # propel.
        contact = self.contact_strength(state.joint_angles) * mask.leg_present
        coxa_delta = applied[self._coxa_idx]
        per_leg = contact * np.where(coxa_delta >= 0.0, coxa_delta, g.drag_gain * coxa_delta)
        total = float(per_leg.sum())
        support = min(float(contact.sum()) / g.support_legs, 1.0)
        mass_factor = float(mask.leg_present.sum()) / self.robot.num_legs
        speed = g.propulsion * mass_factor * support * total

        left = float(per_leg[self._side_sign > 0].sum())
        right = float(per_leg[self._side_sign < 0].sum())
        turn = g.steering * (right - left)
        missing = ~mask.leg_present
        if missing.any():
            saturation = min(abs(total) / g.limp_saturation, 1.0)
            turn += g.limp_bias * float(self._side_sign[missing].sum()) * saturation

        heading = _wrap_angle(float(state.body_pose[2]) + turn)
        x = float(state.body_pose[0]) + speed * math.cos(heading)
        y = float(state.body_pose[1]) + speed * math.sin(heading)

        next_state = SimState(
            joint_angles=new_angles,
            body_pose=np.array([x, y, heading]),
            gait_phase=(state.gait_phase + 1.0 / self.gait.cycle_steps) % 1.0,
            step_count=state.step_count + 1,
            damage=mask,
            distance_traveled=state.distance_traveled + abs(speed),
        )
        reward = task_reward(state, next_state, self.task)
        done = self.task.goal_reached(next_state) or next_state.step_count >= self.max_steps
        return next_state, reward, done


def healthy_gait_return(
    task_kind: str,
    robot: RobotConfig = RobotConfig(),
    gains: MotionGains = MotionGains(),
    gait: GaitParams = GaitParams(),
    steps: int = 400,
) -> float:
    """Cumulative task reward of the scripted gait on the undamaged robot."""
    probe = TaskMode(kind=task_kind, oracle_threshold=1e18)
    env = CrawlerEnv(task=probe, robot=robot, gains=gains, gait=gait, max_steps=steps)
    state, obs = env.reset(healthy_mask(robot))
    total = 0.0
    for _ in range(steps):
        action = tripod_gait_policy(obs, robot, gait)
        state, reward, done = env.step(state, action)
        obs = env.observe(state)
        total += reward
        if done:
            break
    return total


def default_oracle_threshold(
    task_kind: str,
    robot: RobotConfig = RobotConfig(),
    gains: MotionGains = MotionGains(),
    gait: GaitParams = GaitParams(),
    steps: int = 400,
    fraction: float = 0.7,
) -> float:
    """Threshold placed between the damaged and healthy gait returns.

    Defaults to 70% of what the healthy scripted gait earns in ``steps``
    ticks. Only meaningful for the "x" and "xy" tasks; p2p thresholds are
    pinned by the success-alignment rule in task_p2p.
    """
    if task_kind == "p2p":
        raise ConfigError("p2p thresholds come from task_p2p, not the healthy-return rule")
    return fraction * healthy_gait_return(task_kind, robot, gains, gait, steps)
