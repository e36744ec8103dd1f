"""Scratch training probe (not part of the package)."""
import sys
import time

import numpy as np

from hexrecover.sim import (CrawlerEnv, RobotConfig, healthy_mask, remove_leg,
                            lock_joint, task_x, task_xy, task_p2p, tripod_gait_policy,
                            default_oracle_threshold)
from hexrecover.nets import LayerSpec, init_network, init_optimizer
from hexrecover.ddpg import ReplayBuffer, NoiseSchedule, make_target_pair
from hexrecover.controller import (Learner, TrainSettings, ControllerState, srl_step,
                                   fallback_value_update)
from hexrecover.mdp import DiscountSpec

robot = RobotConfig()


def make_learner(env, seed, warmup=4000, rate=0.1, gamma=0.9):
    ss = np.random.SeedSequence(seed)
    s = [int(c.generate_state(1)[0]) for c in ss.spawn(6)]
    actor = init_network(env.observation_dim, [LayerSpec(64), LayerSpec(64, dropout_rate=rate), LayerSpec(18, "tanh")], "actor", s[0])
    critic = init_network(env.observation_dim + 18, [LayerSpec(64), LayerSpec(64, dropout_rate=rate), LayerSpec(1, "identity")], "critic", s[1])
    return Learner(
        actor=make_target_pair(actor), critic=make_target_pair(critic),
        actor_opt=init_optimizer(actor, "rmsprop", 1e-3),
        critic_opt=init_optimizer(critic, "adam", 1e-3),
        buffer=ReplayBuffer(10000, s[2]),
        noise=NoiseSchedule(base_variance=0.01, decay=0.9999),
        controller=ControllerState(),
        settings=TrainSettings(gamma=gamma, minibatch=64, warmup_steps=warmup, action_scale=env.action_limit),
        rng_noise=np.random.default_rng(s[3]),
        rng_dropout=np.random.default_rng(s[4]),
        rng_thompson=np.random.default_rng(s[5]),
    )


def run(method, seed, task, mask_fn, episodes=260, steps=400, warmup=4000, verbose=True):
    env = CrawlerEnv(task=task, max_steps=steps)
    mask = mask_fn()
    learner = make_learner(env, seed, warmup=warmup if method == "srl" else 0)
    behavior = (lambda obs: tripod_gait_policy(obs, robot)) if method == "srl" else None
    gamma = learner.settings.gamma
    t0 = time.time()
    first_cross, crossings = None, 0
    rets = []
    for ep in range(episodes):
        state, obs = env.reset(mask)
        learner.controller.reset_episode()
        ep_ret, beh = 0.0, 0
        log = []
        for t in range(steps):
            out = srl_step(env, state, learner, behavior)
            state = out.next_state
            ep_ret += out.transition.reward
            beh += out.source == "behavior"
            log.append(out)
            if out.done:
                break
        succ = env.task.goal_reached(state)
        crossings += succ
        if succ and first_cross is None:
            first_cross = ep
        rets.append(ep_ret)
        if method == "srl":
            rewards = [o.transition.reward for o in log]
            g = 0.0
            rtg = [0.0] * len(rewards)
            for i in range(len(rewards) - 1, -1, -1):
                g = rewards[i] + gamma * g
                rtg[i] = g
            fs = [o.transition.state for i, o in enumerate(log) if o.decision == "fallback"]
            fa = [o.transition.action for i, o in enumerate(log) if o.decision == "fallback"]
            fg = [rtg[i] for i, o in enumerate(log) if o.decision == "fallback"]
            fallback_value_update(learner, fs, fa, fg)
        if verbose and ep % 40 == 0:
            print(f"  [{method} s{seed}] ep{ep:3d} ret {ep_ret:6.3f} beh% {beh/len(log):.2f}", flush=True)
    # crude eval: 5 episodes, no noise, no learning
    ev_succ = 0
    for k in range(5):
        state, obs = env.reset(mask)
        learner.controller.reset_episode()
        for t in range(steps):
            out = srl_step(env, state, learner, behavior, add_noise=False, learn=False)
            state = out.next_state
            if out.done:
                break
        ev_succ += env.task.goal_reached(state)
    print(f"{method} seed {seed}: first_cross={first_cross} train_crossings={crossings} "
          f"last10={np.mean(rets[-10:]):.3f} eval_succ={ev_succ}/5 ({time.time()-t0:.0f}s)", flush=True)


if __name__ == "__main__":
    which = sys.argv[1] if len(sys.argv) > 1 else "srl"
    seeds = [int(x) for x in (sys.argv[2].split(",") if len(sys.argv) > 2 else ["0"])]
    thr = default_oracle_threshold("x")
    mask_fn = lambda: remove_leg(healthy_mask(robot), robot, 4)
    for seed in seeds:
        run(which, seed, task_x(thr), mask_fn)
