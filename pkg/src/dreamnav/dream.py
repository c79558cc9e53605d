"""Dreamed rollouts: iterate the learned transition model under a policy,
score states with the goal head, stop on detection or horizon.

This module never touches the simulator; it sees only model parameters,
start latents and seeds. Batched rollouts advance all trajectories in
lockstep, but each row's action noise comes from its own generator
spawned as SeedSequence(entropy=seed, spawn_key=(row,)), so trajectory i
is a pure function of (model, policy, s0_i, seed, i, horizon) no matter
how the batch is shaped.

Reward indexing: rewards[t] belongs to action t and is computed at the
state it arrives in, so a goal detected at s_{t+1} pays out on the step
that reached it, and a start state that already fires yields an empty
action list.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _row_rng(seed: int, row: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(row,))))


def sample_start(model, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Prior draws N(0, I) in latent space; shape (n, *latent) or (*latent,)."""
    shape = model.latent_shape
    if n is None:
        return rng.standard_normal(shape).astype(np.float32)
    return rng.standard_normal((n, *shape)).astype(np.float32)


def start_from_image(model, image: np.ndarray) -> np.ndarray:
    """Encode a real frame (uint8 or [0,1] float) into a start latent."""
    return model.encode_mu_np(image)[0]


@dataclass
class DreamTrajectory:
    states: np.ndarray  # (T+1, *latent)
    actions: np.ndarray  # (T, 3) normalized
    pre_squash: np.ndarray  # (T, 3) pre-tanh policy outputs
    rewards: np.ndarray  # (T,)
    goal_probs: np.ndarray  # (T+1,)
    terminated_by_goal: bool
    nan_truncated: bool = False

    @property
    def length(self) -> int:
        return self.actions.shape[0]


class BatchRollout:
    """Fixed-size storage for a batch of dreams plus per-row lengths."""

    def __init__(self, states, actions, pre_squash, rewards, goal_probs, lengths, terminated, nan_truncated):
        self.states = states
        self.actions = actions
        self.pre_squash = pre_squash
        self.rewards = rewards
        self.goal_probs = goal_probs
        self.lengths = lengths
        self.terminated = terminated
        self.nan_truncated = nan_truncated

    @property
    def batch_size(self) -> int:
        return self.states.shape[0]

    def trajectory(self, i: int) -> DreamTrajectory:
        t = int(self.lengths[i])
        return DreamTrajectory(
            states=self.states[i, : t + 1].copy(),
            actions=self.actions[i, :t].copy(),
            pre_squash=self.pre_squash[i, :t].copy(),
            rewards=self.rewards[i, :t].copy(),
            goal_probs=self.goal_probs[i, : t + 1].copy(),
            terminated_by_goal=bool(self.terminated[i]),
            nan_truncated=bool(self.nan_truncated[i]),
        )

    def step_mask(self) -> np.ndarray:
        """(B, T) bool: True where an action was actually taken."""
        t = self.actions.shape[1]
        return np.arange(t)[None, :] < self.lengths[:, None]

    def dones(self) -> np.ndarray:
        """(B, T) bool: True at the final step of goal-terminated rows."""
        d = np.zeros_like(self.step_mask())
        idx = np.nonzero(self.terminated & (self.lengths > 0))[0]
        d[idx, self.lengths[idx] - 1] = True
        return d

    def total_rewards(self) -> np.ndarray:
        return (self.rewards * self.step_mask()).sum(axis=1)


def rollout_batch(
    model,
    policy,
    s0: np.ndarray,
    horizon: int,
    seed: int,
    mode: str = "stochastic",
    task=None,
) -> BatchRollout:
    """Advance a batch of dreams in lockstep until detection or horizon."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if mode not in ("stochastic", "greedy"):
        raise ValueError(f"mode must be stochastic|greedy, got {mode!r}")
    s0 = np.asarray(s0, np.float32)
    b = s0.shape[0]
    latent = s0.shape[1:]

    noise = np.zeros((b, horizon, 3), np.float32)
    if mode == "stochastic":
        for i in range(b):
            noise[i] = _row_rng(seed, i).standard_normal((horizon, 3)).astype(np.float32)

    states = np.zeros((b, horizon + 1, *latent), np.float32)
    actions = np.zeros((b, horizon, 3), np.float32)
    pre_squash = np.zeros((b, horizon, 3), np.float32)
    rewards = np.zeros((b, horizon), np.float32)
    goal_probs = np.zeros((b, horizon + 1), np.float32)
    lengths = np.zeros(b, np.int64)
    terminated = np.zeros(b, bool)
    truncated = np.zeros(b, bool)

    states[:, 0] = s0
    p = model.reward_prob_np(s0)
    goal_probs[:, 0] = p
    active = np.ones(b, bool)

    for t in range(horizon):
        fire = active & (p > 0.5)
        terminated |= fire
        active &= ~fire
        if not active.any():
            break
        rows = np.nonzero(active)[0]
        s_cur = states[rows, lengths[rows]]
        a, pre = policy.act_batch_np(s_cur, noise[rows, t], greedy=(mode == "greedy"))
        s_next = model.transition_np(s_cur, a)

        bad = ~np.isfinite(s_next.reshape(len(rows), -1)).all(axis=1)
        if bad.any():
            truncated[rows[bad]] = True
            active[rows[bad]] = False
            rows = rows[~bad]
            if rows.size == 0:
                continue
            a, pre, s_next = a[~bad], pre[~bad], s_next[~bad]

        p_next = model.reward_prob_np(s_next)
        if task is not None:
            r = task.reward(p_next, a)
        else:
            r = np.zeros(len(rows), np.float32)

        tcur = lengths[rows]
        actions[rows, tcur] = a
        pre_squash[rows, tcur] = pre
        rewards[rows, tcur] = r
        states[rows, tcur + 1] = s_next
        goal_probs[rows, tcur + 1] = p_next
        lengths[rows] += 1
        p[rows] = p_next

    return BatchRollout(states, actions, pre_squash, rewards, goal_probs, lengths, terminated, truncated)


def rollout(
    model,
    policy,
    s0: np.ndarray,
    horizon: int,
    seed: int,
    mode: str = "stochastic",
    task=None,
) -> DreamTrajectory:
    """Single dreamed trajectory; equal to row 0 of a batch with this seed."""
    batch = rollout_batch(model, policy, np.asarray(s0, np.float32)[None], horizon, seed, mode, task)
    return batch.trajectory(0)


def rollout_actions(model, s0: np.ndarray, actions: np.ndarray, task=None) -> BatchRollout:
    """Open-loop dreams: apply given normalized action sequences (B, T, 3).

    Detection still terminates a row early; remaining actions are ignored.
    """
    s0 = np.asarray(s0, np.float32)
    acts = np.asarray(actions, np.float32)
    b, horizon = acts.shape[0], acts.shape[1]
    latent = s0.shape[1:]

    states = np.zeros((b, horizon + 1, *latent), np.float32)
    taken = np.zeros((b, horizon, 3), np.float32)
    rewards = np.zeros((b, horizon), np.float32)
    goal_probs = np.zeros((b, horizon + 1), np.float32)
    lengths = np.zeros(b, np.int64)
    terminated = np.zeros(b, bool)
    truncated = np.zeros(b, bool)

    states[:, 0] = s0
    p = model.reward_prob_np(s0)
    goal_probs[:, 0] = p
    active = np.ones(b, bool)

    for t in range(horizon):
        fire = active & (p > 0.5)
        terminated |= fire
        active &= ~fire
        if not active.any():
            break
        rows = np.nonzero(active)[0]
        s_cur = states[rows, lengths[rows]]
        a = acts[rows, t]
        s_next = model.transition_np(s_cur, a)
        bad = ~np.isfinite(s_next.reshape(len(rows), -1)).all(axis=1)
        if bad.any():
            truncated[rows[bad]] = True
            active[rows[bad]] = False
            rows = rows[~bad]
            if rows.size == 0:
                continue
            a, s_next = a[~bad], s_next[~bad]
        p_next = model.reward_prob_np(s_next)
        r = task.reward(p_next, a) if task is not None else np.zeros(len(rows), np.float32)
        tcur = lengths[rows]
        taken[rows, tcur] = a
        rewards[rows, tcur] = r
        states[rows, tcur + 1] = s_next
        goal_probs[rows, tcur + 1] = p_next
        lengths[rows] += 1
        p[rows] = p_next

    return BatchRollout(states, taken, np.zeros_like(taken), rewards, goal_probs, lengths, terminated, truncated)
