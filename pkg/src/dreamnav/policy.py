"""Task rewards and controllers trained inside the dream.

Four learners over the same tiny actor/critic architecture (full-extent
conv trunk, 1x1 head, tanh-squashed diagonal Gaussian): Monte-Carlo
policy gradient with a mean baseline, one-step actor-critic, CMA-ES over
actor weights, and a re-planning random-shooting controller. A constant
forward driver serves as the floor baseline.

None of the trainers import or touch the simulator; they consume a world
model, a task definition and optionally a bank of start latents encoded
from the already-collected dataset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dreamnav import nn
from dreamnav import persist
from dreamnav.cma import CMAES
from dreamnav.dream import rollout_actions, rollout_batch
from dreamnav.errors import ConfigError, TrainError
from dreamnav.nn import ParamStore, Tensor

LOG_STD_MIN = -5.0
LOG_STD_MAX = 0.0
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TaskSpec:
    """Reward definition evaluated at the state an action arrives in."""

    kind: str  # approach | avoid
    step_reward: float = -1.0
    goal_reward: float = 100.0
    hit_penalty: float = -100.0
    gamma: float = 0.99
    min_dv: float | None = None  # forced minimum forward motion (avoid eval)

    def __post_init__(self):
        if self.kind not in ("approach", "avoid"):
            raise ConfigError(f"task kind must be approach|avoid, got {self.kind!r}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")

    def reward(self, goal_prob: np.ndarray, actions_norm: np.ndarray) -> np.ndarray:
        fire = np.asarray(goal_prob) > 0.5
        if self.kind == "approach":
            return np.where(fire, self.goal_reward, self.step_reward).astype(np.float32)
        dv_cm = (np.asarray(actions_norm)[..., 1] + 1.0) * 10.0
        return np.where(fire, self.hit_penalty, dv_cm).astype(np.float32)


def discounted_return(rewards, gamma: float) -> float:
    """Sum of gamma^t * r_t with t counted from the trajectory start."""
    if not 0.0 < gamma <= 1.0:
        raise ConfigError("gamma must lie in (0, 1]")
    r = np.asarray(rewards, np.float64).reshape(-1)
    if r.size == 0:
        return 0.0
    return float(r @ gamma ** np.arange(r.size))


def returns_to_go(rewards: np.ndarray, mask: np.ndarray, gamma: float) -> np.ndarray:
    """(B, T) discounted suffix sums over the valid steps of each row."""
    out = np.zeros_like(rewards, dtype=np.float64)
    acc = np.zeros(rewards.shape[0], np.float64)
    for t in range(rewards.shape[1] - 1, -1, -1):
        valid = mask[:, t]
        acc = np.where(valid, rewards[:, t] + gamma * acc, acc)
        out[:, t] = np.where(valid, acc, 0.0)
    return out


class GaussianPolicy:
    """Conv trunk over the latent, 3-channel action mean, learned
    state-independent log standard deviations, tanh squashing."""

    def __init__(self, latent_shape: tuple[int, ...], trunk_channels: int = 64, seed: int = 0, log_std_init: float = -0.5):
        self.latent_shape = tuple(latent_shape)
        self.trunk_channels = trunk_channels
        self.params = ParamStore()
        rng = np.random.default_rng(seed)
        c = trunk_channels
        if len(self.latent_shape) == 1:
            d = self.latent_shape[0]
            self.params.add("actor/c0/w", nn.kaiming_uniform((d, c), d, rng))
            self.params.add("actor/c0/b", np.zeros(c, np.float32))
            self.params.add("actor/c1/w", nn.kaiming_uniform((c, 3), c, rng) * 0.1)
            self.params.add("actor/c1/b", np.zeros(3, np.float32))
            self.params.add("critic/c0/w", nn.kaiming_uniform((d, c), d, rng))
            self.params.add("critic/c0/b", np.zeros(c, np.float32))
            self.params.add("critic/c1/w", nn.kaiming_uniform((c, 1), c, rng) * 0.1)
            self.params.add("critic/c1/b", np.zeros(1, np.float32))
        else:
            h, w, ch = self.latent_shape
            k = min(h, 2)
            self._k = k
            fan = k * k * ch
            self.params.add("actor/c0/w", nn.kaiming_uniform((k, k, ch, c), fan, rng))
            self.params.add("actor/c0/b", np.zeros(c, np.float32))
            self.params.add("actor/c1/w", nn.kaiming_uniform((1, 1, c, 3), c, rng) * 0.1)
            self.params.add("actor/c1/b", np.zeros(3, np.float32))
            self.params.add("critic/c0/w", nn.kaiming_uniform((k, k, ch, c), fan, rng))
            self.params.add("critic/c0/b", np.zeros(c, np.float32))
            self.params.add("critic/c1/w", nn.kaiming_uniform((1, 1, c, 1), c, rng) * 0.1)
            self.params.add("critic/c1/b", np.zeros(1, np.float32))
        self.params.add("log_std", np.full(3, log_std_init, np.float32))

    # -- forward -------------------------------------------------------------

    def _trunk(self, s: Tensor, prefix: str) -> Tensor:
        if len(self.latent_shape) == 1:
            h = nn.relu(nn.linear(s, self.params[f"{prefix}/c0/w"], self.params[f"{prefix}/c0/b"]))
            return nn.linear(h, self.params[f"{prefix}/c1/w"], self.params[f"{prefix}/c1/b"])
        h = nn.relu(nn.conv2d(s, self.params[f"{prefix}/c0/w"], self.params[f"{prefix}/c0/b"], 1, 0))
        out = nn.conv2d(h, self.params[f"{prefix}/c1/w"], self.params[f"{prefix}/c1/b"], 1, 0)
        n = out.shape[0]
        return nn.mean(nn.reshape(out, (n, -1, out.shape[-1])), axis=1)

    def actor_mean(self, s) -> Tensor:
        s = s if isinstance(s, Tensor) else Tensor(np.asarray(s, np.float32))
        return self._trunk(s, "actor")

    def critic_value(self, s) -> Tensor:
        s = s if isinstance(s, Tensor) else Tensor(np.asarray(s, np.float32))
        return nn.reshape(self._trunk(s, "critic"), (s.shape[0],))

    def log_std_clipped(self) -> np.ndarray:
        return np.clip(self.params["log_std"].data, LOG_STD_MIN, LOG_STD_MAX)

    # -- acting (no graph) -----------------------------------------------------

    def act_batch_np(self, s: np.ndarray, noise: np.ndarray | None, greedy: bool = False):
        """Returns (tanh actions (B,3), pre-squash draws (B,3))."""
        with nn.no_grad():
            mean = self.actor_mean(s).data
        if greedy or noise is None:
            pre = mean
        else:
            pre = mean + np.exp(self.log_std_clipped()) * noise
        return np.tanh(pre), pre

    def act(self, s: np.ndarray, rng: np.random.Generator | None = None, mode: str = "stochastic") -> np.ndarray:
        """Single-state convenience; stochastic mode needs an rng."""
        single = np.asarray(s, np.float32)[None]
        if mode == "greedy" or rng is None:
            a, _ = self.act_batch_np(single, None, greedy=True)
        else:
            a, _ = self.act_batch_np(single, rng.standard_normal((1, 3)).astype(np.float32))
        return a[0]

    def act_eval(self, s: np.ndarray) -> np.ndarray:
        return self.act(s, mode="greedy")

    # -- densities --------------------------------------------------------------

    def log_prob(self, s, pre_squash: np.ndarray) -> Tensor:
        """log pi(a|s) for a = tanh(pre_squash): Gaussian density of the
        pre-squash value minus the tanh change-of-variables term."""
        mean = self.actor_mean(s)
        log_std = np.clip(self.params["log_std"].data, LOG_STD_MIN, LOG_STD_MAX)
        u = np.asarray(pre_squash, np.float32)
        inv_var = np.exp(-2.0 * log_std)
        diff = nn.sub(Tensor(u), mean)
        quad = nn.mul(nn.square(diff), Tensor(0.5 * inv_var))
        const = float(np.sum(log_std) + 1.5 * _LOG_2PI)
        jac = np.sum(np.log(1.0 - np.tanh(u) ** 2 + 1e-6), axis=1)
        per_dim = nn.sum_(quad, axis=1)
        return nn.sub(Tensor((-const - jac).astype(np.float32)), per_dim)

    def clamp_log_std(self) -> None:
        p = self.params["log_std"]
        p.data = np.clip(p.data, LOG_STD_MIN, LOG_STD_MAX)

    def actor_param_names(self) -> list[str]:
        return [n for n in self.params.names() if n.startswith("actor/")]

    # -- persistence --------------------------------------------------------------

    def metadata(self) -> dict[str, str]:
        return {
            "kind": "policy",
            "latent_shape": ",".join(str(d) for d in self.latent_shape),
            "trunk_channels": str(self.trunk_channels),
        }

    def save(self, path, extra: dict[str, str] | None = None) -> None:
        meta = self.metadata()
        if extra:
            meta.update(extra)
        persist.write_checkpoint(path, self.params, meta)


def load_policy(path) -> GaussianPolicy:
    tensors, meta = persist.read_checkpoint(path)
    if meta.get("kind") != "policy":
        raise ConfigError(f"{path} is not a policy checkpoint")
    latent_shape = tuple(int(d) for d in meta["latent_shape"].split(","))
    pol = GaussianPolicy(latent_shape, trunk_channels=int(meta["trunk_channels"]))
    if set(tensors) != set(pol.params.names()):
        raise ConfigError(f"{path}: checkpoint tensors do not match the declared geometry")
    pol.params.load_state_dict(tensors)
    return pol


class ConstantForwardPolicy:
    """Always drive straight at full speed: (0 deg, 20 cm, 0 deg)."""

    def act_batch_np(self, s, noise, greedy: bool = False):
        a = np.tile(np.array([0.0, 1.0, 0.0], np.float32), (s.shape[0], 1))
        return a, a.copy()

    def act_eval(self, s) -> np.ndarray:
        return np.array([0.0, 1.0, 0.0], np.float32)


class RandomPolicy:
    """Uniform actions in the normalized box; own internal stream."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def act_batch_np(self, s, noise, greedy: bool = False):
        a = self.rng.uniform(-1.0, 1.0, size=(s.shape[0], 3)).astype(np.float32)
        return a, a.copy()

    def act_eval(self, s) -> np.ndarray:
        return self.rng.uniform(-1.0, 1.0, size=3).astype(np.float32)


# ---------------------------------------------------------------------------
# training configuration and start states


@dataclass
class PolicyTrainConfig:
    algorithm: str = "actor-critic"  # reinforce | actor-critic | cmaes | mpc
    iterations: int = 2000
    batch_size: int = 256
    horizon: int = 30
    lr: float = 0.01
    start_mode: str = "combined"  # random | real | combined
    trunk_channels: int = 64
    critic_weight: float = 0.5
    cma_population: int = 128
    cma_generations: int = 50
    cma_sigma0: float = 0.2
    cma_rollouts: int = 256
    cma_trunk_channels: int = 32
    cma_diagonal: bool = True
    mpc_candidates: int = 64
    mpc_horizon: int = 12
    seed: int = 0
    log_every: int = 0

    def __post_init__(self):
        if self.start_mode not in ("random", "real", "combined"):
            raise ConfigError(f"start_mode must be random|real|combined, got {self.start_mode!r}")
        if self.iterations < 1 or self.batch_size < 1 or self.horizon < 1:
            raise ConfigError("iterations, batch_size and horizon must be positive")


def make_start_states(
    model, n: int, mode: str, rng: np.random.Generator, real_latents: np.ndarray | None
) -> np.ndarray:
    """Start latents: prior samples, encoded dataset frames, or half/half."""
    if mode in ("real", "combined") and (real_latents is None or len(real_latents) == 0):
        raise ConfigError(f"start mode {mode!r} needs encoded dataset frames")
    shape = model.latent_shape
    if mode == "random":
        return rng.standard_normal((n, *shape)).astype(np.float32)
    if mode == "real":
        idx = rng.integers(0, len(real_latents), size=n)
        return real_latents[idx].astype(np.float32)
    n_rand = n // 2
    rand = rng.standard_normal((n_rand, *shape)).astype(np.float32)
    idx = rng.integers(0, len(real_latents), size=n - n_rand)
    return np.concatenate([rand, real_latents[idx].astype(np.float32)], axis=0)


def _train_seed(seed: int, tag: int, i: int) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(tag, i)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# policy-gradient trainers


def _flatten_batch(batch):
    """Valid (s_t, pre, r, s_t1, done) tuples from a batch of dreams."""
    mask = batch.step_mask()
    rows, ts = np.nonzero(mask)
    s_t = batch.states[rows, ts]
    s_t1 = batch.states[rows, ts + 1]
    pre = batch.pre_squash[rows, ts]
    r = batch.rewards[rows, ts]
    done = batch.dones()[rows, ts]
    return s_t, pre, r, s_t1, done, rows, ts


def _iteration_stats(batch, task) -> dict:
    returns = [discounted_return(batch.rewards[i, : batch.lengths[i]], task.gamma) for i in range(batch.batch_size)]
    return {
        "return": float(np.mean(returns)),
        "reached": float(batch.terminated.mean()),
        "length": float(batch.lengths.mean()),
    }


def actor_critic_train(
    model, task: TaskSpec, cfg: PolicyTrainConfig, real_latents: np.ndarray | None = None
) -> tuple[GaussianPolicy, dict]:
    """Batched one-step actor-critic on dreamed transitions.

    Per iteration: dream a batch, bootstrap targets y = r + gamma V(s'),
    advantage y - V(s), one Adam step on actor plus critic jointly.
    """
    policy = GaussianPolicy(model.latent_shape, cfg.trunk_channels, seed=_train_seed(cfg.seed, 0, 0))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(1,)))
    history = {"return": [], "reached": [], "length": []}
    for it in range(cfg.iterations):
        starts = make_start_states(model, cfg.batch_size, cfg.start_mode, rng, real_latents)
        batch = rollout_batch(
            model, policy, starts, cfg.horizon, seed=_train_seed(cfg.seed, 2, it), mode="stochastic", task=task
        )
        s_t, pre, r, s_t1, done, _, _ = _flatten_batch(batch)
        if s_t.shape[0] == 0:
            continue
        with nn.no_grad():
            v_next = policy.critic_value(s_t1).data
        y = (r + task.gamma * v_next * (1.0 - done)).astype(np.float32)
        with nn.no_grad():
            v_now = policy.critic_value(s_t).data
        adv = (y - v_now).astype(np.float32)

        policy.params.zero_grad()
        logp = policy.log_prob(s_t, pre)
        actor_loss = nn.mul(nn.mean(nn.mul(logp, Tensor(adv))), -1.0)
        v_pred = policy.critic_value(s_t)
        critic_loss = nn.mse(v_pred, y)
        loss = actor_loss + nn.mul(critic_loss, cfg.critic_weight)
        if not np.isfinite(loss.item()):
            raise TrainError(f"non-finite policy loss at iteration {it}")
        nn.backward(loss)
        policy.params.check_finite_grads()
        nn.adam_step(policy.params, cfg.lr)
        policy.clamp_log_std()

        stats = _iteration_stats(batch, task)
        for k in history:
            history[k].append(stats[k])
        if cfg.log_every and it % cfg.log_every == 0:
            print(f"[actor-critic] iter {it}: " + " ".join(f"{k}={v:.3f}" for k, v in stats.items()))
    return policy, history


def reinforce_train(
    model, task: TaskSpec, cfg: PolicyTrainConfig, real_latents: np.ndarray | None = None
) -> tuple[GaussianPolicy, dict]:
    """Monte-Carlo policy gradient with discounted returns-to-go and a
    per-timestep mean baseline over the rollout batch."""
    policy = GaussianPolicy(model.latent_shape, cfg.trunk_channels, seed=_train_seed(cfg.seed, 0, 0))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(1,)))
    history = {"return": [], "reached": [], "length": []}
    for it in range(cfg.iterations):
        starts = make_start_states(model, cfg.batch_size, cfg.start_mode, rng, real_latents)
        batch = rollout_batch(
            model, policy, starts, cfg.horizon, seed=_train_seed(cfg.seed, 2, it), mode="stochastic", task=task
        )
        mask = batch.step_mask()
        if not mask.any():
            continue
        g = returns_to_go(batch.rewards, mask, task.gamma)
        counts = mask.sum(axis=0)
        sums = (g * mask).sum(axis=0)
        baseline = np.divide(sums, np.maximum(counts, 1), where=counts > 0)
        adv = (g - baseline[None, :]) * mask

        rows, ts = np.nonzero(mask)
        s_t = batch.states[rows, ts]
        pre = batch.pre_squash[rows, ts]
        a_flat = adv[rows, ts].astype(np.float32)

        policy.params.zero_grad()
        logp = policy.log_prob(s_t, pre)
        loss = nn.mul(nn.mean(nn.mul(logp, Tensor(a_flat))), -1.0)
        if not np.isfinite(loss.item()):
            raise TrainError(f"non-finite policy loss at iteration {it}")
        nn.backward(loss)
        policy.params.check_finite_grads()
        nn.adam_step(policy.params, cfg.lr)
        policy.clamp_log_std()

        stats = _iteration_stats(batch, task)
        for k in history:
            history[k].append(stats[k])
        if cfg.log_every and it % cfg.log_every == 0:
            print(f"[reinforce] iter {it}: " + " ".join(f"{k}={v:.3f}" for k, v in stats.items()))
    return policy, history


# ---------------------------------------------------------------------------
# evolutionary search


def cmaes_train(
    model, task: TaskSpec, cfg: PolicyTrainConfig, real_latents: np.ndarray | None = None
) -> tuple[GaussianPolicy, dict]:
    """CMA-ES over actor weights; fitness is the mean dreamed return of
    greedy rollouts from generation-fixed start states."""
    policy = GaussianPolicy(
        model.latent_shape, cfg.cma_trunk_channels, seed=_train_seed(cfg.seed, 0, 0)
    )
    names = policy.actor_param_names()
    x0 = policy.params.flat_values(names)
    es = CMAES(
        x0,
        cfg.cma_sigma0,
        population=cfg.cma_population,
        diagonal=cfg.cma_diagonal,
        seed=_train_seed(cfg.seed, 3, 0),
    )
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(1,)))
    history = {"best": [], "mean_fitness": []}
    for gen in range(cfg.cma_generations):
        starts = make_start_states(model, cfg.cma_rollouts, cfg.start_mode, rng, real_latents)
        xs = es.ask()
        fits = np.empty(len(xs))
        for k, x in enumerate(xs):
            policy.params.set_flat_values(x.astype(np.float32), names)
            batch = rollout_batch(
                model, policy, starts, cfg.horizon, seed=_train_seed(cfg.seed, 4, gen), mode="greedy", task=task
            )
            rets = [
                discounted_return(batch.rewards[i, : batch.lengths[i]], task.gamma)
                for i in range(batch.batch_size)
            ]
            fits[k] = -float(np.mean(rets))
        es.tell(xs, fits)
        history["best"].append(-es.best_f)
        history["mean_fitness"].append(-float(fits.mean()))
        if cfg.log_every and gen % cfg.log_every == 0:
            print(f"[cmaes] gen {gen}: best={-es.best_f:.2f} mean={-fits.mean():.2f} restarts={es.restarts}")
    policy.params.set_flat_values(es.best_x.astype(np.float32), names)
    return policy, history


# ---------------------------------------------------------------------------
# planning


class MPCPolicy:
    """Random-shooting planner: sample action sequences, dream each out,
    execute the first action of the best-scoring sequence; replans every
    call with a stream derived from (seed, call index)."""

    def __init__(self, model, task: TaskSpec, n_candidates: int = 64, horizon: int = 12, seed: int = 0):
        if n_candidates < 1 or horizon < 1:
            raise ConfigError("n_candidates and horizon must be positive")
        self.model = model
        self.task = task
        self.n_candidates = n_candidates
        self.horizon = horizon
        self.seed = seed
        self._calls = 0

    def plan(self, s: np.ndarray, call_index: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=self.seed, spawn_key=(call_index,)))
        seqs = rng.uniform(-1.0, 1.0, size=(self.n_candidates, self.horizon, 3)).astype(np.float32)
        s0 = np.repeat(np.asarray(s, np.float32)[None], self.n_candidates, axis=0)
        batch = rollout_actions(self.model, s0, seqs, task=self.task)
        rets = np.array(
            [
                discounted_return(batch.rewards[i, : batch.lengths[i]], self.task.gamma)
                for i in range(self.n_candidates)
            ]
        )
        return seqs[int(np.argmax(rets)), 0]

    def act_eval(self, s: np.ndarray) -> np.ndarray:
        a = self.plan(s, self._calls)
        self._calls += 1
        return a

    def act_batch_np(self, s, noise, greedy: bool = False):
        a = np.stack([self.act_eval(s[i]) for i in range(s.shape[0])])
        return a, a.copy()


def constant_forward() -> ConstantForwardPolicy:
    return ConstantForwardPolicy()


def train_policy(
    model, task: TaskSpec, cfg: PolicyTrainConfig, real_latents: np.ndarray | None = None
):
    """Dispatch on cfg.algorithm; mpc needs no training and returns a planner."""
    if cfg.algorithm == "actor-critic":
        return actor_critic_train(model, task, cfg, real_latents)
    if cfg.algorithm == "reinforce":
        return reinforce_train(model, task, cfg, real_latents)
    if cfg.algorithm == "cmaes":
        return cmaes_train(model, task, cfg, real_latents)
    if cfg.algorithm == "mpc":
        return (
            MPCPolicy(model, task, cfg.mpc_candidates, cfg.mpc_horizon, seed=cfg.seed),
            {"return": []},
        )
    raise ConfigError(f"unknown algorithm {cfg.algorithm!r}")
