"""Measurement battery: transition metrics, offline (dream-then-execute)
and online (closed-loop) policy evaluation, a goal-classifier baseline
representation, and ablation grids.

Offline protocol: render the start frame once, encode it, then pick the
whole action sequence from dreamed states while the same actions run
silently through the ground-truth kinematics; no re-rendering, no
feedback. Online protocol closes the loop through the renderer every
step. Success means the true robot-target distance ends within the goal
radius (approach) or never enters it (avoid).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from dreamnav import nn
from dreamnav.data import Dataset
from dreamnav.env import (
    WorldConfig,
    WorldSim,
    clamp_action,
    denormalize_action,
    normalize_action,
)
from dreamnav.errors import ConfigError
from dreamnav.nn import ParamStore, Tensor
from dreamnav.policy import TaskSpec
from dreamnav.world_model import WorldModelConfig, WorldTrainConfig, train_world_model


# ---------------------------------------------------------------------------
# transition-prediction metrics


def d_metrics(
    model,
    heldout: Dataset,
    pair_samples: int = 10_000,
    rng: np.random.Generator | None = None,
    transition_fn=None,
) -> dict:
    """Normalized L1 prediction errors over held-out transitions.

    d1 normalizes each triple by its actual state change (an identity
    predictor scores exactly 1); d2 normalizes by the mean pairwise
    distance between held-out states, estimated from `pair_samples`
    random pairs. Triples with zero state change are excluded from d1
    and counted.
    """
    if heldout.n_triples < 2:
        raise ConfigError("need at least two held-out transitions")
    rng = rng if rng is not None else np.random.default_rng(0)
    img_t, act, img_t1, _, _ = heldout.triple_batch(heldout.all_rows())
    s_t = model.encode_mu_np(img_t)
    s_t1 = model.encode_mu_np(img_t1)
    a_norm = normalize_action(act)
    fn = transition_fn if transition_fn is not None else model.transition_np
    pred = fn(s_t, a_norm)

    n = s_t.shape[0]
    flat_pred = pred.reshape(n, -1).astype(np.float64)
    flat_t = s_t.reshape(n, -1).astype(np.float64)
    flat_t1 = s_t1.reshape(n, -1).astype(np.float64)
    num = np.abs(flat_pred - flat_t1).sum(axis=1)
    den = np.abs(flat_t - flat_t1).sum(axis=1)
    ok = den > 0
    if not ok.any():
        raise ConfigError("all held-out transitions are degenerate (no state change)")
    d1 = float((num[ok] / den[ok]).mean())

    pool = np.concatenate([flat_t, flat_t1], axis=0)
    i = rng.integers(0, pool.shape[0], size=pair_samples)
    j = rng.integers(0, pool.shape[0], size=pair_samples)
    keep = i != j
    pair_mean = float(np.abs(pool[i[keep]] - pool[j[keep]]).sum(axis=1).mean())
    d2 = float(num.mean() / pair_mean)
    return {"d1": d1, "d2": d2, "n_triples": int(n), "n_excluded": int((~ok).sum())}


def identity_transition(s: np.ndarray, a: np.ndarray) -> np.ndarray:
    return s.copy()


# ---------------------------------------------------------------------------
# policy evaluation


@dataclass
class EvalReport:
    task: str
    mode: str
    n_trials: int
    successes: int
    hits: int
    mean_final_distance: float
    mean_steps: float
    horizon: int
    goal_radius: float
    seed: int

    @property
    def success_rate(self) -> float:
        return self.successes / self.n_trials

    def rows(self) -> list[list]:
        return [
            ["task", self.task],
            ["mode", self.mode],
            ["n_trials", self.n_trials],
            ["successes", self.successes],
            ["hits", self.hits],
            ["success_rate", self.success_rate],
            ["mean_final_distance_cm", self.mean_final_distance],
            ["mean_steps", self.mean_steps],
            ["horizon", self.horizon],
            ["goal_radius_cm", self.goal_radius],
            ["seed", self.seed],
        ]


class ScriptedApproachPolicy:
    """Perfect-knowledge upper bound: turn to the true bearing, drive,
    brake into the goal disk. Reads the simulator state directly, so it
    only exists to sanity-check the evaluation protocol."""

    privileged = True

    def act_env(self, state) -> np.ndarray:
        r, t = state.robot, state.target
        dist = math.hypot(t.x - r.x, t.y - r.y)
        bearing = (math.degrees(math.atan2(t.y - r.y, t.x - r.x)) - r.theta + 180.0) % 360.0 - 180.0
        d_alpha = float(np.clip(bearing, -30.0, 30.0))
        residual = bearing - d_alpha
        if abs(residual) > 15.0:
            dv = 0.0
        else:
            dv = float(np.clip(dist - 10.0, 0.0, 20.0))
        d_omega = float(np.clip(residual, -30.0, 30.0))
        return np.array([d_alpha, dv, d_omega], np.float32)


def _trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(trial,))))


def _force_min_dv(action_phys: np.ndarray, min_dv: float | None) -> np.ndarray:
    if min_dv is None:
        return action_phys
    out = action_phys.copy()
    out[1] = max(out[1], min_dv)
    return out


def offline_eval(
    sim: WorldSim,
    model,
    policy,
    task: TaskSpec,
    n_trials: int = 500,
    horizon: int = 30,
    seed: int = 0,
    record_paths: bool = False,
) -> EvalReport | tuple[EvalReport, list]:
    """Dream-side closed loop, ground-truth kinematics, no visual feedback."""
    privileged = getattr(policy, "privileged", False)
    successes = hits = 0
    dists, steps_taken, paths = [], [], []
    for trial in range(n_trials):
        rng = _trial_rng(seed, trial)
        state = sim.reset(rng)
        s = None
        if not privileged:
            s = model.encode_mu_np(sim.render(state)[None])
        hit = False
        steps = 0
        path = [(state.robot.x, state.robot.y)]
        for _ in range(horizon):
            if not privileged and task.kind == "approach":
                if float(model.reward_prob_np(s)[0]) > 0.5:
                    break
            if privileged:
                a_phys = policy.act_env(state)
            else:
                a_norm = policy.act_eval(s[0])
                a_phys = denormalize_action(a_norm)
            a_phys = _force_min_dv(np.asarray(a_phys, np.float32), task.min_dv)
            state = sim.step(state, a_phys)
            steps += 1
            path.append((state.robot.x, state.robot.y))
            if not privileged:
                exec_norm = normalize_action(clamp_action(a_phys)[0].as_array())
                s = model.transition_np(s, exec_norm[None])
            if task.kind == "avoid" and sim.goal_reached(state)[0]:
                hit = True
        reached, dist = sim.goal_reached(state)
        if task.kind == "approach":
            successes += int(reached)
        else:
            hits += int(hit)
            successes += int(not hit)
        dists.append(dist)
        steps_taken.append(steps)
        if record_paths:
            paths.append((np.asarray(path), (state.target.x, state.target.y)))
    report = EvalReport(
        task=task.kind,
        mode="offline",
        n_trials=n_trials,
        successes=successes,
        hits=hits,
        mean_final_distance=float(np.mean(dists)),
        mean_steps=float(np.mean(steps_taken)),
        horizon=horizon,
        goal_radius=sim.config.goal_radius,
        seed=seed,
    )
    return (report, paths) if record_paths else report


def online_eval(
    sim: WorldSim,
    model,
    policy,
    task: TaskSpec,
    n_trials: int = 100,
    horizon: int = 30,
    seed: int = 0,
    record_paths: bool = False,
) -> EvalReport | tuple[EvalReport, list]:
    """Fully closed loop: render, encode, act, step, re-render each step."""
    successes = hits = 0
    dists, steps_taken, paths = [], [], []
    for trial in range(n_trials):
        rng = _trial_rng(seed, trial)
        state = sim.reset(rng)
        hit = False
        steps = 0
        path = [(state.robot.x, state.robot.y)]
        for _ in range(horizon):
            s = model.encode_mu_np(sim.render(state)[None])
            if task.kind == "approach" and float(model.reward_prob_np(s)[0]) > 0.5:
                break
            a_phys = denormalize_action(policy.act_eval(s[0]))
            a_phys = _force_min_dv(np.asarray(a_phys, np.float32), task.min_dv)
            state = sim.step(state, a_phys)
            steps += 1
            path.append((state.robot.x, state.robot.y))
            if task.kind == "avoid" and sim.goal_reached(state)[0]:
                hit = True
        reached, dist = sim.goal_reached(state)
        if task.kind == "approach":
            successes += int(reached)
        else:
            hits += int(hit)
            successes += int(not hit)
        dists.append(dist)
        steps_taken.append(steps)
        if record_paths:
            paths.append((np.asarray(path), (state.target.x, state.target.y)))
    report = EvalReport(
        task=task.kind,
        mode="online",
        n_trials=n_trials,
        successes=successes,
        hits=hits,
        mean_final_distance=float(np.mean(dists)),
        mean_steps=float(np.mean(steps_taken)),
        horizon=horizon,
        goal_radius=sim.config.goal_radius,
        seed=seed,
    )
    return (report, paths) if record_paths else report


# ---------------------------------------------------------------------------
# goal-classifier baseline representation


class StandardRewardModel:
    """Baseline state: penultimate features of a goal classifier, with a
    vector transition network on top. No decoder exists, so dreams from
    this representation cannot be rendered."""

    FEAT_DIM = 256

    def __init__(self, image_size: int, rng: np.random.Generator):
        self.image_size = image_size
        self.params = ParamStore()
        plan = [(0, 3, 32), (0, 32, 64), (0, 64, 128), (0, 128, 256)]
        size = image_size
        for i, (pad, c_in, c_out) in enumerate(plan):
            self.params.add(
                f"cls/c{i}/w", nn.kaiming_uniform((4, 4, c_in, c_out), 16 * c_in, rng)
            )
            self.params.add(f"cls/c{i}/b", np.zeros(c_out, np.float32))
            size = (size + 2 * pad - 4) // 2 + 1
        self._flat = size * size * 256
        self.params.add("cls/fc0/w", nn.kaiming_uniform((self._flat, self.FEAT_DIM), self._flat, rng))
        self.params.add("cls/fc0/b", np.zeros(self.FEAT_DIM, np.float32))
        self.params.add("cls/fc1/w", nn.kaiming_uniform((self.FEAT_DIM, 1), self.FEAT_DIM, rng))
        self.params.add("cls/fc1/b", np.zeros(1, np.float32))

        self.params.add("act/fc0/w", nn.kaiming_uniform((3, 32), 3, rng))
        self.params.add("act/fc0/b", np.zeros(32, np.float32))
        d_in = self.FEAT_DIM + 32
        for i, d_out in enumerate((512, 512, 256, self.FEAT_DIM)):
            self.params.add(f"reg/c{i}/w", nn.kaiming_uniform((d_in, d_out), d_in, rng))
            self.params.add(f"reg/c{i}/b", np.zeros(d_out, np.float32))
            d_in = d_out

    @property
    def latent_shape(self) -> tuple[int, ...]:
        return (self.FEAT_DIM,)

    def features(self, images) -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, np.float32))
        h = x
        for i in range(4):
            h = nn.relu(nn.conv2d(h, self.params[f"cls/c{i}/w"], self.params[f"cls/c{i}/b"], 2, 0))
        h = nn.reshape(h, (h.shape[0], -1))
        return nn.relu(nn.linear(h, self.params["cls/fc0/w"], self.params["cls/fc0/b"]))

    def classifier_logit(self, feats: Tensor) -> Tensor:
        out = nn.linear(feats, self.params["cls/fc1/w"], self.params["cls/fc1/b"])
        return nn.reshape(out, (feats.shape[0],))

    def transition(self, feats, actions) -> Tensor:
        f = feats if isinstance(feats, Tensor) else Tensor(np.asarray(feats, np.float32))
        a = actions if isinstance(actions, Tensor) else Tensor(np.asarray(actions, np.float32))
        emb = nn.leaky_relu(nn.linear(a, self.params["act/fc0/w"], self.params["act/fc0/b"]))
        h = nn.concat([f, emb], axis=-1)
        for i in range(4):
            h = nn.leaky_relu(nn.linear(h, self.params[f"reg/c{i}/w"], self.params[f"reg/c{i}/b"]))
        return h

    # duck-typed model protocol used by rollouts and evaluation
    def encode_mu_np(self, images, batch: int = 256) -> np.ndarray:
        imgs = np.asarray(images)
        if imgs.ndim == 3:
            imgs = imgs[None]
        if imgs.dtype == np.uint8:
            imgs = imgs.astype(np.float32) / 255.0
        outs = []
        with nn.no_grad():
            for i in range(0, imgs.shape[0], batch):
                outs.append(self.features(imgs[i : i + batch]).data)
        return np.concatenate(outs, axis=0)

    def transition_np(self, feats: np.ndarray, actions: np.ndarray) -> np.ndarray:
        with nn.no_grad():
            return self.transition(feats.astype(np.float32), actions.astype(np.float32)).data

    def reward_prob_np(self, feats: np.ndarray) -> np.ndarray:
        with nn.no_grad():
            logit = self.classifier_logit(Tensor(feats.astype(np.float32))).data
        return 1.0 / (1.0 + np.exp(-logit))


@dataclass
class StandardRewardTrainConfig:
    classifier_epochs: int = 25
    transition_epochs: int = 5
    lr: float = 0.001
    batch_size: int = 64
    seed: int = 0


def train_standard_reward(
    dataset: Dataset,
    labeled_images: np.ndarray,
    labels: np.ndarray,
    cfg: StandardRewardTrainConfig,
    image_size: int = 64,
) -> StandardRewardModel:
    """Stage 1: goal classifier on labeled frames. Stage 2: vector
    transition network on the frozen classifier features."""
    labels = np.asarray(labels, np.float32)
    if labels.min() == labels.max():
        raise ConfigError("classifier needs both goal and non-goal examples")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, 0))))
    model = StandardRewardModel(image_size, rng)
    shuffle = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, 1))))

    imgs = labeled_images.astype(np.float32) / 255.0
    cls = model.params.view("cls/")
    n = imgs.shape[0]
    for _ in range(cfg.classifier_epochs):
        perm = shuffle.permutation(n)
        for b0 in range(0, n, cfg.batch_size):
            idx = perm[b0 : b0 + cfg.batch_size]
            cls.zero_grad()
            logits = model.classifier_logit(model.features(imgs[idx]))
            loss = nn.bce_with_logits(logits, labels[idx])
            nn.backward(loss)
            cls.check_finite_grads()
            nn.adam_step(cls, cfg.lr)

    rows = dataset.all_rows()
    img_t, act, img_t1, _, _ = dataset.triple_batch(rows)
    feat_t = model.encode_mu_np(img_t)
    feat_t1 = model.encode_mu_np(img_t1)
    a_norm = normalize_action(act)
    reg = model.params.view(("reg/", "act/"))
    m = feat_t.shape[0]
    for _ in range(cfg.transition_epochs):
        perm = shuffle.permutation(m)
        for b0 in range(0, m, cfg.batch_size):
            idx = perm[b0 : b0 + cfg.batch_size]
            reg.zero_grad()
            pred = model.transition(feat_t[idx], a_norm[idx])
            loss = nn.mse(pred, feat_t1[idx])
            nn.backward(loss)
            reg.check_finite_grads()
            nn.adam_step(reg, cfg.lr)
    return model


# ---------------------------------------------------------------------------
# ablation grids


FAMILY_OVERRIDES = {
    "conv": {},
    "linear-latent": {"latent_kind": "vector", "action_rep": "linear"},
    "linear-action": {"action_rep": "linear"},
    "spatial-action": {"action_rep": "spatial"},
}


def ablation_run(
    axis: str,
    values: list,
    sim_config: WorldConfig,
    model_cfg: WorldModelConfig,
    train_cfg: WorldTrainConfig,
    n_episodes: int = 20,
    max_len: int = 50,
    base_seed: int = 0,
    heldout_fraction: float = 0.1,
    pair_samples: int = 10_000,
    max_feasible_res: int = 128,
) -> list[dict]:
    """Train one model per grid value and report held-out metrics.

    Axes: data_size (episode counts), input_res, latent_hw, action_rep,
    family. Per-cell seeds derive from (base_seed, cell index); infeasible
    cells are reported as skipped with a reason instead of failing the run.
    """
    rows = []
    for cell, value in enumerate(values):
        seed = int(np.random.SeedSequence(entropy=base_seed, spawn_key=(cell,)).generate_state(1)[0])
        row = {"axis": axis, "value": value, "seed": seed, "status": "ok"}
        sim_cfg = sim_config
        cfg = model_cfg
        episodes = n_episodes
        try:
            if axis == "data_size":
                episodes = int(value)
            elif axis == "input_res":
                if int(value) > max_feasible_res:
                    row.update(status="skipped", reason=f"resolution {value} over budget")
                    rows.append(row)
                    continue
                sim_cfg = replace(sim_config, render_size=int(value))
                hw = {32: 1, 64: 2, 128: 4, 256: 8}[int(value)]
                cfg = replace(model_cfg, image_size=int(value), latent_hw=hw)
            elif axis == "latent_hw":
                cfg = replace(model_cfg, latent_hw=int(value))
            elif axis == "action_rep":
                cfg = replace(model_cfg, action_rep=str(value))
            elif axis == "family":
                if value == "standard-reward":
                    row.update(_standard_reward_cell(sim_cfg, episodes, max_len, seed, train_cfg, pair_samples))
                    rows.append(row)
                    continue
                if value == "tsd":
                    cfg = replace(
                        model_cfg,
                        decoder_mode="tsd",
                        target_ids=tuple(range(len(sim_cfg.target_types))),
                    )
                elif value in FAMILY_OVERRIDES:
                    cfg = replace(model_cfg, **FAMILY_OVERRIDES[value])
                else:
                    raise ConfigError(f"unknown family {value!r}")
            else:
                raise ConfigError(f"unknown ablation axis {axis!r}")

            sim = WorldSim(sim_cfg)
            data = sim.collect_random(episodes, max_len=max_len, rng=np.random.default_rng(seed))
            train, held = data.split(heldout_fraction, np.random.default_rng(seed + 1))
            tcfg = replace(train_cfg, seed=seed)
            model, _ = train_world_model(train, cfg, tcfg)
            metrics = d_metrics(model, held, pair_samples=pair_samples, rng=np.random.default_rng(seed + 2))
            row.update(metrics)
            row["n_train_triples"] = train.n_triples
        except ConfigError as exc:
            row.update(status="skipped", reason=str(exc))
        rows.append(row)
    return rows


def _standard_reward_cell(sim_cfg, episodes, max_len, seed, train_cfg, pair_samples) -> dict:
    sim = WorldSim(sim_cfg)
    data = sim.collect_random(episodes, max_len=max_len, rng=np.random.default_rng(seed))
    train, held = data.split(0.1, np.random.default_rng(seed + 1))
    imgs, labels = sim.sample_labeled_states(600, np.random.default_rng(seed + 2))
    cfg = StandardRewardTrainConfig(seed=seed, classifier_epochs=10, transition_epochs=max(train_cfg.epochs, 3))
    model = train_standard_reward(train, imgs, labels, cfg, image_size=sim_cfg.render_size)
    metrics = d_metrics(model, held, pair_samples=pair_samples, rng=np.random.default_rng(seed + 3))
    out = dict(metrics)
    out["n_train_triples"] = train.n_triples
    out["feature_dim"] = model.FEAT_DIM
    return out
