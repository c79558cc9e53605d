"""In-memory trajectory dataset: episodes of frames, actions and goal labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dreamnav.errors import ConfigError


@dataclass
class Episode:
    """One trajectory: n_steps actions connecting n_steps+1 frames."""

    frames: np.ndarray  # (T+1, H, W, 3) uint8
    actions: np.ndarray  # (T, 3) float32, physical units (deg, cm, deg)
    labels: np.ndarray  # (T+1,) bool, goal predicate per frame
    target_type: int

    def __post_init__(self):
        t = self.actions.shape[0]
        if self.frames.shape[0] != t + 1 or self.labels.shape[0] != t + 1:
            raise ConfigError(
                f"inconsistent episode lengths: {self.frames.shape[0]} frames, "
                f"{t} actions, {self.labels.shape[0]} labels"
            )
        if self.frames.dtype != np.uint8:
            raise ConfigError("episode frames must be uint8")

    @property
    def n_steps(self) -> int:
        return self.actions.shape[0]


class Dataset:
    """A list of episodes with a flat (episode, t) index over transitions."""

    def __init__(self, episodes: list[Episode]):
        self.episodes = list(episodes)
        index = []
        for e, ep in enumerate(self.episodes):
            for t in range(ep.n_steps):
                index.append((e, t))
        self._index = np.asarray(index, dtype=np.int64).reshape(-1, 2)

    @property
    def n_episodes(self) -> int:
        return len(self.episodes)

    @property
    def n_triples(self) -> int:
        return self._index.shape[0]

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return self.episodes[0].frames.shape[1:]

    def triple_batch(self, rows: np.ndarray):
        """Gather transitions by flat index: (img_t, action, img_t1, label_t1, target_id)."""
        eps = self._index[rows, 0]
        ts = self._index[rows, 1]
        img_t = np.stack([self.episodes[e].frames[t] for e, t in zip(eps, ts)])
        img_t1 = np.stack([self.episodes[e].frames[t + 1] for e, t in zip(eps, ts)])
        actions = np.stack([self.episodes[e].actions[t] for e, t in zip(eps, ts)])
        labels = np.asarray([self.episodes[e].labels[t + 1] for e, t in zip(eps, ts)], dtype=bool)
        targets = np.asarray([self.episodes[e].target_type for e in eps], dtype=np.int64)
        return img_t, actions, img_t1, labels, targets

    def all_rows(self) -> np.ndarray:
        return np.arange(self.n_triples)

    def split(self, heldout_fraction: float, rng: np.random.Generator) -> tuple["Dataset", "Dataset"]:
        """Split by whole episodes so held-out transitions come from unseen runs."""
        if not self.episodes:
            raise ConfigError("cannot split an empty dataset")
        order = rng.permutation(len(self.episodes))
        n_held = max(1, int(round(len(self.episodes) * heldout_fraction)))
        if n_held >= len(self.episodes):
            raise ConfigError("heldout fraction leaves no training episodes")
        held = [self.episodes[i] for i in sorted(order[:n_held])]
        train = [self.episodes[i] for i in sorted(order[n_held:])]
        return Dataset(train), Dataset(held)

    def frames_flat(self) -> np.ndarray:
        """All frames of all episodes stacked, shape (F, H, W, 3) uint8."""
        return np.concatenate([ep.frames for ep in self.episodes], axis=0)

    def subsample_episodes(self, n: int) -> "Dataset":
        return Dataset(self.episodes[:n])
