"""The learned world model: image encoder/decoder pair trained as a
variational autoencoder with a spatial latent, an action embedding, an
action-conditioned latent regressor for predicting the next state, and a
goal-probability head on latents.

Joint training minimizes

    L = [ reconstruction + KL ]  +  lambda * [ latent match + future reconstruction ]

over (image, action, next image) transitions, so the representation is
shaped both for decoding realistic frames (including frames decoded from
prior samples) and for accurate multi-step rollouts.

Two latent families exist: "conv" keeps a (H, W, C) spatial latent and
embeds actions as a spatial tensor; "vector" flattens to a plain vector
(the baseline this model is compared against). With decoder_mode="tsd"
a separate decoder is kept per target type behind one shared encoder,
which pushes target identity out of the latent space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from dreamnav import nn
from dreamnav import persist
from dreamnav.errors import ConfigError, TrainError
from dreamnav.data import Dataset
from dreamnav.env import normalize_action
from dreamnav.nn import ParamStore, Tensor

ENC_CHANNELS = (32, 64, 128, 256)
DEC_CHANNELS = (256, 128, 64, 32, 3)


def _encoder_plan(image_size: int, latent_hw: int) -> list[tuple[int, int, int]]:
    """Sequence of (padding, c_in, c_out) for 4x4 stride-2 conv layers that
    map image_size -> latent_hw spatially. Prefers 4 layers and no padding."""
    for n_layers in (4, 3, 5, 6):
        channels = list(ENC_CHANNELS) + [256] * max(0, n_layers - 4)
        channels = channels[:n_layers]
        best = None
        for pads in product((0, 1), repeat=n_layers):
            s = image_size
            for p in pads:
                s = (s + 2 * p - 4) // 2 + 1
                if s < 1:
                    break
            else:
                if s == latent_hw and (best is None or sum(pads) < sum(best)):
                    best = pads
        if best is not None:
            ins = [3] + channels[:-1]
            return [(best[i], ins[i], channels[i]) for i in range(n_layers)]
    raise ConfigError(f"no encoder layout maps {image_size} -> {latent_hw} spatially")


def _decoder_plan(image_size: int, latent_hw: int) -> list[tuple[int, int]]:
    """Sequence of (c_in, c_out) for 4x4 x2-upsampling layers after the
    initial 3x3 conv; validates that doubling reaches the image size."""
    ratio = image_size // latent_hw
    n_up = int(round(math.log2(ratio)))
    if latent_hw * 2**n_up != image_size:
        raise ConfigError(f"latent {latent_hw} cannot upsample to {image_size} by doubling")
    chans = list(DEC_CHANNELS)
    if n_up > len(chans):
        chans = [256] * (n_up - len(chans)) + chans
    else:
        chans = chans[-n_up:]
        chans[-1] = 3
    ins = [256] + chans[:-1]
    return list(zip(ins, chans))


@dataclass(frozen=True)
class WorldModelConfig:
    image_size: int = 64
    latent_hw: int = 2
    latent_channels: int = 256
    latent_kind: str = "conv"  # conv | vector
    vector_dim: int = 256
    action_rep: str = "conv"  # conv | spatial | linear
    decoder_mode: str = "shared"  # shared | tsd
    target_ids: tuple[int, ...] = (0,)
    lambda_transition: float = 0.5
    kl_weight: float = 1.0

    def __post_init__(self):
        if self.latent_kind not in ("conv", "vector"):
            raise ConfigError(f"latent_kind must be conv|vector, got {self.latent_kind!r}")
        if self.action_rep not in ("conv", "spatial", "linear"):
            raise ConfigError(f"action_rep must be conv|spatial|linear, got {self.action_rep!r}")
        if self.decoder_mode not in ("shared", "tsd"):
            raise ConfigError(f"decoder_mode must be shared|tsd, got {self.decoder_mode!r}")
        if not 0.0 <= self.lambda_transition <= 1.0:
            raise ConfigError("lambda_transition must lie in [0, 1]")
        if self.decoder_mode == "tsd" and len(self.target_ids) < 2:
            raise ConfigError("tsd mode needs at least two target ids")

    @property
    def latent_shape(self) -> tuple[int, ...]:
        if self.latent_kind == "vector":
            return (self.vector_dim,)
        return (self.latent_hw, self.latent_hw, self.latent_channels)

    @property
    def decoder_ids(self) -> tuple[int, ...]:
        return self.target_ids if self.decoder_mode == "tsd" else (0,)


class WorldModel:
    """Holds parameters and the forward passes for all four components."""

    def __init__(self, config: WorldModelConfig, rng: np.random.Generator):
        self.config = config
        self.params = ParamStore()
        self._enc_plan = _encoder_plan(config.image_size, config.latent_hw)
        self._dec_plan = _decoder_plan(config.image_size, config.latent_hw)
        self._build(rng)

    # -- construction -------------------------------------------------------

    def _conv_param(self, name, kh, kw, c_in, c_out, rng):
        w = nn.kaiming_uniform((kh, kw, c_in, c_out), kh * kw * c_in, rng)
        self.params.add(f"{name}/w", w)
        self.params.add(f"{name}/b", np.zeros(c_out, np.float32))

    def _tconv_param(self, name, kh, kw, c_out, c_in, rng):
        fan = kh * kw * c_in // 4  # contributions per output pixel at stride 2
        w = nn.kaiming_uniform((kh, kw, c_out, c_in), max(fan, 1), rng)
        self.params.add(f"{name}/w", w)
        self.params.add(f"{name}/b", np.zeros(c_out, np.float32))

    def _fc_param(self, name, d_in, d_out, rng, zero=False):
        if zero:
            w = np.zeros((d_in, d_out), np.float32)
        else:
            w = nn.kaiming_uniform((d_in, d_out), d_in, rng)
        self.params.add(f"{name}/w", w)
        self.params.add(f"{name}/b", np.zeros(d_out, np.float32))

    def _build(self, rng):
        cfg = self.config
        for i, (pad, c_in, c_out) in enumerate(self._enc_plan):
            self._conv_param(f"enc/c{i}", 4, 4, c_in, c_out, rng)
        enc_out = self._enc_plan[-1][2]

        if cfg.latent_kind == "conv":
            self._conv_param("enc/mu", 1, 1, enc_out, cfg.latent_channels, rng)
            self._conv_param("enc/lv", 1, 1, enc_out, cfg.latent_channels, rng)
            # start near the prior: unit variance, centered
            self.params["enc/lv/w"].data[:] = 0.0
        else:
            flat = cfg.latent_hw * cfg.latent_hw * enc_out
            self._fc_param("enc/mu", flat, cfg.vector_dim, rng)
            self._fc_param("enc/lv", flat, cfg.vector_dim, rng, zero=True)

        for tid in cfg.decoder_ids:
            base = f"dec/{tid}"
            if cfg.latent_kind == "vector":
                self._fc_param(
                    f"{base}/fc", cfg.vector_dim, cfg.latent_hw * cfg.latent_hw * 256, rng
                )
                self._conv_param(f"{base}/c0", 3, 3, 256, 256, rng)
            else:
                self._conv_param(f"{base}/c0", 3, 3, cfg.latent_channels, 256, rng)
            for i, (c_in, c_out) in enumerate(self._dec_plan):
                self._tconv_param(f"{base}/u{i}", 4, 4, c_out, c_in, rng)

        hw = cfg.latent_hw
        if cfg.latent_kind == "vector":
            self._fc_param("act/fc0", 3, 32, rng)
            self.embed_channels = 32
        elif cfg.action_rep == "linear":
            self._fc_param("act/fc0", 3, 32, rng)
            self.embed_channels = 32
        else:  # spatial and conv start from the same reshaped stem
            self._fc_param("act/fc0", 3, 64, rng)
            self._fc_param("act/fc1", 64, hw * hw * 32, rng)
            self.embed_channels = 32
            if cfg.action_rep == "conv":
                self._conv_param("act/c0", 3, 3, 32, 32, rng)
                self._conv_param("act/c1", 1, 1, 32, 64, rng)
                self.embed_channels = 64

        if cfg.latent_kind == "vector":
            d_in = cfg.vector_dim + 32
            for i, d_out in enumerate((512, 512, 256, cfg.vector_dim)):
                self._fc_param(f"reg/c{i}", d_in, d_out, rng)
                d_in = d_out
        else:
            c_in = cfg.latent_channels + self.embed_channels
            reg = ((3, 512), (1, 512), (3, 256), (1, cfg.latent_channels))
            for i, (k, c_out) in enumerate(reg):
                self._conv_param(f"reg/c{i}", k, k, c_in, c_out, rng)
                c_in = c_out

        if cfg.latent_kind == "vector":
            self._fc_param("rwd/c0", cfg.vector_dim, 32, rng)
            self._fc_param("rwd/c1", 32, 1, rng)
        else:
            self._conv_param("rwd/c0", hw, hw, cfg.latent_channels, 32, rng)
            self._conv_param("rwd/c1", 1, 1, 32, 1, rng)

    @property
    def latent_shape(self) -> tuple[int, ...]:
        return self.config.latent_shape

    def _p(self, name) -> Tensor:
        return self.params[name]

    # -- forward passes ------------------------------------------------------

    def encode(self, images) -> tuple[Tensor, Tensor]:
        """Images (N,H,W,3) float in [0,1] -> (mu, logvar) latents."""
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, np.float32))
        if x.data.ndim != 4 or x.data.shape[1] != self.config.image_size:
            raise ConfigError(
                f"encode expects (N,{self.config.image_size},{self.config.image_size},3), "
                f"got {x.data.shape}"
            )
        h = x
        for i, (pad, _, _) in enumerate(self._enc_plan):
            h = nn.relu(nn.conv2d(h, self._p(f"enc/c{i}/w"), self._p(f"enc/c{i}/b"), 2, pad))
        if self.config.latent_kind == "vector":
            flat = nn.reshape(h, (h.shape[0], -1))
            mu = nn.linear(flat, self._p("enc/mu/w"), self._p("enc/mu/b"))
            lv = nn.linear(flat, self._p("enc/lv/w"), self._p("enc/lv/b"))
        else:
            mu = nn.conv2d(h, self._p("enc/mu/w"), self._p("enc/mu/b"), 1, 0)
            lv = nn.conv2d(h, self._p("enc/lv/w"), self._p("enc/lv/b"), 1, 0)
        return mu, lv

    def decode(self, latent, target_id: int | None = None) -> Tensor:
        """Latent -> image in (0,1). In tsd mode target_id selects the decoder."""
        cfg = self.config
        if cfg.decoder_mode == "tsd":
            if target_id is None:
                raise ConfigError("tsd decoder requires a target_id")
            if target_id not in cfg.decoder_ids:
                raise ConfigError(f"no decoder for target id {target_id}")
            base = f"dec/{target_id}"
        else:
            base = "dec/0"
        s = latent if isinstance(latent, Tensor) else Tensor(np.asarray(latent, np.float32))
        if cfg.latent_kind == "vector":
            h = nn.relu(nn.linear(s, self._p(f"{base}/fc/w"), self._p(f"{base}/fc/b")))
            h = nn.reshape(h, (h.shape[0], cfg.latent_hw, cfg.latent_hw, 256))
        else:
            h = s
        h = nn.relu(nn.conv2d(h, self._p(f"{base}/c0/w"), self._p(f"{base}/c0/b"), 1, 1))
        last = len(self._dec_plan) - 1
        for i in range(len(self._dec_plan)):
            h = nn.conv2d_transpose(h, self._p(f"{base}/u{i}/w"), self._p(f"{base}/u{i}/b"))
            if i < last:
                h = nn.relu(h)
        return nn.sigmoid(h)

    def action_embed(self, actions) -> Tensor:
        """Normalized actions (N,3) -> embedding (spatial tensor or vector)."""
        cfg = self.config
        a = actions if isinstance(actions, Tensor) else Tensor(np.asarray(actions, np.float32))
        if cfg.latent_kind == "vector" or cfg.action_rep == "linear":
            return nn.leaky_relu(nn.linear(a, self._p("act/fc0/w"), self._p("act/fc0/b")))
        h = nn.leaky_relu(nn.linear(a, self._p("act/fc0/w"), self._p("act/fc0/b")))
        h = nn.leaky_relu(nn.linear(h, self._p("act/fc1/w"), self._p("act/fc1/b")))
        h = nn.reshape(h, (h.shape[0], cfg.latent_hw, cfg.latent_hw, 32))
        if cfg.action_rep == "conv":
            h = nn.leaky_relu(nn.conv2d(h, self._p("act/c0/w"), self._p("act/c0/b"), 1, 1))
            h = nn.leaky_relu(nn.conv2d(h, self._p("act/c1/w"), self._p("act/c1/b"), 1, 0))
        return h

    def transition(self, latent, actions) -> Tensor:
        """(state, normalized action) -> predicted next state, same shape."""
        cfg = self.config
        s = latent if isinstance(latent, Tensor) else Tensor(np.asarray(latent, np.float32))
        emb = self.action_embed(actions)
        if cfg.latent_kind == "vector":
            h = nn.concat([s, emb], axis=-1)
            for i in range(4):
                h = nn.leaky_relu(nn.linear(h, self._p(f"reg/c{i}/w"), self._p(f"reg/c{i}/b")))
            return h
        if cfg.action_rep == "linear":
            n = s.shape[0]
            hw = cfg.latent_hw
            emb = nn.reshape(emb, (n, 1, 1, 32))
            tile = Tensor(np.ones((n, hw, hw, 32), s.dtype))
            emb = nn.mul(tile, emb)  # broadcast the vector to every cell
        h = nn.concat([s, emb], axis=-1)
        pads = (1, 0, 1, 0)
        for i in range(4):
            h = nn.leaky_relu(
                nn.conv2d(h, self._p(f"reg/c{i}/w"), self._p(f"reg/c{i}/b"), 1, pads[i])
            )
        return h

    def reward_logit(self, latent) -> Tensor:
        s = latent if isinstance(latent, Tensor) else Tensor(np.asarray(latent, np.float32))
        if self.config.latent_kind == "vector":
            h = nn.relu(nn.linear(s, self._p("rwd/c0/w"), self._p("rwd/c0/b")))
            out = nn.linear(h, self._p("rwd/c1/w"), self._p("rwd/c1/b"))
            return nn.reshape(out, (s.shape[0],))
        h = nn.relu(nn.conv2d(s, self._p("rwd/c0/w"), self._p("rwd/c0/b"), 1, 0))
        out = nn.conv2d(h, self._p("rwd/c1/w"), self._p("rwd/c1/b"), 1, 0)
        return nn.reshape(out, (s.shape[0],))

    # -- inference conveniences (no graph) ------------------------------------

    def encode_mu_np(self, images, batch: int = 256) -> np.ndarray:
        """uint8 or float images -> mean latents as a plain array."""
        imgs = np.asarray(images)
        if imgs.ndim == 3:
            imgs = imgs[None]
        if imgs.dtype == np.uint8:
            imgs = imgs.astype(np.float32) / 255.0
        outs = []
        with nn.no_grad():
            for i in range(0, imgs.shape[0], batch):
                outs.append(self.encode(imgs[i : i + batch])[0].data)
        return np.concatenate(outs, axis=0)

    def transition_np(self, latents: np.ndarray, actions: np.ndarray) -> np.ndarray:
        with nn.no_grad():
            return self.transition(latents.astype(np.float32), actions.astype(np.float32)).data

    def reward_prob_np(self, latents: np.ndarray) -> np.ndarray:
        with nn.no_grad():
            logit = self.reward_logit(latents.astype(np.float32)).data
        return 1.0 / (1.0 + np.exp(-logit))

    def decode_np(self, latents: np.ndarray, target_id: int | None = None) -> np.ndarray:
        with nn.no_grad():
            return self.decode(latents.astype(np.float32), target_id).data

    def cross_decode(self, image, to_target: int) -> np.ndarray:
        """Encode an image, decode through another target's decoder."""
        if self.config.decoder_mode != "tsd":
            raise ConfigError("cross_decode needs a model with target-specific decoders")
        mu = self.encode_mu_np(image)
        return self.decode_np(mu, to_target)[0]

    # -- losses ---------------------------------------------------------------

    def _recon_loss(self, latents: Tensor, images: Tensor, target_ids: np.ndarray) -> Tensor:
        if self.config.decoder_mode == "shared":
            return nn.mse(self.decode(latents), images)
        n = latents.shape[0]
        total = None
        for tid in np.unique(target_ids):
            idx = np.nonzero(target_ids == tid)[0]
            zi = nn.take_rows(latents, idx)
            xi = nn.take_rows(images, idx)
            part = nn.mse(self.decode(zi, int(tid)), xi) * (len(idx) / n)
            total = part if total is None else total + part
        return total

    def vae_loss(self, images, target_ids, rng) -> tuple[Tensor, dict]:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, np.float32))
        mu, lv = self.encode(x)
        z = nn.reparameterize(mu, lv, rng)
        rec = self._recon_loss(z, x, target_ids)
        n = x.shape[0]
        pixels = self.config.image_size**2 * 3
        kl = nn.kl_diag_gaussian(mu, lv) * (self.config.kl_weight / (n * pixels))
        return rec + kl, {"recon": rec.item(), "kl": kl.item()}

    def combined_loss(self, images_t, actions_norm, images_t1, target_ids, rng) -> tuple[Tensor, dict]:
        """VAE terms on the current frame plus weighted transition terms."""
        cfg = self.config
        x_t = Tensor(np.asarray(images_t, np.float32))
        x_t1 = Tensor(np.asarray(images_t1, np.float32))
        a = Tensor(np.asarray(actions_norm, np.float32))
        n = x_t.shape[0]
        pixels = cfg.image_size**2 * 3

        mu_t, lv_t = self.encode(x_t)
        z_t = nn.reparameterize(mu_t, lv_t, rng)
        mu_1, lv_1 = self.encode(x_t1)
        z_1 = nn.reparameterize(mu_1, lv_1, rng)

        rec = self._recon_loss(z_t, x_t, target_ids)
        kl = nn.kl_diag_gaussian(mu_t, lv_t) * (cfg.kl_weight / (n * pixels))
        pred = self.transition(z_t, a)
        lat = nn.mse(pred, z_1)
        fut = self._recon_loss(pred, x_t1, target_ids)

        loss = rec + kl + nn.mul(lat + fut, cfg.lambda_transition)
        parts = {
            "recon": rec.item(),
            "kl": kl.item(),
            "trans_latent": lat.item(),
            "trans_pixel": fut.item(),
        }
        return loss, parts

    def transition_loss(self, images_t, actions_norm, images_t1, target_ids, rng) -> Tensor:
        """The transition terms alone (latent match + future reconstruction)."""
        x_t = Tensor(np.asarray(images_t, np.float32))
        x_t1 = Tensor(np.asarray(images_t1, np.float32))
        mu_t, lv_t = self.encode(x_t)
        z_t = nn.reparameterize(mu_t, lv_t, rng)
        mu_1, lv_1 = self.encode(x_t1)
        z_1 = nn.reparameterize(mu_1, lv_1, rng)
        pred = self.transition(z_t, Tensor(np.asarray(actions_norm, np.float32)))
        return nn.mse(pred, z_1) + self._recon_loss(pred, x_t1, target_ids)

    # -- persistence ----------------------------------------------------------

    def metadata(self) -> dict[str, str]:
        cfg = self.config
        return {
            "kind": "world",
            "image_size": str(cfg.image_size),
            "latent_hw": str(cfg.latent_hw),
            "latent_channels": str(cfg.latent_channels),
            "latent_kind": cfg.latent_kind,
            "vector_dim": str(cfg.vector_dim),
            "action_rep": cfg.action_rep,
            "decoder_mode": cfg.decoder_mode,
            "target_ids": ",".join(str(t) for t in cfg.target_ids),
            "lambda_transition": repr(cfg.lambda_transition),
            "kl_weight": repr(cfg.kl_weight),
        }

    def save(self, path) -> None:
        persist.write_checkpoint(path, self.params, self.metadata())


def config_from_metadata(meta: dict[str, str]) -> WorldModelConfig:
    return WorldModelConfig(
        image_size=int(meta["image_size"]),
        latent_hw=int(meta["latent_hw"]),
        latent_channels=int(meta["latent_channels"]),
        latent_kind=meta["latent_kind"],
        vector_dim=int(meta["vector_dim"]),
        action_rep=meta["action_rep"],
        decoder_mode=meta["decoder_mode"],
        target_ids=tuple(int(t) for t in meta["target_ids"].split(",")),
        lambda_transition=float(meta["lambda_transition"]),
        kl_weight=float(meta["kl_weight"]),
    )


def load_world_model(path) -> WorldModel:
    tensors, meta = persist.read_checkpoint(path)
    if meta.get("kind") != "world":
        raise ConfigError(f"{path} is not a world-model checkpoint (kind={meta.get('kind')!r})")
    model = WorldModel(config_from_metadata(meta), np.random.default_rng(0))
    if set(tensors) != set(model.params.names()):
        raise ConfigError(f"{path}: checkpoint tensors do not match the declared geometry")
    model.params.load_state_dict(tensors)
    return model


# ---------------------------------------------------------------------------
# training


@dataclass
class WorldTrainConfig:
    lr: float = 0.001
    epochs: int = 20
    lr_decay_every: int = 10
    lr_decay_factor: float = 0.1
    batch_size: int = 32
    seed: int = 0
    max_steps: int | None = None  # cap total updates (fixed-budget comparisons)
    log_fn: object = None

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 1:
            raise ConfigError("lr must be positive and epochs >= 1")


def train_world_model(
    dataset: Dataset, model_cfg: WorldModelConfig, cfg: WorldTrainConfig
) -> tuple[WorldModel, dict]:
    """Joint training of encoder, decoder(s), action embed and regressor."""
    if dataset.n_triples == 0:
        raise ConfigError("dataset has no transitions")
    rng_init = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, 0))))
    rng_train = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, 1))))
    model = WorldModel(model_cfg, rng_init)

    history: dict[str, list] = {"loss": [], "recon": [], "kl": [], "trans_latent": [], "trans_pixel": []}
    rows = dataset.all_rows()
    steps_done = 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)
        perm = rng_train.permutation(rows)
        sums = dict.fromkeys(history, 0.0)
        batches = 0
        for b0 in range(0, len(perm), cfg.batch_size):
            batch = perm[b0 : b0 + cfg.batch_size]
            img_t, act, img_t1, _, tids = dataset.triple_batch(batch)
            a_norm = normalize_action(act)
            model.params.zero_grad()
            loss, parts = model.combined_loss(
                img_t.astype(np.float32) / 255.0,
                a_norm,
                img_t1.astype(np.float32) / 255.0,
                tids,
                rng_train,
            )
            val = loss.item()
            if not np.isfinite(val):
                raise TrainError(f"non-finite loss at epoch {epoch}, step {batches}")
            nn.backward(loss)
            model.params.check_finite_grads()
            nn.adam_step(model.params, lr)
            sums["loss"] += val
            for k, v in parts.items():
                sums[k] += v
            batches += 1
            steps_done += 1
            if cfg.max_steps is not None and steps_done >= cfg.max_steps:
                break
        for k in history:
            history[k].append(sums[k] / max(batches, 1))
        if cfg.log_fn is not None:
            cfg.log_fn(epoch, lr, {k: history[k][-1] for k in history})
        if cfg.max_steps is not None and steps_done >= cfg.max_steps:
            break
    return model, history


@dataclass
class DetectorTrainConfig:
    lr: float = 0.001
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0


def train_reward_detector(
    model: WorldModel, latents: np.ndarray, labels: np.ndarray, cfg: DetectorTrainConfig
) -> dict:
    """Fit the goal head on frozen latents with binary cross-entropy.

    The detector parameters live inside the model's store; everything else
    is untouched because only the head participates in the loss.
    """
    labels = np.asarray(labels, dtype=np.float32)
    if labels.min() == labels.max():
        raise ConfigError("reward detector needs both goal and non-goal examples")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, 2))))

    head = model.params.view("rwd/")  # shared tensors, fresh Adam state
    history = {"loss": []}
    n = latents.shape[0]
    lat = latents.astype(np.float32)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        total, batches = 0.0, 0
        for b0 in range(0, n, cfg.batch_size):
            idx = perm[b0 : b0 + cfg.batch_size]
            head.zero_grad()
            logits = model.reward_logit(lat[idx])
            loss = nn.bce_with_logits(logits, labels[idx])
            nn.backward(loss)
            head.check_finite_grads()
            nn.adam_step(head, cfg.lr)
            total += loss.item()
            batches += 1
        history["loss"].append(total / max(batches, 1))
    return history


def detector_accuracy(model: WorldModel, latents: np.ndarray, labels: np.ndarray) -> float:
    probs = model.reward_prob_np(latents)
    return float(((probs > 0.5) == np.asarray(labels, bool)).mean())
