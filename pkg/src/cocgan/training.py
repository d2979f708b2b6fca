"""Adversarial objectives, optimizers and the training loop."""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint as ckpt
from . import tensor as T
from .data import batch_iter, n_batches
from .errors import ConfigurationError, ContractError, NumericDomainError, TrainingDiverged

LOG_EPS = 1e-7


@dataclass
class TrainConfig:
    mode: str = "vanilla"  # vanilla | wgan
    conditional: bool = False
    lr: float = 2e-4
    lr_min: float = 0.0
    batch: int = 256
    epochs: int = 50
    n_critic: int = 5
    clip_c: float = 0.01
    clip_kind: str = "weight"  # weight | grad_norm
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    rms_decay: float = 0.99
    generator_loss: str = "non_saturating"  # non_saturating | minimax
    seed: int = 0
    schedule_horizon: int = 0  # 0 -> epochs
    match_aware: bool = False  # conditional: real images with wrong labels count as fake
    sample_every: int = 1
    checkpoint_every: int = 1

    def validate(self):
        if self.mode not in ("vanilla", "wgan"):
            raise ConfigurationError(f"mode must be vanilla or wgan, got {self.mode!r}")
        if self.clip_kind not in ("weight", "grad_norm"):
            raise ConfigurationError(f"clip_kind must be weight or grad_norm, got {self.clip_kind!r}")
        if self.generator_loss not in ("non_saturating", "minimax"):
            raise ConfigurationError(f"unknown generator_loss {self.generator_loss!r}")
        for name in ("lr", "batch", "epochs", "n_critic", "clip_c", "eps", "sample_every", "checkpoint_every"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.schedule_horizon < 0:
            raise ConfigurationError(f"schedule_horizon must be >= 0, got {self.schedule_horizon}")
        if not 0 <= self.lr_min <= self.lr:
            raise ConfigurationError("lr_min must lie in [0, lr]")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and 0 <= self.rms_decay < 1):
            raise ConfigurationError("betas and rms_decay must lie in [0, 1)")
        return self

    @property
    def horizon(self):
        return self.schedule_horizon or self.epochs


# ----------------------------------------------------------------------------
# losses


def _check_probabilities(scores):
    s = scores.data
    if np.any(~np.isfinite(s)) or np.any(s < 0) or np.any(s > 1):
        raise NumericDomainError("vanilla-mode scores must lie in (0, 1)")


def discriminator_loss(d_real, d_fake, d_mismatch=None):
    """-mean log D(x) - mean log(1 - D(G(z))), logs clamped at 1e-7.

    With ``d_mismatch`` (scores of real images under wrong labels) the fake
    term is the average of the generated and mismatched terms.
    """
    _check_probabilities(d_real)
    _check_probabilities(d_fake)
    real = T.mean(T.log(d_real, clamp=LOG_EPS))
    fake = T.mean(T.log(T.sub(1.0, d_fake), clamp=LOG_EPS))
    if d_mismatch is not None:
        _check_probabilities(d_mismatch)
        wrong = T.mean(T.log(T.sub(1.0, d_mismatch), clamp=LOG_EPS))
        fake = T.mul(T.add(fake, wrong), 0.5)
    return T.neg(T.add(real, fake))


def generator_loss(d_fake, kind="non_saturating"):
    """Non-saturating ``-mean log D(G(z))`` or the literal ``mean log(1 - D(G(z)))``."""
    _check_probabilities(d_fake)
    if kind == "non_saturating":
        return T.neg(T.mean(T.log(d_fake, clamp=LOG_EPS)))
    if kind == "minimax":
        return T.mean(T.log(T.sub(1.0, d_fake), clamp=LOG_EPS))
    raise ConfigurationError(f"unknown generator loss {kind!r}")


def gan_losses(d_real, d_fake, kind="non_saturating"):
    return discriminator_loss(d_real, d_fake), generator_loss(d_fake, kind)


def critic_loss(d_real, d_fake, d_mismatch=None):
    fake = T.mean(d_fake)
    if d_mismatch is not None:
        fake = T.mul(T.add(fake, T.mean(d_mismatch)), 0.5)
    return T.sub(fake, T.mean(d_real))


def wgan_generator_loss(d_fake):
    return T.neg(T.mean(d_fake))


def wgan_losses(d_real, d_fake):
    return critic_loss(d_real, d_fake), wgan_generator_loss(d_fake)


# ----------------------------------------------------------------------------
# optimizers


class Optimizer:
    kind = "base"

    def __init__(self, named_params, lr):
        self.params = dict(named_params)
        self.lr = lr
        self.t = 0
        self.state = {name: self._init_state(p) for name, p in self.params.items()}

    def _init_state(self, p):
        raise NotImplementedError

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ContractError(f"gradient shape {p.grad.shape} != parameter shape {p.shape} for {name}")
            st = self.state[name]
            if any(buf.shape != p.data.shape for buf in st.values()):
                raise ContractError(f"optimizer state for {name} no longer matches its parameter")
            self._update(p, p.grad.astype(p.data.dtype, copy=False), st)

    def state_arrays(self):
        out = {}
        for name, st in self.state.items():
            for key, buf in st.items():
                out[f"{key}/{name}"] = buf
        return out

    def load_state_arrays(self, arrays, t):
        for name, st in self.state.items():
            for key in st:
                st[key] = arrays[f"{key}/{name}"].astype(st[key].dtype)
        self.t = int(t)


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, named_params, lr=2e-4, betas=(0.5, 0.999), eps=1e-8):
        self.b1, self.b2 = betas
        self.eps = eps
        super().__init__(named_params, lr)

    def _init_state(self, p):
        return {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data)}

    def _update(self, p, g, st):
        m, v = st["m"], st["v"]
        m *= self.b1
        m += (1 - self.b1) * g
        v *= self.b2
        v += (1 - self.b2) * g * g
        mhat = m / (1 - self.b1 ** self.t)
        vhat = v / (1 - self.b2 ** self.t)
        p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype, copy=False)


class RMSProp(Optimizer):
    kind = "rmsprop"

    def __init__(self, named_params, lr=2e-4, decay=0.99, eps=1e-8):
        self.decay = decay
        self.eps = eps
        super().__init__(named_params, lr)

    def _init_state(self, p):
        return {"sq": np.zeros_like(p.data)}

    def _update(self, p, g, st):
        sq = st["sq"]
        sq *= self.decay
        sq += (1 - self.decay) * g * g
        p.data -= (self.lr * g / (np.sqrt(sq) + self.eps)).astype(p.data.dtype, copy=False)


def optimizer_step(optimizer):
    optimizer.step()


def make_optimizer(kind, named_params, cfg: TrainConfig):
    if kind == "adam":
        return Adam(named_params, cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps)
    if kind == "rmsprop":
        return RMSProp(named_params, cfg.lr, cfg.rms_decay, cfg.eps)
    raise ConfigurationError(f"unknown optimizer {kind!r}")


def cosine_lr(lr0, t, T_max, lr_min=0.0):
    """Cosine annealing from ``lr0`` at t=0 to ``lr_min`` at t=T_max (clamped past it)."""
    if T_max <= 0 or t >= T_max:
        return lr_min
    t = max(t, 0)
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * t / T_max))


def weight_clip(params, c):
    """Clamp every parameter value into [-c, c] in place."""
    for p in params:
        np.clip(p.data, -c, c, out=p.data)


def clip_grad_norm(params, max_norm):
    total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params if p.grad is not None))
    if total > max_norm:
        factor = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return total


def grad_norm(params):
    return math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params if p.grad is not None))


# ----------------------------------------------------------------------------
# training loop


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss_d: float
    loss_g: float
    wall_ms: float
    extra: dict = field(default_factory=dict)

    def log_line(self):
        return f"{self.epoch}\t{self.lr:.6e}\t{self.loss_d:.9e}\t{self.loss_g:.9e}\t{self.wall_ms:.1f}"


@dataclass
class RunResult:
    records: list
    d_updates: int
    g_updates: int
    checkpoints: list
    out_dir: str | None = None


class Trainer:
    """Holds models, optimizers and RNG; one writer of model state."""

    def __init__(self, gen, disc, cfg: TrainConfig):
        self.cfg = cfg.validate()
        if cfg.conditional != gen.cfg.conditional or cfg.conditional != disc.cfg.conditional:
            raise ConfigurationError("conditional flag differs between training config and models")
        if (cfg.mode == "wgan") != disc.cfg.wgan:
            raise ConfigurationError("wgan mode needs a discriminator without sigmoid (and vice versa)")
        self.gen = gen
        self.disc = disc
        kind = "rmsprop" if cfg.mode == "wgan" else "adam"
        self.opt_g = make_optimizer(kind, gen.named_parameters(), cfg)
        self.opt_d = make_optimizer(kind, disc.named_parameters(), cfg)
        self.rng = np.random.default_rng([cfg.seed, 1])
        self.d_updates = 0
        self.g_updates = 0
        self.epoch = 0
        self.post_critic_hook = None

    def noise(self, n):
        return self.rng.standard_normal((n, self.gen.cfg.noise_dim)).astype(T.get_default_dtype())

    def fake_labels(self, n):
        if not self.cfg.conditional:
            return None
        return self.rng.integers(0, self.gen.cfg.n_classes, size=n)

    def _labels(self, labels):
        return labels if self.cfg.conditional else None

    def _guard(self, loss, which):
        value = float(loss.data)
        if not math.isfinite(value):
            params = self.disc.parameters() if which == "D" else self.gen.parameters()
            snapshot = {"lr": self.opt_d.lr, "epoch": self.epoch, "which": which,
                        "grad_norm_d": grad_norm(self.disc.parameters()),
                        "grad_norm_g": grad_norm(self.gen.parameters()),
                        "param_count": len(params)}
            raise TrainingDiverged(f"{which} loss became {value} at epoch {self.epoch}", snapshot)
        return value

    def d_step(self, real, labels):
        n = len(real)
        y_fake = self.fake_labels(n)
        with T.no_grad():
            fake = self.gen(self.noise(n), y_fake).data
        self.opt_d.zero_grad()
        d_real = self.disc(real, self._labels(labels))
        d_fake = self.disc(fake, y_fake)
        d_wrong = None
        if self.cfg.match_aware and self.cfg.conditional:
            n_classes = self.disc.cfg.n_classes
            wrong = (np.asarray(labels) + self.rng.integers(1, n_classes, size=n)) % n_classes
            d_wrong = self.disc(real, wrong)
        if self.cfg.mode == "wgan":
            loss = critic_loss(d_real, d_fake, d_wrong)
        else:
            loss = discriminator_loss(d_real, d_fake, d_wrong)
        value = self._guard(loss, "D")
        T.backward(loss)
        if self.cfg.mode == "wgan" and self.cfg.clip_kind == "grad_norm":
            clip_grad_norm(self.disc.parameters(), self.cfg.clip_c)
        self.opt_d.step()
        if self.cfg.mode == "wgan" and self.cfg.clip_kind == "weight":
            weight_clip(self.disc.parameters(), self.cfg.clip_c)
        self.d_updates += 1
        if self.post_critic_hook is not None:
            self.post_critic_hook(self)
        return value

    def g_step(self, n):
        y_fake = self.fake_labels(n)
        self.opt_g.zero_grad()
        self.opt_d.zero_grad()
        fake = self.gen(self.noise(n), y_fake)
        d_fake = self.disc(fake, y_fake)
        if self.cfg.mode == "wgan":
            loss = wgan_generator_loss(d_fake)
        else:
            loss = generator_loss(d_fake, self.cfg.generator_loss)
        value = self._guard(loss, "G")
        T.backward(loss)
        self.opt_g.step()
        self.opt_d.zero_grad()
        self.g_updates += 1
        return value

    def run_epoch(self, data):
        cfg = self.cfg
        lr = cosine_lr(cfg.lr, self.epoch, cfg.horizon, cfg.lr_min)
        self.opt_g.lr = self.opt_d.lr = lr
        start = time.perf_counter()
        d_losses, g_losses = [], []
        n_critic = cfg.n_critic if cfg.mode == "wgan" else 1
        for real, labels in batch_iter(data, cfg.batch, cfg.seed, self.epoch):
            for _ in range(n_critic):
                d_losses.append(self.d_step(real, labels))
            g_losses.append(self.g_step(len(real)))
        wall = (time.perf_counter() - start) * 1000.0
        rec = EpochRecord(self.epoch + 1, lr, float(np.mean(d_losses)), float(np.mean(g_losses)), wall)
        self.epoch += 1
        return rec

    # persistence
    def save(self, path, extra_meta=None):
        params = ckpt.module_arrays(self.gen, "generator.")
        params.update(ckpt.module_arrays(self.disc, "discriminator."))
        optim = {f"g.{k}": v for k, v in self.opt_g.state_arrays().items()}
        optim.update({f"d.{k}": v for k, v in self.opt_d.state_arrays().items()})
        meta = {
            "kind": "gan",
            "generator": self.gen.cfg.to_dict(),
            "discriminator": self.disc.cfg.to_dict(),
            "train": asdict(self.cfg),
            "epoch": self.epoch,
            "d_updates": self.d_updates,
            "g_updates": self.g_updates,
            "optimizer": {"kind": self.opt_d.kind, "t_g": self.opt_g.t, "t_d": self.opt_d.t},
            "rng_state": _jsonable_rng(self.rng),
        }
        if extra_meta:
            meta.update(extra_meta)
        return ckpt.save(path, params, meta, optim)

    def restore(self, path):
        params, meta, optim = ckpt.load(path)
        ckpt.load_into(self.gen, params, "generator.")
        ckpt.load_into(self.disc, params, "discriminator.")
        if optim:
            self.opt_g.load_state_arrays({k[2:]: v for k, v in optim.items() if k.startswith("g.")}, meta["optimizer"]["t_g"])
            self.opt_d.load_state_arrays({k[2:]: v for k, v in optim.items() if k.startswith("d.")}, meta["optimizer"]["t_d"])
        self.epoch = meta["epoch"]
        self.d_updates = meta["d_updates"]
        self.g_updates = meta["g_updates"]
        self.rng.bit_generator.state = meta["rng_state"]
        return meta


def _jsonable_rng(rng):
    return json.loads(json.dumps(rng.bit_generator.state, default=int))


LOG_HEADER = "# epoch\tlr\tloss_D\tloss_G\twall_ms"


def train_run(data, gen, disc, cfg: TrainConfig, out_dir=None, epoch_callback=None,
              sample_writer=None, manifest=None):
    """Train for ``cfg.epochs`` epochs.

    Args:
        data: :class:`~cocgan.data.Dataset` normalized to [-1, 1].
        gen, disc: models; ``disc.cfg.wgan`` must match ``cfg.mode``.
        out_dir: when given, receives ``train_log.tsv``, checkpoints
            (``epoch_XXX.cocg`` and ``final.cocg``), sample grids and
            ``manifest.json``.
        epoch_callback: ``f(trainer, record)`` called after each epoch; may put
            values into ``record.extra``.
        sample_writer: ``f(trainer, path_stem)`` used to write sample grids.

    Returns:
        :class:`RunResult`.
    """
    trainer = Trainer(gen, disc, cfg)
    records, saved = [], []
    log_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        if manifest is not None:
            with open(os.path.join(out_dir, "manifest.json"), "w") as f:
                json.dump(manifest, f, indent=2, sort_keys=True)
        log_path = os.path.join(out_dir, "train_log.tsv")
        with open(log_path, "w") as f:
            f.write(LOG_HEADER + "\n")
    if n_batches(data, cfg.batch) == 0:
        raise ConfigurationError(f"dataset of {len(data)} items holds no full batch of {cfg.batch}")
    for _ in range(cfg.epochs):
        rec = trainer.run_epoch(data)
        if epoch_callback is not None:
            epoch_callback(trainer, rec)
        records.append(rec)
        if out_dir is not None:
            with open(log_path, "a") as f:
                f.write(rec.log_line() + "\n")
            if sample_writer is not None and rec.epoch % cfg.sample_every == 0:
                sample_writer(trainer, os.path.join(out_dir, f"samples_epoch{rec.epoch:03d}"))
            if rec.epoch % cfg.checkpoint_every == 0:
                saved.append(trainer.save(os.path.join(out_dir, f"epoch_{rec.epoch:03d}.cocg")))
    if out_dir is not None:
        saved.append(trainer.save(os.path.join(out_dir, "final.cocg")))
    return RunResult(records, trainer.d_updates, trainer.g_updates, saved, out_dir)
