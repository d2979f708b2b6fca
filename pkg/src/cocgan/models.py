"""Generator and discriminator assembled from increaser/reducer stages."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from . import tensor as T
from .cocblocks import CocBlock, PointIncreaser, PointReducer, check_centers
from .errors import ConfigurationError, ContractError, InputError
from .layers import Linear, Module
from .pointset import PointSet


@dataclass(frozen=True)
class StageConfig:
    sample_r: int
    dim_in: int
    dim_out: int
    n_blocks: int
    heads: int = 4
    head_dim: int = 16
    mlp_r: int = 4
    centers: int = 1

    def validate(self):
        for name in ("sample_r", "dim_in", "dim_out", "n_blocks", "heads", "head_dim", "mlp_r", "centers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"stage {name} must be positive, got {getattr(self, name)}")
        check_centers(self.centers, (self.centers, self.centers))


def generator_stages(channels=1, centers=(1, 1, 1)):
    return (
        StageConfig(2, 128, 64, 2, mlp_r=4, centers=centers[0]),
        StageConfig(2, 64, 32, 2, mlp_r=8, centers=centers[1]),
        StageConfig(7, 32, channels, 1, mlp_r=4, centers=centers[2]),
    )


def discriminator_stages(channels=1, centers=(1, 1, 1)):
    return (
        StageConfig(2, channels, 32, 2, mlp_r=4, centers=centers[0]),
        StageConfig(2, 32, 64, 2, mlp_r=8, centers=centers[1]),
        StageConfig(7, 64, 128, 1, mlp_r=4, centers=centers[2]),
    )


@dataclass(frozen=True)
class ModelConfig:
    role: str
    stages: tuple
    channels: int = 1
    seed_dim: int = 128
    conditional: bool = False
    n_classes: int = 10
    image_size: int = 28
    wgan: bool = False

    @property
    def embed_dim(self):
        return self.seed_dim // 2 if self.conditional else 0

    @property
    def noise_dim(self):
        return self.seed_dim - self.embed_dim

    def validate(self):
        if self.role not in ("generator", "discriminator"):
            raise ConfigurationError(f"unknown role {self.role!r}")
        if self.channels not in (1, 3):
            raise ConfigurationError(f"channels must be 1 or 3, got {self.channels}")
        for s in self.stages:
            s.validate()
        for a, b in zip(self.stages, self.stages[1:]):
            if a.dim_out != b.dim_in:
                raise ConfigurationError(f"stage widths do not chain: {a.dim_out} -> {b.dim_in}")
        if self.conditional and self.seed_dim % 2:
            raise ConfigurationError("conditional seed_dim must be even")
        side = 1
        for s in self.stages:
            side *= s.sample_r
        if side != self.image_size:
            raise ConfigurationError(f"sample rates multiply to {side}, not {self.image_size}")
        return self

    def to_dict(self):
        d = asdict(self)
        d["stages"] = [asdict(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["stages"] = tuple(StageConfig(**s) for s in d["stages"])
        return cls(**d)

    def with_centers(self, stage_index, centers):
        stages = list(self.stages)
        stages[stage_index] = replace(stages[stage_index], centers=centers)
        return replace(self, stages=tuple(stages))


def default_config(role, channels=1, conditional=False, centers=(1, 1, 1), wgan=False):
    stages = generator_stages(channels, centers) if role == "generator" else discriminator_stages(channels, centers)
    return ModelConfig(role, stages, channels=channels, conditional=conditional, wgan=wgan).validate()


class Stage(Module):
    def __init__(self, cfg: StageConfig, resample, rng):
        self.resample = resample
        self.blocks = [
            CocBlock(cfg.dim_out, cfg.heads, cfg.head_dim, cfg.mlp_r, cfg.centers, rng)
            for _ in range(cfg.n_blocks)
        ]

    def __call__(self, ps, trace=None, shapes=None):
        ps = self.resample(ps)
        if shapes is not None:
            shapes.append((ps.n, ps.d))
        for blk in self.blocks:
            ps = blk(ps, trace)
        return ps


def _set_centers(stage: Stage, centers):
    for blk in stage.blocks:
        blk.cluster.centers = centers


class Generator(Module):
    def __init__(self, cfg: ModelConfig, rng):
        cfg.validate()
        if cfg.role != "generator":
            raise ConfigurationError("Generator needs a generator config")
        self.cfg = cfg
        if cfg.conditional:
            # same scale as the noise half of the seed
            self.embed = T.param_init((cfg.n_classes, cfg.embed_dim), "normal", rng)
        self.stages = [
            Stage(s, PointIncreaser(s.dim_in, s.dim_out, s.sample_r, rng), rng) for s in cfg.stages
        ]

    def seed(self, noise, labels=None):
        """Full seed vectors from noise (and labels when conditional)."""
        noise = T.as_tensor(noise)
        if not self.cfg.conditional:
            if labels is not None:
                raise ContractError("labels given to an unconditional generator")
            if noise.shape[-1] != self.cfg.seed_dim:
                raise ContractError(f"seed must have {self.cfg.seed_dim} entries, got {noise.shape[-1]}")
            return noise
        if labels is None:
            raise ContractError("conditional generator needs labels")
        return compose_conditional_seed(noise, labels, self.embed)

    def __call__(self, noise, labels=None, shapes=None):
        z = self.seed(noise, labels)
        ps = PointSet(T.reshape(z, (z.shape[0], 1, self.cfg.seed_dim)), (1, 1))
        if shapes is not None:
            shapes.append((ps.n, ps.d))
        for st in self.stages:
            ps = st(ps, shapes=shapes)
        out = T.tanh(ps.features)
        s = self.cfg.image_size
        return T.reshape(out, (out.shape[0], s, s, self.cfg.channels))

    def noise_dim(self):
        return self.cfg.noise_dim


def compose_conditional_seed(noise, labels, embedding):
    """concat(noise, embedding[label]) for every row."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n_classes = embedding.shape[0]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InputError(f"label out of range [0, {n_classes})")
    noise = T.as_tensor(noise)
    if noise.ndim == 1:
        noise = T.reshape(noise, (1, -1))
    if noise.shape[0] != labels.size:
        raise ContractError(f"{noise.shape[0]} noise rows but {labels.size} labels")
    return T.concat([noise, T.gather_rows(embedding, labels)], axis=-1)


class Discriminator(Module):
    def __init__(self, cfg: ModelConfig, rng):
        cfg.validate()
        if cfg.role != "discriminator":
            raise ConfigurationError("Discriminator needs a discriminator config")
        self.cfg = cfg
        if cfg.conditional:
            self.embed = T.param_init((cfg.n_classes, cfg.seed_dim // 2), "normal", rng)
            self.cond_fc = Linear(cfg.seed_dim // 2, cfg.channels, rng)
        self.stages = [
            Stage(s, PointReducer(s.dim_in, s.dim_out, s.sample_r, rng), rng) for s in cfg.stages
        ]
        self.head = Linear(cfg.stages[-1].dim_out, 1, rng)

    def set_centers(self, stage_index, centers):
        """Override the center count of every block in one stage."""
        grid = self._stage_grids()[stage_index]
        check_centers(centers, grid)
        _set_centers(self.stages[stage_index], centers)

    def _stage_grids(self):
        side = self.cfg.image_size
        grids = []
        for s in self.cfg.stages:
            side //= s.sample_r
            grids.append((side, side))
        return grids

    def features(self, images, labels=None, trace=None, shapes=None):
        """Final single-point feature, (batch, dim)."""
        images = T.as_tensor(images)
        if images.ndim != 4:
            raise ContractError(f"expected (batch, h, w, ch) images, got {images.shape}")
        b, h, w, ch = images.shape
        x = T.reshape(images, (b, h * w, ch))
        if self.cfg.conditional:
            if labels is None:
                raise ContractError("conditional discriminator needs labels")
            labels = np.asarray(labels, dtype=np.int64).reshape(-1)
            if labels.min() < 0 or labels.max() >= self.cfg.n_classes:
                raise InputError(f"label out of range [0, {self.cfg.n_classes})")
            cond = self.cond_fc(T.gather_rows(self.embed, labels))
            x = T.add(x, T.reshape(cond, (b, 1, ch)))
        elif labels is not None:
            raise ContractError("labels given to an unconditional discriminator")
        ps = PointSet(x, (h, w))
        if shapes is not None:
            shapes.append((ps.n, ps.d))
        for st in self.stages:
            ps = st(ps, trace=trace, shapes=shapes)
        return T.reshape(ps.features, (b, ps.d))

    def __call__(self, images, labels=None, trace=None, shapes=None):
        score = T.reshape(self.head(self.features(images, labels, trace, shapes)), (-1,))
        if self.cfg.wgan:
            return score
        return T.sigmoid(score)

    def first_stage_assignment(self, images, labels=None):
        """ClusterAssignment of the first block of the first stage (head 0)."""
        trace = []
        with T.no_grad():
            self.features(images, labels, trace=trace)
        return trace[0]


def build_pair(gen_cfg, disc_cfg, seed):
    rng = np.random.default_rng(seed)
    return Generator(gen_cfg, rng), Discriminator(disc_cfg, rng)
