"""Context clustering, point increaser and point reducer.

Shapes throughout: features are ``(batch, n, d)`` tensors on a ``(h, w)``
grid in raster order. A cluster layer folds heads into the batch axis, so
clustering always runs on ``(batch * heads, n, head_dim)`` slabs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from . import tensor as T
from .errors import ConfigurationError
from .layers import Linear, LayerNorm, MLP, Module
from .pointset import PointSet, grid_positions


def _square_side(c):
    side = math.isqrt(int(c))
    if c < 1 or side * side != c:
        raise ConfigurationError(f"center count must be a perfect square, got {c}")
    return side


def check_centers(c, grid):
    side = _square_side(c)
    h, w = grid
    if h % side or w % side:
        raise ConfigurationError(f"{c} centers do not tile a {h}x{w} grid")
    return side


def propose_centers(points, grid, c):
    """Average-pool points over a sqrt(c) x sqrt(c) partition of the grid.

    Args:
        points: (batch, n, d) tensor in raster order.
        grid: (h, w) with h*w == n.
        c: number of centers, a perfect square whose side divides h and w.

    Returns:
        (batch, c, d) tensor; center j is the mean of the n/c points in cell j.
    """
    side = check_centers(c, grid)
    h, w = grid
    b, n, d = points.shape
    cells = T.reshape(points, (b, side, h // side, side, w // side, d))
    return T.reshape(T.mean(cells, axis=(2, 4)), (b, c, d))


@dataclass
class ClusterAssignment:
    """Similarity of every point to every center plus the hard assignment.

    ``similarity`` is a (batch, c, n) tensor; ``assignment`` a (batch, n)
    int64 array holding, per point, the center with the highest similarity
    (lowest index on ties).
    """

    similarity: T.Tensor
    assignment: np.ndarray

    @property
    def n_centers(self):
        return self.similarity.shape[-2]

    def members(self, b=0):
        a = self.assignment[b]
        return [np.flatnonzero(a == j) for j in range(self.n_centers)]


def cluster_assign(centers, points):
    """Cosine similarity (centers x points) and argmax assignment."""
    sim = T.cosine_similarity(centers, points)
    return ClusterAssignment(sim, kernels.argmax_columns(sim.data))


def similarity_weight(s, alpha, beta):
    """sig(alpha * s + beta), the similarity gate shared by aggregate and dispatch."""
    return T.sigmoid(T.add(T.mul(s, alpha), beta))


def aggregate_cluster(values, sims, center_value, alpha, beta):
    """Aggregate one cluster of m points into a single value-space vector.

    ``g = (v_c + sum_i w_i v_i) / (1 + sum_i w_i)`` with
    ``w_i = sig(alpha * s_i + beta)``.

    Args:
        values: (m, d') member values; m may be 0.
        sims: (m,) member similarities to the center.
        center_value: (d',) center in value space.
    """
    center_value = T.as_tensor(center_value)
    if values.shape[0] == 0:
        return T.mul(center_value, 1.0)
    w = similarity_weight(sims, alpha, beta)
    num = T.add(center_value, T.sum_(T.mul(T.reshape(w, (-1, 1)), values), axis=0))
    den = T.add(T.sum_(w), 1.0)
    return T.div(num, den)


def aggregate_clusters(values, sims, center_values, assignment, alpha, beta):
    """Vectorized aggregation of every cluster of every slab.

    Args:
        values: (B, n, d') tensor.
        sims: (B, n) similarity of each point to its own center.
        center_values: (B, c, d') tensor.
        assignment: (B, n) int array.
        alpha, beta: tensors broadcastable against (B, n).

    Returns:
        (g, w): g is (B, c, d'), w the (B, n) gates.
    """
    bsz, n, dv = values.shape
    c = center_values.shape[1]
    flat = (np.arange(bsz, dtype=np.int64)[:, None] * c + assignment).reshape(-1)
    w = similarity_weight(sims, alpha, beta)
    weighted = T.mul(values, T.reshape(w, (bsz, n, 1)))
    num = T.segment_sum(T.reshape(weighted, (bsz * n, dv)), flat, bsz * c)
    den = T.segment_sum(T.reshape(w, (bsz * n, 1)), flat, bsz * c)
    num = T.add(T.reshape(num, (bsz, c, dv)), center_values)
    den = T.add(T.reshape(den, (bsz, c, 1)), 1.0)
    return T.div(num, den), w


def dispatch_cluster(points, g, sims, alpha, beta, fc):
    """``p' = p + fc(sig(alpha * s + beta) * g)`` for every point.

    ``g`` holds each point's own cluster feature, already gathered to the
    point's row, shape (..., n, d'); ``sims`` is (..., n).
    """
    if g.shape[-1] != fc.d_in or points.shape[-1] != fc.d_out:
        raise ConfigurationError(
            f"dispatch FC maps {fc.d_in}->{fc.d_out}, got g width {g.shape[-1]} "
            f"and point width {points.shape[-1]}"
        )
    w = similarity_weight(sims, alpha, beta)
    gated = T.mul(g, T.reshape(w, w.shape + (1,)))
    return T.add(points, fc(gated))


def gather_cluster_features(g, assignment):
    """Row i of the result is g[b, assignment[b, i]]; g is (B, c, d')."""
    bsz, c, dv = g.shape
    flat = (np.arange(bsz, dtype=np.int64)[:, None] * c + assignment).reshape(-1)
    rows = T.gather_rows(T.reshape(g, (bsz * c, dv)), flat)
    return T.reshape(rows, (bsz, assignment.shape[1], dv))


class ClusterLayer(Module):
    """Multi-head context clustering; returns the update added to the input.

    Each head projects ``[features || positions]`` into its own similarity
    and value spaces (``head_dim`` wide), clusters, aggregates and gates the
    cluster feature back onto each point. Head outputs are concatenated and
    fused by one FC to the input width.
    """

    def __init__(self, d, heads, head_dim, centers, rng):
        self.d = d
        self.heads = heads
        self.head_dim = head_dim
        self.centers = centers
        self.sim_proj = Linear(d + 2, heads * head_dim, rng)
        self.val_proj = Linear(d + 2, heads * head_dim, rng)
        self.alpha = T.param_init((heads,), "constant", value=1.0)
        self.beta = T.param_init((heads,), "zeros")
        self.fuse = Linear(heads * head_dim, d, rng)

    def _split_heads(self, x):
        b, n, _ = x.shape
        x = T.reshape(x, (b, n, self.heads, self.head_dim))
        x = T.transpose(x, (0, 2, 1, 3))
        return T.reshape(x, (b * self.heads, n, self.head_dim))

    def cluster(self, x, grid):
        """Similarity-space clustering for every head, (B*h) slabs."""
        b, n, _ = x.shape
        pos = T.Tensor(np.broadcast_to(grid_positions(*grid, dtype=x.dtype), (b, n, 2)), dtype=x.dtype)
        inp = T.concat([x, pos], axis=-1)
        ps = self._split_heads(self.sim_proj(inp))
        pv = self._split_heads(self.val_proj(inp))
        centers_s = propose_centers(ps, grid, self.centers)
        centers_v = propose_centers(pv, grid, self.centers)
        assign = cluster_assign(centers_s, ps)
        return inp, pv, centers_v, assign

    def __call__(self, x, grid, trace=None):
        b, n, _ = x.shape
        _, pv, centers_v, assign = self.cluster(x, grid)
        if trace is not None:
            trace.append(
                ClusterAssignment(assign.similarity, assign.assignment.reshape(b, self.heads, n)[:, 0])
            )
        s = T.pick(assign.similarity, assign.assignment, axis=1)
        alpha = T.reshape(T.broadcast_to(T.reshape(self.alpha, (1, self.heads)), (b, self.heads)), (b * self.heads, 1))
        beta = T.reshape(T.broadcast_to(T.reshape(self.beta, (1, self.heads)), (b, self.heads)), (b * self.heads, 1))
        g, w = aggregate_clusters(pv, s, centers_v, assign.assignment, alpha, beta)
        per_point = gather_cluster_features(g, assign.assignment)
        gated = T.mul(per_point, T.reshape(w, (b * self.heads, n, 1)))
        gated = T.reshape(gated, (b, self.heads, n, self.head_dim))
        gated = T.reshape(T.transpose(gated, (0, 2, 1, 3)), (b, n, self.heads * self.head_dim))
        return self.fuse(gated)


class CocBlock(Module):
    """Pre-norm residual block: clustering, then an MLP."""

    def __init__(self, d, heads, head_dim, mlp_r, centers, rng):
        if mlp_r < 1:
            raise ConfigurationError(f"mlp_r must be >= 1, got {mlp_r}")
        self.norm1 = LayerNorm(d)
        self.cluster = ClusterLayer(d, heads, head_dim, centers, rng)
        self.norm2 = LayerNorm(d)
        self.mlp = MLP(d, mlp_r, rng)

    def __call__(self, ps: PointSet, trace=None):
        x = ps.features
        x = T.add(x, self.cluster(self.norm1(x), ps.grid, trace))
        x = T.add(x, self.mlp(self.norm2(x)))
        return PointSet(x, ps.grid)


class PointIncreaser(Module):
    """Each point becomes an r x r block of children via one FC."""

    def __init__(self, d_in, d_out, r, rng):
        self.r = r
        self.d_out = d_out
        self.fc = Linear(d_in, r * r * d_out, rng)

    def __call__(self, ps: PointSet):
        x = T.as_tensor(ps.features)
        if x.shape[-1] != self.fc.d_in:
            raise ConfigurationError(f"increaser expects width {self.fc.d_in}, got {x.shape[-1]}")
        return point_increase(x, ps.grid, self.r, self.d_out, self.fc)


def point_increase(x, grid, r, d_out, fc):
    if fc.d_out != r * r * d_out:
        raise ConfigurationError(f"increaser FC width {fc.d_out} != r^2 * d_out = {r * r * d_out}")
    b = x.shape[0]
    h, w = grid
    y = fc(x)  # (b, h*w, r*r*d_out)
    y = T.reshape(y, (b, h, w, r, r, d_out))
    y = T.transpose(y, (0, 1, 3, 2, 4, 5))
    return PointSet(T.reshape(y, (b, h * r * w * r, d_out)), (h * r, w * r))


class PointReducer(Module):
    """Each non-overlapping r x r patch becomes one point via one FC."""

    def __init__(self, d_in, d_out, r, rng):
        self.r = r
        self.d_out = d_out
        self.fc = Linear(r * r * d_in, d_out, rng)

    def __call__(self, ps: PointSet):
        return point_reduce(T.as_tensor(ps.features), ps.grid, self.r, self.fc)


def point_reduce(x, grid, r, fc):
    h, w = grid
    if h % r or w % r:
        raise ConfigurationError(f"reducer rate {r} does not divide grid {h}x{w}")
    b, _, d = x.shape
    if fc.d_in != r * r * d:
        raise ConfigurationError(f"reducer FC expects {fc.d_in} inputs, patches give {r * r * d}")
    y = T.reshape(x, (b, h // r, r, w // r, r, d))
    y = T.transpose(y, (0, 1, 3, 2, 4, 5))
    y = T.reshape(y, (b, (h // r) * (w // r), r * r * d))
    return PointSet(fc(y), (h // r, w // r))
