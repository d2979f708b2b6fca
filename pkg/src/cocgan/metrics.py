"""FID, KID and Inception Score on a small learned feature extractor.

The extractor is a compact CoC classifier trained here, not Inception-v3, so
values are only comparable between runs that share an extractor; every
report carries the extractor's hash.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from . import checkpoint as ckpt
from . import tensor as T
from .cocblocks import CocBlock, PointReducer
from .data import batch_iter
from .errors import ConfigurationError, InputError, NumericDomainError
from .layers import LayerNorm, Linear, Module
from .pointset import PointSet
from .training import Adam

FEATURE_DIM = 64


@dataclass
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise InputError("feature statistics need at least 2 samples")


def stats_from_features(features):
    """Mean and unbiased covariance (divide by count - 1) of (count, d) features."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise InputError(f"need at least 2 feature rows, got shape {x.shape}")
    mu = x.mean(axis=0)
    xc = x - mu
    cov = xc.T @ xc / (len(x) - 1)
    cov = 0.5 * (cov + cov.T)
    return FeatureStats(mu, cov, len(x))


def feature_stats(images, extractor, batch=250):
    return stats_from_features(extractor.features(images, batch))


def _sqrt_psd(mat):
    """Symmetric PSD square root via eigh; negative eigenvalues clamp to 0."""
    sym = 0.5 * (mat + mat.T)
    try:
        w, v = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise NumericDomainError(f"eigendecomposition failed: {exc}") from None
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def fid(a: FeatureStats, b: FeatureStats):
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 sqrt(S_a^1/2 S_b S_a^1/2))."""
    if a.mean.shape != b.mean.shape:
        raise ConfigurationError(f"feature dims differ: {a.mean.shape} vs {b.mean.shape}")
    diff = a.mean - b.mean
    root_a = _sqrt_psd(a.cov)
    cross = _sqrt_psd(root_a @ b.cov @ root_a)
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross))
    return value


def kid(x, y):
    """Unbiased MMD^2 with the kernel k(u, v) = (u.v / d + 1)^3."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m, n = len(x), len(y)
    if m < 2 or n < 2:
        raise InputError("KID needs at least 2 samples per set")
    d = x.shape[1]
    kxx = (x @ x.T / d + 1.0) ** 3
    kyy = (y @ y.T / d + 1.0) ** 3
    kxy = (x @ y.T / d + 1.0) ** 3
    sxx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(sxx + syy - 2.0 * kxy.mean())


def inception_score(probs, tol=1e-6):
    """exp(mean_x KL(p(y|x) || p(y))) with 0 log 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or len(p) == 0:
        raise InputError(f"expected (n, classes) probabilities, got shape {p.shape}")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > tol):
        raise InputError("probability rows must be non-negative and sum to 1")
    marginal = p.mean(axis=0)
    safe_p = np.where(p > 0, p, 1.0)
    safe_m = np.where(marginal > 0, marginal, 1.0)
    kl = np.where(p > 0, p * (np.log(safe_p) - np.log(safe_m)), 0.0).sum(axis=1)
    return float(np.exp(kl.mean()))


def inception_score_splits(probs, splits=10):
    """Mean and std of the score over contiguous splits."""
    p = np.asarray(probs, dtype=np.float64)
    splits = max(1, min(splits, len(p)))
    scores = [inception_score(chunk) for chunk in np.array_split(p, splits)]
    return float(np.mean(scores)), float(np.std(scores))


# ----------------------------------------------------------------------------
# feature extractor


class FeatureExtractor(Module):
    """28x28 -> reducer(4) -> 7x7x32 -> block -> reducer(7) -> 1x64 -> block -> FC(10).

    The 64-wide single-point feature (after a final layer norm) is the tap
    for FID/KID; softmax of the head gives class posteriors for IS.
    """

    def __init__(self, rng, channels=1, n_classes=10):
        self.channels = channels
        self.n_classes = n_classes
        self.reduce1 = PointReducer(channels, 32, 4, rng)
        self.block1 = CocBlock(32, 4, 8, 2, 1, rng)
        self.reduce2 = PointReducer(32, FEATURE_DIM, 7, rng)
        self.block2 = CocBlock(FEATURE_DIM, 4, 16, 2, 1, rng)
        self.norm = LayerNorm(FEATURE_DIM)
        self.head = Linear(FEATURE_DIM, n_classes, rng)

    def embed(self, images):
        images = T.as_tensor(images)
        b, h, w, ch = images.shape
        ps = PointSet(T.reshape(images, (b, h * w, ch)), (h, w))
        ps = self.block1(self.reduce1(ps))
        ps = self.block2(self.reduce2(ps))
        return self.norm(T.reshape(ps.features, (b, FEATURE_DIM)))

    def logits(self, images):
        return self.head(self.embed(images))

    def features(self, images, batch=250):
        return self._batched(images, batch, lambda x: self.embed(x).data)

    def probabilities(self, images, batch=250):
        def probs(x):
            z = self.logits(x).data.astype(np.float64)
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            return e / e.sum(axis=1, keepdims=True)

        return self._batched(images, batch, probs)

    def predict(self, images, batch=250):
        return self.probabilities(images, batch).argmax(axis=1)

    def _batched(self, images, batch, fn):
        out = []
        with T.no_grad():
            for start in range(0, len(images), batch):
                out.append(np.asarray(fn(images[start:start + batch]), dtype=np.float64))
        return np.concatenate(out, axis=0)


def cross_entropy(logits, labels):
    logp = T.log_softmax(logits, axis=-1)
    return T.neg(T.mean(T.pick(logp, np.asarray(labels, dtype=np.int64), axis=1)))


@dataclass
class ExtractorReport:
    accuracy_trace: list
    held_out_accuracy: float
    floor: float
    qualified: bool
    epochs: int
    seed: int


def train_feature_extractor(train, held_out, epochs=6, batch=64, lr=1e-3, seed=0, floor=0.80,
                            log=None):
    """Cross-entropy training with Adam; returns (extractor, report).

    ``report.qualified`` is False when held-out accuracy stays below
    ``floor``; such an extractor must not be used for metrics.
    """
    rng = np.random.default_rng(seed)
    model = FeatureExtractor(rng, channels=train.images.shape[-1], n_classes=train.n_classes)
    opt = Adam(model.named_parameters(), lr=lr, betas=(0.9, 0.999))
    trace = []
    for epoch in range(epochs):
        for images, labels in batch_iter(train, batch, seed, epoch):
            opt.zero_grad()
            loss = cross_entropy(model.logits(images), labels)
            T.backward(loss)
            opt.step()
        acc = float(np.mean(model.predict(held_out.images) == held_out.labels))
        trace.append(acc)
        if log is not None:
            log(f"extractor epoch {epoch + 1}: held-out accuracy {acc:.4f}")
    report = ExtractorReport(trace, trace[-1], floor, trace[-1] >= floor, epochs, seed)
    return model, report


def save_extractor(path, model, report):
    meta = {"kind": "extractor", "channels": model.channels, "n_classes": model.n_classes,
            "report": asdict(report)}
    return ckpt.save(path, ckpt.module_arrays(model, "extractor."), meta)


def load_extractor(path, require_qualified=True):
    params, meta, _ = ckpt.load(path)
    if not meta or meta.get("kind") != "extractor":
        raise ConfigurationError(f"{path} is not a feature-extractor checkpoint")
    if require_qualified and not meta["report"]["qualified"]:
        raise ConfigurationError(
            f"extractor {path} did not reach its accuracy floor "
            f"({meta['report']['held_out_accuracy']:.3f} < {meta['report']['floor']}); refusing to compute metrics"
        )
    model = FeatureExtractor(np.random.default_rng(0), meta["channels"], meta["n_classes"])
    ckpt.load_into(model, params, "extractor.")
    return model, meta


def extractor_hash(model):
    h = hashlib.sha256()
    for name, p in model.named_parameters().items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return h.hexdigest()[:16]


def evaluate(real_images, fake_images, extractor, splits=10):
    """All three metrics plus bookkeeping, as a flat dict."""
    fr = extractor.features(real_images)
    ff = extractor.features(fake_images)
    probs = extractor.probabilities(fake_images)
    is_mean, is_std = inception_score_splits(probs, splits)
    return {
        "fid": fid(stats_from_features(fr), stats_from_features(ff)),
        "kid": kid(fr, ff),
        "is": is_mean,
        "is_std": is_std,
        "extractor_hash": extractor_hash(extractor),
        "n_real": int(len(real_images)),
        "n_fake": int(len(fake_images)),
    }


def write_report(path, report):
    keys = ("fid", "kid", "is", "is_std", "extractor_hash", "n_real", "n_fake")
    with open(path, "w") as f:
        for k in keys:
            v = report[k]
            f.write(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n")


def read_report(path):
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, v = line.split("=", 1)
            out[k] = v if k == "extractor_hash" else (int(v) if k.startswith("n_") else float(v))
    return out
