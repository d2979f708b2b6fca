"""Run configuration: typed keys, key=value files and flag overrides.

Every key can appear in a config file (``key = value``, ``#`` starts a
comment) or as a ``--key`` flag; flags win over the file, the file wins over
the built-in defaults. Defaults reproduce the published architecture and
hyperparameters.
"""

from __future__ import annotations

from dataclasses import dataclass

from .cocblocks import check_centers
from .errors import ConfigurationError
from .models import ModelConfig, StageConfig


@dataclass(frozen=True)
class Key:
    name: str
    default: object
    kind: type
    help: str
    choices: tuple = ()


def _ints(text):
    return tuple(int(t) for t in text.split(",") if t.strip())


KEYS = (
    Key("dataset", "mnist", str, "mnist (IDX files) or blobs (synthetic)", ("mnist", "blobs")),
    Key("images", "", str, "IDX image file for training/evaluation"),
    Key("labels", "", str, "IDX label file matching --images"),
    Key("test_images", "", str, "held-out IDX images (train-extractor)"),
    Key("test_labels", "", str, "held-out IDX labels (train-extractor)"),
    Key("limit", 0, int, "keep only the first N items of the dataset (0 = all)"),
    Key("blobs_n", 512, int, "size of the synthetic blob dataset"),
    Key("mode", "vanilla", str, "adversarial objective", ("vanilla", "wgan")),
    Key("conditional", False, bool, "condition both networks on class labels"),
    Key("classes", 10, int, "number of classes"),
    Key("channels", 1, int, "image channels", (1, 3)),
    Key("seed_dim", 128, int, "generator seed width (noise + label embedding)"),
    Key("g_dims", (64, 32), _ints, "generator widths after stages 1 and 2"),
    Key("d_dims", (32, 64, 128), _ints, "discriminator widths after stages 1..3"),
    Key("heads", 4, int, "attention heads per cluster layer"),
    Key("head_dim", 16, int, "width of each head"),
    Key("centers_s1", 1, int, "cluster centers in stage 1 (perfect square)"),
    Key("centers_s2", 1, int, "cluster centers in stage 2 (perfect square)"),
    Key("centers_s3", 1, int, "cluster centers in stage 3 (perfect square)"),
    Key("lr", 2e-4, float, "initial learning rate"),
    Key("lr_min", 0.0, float, "floor of the cosine schedule"),
    Key("batch", 256, int, "batch size; the last short batch is dropped"),
    Key("epochs", 50, int, "training epochs"),
    Key("n_critic", 5, int, "critic updates per generator update (wgan)"),
    Key("clip_c", 0.01, float, "critic clip value (wgan)"),
    Key("clip_kind", "weight", str, "critic clipping", ("weight", "grad_norm")),
    Key("beta1", 0.5, float, "Adam beta1"),
    Key("beta2", 0.999, float, "Adam beta2"),
    Key("rms_decay", 0.99, float, "RMSProp decay"),
    Key("generator_loss", "non_saturating", str, "generator objective (vanilla)",
        ("non_saturating", "minimax")),
    Key("schedule_horizon", 0, int, "epochs spanned by the cosine schedule (0 = epochs)"),
    Key("match_aware", False, bool, "conditional: also score real images under wrong labels as fake"),
    Key("seed", 0, int, "RNG seed"),
    Key("sample_every", 1, int, "write a sample grid every N epochs"),
    Key("checkpoint_every", 1, int, "write a checkpoint every N epochs"),
    Key("out", "", str, "output path (run dir, image stem, report file or directory)"),
    Key("png", False, bool, "also write PNG copies of images (needs Pillow)"),
    Key("checkpoint", "", str, "checkpoint to load"),
    Key("grid", 8, int, "sample grid side"),
    Key("extractor", "", str, "feature-extractor checkpoint"),
    Key("n_samples", 1000, int, "generated samples for evaluation"),
    Key("centers", 4, int, "first-stage centers used by visualize"),
    Key("n_images", 8, int, "images rendered by visualize"),
    Key("extractor_epochs", 6, int, "feature-extractor training epochs"),
    Key("extractor_floor", 0.80, float, "held-out accuracy an extractor must reach"),
)
KEY_MAP = {k.name: k for k in KEYS}

_POSITIVE = ("limit", "blobs_n", "classes", "seed_dim", "heads", "head_dim", "centers_s1", "centers_s2",
             "centers_s3", "batch", "epochs", "n_critic", "sample_every", "checkpoint_every", "grid",
             "n_samples", "centers", "n_images", "extractor_epochs")


def parse_value(key: Key, text):
    """Convert ``text`` to the key's type; raises ValueError with a reason."""
    text = text.strip()
    if key.kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if key.kind is int:
        value = int(text)
    elif key.kind is float:
        value = float(text)
    elif key.kind is str:
        value = text
    else:
        value = key.kind(text)
    if key.choices and value not in key.choices:
        raise ValueError(f"expected one of {', '.join(map(str, key.choices))}, got {text!r}")
    return value


def parse_config_text(text, source="<config>"):
    """Parse key=value lines -> {key: (value, origin)}."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigurationError(f"{where}: expected key=value, got {line!r}")
        name, value = (s.strip() for s in line.split("=", 1))
        if name not in KEY_MAP:
            raise ConfigurationError(f"{where}: unknown key {name!r}")
        try:
            out[name] = (parse_value(KEY_MAP[name], value), where)
        except ValueError as exc:
            raise ConfigurationError(f"{where}: bad value for {name}: {exc}") from None
    return out


class RunConfig:
    """Resolved settings; attribute access per key, ``origins`` records where each came from."""

    def __init__(self, values, origins, command="", text=""):
        self.__dict__["values"] = dict(values)
        self.__dict__["origins"] = dict(origins)
        self.__dict__["command"] = command
        self.__dict__["text"] = text

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    def __setattr__(self, name, value):
        raise AttributeError("RunConfig is read-only")

    def explicit(self, name):
        return self.origins[name] != "default"

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.values.items()}

    def fail(self, name, message):
        raise ConfigurationError(f"{self.origins[name]}: {name}: {message}")

    def validate(self):
        for name in _POSITIVE:
            if self.values[name] < (0 if name == "limit" else 1):
                self.fail(name, f"must be positive, got {self.values[name]}")
        if self.lr <= 0 or self.lr_min < 0 or self.lr_min > self.lr:
            self.fail("lr_min" if self.lr > 0 else "lr", "need 0 <= lr_min <= lr and lr > 0")
        if self.clip_c <= 0:
            self.fail("clip_c", f"must be positive, got {self.clip_c}")
        if len(self.g_dims) != 2:
            self.fail("g_dims", "needs exactly two widths")
        if len(self.d_dims) != 3:
            self.fail("d_dims", "needs exactly three widths")
        g_grids, d_grids = (2, 4, 28), (14, 7, 1)
        for i in range(3):
            name = f"centers_s{i + 1}"
            for net, side in (("generator", g_grids[i]), ("discriminator", d_grids[i])):
                try:
                    check_centers(self.values[name], (side, side))
                except ConfigurationError as exc:
                    self.fail(name, f"{exc} ({net} stage {i + 1})")
        try:
            self.model_configs()
        except ConfigurationError as exc:
            raise ConfigurationError(f"model configuration: {exc}") from None
        return self

    def model_configs(self):
        """(generator ModelConfig, discriminator ModelConfig)."""
        centers = (self.centers_s1, self.centers_s2, self.centers_s3)
        common = dict(heads=self.heads, head_dim=self.head_dim)
        g1, g2 = self.g_dims
        g_stages = (
            StageConfig(2, self.seed_dim, g1, 2, mlp_r=4, centers=centers[0], **common),
            StageConfig(2, g1, g2, 2, mlp_r=8, centers=centers[1], **common),
            StageConfig(7, g2, self.channels, 1, mlp_r=4, centers=centers[2], **common),
        )
        d1, d2, d3 = self.d_dims
        d_stages = (
            StageConfig(2, self.channels, d1, 2, mlp_r=4, centers=centers[0], **common),
            StageConfig(2, d1, d2, 2, mlp_r=8, centers=centers[1], **common),
            StageConfig(7, d2, d3, 1, mlp_r=4, centers=centers[2], **common),
        )
        shared = dict(channels=self.channels, seed_dim=self.seed_dim, conditional=self.conditional,
                      n_classes=self.classes)
        gen = ModelConfig("generator", g_stages, **shared).validate()
        disc = ModelConfig("discriminator", d_stages, wgan=self.mode == "wgan", **shared).validate()
        return gen, disc

    def train_config(self):
        from .training import TrainConfig

        return TrainConfig(
            mode=self.mode, conditional=self.conditional, lr=self.lr, lr_min=self.lr_min,
            batch=self.batch, epochs=self.epochs, n_critic=self.n_critic, clip_c=self.clip_c,
            clip_kind=self.clip_kind, beta1=self.beta1, beta2=self.beta2, rms_decay=self.rms_decay,
            generator_loss=self.generator_loss, seed=self.seed, sample_every=self.sample_every,
            checkpoint_every=self.checkpoint_every, schedule_horizon=self.schedule_horizon,
            match_aware=self.match_aware,
        ).validate()


def resolve(file_values=None, flag_values=None, command="", text=""):
    """Merge defaults, file values and flags (in increasing precedence)."""
    values = {k.name: k.default for k in KEYS}
    origins = {k.name: "default" for k in KEYS}
    for name, (value, where) in (file_values or {}).items():
        values[name] = value
        origins[name] = where
    for name, value in (flag_values or {}).items():
        if name not in KEY_MAP:
            raise ConfigurationError(f"unknown key {name!r}")
        values[name] = value
        origins[name] = f"flag --{name.replace('_', '-')}"
    return RunConfig(values, origins, command, text).validate()


def parse_config(path=None, flags=None, command=""):
    """Read an optional config file and apply flag overrides -> validated RunConfig."""
    text = ""
    file_values = {}
    if path:
        try:
            with open(path) as f:
                text = f.read()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
        file_values = parse_config_text(text, str(path))
    return resolve(file_values, flags, command, text)
