"""Inner task families: noisy quadratic models and randomized small MLPs.

Both expose the same surface to the harness: ``init_params``,
``step_batch`` (one stochastic loss/gradient draw), ``valid_loss``, and a
``noise_probe`` used by the gradient-noise-scale feature.  Everything is
deterministic given the task seed.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

LEAKY_SLOPE = 0.01
VERY_LEAKY_SLOPE = 0.3
HUBER_DELTA = 1.0
LAYERNORM_EPS = 1e-5
PRELU_INIT = 0.25
VALID_SUBSET_CAP = 512

ACTIVATIONS = ("relu", "leaky_relu", "very_leaky_relu", "elu", "prelu")
NORMALIZATIONS = ("none", "layernorm")
LOSSES = ("cce", "mae", "mse", "huber")


# ---------------------------------------------------------------------------
# Datasets


@dataclass
class Dataset:
    """Feature matrix plus targets with a deterministic train/valid split."""

    x: np.ndarray
    targets: np.ndarray  # one-hot for classification, raw for regression
    labels: np.ndarray | None  # integer class labels, classification only
    task_type: str  # "classification" | "regression"
    train_idx: np.ndarray
    valid_idx: np.ndarray

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.targets.shape[1]


def _split_indices(n: int, valid_fraction: float, rng: np.random.Generator):
    perm = rng.permutation(n)
    n_valid = max(1, int(round(n * valid_fraction)))
    return np.sort(perm[n_valid:]), np.sort(perm[:n_valid])


def make_synthetic_dataset(
    rng: np.random.Generator,
    kind: str,
    n_samples: int = 512,
    n_features: int = 16,
    n_classes: int = 4,
    separation: float = 6.0,
    noise: float = 0.0,
    valid_fraction: float = 0.25,
) -> Dataset:
    """Self-contained datasets: separable gaussian blobs or linear regression."""
    if kind == "blobs":
        if n_features < n_classes:
            raise ValueError("need n_features >= n_classes for blob placement")
        # Axis-aligned centers, pairwise distance = separation, then a random
        # rotation so nothing is axis-aligned.
        centers = np.zeros((n_classes, n_features))
        for k in range(n_classes):
            centers[k, k] = separation / math.sqrt(2.0)
        q, _ = np.linalg.qr(rng.normal(size=(n_features, n_features)))
        centers = centers @ q
        labels = rng.integers(n_classes, size=n_samples)
        x = centers[labels] + rng.normal(size=(n_samples, n_features))
        onehot = np.zeros((n_samples, n_classes))
        onehot[np.arange(n_samples), labels] = 1.0
        train_idx, valid_idx = _split_indices(n_samples, valid_fraction, rng)
        return Dataset(x, onehot, labels, "classification", train_idx, valid_idx)
    if kind == "regression":
        w = rng.normal(size=(n_features, 1))
        x = rng.normal(size=(n_samples, n_features))
        y = x @ w + noise * rng.normal(size=(n_samples, 1))
        train_idx, valid_idx = _split_indices(n_samples, valid_fraction, rng)
        return Dataset(x, y, None, "regression", train_idx, valid_idx)
    raise ValueError(f"unknown synthetic dataset kind {kind!r}")


# ---------------------------------------------------------------------------
# IDX binary format

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


def read_idx(path) -> np.ndarray:
    """Parse one IDX file (big-endian magic, dimension sizes, raw ubytes)."""
    with open(path, "rb") as f:
        raw = f.read(4)
        if len(raw) < 4:
            raise IdxFormatError(f"{path}: truncated header: missing magic number")
        magic = struct.unpack(">I", raw)[0]
        if magic >> 16 != 0:
            raise IdxFormatError(f"{path}: bad magic number 0x{magic:08x}")
        dtype_code = (magic >> 8) & 0xFF
        ndim = magic & 0xFF
        if dtype_code != 0x08:
            raise IdxFormatError(
                f"{path}: unsupported element type 0x{dtype_code:02x} (only unsigned bytes)"
            )
        if ndim == 0:
            raise IdxFormatError(f"{path}: bad magic number: zero dimensions")
        dims = []
        for i in range(ndim):
            raw = f.read(4)
            if len(raw) < 4:
                raise IdxFormatError(f"{path}: truncated header: missing size of dimension {i}")
            dims.append(struct.unpack(">I", raw)[0])
        count = int(np.prod(dims))
        data = f.read(count)
        if len(data) < count:
            raise IdxFormatError(
                f"{path}: truncated data: expected {count} bytes, got {len(data)}"
            )
        return np.frombuffer(data, dtype=np.uint8).reshape(dims)


def load_idx_dataset(
    images_path,
    labels_path,
    valid_fraction: float = 0.2,
    seed: int = 0,
    limit: int | None = None,
) -> Dataset:
    """Image/label IDX pair -> classification dataset with pixels in [0, 1]."""
    with open(images_path, "rb") as f:
        magic_bytes = f.read(4)
    if len(magic_bytes) == 4:
        magic = struct.unpack(">I", magic_bytes)[0]
        if magic == IDX_LABEL_MAGIC:
            raise IdxFormatError(
                f"{images_path}: label-vector magic 0x{magic:08x} where an image tensor "
                f"(0x{IDX_IMAGE_MAGIC:08x}) was expected"
            )
    images = read_idx(images_path)
    if images.ndim != 3:
        raise IdxFormatError(f"{images_path}: expected 3-d image tensor, got {images.ndim}-d")
    labels = read_idx(labels_path)
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path}: expected 1-d label vector, got {labels.ndim}-d")
    if len(images) != len(labels):
        raise IdxFormatError(
            f"image/label count mismatch: {len(images)} vs {len(labels)}"
        )
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = images.reshape(len(images), -1).astype(float) / 255.0
    labels = labels.astype(int)
    n_classes = int(labels.max()) + 1 if len(labels) else 0
    onehot = np.zeros((len(labels), n_classes))
    onehot[np.arange(len(labels)), labels] = 1.0
    rng = np.random.default_rng(seed)
    train_idx, valid_idx = _split_indices(len(labels), valid_fraction, rng)
    return Dataset(x, onehot, labels, "classification", train_idx, valid_idx)


# ---------------------------------------------------------------------------
# Noisy quadratic model


@dataclass
class NqmTask:
    """Diagonal quadratic with stochastic gradients: loss = 0.5 * sum(h * theta^2).

    Curvatures fall off as 1/i; the per-coordinate gradient noise scales
    with sqrt(h) times a task-level factor, shrunk by the batch size.
    """

    dim: int = 32
    kappa: float = 0.3
    batch_size: int = 8
    seed: int = 0
    family: str = "nqm"

    def __post_init__(self):
        self.h = 1.0 / np.arange(1, self.dim + 1, dtype=float)
        self.sigma = self.kappa * np.sqrt(self.h)

    def init_params(self) -> list[np.ndarray]:
        rng = np.random.default_rng(self.seed)
        return [rng.normal(size=self.dim)]

    def loss(self, theta: np.ndarray) -> float:
        return float(0.5 * np.sum(self.h * theta * theta))

    def loss_and_grad(self, theta: np.ndarray, rng: np.random.Generator, batch_size: int = 1):
        noise = rng.normal(size=self.dim) * self.sigma / math.sqrt(batch_size)
        grad = self.h * (theta + noise)
        return self.loss(theta), grad

    def step_batch(self, params: list[np.ndarray], rng: np.random.Generator):
        loss, grad = self.loss_and_grad(params[0], rng, self.batch_size)
        return loss, [grad]

    def valid_loss(self, params: list[np.ndarray]) -> float:
        return self.loss(params[0])

    def noise_probe(self, params: list[np.ndarray], rng: np.random.Generator):
        """Squared norm of a single-example gradient, for noise-scale estimation."""
        _, grad = self.loss_and_grad(params[0], rng, batch_size=1)
        return float(np.sum(grad * grad)), 1


def nqm_loss_and_grad(task: NqmTask, theta: np.ndarray, rng: np.random.Generator):
    return task.loss_and_grad(theta, rng)


# ---------------------------------------------------------------------------
# MLP with manual reverse-mode gradients


def _act_forward(name: str, z: np.ndarray, alpha: float):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if name == "very_leaky_relu":
        return np.where(z > 0, z, VERY_LEAKY_SLOPE * z)
    if name == "elu":
        return np.where(z > 0, z, np.expm1(z))
    if name == "prelu":
        return np.where(z > 0, z, alpha * z)
    raise ValueError(f"unknown activation {name!r}")


def _act_backward(name: str, z: np.ndarray, alpha: float, d_out: np.ndarray):
    """Returns (d_z, d_alpha or None)."""
    if name == "relu":
        return d_out * (z > 0), None
    if name == "leaky_relu":
        return d_out * np.where(z > 0, 1.0, LEAKY_SLOPE), None
    if name == "very_leaky_relu":
        return d_out * np.where(z > 0, 1.0, VERY_LEAKY_SLOPE), None
    if name == "elu":
        return d_out * np.where(z > 0, 1.0, np.exp(z)), None
    if name == "prelu":
        d_z = d_out * np.where(z > 0, 1.0, alpha)
        d_alpha = float(np.sum(d_out * np.where(z > 0, 0.0, z)))
        return d_z, d_alpha
    raise ValueError(f"unknown activation {name!r}")


def _loss_forward_backward(name: str, logits: np.ndarray, targets: np.ndarray, labels):
    """Mean-reduced loss value and its gradient with respect to the logits."""
    n, k = logits.shape
    if name == "cce":
        shifted = logits - logits.max(axis=1, keepdims=True)
        logZ = np.log(np.sum(np.exp(shifted), axis=1))
        logp = shifted - logZ[:, None]
        loss = float(-np.mean(logp[np.arange(n), labels]))
        p = np.exp(logp)
        grad = p.copy()
        grad[np.arange(n), labels] -= 1.0
        return loss, grad / n
    r = logits - targets
    if name == "mse":
        return float(np.mean(r * r)), 2.0 * r / r.size
    if name == "mae":
        return float(np.mean(np.abs(r))), np.sign(r) / r.size
    if name == "huber":
        d = HUBER_DELTA
        absr = np.abs(r)
        loss = float(
            np.mean(np.where(absr <= d, 0.5 * r * r, d * (absr - 0.5 * d)))
        )
        return loss, np.clip(r, -d, d) / r.size
    raise ValueError(f"unknown loss {name!r}")


@dataclass
class MlpTask:
    """Fully-connected network over a dataset, with exact manual backprop.

    Hidden layers run affine -> optional layer norm -> activation; the
    output layer is affine.  Parameter order per hidden layer is
    W, b, [gamma, beta,] [alpha,] followed by the output W, b.
    """

    dataset: Dataset
    hidden: tuple[int, ...] = (32,)
    activation: str = "relu"
    normalization: str = "none"
    loss_name: str = "cce"
    batch_size: int = 16
    seed: int = 0
    family: str = "mlp"

    def __post_init__(self):
        if self.loss_name == "cce" and self.dataset.task_type != "classification":
            raise ValueError("cce needs a classification dataset")
        rng = np.random.default_rng(self.seed)
        cap = min(VALID_SUBSET_CAP, len(self.dataset.valid_idx))
        self._valid_subset = rng.choice(self.dataset.valid_idx, size=cap, replace=False)

    @property
    def widths(self) -> list[int]:
        return [self.dataset.n_features, *self.hidden, self.dataset.n_outputs]

    def param_names(self) -> list[str]:
        names = []
        n_hidden = len(self.hidden)
        for l in range(n_hidden):
            names += [f"w{l}", f"b{l}"]
            if self.normalization == "layernorm":
                names += [f"ln_gamma{l}", f"ln_beta{l}"]
            if self.activation == "prelu":
                names.append(f"prelu_alpha{l}")
        names += ["w_out", "b_out"]
        return names

    def init_params(self) -> list[np.ndarray]:
        rng = np.random.default_rng(self.seed + 1)
        widths = self.widths
        params: list[np.ndarray] = []
        for l in range(len(self.hidden)):
            fan_in, fan_out = widths[l], widths[l + 1]
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            params.append(np.zeros(fan_out))
            if self.normalization == "layernorm":
                params.append(np.ones(fan_out))
                params.append(np.zeros(fan_out))
            if self.activation == "prelu":
                params.append(np.array([PRELU_INIT]))
        fan_in, fan_out = widths[-2], widths[-1]
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
        return params

    def forward_backward(self, params: list[np.ndarray], x: np.ndarray, targets, labels):
        """Loss and exact gradients for one batch; NaN loss on blow-up."""
        ln = self.normalization == "layernorm"
        prelu = self.activation == "prelu"
        idx = 0
        a = x
        caches = []
        for _ in self.hidden:
            w, b = params[idx], params[idx + 1]
            idx += 2
            z = a @ w + b
            if ln:
                gamma, beta = params[idx], params[idx + 1]
                idx += 2
                mu = z.mean(axis=1, keepdims=True)
                xc = z - mu
                var = np.mean(xc * xc, axis=1, keepdims=True)
                inv = 1.0 / np.sqrt(var + LAYERNORM_EPS)
                xhat = xc * inv
                z2 = xhat * gamma + beta
            else:
                gamma = beta = xhat = inv = None
                z2 = z
            alpha = float(params[idx][0]) if prelu else 0.0
            if prelu:
                idx += 1
            out = _act_forward(self.activation, z2, alpha)
            caches.append((a, w, z, xhat, inv, gamma, z2, alpha))
            a = out
        w_out, b_out = params[idx], params[idx + 1]
        logits = a @ w_out + b_out
        if not np.all(np.isfinite(logits)):
            return math.nan, [np.zeros_like(p) for p in params]
        with np.errstate(over="ignore", invalid="ignore"):
            loss, d_logits = _loss_forward_backward(self.loss_name, logits, targets, labels)
        if not math.isfinite(loss):
            return math.nan, [np.zeros_like(p) for p in params]

        grads: list[np.ndarray] = [np.zeros_like(p) for p in params]
        out_idx = len(params) - 2
        grads[out_idx] = a.T @ d_logits
        grads[out_idx + 1] = d_logits.sum(axis=0)
        d_a = d_logits @ w_out.T

        idx = out_idx
        for cache in reversed(caches):
            a_prev, w, z, xhat, inv, gamma, z2, alpha = cache
            if prelu:
                idx -= 1
                d_z2, d_alpha = _act_backward(self.activation, z2, alpha, d_a)
                grads[idx] = np.array([d_alpha])
            else:
                d_z2, _ = _act_backward(self.activation, z2, alpha, d_a)
            if ln:
                idx -= 2
                grads[idx] = np.sum(d_z2 * xhat, axis=0)
                grads[idx + 1] = np.sum(d_z2, axis=0)
                d_xhat = d_z2 * gamma
                h = z.shape[1]
                d_z = (
                    inv
                    / h
                    * (
                        h * d_xhat
                        - d_xhat.sum(axis=1, keepdims=True)
                        - xhat * np.sum(d_xhat * xhat, axis=1, keepdims=True)
                    )
                )
            else:
                d_z = d_z2
            idx -= 2
            grads[idx] = a_prev.T @ d_z
            grads[idx + 1] = d_z.sum(axis=0)
            d_a = d_z @ w.T
        return loss, grads

    def _batch(self, indices: np.ndarray):
        ds = self.dataset
        x = ds.x[indices]
        targets = ds.targets[indices]
        labels = ds.labels[indices] if ds.labels is not None else None
        return x, targets, labels

    def step_batch(self, params: list[np.ndarray], rng: np.random.Generator):
        indices = rng.choice(self.dataset.train_idx, size=self.batch_size, replace=True)
        loss, grads = self.forward_backward(params, *self._batch(indices))
        return loss, grads

    def valid_loss(self, params: list[np.ndarray]) -> float:
        x, targets, labels = self._batch(self._valid_subset)
        loss, _ = self.forward_backward(params, x, targets, labels)
        return loss

    def noise_probe(self, params: list[np.ndarray], rng: np.random.Generator):
        index = rng.choice(self.dataset.train_idx, size=1)
        _, grads = self.forward_backward(params, *self._batch(index))
        return float(sum(np.sum(g * g) for g in grads)), 1


def mlp_forward_backward(task: MlpTask, params: list[np.ndarray], x, targets, labels=None):
    return task.forward_backward(params, x, targets, labels)


# ---------------------------------------------------------------------------
# Task distribution


@dataclass
class TaskDistributionConfig:
    """Family weights and per-family ranges for sampling inner tasks."""

    family_weights: dict[str, float] = field(
        default_factory=lambda: {"mlp": 0.2, "nqm": 0.014}
    )
    nqm_dim_range: tuple[int, int] = (10, 100)
    nqm_kappa_range: tuple[float, float] = (0.1, 1.0)
    nqm_batch_choices: tuple[int, ...] = (4, 8, 16)
    mlp_hidden_layers_range: tuple[int, int] = (1, 3)
    mlp_width_choices: tuple[int, ...] = (8, 16, 32)
    mlp_activations: tuple[str, ...] = ACTIVATIONS
    mlp_normalizations: tuple[str, ...] = NORMALIZATIONS
    mlp_losses: tuple[str, ...] = LOSSES
    mlp_batch_choices: tuple[int, ...] = (8, 16, 32)
    mlp_n_features: int = 16
    mlp_n_classes: int = 4
    mlp_dataset_size: int = 384
    idx_images: str | None = None
    idx_labels: str | None = None
    idx_limit: int = 2048

    def __post_init__(self):
        total = sum(self.family_weights.values())
        if not self.family_weights or total <= 0:
            raise ValueError("family_weights must be non-empty with positive mass")
        self.family_weights = {k: v / total for k, v in self.family_weights.items()}


@dataclass
class TaskEncoding:
    """Fixed-length vector of every sampled task choice (one-hots + numerics)."""

    vector: np.ndarray
    names: list[str]

    def __len__(self) -> int:
        return len(self.vector)


def _onehot(value, choices) -> np.ndarray:
    out = np.zeros(len(choices))
    out[list(choices).index(value)] = 1.0
    return out


def encoding_length(config: TaskDistributionConfig) -> int:
    n_layers = config.mlp_hidden_layers_range[1] - config.mlp_hidden_layers_range[0] + 1
    return (
        2  # family
        + 2  # nqm numerics
        + len(config.nqm_batch_choices)
        + n_layers
        + len(config.mlp_width_choices)
        + len(config.mlp_activations)
        + len(config.mlp_normalizations)
        + len(config.mlp_losses)
        + len(config.mlp_batch_choices)
    )


def encode_task(task, config: TaskDistributionConfig) -> TaskEncoding:
    names = ["family:mlp", "family:nqm"]
    parts = [_onehot(task.family, ("mlp", "nqm"))]

    lo_d, hi_d = config.nqm_dim_range
    lo_k, hi_k = config.nqm_kappa_range
    if task.family == "nqm":
        dim_norm = (math.log(task.dim) - math.log(lo_d)) / max(
            math.log(hi_d) - math.log(lo_d), 1e-9
        )
        kappa_norm = (math.log(task.kappa) - math.log(lo_k)) / max(
            math.log(hi_k) - math.log(lo_k), 1e-9
        )
        parts.append(np.array([dim_norm, kappa_norm]))
        parts.append(_onehot(task.batch_size, config.nqm_batch_choices))
    else:
        parts.append(np.zeros(2))
        parts.append(np.zeros(len(config.nqm_batch_choices)))
    names += ["nqm:dim", "nqm:kappa"]
    names += [f"nqm:batch={b}" for b in config.nqm_batch_choices]

    lo_l, hi_l = config.mlp_hidden_layers_range
    layer_choices = tuple(range(lo_l, hi_l + 1))
    if task.family == "mlp":
        parts.append(_onehot(len(task.hidden), layer_choices))
        parts.append(_onehot(task.hidden[0], config.mlp_width_choices))
        parts.append(_onehot(task.activation, config.mlp_activations))
        parts.append(_onehot(task.normalization, config.mlp_normalizations))
        parts.append(_onehot(task.loss_name, config.mlp_losses))
        parts.append(_onehot(task.batch_size, config.mlp_batch_choices))
    else:
        parts.append(np.zeros(len(layer_choices)))
        parts.append(np.zeros(len(config.mlp_width_choices)))
        parts.append(np.zeros(len(config.mlp_activations)))
        parts.append(np.zeros(len(config.mlp_normalizations)))
        parts.append(np.zeros(len(config.mlp_losses)))
        parts.append(np.zeros(len(config.mlp_batch_choices)))
    names += [f"mlp:layers={n}" for n in layer_choices]
    names += [f"mlp:width={w}" for w in config.mlp_width_choices]
    names += [f"mlp:act={a}" for a in config.mlp_activations]
    names += [f"mlp:norm={n}" for n in config.mlp_normalizations]
    names += [f"mlp:loss={l}" for l in config.mlp_losses]
    names += [f"mlp:batch={b}" for b in config.mlp_batch_choices]

    vector = np.concatenate(parts)
    assert len(vector) == encoding_length(config)
    return TaskEncoding(vector=vector, names=names)


_IDX_CACHE: dict[tuple, Dataset] = {}


def _mlp_dataset(config: TaskDistributionConfig, seed: int) -> Dataset:
    if config.idx_images and config.idx_labels:
        key = (config.idx_images, config.idx_labels, config.idx_limit)
        if key not in _IDX_CACHE:
            _IDX_CACHE[key] = load_idx_dataset(
                config.idx_images, config.idx_labels, limit=config.idx_limit
            )
        return _IDX_CACHE[key]
    rng = np.random.default_rng(seed)
    return make_synthetic_dataset(
        rng,
        "blobs",
        n_samples=config.mlp_dataset_size,
        n_features=config.mlp_n_features,
        n_classes=config.mlp_n_classes,
    )


def sample_task(rng: np.random.Generator, config: TaskDistributionConfig):
    """Draw one task from the configured distribution, plus its encoding."""
    families = sorted(config.family_weights)
    weights = np.array([config.family_weights[f] for f in families])
    family = families[int(rng.choice(len(families), p=weights))]
    seed = int(rng.integers(2**31 - 1))
    if family == "nqm":
        lo_d, hi_d = config.nqm_dim_range
        lo_k, hi_k = config.nqm_kappa_range
        dim = int(rng.integers(lo_d, hi_d + 1))
        kappa = float(np.exp(rng.uniform(math.log(lo_k), math.log(hi_k))))
        batch = int(rng.choice(config.nqm_batch_choices))
        task = NqmTask(dim=dim, kappa=kappa, batch_size=batch, seed=seed)
    elif family == "mlp":
        lo_l, hi_l = config.mlp_hidden_layers_range
        n_layers = int(rng.integers(lo_l, hi_l + 1))
        width = int(rng.choice(config.mlp_width_choices))
        activation = str(rng.choice(config.mlp_activations))
        normalization = str(rng.choice(config.mlp_normalizations))
        loss_name = str(rng.choice(config.mlp_losses))
        batch = int(rng.choice(config.mlp_batch_choices))
        task = MlpTask(
            dataset=_mlp_dataset(config, seed),
            hidden=(width,) * n_layers,
            activation=activation,
            normalization=normalization,
            loss_name=loss_name,
            batch_size=batch,
            seed=seed,
        )
    else:
        raise ValueError(f"unknown task family {family!r}")
    return task, encode_task(task, config)
