"""Optical neural networks built from mesh layers.

A layer is a mesh whose main-port matrix acts as the weight matrix W; light
leaving through auxiliary ports is lost. Between layers a complex
activation is applied to the fields and the last layer is detected as
output powers |z|^2. Training adjusts every phase by gradient descent with
gradients from the adjoint pass through each mesh.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .propagation import (
    MeshState,
    NoiseConfig,
    PhaseOffsets,
    backpropagate,
    draw_offsets,
    propagate_fields,
    rng_stream,
    set_phase_gradient,
)
from .topology import MeshKind, build

LOSSES = ("mean-square-error", "categorical-cross-entropy")


class TrainingDivergedError(RuntimeError):
    pass


class IdxFormatError(ValueError):
    """Malformed IDX file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


# ---- activations ---------------------------------------------------------


@dataclass(frozen=True)
class Activation:
    """Field nonlinearity of the form w = h(|z|^2) * z.

    ``modrelu``: (|z| - b) z/|z| above the threshold b, 0 below it.
    ``electro-optic``: a fraction ``alpha`` of the power is tapped and
    drives a phase shift g*alpha*|z|^2 + phi_b on the rest of the light.
    """

    kind: str = "modrelu"
    b: float = 0.1
    alpha: float = 0.1
    gain: float = np.pi
    phi_b: float = np.pi

    def __post_init__(self):
        if self.kind not in ("identity", "modrelu", "electro-optic"):
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.b < 0:
            raise ValueError("modrelu threshold b must be >= 0")
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must be in [0, 1)")

    def _h(self, s):
        """h(s) and dh/ds for s = |z|^2."""
        if self.kind == "identity":
            return np.ones_like(s, dtype=complex), np.zeros_like(s, dtype=complex)
        if self.kind == "modrelu":
            on = s > self.b**2
            r = np.sqrt(np.where(on, s, 1.0))
            h = np.where(on, 1.0 - self.b / r, 0.0)
            dh = np.where(on, self.b / (2.0 * r**3), 0.0)
            return h.astype(complex), dh.astype(complex)
        t = 0.5 * (self.gain * self.alpha * s + self.phi_b)
        amp = 1j * np.sqrt(1.0 - self.alpha)
        e = np.exp(-1j * t)
        h = amp * e * np.cos(t)
        dh = -amp * e * (1j * np.cos(t) + np.sin(t)) * 0.5 * self.gain * self.alpha
        return h, dh

    def __call__(self, z):
        h, _ = self._h(np.abs(z) ** 2)
        return h * z

    def backward(self, z, g):
        """dL/d(conj z) from g = dL/d(conj w)."""
        s = np.abs(z) ** 2
        h, dh = self._h(s)
        dw_dz = h + dh * s
        dw_dzc = dh * z * z
        return np.conj(g) * dw_dzc + g * np.conj(dw_dz)


# ---- datasets ------------------------------------------------------------


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features must be (n, d) with one label per row")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def one_hot(self) -> np.ndarray:
        y = np.zeros((len(self), self.n_classes))
        y[np.arange(len(self)), self.labels] = 1.0
        return y

    @property
    def encoded(self) -> np.ndarray:
        """Real input amplitudes with unit total optical power per sample."""
        x = self.features.astype(complex)
        norm = np.linalg.norm(self.features, axis=1, keepdims=True)
        return x / np.where(norm > 0, norm, 1.0)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)

    def split(self, fraction: float, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        perm = np.random.default_rng(seed).permutation(len(self))
        k = int(round(fraction * len(self)))
        return self.subset(perm[:k]), self.subset(perm[k:])


def gaussian_dataset(n_classes: int, per_class: int, separation: float = 4.0, spread: float = 1.0,
                     seed: int = 0, n_features: int | None = None) -> Dataset:
    """Class k ~ N(separation * e_k, (spread^2 / d) I).

    ``spread`` is the RMS radius of each cluster, so the per-axis standard
    deviation is spread / sqrt(d) for d features.
    """
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if per_class < 0 or spread < 0:
        raise ValueError("per_class and spread must be >= 0")
    d = n_classes if n_features is None else n_features
    if d < n_classes:
        raise ValueError("need at least one feature axis per class")
    rng = np.random.default_rng(seed)
    means = separation * np.eye(n_classes, d)
    labels = np.repeat(np.arange(n_classes), per_class)
    x = means[labels] + spread / np.sqrt(d) * rng.standard_normal((labels.size, d))
    return Dataset(x, labels, n_classes)


def centroid_accuracy(train: Dataset, test: Dataset) -> float:
    """Nearest-class-mean classifier, a reference for separability."""
    cent = np.stack([train.features[train.labels == k].mean(axis=0) for k in range(train.n_classes)])
    d = ((test.features[:, None, :] - cent[None]) ** 2).sum(axis=2)
    return float(np.mean(np.argmin(d, axis=1) == test.labels))


def _open(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    """Read an unsigned-byte IDX array (big-endian header, MNIST layout)."""
    with _open(path) as fh:
        data = fh.read()
    if len(data) < 4:
        raise IdxFormatError("file shorter than the 4-byte magic number", len(data))
    zero, dtype, ndim = struct.unpack(">HBB", data[:4])
    magic = struct.unpack(">I", data[:4])[0]
    if zero != 0 or dtype != 0x08:
        raise IdxFormatError(f"bad magic 0x{magic:08x}, expected unsigned-byte IDX", 0)
    if expected_magic is not None and magic != expected_magic:
        raise IdxFormatError(f"magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0)
    hdr = 4 + 4 * ndim
    if len(data) < hdr:
        raise IdxFormatError(f"header declares {ndim} dimensions but is truncated", len(data))
    dims = struct.unpack(f">{ndim}I", data[4:hdr])
    size = int(np.prod(dims, dtype=np.int64))
    if len(data) - hdr != size:
        raise IdxFormatError(f"payload has {len(data) - hdr} bytes, dimensions {dims} need {size}", hdr)
    return np.frombuffer(data, dtype=np.uint8, offset=hdr).reshape(dims)


def write_idx(path, arr) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">HBB", 0, 0x08, arr.ndim))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


@dataclass
class PcaReducer:
    """PCA projection followed by per-feature min-max scaling, fitted on training data."""

    mean: np.ndarray
    components: np.ndarray
    explained: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, x, n_components: int) -> "PcaReducer":
        x = np.asarray(x, dtype=float)
        if not 1 <= n_components <= x.shape[1]:
            raise ValueError(f"n_components must be in [1, {x.shape[1]}]")
        mean = x.mean(axis=0)
        xc = x - mean
        cov = xc.T @ xc / max(x.shape[0] - 1, 1)
        w, v = np.linalg.eigh(cov)
        order = np.argsort(w)[::-1][:n_components]
        comps = v[:, order].T
        # fix the sign of each component for reproducibility
        comps *= np.where(comps[np.arange(n_components), np.argmax(np.abs(comps), axis=1)] < 0, -1, 1)[:, None]
        proj = xc @ comps.T
        return cls(mean, comps, w[order], proj.min(axis=0), proj.max(axis=0))

    def transform(self, x) -> np.ndarray:
        proj = (np.asarray(x, dtype=float) - self.mean) @ self.components.T
        span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        return np.clip((proj - self.lo) / span, 0.0, 1.0)


def mnist_reduced(image_file, label_file, n_features: int = 10, method: str = "pca",
                  reducer: PcaReducer | None = None) -> tuple[Dataset, PcaReducer]:
    """Load IDX images/labels and reduce them to ``n_features`` in [0, 1].

    Pass the ``reducer`` fitted on the training split when loading validation data.
    """
    if method != "pca":
        raise ValueError(f"unsupported reduction {method!r}")
    images = read_idx(image_file, 0x00000803)
    labels = read_idx(label_file, 0x00000801)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    flat = images.reshape(images.shape[0], -1).astype(float) / 255.0
    if reducer is None:
        reducer = PcaReducer.fit(flat, n_features)
    n_classes = max(10, int(labels.max()) + 1) if labels.size else 10
    return Dataset(reducer.transform(flat), labels.astype(int), n_classes), reducer


# ---- model ---------------------------------------------------------------


@dataclass
class OnnModel:
    layers: list[MeshState]
    activation: Activation = field(default_factory=Activation)
    loss_fn: str = "mean-square-error"

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a model needs at least one layer")
        n = self.layers[0].topology.n_main
        if any(s.topology.n_main != n for s in self.layers):
            raise ValueError("all layers must share the main dimension")
        if self.loss_fn not in LOSSES:
            raise ValueError(f"loss_fn must be one of {LOSSES}")

    @classmethod
    def create(cls, kind, n: int, n_layers: int = 1, seed: int = 0, **kw) -> "OnnModel":
        topo = build(kind, n)
        layers = [MeshState.random(topo, rng_stream(seed, 0, i)) for i in range(n_layers)]
        return cls(layers, **kw)

    @property
    def n_features(self) -> int:
        return self.layers[0].topology.n_main

    n_classes = n_features

    @property
    def kind(self) -> MeshKind:
        return self.layers[0].topology.kind

    def flat_params(self) -> np.ndarray:
        return np.concatenate([s.flat_params() for s in self.layers])

    def with_params(self, params) -> "OnnModel":
        out, k = [], 0
        for s in self.layers:
            out.append(s.with_params(params[k : k + s.n_params]))
            k += s.n_params
        return OnnModel(out, self.activation, self.loss_fn)

    def with_loss(self, loss_db) -> "OnnModel":
        return OnnModel([s.replace(loss_db=loss_db) for s in self.layers], self.activation, self.loss_fn)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "n": self.n_features,
            "activation": asdict(self.activation),
            "loss_fn": self.loss_fn,
            "layers": [
                {"theta": s.theta.tolist(), "phi": s.phi.tolist(), "input_phases": s.input_phases.tolist()}
                for s in self.layers
            ],
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_dict(cls, doc: dict) -> "OnnModel":
        try:
            topo = build(doc["kind"], int(doc["n"]))
            layers = [
                MeshState(topo, np.asarray(l["theta"]), np.asarray(l["phi"]),
                          input_phases=np.asarray(l.get("input_phases", []), dtype=float))
                for l in doc["layers"]
            ]
            return cls(layers, Activation(**doc.get("activation", {})), doc.get("loss_fn", LOSSES[0]))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed model document: {exc!r}") from exc

    @classmethod
    def load(cls, path) -> "OnnModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _embed(state: MeshState, x) -> np.ndarray:
    topo = state.topology
    full = np.zeros((x.shape[0], topo.n_ports), complex)
    full[:, topo.main_rows] = x
    return full


def _forward(model: OnnModel, x, offsets=None, record: bool = False):
    """Fields through all layers; returns output fields (and caches for the adjoint)."""
    caches = []
    z = x
    for i, s in enumerate(model.layers):
        off = None if offsets is None else offsets[i]
        xin = _embed(s, z)
        if record:
            y, trace = propagate_fields(s, xin, off, record=True)
        else:
            y = propagate_fields(s, xin, off)
            trace = None
        pre = y[:, s.topology.main_rows]
        z = model.activation(pre) if i < len(model.layers) - 1 else pre
        caches.append((xin, trace, pre, off))
    return (z, caches) if record else z


def forward(model: OnnModel, x, noise: NoiseConfig | None = None,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Output powers |z|^2 for one sample (d,) or a batch (B, d) of input amplitudes.

    With noise, every sample gets a fresh phase-noise draw in every layer.
    """
    x = np.asarray(x, dtype=complex)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != model.n_features:
        raise ValueError(f"expected inputs with {model.n_features} features, got shape {x.shape}")
    offsets = None
    if noise is not None and not noise.is_zero:
        rng = rng_stream(noise.seed) if rng is None else rng
        offsets = [draw_offsets(s.topology, noise, rng, batch=xb.shape[0]) for s in model.layers]
    p = np.abs(_forward(model, xb, offsets)) ** 2
    return p[0] if single else p


def predict(model: OnnModel, x, noise=None, rng=None) -> np.ndarray:
    return np.argmax(forward(model, x, noise, rng), axis=-1)


def _softmax(p):
    e = np.exp(p - p.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def loss_value(model: OnnModel, p, y) -> tuple[float, np.ndarray]:
    """Mean loss over the batch and dL/dp."""
    b = p.shape[0]
    if model.loss_fn == "mean-square-error":
        d = p - y
        return float(np.sum(d**2) / b), 2.0 * d / b
    q = _softmax(p)
    loss = -np.sum(y * np.log(np.clip(q, 1e-300, None))) / b
    return float(loss), (q - y) / b


def loss_and_grad(model: OnnModel, x, y) -> tuple[float, np.ndarray]:
    """Loss on a batch and its gradient w.r.t. ``model.flat_params()``."""
    z, caches = _forward(model, x, record=True)
    p = np.abs(z) ** 2
    loss, dp = loss_value(model, p, y)
    g = dp * z  # dL/d(conj z) for p = |z|^2
    grads = []
    for i in range(len(model.layers) - 1, -1, -1):
        s = model.layers[i]
        xin, trace, pre, off = caches[i]
        if i < len(model.layers) - 1:
            g = model.activation.backward(pre, g)
        gfull = np.zeros((g.shape[0], s.topology.n_ports), complex)
        gfull[:, s.topology.main_rows] = g
        gth, gph, gip, gin = backpropagate(s, gfull, trace, off, x_in=xin)
        gth, gph = set_phase_gradient(s, gth, gph)
        grads.append(np.concatenate([gth, gph, gip]))
        g = gin[:, s.topology.main_rows]
    return loss, np.concatenate(grads[::-1])


def numerical_grad(model: OnnModel, x, y, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of the batch loss."""
    p0 = model.flat_params()
    out = np.zeros_like(p0)
    for k in range(p0.size):
        e = np.zeros_like(p0)
        e[k] = h
        lp, _ = loss_value(model, np.abs(_forward(model.with_params(p0 + e), x)) ** 2, y)
        lm, _ = loss_value(model, np.abs(_forward(model.with_params(p0 - e), x)) ** 2, y)
        out[k] = (lp - lm) / (2 * h)
    return out


# ---- training ------------------------------------------------------------


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.02
    seed: int = 0
    gradient_mode: str = "analytic"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("batch_size and learning_rate must be positive")
        if self.gradient_mode not in ("analytic", "finite-difference"):
            raise ValueError(f"unknown gradient mode {self.gradient_mode!r}")


@dataclass
class TrainingResult:
    model: OnnModel
    loss_curve: list[float]


def train(model: OnnModel, data: Dataset, cfg: TrainingConfig = TrainingConfig()) -> TrainingResult:
    """Minibatch Adam on all phases of an ideal (noiseless, lossless) model."""
    if data.n_features != model.n_features:
        raise ValueError(f"dataset has {data.n_features} features, model expects {model.n_features}")
    x_all, y_all = data.encoded, data.one_hot
    if y_all.shape[1] < model.n_classes:
        y_all = np.pad(y_all, ((0, 0), (0, model.n_classes - y_all.shape[1])))
    rng = rng_stream(cfg.seed, 1)
    params = model.flat_params()
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    curve: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(data), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            cur = model.with_params(params)
            loss, grad = loss_and_grad(cur, x_all[idx], y_all[idx])
            if cfg.gradient_mode == "finite-difference":
                grad = numerical_grad(cur, x_all[idx], y_all[idx])
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}, batch starting {start} (loss={loss})"
                )
            step += 1
            m = b1 * m + (1 - b1) * grad
            v = b2 * v + (1 - b2) * grad**2
            mh = m / (1 - b1**step)
            vh = v / (1 - b2**step)
            params = params - cfg.learning_rate * mh / (np.sqrt(vh) + eps)
            total += loss * idx.size
        curve.append(total / max(len(data), 1))
    return TrainingResult(model.with_params(params) if cfg.epochs else model, curve)


# ---- evaluation ----------------------------------------------------------


def _noisy_powers(model: OnnModel, x, noise: NoiseConfig, trials: int, key=()) -> np.ndarray:
    """Output powers for ``trials`` passes over ``x``, shape (trials, B, c).

    Trial t draws one offset per sample and layer from the stream
    (noise.seed, *key, t); all trials run as one batch.
    """
    n = x.shape[0]
    if noise.is_zero:
        p = np.abs(_forward(model, x)) ** 2
        return np.broadcast_to(p, (trials, *p.shape))
    per_trial = []
    for t in range(trials):
        rng = rng_stream(noise.seed, *key, t)
        per_trial.append([draw_offsets(s.topology, noise, rng, batch=n) for s in model.layers])
    offsets = [
        PhaseOffsets(
            np.concatenate([tr[i].theta for tr in per_trial]),
            np.concatenate([tr[i].phi for tr in per_trial]),
            np.concatenate([tr[i].inputs for tr in per_trial]),
        )
        for i in range(len(model.layers))
    ]
    p = np.abs(_forward(model, np.tile(x, (trials, 1)), offsets)) ** 2
    return p.reshape(trials, n, -1)


def trial_accuracies(model: OnnModel, data: Dataset, noise: NoiseConfig = NoiseConfig(),
                     per_mzi_loss_db: float = 0.0, trials: int = 1, key=()) -> np.ndarray:
    """Accuracy of each trial with fresh phase noise for every sample and layer."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if data.n_features != model.n_features:
        raise ValueError(f"dataset has {data.n_features} features, model expects {model.n_features}")
    m = model.with_loss(per_mzi_loss_db) if per_mzi_loss_db else model
    p = _noisy_powers(m, data.encoded, noise, trials, key)
    return np.mean(np.argmax(p, axis=2) == data.labels[None, :], axis=1)


def evaluate_accuracy(model: OnnModel, data: Dataset, noise: NoiseConfig = NoiseConfig(),
                      per_mzi_loss_db: float = 0.0, trials: int = 1, key=()) -> float:
    """Mean accuracy over ``trials`` passes of the dataset."""
    return float(np.mean(trial_accuracies(model, data, noise, per_mzi_loss_db, trials, key)))


__all__ = [
    "Activation",
    "Dataset",
    "IdxFormatError",
    "OnnModel",
    "PcaReducer",
    "PhaseOffsets",
    "TrainingConfig",
    "TrainingDivergedError",
    "TrainingResult",
    "centroid_accuracy",
    "evaluate_accuracy",
    "forward",
    "gaussian_dataset",
    "loss_and_grad",
    "mnist_reduced",
    "numerical_grad",
    "predict",
    "read_idx",
    "train",
    "trial_accuracies",
    "write_idx",
]
