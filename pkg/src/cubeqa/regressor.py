"""Two-layer regression heads, score fusion and head training.

A head maps one face's quality vector to a scalar:
``W2 . relu(W1 v + b1) + b2``. A point cloud's score for one backbone role is
the mean of its six face scores, and the final score is the weighted sum of
the per-role means. Each role's head is trained on its own (the backbones are
trained separately), minimizing the MSE between its face-mean score and the
label with Adam.
"""

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointError,
    DimensionMismatch,
    EmptyDataset,
    LengthMismatch,
    ModeMismatch,
    ShapeMismatch,
    TooFewItems,
    WrongFaceCount,
)
from .features import QualityFeatureVector

ROLES = ("c", "s")
CKPT_MAGIC = b"PCQH"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIIII")
_MODES = {"FR": 0, "NR": 1}


@dataclass(eq=False)
class RegressionHead:
    W1: np.ndarray  # (h, L)
    b1: np.ndarray  # (h,)
    W2: np.ndarray  # (h,)
    b2: float
    mode: str = "FR"

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64).ravel()
        self.W2 = np.asarray(self.W2, dtype=np.float64).ravel()
        self.b2 = float(self.b2)
        h = self.W1.shape[0]
        if self.W1.ndim != 2 or self.b1.shape != (h,) or self.W2.shape != (h,):
            raise ShapeMismatch("inconsistent head parameter shapes")
        if self.mode not in _MODES:
            raise ValueError(f"mode must be FR or NR, got {self.mode!r}")
        if not all(np.isfinite(p).all() for p in self.params().values()):
            raise ValueError("head parameters must be finite")

    @property
    def input_dim(self):
        return self.W1.shape[1]

    @property
    def hidden(self):
        return self.W1.shape[0]

    def params(self):
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": np.array([self.b2])}

    @classmethod
    def from_params(cls, p, mode):
        return cls(p["W1"], p["b1"], p["W2"], float(np.asarray(p["b2"]).ravel()[0]), mode)

    def copy(self):
        return RegressionHead.from_params({k: v.copy() for k, v in self.params().items()}, self.mode)

    def __eq__(self, other):
        if not isinstance(other, RegressionHead):
            return NotImplemented
        return self.mode == other.mode and all(
            np.array_equal(a, b) for a, b in zip(self.params().values(), other.params().values())
        )

    def predict(self, X):
        """Scores for a stack of vectors, any leading shape (..., L)."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.input_dim:
            raise DimensionMismatch(f"head expects length {self.input_dim}, got {X.shape[-1]}")
        hidden = np.maximum(X @ self.W1.T + self.b1, 0.0)
        return hidden @ self.W2 + self.b2


@dataclass(frozen=True)
class FusionWeights:
    omega_c: float = 0.5
    omega_s: float = 0.5

    def __post_init__(self):
        if self.omega_c < 0 or self.omega_s < 0 or self.omega_c + self.omega_s <= 0:
            raise ValueError("fusion weights must be nonnegative with a positive sum")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 4e-5
    batch_size: int = 6
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 200
    seed: int = 0
    k_folds: int = 5
    hidden: int = 128

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")
        if self.epochs < 0 or self.hidden < 1:
            raise ValueError("epochs must be >= 0 and hidden >= 1")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))


def init_head(input_dim, cfg=TrainConfig(), role="c", mode="FR") -> RegressionHead:
    """Seeded Gaussian weights scaled by 1/sqrt(fan_in); zero biases."""
    rng = np.random.default_rng([cfg.seed, ROLES.index(role)])
    h = cfg.hidden
    W1 = rng.standard_normal((h, input_dim)) / np.sqrt(input_dim)
    W2 = rng.standard_normal(h) / np.sqrt(h)
    return RegressionHead(W1, np.zeros(h), W2, 0.0, mode)


def head_forward(head: RegressionHead, v) -> float:
    values = v.values if isinstance(v, QualityFeatureVector) else np.asarray(v, dtype=np.float64)
    if values.ndim != 1:
        raise DimensionMismatch("head_forward takes a single vector")
    if isinstance(v, QualityFeatureVector) and v.mode != head.mode:
        raise ModeMismatch(f"{v.mode} vector given to a {head.mode} head")
    return float(head.predict(values))


def fuse_projection_scores(scores_c, scores_s, w=FusionWeights()) -> float:
    sc = np.asarray(scores_c, dtype=np.float64).ravel()
    ss = np.asarray(scores_s, dtype=np.float64).ravel()
    if sc.size != 6 or ss.size != 6:
        raise WrongFaceCount(f"need 6 scores per role, got {sc.size} and {ss.size}")
    return w.omega_c * float(sc.mean()) + w.omega_s * float(ss.mean())


def mse_loss(pred, label) -> float:
    p = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(label, dtype=np.float64).ravel()
    if p.size != y.size:
        raise LengthMismatch(f"{p.size} predictions vs {y.size} labels")
    if p.size == 0:
        raise LengthMismatch("mse_loss needs at least one item")
    return float(np.mean((p - y) ** 2))


def loss_and_grads(head: RegressionHead, X, y):
    """MSE of the face-mean score and its gradient w.r.t. every head parameter.

    ``X`` is (n, faces, L), ``y`` is (n,).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, faces, L = X.shape
    if L != head.input_dim:
        raise DimensionMismatch(f"head expects length {head.input_dim}, got {L}")
    flat = X.reshape(n * faces, L)
    pre = flat @ head.W1.T + head.b1
    act = np.maximum(pre, 0.0)
    face_scores = act @ head.W2 + head.b2
    pred = face_scores.reshape(n, faces).mean(axis=1)
    resid = pred - y
    loss = float(np.mean(resid**2))

    d_face = np.repeat(2.0 * resid / n / faces, faces)
    g_W2 = act.T @ d_face
    g_b2 = d_face.sum()
    d_pre = np.outer(d_face, head.W2) * (pre > 0)
    g_W1 = d_pre.T @ flat
    g_b1 = d_pre.sum(axis=0)
    return loss, {"W1": g_W1, "b1": g_b1, "W2": g_W2, "b2": np.array([g_b2])}


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state: AdamState, cfg=TrainConfig()):
    """One bias-corrected Adam update. Returns new (params, state); inputs are untouched."""
    if params.keys() != grads.keys():
        raise ShapeMismatch("params and grads have different keys")
    b1, b2 = cfg.betas
    t = state.t + 1
    new_params, m_new, v_new = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != np.shape(p):
            raise ShapeMismatch(f"grad for {k} has shape {g.shape}, param {np.shape(p)}")
        m = state.m.get(k, np.zeros_like(g))
        v = state.v.get(k, np.zeros_like(g))
        if m.shape != g.shape or v.shape != g.shape:
            raise ShapeMismatch(f"optimizer state for {k} does not match its parameter")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_params[k] = p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        m_new[k], v_new[k] = m, v
    return new_params, AdamState(m_new, v_new, t)


def _dataset_arrays(dataset):
    """Stack ``[(features_by_role, label), ...]`` into per-role (n, 6, L) arrays."""
    if not dataset:
        raise EmptyDataset("training needs at least one item")
    modes = set()
    X = {r: [] for r in ROLES}
    y = []
    for feats, label in dataset:
        for r in ROLES:
            faces = feats[r]
            if len(faces) != 6:
                raise WrongFaceCount(f"item has {len(faces)} faces for role {r}")
            rows = []
            for q in faces:
                if isinstance(q, QualityFeatureVector):
                    modes.add(q.mode)
                    rows.append(q.values)
                else:
                    rows.append(np.asarray(q, dtype=np.float64))
            X[r].append(rows)
        y.append(float(label))
    if len(modes) > 1:
        raise ModeMismatch(f"dataset mixes modes {sorted(modes)}")
    try:
        arrays = {r: np.asarray(X[r], dtype=np.float64) for r in ROLES}
    except ValueError:
        raise ModeMismatch("quality vectors have inconsistent lengths") from None
    mode = modes.pop() if modes else None
    return arrays, np.asarray(y), mode


@dataclass(frozen=True)
class Standardizer:
    """Affine maps to unit-scale inputs and labels used while optimizing."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    @classmethod
    def fit(cls, X, y):
        flat = np.asarray(X, dtype=np.float64).reshape(-1, X.shape[-1])
        x_std = flat.std(axis=0)
        x_std[x_std < 1e-12] = 1.0
        y = np.asarray(y, dtype=np.float64)
        y_std = float(y.std())
        return cls(flat.mean(axis=0), x_std, float(y.mean()), y_std if y_std > 1e-12 else 1.0)

    def fold(self, params, mode):
        """Head on raw inputs/labels equivalent to ``params`` on standardized ones."""
        W1 = params["W1"] / self.x_std
        b1 = params["b1"] - W1 @ self.x_mean
        W2 = params["W2"] * self.y_std
        b2 = float(params["b2"][0]) * self.y_std + self.y_mean
        return RegressionHead(W1, b1, W2, b2, mode)


def initial_head(X, y, cfg=TrainConfig(), role="c", mode="FR") -> RegressionHead:
    """The head ``fit_head`` starts from, expressed on raw features and labels."""
    X = np.asarray(X, dtype=np.float64)
    return Standardizer.fit(X, y).fold(init_head(X.shape[2], cfg, role, mode).params(), mode)


def fit_head(X, y, cfg=TrainConfig(), role="c", mode="FR"):
    """Train one head on (n, 6, L) features. Returns (head, per-epoch training loss).

    Optimization runs on standardized inputs and labels (statistics taken over
    the training set); the affine maps are folded into the first and last
    layers afterwards, so the result is a plain head on raw features.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    std = Standardizer.fit(X, y)
    Z = (X - std.x_mean) / std.x_std
    t = (y - std.y_mean) / std.y_std
    params = init_head(X.shape[2], cfg, role, mode).params()
    state = AdamState()
    rng = np.random.default_rng([cfg.seed, ROLES.index(role), 1])
    n = len(y)
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, grads = loss_and_grads(RegressionHead.from_params(params, mode), Z[idx], t[idx])
            params, state = adam_step(params, grads, state, cfg)
        cur = std.fold(params, mode)
        history.append(mse_loss(cur.predict(X).mean(axis=1), y))
    return std.fold(params, mode), history


def train_heads(dataset, cfg=TrainConfig(), mode=None):
    """Train the c-role and s-role heads independently.

    ``dataset`` is a list of ``(features, label)`` where ``features`` maps each
    role to its six per-face quality vectors.
    """
    X, y, found = _dataset_arrays(dataset)
    if mode is not None and found is not None and mode != found:
        raise ModeMismatch(f"expected {mode} vectors, got {found}")
    mode = mode or found or "FR"
    head_c, _ = fit_head(X["c"], y, cfg, "c", mode)
    head_s, _ = fit_head(X["s"], y, cfg, "s", mode)
    return head_c, head_s


def predict_scores(heads, features, w=FusionWeights()):
    """Fused score for one item given per-role face features (6, L)."""
    head_c, head_s = heads
    sc = head_c.predict(np.asarray(features["c"], dtype=np.float64))
    ss = head_s.predict(np.asarray(features["s"], dtype=np.float64))
    return fuse_projection_scores(sc, ss, w)


def kfold_split(ids, k, seed=0):
    """Seeded shuffle, then contiguous folds whose sizes differ by at most one.

    ``ids`` are content ids; duplicates are collapsed so every distorted version
    of one source lands in the same fold. Returns ``[(train, val), ...]``.
    """
    unique = list(dict.fromkeys(ids))
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(unique) < k:
        raise TooFewItems(f"{len(unique)} ids cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(unique))
    shuffled = [unique[i] for i in order]
    base, extra = divmod(len(unique), k)
    folds, start = [], 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        folds.append(shuffled[start : start + size])
        start += size
    return [
        ([i for j, fold in enumerate(folds) if j != f for i in fold], folds[f])
        for f in range(k)
    ]


def save_head(head: RegressionHead, path) -> None:
    h, L = head.W1.shape
    parts = [
        _CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, _MODES[head.mode], L, h),
        head.W1.astype("<f8").tobytes(),
        head.b1.astype("<f8").tobytes(),
        head.W2.astype("<f8").tobytes(),
        np.array([head.b2], dtype="<f8").tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


def load_head(path) -> RegressionHead:
    data = Path(path).read_bytes()
    if len(data) < _CKPT_HEADER.size:
        raise CheckpointError(f"{path}: too short")
    magic, version, mode, L, h = _CKPT_HEADER.unpack_from(data)
    if magic != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    modes = {v: k for k, v in _MODES.items()}
    if mode not in modes:
        raise CheckpointError(f"{path}: unknown mode code {mode}")
    n = h * L + h + h + 1
    if len(data) - _CKPT_HEADER.size != 8 * n:
        raise CheckpointError(f"{path}: payload size does not match L={L}, h={h}")
    vals = np.frombuffer(data, dtype="<f8", offset=_CKPT_HEADER.size).astype(np.float64)
    W1 = vals[: h * L].reshape(h, L)
    b1 = vals[h * L : h * L + h]
    W2 = vals[h * L + h : h * L + 2 * h]
    return RegressionHead(W1, b1, W2, vals[-1], modes[mode])


def save_checkpoint(heads, out_dir, sidecar: dict) -> Path:
    """Write ``head_c.ckpt``, ``head_s.ckpt`` and the ``heads.json`` sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for role, head in zip(ROLES, heads):
        save_head(head, out / f"head_{role}.ckpt")
    (out / "heads.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return out


def load_checkpoint(ckpt_dir):
    """Returns ((head_c, head_s), sidecar dict)."""
    d = Path(ckpt_dir)
    try:
        heads = tuple(load_head(d / f"head_{r}.ckpt") for r in ROLES)
        sidecar = json.loads((d / "heads.json").read_text())
    except FileNotFoundError as e:
        raise CheckpointError(f"incomplete checkpoint directory: {e}") from None
    if heads[0].mode != heads[1].mode:
        raise CheckpointError("c and s heads were trained in different modes")
    return heads, sidecar


def train_config_dict(cfg: TrainConfig):
    d = asdict(cfg)
    d["betas"] = list(cfg.betas)
    return d
