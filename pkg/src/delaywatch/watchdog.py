"""Process-tracking regressor: a small fully connected MLP trained to
predict the slack shift between the design-time timing table and the mean
clock-sweep measurement.

The network is implemented directly on numpy (forward pass, backprop,
mini-batch gradient descent with early stopping). Features are standardized
by training-split statistics; constant features are dropped and re-inserted
as zeros at predict time. Labels are standardized internally as well so the
learning rate is insensitive to the drift magnitude; predictions come back
in picoseconds.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .cfst import CfstConfig, quantize_delays
from .errors import (
    DegenerateData,
    DimensionMismatch,
    InsufficientPaths,
)
from .features import N_FEATURES, feature_matrix
from .netlist import Design, DesignIndex
from .silicon import FabLot, LotSimulator

_TRAIN_TAG = 0x3A17  # seed-space tag for training rngs

MODEL_SCHEMA_VERSION = "1"

ACTIVATIONS = ("tanh", "sigmoid", "relu", "prelu")


@dataclass(frozen=True)
class Dataset:
    """Labeled rows: one 48-entry feature vector and one slack-shift label
    (ps) per path."""

    path_ids: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[1] != N_FEATURES:
            raise ValueError(f"feature matrix must be (n, {N_FEATURES})")
        if len(self.path_ids) != self.X.shape[0] or self.y.shape != (self.X.shape[0],):
            raise ValueError("row count mismatch between ids, X and y")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset contains non-finite values")

    def __len__(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.02
    epochs: int = 200
    batch_size: int = 64
    splits: tuple[float, float, float] = (0.6, 0.2, 0.2)
    patience: int = 20
    seed: int = 0
    hidden: tuple[int, ...] = (32, 28)
    activation: str = "relu"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("learning_rate, epochs and batch_size must be positive")
        if abs(sum(self.splits) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if not 1 <= len(self.hidden) <= 3:
            raise ValueError("1 to 3 hidden layers supported")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")


@dataclass(frozen=True)
class WatchdogStats:
    """Residual statistics on held-out data (ps)."""

    mu_ps: float
    sigma_nn_ps: float


# ---------------------------------------------------------------------------
# network core


@dataclass
class MlpParams:
    weights: list  # per layer, shape (fan_in, fan_out)
    biases: list   # per layer, shape (fan_out,)
    slopes: list   # one scalar per hidden layer (prelu only)
    activation: str


def init_params(layer_sizes, activation: str, rng: np.random.Generator) -> MlpParams:
    weights, biases = [], []
    for fi, fo in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fi + fo))
        weights.append(rng.uniform(-bound, bound, size=(fi, fo)))
        biases.append(np.zeros(fo))
    slopes = [0.25] * (len(layer_sizes) - 2)
    return MlpParams(weights, biases, slopes, activation)


def _act(name: str, z: np.ndarray, slope: float):
    if name == "tanh":
        a = np.tanh(z)
        return a, 1.0 - a * a
    if name == "sigmoid":
        a = 1.0 / (1.0 + np.exp(-z))
        return a, a * (1.0 - a)
    if name == "relu":
        a = np.maximum(z, 0.0)
        return a, (z > 0).astype(float)
    if name == "prelu":
        a = np.where(z > 0, z, slope * z)
        return a, np.where(z > 0, 1.0, slope)
    raise ValueError(f"unknown activation {name}")


def forward(params: MlpParams, X: np.ndarray) -> np.ndarray:
    a = X
    n_hidden = len(params.weights) - 1
    for li in range(n_hidden):
        z = a @ params.weights[li] + params.biases[li]
        a, _ = _act(params.activation, z, params.slopes[li])
    return (a @ params.weights[-1] + params.biases[-1]).ravel()


def loss_and_gradients(params: MlpParams, X: np.ndarray, y: np.ndarray):
    """Mean-squared-error loss and its exact gradients (backprop)."""
    n_hidden = len(params.weights) - 1
    acts = [X]
    primes = []
    zs_neg = []  # negative-part pre-activations, for the prelu slope grad
    a = X
    for li in range(n_hidden):
        z = a @ params.weights[li] + params.biases[li]
        a, dp = _act(params.activation, z, params.slopes[li])
        acts.append(a)
        primes.append(dp)
        zs_neg.append(np.minimum(z, 0.0))
    pred = (a @ params.weights[-1] + params.biases[-1]).ravel()

    n = X.shape[0]
    resid = pred - y
    loss = float(np.mean(resid ** 2))

    gw = [None] * len(params.weights)
    gb = [None] * len(params.biases)
    gs = [0.0] * len(params.slopes)

    delta = (2.0 / n) * resid[:, None]          # dL/d pred
    gw[-1] = acts[-1].T @ delta
    gb[-1] = delta.sum(axis=0)
    upstream = delta @ params.weights[-1].T
    for li in range(n_hidden - 1, -1, -1):
        if params.activation == "prelu":
            gs[li] = float(np.sum(upstream * zs_neg[li]))
        d = upstream * primes[li]
        gw[li] = acts[li].T @ d
        gb[li] = d.sum(axis=0)
        if li > 0:
            upstream = d @ params.weights[li].T
    return loss, gw, gb, gs


# ---------------------------------------------------------------------------
# trained model


@dataclass(frozen=True)
class MlpModel:
    """Trained regressor plus the preprocessing baked in at fit time."""

    layer_sizes: tuple[int, ...]
    weights: tuple
    biases: tuple
    activation: str
    prelu_slopes: tuple
    keep_mask: np.ndarray      # which of the 48 features survived
    feature_mean: np.ndarray   # over kept features
    feature_std: np.ndarray
    label_mean: float
    label_std: float
    sigma_nn_ps: float = float("nan")

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != N_FEATURES:
            raise DimensionMismatch(
                f"expected (n, {N_FEATURES}) features, got {X.shape}")
        Xk = (X[:, self.keep_mask] - self.feature_mean) / self.feature_std
        params = MlpParams(list(self.weights), list(self.biases),
                           list(self.prelu_slopes), self.activation)
        return self.label_mean + self.label_std * forward(params, Xk)

    def predict(self, features) -> float:
        vec = np.asarray(features, dtype=float)
        if vec.shape != (N_FEATURES,):
            raise DimensionMismatch(
                f"expected a {N_FEATURES}-entry feature vector, got {vec.shape}")
        return float(self.predict_matrix(vec[None, :])[0])


def predict(model: MlpModel, features) -> float:
    return model.predict(features)


def split_indices(n: int, splits, rng: np.random.Generator):
    perm = rng.permutation(n)
    n_train = int(round(splits[0] * n))
    n_val = int(round(splits[1] * n))
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def train(dataset: Dataset, cfg: TrainConfig,
          extra_train_rows: tuple[np.ndarray, np.ndarray] | None = None,
          diagnostics: dict | None = None) -> tuple[MlpModel, WatchdogStats]:
    """Fit the watchdog; report residual stats on the held-out test split.

    `extra_train_rows` are appended to the training split only (used for
    contamination studies); validation and test stay untouched.
    """
    n = len(dataset)
    rng = np.random.default_rng(np.random.SeedSequence((_TRAIN_TAG, cfg.seed)))
    tr, va, te = split_indices(n, cfg.splits, rng)
    if min(len(tr), len(va), len(te)) < 10:
        raise ValueError("need at least 10 rows in each split")

    X_tr, y_tr = dataset.X[tr], dataset.y[tr]
    if extra_train_rows is not None:
        Xe, ye = extra_train_rows
        X_tr = np.vstack([X_tr, Xe])
        y_tr = np.concatenate([y_tr, ye])

    std = X_tr.std(axis=0)
    keep = std > 1e-12
    if not np.any(keep):
        raise DegenerateData("every feature is constant on the training split")
    mean = X_tr[:, keep].mean(axis=0)
    scale = X_tr[:, keep].std(axis=0)

    y_mean = float(y_tr.mean())
    y_std = float(y_tr.std())
    if y_std < 1e-12:
        y_std = 1.0

    def prep(X):
        return (X[:, keep] - mean) / scale

    Xt, yt = prep(X_tr), (y_tr - y_mean) / y_std
    Xv, yv = prep(dataset.X[va]), (dataset.y[va] - y_mean) / y_std

    layer_sizes = (int(keep.sum()),) + tuple(cfg.hidden) + (1,)
    params = init_params(layer_sizes, cfg.activation, rng)

    def val_mse():
        r = forward(params, Xv) - yv
        return float(np.mean(r ** 2))

    best = (np.inf, None)
    stall = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(yt))
        for start in range(0, len(yt), cfg.batch_size):
            sel = order[start:start + cfg.batch_size]
            _, gw, gb, gs = loss_and_gradients(params, Xt[sel], yt[sel])
            for li in range(len(params.weights)):
                params.weights[li] -= cfg.learning_rate * gw[li]
                params.biases[li] -= cfg.learning_rate * gb[li]
            if params.activation == "prelu":
                for li in range(len(params.slopes)):
                    params.slopes[li] -= cfg.learning_rate * gs[li]
        if diagnostics is not None:
            diagnostics.setdefault("train_loss", []).append(
                loss_and_gradients(params, Xt, yt)[0])
        vm = val_mse()
        if vm < best[0] - 1e-12:
            best = (vm, ([w.copy() for w in params.weights],
                         [b.copy() for b in params.biases],
                         list(params.slopes)))
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break
    if best[1] is not None:
        params.weights, params.biases, params.slopes = best[1]

    model = MlpModel(
        layer_sizes=layer_sizes,
        weights=tuple(w.copy() for w in params.weights),
        biases=tuple(b.copy() for b in params.biases),
        activation=cfg.activation,
        prelu_slopes=tuple(params.slopes),
        keep_mask=keep.copy(),
        feature_mean=mean.copy(),
        feature_std=scale.copy(),
        label_mean=y_mean,
        label_std=y_std,
    )

    resid_te = dataset.y[te] - model.predict_matrix(dataset.X[te])
    stats = WatchdogStats(mu_ps=float(resid_te.mean()),
                          sigma_nn_ps=float(resid_te.std(ddof=1)))
    if diagnostics is not None:
        resid_va = dataset.y[va] - model.predict_matrix(dataset.X[va])
        diagnostics["sigma_val_ps"] = float(resid_va.std(ddof=1))
        diagnostics["raw_sigma_test_ps"] = float(dataset.y[te].std(ddof=1))
        diagnostics["best_val_mse"] = best[0]
        diagnostics["n_split"] = (len(tr), len(va), len(te))
        diagnostics["test_indices"] = te
    model = replace(model, sigma_nn_ps=stats.sigma_nn_ps)
    return model, stats


# ---------------------------------------------------------------------------
# dataset construction


def select_training_paths(design: Design, m_per_endpoint: int,
                          index: DesignIndex | None = None,
                          exclude: set[str] | None = None) -> list:
    """Up to m paths per register endpoint, longest data portion first."""
    if m_per_endpoint < 1:
        raise ValueError("m_per_endpoint must be >= 1")
    index = index or DesignIndex(design)
    exclude = exclude or set()
    by_endpoint: dict[str, list] = {}
    for p in design.paths:
        if p.id in exclude:
            continue
        by_endpoint.setdefault(p.endpoint_register, []).append(p)
    chosen = []
    for ep in sorted(by_endpoint):
        ranked = sorted(by_endpoint[ep],
                        key=lambda p: (-index.subpath_nominal_delay(p.dp), p.id))
        chosen.extend(ranked[:m_per_endpoint])
    if not chosen:
        raise InsufficientPaths("design has no register-to-register paths")
    return sorted(chosen, key=lambda p: p.id)


def build_training_set(design: Design, gtm: dict, lot: FabLot, m_per_endpoint: int,
                       cfst_cfg: CfstConfig, index: DesignIndex | None = None,
                       exclude: set[str] | None = None,
                       mean_slack_by_path: dict[str, float] | None = None) -> Dataset:
    """One labeled row per selected path.

    Features come from design-time data only; the label is the mean measured
    slack across the lot's dies minus the path's timing-table slack. When a
    precomputed per-path mean slack map is supplied (for example per speed
    bin) it is used directly instead of measuring the whole lot.
    """
    index = index or DesignIndex(design)
    paths = select_training_paths(design, m_per_endpoint, index, exclude)

    if mean_slack_by_path is None:
        sim = LotSimulator(lot, index)
        rows = np.array([index.path_idx[p.id] for p in paths])
        true = sim.lot_true_delays(trial=0)[rows, :] + index.endpoint_setup[rows][:, None]
        _, slack, fail = quantize_delays(true, cfst_cfg)
        mu = np.nanmean(np.where(fail, np.nan, slack), axis=1)
        mean_slack_by_path = {p.id: float(m) for p, m in zip(paths, mu)}

    keep = [p for p in paths if np.isfinite(mean_slack_by_path.get(p.id, np.nan))]
    if not keep:
        raise InsufficientPaths("no measurable paths for the training set")
    X = feature_matrix(design, keep, index)
    y = np.array([mean_slack_by_path[p.id] - gtm[p.id].slack for p in keep])
    return Dataset(tuple(p.id for p in keep), X, y)


# ---------------------------------------------------------------------------
# architecture sweep


@dataclass(frozen=True)
class ArchSearchSpace:
    hidden_layer_counts: tuple[int, ...] = (1, 2, 3)
    widths: tuple[int, ...] = tuple(range(25, 33))  # ceil(49/2) .. floor(2*49/3)
    activations: tuple[str, ...] = ("tanh", "sigmoid", "relu", "prelu")

    def candidates(self):
        for n_layers in self.hidden_layer_counts:
            for w in self.widths:
                for act in self.activations:
                    yield (w,) * n_layers, act


def arch_search(space: ArchSearchSpace, dataset: Dataset, cfg: TrainConfig):
    """Exhaustive sweep over the topology grid; lowest validation MSE wins.

    Ties break toward the lexicographically smallest (depth, widths,
    activation). Returns (best TrainConfig, best stats, log rows); the log
    carries one row per candidate.
    """
    log = []
    best_key = None
    best_cfg = None
    best_stats = None
    for hidden, act in space.candidates():
        cand = replace(cfg, hidden=hidden, activation=act)
        diag: dict = {}
        _, stats = train(dataset, cand, diagnostics=diag)
        row = {
            "n_hidden_layers": len(hidden),
            "widths": "x".join(str(w) for w in hidden),
            "activation": act,
            "val_mse": diag["best_val_mse"],
            "sigma_nn_ps": stats.sigma_nn_ps,
        }
        log.append(row)
        key = (diag["best_val_mse"], len(hidden), hidden, act)
        if best_key is None or key < best_key:
            best_key, best_cfg, best_stats = key, cand, stats
    return best_cfg, best_stats, log


# ---------------------------------------------------------------------------
# serialization


def model_to_json(model: MlpModel) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "layer_sizes": list(model.layer_sizes),
        "weights": [w.tolist() for w in model.weights],  # row-major (fan_in rows)
        "biases": [b.tolist() for b in model.biases],
        "activation": model.activation,
        "prelu_slopes": list(model.prelu_slopes),
        "keep_mask": [bool(v) for v in model.keep_mask],
        "feature_mean": model.feature_mean.tolist(),
        "feature_std": model.feature_std.tolist(),
        "label_mean": model.label_mean,
        "label_std": model.label_std,
        "sigma_nn_ps": model.sigma_nn_ps,
    }


def model_from_json(doc: dict) -> MlpModel:
    if doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema {doc.get('schema_version')!r}")
    return MlpModel(
        layer_sizes=tuple(doc["layer_sizes"]),
        weights=tuple(np.array(w) for w in doc["weights"]),
        biases=tuple(np.array(b) for b in doc["biases"]),
        activation=doc["activation"],
        prelu_slopes=tuple(doc["prelu_slopes"]),
        keep_mask=np.array(doc["keep_mask"], dtype=bool),
        feature_mean=np.array(doc["feature_mean"]),
        feature_std=np.array(doc["feature_std"]),
        label_mean=doc["label_mean"],
        label_std=doc["label_std"],
        sigma_nn_ps=doc["sigma_nn_ps"],
    )
