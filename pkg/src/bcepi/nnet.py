"""Dense ReLU network with a sigmoid output, trained by backprop and Adam.

All arithmetic is float64. Affine layers accumulate one input column at a
time with elementwise ops, so a row's output never depends on the batch it
was computed in (no BLAS reduction order to worry about).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import FEATURE_NAMES, N_FEATURES, Standardizer, fit_standardizer
from .errors import ConfigError, ModelSchemaMismatch
from .seeding import DROPOUT, INIT, SHUFFLE, rng_for

MODEL_SCHEMA = "bcepi-model"
MODEL_VERSION = 1


@dataclass
class NetworkParams:
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]  # layer l: (dims[l+1], dims[l])
    biases: list[np.ndarray]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        self.layer_dims = dims
        if len(dims) < 2 or any(d < 1 for d in dims) or dims[-1] != 1:
            raise ValueError(f"invalid layer dims {dims}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("need one weight matrix and bias vector per layer")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (dims[l + 1], dims[l]) or b.shape != (dims[l + 1],):
                raise ValueError(f"layer {l}: shapes {W.shape}, {b.shape} inconsistent with dims {dims}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list[np.ndarray]:
        """Weights and biases interleaved: W0, b0, W1, b1, ..."""
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.layer_dims, [W.copy() for W in self.weights],
                             [b.copy() for b in self.biases])


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "AdamState":
        return cls([np.zeros_like(a) for a in params.arrays()],
                   [np.zeros_like(a) for a in params.arrays()])


@dataclass
class TrainConfig:
    hidden_dims: tuple[int, ...] = (64, 32)
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_adam: float = 1e-8
    dropout_rate: float = 0.3
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    class_weight_positive: float = 1.0
    bce_clamp: float = 1e-7

    def validate(self) -> None:
        if not self.hidden_dims or any(int(h) < 1 for h in self.hidden_dims):
            raise ConfigError(f"hidden_dims must be positive integers, got {self.hidden_dims}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        for name in ("beta1", "beta2"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if not self.epsilon_adam > 0:
            raise ConfigError("epsilon_adam must be > 0")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        for name in ("batch_size", "max_epochs", "patience"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        if not self.class_weight_positive > 0:
            raise ConfigError("class_weight_positive must be > 0")
        if not 0 < self.bce_clamp < 0.5:
            raise ConfigError("bce_clamp must lie in (0, 0.5)")


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    restored_best: bool = False


@dataclass
class Cache:
    inputs: list[np.ndarray]   # activation fed into each layer (after dropout)
    pre: list[np.ndarray]      # pre-activation of each layer
    masks: list[Optional[np.ndarray]]  # scaled keep-masks per hidden layer
    output: np.ndarray


def init_params(hidden_dims: Sequence[int], seed: int, n_inputs: int = N_FEATURES) -> NetworkParams:
    """He-normal weights (std sqrt(2/fan_in)) and zero biases."""
    dims = (n_inputs, *(int(h) for h in hidden_dims), 1)
    rng = rng_for(seed, INIT)
    weights = [rng.standard_normal((dims[l + 1], dims[l])) * math.sqrt(2.0 / dims[l])
               for l in range(len(dims) - 1)]
    biases = [np.zeros(dims[l + 1]) for l in range(len(dims) - 1)]
    return NetworkParams(dims, weights, biases)


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _affine(A: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    Z = np.tile(b, (A.shape[0], 1))
    for j in range(W.shape[1]):
        Z += np.multiply.outer(A[:, j], W[:, j])
    return Z


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: 0 for dropped units, 1/(1-rate) for survivors."""
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def forward(params: NetworkParams, X: np.ndarray, dropout_rate: float = 0.0,
            rng: Optional[np.random.Generator] = None,
            masks: Optional[Sequence[Optional[np.ndarray]]] = None) -> tuple[np.ndarray, Cache]:
    """Run the network on a batch ``X`` of shape (n, fan_in).

    Eval mode is the default. Train mode is selected by passing ``rng`` (masks
    are drawn from it at ``dropout_rate``) or explicit ``masks`` to replay.
    Returns probabilities of shape (n,) and the cache for :func:`backward`.
    """
    A = np.atleast_2d(np.asarray(X, dtype=np.float64))
    inputs, pre, used = [], [], []
    last = params.n_layers - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(A)
        Z = _affine(A, W, b)
        pre.append(Z)
        if l == last:
            break
        A = relu(Z)
        if masks is not None:
            mask = masks[l]
        elif rng is not None and dropout_rate > 0:
            mask = dropout_mask(A.shape, dropout_rate, rng)
        else:
            mask = None
        if mask is not None:
            A = A * mask
        used.append(mask)
    p = sigmoid(pre[-1][:, 0])
    return p, Cache(inputs, pre, used, p)


def bce_loss(p, y, clamp: float = 1e-7, pos_weight: float = 1.0) -> float:
    """Mean of -[w*y*log(p) + (1-y)*log(1-p)] with p clipped to [clamp, 1-clamp]."""
    p = np.clip(np.asarray(p, dtype=np.float64), clamp, 1.0 - clamp)
    y = np.asarray(y, dtype=np.float64)
    terms = pos_weight * y * np.log(p) + (1.0 - y) * np.log1p(-p)
    return float(-terms.mean())


def backward(params: NetworkParams, cache: Cache, y, clamp: float = 1e-7,
             pos_weight: float = 1.0) -> Gradients:
    """Exact gradient of :func:`bce_loss` for the batch held in ``cache``."""
    y = np.asarray(y, dtype=np.float64)
    p = cache.output
    n = len(p)
    inside = (p >= clamp) & (p <= 1.0 - clamp)
    dZ = np.where(inside, (1.0 - y) * p - pos_weight * y * (1.0 - p), 0.0)[:, None] / n
    dW = [None] * params.n_layers
    db = [None] * params.n_layers
    for l in range(params.n_layers - 1, -1, -1):
        dW[l] = dZ.T @ cache.inputs[l]
        db[l] = dZ.sum(axis=0)
        if l == 0:
            break
        dA = dZ @ params.weights[l]
        mask = cache.masks[l - 1]
        if mask is not None:
            dA = dA * mask
        dZ = dA * (cache.pre[l - 1] > 0)
    return Gradients(dW, db)


def adam_step(params: NetworkParams, grads: Gradients, state: AdamState,
              learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam update, applied in place."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for theta, g, m, v in zip(params.arrays(), grads.arrays(), state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        theta -= learning_rate * (m / c1) / (np.sqrt(v / c2) + epsilon)
    return params, state


def grad_check(params: NetworkParams, X, y, step: float = 1e-5,
               masks: Optional[Sequence[Optional[np.ndarray]]] = None,
               clamp: float = 1e-7, pos_weight: float = 1.0) -> float:
    """Max relative error between backprop and central finite differences.

    Relative error per parameter is |a - n| / max(|a| + |n|, 1e-12). Pass
    ``masks`` to check train mode with fixed dropout masks.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))

    def loss():
        return bce_loss(forward(params, X, masks=masks)[0], y, clamp, pos_weight)

    _, cache = forward(params, X, masks=masks)
    analytic = backward(params, cache, y, clamp, pos_weight).arrays()
    worst = 0.0
    for theta, g in zip(params.arrays(), analytic):
        flat, gflat = theta.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = loss()
            flat[k] = orig - step
            down = loss()
            flat[k] = orig
            numeric = (up - down) / (2.0 * step)
            err = abs(gflat[k] - numeric) / max(abs(gflat[k]) + abs(numeric), 1e-12)
            worst = max(worst, err)
    return worst


class EarlyStopping:
    """Track validation loss; signal a stop after ``patience`` epochs without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience

    @property
    def improved_last(self) -> bool:
        return self.wait == 0


def train(X_train, y_train, X_val, y_val, config: TrainConfig = TrainConfig()
          ) -> tuple[NetworkParams, Standardizer, TrainReport]:
    """Mini-batch Adam training with dropout, early stopping and best-weight restore.

    The standardizer is fit on ``X_train`` only. Epoch shuffles, dropout masks
    and weight init each draw from their own stream derived from ``config.seed``.
    """
    config.validate()
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64)
    X_val = np.asarray(X_val, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.float64)
    if len(X_train) == 0 or len(X_val) == 0:
        raise ConfigError("training and validation sets must be non-empty")
    std = fit_standardizer(X_train)
    Xt, Xv = std.transform(X_train), std.transform(X_val)

    params = init_params(config.hidden_dims, config.seed, Xt.shape[1])
    state = AdamState.zeros_like(params)
    shuffle_rng = rng_for(config.seed, SHUFFLE)
    dropout_rng = rng_for(config.seed, DROPOUT)
    stopper = EarlyStopping(config.patience)
    report = TrainReport()
    best = params.copy()
    n = len(Xt)
    bs = int(config.batch_size)
    w = config.class_weight_positive
    clamp = config.bce_clamp

    for epoch in range(1, int(config.max_epochs) + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            p, cache = forward(params, Xt[idx], config.dropout_rate, dropout_rng)
            total += bce_loss(p, y_train[idx], clamp, w) * len(idx)
            grads = backward(params, cache, y_train[idx], clamp, w)
            adam_step(params, grads, state, config.learning_rate, config.beta1,
                      config.beta2, config.epsilon_adam)
        report.train_loss.append(total / n)
        val = bce_loss(forward(params, Xv)[0], y_val, clamp, w)
        report.val_loss.append(val)
        stop = stopper.update(epoch, val)
        if stopper.improved_last:
            best = params.copy()
        report.stopped_epoch = epoch
        if stop:
            break

    report.best_epoch = stopper.best_epoch
    report.restored_best = report.best_epoch != report.stopped_epoch
    return best, std, report


def predict_proba(params: NetworkParams, standardizer: Standardizer, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return forward(params, standardizer.transform(X))[0]


def predict_label(params: NetworkParams, standardizer: Standardizer, X,
                  threshold: float = 0.5) -> np.ndarray:
    """1 where probability >= threshold (ties go to the positive class)."""
    return (predict_proba(params, standardizer, X) >= threshold).astype(np.int64)


@dataclass
class Model:
    params: NetworkParams
    standardizer: Standardizer
    threshold: float = 0.5
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def predict_proba(self, X) -> np.ndarray:
        return predict_proba(self.params, self.standardizer, X)

    def predict_label(self, X, threshold: Optional[float] = None) -> np.ndarray:
        t = self.threshold if threshold is None else threshold
        return predict_label(self.params, self.standardizer, X, t)

    def to_json(self) -> str:
        hx = float.hex
        doc = {
            "schema": MODEL_SCHEMA,
            "version": MODEL_VERSION,
            "feature_order": list(self.feature_names),
            "layer_dims": list(self.params.layer_dims),
            "threshold": hx(float(self.threshold)),
            "standardizer": {
                "means": [hx(float(v)) for v in self.standardizer.means],
                "stddevs": [hx(float(v)) for v in self.standardizer.stddevs],
                "constant": [bool(c) for c in self.standardizer.constant],
            },
            "layers": [{"weights": [[hx(float(v)) for v in row] for row in W],
                        "biases": [hx(float(v)) for v in b]}
                       for W, b in zip(self.params.weights, self.params.biases)],
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "Model":
        try:
            doc = json.loads(text)
            if doc.get("schema") != MODEL_SCHEMA or doc.get("version") != MODEL_VERSION:
                raise ModelSchemaMismatch(
                    f"expected {MODEL_SCHEMA} v{MODEL_VERSION}, got {doc.get('schema')} v{doc.get('version')}")
            if tuple(doc["feature_order"]) != FEATURE_NAMES:
                raise ModelSchemaMismatch(f"feature order {doc['feature_order']} differs from {list(FEATURE_NAMES)}")
            fh = float.fromhex
            weights = [np.array([[fh(v) for v in row] for row in layer["weights"]], dtype=np.float64)
                       for layer in doc["layers"]]
            biases = [np.array([fh(v) for v in layer["biases"]], dtype=np.float64)
                      for layer in doc["layers"]]
            dims = tuple(doc["layer_dims"])
            if dims[0] != N_FEATURES:
                raise ModelSchemaMismatch(f"model expects {dims[0]} inputs, not {N_FEATURES}")
            weights = [W.reshape(dims[l + 1], dims[l]) for l, W in enumerate(weights)]
            params = NetworkParams(dims, weights, biases)
            s = doc["standardizer"]
            std = Standardizer(np.array([fh(v) for v in s["means"]]),
                               np.array([fh(v) for v in s["stddevs"]]),
                               tuple(bool(c) for c in s["constant"]))
            if std.means.shape != (N_FEATURES,) or std.stddevs.shape != (N_FEATURES,):
                raise ModelSchemaMismatch("standardizer has the wrong number of features")
            return cls(params, std, fh(doc["threshold"]))
        except ModelSchemaMismatch:
            raise
        except (ValueError, KeyError, TypeError, AttributeError, IndexError) as exc:
            raise ModelSchemaMismatch(f"malformed model file: {exc}") from exc

    @classmethod
    def load(cls, path) -> "Model":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except (OSError, UnicodeDecodeError) as exc:
            raise ModelSchemaMismatch(f"cannot read model file {path}: {exc}") from exc
        return cls.from_json(text)


def write_loss_csv(path, report: TrainReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, (tr, va) in enumerate(zip(report.train_loss, report.val_loss), start=1):
            w.writerow([epoch, repr(tr), repr(va)])


def config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["hidden_dims"] = list(d["hidden_dims"])
    return d
