"""Dense ReLU network with a single logistic output unit.

The network maps a feature vector to the probability of class 1.  Everything
the counterfactual generators need is computed in closed form with numpy:
the forward pass, the gradient with respect to the input, and the parameter
gradients used for training.

Arrays of shape ``(n,)`` are treated as a single example and arrays of shape
``(N, n)`` as a batch; outputs follow the same convention.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from ._kernels import perturbed_statistics
from .errors import DataError, ShapeError, WeightFileError

logger = logging.getLogger(__name__)

WEIGHT_FILE_VERSION = 1
HIDDEN_ACTIVATION = "relu"
OUTPUT_ACTIVATION = "sigmoid"

# Keep probabilities strictly inside (0, 1) even when the logit saturates.
_P_MIN = np.finfo(np.float64).tiny
_P_MAX = np.nextafter(1.0, 0.0)


def probability(z):
    """Logistic of ``z``, clipped to stay strictly inside (0, 1)."""
    return np.clip(expit(z), _P_MIN, _P_MAX)


def _as_float_array(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MlpClassifier:
    """Feed-forward binary classifier ``f(x) = sigmoid(affine(relu(...affine(x))))``.

    ``weights[l]`` has shape ``(layer_dims[l], layer_dims[l + 1])`` and
    ``biases[l]`` has shape ``(layer_dims[l + 1],)``.  The last layer has a
    single output unit.  The predicted class is 1 iff ``f(x) > threshold``.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    threshold: float = 0.5
    layer_dims: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        weights = tuple(_as_float_array(w) for w in self.weights)
        biases = tuple(_as_float_array(b) for b in self.biases)
        if len(weights) < 2:
            raise ShapeError("an MlpClassifier needs at least one hidden layer")
        if len(weights) != len(biases):
            raise ShapeError(f"{len(weights)} weight matrices but {len(biases)} bias vectors")
        if weights[0].ndim != 2:
            raise ShapeError(f"weights[0] must be a matrix, got shape {weights[0].shape}")
        dims = [weights[0].shape[0]]
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2:
                raise ShapeError(f"weights[{i}] must be a matrix, got shape {w.shape}")
            if w.shape[0] != dims[-1]:
                raise ShapeError(f"weights[{i}] has {w.shape[0]} rows, expected {dims[-1]}")
            if b.shape != (w.shape[1],):
                raise ShapeError(f"biases[{i}] has shape {b.shape}, expected ({w.shape[1]},)")
            dims.append(w.shape[1])
        if dims[-1] != 1:
            raise ShapeError(f"output layer must have one unit, got {dims[-1]}")
        if not 0.0 <= float(self.threshold) <= 1.0:
            raise ShapeError(f"decision threshold must lie in [0, 1], got {self.threshold}")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "threshold", float(self.threshold))
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in dims))

    @classmethod
    def initialize(cls, layer_dims: Sequence[int], seed: int = 0, threshold: float = 0.5,
                   bias_scale: float = 0.0) -> "MlpClassifier":
        """He-normal weights; biases drawn with standard deviation ``bias_scale``."""
        if any(int(d) < 1 for d in layer_dims):
            raise ShapeError(f"layer dimensions must be positive, got {list(layer_dims)}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            biases.append(rng.normal(0.0, bias_scale, size=fan_out) if bias_scale else np.zeros(fan_out))
        return cls(tuple(weights), tuple(biases), threshold)

    @property
    def n_features(self) -> int:
        return self.layer_dims[0]

    def __eq__(self, other):
        if not isinstance(other, MlpClassifier):
            return NotImplemented
        return (self.layer_dims == other.layer_dims
                and self.threshold == other.threshold
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
                and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases)))

    __hash__ = None

    def _check(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        batch = x[None, :] if single else x
        if batch.ndim != 2 or batch.shape[1] != self.n_features:
            raise ShapeError(f"expected input of dimension {self.n_features}, got shape {x.shape}")
        return batch, single

    def _hidden(self, X: np.ndarray) -> list[np.ndarray]:
        acts = [X]
        h = X
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = h @ w
            h += b
            np.maximum(h, 0.0, out=h)
            acts.append(h)
        return acts

    def _logit_and_grad(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        acts = self._hidden(X)
        w_out = self.weights[-1][:, 0]
        z = acts[-1] @ w_out + self.biases[-1][0]
        g = (acts[-1] > 0.0) * w_out
        for w, a in zip(self.weights[-2:0:-1], acts[-2:0:-1]):
            g = g @ w.T
            g *= a > 0.0
        return z, g @ self.weights[0].T

    def logit(self, x) -> np.ndarray | float:
        """Pre-activation of the output unit."""
        X, single = self._check(x)
        z = self._hidden(X)[-1] @ self.weights[-1][:, 0] + self.biases[-1][0]
        return float(z[0]) if single else z

    def logit_and_gradient(self, x):
        """Logit and its gradient with respect to the input.

        The gradient is piecewise constant for a ReLU network, which the
        first-order robustness estimate relies on.
        """
        X, single = self._check(x)
        z, g = self._logit_and_grad(X)
        return (float(z[0]), g[0]) if single else (z, g)

    def forward(self, x):
        """Class-1 probability, strictly inside (0, 1)."""
        X, single = self._check(x)
        z = self._hidden(X)[-1] @ self.weights[-1][:, 0] + self.biases[-1][0]
        p = probability(z)
        return float(p[0]) if single else p

    __call__ = forward

    def predict_class(self, x):
        """1 where ``forward(x) > threshold`` (strict), else 0."""
        p = self.forward(x)
        if np.ndim(p) == 0:
            return int(p > self.threshold)
        return (p > self.threshold).astype(np.int64)

    def forward_and_input_gradient(self, x):
        X, single = self._check(x)
        z, g = self._logit_and_grad(X)
        p = probability(z)
        grad = (p * (1.0 - p))[:, None] * g
        return (float(p[0]), grad[0]) if single else (p, grad)

    def forward_with_mean_gradient(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Probabilities at ``points`` ``(A, K, n)`` and the mean input gradient per group.

        Returns ``(p, g)`` with ``p`` of shape ``(A, K)`` and ``g[a]`` the
        average of ``grad f`` over ``points[a]``.  The average is taken before
        the first-layer back-projection, which saves one matrix product per row.
        """
        A, K, n = points.shape
        if n != self.n_features:
            raise ShapeError(f"expected input of dimension {self.n_features}, got {n}")
        acts = self._hidden(points.reshape(A * K, n))
        w_out = self.weights[-1][:, 0]
        z = acts[-1] @ w_out + self.biases[-1][0]
        g = (acts[-1] > 0.0) * w_out
        for w, a in zip(self.weights[-2:0:-1], acts[-2:0:-1]):
            g = g @ w.T
            g *= a > 0.0
        p = expit(z)
        slope = (p * (1.0 - p)).reshape(A, 1, K)
        g = np.matmul(slope, g.reshape(A, K, -1))[:, 0, :] @ self.weights[0].T
        return p.reshape(A, K), g / K

    def perturbed_statistics(self, x, draws):
        """Statistics of ``f`` over perturbed copies of each row of ``x``.

        ``x`` is ``(A, n)`` and ``draws`` ``(A, K, n)``.  Returns the mean of
        ``f(x[a] + draws[a])``, the fraction of those copies classified 0 and
        the mean input gradient of ``f``.  Same numbers as
        :meth:`forward_with_mean_gradient` up to rounding, without the
        intermediate arrays.
        """
        x = np.ascontiguousarray(x, dtype=np.float64)
        draws = np.ascontiguousarray(draws, dtype=np.float64)
        if draws.ndim != 3 or x.shape != (draws.shape[0], self.n_features) or draws.shape[2] != self.n_features:
            raise ShapeError(f"expected points (A, {self.n_features}) and draws (A, K, {self.n_features}), "
                             f"got {x.shape} and {draws.shape}")
        return perturbed_statistics(x, draws, self.weights[:-1], self.biases[:-1],
                                    self.weights[-1][:, 0].copy(), float(self.biases[-1][0]), self.threshold)

    def input_gradient(self, x) -> np.ndarray:
        """Exact gradient of ``forward`` with respect to the input."""
        return self.forward_and_input_gradient(x)[1]

    def parameter_gradients(self, X, y) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
        """Mean binary cross-entropy over ``(X, y)`` and its parameter gradients."""
        X, _ = self._check(X)
        return _bce_gradients(self.weights, self.biases, X, np.asarray(y, dtype=np.float64).reshape(-1))

    def accuracy(self, X, y) -> float:
        y = np.asarray(y).reshape(-1)
        if len(y) == 0:
            return float("nan")
        return float(np.mean(self.predict_class(X) == y))


def _bce_gradients(weights, biases, X, y):
    acts = [X]
    for w, b in zip(weights[:-1], biases[:-1]):
        acts.append(np.maximum(acts[-1] @ w + b, 0.0))
    z = acts[-1] @ weights[-1][:, 0] + biases[-1][0]
    # logaddexp form avoids log(0) for saturated logits
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    delta = (expit(z) - y)[:, None] / len(y)
    grads_w = [None] * len(weights)
    grads_b = [None] * len(biases)
    for layer in range(len(weights) - 1, -1, -1):
        grads_w[layer] = acts[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer:
            delta = (delta @ weights[layer].T) * (acts[layer] > 0.0)
    return loss, grads_w, grads_b


@dataclass
class TrainReport:
    train_accuracy: float
    test_accuracy: float | None
    loss_history: list[float]


def train(X, y, hidden: Sequence[int] = (50, 50), learning_rate: float = 0.1, epochs: int = 100,
          batch_size: int = 32, seed: int = 0, threshold: float = 0.5,
          X_test=None, y_test=None) -> tuple[MlpClassifier, TrainReport]:
    """Fit an MlpClassifier by mini-batch gradient descent on binary cross-entropy.

    Features are expected in [0, 1].  The run is fully determined by ``seed``.
    Returns the model and a report with per-epoch training loss and the final
    train/test accuracy.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).reshape(-1)
    if X.ndim != 2 or len(X) == 0:
        raise DataError("cannot train on an empty dataset")
    if len(y) != len(X):
        raise DataError(f"{len(X)} feature rows but {len(y)} labels")
    if not np.isin(y, (0, 1)).all():
        raise DataError(f"labels must be binary 0/1, got values {np.unique(y)[:5].tolist()}")
    if learning_rate <= 0 or epochs < 0 or batch_size < 1:
        raise DataError("learning_rate must be > 0, epochs >= 0 and batch_size >= 1")

    yf = y.astype(np.float64)
    rng = np.random.default_rng(seed)
    model = MlpClassifier.initialize([X.shape[1], *hidden, 1], seed=int(rng.integers(2**32)),
                                     threshold=threshold)
    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), batch_size):
            batch = order[start:start + batch_size]
            _, gw, gb = _bce_gradients(weights, biases, X[batch], yf[batch])
            for w, g in zip(weights, gw):
                w -= learning_rate * g
            for b, g in zip(biases, gb):
                b -= learning_rate * g
        loss, _, _ = _bce_gradients(weights, biases, X, yf)
        history.append(loss)
        logger.debug("epoch %d loss %.6f", epoch, loss)

    model = MlpClassifier(weights, biases, threshold)
    test_acc = None
    if X_test is not None and len(X_test):
        test_acc = model.accuracy(X_test, y_test)
    report = TrainReport(model.accuracy(X, y), test_acc, history)
    logger.info("trained %s: train acc %.4f, test acc %s", model.layer_dims,
                report.train_accuracy, "n/a" if test_acc is None else f"{test_acc:.4f}")
    return model, report


def save_weights(model: MlpClassifier, path) -> None:
    doc = {
        "version": WEIGHT_FILE_VERSION,
        "layer_dims": list(model.layer_dims),
        "activations": {"hidden": HIDDEN_ACTIVATION, "output": OUTPUT_ACTIVATION},
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "threshold": model.threshold,
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def _field(doc: dict, name: str):
    if name not in doc:
        raise WeightFileError(f"weight file is missing field '{name}'")
    return doc[name]


def load_weights(path) -> MlpClassifier:
    """Read a weight file written by :func:`save_weights`, validating every field."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise WeightFileError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise WeightFileError(f"{path}: top level must be an object")
    version = _field(doc, "version")
    if version != WEIGHT_FILE_VERSION:
        raise WeightFileError(f"field 'version': unsupported value {version!r}")
    acts = _field(doc, "activations")
    if acts != {"hidden": HIDDEN_ACTIVATION, "output": OUTPUT_ACTIVATION}:
        raise WeightFileError(f"field 'activations': unsupported value {acts!r}")
    dims = _field(doc, "layer_dims")
    if not isinstance(dims, list) or len(dims) < 3 or not all(isinstance(d, int) and d > 0 for d in dims):
        raise WeightFileError(f"field 'layer_dims': expected >= 3 positive integers, got {dims!r}")
    raw_w, raw_b = _field(doc, "weights"), _field(doc, "biases")
    if not isinstance(raw_w, list) or len(raw_w) != len(dims) - 1:
        raise WeightFileError(f"field 'weights': expected {len(dims) - 1} matrices")
    if not isinstance(raw_b, list) or len(raw_b) != len(dims) - 1:
        raise WeightFileError(f"field 'biases': expected {len(dims) - 1} vectors")
    weights, biases = [], []
    for i, (w, b) in enumerate(zip(raw_w, raw_b)):
        try:
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise WeightFileError(f"field 'weights[{i}]' or 'biases[{i}]' is not numeric") from exc
        if w.shape != (dims[i], dims[i + 1]):
            raise WeightFileError(f"field 'weights[{i}]': shape {w.shape} does not match "
                                  f"layer_dims ({dims[i]}, {dims[i + 1]})")
        if b.shape != (dims[i + 1],):
            raise WeightFileError(f"field 'biases[{i}]': shape {b.shape} does not match "
                                  f"layer_dims ({dims[i + 1]},)")
        weights.append(w)
        biases.append(b)
    threshold = _field(doc, "threshold")
    if not isinstance(threshold, (int, float)) or not 0.0 <= threshold <= 1.0:
        raise WeightFileError(f"field 'threshold': expected a number in [0, 1], got {threshold!r}")
    return MlpClassifier(tuple(weights), tuple(biases), threshold)
