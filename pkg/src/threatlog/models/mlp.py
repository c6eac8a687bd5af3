"""Multilayer perceptron trained by backpropagation with Adam.

Hidden layers run linear -> batchnorm -> ReLU -> dropout; the output layer
is linear into softmax cross-entropy. Inference always runs with dropout
off and batchnorm on running statistics, so repeated evaluation of the
same input is bit-identical.
"""

from __future__ import annotations

import numpy as np

from .base import DivergenceError, TrainedModel
from .config import MLPConfig

_BN_EPS = 1e-5


class MLPNetwork:
    """The bare network: parameters, forward pass and analytic gradients.

    Kept separate from the training loop so the gradients can be checked
    against finite differences directly.
    """

    def __init__(
        self,
        layer_sizes: tuple[int, ...],
        *,
        batchnorm: bool = True,
        dropout: float = 0.0,
        bn_momentum: float = 0.9,
        seed: int = 0,
    ):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.batchnorm = batchnorm
        self.dropout = float(dropout)
        self.bn_momentum = float(bn_momentum)
        rng = np.random.default_rng(seed)

        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            scale = np.sqrt(2.0 / fan_in)
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

        self.n_hidden = len(self.layer_sizes) - 2
        self.gammas = [np.ones(w) for w in self.layer_sizes[1:-1]]
        self.betas = [np.zeros(w) for w in self.layer_sizes[1:-1]]
        self.running_mean = [np.zeros(w) for w in self.layer_sizes[1:-1]]
        self.running_var = [np.ones(w) for w in self.layer_sizes[1:-1]]

    # -- parameter access ----------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        params = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            params[f"W{i}"] = w
            params[f"b{i}"] = b
        if self.batchnorm:
            for i in range(self.n_hidden):
                params[f"gamma{i}"] = self.gammas[i]
                params[f"beta{i}"] = self.betas[i]
        return params

    # -- forward / backward ----------------------------------------------

    def _forward(self, X: np.ndarray, train: bool, rng: np.random.Generator | None):
        a = X
        caches = []
        for i in range(self.n_hidden):
            z = a @ self.weights[i] + self.biases[i]
            cache: dict = {"a_in": a}
            if self.batchnorm:
                if train:
                    mu = z.mean(axis=0)
                    var = z.var(axis=0)
                    m = len(z)
                    unbiased = var * m / (m - 1) if m > 1 else var
                    self.running_mean[i] = (
                        self.bn_momentum * self.running_mean[i] + (1 - self.bn_momentum) * mu
                    )
                    self.running_var[i] = (
                        self.bn_momentum * self.running_var[i] + (1 - self.bn_momentum) * unbiased
                    )
                else:
                    mu = self.running_mean[i]
                    var = self.running_var[i]
                inv = 1.0 / np.sqrt(var + _BN_EPS)
                zc = z - mu
                zhat = zc * inv
                h = self.gammas[i] * zhat + self.betas[i]
                cache.update(zc=zc, zhat=zhat, inv=inv)
            else:
                h = z
            relu_mask = h > 0
            a = h * relu_mask
            cache["relu_mask"] = relu_mask
            if train and self.dropout > 0.0:
                if rng is None:
                    raise ValueError("training forward pass with dropout needs an rng")
                keep = rng.random(a.shape) >= self.dropout
                a = a * keep / (1.0 - self.dropout)
                cache["drop_keep"] = keep
            caches.append(cache)
        logits = a @ self.weights[-1] + self.biases[-1]
        return logits, a, caches

    def loss_and_gradients(
        self,
        X: np.ndarray,
        y: np.ndarray,
        *,
        train: bool = True,
        rng: np.random.Generator | None = None,
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean softmax cross-entropy and analytic gradients for every
        parameter returned by parameters()."""
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        logits, a_last, caches = self._forward(X, train, rng)
        m = len(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_proba = shifted - log_z
        loss = float(-log_proba[np.arange(m), y].mean())

        grads: dict[str, np.ndarray] = {}
        dlogits = np.exp(log_proba)
        dlogits[np.arange(m), y] -= 1.0
        dlogits /= m

        grads[f"W{self.n_hidden}"] = a_last.T @ dlogits
        grads[f"b{self.n_hidden}"] = dlogits.sum(axis=0)
        da = dlogits @ self.weights[-1].T

        for i in range(self.n_hidden - 1, -1, -1):
            cache = caches[i]
            if train and self.dropout > 0.0:
                da = da * cache["drop_keep"] / (1.0 - self.dropout)
            dh = da * cache["relu_mask"]
            if self.batchnorm:
                zhat, zc, inv = cache["zhat"], cache["zc"], cache["inv"]
                grads[f"gamma{i}"] = (dh * zhat).sum(axis=0)
                grads[f"beta{i}"] = dh.sum(axis=0)
                dzhat = dh * self.gammas[i]
                if train:
                    mb = len(zc)
                    dvar = (dzhat * zc).sum(axis=0) * -0.5 * inv**3
                    dmu = -(dzhat.sum(axis=0)) * inv + dvar * (-2.0 / mb) * zc.sum(axis=0)
                    dz = dzhat * inv + dvar * 2.0 * zc / mb + dmu / mb
                else:
                    dz = dzhat * inv
            else:
                dz = dh
            grads[f"W{i}"] = cache["a_in"].T @ dz
            grads[f"b{i}"] = dz.sum(axis=0)
            if i > 0:
                da = dz @ self.weights[i].T

        return loss, grads

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        logits, _, _ = self._forward(np.asarray(X, dtype=np.float64), train=False, rng=None)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    # -- serialization ----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "batchnorm": self.batchnorm,
            "dropout": self.dropout,
            "bn_momentum": self.bn_momentum,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "gammas": [g.tolist() for g in self.gammas],
            "betas": [b.tolist() for b in self.betas],
            "running_mean": [r.tolist() for r in self.running_mean],
            "running_var": [r.tolist() for r in self.running_var],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "MLPNetwork":
        net = cls(
            tuple(payload["layer_sizes"]),
            batchnorm=payload["batchnorm"],
            dropout=payload["dropout"],
            bn_momentum=payload["bn_momentum"],
        )
        net.weights = [np.asarray(w, dtype=np.float64) for w in payload["weights"]]
        net.biases = [np.asarray(b, dtype=np.float64) for b in payload["biases"]]
        net.gammas = [np.asarray(g, dtype=np.float64) for g in payload["gammas"]]
        net.betas = [np.asarray(b, dtype=np.float64) for b in payload["betas"]]
        net.running_mean = [np.asarray(r, dtype=np.float64) for r in payload["running_mean"]]
        net.running_var = [np.asarray(r, dtype=np.float64) for r in payload["running_var"]]
        return net


def train_mlp(
    X: np.ndarray,
    y: list[str] | np.ndarray,
    classes: tuple[str, ...],
    config: MLPConfig = MLPConfig(),
    *,
    column_names: tuple[str, ...] | None = None,
) -> TrainedModel:
    """Mini-batch Adam training with seeded epoch shuffling.

    Raises DivergenceError naming the epoch if the loss goes non-finite.
    """
    X = np.asarray(X, dtype=np.float64)
    index = {c: i for i, c in enumerate(classes)}
    y_idx = np.array([index[label] for label in y], dtype=np.int64)
    if len(np.unique(y_idx)) < 2:
        raise ValueError("need at least 2 classes to train")
    if len(X) == 0:
        raise ValueError("empty training matrix")

    layer_sizes = (X.shape[1], *config.hidden, len(classes))
    net = MLPNetwork(
        layer_sizes,
        batchnorm=config.batchnorm,
        dropout=config.dropout,
        bn_momentum=config.bn_momentum,
        seed=config.seed,
    )
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])

    params = net.parameters()
    m_state = {k: np.zeros_like(v) for k, v in params.items()}
    v_state = {k: np.zeros_like(v) for k, v in params.items()}
    t = 0
    trace: list[float] = []

    n = len(X)
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            batch = perm[start : start + config.batch_size]
            loss, grads = net.loss_and_gradients(X[batch], y_idx[batch], train=True, rng=rng)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, loss)
            batch_losses.append(loss)
            t += 1
            for key, grad in grads.items():
                m_state[key] = config.beta1 * m_state[key] + (1 - config.beta1) * grad
                v_state[key] = config.beta2 * v_state[key] + (1 - config.beta2) * grad**2
                m_hat = m_state[key] / (1 - config.beta1**t)
                v_hat = v_state[key] / (1 - config.beta2**t)
                params[key] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        trace.append(float(np.mean(batch_losses)))

    cfg = {
        "hidden": list(config.hidden),
        "dropout": config.dropout,
        "batchnorm": config.batchnorm,
        "learning_rate": config.learning_rate,
        "batch_size": config.batch_size,
        "epochs": config.epochs,
        "bn_momentum": config.bn_momentum,
        "seed": config.seed,
    }
    return TrainedModel(
        kind="mlp",
        classes=tuple(classes),
        config=cfg,
        loss_trace=trace,
        n_features=X.shape[1],
        impl=net,
        column_names=column_names,
    )
