"""Minimal feed-forward network with manual backprop and Adam.

Kept dependency-free (numpy only) so training is reproducible bit-for-bit
from a seed and parameter gradients can be verified against central finite
differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TrainingDivergedError
from .lossfn import LossParams, asymmetric_loss, loss_gradient, loss_terms


class DenseNet:
    """Fully connected ReLU network with a linear scalar output.

    Parameters live in ``weights``/``biases`` (lists of float64 arrays);
    ``forward`` caches activations for ``backward``.
    """

    def __init__(self, layer_dims, rng: np.random.Generator):
        if len(layer_dims) < 2 or layer_dims[-1] != 1:
            raise ValueError("layer_dims must end in a single output unit")
        self.layer_dims = tuple(int(d) for d in layer_dims)
        self.weights = []
        self.biases = []
        for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
            scale = np.sqrt(2.0 / d_in)
            self.weights.append(rng.normal(0.0, scale, size=(d_in, d_out)))
            self.biases.append(np.zeros(d_out))
        self._cache = None

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def snapshot(self) -> list[np.ndarray]:
        return [p.copy() for p in self.parameters()]

    def restore(self, snap) -> None:
        for p, s in zip(self.parameters(), snap):
            p[...] = s

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Predictions for a (n, d_in) batch, as a length-n vector."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        acts = [x]
        h = x
        n_layers = len(self.weights)
        for idx, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if idx < n_layers - 1:
                h = np.maximum(z, 0.0)
            else:
                h = z
            acts.append(h)
        if train:
            self._cache = acts
        return h[:, 0]

    def backward(self, grad_out: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients given d(loss)/d(prediction); pairs up with
        ``parameters()`` ordering."""
        if self._cache is None:
            raise RuntimeError("forward(train=True) must precede backward")
        acts = self._cache
        delta = np.asarray(grad_out, dtype=float)[:, None]
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        for idx in range(len(self.weights) - 1, -1, -1):
            a_in = acts[idx]
            grads_w[idx] = a_in.T @ delta
            grads_b[idx] = delta.sum(axis=0)
            if idx > 0:
                delta = (delta @ self.weights[idx].T) * (acts[idx] > 0.0)
        out = []
        for gw, gb in zip(grads_w, grads_b):
            out.append(gw)
            out.append(gb)
        return out


class Adam:
    """Adaptive-moment updater over a list of parameter arrays."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 200
    patience: int = 20
    val_fraction: float = 0.1
    hidden_dims: tuple[int, ...] = (64, 64, 32)

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("invalid training configuration")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")


def _dataset_loss(net: DenseNet, x, y, params: LossParams, chunk=65536) -> float:
    num = 0.0
    den = 0.0
    for lo in range(0, len(y), chunk):
        pred = net.forward(x[lo:lo + chunk])
        n, d = loss_terms(pred, y[lo:lo + chunk], None, params)
        num += n
        den += d
    return num / den if den > 0 else 0.0


def train_dense(
    x: np.ndarray,
    y: np.ndarray,
    params: LossParams,
    cfg: TrainingConfig,
    rng: np.random.Generator,
) -> tuple[DenseNet, list[float]]:
    """Train on scaled features/targets; returns the net and the per-epoch
    full-data loss history. Stops early when validation loss plateaus for
    ``cfg.patience`` epochs; raises on non-finite loss."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) == 0:
        raise ValueError("empty training set")
    net = DenseNet((x.shape[1], *cfg.hidden_dims, 1), rng)

    n_val = int(len(x) * cfg.val_fraction)
    perm = rng.permutation(len(x))
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    if len(train_idx) == 0:
        raise ValueError("validation split leaves no training data")

    opt = Adam(net.parameters(), lr=cfg.learning_rate)
    history: list[float] = []
    best_val = np.inf
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(train_idx)
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            pred = net.forward(x[batch], train=True)
            if not np.all(np.isfinite(pred)):
                raise TrainingDivergedError(epoch)
            grad = loss_gradient(pred, y[batch], None, params)
            grads = net.backward(grad)
            opt.step(net.parameters(), grads)
        epoch_loss = _dataset_loss(net, x, y, params)
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch)
        history.append(epoch_loss)
        if n_val > 0:
            val_loss = _dataset_loss(net, x[val_idx], y[val_idx], params)
            if val_loss < best_val - 1e-12:
                best_val = val_loss
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    return net, history


def finite_difference_check(
    net,
    x: np.ndarray,
    y: np.ndarray,
    params: LossParams,
    step: float = 1e-5,
    max_checks_per_array: int | None = None,
) -> float:
    """Max relative error between analytic and central-difference parameter
    gradients of the (normalized) loss on one batch.

    ``max_checks_per_array`` limits the probed entries per parameter array
    (an evenly strided deterministic subset) so large models stay checkable.
    The batch must avoid the |pred - target| kink; small denominators are
    floored at 1e-6 so round-off on exactly-zero gradients is not amplified.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()

    pred = net.forward(x, train=True)
    grad = loss_gradient(pred, y, None, params)
    analytic = net.backward(grad)

    def loss_now() -> float:
        return asymmetric_loss(net.forward(x), y, None, params)

    worst = 0.0
    for p, g in zip(net.parameters(), analytic):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        n = flat_p.size
        if max_checks_per_array is None or n <= max_checks_per_array:
            idx = range(n)
        else:
            idx = np.linspace(0, n - 1, max_checks_per_array).astype(int)
        for i in idx:
            orig = flat_p[i]
            flat_p[i] = orig + step
            plus = loss_now()
            flat_p[i] = orig - step
            minus = loss_now()
            flat_p[i] = orig
            numeric = (plus - minus) / (2.0 * step)
            denom = max(abs(flat_g[i]), abs(numeric), 1e-6)
            worst = max(worst, abs(flat_g[i] - numeric) / denom)
    return worst
