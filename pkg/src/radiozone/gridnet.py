"""Desk-scale convolutional encoder-decoder for image-to-image RSS maps.

Two pooling stages, nearest-neighbor upsampling, and copy-style skip
connections from each encoder stage to its decoder mirror. Trained with the
masked asymmetric loss: each example contributes its weighted error sum
over masked pixels divided by its weighted masked-pixel count; unmasked
pixels contribute nothing. Grids are zero-padded to a multiple of four
internally and the output cropped back.

Written in plain numpy so training stays deterministic and parameter
gradients remain checkable by finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TrainingDivergedError
from .lossfn import LossParams, loss_terms
from .nn import Adam
from .predictor import InputTensor


class _Conv:
    """Same-padded 2-D convolution via im2col."""

    def __init__(self, k: int, c_in: int, c_out: int, rng: np.random.Generator):
        scale = np.sqrt(2.0 / (k * k * c_in))
        self.w = rng.normal(0.0, scale, size=(k * k * c_in, c_out))
        self.b = np.zeros(c_out)
        self.k = k
        self.c_in = c_in
        self._cache = None

    def params(self):
        return [self.w, self.b]

    def _im2col(self, x: np.ndarray) -> np.ndarray:
        n, h, w, c = x.shape
        p = self.k // 2
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (self.k, self.k), axis=(1, 2))
        # (n, h, w, c, k, k) -> (n*h*w, k*k*c)
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, self.k * self.k * c)
        return cols

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        n, h, w, _ = x.shape
        cols = self._im2col(x)
        out = (cols @ self.w + self.b).reshape(n, h, w, -1)
        if train:
            self._cache = (cols, x.shape)
        return out

    def backward(self, grad: np.ndarray):
        cols, x_shape = self._cache
        n, h, w, c = x_shape
        gflat = grad.reshape(n * h * w, -1)
        gw = cols.T @ gflat
        gb = gflat.sum(axis=0)
        gcols = (gflat @ self.w.T).reshape(n, h, w, self.k, self.k, c)
        p = self.k // 2
        gx_pad = np.zeros((n, h + 2 * p, w + 2 * p, c))
        for i in range(self.k):
            for j in range(self.k):
                gx_pad[:, i:i + h, j:j + w, :] += gcols[:, :, :, i, j, :]
        gx = gx_pad[:, p:p + h, p:p + w, :] if p else gx_pad
        return gx, [gw, gb]


class _ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x, train=False):
        if train:
            self._mask = x > 0.0
        return np.maximum(x, 0.0)

    def backward(self, grad):
        return grad * self._mask


class _MaxPool2:
    """2x2 max pooling; ties route gradient to the first maximum only."""

    def __init__(self):
        self._onehot = None
        self._shape = None

    def forward(self, x, train=False):
        n, h, w, c = x.shape
        r = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
        r = r.reshape(n, h // 2, w // 2, c, 4)
        am = r.argmax(axis=-1)
        if train:
            self._onehot = np.eye(4)[am]
            self._shape = x.shape
        return np.take_along_axis(r, am[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        n, h, w, c = self._shape
        g = grad[..., None] * self._onehot
        g = g.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        return g.reshape(n, h, w, c)


class _Upsample2:
    def forward(self, x, train=False):
        return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)

    def backward(self, grad):
        n, h, w, c = grad.shape
        return grad.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


class GridNet:
    """U-shaped network: 4 input channels, ``channels`` base width, one
    linear output channel. ``use_skips=False`` drops the copy paths (the
    decoder then convolves the upsampled stream alone)."""

    def __init__(self, channels: int, rng: np.random.Generator, use_skips: bool = True):
        c = channels
        self.use_skips = use_skips
        self.channels = c
        self.enc1a = _Conv(3, 4, c, rng)
        self.enc1b = _Conv(3, c, c, rng)
        self.enc2 = _Conv(3, c, 2 * c, rng)
        self.bott = _Conv(3, 2 * c, 4 * c, rng)
        self.up1 = _Conv(3, 4 * c, 2 * c, rng)
        self.mix1 = _Conv(3, (4 * c) if use_skips else (2 * c), 2 * c, rng)
        self.up2 = _Conv(3, 2 * c, c, rng)
        self.mix2 = _Conv(3, (2 * c) if use_skips else c, c, rng)
        self.head = _Conv(1, c, 1, rng)
        self._convs = [self.enc1a, self.enc1b, self.enc2, self.bott,
                       self.up1, self.mix1, self.up2, self.mix2, self.head]
        self._relus = [_ReLU() for _ in range(8)]
        self._pools = [_MaxPool2(), _MaxPool2()]
        self._ups = [_Upsample2(), _Upsample2()]

    def parameters(self):
        out = []
        for conv in self._convs:
            out.extend(conv.params())
        return out

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        r = self._relus
        e1 = r[1].forward(self.enc1b.forward(
            r[0].forward(self.enc1a.forward(x, train), train), train), train)
        p1 = self._pools[0].forward(e1, train)
        e2 = r[2].forward(self.enc2.forward(p1, train), train)
        p2 = self._pools[1].forward(e2, train)
        b = r[3].forward(self.bott.forward(p2, train), train)
        u1 = r[4].forward(self.up1.forward(self._ups[0].forward(b), train), train)
        m1_in = np.concatenate([u1, e2], axis=-1) if self.use_skips else u1
        m1 = r[5].forward(self.mix1.forward(m1_in, train), train)
        u2 = r[6].forward(self.up2.forward(self._ups[1].forward(m1), train), train)
        m2_in = np.concatenate([u2, e1], axis=-1) if self.use_skips else u2
        m2 = r[7].forward(self.mix2.forward(m2_in, train), train)
        return self.head.forward(m2, train)[..., 0]

    def backward(self, grad_out: np.ndarray):
        c = self.channels
        r = self._relus
        grads: dict[int, list[np.ndarray]] = {}

        g, grads[8] = self.head.backward(grad_out[..., None])
        g, grads[7] = self.mix2.backward(r[7].backward(g))
        if self.use_skips:
            g, g_e1_skip = g[..., :c], g[..., c:]
        else:
            g_e1_skip = 0.0
        g, grads[6] = self.up2.backward(r[6].backward(g))
        g = self._ups[1].backward(g)
        g, grads[5] = self.mix1.backward(r[5].backward(g))
        if self.use_skips:
            g, g_e2_skip = g[..., :2 * c], g[..., 2 * c:]
        else:
            g_e2_skip = 0.0
        g, grads[4] = self.up1.backward(r[4].backward(g))
        g = self._ups[0].backward(g)
        g, grads[3] = self.bott.backward(r[3].backward(g))
        g = self._pools[1].backward(g) + g_e2_skip
        g, grads[2] = self.enc2.backward(r[2].backward(g))
        g = self._pools[0].backward(g) + g_e1_skip
        g, grads[1] = self.enc1b.backward(r[1].backward(g))
        g, grads[0] = self.enc1a.backward(r[0].backward(g))

        out = []
        for idx in range(9):
            out.extend(grads[idx])
        return out


def image_loss_terms(preds, targets, masks, params: LossParams):
    """Per-example (numerator, denominator) pairs for a batch of images."""
    nums, dens = [], []
    for p, t, m in zip(preds, targets, masks):
        n, d = loss_terms(p.ravel(), t.ravel(), m.ravel(), params)
        if d == 0.0:
            raise ValueError("an example's mask selects no pixels")
        nums.append(n)
        dens.append(d)
    return np.array(nums), np.array(dens)


def image_loss(preds, targets, masks, params: LossParams) -> float:
    nums, dens = image_loss_terms(preds, targets, masks, params)
    return float((nums / dens).sum())


def image_loss_grad(preds, targets, masks, params: LossParams) -> np.ndarray:
    """d(loss)/d(pred) for the summed per-example normalized loss."""
    grad = np.zeros_like(preds)
    for i, (p, t, m) in enumerate(zip(preds, targets, masks)):
        m = m.astype(bool)
        over = t <= p
        g = np.where(over, params.lambda_o, -params.lambda_u)
        g = np.where(m, g, 0.0)
        _, den = loss_terms(p.ravel(), t.ravel(), m.ravel(), params)
        grad[i] = g / den
    return grad


def _pad_to_multiple(img: np.ndarray, mult: int = 4) -> tuple[np.ndarray, tuple[int, int]]:
    h, w = img.shape[:2]
    ph = (-h) % mult
    pw = (-w) % mult
    if ph or pw:
        pad = [(0, ph), (0, pw)] + [(0, 0)] * (img.ndim - 2)
        img = np.pad(img, pad)
    return img, (h, w)


@dataclass(frozen=True)
class GridTrainingConfig:
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 200
    channels: int = 8
    use_skips: bool = True


@dataclass
class GridModel:
    """Trained image model plus target scaling and crop bookkeeping."""

    net: GridNet
    target_lo: float
    target_hi: float
    loss_params: LossParams
    config: GridTrainingConfig
    loss_history: list[float]
    name: str = "grid"

    def _scale(self, raw):
        span = self.target_hi - self.target_lo
        return (raw - self.target_lo) / (span if span > 0 else 1.0)

    def _unscale(self, scaled):
        span = self.target_hi - self.target_lo
        return scaled * (span if span > 0 else 1.0) + self.target_lo

    def predict_image(self, tensor: InputTensor) -> np.ndarray:
        x, (h, w) = _pad_to_multiple(tensor.stacked())
        out = self.net.forward(x[None])[0]
        return self._unscale(out[:h, :w])

    def masked_mae(self, tensor: InputTensor, target_image: np.ndarray) -> float:
        pred = self.predict_image(tensor)
        m = tensor.x2.astype(bool)
        return float(np.abs(pred[m] - target_image[m]).mean())


def _stack_batch(tensors, target_images, model_scale):
    xs, ys, ms = [], [], []
    for t, y in zip(tensors, target_images):
        x, _ = _pad_to_multiple(t.stacked())
        ys_p, _ = _pad_to_multiple(model_scale(np.asarray(y, dtype=float)))
        m_p, _ = _pad_to_multiple(t.x2)
        xs.append(x)
        ys.append(ys_p)
        ms.append(m_p.astype(bool))
    return np.stack(xs), np.stack(ys), np.stack(ms)


def train_grid_predictor(
    pairs,
    params: LossParams,
    cfg: GridTrainingConfig,
    rng: np.random.Generator,
) -> GridModel:
    """Train on (InputTensor, target_image) pairs; the target image carries
    true RSS (dBm) at the pixels masked by the tensor's query channel.
    Grids larger than 64x64 are refused (this is a desk-scale model)."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty training set")
    tensors = [p[0] for p in pairs]
    targets = [np.asarray(p[1], dtype=float) for p in pairs]
    h, w = tensors[0].x1.shape
    if h > 64 or w > 64:
        raise ValueError("grid model supports grids up to 64x64")

    masked_vals = np.concatenate([
        t[x.x2.astype(bool)] for x, t in zip(tensors, targets)
    ])
    t_lo = float(masked_vals.min())
    t_hi = float(masked_vals.max())
    span = (t_hi - t_lo) if t_hi > t_lo else 1.0

    net = GridNet(cfg.channels, rng, use_skips=cfg.use_skips)
    xs, ys, ms = _stack_batch(tensors, targets, lambda r: (r - t_lo) / span)
    # off-mask entries of the scaled target are irrelevant to the loss
    opt = Adam(net.parameters(), lr=cfg.learning_rate)
    history: list[float] = []
    n = len(pairs)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            pred = net.forward(xs[idx], train=True)
            if not np.all(np.isfinite(pred)):
                raise TrainingDivergedError(epoch)
            grad = image_loss_grad(pred, ys[idx], ms[idx], params)
            grads = net.backward(grad)
            opt.step(net.parameters(), grads)
        epoch_loss = image_loss(net.forward(xs), ys, ms, params) / n
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch)
        history.append(epoch_loss)
    return GridModel(net=net, target_lo=t_lo, target_hi=t_hi, loss_params=params,
                     config=cfg, loss_history=history)


def gradient_check_grid(
    model: GridModel,
    tensors,
    target_images,
    params: LossParams | None = None,
    step: float = 1e-5,
    max_checks_per_array: int = 16,
) -> float:
    """Finite-difference check of the image loss gradients; probes an
    evenly strided subset of each parameter array."""
    params = params or model.loss_params
    net = model.net
    span = model.target_hi - model.target_lo
    span = span if span > 0 else 1.0
    xs, ys, ms = _stack_batch(tensors, target_images,
                              lambda r: (r - model.target_lo) / span)

    pred = net.forward(xs, train=True)
    analytic = net.backward(image_loss_grad(pred, ys, ms, params))

    def loss_now():
        return image_loss(net.forward(xs), ys, ms, params)

    worst = 0.0
    for p, g in zip(net.parameters(), analytic):
        flat_p = p.reshape(-1)
        flat_g = np.asarray(g).reshape(-1)
        n = flat_p.size
        idx = np.linspace(0, n - 1, min(n, max_checks_per_array)).astype(int)
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
