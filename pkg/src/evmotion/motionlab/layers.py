"""Forward/backward kernels for the toy networks.

Feature maps are channel-last: ``(..., T, H, W, C)``. Every backward
function returns exact gradients of its forward map.
"""

from dataclasses import dataclass, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InputError, NumericError


def check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")


def sigmoid(a):
    # split by sign to avoid overflow in exp
    a = np.asarray(a)
    out = np.empty(a.shape, dtype=np.result_type(a.dtype, np.float32))
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


# squeeze-and-excitation

@dataclass
class SEParams:
    w1: np.ndarray  # (C // r, C)
    b1: np.ndarray  # (C // r,)
    w2: np.ndarray  # (C, C // r)
    b2: np.ndarray  # (C,)
    r: int

    @property
    def channels(self):
        return self.w1.shape[1]

    def check(self, channels=None):
        c = self.channels if channels is None else channels
        if self.r < 1 or c % self.r:
            raise InputError(f"reduction ratio {self.r} must divide channel count {c}")
        cr = c // self.r
        want = {"w1": (cr, c), "b1": (cr,), "w2": (c, cr), "b2": (c,)}
        for name, shape in want.items():
            if getattr(self, name).shape != shape:
                raise InputError(f"SE {name} has shape {getattr(self, name).shape}, expected {shape}")

    @classmethod
    def zeros(cls, channels, r):
        cr = channels // r
        return cls(np.zeros((cr, channels)), np.zeros(cr), np.zeros((channels, cr)), np.zeros(channels), r)

    @classmethod
    def random(cls, rng, channels, r, scale=0.5):
        cr = channels // r
        return cls(rng.normal(0, scale, (cr, channels)), rng.normal(0, scale, cr),
                   rng.normal(0, scale, (channels, cr)), rng.normal(0, scale, channels), r)

    def arrays(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "r"}


def se_squeeze(x):
    """Per-frame channel descriptor: spatial mean over (H, W)."""
    return x.mean(axis=(-3, -2))


def se_forward(x, p: SEParams, return_intermediates=False):
    """Gate each channel of each frame by a sigmoid excitation of its spatial mean.

    ``x`` is ``(..., H, W, C)``; every leading position (typically time, or
    batch and time) gets its own gate. Returns ``(x_tilde, s)`` with
    ``s`` of shape ``(..., C)`` and all entries in (0, 1).
    """
    x = np.asarray(x)
    if x.ndim < 3:
        raise InputError(f"SE input needs at least (H, W, C) axes, got shape {x.shape}")
    p.check(x.shape[-1])
    z = se_squeeze(x)
    a1 = z @ p.w1.T + p.b1
    h = np.maximum(a1, 0.0)
    s = sigmoid(h @ p.w2.T + p.b2)
    out = x * s[..., None, None, :]
    if return_intermediates:
        return out, s, {"z": z, "a1": a1, "h": h}
    return out, s


def se_backward(x, p: SEParams, upstream):
    """Gradients of ``sum(upstream * se_forward(x, p)[0])``.

    Returns a dict with keys ``x``, ``w1``, ``b1``, ``w2``, ``b2``.
    """
    x = np.asarray(x)
    upstream = np.asarray(upstream)
    if upstream.shape != x.shape:
        raise InputError(f"upstream gradient shape {upstream.shape} != input shape {x.shape}")
    _, s, mid = se_forward(x, p, return_intermediates=True)
    c = x.shape[-1]
    cr = p.w1.shape[0]
    hw = x.shape[-3] * x.shape[-2]
    ds = (upstream * x).sum(axis=(-3, -2))
    da2 = ds * s * (1.0 - s)
    dh = da2 @ p.w2
    da1 = dh * (mid["a1"] > 0)
    dz = da1 @ p.w1
    dx = upstream * s[..., None, None, :] + (dz / hw)[..., None, None, :]
    return {
        "x": dx,
        "w1": da1.reshape(-1, cr).T @ mid["z"].reshape(-1, c),
        "b1": da1.reshape(-1, cr).sum(axis=0),
        "w2": da2.reshape(-1, c).T @ mid["h"].reshape(-1, cr),
        "b2": da2.reshape(-1, c).sum(axis=0),
    }


# channel folding

def channel_fold(x):
    """Move voxel bins onto the time axis: ``(..., T, H, W, F) -> (..., F*T, H, W, 1)``.

    Output slice ``t*F + f`` holds input frame ``t`` bin ``f``, so consecutive
    slices follow physical time.
    """
    x = np.asarray(x)
    if x.ndim < 4:
        raise InputError(f"fold input needs (T, H, W, F) axes, got shape {x.shape}")
    *lead, t, h, w, f = x.shape
    moved = np.moveaxis(x, -1, -3)  # (..., T, F, H, W)
    return moved.reshape(*lead, t * f, h, w, 1)


def channel_unfold(y, bins):
    """Inverse of :func:`channel_fold`; also its backward map."""
    y = np.asarray(y)
    *lead, tf, h, w, one = y.shape
    if one != 1 or tf % bins:
        raise InputError(f"cannot unfold shape {y.shape} into {bins} bins")
    return np.moveaxis(y.reshape(*lead, tf // bins, bins, h, w), -3, -1)


# convolution

def _pad_same(x, kt, kh, kw):
    pt, ph, pw = kt // 2, kh // 2, kw // 2
    return np.pad(x, ((0, 0), (pt, pt), (ph, ph), (pw, pw), (0, 0)))


def _windows(xp, kt, kh, kw):
    # (N, T, H, W, C, kt, kh, kw) view, no copy
    return sliding_window_view(xp, (kt, kh, kw), axis=(1, 2, 3))


def conv3d_forward(x, w, b):
    """Stride-1 zero-padded 'same' convolution.

    x: (N, T, H, W, Cin); w: (kt, kh, kw, Cin, Cout) with odd kernel sizes;
    b: (Cout,). A 2D per-frame convolution is the ``kt == 1`` case.
    """
    cin = x.shape[-1]
    kt, kh, kw, wcin, cout = w.shape
    if wcin != cin:
        raise InputError(f"conv expects {wcin} input channels, got {cin}")
    if not (kt % 2 and kh % 2 and kw % 2):
        raise InputError(f"kernel sizes must be odd, got {(kt, kh, kw)}")
    v = _windows(_pad_same(x, kt, kh, kw), kt, kh, kw)
    return np.tensordot(v, w.transpose(3, 0, 1, 2, 4), axes=([4, 5, 6, 7], [0, 1, 2, 3])) + b


def conv3d_backward(x, w, upstream):
    """Returns ``(dx, dw, db)`` for :func:`conv3d_forward`."""
    kt, kh, kw, _, _ = w.shape
    v = _windows(_pad_same(x, kt, kh, kw), kt, kh, kw)
    dw = np.tensordot(v, upstream, axes=([0, 1, 2, 3], [0, 1, 2, 3])).transpose(1, 2, 3, 0, 4)
    # input gradient: 'same' correlation of the upstream with the flipped kernel
    u = _windows(_pad_same(upstream, kt, kh, kw), kt, kh, kw)
    wf = w[::-1, ::-1, ::-1].transpose(4, 0, 1, 2, 3)
    dx = np.tensordot(u, wf, axes=([4, 5, 6, 7], [0, 1, 2, 3]))
    return dx, dw, upstream.sum(axis=(0, 1, 2, 3))


# pointwise, pooling, head

def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(x, upstream):
    return upstream * (x > 0)


def avg_pool_forward(x):
    """Global average over (T, H, W): ``(N, T, H, W, C) -> (N, C)``."""
    return x.mean(axis=(1, 2, 3))


def avg_pool_backward(shape, upstream):
    n, t, h, w, c = shape
    return np.broadcast_to(upstream[:, None, None, None, :] / (t * h * w), shape).copy()


def linear_forward(f, w, b):
    return f @ w.T + b


def linear_backward(f, w, upstream):
    """Returns ``(df, dw, db)``."""
    return upstream @ w, upstream.T @ f, upstream.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy over the batch and its gradient w.r.t. logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise InputError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InputError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


# distillation

def distill_loss(f_student, f_teacher, alpha, reduction="mean"):
    """Scaled squared L2 distance between student and frozen-teacher features.

    For 1-D inputs: ``alpha * sum((fE - fF)**2)`` and gradient
    ``2 * alpha * (fE - fF)``. For batched ``(N, D)`` inputs the per-sample
    sums are averaged over the batch (``reduction="mean"``) or summed
    (``"sum"``). No gradient is returned for the teacher.
    """
    fe = np.asarray(f_student, dtype=np.float64)
    ff = np.asarray(f_teacher, dtype=np.float64)
    if fe.shape != ff.shape:
        raise InputError(f"feature shapes differ: student {fe.shape}, teacher {ff.shape}")
    if alpha < 0:
        raise InputError(f"alpha must be >= 0, got {alpha}")
    diff = fe - ff
    if fe.ndim <= 1 or reduction == "sum":
        scale = 1.0
    elif reduction == "mean":
        scale = 1.0 / fe.shape[0]
    else:
        raise InputError(f"unknown reduction {reduction!r}")
    loss = alpha * scale * float(np.sum(diff * diff))
    return loss, 2.0 * alpha * scale * diff
