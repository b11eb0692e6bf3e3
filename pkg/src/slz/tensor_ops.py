"""Dense tensor kernels with exact analytic gradients.

Conventions: images and feature maps are numpy arrays of shape (C, H, W),
convolution weights (O, C, k, k), transposed-convolution weights (C, O, 2, 2),
per-pixel class maps (K, H, W). Every operation is a pure function of its
inputs; gradient functions return the exact adjoints that the finite-difference
suite checks. Double precision is used in tests, single precision is fine for
training.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


# ---------------------------------------------------------------------------
# convolution (stride 1, odd kernel, same zero-padding)
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Unfold (C,H,W) into a (C*k*k, H*W) patch matrix under same-padding."""
    c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    s0, s1, s2 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, shape=(c, k, k, h, w), strides=(s0, s1, s2, s1, s2))
    return windows.reshape(c * k * k, h * w)


def _check_conv_shapes(x: np.ndarray, w: np.ndarray, b: np.ndarray | None) -> None:
    _require(x.ndim == 3, f"input must be (C,H,W), got shape {x.shape}")
    _require(w.ndim == 4, f"weights must be (O,C,k,k), got shape {w.shape}")
    o, c, kh, kw = w.shape
    _require(kh == kw and kh % 2 == 1,
             f"kernel must be square with odd size, got {kh}x{kw}")
    _require(x.shape[0] == c,
             f"input has {x.shape[0]} channels but weights expect {c}")
    if b is not None:
        _require(b.shape == (o,),
                 f"bias must have shape ({o},), got {b.shape}")


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 convolution: (C,H,W) -> (O,H,W)."""
    _check_conv_shapes(x, w, b)
    o = w.shape[0]
    _, h, wd = x.shape
    col = _im2col(x, w.shape[2])
    out = w.reshape(o, -1) @ col + b[:, None]
    return out.reshape(o, h, wd)


def conv2d_grad(x: np.ndarray, w: np.ndarray,
                upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of a scalar loss w.r.t. conv2d input, weights and bias."""
    _check_conv_shapes(x, w, None)
    o, c, k, _ = w.shape
    _, h, wd = x.shape
    _require(upstream.shape == (o, h, wd),
             f"upstream must have shape {(o, h, wd)}, got {upstream.shape}")
    up = upstream.reshape(o, -1)
    grad_b = upstream.sum(axis=(1, 2))
    grad_w = (up @ _im2col(x, k).T).reshape(w.shape)
    # adjoint of im2col: scatter-add each kernel tap back onto the padded grid
    g = (w.reshape(o, -1).T @ up).reshape(c, k, k, h, wd)
    p = k // 2
    gxp = np.zeros((c, h + 2 * p, wd + 2 * p), dtype=upstream.dtype)
    for di in range(k):
        for dj in range(k):
            gxp[:, di:di + h, dj:dj + wd] += g[:, di, dj]
    grad_x = gxp[:, p:p + h, p:p + wd]
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# 2x2 max pooling
# ---------------------------------------------------------------------------

def maxpool2(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 stride-2 max pool. Returns (output, argmax) where argmax holds the
    winning position 0..3 of each window in row-major order; ties take the
    first index."""
    _require(x.ndim == 3, f"input must be (C,H,W), got shape {x.shape}")
    c, h, w = x.shape
    _require(h % 2 == 0 and w % 2 == 0,
             f"spatial dims must be even for 2x2 pooling, got {h}x{w}")
    win = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4)
    win = win.reshape(c, h // 2, w // 2, 4)
    argmax = win.argmax(axis=-1)
    out = np.take_along_axis(win, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


def maxpool2_grad(argmax: np.ndarray, upstream: np.ndarray,
                  input_shape: tuple[int, int, int]) -> np.ndarray:
    """Route each upstream value to its window's argmax position."""
    c, h, w = input_shape
    _require(upstream.shape == (c, h // 2, w // 2),
             f"upstream must have shape {(c, h // 2, w // 2)}, got {upstream.shape}")
    g = np.zeros((c, h // 2, w // 2, 4), dtype=upstream.dtype)
    np.put_along_axis(g, argmax[..., None], upstream[..., None], axis=-1)
    return g.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w)


# ---------------------------------------------------------------------------
# 2x2 stride-2 transposed convolution
# ---------------------------------------------------------------------------

def _check_upconv_shapes(x: np.ndarray, w: np.ndarray) -> None:
    _require(x.ndim == 3, f"input must be (C,H,W), got shape {x.shape}")
    _require(w.ndim == 4 and w.shape[2:] == (2, 2),
             f"weights must be (C,O,2,2), got shape {w.shape}")
    _require(x.shape[0] == w.shape[0],
             f"input has {x.shape[0]} channels but weights expect {w.shape[0]}")


def upconv2(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Transposed 2x2 stride-2 convolution: (C,H,W) -> (O,2H,2W)."""
    _check_upconv_shapes(x, w)
    _, h, wd = x.shape
    o = w.shape[1]
    t = np.einsum("chw,coij->ohiwj", x, w, optimize=True)
    return np.ascontiguousarray(t).reshape(o, 2 * h, 2 * wd)


def upconv2_grad(x: np.ndarray, w: np.ndarray,
                 upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of a scalar loss w.r.t. upconv2 input and weights."""
    _check_upconv_shapes(x, w)
    _, h, wd = x.shape
    o = w.shape[1]
    _require(upstream.shape == (o, 2 * h, 2 * wd),
             f"upstream must have shape {(o, 2 * h, 2 * wd)}, got {upstream.shape}")
    u5 = upstream.reshape(o, h, 2, wd, 2)
    grad_w = np.einsum("chw,ohiwj->coij", x, u5, optimize=True)
    grad_x = np.einsum("ohiwj,coij->chw", u5, w, optimize=True)
    return grad_x, grad_w


# ---------------------------------------------------------------------------
# pointwise ops
# ---------------------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_grad(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return upstream * (x > 0)


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stack a's channels before b's; spatial dims must match."""
    _require(a.ndim == 3 and b.ndim == 3,
             f"inputs must be (C,H,W), got {a.shape} and {b.shape}")
    _require(a.shape[1:] == b.shape[1:],
             f"spatial dims differ: {a.shape[1:]} vs {b.shape[1:]}")
    return np.concatenate([a, b], axis=0)


def concat_channels_grad(upstream: np.ndarray,
                         channels_a: int) -> tuple[np.ndarray, np.ndarray]:
    return upstream[:channels_a], upstream[channels_a:]


# ---------------------------------------------------------------------------
# softmax + categorical cross entropy
# ---------------------------------------------------------------------------

def softmax_pixels(logits: np.ndarray) -> np.ndarray:
    """Per-pixel softmax over the class axis of (K,H,W), max-subtracted for
    numerical stability."""
    _require(logits.ndim == 3 and logits.shape[0] >= 2,
             f"logits must be (K,H,W) with K >= 2, got shape {logits.shape}")
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def cce_loss(probabilities: np.ndarray, labels: np.ndarray,
             ignore_label: int | None = None) -> tuple[float, np.ndarray]:
    """Mean categorical cross entropy over non-ignored pixels.

    Returns (loss, grad_logits) where grad_logits is the gradient w.r.t. the
    pre-softmax logits, i.e. (p - onehot)/N per counted pixel. Probabilities
    are clamped below at 1e-12 before the log.
    """
    k, h, w = probabilities.shape
    _require(labels.shape == (h, w),
             f"labels must have shape {(h, w)}, got {labels.shape}")
    labels = np.asarray(labels)
    if ignore_label is None:
        counted = np.ones((h, w), dtype=bool)
    else:
        counted = labels != ignore_label
    bad = counted & ((labels < 0) | (labels >= k))
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise ValueError(
            f"label {labels[y, x]} at pixel ({y},{x}) is outside [0,{k})")
    n = int(counted.sum())
    _require(n > 0, "every pixel is ignored; loss is undefined")

    safe_labels = np.where(counted, labels, 0)
    rows, cols = np.indices((h, w))
    p_true = probabilities[safe_labels, rows, cols]
    logp = np.log(np.maximum(p_true, 1e-12))
    loss = float(-(logp * counted).sum() / n)

    onehot = np.zeros_like(probabilities)
    onehot[safe_labels, rows, cols] = 1.0
    grad = (probabilities - onehot) * (counted / n)
    return loss, grad


# ---------------------------------------------------------------------------
# ADAM
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamHyper:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class AdamState:
    """Optimizer state: per-parameter moment estimates plus the step count the
    bias-correction exponents derive from."""
    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    step_count: int = 0
    hyper: AdamHyper = field(default_factory=AdamHyper)

    @classmethod
    def init(cls, params: dict[str, np.ndarray],
             hyper: AdamHyper | None = None) -> "AdamState":
        return cls(
            first_moment={k: np.zeros_like(v) for k, v in params.items()},
            second_moment={k: np.zeros_like(v) for k, v in params.items()},
            step_count=0,
            hyper=hyper or AdamHyper(),
        )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected ADAM update. Returns new params and state; the
    inputs are left untouched."""
    _require(set(params) == set(grads),
             "params and grads must hold the same parameter names")
    for name, p in params.items():
        _require(grads[name].shape == p.shape,
                 f"gradient shape {grads[name].shape} does not match "
                 f"parameter '{name}' shape {p.shape}")
        _require(state.first_moment[name].shape == p.shape,
                 f"optimizer state for '{name}' does not match its shape")
    hp = state.hyper
    t = state.step_count + 1
    c1 = 1.0 - hp.beta1 ** t
    c2 = 1.0 - hp.beta2 ** t
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads[name]
        m = hp.beta1 * state.first_moment[name] + (1.0 - hp.beta1) * g
        v = hp.beta2 * state.second_moment[name] + (1.0 - hp.beta2) * (g * g)
        update = hp.learning_rate * (m / c1) / (np.sqrt(v / c2) + hp.epsilon)
        new_params[name] = (p - update).astype(p.dtype, copy=False)
        new_m[name] = m
        new_v[name] = v
    return new_params, replace(state, first_moment=new_m, second_moment=new_v,
                               step_count=t)
