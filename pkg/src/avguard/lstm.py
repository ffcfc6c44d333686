"""Single-layer LSTM next-step predictor, implemented from scratch.

Canonical cell: i, f, o = logistic(Wx + Uh + b), g = tanh(Wx + Uh + b),
c' = f*c + i*g, h' = o*tanh(c'), prediction = V h' + bias. Trained with
truncated backpropagation through time, momentum SGD, and global
gradient-norm clipping. Also provides magnitude pruning and symmetric
linear quantization of the weight matrices.

All math is float64 numpy; training is deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, TrainingDiverged
from .rng import substream

MATRIX_NAMES = ("W", "U", "b", "V", "c_out")
GRAD_CLIP = 5.0


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LstmParams:
    W: np.ndarray       # (4H, D) input weights, gate order i,f,o,g
    U: np.ndarray       # (4H, H) recurrent weights
    b: np.ndarray       # (4H,)
    V: np.ndarray       # (D, H) output head
    c_out: np.ndarray   # (D,) output bias

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "LstmParams":
        return LstmParams(*(getattr(self, n).copy() for n in MATRIX_NAMES))

    def check_finite(self) -> None:
        for n in MATRIX_NAMES:
            if not np.all(np.isfinite(getattr(self, n))):
                raise InputError(f"non-finite parameter matrix {n}")

    def as_dict(self) -> dict:
        return {n: getattr(self, n) for n in MATRIX_NAMES}


def init_params(input_dim: int, hidden: int, seed: int) -> LstmParams:
    rng = substream(seed, "lstm-init")
    sw = 1.0 / np.sqrt(input_dim)
    su = 1.0 / np.sqrt(hidden)
    W = rng.uniform(-sw, sw, size=(4 * hidden, input_dim))
    U = rng.uniform(-su, su, size=(4 * hidden, hidden))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget-gate bias: remember by default
    V = rng.uniform(-su, su, size=(input_dim, hidden))
    c_out = np.zeros(input_dim)
    return LstmParams(W, U, b, V, c_out)


def lstm_step(params: LstmParams, x: np.ndarray, h: np.ndarray, c: np.ndarray
              ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One cell update; x (D,) or (B, D). Returns (prediction, h', c')."""
    if not np.all(np.isfinite(x)):
        raise InputError("non-finite LSTM input")
    H = params.hidden
    z = x @ params.W.T + h @ params.U.T + params.b
    i = _sigmoid(z[..., 0:H])
    f = _sigmoid(z[..., H:2 * H])
    o = _sigmoid(z[..., 2 * H:3 * H])
    g = np.tanh(z[..., 3 * H:4 * H])
    c2 = f * c + i * g
    h2 = o * np.tanh(c2)
    pred = h2 @ params.V.T + params.c_out
    return pred, h2, c2


def predict_sequence(params: LstmParams, xs: np.ndarray,
                     h0: np.ndarray | None = None, c0: np.ndarray | None = None
                     ) -> np.ndarray:
    """Next-step predictions for xs (T, D) or (B, T, D); pred[t] targets x[t+1]."""
    single = xs.ndim == 2
    if single:
        xs = xs[None]
    B, T, D = xs.shape
    H = params.hidden
    h = np.zeros((B, H)) if h0 is None else h0
    c = np.zeros((B, H)) if c0 is None else c0
    preds = np.empty_like(xs)
    for t in range(T):
        preds[:, t], h, c = lstm_step(params, xs[:, t], h, c)
    return preds[0] if single else preds


# ---------------------------------------------------------------------------
# training

@dataclass
class Hyper:
    epochs: int = 30
    lr: float = 0.05
    momentum: float = 0.9
    bptt_len: int = 32
    batch: int = 64   # max sequences advanced together


def _forward_cache(params: LstmParams, xs: np.ndarray, h0, c0):
    """Forward over a window, keeping activations for backprop."""
    B, T, D = xs.shape
    H = params.hidden
    cache = []
    h, c = h0, c0
    preds = np.empty((B, T, D))
    for t in range(T):
        x = xs[:, t]
        z = x @ params.W.T + h @ params.U.T + params.b
        i = _sigmoid(z[:, 0:H])
        f = _sigmoid(z[:, H:2 * H])
        o = _sigmoid(z[:, 2 * H:3 * H])
        g = np.tanh(z[:, 3 * H:4 * H])
        c2 = f * c + i * g
        tc = np.tanh(c2)
        h2 = o * tc
        preds[:, t] = h2 @ params.V.T + params.c_out
        cache.append((x, h, c, i, f, o, g, c2, tc, h2))
        h, c = h2, c2
    return preds, cache, h, c


def window_loss_and_grads(params: LstmParams, xs: np.ndarray, ys: np.ndarray,
                          h0: np.ndarray | None = None,
                          c0: np.ndarray | None = None):
    """Mean squared next-step error over a BPTT window plus full gradients.

    xs, ys: (B, T, D) inputs and targets. Returns (loss, grads dict,
    final h, final c).
    """
    B, T, D = xs.shape
    H = params.hidden
    if h0 is None:
        h0 = np.zeros((B, H))
    if c0 is None:
        c0 = np.zeros((B, H))
    preds, cache, hT, cT = _forward_cache(params, xs, h0, c0)
    err = preds - ys
    with np.errstate(over="ignore"):  # divergence is detected, not a crash
        loss = float(np.mean(err * err))

    gW = np.zeros_like(params.W)
    gU = np.zeros_like(params.U)
    gb = np.zeros_like(params.b)
    gV = np.zeros_like(params.V)
    gc_out = np.zeros_like(params.c_out)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    scale = 2.0 / err.size
    for t in range(T - 1, -1, -1):
        x, h_prev, c_prev, i, f, o, g, c2, tc, h2 = cache[t]
        dpred = scale * err[:, t]
        gV += dpred.T @ h2
        gc_out += dpred.sum(axis=0)
        dh = dpred @ params.V + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dc_next = dc * f
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            do * o * (1.0 - o),
            dg * (1.0 - g * g),
        ], axis=1)
        gW += dz.T @ x
        gU += dz.T @ h_prev
        gb += dz.sum(axis=0)
        dh_next = dz @ params.U
    grads = {"W": gW, "U": gU, "b": gb, "V": gV, "c_out": gc_out}
    return loss, grads, hT, cT


def _clip_global(grads: dict, max_norm: float) -> None:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def train(params: LstmParams, sequences: list, hyper: Hyper, seed: int = 0
          ) -> tuple[LstmParams, list]:
    """Stateful truncated-BPTT training on normal-behavior sequences.

    sequences: list of (T_i, D) arrays. State is carried (detached)
    across consecutive windows of a sequence and reset between
    sequences. Returns (trained params, per-epoch loss curve).
    """
    params = params.copy()
    params.check_finite()
    if hyper.epochs == 0:
        return params, []
    rng = substream(seed, "lstm-train")
    velocity = {n: np.zeros_like(getattr(params, n)) for n in MATRIX_NAMES}
    curve = []
    for _epoch in range(hyper.epochs):
        order = rng.permutation(len(sequences))
        epoch_losses = []
        for start in range(0, len(order), hyper.batch):
            group = [sequences[j] for j in order[start:start + hyper.batch]]
            T_min = min(len(s) for s in group)
            xs_all = np.stack([s[:T_min] for s in group])  # (B, T_min, D)
            B = xs_all.shape[0]
            h = np.zeros((B, params.hidden))
            c = np.zeros((B, params.hidden))
            for w0 in range(0, T_min - 1, hyper.bptt_len):
                w1 = min(w0 + hyper.bptt_len, T_min - 1)
                xs = xs_all[:, w0:w1]
                ys = xs_all[:, w0 + 1:w1 + 1]
                loss, grads, h, c = window_loss_and_grads(params, xs, ys, h, c)
                if not np.isfinite(loss):
                    raise TrainingDiverged(
                        f"loss diverged at epoch {_epoch}, window {w0}: {loss}")
                _clip_global(grads, GRAD_CLIP)
                for n in MATRIX_NAMES:
                    velocity[n] = hyper.momentum * velocity[n] - hyper.lr * grads[n]
                    getattr(params, n)[...] += velocity[n]
                epoch_losses.append(loss)
        curve.append(float(np.mean(epoch_losses)))
        if not np.isfinite(curve[-1]):
            raise TrainingDiverged(f"epoch {_epoch} mean loss {curve[-1]}")
    return params, curve


def residual_stds(params: LstmParams, sequences: list, floor: float = 1e-8
                  ) -> np.ndarray:
    """Per-dimension std of next-step prediction error on normal data."""
    residuals = []
    for seq in sequences:
        preds = predict_sequence(params, seq[:-1])
        residuals.append(preds - seq[1:])
    r = np.concatenate(residuals, axis=0)
    return np.maximum(r.std(axis=0), floor)


# ---------------------------------------------------------------------------
# compression

def prune(params: LstmParams, fraction: float) -> LstmParams:
    """Zero out the smallest-magnitude `fraction` of the W and U weights."""
    if not (0.0 <= fraction <= 0.95):
        raise InputError(f"prune fraction {fraction} outside [0, 0.95]")
    out = params.copy()
    if fraction == 0.0:
        return out
    flat = np.concatenate([out.W.ravel(), out.U.ravel()])
    nz_idx = np.nonzero(flat)[0]
    k = int(np.ceil(fraction * len(nz_idx)))
    if k == 0:
        return out
    order = np.argsort(np.abs(flat[nz_idx]), kind="stable")
    flat[nz_idx[order[:k]]] = 0.0
    nW = out.W.size
    out.W = flat[:nW].reshape(out.W.shape)
    out.U = flat[nW:].reshape(out.U.shape)
    return out


@dataclass
class QuantizedLstm:
    """Integer weights plus per-matrix scales; dequantizes for inference."""
    bits: int
    q: dict = field(default_factory=dict)       # name -> int array
    scales: dict = field(default_factory=dict)  # name -> float

    def dequantize(self) -> LstmParams:
        mats = {}
        for n in MATRIX_NAMES:
            mats[n] = self.q[n].astype(np.float64) * self.scales[n]
        return LstmParams(**mats)


def quantize(params: LstmParams, bits: int = 8) -> QuantizedLstm:
    """Per-matrix symmetric linear quantization."""
    if bits not in (4, 8, 16):
        raise InputError(f"bits must be one of 4, 8, 16; got {bits}")
    qmax = 2 ** (bits - 1) - 1
    out = QuantizedLstm(bits=bits)
    for n in MATRIX_NAMES:
        m = getattr(params, n)
        peak = float(np.max(np.abs(m))) if m.size else 0.0
        if peak == 0.0:
            out.q[n] = np.zeros(m.shape, dtype=np.int32)
            out.scales[n] = 0.0
        else:
            scale = peak / qmax
            out.q[n] = np.round(m / scale).astype(np.int32)
            out.scales[n] = scale
    return out
