"""Neural layers over the autodiff tensors.

Everything here is shape-polymorphic over an optional leading batch axis:
sequence inputs are either a single sentence [L, D] with an integer valid
length, or a batch [B, L, D] with a vector of valid lengths. Positions at or
beyond a sentence's valid length are treated as padding and never influence
outputs or gradients.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import (
    ContractError,
    DimensionError,
    EmptySequenceError,
    ParameterError,
    VocabularyError,
)
from .tensor import Tensor, make_op, sigmoid_values


def _lengths_vector(valid_length, batch: int, limit: int, name: str) -> np.ndarray:
    lens = np.asarray(valid_length, dtype=np.int64)
    if lens.ndim == 0:
        lens = np.full(batch, int(lens), dtype=np.int64)
    if lens.shape != (batch,):
        raise DimensionError(f"{name}: expected {batch} valid lengths, got shape {lens.shape}")
    if (lens < 1).any():
        raise EmptySequenceError(f"{name}: every valid length must be >= 1")
    if (lens > limit).any():
        raise DimensionError(f"{name}: valid length exceeds sequence length {limit}")
    return lens


class EmbeddingLayer:
    """Lookup table mapping token ids to vectors.

    Row `pad_index` is pinned to zero and never receives gradient, so padding
    ids stay inert even while the rest of the table is being fine-tuned.
    """

    def __init__(self, matrix: Tensor, trainable: bool, pad_index: int = 0):
        if matrix.ndim != 2:
            raise DimensionError(f"embedding matrix must be 2-d, got {matrix.shape}")
        matrix.requires_grad = bool(trainable)
        matrix.data[pad_index] = 0.0
        self.matrix = matrix
        self.trainable = bool(trainable)
        self.pad_index = pad_index

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def embed(layer: EmbeddingLayer, ids) -> Tensor:
    """Select embedding rows; `ids` may carry any leading shape."""
    ids = np.asarray(ids)
    if ids.size == 0:
        raise EmptySequenceError("embed: no ids given")
    if ids.min() < 0 or ids.max() >= layer.vocab_size:
        raise VocabularyError(f"embed: token id out of range [0, {layer.vocab_size})")
    m = layer.matrix
    pad = layer.pad_index

    def vjp(g):
        dm = np.zeros_like(m.data)
        np.add.at(dm, ids, g)
        dm[pad] = 0.0
        return (dm,)

    return make_op(m.data[ids], (m,), vjp)


def linear(w: Tensor, b: Tensor, x: Tensor) -> Tensor:
    """Affine map x @ w.T + b for x of shape [in] or [..., in]; w is [out, in]."""
    wd, bd, xd = w.data, b.data, x.data
    if wd.ndim != 2 or bd.shape != (wd.shape[0],):
        raise DimensionError(f"linear: weight {wd.shape} and bias {bd.shape} disagree")
    if xd.ndim == 0 or xd.shape[-1] != wd.shape[1]:
        raise DimensionError(f"linear: input {xd.shape} incompatible with weight {wd.shape}")
    out = xd @ wd.T + bd

    def vjp(g):
        gm = g.reshape(-1, wd.shape[0])
        xm = xd.reshape(-1, wd.shape[1])
        return (gm.T @ xm, gm.sum(axis=0), g @ wd)

    return make_op(out, (w, b, x), vjp)


class ConvBank:
    """One weight tensor per kernel height for valid 1-d convolution over time."""

    def __init__(self, kernel_heights, embed_dim: int, out_channels: int, rng: np.random.Generator):
        heights = tuple(sorted(set(int(k) for k in kernel_heights)))
        if not heights or heights[0] < 1:
            raise ParameterError(f"kernel heights must be positive, got {kernel_heights}")
        if out_channels < 1:
            raise ParameterError(f"out_channels must be >= 1, got {out_channels}")
        self.kernel_heights = heights
        self.out_channels = out_channels
        self.weights: dict[int, Tensor] = {}
        self.biases: dict[int, Tensor] = {}
        for k in heights:
            lim = 1.0 / np.sqrt(k * embed_dim)
            self.weights[k] = Tensor(rng.uniform(-lim, lim, (k, embed_dim, out_channels)), requires_grad=True)
            self.biases[k] = Tensor(np.zeros(out_channels), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        out = []
        for k in self.kernel_heights:
            out.extend([self.weights[k], self.biases[k]])
        return out


def conv1d_valid(bank: ConvBank, x: Tensor, k: int) -> Tensor:
    """Valid convolution with kernel height k: window t covers rows t .. t+k-1.

    Returns pre-activation feature maps of length L - k + 1.
    """
    if k not in bank.weights:
        raise ParameterError(f"conv1d_valid: bank has no kernel of height {k}")
    w, b = bank.weights[k], bank.biases[k]
    wd, bd = w.data, b.data
    xd = x.data
    batched = xd.ndim == 3
    if xd.ndim not in (2, 3):
        raise DimensionError(f"conv1d_valid: expected [L, D] or [B, L, D], got {xd.shape}")
    x3 = xd if batched else xd[None]
    B, L, D = x3.shape
    if D != wd.shape[1]:
        raise DimensionError(f"conv1d_valid: input width {D} != kernel width {wd.shape[1]}")
    if L < k:
        raise DimensionError(f"conv1d_valid: sequence length {L} shorter than kernel height {k}")
    span = L - k + 1
    acc = np.broadcast_to(bd, (B, span, bd.shape[0])).copy()
    for dt in range(k):
        acc += x3[:, dt:dt + span, :] @ wd[dt]

    def vjp(g):
        g3 = g if batched else g[None]
        dw = np.empty_like(wd)
        dx = np.zeros_like(x3)
        for dt in range(k):
            seg = x3[:, dt:dt + span, :]
            dw[dt] = np.tensordot(seg, g3, axes=([0, 1], [0, 1]))
            dx[:, dt:dt + span, :] += g3 @ wd[dt].T
        db = g3.sum(axis=(0, 1))
        return (dw, db, dx if batched else dx[0])

    return make_op(acc if batched else acc[0], (w, b, x), vjp)


def pool_time(x: Tensor, mode: str, valid_length) -> Tensor:
    """Per-channel max or mean over the first valid_length time rows.

    Max pooling excludes padded rows entirely and breaks ties toward the
    earliest row; avg pooling divides by the valid length, not the padded one.
    """
    xd = x.data
    batched = xd.ndim == 3
    if xd.ndim not in (2, 3):
        raise DimensionError(f"pool_time: expected [T, C] or [B, T, C], got {xd.shape}")
    x3 = xd if batched else xd[None]
    B, span, C = x3.shape
    lens = _lengths_vector(valid_length, B, span, "pool_time")
    valid = np.arange(span)[None, :] < lens[:, None]
    if mode == "max":
        masked = np.where(valid[:, :, None], x3, -np.inf)
        arg = masked.argmax(axis=1)
        out3 = np.take_along_axis(x3, arg[:, None, :], axis=1)[:, 0, :]

        def vjp(g):
            g3 = g if batched else g[None]
            dx = np.zeros_like(x3)
            np.put_along_axis(dx, arg[:, None, :], g3[:, None, :], axis=1)
            return (dx,) if batched else (dx[0],)

    elif mode == "avg":
        scale = (1.0 / lens).astype(x3.dtype)
        out3 = (x3 * valid[:, :, None]).sum(axis=1) * scale[:, None]

        def vjp(g):
            g3 = g if batched else g[None]
            dx = valid[:, :, None] * (g3[:, None, :] * scale[:, None, None])
            return (dx.astype(x3.dtype, copy=False),) if batched else (dx[0].astype(x3.dtype, copy=False),)

    else:
        raise ParameterError(f"pool_time: mode must be 'max' or 'avg', got {mode!r}")
    return make_op(out3 if batched else out3[0], (x,), vjp)


def mask_time(x: Tensor, lengths) -> Tensor:
    """Zero every time row at or beyond its sentence's valid length."""
    xd = x.data
    batched = xd.ndim == 3
    if xd.ndim not in (2, 3):
        raise DimensionError(f"mask_time: expected [L, F] or [B, L, F], got {xd.shape}")
    x3 = xd if batched else xd[None]
    B, L, _ = x3.shape
    lens = _lengths_vector(lengths, B, L, "mask_time")
    mask = (np.arange(L)[None, :] < lens[:, None]).astype(x3.dtype)[:, :, None]
    out3 = x3 * mask

    def vjp(g):
        g3 = g if batched else g[None]
        dx = g3 * mask
        return (dx,) if batched else (dx[0],)

    return make_op(out3 if batched else out3[0], (x,), vjp)


def _reverse_raw(arr: np.ndarray, lens: np.ndarray) -> np.ndarray:
    B, L, _ = arr.shape
    tpos = np.arange(L)[None, :]
    valid = tpos < lens[:, None]
    src = np.where(valid, lens[:, None] - 1 - tpos, 0)
    out = arr[np.arange(B)[:, None], src, :]
    out *= valid[:, :, None]
    return out


def reverse_valid(x: Tensor, lengths) -> Tensor:
    """Reverse each sentence's valid prefix along time; padded rows become zero.

    The map is its own inverse on the valid prefix, and its own adjoint, so the
    backward rule is the same reversal applied to the upstream gradient.
    """
    xd = x.data
    batched = xd.ndim == 3
    if xd.ndim not in (2, 3):
        raise DimensionError(f"reverse_valid: expected [L, F] or [B, L, F], got {xd.shape}")
    x3 = xd if batched else xd[None]
    B, L, _ = x3.shape
    lens = _lengths_vector(lengths, B, L, "reverse_valid")
    out3 = _reverse_raw(x3, lens)

    def vjp(g):
        g3 = g if batched else g[None]
        dx = _reverse_raw(g3, lens)
        return (dx,) if batched else (dx[0],)

    return make_op(out3 if batched else out3[0], (x,), vjp)


class RecurrentCell:
    """Gated recurrent state update, LSTM or GRU flavour.

    LSTM: i, f, o = sigmoid of gate slices, g = tanh slice, with gates =
    w_in x + b + h w_rec; then c' = f*c + i*g and h' = o*tanh(c'). The forget
    gate bias starts at 1 so early training does not flush the cell state.

    GRU: z, r = sigmoid(...); candidate = tanh(w_in_n x + b_n + (r*h) u_cand);
    h' = (1-z)*h + z*candidate.
    """

    GATE_ORDER_LSTM = ("input", "forget", "candidate", "output")

    def __init__(self, kind: str, input_size: int, hidden_size: int, rng: np.random.Generator):
        kind = kind.lower()
        if kind not in ("lstm", "gru"):
            raise ParameterError(f"cell kind must be 'lstm' or 'gru', got {kind!r}")
        if input_size < 1 or hidden_size < 1:
            raise ParameterError("input_size and hidden_size must be >= 1")
        self.kind = kind
        self.input_size = input_size
        self.hidden_size = hidden_size
        H = hidden_size
        self.gate_width = 4 * H if kind == "lstm" else 3 * H
        lim_in = 1.0 / np.sqrt(input_size)
        lim_h = 1.0 / np.sqrt(H)
        # w_in is laid out [gates, in] so the input projection is a `linear`;
        # hidden-side weights are [H, gates] so the recurrence is h @ w.
        self.w_in = Tensor(rng.uniform(-lim_in, lim_in, (self.gate_width, input_size)), requires_grad=True)
        if kind == "lstm":
            self.w_rec = Tensor(rng.uniform(-lim_h, lim_h, (H, 4 * H)), requires_grad=True)
            bias = np.zeros(4 * H)
            bias[H:2 * H] = 1.0
            self.bias = Tensor(bias, requires_grad=True)
        else:
            self.u_gates = Tensor(rng.uniform(-lim_h, lim_h, (H, 2 * H)), requires_grad=True)
            self.u_cand = Tensor(rng.uniform(-lim_h, lim_h, (H, H)), requires_grad=True)
            self.bias = Tensor(np.zeros(3 * H), requires_grad=True)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        if self.kind == "lstm":
            return [("w_in", self.w_in), ("w_rec", self.w_rec), ("bias", self.bias)]
        return [("w_in", self.w_in), ("u_gates", self.u_gates), ("u_cand", self.u_cand), ("bias", self.bias)]

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def _lstm_core(cell: RecurrentCell, gx: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    H = cell.hidden_size
    gates = T.add(gx, T.matmul(h, cell.w_rec))
    i = T.sigmoid(T.narrow(gates, 1, 0, H))
    f = T.sigmoid(T.narrow(gates, 1, H, H))
    g = T.tanh(T.narrow(gates, 1, 2 * H, H))
    o = T.sigmoid(T.narrow(gates, 1, 3 * H, H))
    c2 = T.add(T.mul(f, c), T.mul(i, g))
    h2 = T.mul(o, T.tanh(c2))
    return h2, c2


def _gru_core(cell: RecurrentCell, gx: Tensor, h: Tensor) -> Tensor:
    H = cell.hidden_size
    hz = T.matmul(h, cell.u_gates)
    z = T.sigmoid(T.add(T.narrow(gx, 1, 0, H), T.narrow(hz, 1, 0, H)))
    r = T.sigmoid(T.add(T.narrow(gx, 1, H, H), T.narrow(hz, 1, H, H)))
    cand = T.tanh(T.add(T.narrow(gx, 1, 2 * H, H), T.matmul(T.mul(r, h), cell.u_cand)))
    return T.add(T.mul(T.sub(1.0, z), h), T.mul(z, cand))


def _lift_state(name: str, t: Tensor, width: int) -> tuple[Tensor, bool]:
    if t.ndim == 1:
        if t.shape[0] != width:
            raise DimensionError(f"{name}: expected width {width}, got {t.shape}")
        return T.reshape(t, (1, width)), False
    if t.ndim == 2:
        if t.shape[1] != width:
            raise DimensionError(f"{name}: expected width {width}, got {t.shape}")
        return t, True
    raise DimensionError(f"{name}: expected rank 1 or 2, got {t.shape}")


def lstm_step(cell: RecurrentCell, x_t: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM update; accepts single vectors or [B, ...] batches."""
    if cell.kind != "lstm":
        raise ContractError(f"lstm_step: cell kind is {cell.kind!r}")
    x2, batched = _lift_state("lstm_step input", x_t, cell.input_size)
    h2, hb = _lift_state("lstm_step hidden", h, cell.hidden_size)
    c2, cb = _lift_state("lstm_step cell state", c, cell.hidden_size)
    if not (batched == hb == cb):
        raise DimensionError("lstm_step: mixed batched and unbatched arguments")
    gx = linear(cell.w_in, cell.bias, x2)
    hn, cn = _lstm_core(cell, gx, h2, c2)
    if batched:
        return hn, cn
    H = cell.hidden_size
    return T.reshape(hn, (H,)), T.reshape(cn, (H,))


def gru_step(cell: RecurrentCell, x_t: Tensor, h: Tensor) -> Tensor:
    """One GRU update; accepts single vectors or [B, ...] batches."""
    if cell.kind != "gru":
        raise ContractError(f"gru_step: cell kind is {cell.kind!r}")
    x2, batched = _lift_state("gru_step input", x_t, cell.input_size)
    h2, hb = _lift_state("gru_step hidden", h, cell.hidden_size)
    if batched != hb:
        raise DimensionError("gru_step: mixed batched and unbatched arguments")
    gx = linear(cell.w_in, cell.bias, x2)
    hn = _gru_core(cell, gx, h2)
    return hn if batched else T.reshape(hn, (cell.hidden_size,))


def _lstm_scan(cell: RecurrentCell, proj3: Tensor) -> Tensor:
    """Unrolled LSTM over precomputed input projections, as one fused op.

    Running the step loop in plain numpy and backpropagating through time with
    a hand-written rule keeps the graph one node per sequence instead of a
    dozen per step. The composed `lstm_step` path is the reference for it.
    """
    w = cell.w_rec
    wd = w.data
    pd = proj3.data
    B, L, G = pd.shape
    H = cell.hidden_size
    h = np.zeros((B, H), dtype=pd.dtype)
    c = np.zeros((B, H), dtype=pd.dtype)
    cache = []
    hs = np.empty((B, L, H), dtype=pd.dtype)
    for t in range(L):
        gates = pd[:, t, :] + h @ wd
        i = sigmoid_values(gates[:, :H])
        f = sigmoid_values(gates[:, H:2 * H])
        g = np.tanh(gates[:, 2 * H:3 * H])
        o = sigmoid_values(gates[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        cache.append((h, c, i, f, g, o, tc))
        h = o * tc
        c = c_new
        hs[:, t, :] = h

    def vjp(up):
        dproj = np.zeros_like(pd)
        dw = np.zeros_like(wd)
        dh = np.zeros((B, H), dtype=pd.dtype)
        dc = np.zeros((B, H), dtype=pd.dtype)
        for t in range(L - 1, -1, -1):
            h_prev, c_prev, i, f, g, o, tc = cache[t]
            dh = dh + up[:, t, :]
            da_o = dh * tc * o * (1.0 - o)
            dc = dc + dh * o * (1.0 - tc * tc)
            da_f = dc * c_prev * f * (1.0 - f)
            da_i = dc * g * i * (1.0 - i)
            da_g = dc * i * (1.0 - g * g)
            da = np.concatenate([da_i, da_f, da_g, da_o], axis=1)
            dproj[:, t, :] = da
            dw += h_prev.T @ da
            dh = da @ wd.T
            dc = dc * f
        return (dproj, dw)

    return make_op(hs, (proj3, w), vjp)


def _gru_scan(cell: RecurrentCell, proj3: Tensor) -> Tensor:
    """Unrolled GRU over precomputed input projections, as one fused op."""
    ug, uc = cell.u_gates, cell.u_cand
    ugd, ucd = ug.data, uc.data
    pd = proj3.data
    B, L, G = pd.shape
    H = cell.hidden_size
    h = np.zeros((B, H), dtype=pd.dtype)
    cache = []
    hs = np.empty((B, L, H), dtype=pd.dtype)
    for t in range(L):
        hz = h @ ugd
        z = sigmoid_values(pd[:, t, :H] + hz[:, :H])
        r = sigmoid_values(pd[:, t, H:2 * H] + hz[:, H:])
        rh = r * h
        n = np.tanh(pd[:, t, 2 * H:] + rh @ ucd)
        cache.append((h, z, r, rh, n))
        h = (1.0 - z) * h + z * n
        hs[:, t, :] = h

    def vjp(up):
        dproj = np.zeros_like(pd)
        dug = np.zeros_like(ugd)
        duc = np.zeros_like(ucd)
        dh = np.zeros((B, H), dtype=pd.dtype)
        for t in range(L - 1, -1, -1):
            h_prev, z, r, rh, n = cache[t]
            dh = dh + up[:, t, :]
            dz = dh * (n - h_prev)
            da_z = dz * z * (1.0 - z)
            dq = dh * z * (1.0 - n * n)
            duc += rh.T @ dq
            drh = dq @ ucd.T
            da_r = drh * h_prev * r * (1.0 - r)
            dproj[:, t, :H] = da_z
            dproj[:, t, H:2 * H] = da_r
            dproj[:, t, 2 * H:] = dq
            da_gates = np.concatenate([da_z, da_r], axis=1)
            dug += h_prev.T @ da_gates
            dh = dh * (1.0 - z) + drh * r + da_gates @ ugd.T
        return (dproj, dug, duc)

    return make_op(hs, (proj3, ug, uc), vjp)


def run_rnn(cell: RecurrentCell, xs: Tensor, direction: str, valid_length) -> Tensor:
    """All hidden states over a padded sequence; initial states are zero.

    direction 'backward' consumes the valid prefix in reverse, so row t holds
    the state after reading positions valid_length-1 .. t. Rows at padded
    positions are zero in either direction.
    """
    if direction not in ("forward", "backward"):
        raise ParameterError(f"run_rnn: direction must be 'forward' or 'backward', got {direction!r}")
    batched = xs.ndim == 3
    if xs.ndim not in (2, 3):
        raise DimensionError(f"run_rnn: expected [L, D] or [B, L, D], got {xs.shape}")
    x3 = xs if batched else T.reshape(xs, (1,) + xs.shape)
    B, L, D = x3.shape
    if D != cell.input_size:
        raise DimensionError(f"run_rnn: input width {D} != cell input size {cell.input_size}")
    lens = _lengths_vector(valid_length, B, L, "run_rnn")
    if direction == "backward":
        x3 = reverse_valid(x3, lens)
    H, G = cell.hidden_size, cell.gate_width
    proj = linear(cell.w_in, cell.bias, T.reshape(x3, (B * L, D)))
    proj3 = T.reshape(proj, (B, L, G))
    hs = _lstm_scan(cell, proj3) if cell.kind == "lstm" else _gru_scan(cell, proj3)
    hs = mask_time(hs, lens)
    if direction == "backward":
        hs = reverse_valid(hs, lens)
    return hs if batched else T.reshape(hs, (L, H))


def bidirectional(cell_fwd: RecurrentCell, cell_bwd: RecurrentCell, xs: Tensor, valid_length) -> Tensor:
    """Per-position concatenation [forward states ; backward states]."""
    if cell_fwd.hidden_size != cell_bwd.hidden_size:
        raise DimensionError(
            f"bidirectional: hidden sizes disagree ({cell_fwd.hidden_size} vs {cell_bwd.hidden_size})"
        )
    hf = run_rnn(cell_fwd, xs, "forward", valid_length)
    hb = run_rnn(cell_bwd, xs, "backward", valid_length)
    return T.concat([hf, hb], axis=-1)


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero units with probability p, scale survivors by 1/(1-p).

    In eval mode (or with p = 0) the input is returned untouched, so composing
    eval dropouts is the identity.
    """
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout: probability must lie in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ParameterError(f"dropout: mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout: train mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return make_op(x.data * keep, (x,), lambda g: (g * keep,))


def bce_loss(logit: Tensor, label) -> Tensor:
    """Bernoulli negative log likelihood of `label` under sigmoid(logit).

    Computed in the max(z,0) - z*y + log1p(exp(-|z|)) form, which stays finite
    for logits of any magnitude. The gradient is sigmoid(logit) - label.
    """
    z = logit.data
    y = np.asarray(label, dtype=z.dtype)
    if y.shape != z.shape:
        if y.size == z.size:
            y = y.reshape(z.shape)
        else:
            raise DimensionError(f"bce_loss: logit shape {z.shape} vs label shape {y.shape}")
    out = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return make_op(out, (logit,), lambda g: (g * (sigmoid_values(z) - y),))
