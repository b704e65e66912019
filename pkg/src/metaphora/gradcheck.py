"""Self-test that every backward rule matches central finite differences.

Two layers of coverage: per-operation checks on small randomized shapes (many
trials each), and end-to-end checks of each full architecture at several
sentence lengths, differentiating through the whole network with respect to
the embedding table, the heads, and (at the shortest length) every parameter.

Everything runs in float64 with eps=1e-3 against a 1e-4 relative-error
tolerance. Inputs are conditioned away from ReLU kinks and max-pool ties so
the finite-difference reference itself is trustworthy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from . import tensor as T
from .embeddings import EmbeddingMatrix
from .models import ModelConfig, build
from .tensor import Tensor

TOLERANCE = 1e-4
EPS = 1e-3


def _const(rng: np.random.Generator, shape) -> Tensor:
    """Fixed random mixing weights: make scalar losses sensitive to every output."""
    return Tensor(rng.uniform(0.2, 1.0, shape) * rng.choice([-1.0, 1.0], shape), dtype=np.float64)


def _var(rng: np.random.Generator, shape, scale: float = 1.0) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, shape), requires_grad=True, dtype=np.float64)


def _check(forward_fn: Callable[[], Tensor], tensors) -> float:
    return T.check_gradients(forward_fn, tensors, eps=EPS)


def _check_add(rng) -> float:
    n = int(rng.integers(2, 6))
    a, b = _var(rng, (n, 3)), _var(rng, (n, 3))
    w = _const(rng, (n, 3))
    return _check(lambda: (T.mul(T.add(a, b), w).sum() + T.add(a, 0.7).sum()), [a, b])


def _check_sub(rng) -> float:
    n = int(rng.integers(2, 6))
    a, b = _var(rng, (n,)), _var(rng, (n,))
    w = _const(rng, (n,))
    return _check(lambda: (T.mul(T.sub(a, b), w).sum() + T.sub(1.5, a).sum()), [a, b])


def _check_mul(rng) -> float:
    n = int(rng.integers(2, 6))
    a, b = _var(rng, (2, n)), _var(rng, (2, n))
    return _check(lambda: (T.mul(a, b).sum() + T.mul(a, -0.4).sum()), [a, b])


def _check_matmul(rng) -> float:
    m, k, n = (int(rng.integers(2, 5)) for _ in range(3))
    a, b, v = _var(rng, (m, k)), _var(rng, (k, n)), _var(rng, (k,))
    w = _const(rng, (m, n))
    u = _const(rng, (m,))
    return _check(
        lambda: T.add(T.mul(T.matmul(a, b), w).sum(), T.mul(T.matmul(a, v), u).sum()),
        [a, b, v],
    )


def _check_tanh(rng) -> float:
    x = _var(rng, (3, 4), scale=2.0)
    w = _const(rng, (3, 4))
    return _check(lambda: T.mul(T.tanh(x), w).sum(), [x])


def _check_sigmoid(rng) -> float:
    x = _var(rng, (3, 4), scale=3.0)
    w = _const(rng, (3, 4))
    return _check(lambda: T.mul(T.sigmoid(x), w).sum(), [x])


def _check_relu(rng) -> float:
    data = rng.uniform(-1.0, 1.0, (4, 3))
    data += np.where(data >= 0, 0.06, -0.06)  # keep eps well clear of the kink
    x = Tensor(data, requires_grad=True, dtype=np.float64)
    w = _const(rng, (4, 3))
    return _check(lambda: T.mul(T.relu(x), w).sum(), [x])


def _check_concat(rng) -> float:
    parts = [_var(rng, (int(rng.integers(1, 4)), 3)) for _ in range(3)]
    total = sum(p.shape[0] for p in parts)
    w = _const(rng, (total, 3))
    return _check(lambda: T.mul(T.concat(parts, axis=0), w).sum(), parts)


def _check_narrow(rng) -> float:
    x = _var(rng, (5, 4))
    start = int(rng.integers(0, 3))
    w = _const(rng, (2, 4))
    return _check(lambda: T.mul(T.narrow(x, 0, start, 2), w).sum(), [x])


def _check_reshape(rng) -> float:
    x = _var(rng, (3, 4))
    w = _const(rng, (6, 2))
    return _check(lambda: T.mul(T.reshape(x, (6, 2)), w).sum(), [x])


def _check_sum(rng) -> float:
    x = _var(rng, (int(rng.integers(2, 6)), 3))
    return _check(lambda: T.mul(x, 0.7).sum(), [x])


def _check_mean(rng) -> float:
    x = _var(rng, (int(rng.integers(2, 6)), 2))
    return _check(lambda: T.mul(x, x).mean(), [x])


def _check_linear(rng) -> float:
    out_f, in_f, b = int(rng.integers(2, 5)), int(rng.integers(2, 5)), int(rng.integers(1, 4))
    w = _var(rng, (out_f, in_f))
    bias = _var(rng, (out_f,))
    x = _var(rng, (b, in_f))
    mix = _const(rng, (b, out_f))
    return _check(lambda: T.mul(nn.linear(w, bias, x), mix).sum(), [w, bias, x])


def _check_embed(rng) -> float:
    vocab, dim, n = 8, 3, 6
    matrix = Tensor(rng.uniform(-1, 1, (vocab, dim)), dtype=np.float64)
    layer = nn.EmbeddingLayer(matrix, trainable=True)
    ids = rng.integers(1, vocab, n)  # repeats allowed; pad excluded
    w = _const(rng, (n, dim))
    return _check(lambda: T.mul(nn.embed(layer, ids), w).sum(), [layer.matrix])


def _check_conv(rng) -> float:
    k = int(rng.integers(1, 4))
    L = k + int(rng.integers(1, 4))
    D, C = 3, 2
    bank = nn.ConvBank((k,), D, C, rng)
    x = _var(rng, (L, D))
    w = _const(rng, (L - k + 1, C))
    return _check(
        lambda: T.mul(nn.conv1d_valid(bank, x, k), w).sum(),
        [bank.weights[k], bank.biases[k], x],
    )


def _spread_max(data: np.ndarray, lens: np.ndarray) -> None:
    """Push each channel's valid max 0.1 clear of the runner-up (in place)."""
    arr = data if data.ndim == 3 else data[None]
    for b in range(arr.shape[0]):
        v = int(lens[b])
        for c in range(arr.shape[2]):
            col = arr[b, :v, c]
            if v > 1:
                top2 = np.sort(col)[-2:]
                if top2[1] - top2[0] < 0.05:
                    col[col.argmax()] += 0.1


def _check_pool_max(rng) -> float:
    B, L, C = 2, 5, 3
    lens = rng.integers(1, L + 1, B)
    data = rng.uniform(-1, 1, (B, L, C))
    _spread_max(data, lens)
    x = Tensor(data, requires_grad=True, dtype=np.float64)
    w = _const(rng, (B, C))
    return _check(lambda: T.mul(nn.pool_time(x, "max", lens), w).sum(), [x])


def _check_pool_avg(rng) -> float:
    L, C = 5, 3
    v = int(rng.integers(1, L + 1))
    x = _var(rng, (L, C))
    w = _const(rng, (C,))
    return _check(lambda: T.mul(nn.pool_time(x, "avg", v), w).sum(), [x])


def _check_mask(rng) -> float:
    B, L, F = 2, 5, 3
    lens = rng.integers(1, L + 1, B)
    x = _var(rng, (B, L, F))
    w = _const(rng, (B, L, F))
    return _check(lambda: T.mul(nn.mask_time(x, lens), w).sum(), [x])


def _check_reverse(rng) -> float:
    B, L, F = 2, 5, 3
    lens = rng.integers(1, L + 1, B)
    x = _var(rng, (B, L, F))
    w = _const(rng, (B, L, F))
    return _check(lambda: T.mul(nn.reverse_valid(x, lens), w).sum(), [x])


def _check_lstm_step(rng) -> float:
    D = H = 2
    cell = nn.RecurrentCell("lstm", D, H, rng)
    x, h, c = _var(rng, (D,)), _var(rng, (H,), 0.5), _var(rng, (H,), 0.5)
    w1, w2 = _const(rng, (H,)), _const(rng, (H,))

    def forward():
        hn, cn = nn.lstm_step(cell, x, h, c)
        return T.add(T.mul(hn, w1).sum(), T.mul(cn, w2).sum())

    return _check(forward, [x, h, c] + cell.parameters())


def _check_gru_step(rng) -> float:
    D = H = 2
    cell = nn.RecurrentCell("gru", D, H, rng)
    x, h = _var(rng, (D,)), _var(rng, (H,), 0.5)
    w = _const(rng, (H,))
    return _check(lambda: T.mul(nn.gru_step(cell, x, h), w).sum(), [x, h] + cell.parameters())


def _run_rnn_trial(rng, direction: str) -> float:
    kind = "lstm" if rng.random() < 0.5 else "gru"
    D, H, L = 2, 2, int(rng.integers(2, 5))
    cell = nn.RecurrentCell(kind, D, H, rng)
    v = int(rng.integers(1, L + 1))
    xs = _var(rng, (L, D))
    w = _const(rng, (L, H))
    return _check(
        lambda: T.mul(nn.run_rnn(cell, xs, direction, v), w).sum(),
        [xs] + cell.parameters(),
    )


def _check_run_forward(rng) -> float:
    return _run_rnn_trial(rng, "forward")


def _check_run_backward(rng) -> float:
    return _run_rnn_trial(rng, "backward")


def _check_bidirectional(rng) -> float:
    kind = "lstm" if rng.random() < 0.5 else "gru"
    D, H, B, L = 2, 2, 2, 3
    fwd = nn.RecurrentCell(kind, D, H, rng)
    bwd = nn.RecurrentCell(kind, D, H, rng)
    lens = rng.integers(1, L + 1, B)
    xs = _var(rng, (B, L, D))
    w = _const(rng, (B, L, 2 * H))
    return _check(
        lambda: T.mul(nn.bidirectional(fwd, bwd, xs, lens), w).sum(),
        [xs] + fwd.parameters() + bwd.parameters(),
    )


def _check_dropout(rng) -> float:
    x = _var(rng, (4, 3))
    w = _const(rng, (4, 3))
    p = float(rng.uniform(0.2, 0.6))
    seed = int(rng.integers(2**31))
    return _check(
        lambda: T.mul(nn.dropout(x, p, "train", np.random.default_rng(seed)), w).sum(),
        [x],
    )


def _check_bce(rng) -> float:
    n = int(rng.integers(1, 5))
    z = _var(rng, (n,), scale=3.0)
    y = rng.integers(0, 2, n).astype(np.float64)
    return _check(lambda: nn.bce_loss(z, y).mean(), [z])


_E2E_VOCAB = 11
_E2E_DIM = 4
_E2E_MAX_LEN = 12


def _e2e_config(arch: str, seed: int) -> ModelConfig:
    return ModelConfig(
        architecture=arch,
        embedding_dim=_E2E_DIM,
        max_len=_E2E_MAX_LEN,
        kernel_heights=(2, 3),
        out_channels=3,
        hidden_size=3,
        fc_units=3,
        dropout_p=0.0,
        seed=seed,
    )


def _e2e_model(arch: str, seed: int):
    values = np.zeros((_E2E_VOCAB, _E2E_DIM))
    values[1:] = np.random.default_rng(seed + 1).uniform(-0.5, 0.5, (_E2E_VOCAB - 1, _E2E_DIM))
    return build(_e2e_config(arch, seed), EmbeddingMatrix(values, coverage=0.0))


def _gap_ok(values: np.ndarray, margin: float) -> bool:
    """Per column, is the max at least `margin` above the runner-up?"""
    if values.shape[0] < 2:
        return True
    top2 = np.sort(values, axis=0)[-2:]
    return bool((top2[1] - top2[0] > margin).all())


def _relu_pool_ok(pre: np.ndarray, margin: float) -> bool:
    """Pooled-ReLU columns are safe if no pre-activation sits near the kink and
    a positive winner leads the runner-up clearly (an all-clipped column is
    exactly zero on both sides of any small perturbation)."""
    if (np.abs(pre) < margin).any():
        return False
    post = np.maximum(pre, 0.0)
    for c in range(post.shape[1]):
        col = post[:, c]
        if col.shape[0] > 1 and col.max() > 0.0:
            top2 = np.sort(col)[-2:]
            if top2[1] - top2[0] <= margin:
                return False
    return True


def _fd_margin(length: int) -> float:
    """Minimum clearance from kinks/ties so an eps-perturbation of any checked
    coordinate cannot cross one: state sensitivity grows with sequence length."""
    return EPS * (4.0 + 2.0 * length)


def _well_conditioned(model, ids: np.ndarray, length: int) -> bool:
    """Reject draws whose finite differences would straddle a kink or a tie."""
    margin = _fd_margin(length)
    cfg = model.config
    with T.no_grad():
        if cfg.architecture == "cnn":
            e = model._embed_masked(ids[None, :], np.array([length]))
            for k in cfg.kernel_heights:
                pre = nn.conv1d_valid(model.conv, e, k).data[0]
                windows = min(length, pre.shape[0])
                if not _relu_pool_ok(pre[:windows], margin):
                    return False
            return True
        if cfg.architecture in ("bilstm", "bigru"):
            e = model._embed_masked(ids[None, :], np.array([length]))
            states = nn.bidirectional(model.cell_fwd, model.cell_bwd, e, np.array([length]))
            if not _gap_ok(states.data[0, :length], margin):
                return False
            pooled = nn.pool_time(states, cfg.pooling, np.array([length]))
            pre = nn.linear(model.w_fc, model.b_fc, pooled).data
            return bool((np.abs(pre) > margin).all())
        y = model._semantic(ids[None, :], np.array([length]))
        return _gap_ok(y.data[0, :length], margin)


def _arch_trial(rng, arch: str, length: int, full_params: bool) -> float:
    base = int(rng.integers(2**31))
    for attempt in range(500):
        seed = base + 1000 * attempt
        model = _e2e_model(arch, seed)
        id_rng = np.random.default_rng(seed + 2)
        ids = np.zeros(_E2E_MAX_LEN, dtype=np.int64)
        ids[:length] = id_rng.integers(2, _E2E_VOCAB, length)
        if _well_conditioned(model, ids, length):
            break
    if full_params:
        tensors = [p for _, p in model.named_parameters()]
    else:
        keep = ("embedding", "fc.", "out.", "proj.")
        tensors = [p for name, p in model.named_parameters() if name.startswith(keep)]
    return _check(lambda: model.forward(ids, length, mode="eval"), tensors)


@dataclass(frozen=True)
class CheckCase:
    """One named gradient check: a trial function and how often to repeat it."""

    name: str
    fn: Callable[[np.random.Generator], float]
    trials: int


@dataclass(frozen=True)
class CheckOutcome:
    name: str
    trials: int
    max_rel_err: float
    passed: bool
    seconds: float


@dataclass(frozen=True)
class GradCheckReport:
    outcomes: list[CheckOutcome]
    seconds: float

    @property
    def all_passed(self) -> bool:
        return all(o.passed for o in self.outcomes)

    @property
    def failures(self) -> list[CheckOutcome]:
        return [o for o in self.outcomes if not o.passed]

    def format(self) -> str:
        lines = []
        for o in self.outcomes:
            mark = "ok  " if o.passed else "FAIL"
            lines.append(
                f"[{mark}] {o.name:<24s} rel_err={o.max_rel_err:.3e} trials={o.trials} ({o.seconds:.2f}s)"
            )
        n_fail = len(self.failures)
        if n_fail:
            lines.append(f"{n_fail} of {len(self.outcomes)} checks FAILED (tolerance {TOLERANCE:g})")
        else:
            lines.append(
                f"all {len(self.outcomes)} checks passed (tolerance {TOLERANCE:g}, {self.seconds:.1f}s)"
            )
        return "\n".join(lines)


_OP_CHECKS: tuple[tuple[str, Callable], ...] = (
    ("tensor.add", _check_add),
    ("tensor.sub", _check_sub),
    ("tensor.mul", _check_mul),
    ("tensor.matmul", _check_matmul),
    ("tensor.tanh", _check_tanh),
    ("tensor.sigmoid", _check_sigmoid),
    ("tensor.relu", _check_relu),
    ("tensor.concat", _check_concat),
    ("tensor.narrow", _check_narrow),
    ("tensor.reshape", _check_reshape),
    ("tensor.sum", _check_sum),
    ("tensor.mean", _check_mean),
    ("nn.linear", _check_linear),
    ("nn.embed", _check_embed),
    ("nn.conv1d_valid", _check_conv),
    ("nn.pool_time.max", _check_pool_max),
    ("nn.pool_time.avg", _check_pool_avg),
    ("nn.mask_time", _check_mask),
    ("nn.reverse_valid", _check_reverse),
    ("nn.lstm_step", _check_lstm_step),
    ("nn.gru_step", _check_gru_step),
    ("nn.run_rnn.forward", _check_run_forward),
    ("nn.run_rnn.backward", _check_run_backward),
    ("nn.bidirectional", _check_bidirectional),
    ("nn.dropout", _check_dropout),
    ("nn.bce_loss", _check_bce),
)

_E2E_LENGTHS = (3, 7, 12)  # largest kernel, a middling length, the typical median


def build_cases(op_trials: int = 100, arch_trials: int = 2) -> list[CheckCase]:
    """The full registry: per-op checks plus end-to-end architecture checks."""
    cases = [CheckCase(name, fn, op_trials) for name, fn in _OP_CHECKS]
    for arch in ("cnn", "bilstm", "bigru", "crnn"):
        for length in _E2E_LENGTHS:
            full = arch == "cnn" or length == min(_E2E_LENGTHS)

            def fn(rng, arch=arch, length=length, full=full):
                return _arch_trial(rng, arch, length, full)

            cases.append(CheckCase(f"model.{arch}.len{length}", fn, arch_trials))
    return cases


def run_all(
    seed: int = 0,
    tol: float = TOLERANCE,
    op_trials: int = 100,
    arch_trials: int = 2,
    names: list[str] | None = None,
) -> GradCheckReport:
    """Run the registry (optionally filtered by substring) and report per-case
    worst relative errors. Always runs in float64."""
    indexed = list(enumerate(build_cases(op_trials, arch_trials)))
    if names:
        indexed = [(i, c) for i, c in indexed if any(n in c.name for n in names)]
    prev = T.get_default_dtype()
    T.set_default_dtype(np.float64)
    started = time.perf_counter()
    outcomes = []
    try:
        for idx, case in indexed:
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(idx,)))
            t0 = time.perf_counter()
            worst = 0.0
            for _ in range(case.trials):
                worst = max(worst, case.fn(rng))
            outcomes.append(
                CheckOutcome(
                    name=case.name,
                    trials=case.trials,
                    max_rel_err=worst,
                    passed=worst < tol,
                    seconds=time.perf_counter() - t0,
                )
            )
    finally:
        T.set_default_dtype(prev)
    return GradCheckReport(outcomes=outcomes, seconds=time.perf_counter() - started)
