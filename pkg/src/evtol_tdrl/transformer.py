"""Causal encoder-only transformer over normalized (P, theta) control sequences.

Each position emits a diagonal Gaussian over the next action.  Training uses
teacher forcing; generation and online proposals are autoregressive.  The
incremental decoder caches keys and values so that proposing the next action
during an episode costs O(history) rather than a full forward pass.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Adam, Tape, Tensor
from .errors import ContractViolation, NumericalFailure
from .nn import Linear, Module, param

log = logging.getLogger(__name__)

PAD_VALUE = 7.0
LOG_2PI = math.log(2.0 * math.pi)
MIN_VARIANCE = 1e-8


@dataclass(frozen=True)
class TransformerConfig:
    input_dim: int = 2
    d_model: int = 64
    d_k: int = 64
    d_v: int = 64
    heads: int = 4
    layers: int = 2
    dropout: float = 0.1
    max_len: int = 400
    lr: float = 1e-4
    batch_size: int = 64
    epochs: int = 100
    feedforward: bool = False
    d_ff: int = 256
    logvar_min: float = -10.0
    logvar_max: float = 4.0

    def __post_init__(self) -> None:
        if self.d_model % self.heads:
            raise ContractViolation("d_model must be divisible by heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractViolation("dropout must lie in [0, 1)")
        for name in ("input_dim", "d_model", "d_k", "d_v", "heads", "layers", "max_len", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def expected_parameter_count(cfg: TransformerConfig) -> int:
    d, h = cfg.d_model, cfg.heads
    embed = cfg.input_dim * d + d
    attn = d * h * cfg.d_k * 2 + d * h * cfg.d_v + h * cfg.d_v * d
    norm = 2 * d
    ff = (d * cfg.d_ff + cfg.d_ff + cfg.d_ff * d + d + 2 * d) if cfg.feedforward else 0
    head = d * 2 * cfg.input_dim + 2 * cfg.input_dim
    return embed + cfg.layers * (attn + norm + ff) + head


def positional_encoding(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i2 = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i2 / d)
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


def causal_mask(n: int) -> np.ndarray:
    """True where attention is allowed (lower triangle including the diagonal)."""
    return np.tril(np.ones((n, n), dtype=bool))


class AttentionBlock(Module):
    """Masked multi-head self-attention with residual and post layer norm."""

    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator) -> None:
        d, h = cfg.d_model, cfg.heads
        b_in = 1.0 / math.sqrt(d)
        b_out = 1.0 / math.sqrt(h * cfg.d_v)
        self.w_q = param(rng.uniform(-b_in, b_in, (d, h * cfg.d_k)))
        self.w_k = param(rng.uniform(-b_in, b_in, (d, h * cfg.d_k)))
        self.w_v = param(rng.uniform(-b_in, b_in, (d, h * cfg.d_v)))
        self.w_o = param(rng.uniform(-b_out, b_out, (h * cfg.d_v, d)))
        self.ln_gain = param(np.ones(d))
        self.ln_bias = param(np.zeros(d))
        if cfg.feedforward:
            self.ff_in = Linear(d, cfg.d_ff, rng)
            self.ff_out = Linear(cfg.d_ff, d, rng)
            self.ln2_gain = param(np.ones(d))
            self.ln2_bias = param(np.zeros(d))
        self.cfg = cfg

    def _split(self, x: Tensor, width: int) -> Tensor:
        b, n, _ = x.shape
        return x.reshape(b, n, self.cfg.heads, width).transpose(0, 2, 1, 3)

    def attention_weights(self, x: Tensor) -> Tensor:
        """Per-head attention matrices, shape (batch, heads, n, n)."""
        n = x.shape[1]
        q = self._split(ad.matmul(x, self.w_q), self.cfg.d_k)
        k = self._split(ad.matmul(x, self.w_k), self.cfg.d_k)
        scores = ad.mul(ad.matmul(q, k.transpose(0, 1, 3, 2)), 1.0 / math.sqrt(self.cfg.d_k))
        return ad.softmax(scores, mask=causal_mask(n))

    def __call__(self, x: Tensor, training: bool, rng) -> Tensor:
        cfg = self.cfg
        b, n, _ = x.shape
        v = self._split(ad.matmul(x, self.w_v), cfg.d_v)
        attn = self.attention_weights(x)
        heads = ad.matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, n, cfg.heads * cfg.d_v)
        out = ad.dropout(ad.matmul(heads, self.w_o), cfg.dropout, rng, training)
        x = ad.add(ad.mul(ad.layer_norm(ad.add(x, out)), self.ln_gain), self.ln_bias)
        if cfg.feedforward:
            hid = ad.relu(self.ff_in(x))
            out = ad.dropout(self.ff_out(hid), cfg.dropout, rng, training)
            x = ad.add(ad.mul(ad.layer_norm(ad.add(x, out)), self.ln2_gain), self.ln2_bias)
        return x


class TrajectoryTransformer(Module):
    def __init__(self, cfg: TransformerConfig | None = None, seed: int = 0) -> None:
        self.cfg = cfg or TransformerConfig()
        rng = np.random.default_rng(seed)
        self.embed = Linear(self.cfg.input_dim, self.cfg.d_model, rng)
        self.blocks = [AttentionBlock(self.cfg, rng) for _ in range(self.cfg.layers)]
        self.head = Linear(self.cfg.d_model, 2 * self.cfg.input_dim, rng)
        self._pe = positional_encoding(self.cfg.max_len, self.cfg.d_model)

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """``x`` of shape (batch, n, D) -> (mu, log variance), each (batch, n, D)."""
        if not isinstance(x, Tensor):
            x = np.asarray(x, dtype=float)
        if len(x.shape) != 3 or x.shape[2] != self.cfg.input_dim:
            raise ContractViolation(f"expected (batch, n, {self.cfg.input_dim}) input, got {np.shape(x)}")
        n = x.shape[1]
        if n > self.cfg.max_len:
            raise ContractViolation(f"sequence length {n} exceeds max_len {self.cfg.max_len}")
        if training and self.cfg.dropout > 0 and rng is None:
            raise ContractViolation("training with dropout needs an rng")
        h = ad.add(self.embed(x), self._pe[:n])
        h = ad.dropout(h, self.cfg.dropout, rng, training)
        for block in self.blocks:
            h = block(h, training, rng)
        out = self.head(h)
        d = self.cfg.input_dim
        mu = out[..., :d]
        logvar = ad.clip(out[..., d:], self.cfg.logvar_min, self.cfg.logvar_max)
        return mu, logvar

    __call__ = forward


# ----------------------------------------------------------------------------
# loss


def gaussian_nll(mu, var, target, mask: np.ndarray | None = None) -> Tensor:
    """Mean over samples of the summed per-dimension Gaussian NLL.

    ``mask`` (broadcast over the last axis) selects which samples count;
    the normalizer is the number of selected samples.
    """
    var = ad.as_tensor(var)
    if np.any(var.data < MIN_VARIANCE):
        log.warning("variance below %g clamped", MIN_VARIANCE)
        var = ad.clip(var, MIN_VARIANCE, np.inf)
    resid = ad.sub(target, mu)
    terms = ad.add(ad.add(ad.log(var), LOG_2PI), ad.div(ad.square(resid), var))
    if mask is None:
        n = int(np.prod(terms.shape[:-1]))
        return ad.mul(ad.tsum(terms), 0.5 / n)
    m = np.asarray(mask, dtype=float)[..., None]
    n = float(m.sum())
    if n == 0:
        raise ContractViolation("loss mask selects no samples")
    return ad.mul(ad.tsum(ad.mul(terms, m)), 0.5 / n)


def nll_from_logvar(mu: Tensor, logvar: Tensor, target, mask: np.ndarray) -> Tensor:
    """Same loss as :func:`gaussian_nll` written in log-variance form."""
    m = np.asarray(mask, dtype=float)[..., None]
    n = float(m.sum())
    if n == 0:
        raise ContractViolation("loss mask selects no samples")
    resid = ad.sub(target, mu)
    quad = ad.mul(ad.square(resid), ad.exp(ad.neg(logvar)))
    terms = ad.add(ad.add(logvar, LOG_2PI), quad)
    return ad.mul(ad.tsum(ad.mul(terms, m)), 0.5 / n)


# ----------------------------------------------------------------------------
# batching


def make_batch(sequences: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Teacher-forcing inputs, targets and validity mask for a list of (L, D) sequences."""
    if any(len(s) < 2 for s in sequences):
        raise ContractViolation("every sequence needs at least two actions")
    n = max(len(s) for s in sequences) - 1
    d = sequences[0].shape[1]
    inputs = np.full((len(sequences), n, d), PAD_VALUE)
    targets = np.full((len(sequences), n, d), PAD_VALUE)
    mask = np.zeros((len(sequences), n), dtype=bool)
    for i, s in enumerate(sequences):
        m = len(s) - 1
        inputs[i, :m] = s[:-1]
        targets[i, :m] = s[1:]
        mask[i, :m] = True
    return inputs, targets, mask


def batch_loss(model: TrajectoryTransformer, sequences, training=False, rng=None) -> Tensor:
    x, y, mask = make_batch(sequences)
    mu, logvar = model(x, training=training, rng=rng)
    return nll_from_logvar(mu, logvar, y, mask)


def evaluate_nll(model: TrajectoryTransformer, sequences, batch_size: int = 16) -> float:
    """Sample-weighted mean NLL over a list of sequences, evaluation mode."""
    total, count = 0.0, 0
    for i in range(0, len(sequences), batch_size):
        chunk = sequences[i : i + batch_size]
        n = sum(len(s) - 1 for s in chunk)
        total += batch_loss(model, chunk).item() * n
        count += n
    return total / count


# ----------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: TrajectoryTransformer
    best_epoch: int
    best_val: float
    train_curve: list[float] = field(default_factory=list)
    val_curve: list[float] = field(default_factory=list)
    aborted: bool = False


def train(
    train_seqs: list[np.ndarray],
    val_seqs: list[np.ndarray],
    cfg: TransformerConfig | None = None,
    seed: int = 0,
    progress=None,
) -> TrainResult:
    """Adam with teacher forcing; keeps the parameters of the best validation epoch."""
    cfg = cfg or TransformerConfig()
    if not train_seqs or not val_seqs:
        raise ContractViolation("need non-empty train and validation splits")
    for s in list(train_seqs) + list(val_seqs):
        if len(s) > cfg.max_len + 1:
            raise ContractViolation(f"sequence of length {len(s)} exceeds max_len {cfg.max_len}")
    model = TrajectoryTransformer(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    opt = Adam(model.parameters(), lr=cfg.lr)
    best_state = model.state_dict()
    best_val, best_epoch = math.inf, -1
    train_curve, val_curve = [], []
    aborted = False
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_seqs))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            chunk = [train_seqs[i] for i in order[start : start + cfg.batch_size]]
            model.zero_grad()
            with Tape() as tape:
                loss = batch_loss(model, chunk, training=True, rng=rng)
            if not math.isfinite(loss.item()):
                aborted = True
                break
            tape.backward(loss)
            try:
                opt.step()
            except ContractViolation:
                aborted = True
                break
            losses.append(loss.item())
        if aborted:
            log.error("non-finite loss in epoch %d; keeping best checkpoint", epoch)
            break
        val = evaluate_nll(model, val_seqs)
        train_curve.append(float(np.mean(losses)))
        val_curve.append(val)
        if val < best_val:
            best_val, best_epoch = val, epoch
            best_state = model.state_dict()
        if progress is not None:
            progress(epoch, train_curve[-1], val)
    model.load_state_dict(best_state)
    if best_epoch < 0:
        raise NumericalFailure("training diverged before the first epoch finished")
    return TrainResult(model, best_epoch, best_val, train_curve, val_curve, aborted)


# ----------------------------------------------------------------------------
# inference


class IncrementalDecoder:
    """Evaluation-mode decoding that caches per-layer keys and values.

    Post-norm blocks make position i depend only on positions <= i in the
    previous layer, so appending one action needs one new row per layer.
    """

    def __init__(self, model: TrajectoryTransformer) -> None:
        self.model = model
        self.cfg = model.cfg
        self._w = [
            (blk.w_q.data, blk.w_k.data, blk.w_v.data, blk.w_o.data, blk.ln_gain.data, blk.ln_bias.data, blk)
            for blk in model.blocks
        ]
        self.reset()

    def reset(self) -> None:
        L, n, h = self.cfg.layers, self.cfg.max_len, self.cfg.heads
        self.keys = [np.zeros((h, n, self.cfg.d_k)) for _ in range(L)]
        self.values = [np.zeros((h, n, self.cfg.d_v)) for _ in range(L)]
        self.length = 0
        self.last: tuple[np.ndarray, np.ndarray] | None = None

    @staticmethod
    def _ln(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
        mu = x.mean()
        xc = x - mu
        return xc / np.sqrt((xc * xc).mean() + ad.LAYER_NORM_EPS) * gain + bias

    def append(self, action) -> tuple[np.ndarray, np.ndarray]:
        """Feed one action; returns (mu, variance) for the following one."""
        cfg = self.cfg
        i = self.length
        if i >= cfg.max_len:
            raise ContractViolation(f"history exceeds max_len {cfg.max_len}")
        m = self.model
        x = np.asarray(action, dtype=float) @ m.embed.weight.data + m.embed.bias.data + m._pe[i]
        h = cfg.heads
        for layer, (wq, wk, wv, wo, g, b, blk) in enumerate(self._w):
            q = (x @ wq).reshape(h, cfg.d_k)
            self.keys[layer][:, i] = (x @ wk).reshape(h, cfg.d_k)
            self.values[layer][:, i] = (x @ wv).reshape(h, cfg.d_v)
            k = self.keys[layer][:, : i + 1]
            v = self.values[layer][:, : i + 1]
            s = np.einsum("hd,hnd->hn", q, k) / math.sqrt(cfg.d_k)
            s = np.exp(s - s.max(axis=-1, keepdims=True))
            a = s / s.sum(axis=-1, keepdims=True)
            o = np.einsum("hn,hnd->hd", a, v).reshape(-1) @ wo
            x = self._ln(x + o, g, b)
            if cfg.feedforward:
                hid = np.maximum(x @ blk.ff_in.weight.data + blk.ff_in.bias.data, 0.0)
                x = self._ln(x + hid @ blk.ff_out.weight.data + blk.ff_out.bias.data, blk.ln2_gain.data, blk.ln2_bias.data)
        out = x @ m.head.weight.data + m.head.bias.data
        d = cfg.input_dim
        mu = out[:d]
        var = np.exp(np.clip(out[d:], cfg.logvar_min, cfg.logvar_max))
        self.length += 1
        self.last = (mu, var)
        return mu, var


def propose_next(model: TrajectoryTransformer, history) -> tuple[np.ndarray, np.ndarray]:
    """Proposal (mu, variance) for the action after ``history`` via a full forward pass."""
    hist = np.asarray(history, dtype=float)
    if hist.ndim != 2 or len(hist) < 1:
        raise ContractViolation("history must be a non-empty (n, D) array")
    if len(hist) > model.cfg.max_len:
        raise ContractViolation(f"history length {len(hist)} exceeds max_len {model.cfg.max_len}")
    mu, logvar = model(hist[None])
    return mu.data[0, -1].copy(), np.exp(logvar.data[0, -1])


def generate(
    model: TrajectoryTransformer,
    first_action,
    steps: int,
    mode: str = "mean",
    seed: int = 0,
) -> np.ndarray:
    """Autoregressive rollout from ``first_action``; returns ``steps + 1`` actions."""
    if mode not in ("mean", "sample"):
        raise ContractViolation(f"unknown generation mode {mode!r}")
    if steps < 0 or steps + 1 > model.cfg.max_len + 1:
        raise ContractViolation(f"steps must lie in [0, {model.cfg.max_len}]")
    rng = np.random.default_rng(seed)
    dec = IncrementalDecoder(model)
    seq = [np.asarray(first_action, dtype=float)]
    for _ in range(steps):
        mu, var = dec.append(seq[-1])
        nxt = mu if mode == "mean" else mu + np.sqrt(var) * rng.standard_normal(mu.shape)
        seq.append(np.asarray(nxt, dtype=float))
    return np.stack(seq)


# ----------------------------------------------------------------------------
# persistence


def save_model(path, model: TrajectoryTransformer, seed: int, extra: dict | None = None) -> None:
    meta = {"kind": "trajectory-transformer", "config": model.cfg.to_dict(), "seed": seed, **(extra or {})}
    checkpoint.save(path, model.state_dict(), meta)


def load_model(path) -> tuple[TrajectoryTransformer, dict]:
    arrays, meta = checkpoint.load(path)
    if meta.get("kind") != "trajectory-transformer":
        raise ContractViolation(f"{path} is not a transformer checkpoint")
    model = TrajectoryTransformer(TransformerConfig(**meta["config"]), seed=meta.get("seed", 0))
    model.load_state_dict(arrays)
    return model, meta


def desk_config(**overrides) -> TransformerConfig:
    """Smaller batches and a larger step size so a 64-trajectory set trains in minutes."""
    return replace(TransformerConfig(batch_size=16, lr=1e-3), **overrides)
