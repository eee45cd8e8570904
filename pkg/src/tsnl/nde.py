"""Conditional masked autoregressive flow (stacked Gaussian MADE layers).

Gradients come from torch autograd; everything runs in float64 on CPU.
Public helpers take and return numpy arrays.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

log = logging.getLogger(__name__)

DTYPE = torch.float64
_LOG_2PI = math.log(2.0 * math.pi)
_ACTIVATIONS = {"tanh": torch.tanh, "relu": torch.relu}


class FlowNumericalError(FloatingPointError):
    def __init__(self, layer: int, msg: str = "non-finite intermediate"):
        self.layer = layer
        super().__init__(f"{msg} in MADE layer {layer}")


class TrainingError(RuntimeError):
    pass


@dataclass
class FlowConfig:
    made_layers: int = 5
    hidden_layers: int = 5
    hidden_units: int = 32
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(_ACTIVATIONS)}")
        if min(self.made_layers, self.hidden_layers, self.hidden_units) < 1:
            raise ValueError("flow sizes must be >= 1")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256
    max_epochs: int = 500
    val_fraction: float = 0.1
    patience: int = 20

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")


def build_masks(D: int, d_c: int, hidden_sizes, rng: np.random.Generator):
    """Degrees and binary masks of a conditional MADE.

    Inputs are ordered ``[context, event]``; context units have degree 0 and
    event unit ``d`` has degree ``d``. Hidden degrees are drawn from
    ``0..D-1`` (with one degree-0 unit per layer when there is context) so
    every output head can see the context. Output ``d`` reads hidden units of
    degree ``< d``.

    Returns
    -------
    degrees : list of int arrays, input first, one per hidden layer
    masks : list of ``(out, in)`` float arrays, last one for the output heads
        (shared by the mean and log-scale heads)
    """
    if D < 1:
        raise ValueError("D must be >= 1")
    degrees = [np.concatenate([np.zeros(d_c, dtype=int), np.arange(1, D + 1)])]
    for h in hidden_sizes:
        if D == 1:
            deg = np.zeros(h, dtype=int)
        elif d_c > 0:
            deg = rng.integers(0, D, size=h)
            deg[0] = 0
        else:
            deg = rng.integers(1, D, size=h)
        degrees.append(deg)
    masks = [(degrees[i + 1][:, None] >= degrees[i][None, :]).astype(float) for i in range(len(hidden_sizes))]
    out_deg = np.arange(1, D + 1)
    masks.append((out_deg[:, None] > degrees[-1][None, :]).astype(float))
    return degrees, masks


class MadeLayer(nn.Module):
    """One Gaussian MADE: maps ``(x, context)`` to ``(mu, log_sigma)`` per event dim."""

    def __init__(self, D: int, d_c: int, hidden_sizes, activation: str = "tanh",
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng()
        self.D, self.d_c = D, d_c
        self.hidden_sizes = list(hidden_sizes)
        self.activation = activation
        degrees, masks = build_masks(D, d_c, self.hidden_sizes, rng)
        self.degrees = degrees
        sizes = [d_c + D] + self.hidden_sizes
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        for i in range(len(self.hidden_sizes)):
            self.weights.append(nn.Parameter(self._init((sizes[i + 1], sizes[i]), rng)))
            self.biases.append(nn.Parameter(torch.zeros(sizes[i + 1], dtype=DTYPE)))
            self.register_buffer(f"mask{i}", torch.tensor(masks[i], dtype=DTYPE))
        self.w_mu = nn.Parameter(self._init((D, sizes[-1]), rng, gain=0.1))
        self.b_mu = nn.Parameter(torch.zeros(D, dtype=DTYPE))
        self.w_logs = nn.Parameter(self._init((D, sizes[-1]), rng, gain=0.1))
        self.b_logs = nn.Parameter(torch.zeros(D, dtype=DTYPE))
        self.register_buffer("mask_out", torch.tensor(masks[-1], dtype=DTYPE))

    @staticmethod
    def _init(shape, rng, gain=1.0):
        bound = gain / math.sqrt(shape[1])
        return torch.tensor(rng.uniform(-bound, bound, size=shape), dtype=DTYPE)

    def masks(self):
        return [getattr(self, f"mask{i}") for i in range(len(self.hidden_sizes))] + [self.mask_out]

    def forward(self, x: torch.Tensor, c: torch.Tensor | None):
        act = _ACTIVATIONS[self.activation]
        h = x if c is None or self.d_c == 0 else torch.cat([c, x], dim=-1)
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = act(nn.functional.linear(h, W * getattr(self, f"mask{i}"), b))
        mu = nn.functional.linear(h, self.w_mu * self.mask_out, self.b_mu)
        log_sigma = nn.functional.linear(h, self.w_logs * self.mask_out, self.b_logs)
        return mu, log_sigma


class ConditionalFlow(nn.Module):
    """Stack of MADE transforms with event reversal between layers.

    Affine standardization statistics for events and contexts are part of
    the model, so densities are reported on the original data scale.
    """

    def __init__(self, D: int, d_c: int, cfg: FlowConfig | None = None, seed: int | None = None):
        super().__init__()
        self.cfg = cfg or FlowConfig()
        self.D, self.d_c = D, d_c
        self.seed = seed
        rng = np.random.default_rng(seed)
        hidden = [self.cfg.hidden_units] * self.cfg.hidden_layers
        self.layers = nn.ModuleList(
            MadeLayer(D, d_c, hidden, self.cfg.activation, rng) for _ in range(self.cfg.made_layers))
        self.register_buffer("y_mean", torch.zeros(D, dtype=DTYPE))
        self.register_buffer("y_std", torch.ones(D, dtype=DTYPE))
        self.register_buffer("c_mean", torch.zeros(d_c, dtype=DTYPE))
        self.register_buffer("c_std", torch.ones(d_c, dtype=DTYPE))

    # -- standardization -------------------------------------------------
    def fit_standardization(self, y: np.ndarray, c: np.ndarray | None) -> None:
        y = np.asarray(y, dtype=float).reshape(-1, self.D)
        self.y_mean.copy_(torch.tensor(y.mean(0), dtype=DTYPE))
        self.y_std.copy_(torch.tensor(_safe_std(y), dtype=DTYPE))
        if self.d_c:
            c = np.asarray(c, dtype=float).reshape(-1, self.d_c)
            self.c_mean.copy_(torch.tensor(c.mean(0), dtype=DTYPE))
            self.c_std.copy_(torch.tensor(_safe_std(c), dtype=DTYPE))

    def _context(self, c):
        if self.d_c == 0:
            return None
        return (c - self.c_mean) / self.c_std

    # -- transforms -------------------------------------------------------
    def inverse(self, y: torch.Tensor, c: torch.Tensor | None, check: bool = False):
        """Data -> noise. Returns ``(u, logdet)`` with ``logdet = log|du/dy|``."""
        x = (y - self.y_mean) / self.y_std
        logdet = -torch.log(self.y_std).sum().expand(x.shape[:-1])
        cs = self._context(c)
        for k, layer in enumerate(self.layers):
            if k > 0:
                x = x.flip(-1)
            mu, log_sigma = layer(x, cs)
            x = (x - mu) * torch.exp(-log_sigma)
            logdet = logdet - log_sigma.sum(-1)
            if check and not (torch.isfinite(x).all() and torch.isfinite(logdet).all()):
                raise FlowNumericalError(k)
        return x, logdet

    def forward_transform(self, u: torch.Tensor, c: torch.Tensor | None) -> torch.Tensor:
        """Noise -> data, inverting each MADE one event dimension at a time."""
        cs = self._context(c)
        x = u
        for k in reversed(range(len(self.layers))):
            layer = self.layers[k]
            z = x
            x = torch.zeros_like(z)
            for d in range(self.D):
                mu, log_sigma = layer(x, cs)
                x = x.clone()
                x[..., d] = z[..., d] * torch.exp(log_sigma[..., d]) + mu[..., d]
            if k > 0:
                x = x.flip(-1)
        return x * self.y_std + self.y_mean

    def log_prob(self, y: torch.Tensor, c: torch.Tensor | None, check: bool = False) -> torch.Tensor:
        u, logdet = self.inverse(y, c, check=check)
        return -0.5 * (u * u).sum(-1) - 0.5 * self.D * _LOG_2PI + logdet

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(t.detach().cpu().numpy().tobytes())
        return h.hexdigest()


def _safe_std(a):
    s = a.std(axis=0)
    return np.where(s > 1e-12, s, 1.0)


def _as_tensor(a, width):
    if a is None:
        return None
    return torch.as_tensor(np.asarray(a, dtype=float).reshape(-1, width), dtype=DTYPE)


def zero_flow(D: int, d_c: int = 0, cfg: FlowConfig | None = None) -> ConditionalFlow:
    """A flow whose every weight is zero: the standard normal density."""
    flow = ConditionalFlow(D, d_c, cfg, seed=0)
    with torch.no_grad():
        for p in flow.parameters():
            p.zero_()
    return flow


def flow_logprob(flow: ConditionalFlow, y, context=None):
    """``log q(y | context)``; vectorized over leading rows of ``y`` and ``context``."""
    y = np.asarray(y, dtype=float)
    single = y.ndim <= 1 and y.size == flow.D
    yt = _as_tensor(y, flow.D)
    ct = _as_tensor(context, flow.d_c) if flow.d_c else None
    if ct is not None and ct.shape[0] != yt.shape[0]:
        if ct.shape[0] == 1:
            ct = ct.expand(yt.shape[0], -1)
        else:
            raise ValueError("event and context row counts differ")
    with torch.no_grad():
        lp = flow.log_prob(yt, ct, check=True).numpy()
    return float(lp[0]) if single else lp


def flow_sample(flow: ConditionalFlow, context=None, rng: np.random.Generator | None = None, n: int | None = None):
    """Draw from ``q(. | context)``: one event per context row, or ``n`` for a single context."""
    rng = rng if rng is not None else np.random.default_rng()
    ct = _as_tensor(context, flow.d_c) if flow.d_c else None
    rows = n if n is not None else (ct.shape[0] if ct is not None else 1)
    if ct is not None and ct.shape[0] == 1 and rows > 1:
        ct = ct.expand(rows, -1)
    u = torch.as_tensor(rng.standard_normal((rows, flow.D)), dtype=DTYPE)
    with torch.no_grad():
        y = flow.forward_transform(u, ct).numpy()
    return y[0] if n is None and (context is None or np.ndim(context) <= 1) else y


@dataclass
class TrainResult:
    flow: ConditionalFlow
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_val_loss: float = float("nan")
    epochs: int = 0
    degenerate_validation: bool = False


def train_flow(flow: ConditionalFlow, events, contexts, cfg: TrainConfig | None = None,
               rng: np.random.Generator | None = None) -> TrainResult:
    """Maximum-likelihood training with Adam and early stopping.

    Losses are mean negative log-likelihoods per record. With fewer than
    two records the validation loss falls back to the training loss.
    """
    cfg = cfg or TrainConfig()
    rng = rng if rng is not None else np.random.default_rng()
    y = np.asarray(events, dtype=float).reshape(-1, flow.D)
    c = np.asarray(contexts, dtype=float).reshape(-1, flow.d_c) if flow.d_c else None
    n = y.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    perm = rng.permutation(n)
    n_val = int(round(cfg.val_fraction * n)) if n >= 2 else 0
    n_val = min(max(n_val, 1 if n >= 2 else 0), n - 1)
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    degenerate = n_val == 0
    if degenerate:
        log.warning("training set of size %d: validation loss uses the training data", n)
        val_idx = tr_idx

    flow.fit_standardization(y[tr_idx], None if c is None else c[tr_idx])
    yt, ct = _as_tensor(y, flow.D), (None if c is None else _as_tensor(c, flow.d_c))
    sel = lambda t, idx: None if t is None else t[idx]
    y_tr, c_tr = yt[tr_idx], sel(ct, tr_idx)
    y_va, c_va = yt[val_idx], sel(ct, val_idx)

    opt = torch.optim.Adam(flow.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    gen = torch.Generator().manual_seed(int(rng.integers(2**62)))

    def val_loss():
        with torch.no_grad():
            return float(-flow.log_prob(y_va, c_va).mean())

    best = val_loss()
    if not math.isfinite(best):
        raise TrainingError("initial validation loss is not finite")
    best_state, since_best = copy.deepcopy(flow.state_dict()), 0
    result = TrainResult(flow, [], [best], best, 0, degenerate)
    ntr = y_tr.shape[0]
    for epoch in range(cfg.max_epochs):
        order = torch.randperm(ntr, generator=gen)
        total = 0.0
        for start in range(0, ntr, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss = -flow.log_prob(y_tr[idx], sel(c_tr, idx)).mean()
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * idx.numel()
        result.train_losses.append(total / ntr)
        v = val_loss()
        if not math.isfinite(v):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        result.val_losses.append(v)
        result.epochs = epoch + 1
        if v < best - 1e-12:
            best, since_best = v, 0
            best_state = copy.deepcopy(flow.state_dict())
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    flow.load_state_dict(best_state)
    result.best_val_loss = best
    return result


def param_count(K: int, M: int, H: int, L: int, d_y: int, d_theta: int) -> int:
    """Parameter count ``K * (H * (L + d_y + d_theta + 1) + (M - 1) * H^2)``.

    Counts first-layer weights and biases plus hidden-to-hidden weights;
    output heads and later biases are not included.
    """
    if min(K, M, H, L, d_y, d_theta) < 1:
        raise ValueError("all arguments must be >= 1")
    return K * (H * (L + d_y + d_theta + 1) + (M - 1) * H * H)


def count_parameters(flow: ConditionalFlow, convention: str = "all") -> int:
    """Introspect a flow's parameter count.

    ``"all"`` counts every trainable scalar, ``"unmasked"`` only weights
    that survive masking (plus biases), ``"formula"`` mirrors
    :func:`param_count`'s convention.
    """
    if convention == "all":
        return sum(p.numel() for p in flow.parameters())
    total = 0
    for layer in flow.layers:
        if convention == "formula":
            total += layer.weights[0].numel() + layer.biases[0].numel()
            total += sum(W.numel() for W in list(layer.weights)[1:])
        elif convention == "unmasked":
            total += sum(int(m.sum()) for m in layer.masks()[:-1]) + 2 * int(layer.mask_out.sum())
            total += sum(b.numel() for b in layer.biases) + 2 * layer.D
        else:
            raise ValueError(f"unknown convention {convention!r}")
    return total


def save_flow(path, flow: ConditionalFlow) -> None:
    """Write architecture, weights, masks and standardization to an ``.npz`` file."""
    meta = {"D": flow.D, "d_c": flow.d_c, "seed": flow.seed, "cfg": asdict(flow.cfg), "format": "tsnl-flow-1"}
    arrays = {k: v.detach().cpu().numpy() for k, v in flow.state_dict().items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_flow(path) -> ConditionalFlow:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        flow = ConditionalFlow(meta["D"], meta["d_c"], FlowConfig(**meta["cfg"]), seed=meta["seed"])
        state = {k: torch.tensor(data[k], dtype=DTYPE) for k in data.files if k != "__meta__"}
    flow.load_state_dict(state)
    return flow
