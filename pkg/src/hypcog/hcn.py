"""Hyperbolic Cognitive Network at desk scale.

Per-dimension linear maps lift encoder features into the Poincare ball,
a small transformer mixes the four dimension tokens in the tangent space
at the origin, the mean output token is the cognitive anchor, and one MLP
head per dimension classifies. Training minimises

    total = task cross-entropy + lambda_hyper * margin contrastive loss

with the contrastive term computed per dimension inside each minibatch.
Everything runs in float64.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from . import _torch_ops as tops
from .errors import DivergenceError, InvalidInputError, SchemaError
from .poincare import BallConfig, poincare_distance
from .taxonomy import DIMENSIONS, CognitiveLabel, labels_to_array

DTYPE = torch.float64


@dataclass(frozen=True)
class HcnConfig:
    feature_dim: int = 64
    hidden_dim: int = 32
    layers_N: int = 4
    heads_H: int = 8
    dropout: float = 0.1
    class_counts: tuple[int, ...] = (9, 8, 3, 7)
    margin_m: float = 1.0
    lambda_hyper: float = 0.1
    lambda_contrastive: float = 0.1
    temperature_tau: float = 0.5
    curvature_c: float = 1.0
    learning_rate: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    contrastive_mode: str = "margin"      # "margin" or "margin+temperature"
    ffn_mult: int = 2
    init_std: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "class_counts", tuple(int(c) for c in self.class_counts))
        if self.hidden_dim % self.heads_H:
            raise InvalidInputError("hidden_dim must be divisible by heads_H")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidInputError("dropout must lie in [0, 1)")
        if len(self.class_counts) != 4 or min(self.class_counts) < 1:
            raise InvalidInputError("class_counts needs four positive entries")
        for name in ("margin_m", "temperature_tau", "curvature_c", "learning_rate", "init_std"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        for name in ("lambda_hyper", "lambda_contrastive"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be nonnegative")
        if min(self.feature_dim, self.hidden_dim, self.layers_N, self.heads_H, self.batch_size) < 1:
            raise InvalidInputError("sizes must be positive")
        if self.contrastive_mode not in ("margin", "margin+temperature"):
            raise InvalidInputError(f"unknown contrastive_mode {self.contrastive_mode!r}")

    @classmethod
    def full_scale(cls, **overrides) -> "HcnConfig":
        """Full-size hyperparameters (4096-d features, 512-d hidden)."""
        return cls(**{"feature_dim": 4096, "hidden_dim": 512, **overrides})

    @property
    def ball(self) -> BallConfig:
        return BallConfig(self.curvature_c, self.hidden_dim)

    @classmethod
    def from_dict(cls, d: dict) -> "HcnConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SchemaError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class LossBreakdown:
    l_task: float
    l_hyp: float
    total: float
    l_con: float = 0.0


def _gelu(x: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.gelu(x, approximate="tanh")


class _Dropout:
    """Dropout drawing masks from an explicit generator."""

    def __init__(self, p: float, gen: torch.Generator):
        self.p = p
        self.gen = gen

    def __call__(self, x: torch.Tensor, training: bool) -> torch.Tensor:
        if not training or self.p == 0.0:
            return x
        keep = torch.rand(x.shape, generator=self.gen, dtype=x.dtype) >= self.p
        return x * keep / (1.0 - self.p)


class _Block(nn.Module):
    """Pre-norm self-attention block over the four dimension tokens."""

    def __init__(self, hidden: int, heads: int, ffn: int):
        super().__init__()
        self.heads = heads
        self.ln1 = nn.LayerNorm(hidden, dtype=DTYPE)
        self.ln2 = nn.LayerNorm(hidden, dtype=DTYPE)
        self.qkv = nn.Linear(hidden, 3 * hidden, dtype=DTYPE)
        self.out = nn.Linear(hidden, hidden, dtype=DTYPE)
        self.ff1 = nn.Linear(hidden, ffn, dtype=DTYPE)
        self.ff2 = nn.Linear(ffn, hidden, dtype=DTYPE)

    def forward(self, x, drop: _Dropout, training: bool):
        b, t, h = x.shape
        hd = h // self.heads
        q, k, v = self.qkv(self.ln1(x)).split(h, dim=-1)
        q, k, v = (y.view(b, t, self.heads, hd).transpose(1, 2) for y in (q, k, v))
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(hd), dim=-1)
        mixed = (drop(attn, training) @ v).transpose(1, 2).reshape(b, t, h)
        x = x + drop(self.out(mixed), training)
        x = x + drop(self.ff2(_gelu(self.ff1(self.ln2(x)))), training)
        return x, attn


@dataclass
class HcnOutput:
    z: torch.Tensor              # (B, 4, hidden) points in the ball
    v_cog: torch.Tensor          # (B, hidden) tangent-space anchor
    logits: list[torch.Tensor]   # per dimension (B, classes)
    attention: list[torch.Tensor] = field(default_factory=list)  # per block (B, H, 4, 4)


class HcnModel(nn.Module):
    def __init__(self, cfg: HcnConfig):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden_dim
        self.proj = nn.Parameter(torch.zeros(4, h, cfg.feature_dim, dtype=DTYPE))
        self.dim_embed = nn.Parameter(torch.zeros(4, h, dtype=DTYPE))
        self.blocks = nn.ModuleList(
            _Block(h, cfg.heads_H, cfg.ffn_mult * h) for _ in range(cfg.layers_N)
        )
        self.head_hidden = nn.ModuleList(nn.Linear(h, h, dtype=DTYPE) for _ in range(4))
        self.head_out = nn.ModuleList(nn.Linear(h, c, dtype=DTYPE) for c in cfg.class_counts)
        self.gen = torch.Generator().manual_seed(cfg.seed)
        self.drop = _Dropout(cfg.dropout, self.gen)
        self.reset_parameters()

    def reset_parameters(self):
        """Gaussian(0, init_std) matrices and embeddings, zero biases, unit LayerNorm."""
        with torch.no_grad():
            for name, p in self.named_parameters():
                if ".ln" in name or name.startswith("ln"):
                    p.fill_(1.0 if name.endswith("weight") else 0.0)
                elif name.endswith("bias"):
                    p.zero_()
                else:
                    p.copy_(torch.normal(0.0, self.cfg.init_std, p.shape, generator=self.gen, dtype=DTYPE))

    def forward(self, features, return_attention: bool = False) -> HcnOutput:
        x = torch.as_tensor(features, dtype=DTYPE)
        single = x.ndim == 1
        if single:
            x = x.unsqueeze(0)
        if x.ndim != 2 or x.shape[1] != self.cfg.feature_dim:
            raise InvalidInputError(
                f"features must have length {self.cfg.feature_dim}, got shape {tuple(x.shape)}"
            )
        ball = self.cfg.ball
        z = tops.exp0(ball, torch.einsum("khf,bf->bkh", self.proj, x))
        tokens = tops.log0(ball, z) + self.dim_embed
        attns = []
        for blk in self.blocks:
            tokens, a = blk(tokens, self.drop, self.training)
            attns.append(a)
        v_cog = tokens.mean(dim=1)
        logits = [
            self.head_out[k](_gelu(self.head_hidden[k](tokens[:, k]))) for k in range(4)
        ]
        out = HcnOutput(z, v_cog, logits, attns if return_attention else [])
        if single:
            out = HcnOutput(z[0], v_cog[0], [l[0] for l in logits], [a[0] for a in out.attention])
        return out


def build_model(cfg: HcnConfig) -> HcnModel:
    return HcnModel(cfg)


def forward(model: HcnModel, cfg: HcnConfig, features, return_attention: bool = False) -> HcnOutput:
    if cfg != model.cfg:
        raise InvalidInputError("config does not match the model")
    return model(features, return_attention=return_attention)


# --- losses -----------------------------------------------------------------------

def task_loss(logits: Sequence[torch.Tensor], labels) -> torch.Tensor:
    """Mean over the four dimensions of the batch-mean softmax cross-entropy."""
    y = _label_tensor(labels)
    if logits[0].ndim == 1:
        logits = [l.unsqueeze(0) for l in logits]
    terms = [nn.functional.cross_entropy(torch.as_tensor(l, dtype=DTYPE), y[:, k])
             for k, l in enumerate(logits)]
    return torch.stack(terms).mean()


def _label_tensor(labels) -> torch.Tensor:
    if isinstance(labels, CognitiveLabel):
        labels = [labels]
    if isinstance(labels, torch.Tensor):
        return labels.long().reshape(-1, 4)
    if len(labels) and isinstance(labels[0], CognitiveLabel):
        return torch.as_tensor(labels_to_array(labels))
    return torch.as_tensor(np.asarray(labels, dtype=np.int64).reshape(-1, 4))


def margin_contrastive(d: torch.Tensor, y: torch.Tensor, margin: float) -> torch.Tensor:
    """Mean over unordered pairs of d^2 (same label) or relu(m - d)^2 (different)."""
    n = y.shape[0]
    iu = torch.triu_indices(n, n, 1)
    dd = d[iu[0], iu[1]]
    same = y[iu[0]] == y[iu[1]]
    per_pair = torch.where(same, dd ** 2, torch.clamp(margin - dd, min=0.0) ** 2)
    return per_pair.mean()


def temperature_contrastive(d: torch.Tensor, y: torch.Tensor, tau: float) -> torch.Tensor:
    """Supervised InfoNCE with similarity -d/tau; anchors without positives are skipped."""
    n = y.shape[0]
    eye = torch.eye(n, dtype=torch.bool)
    logits = (-d / tau).masked_fill(eye, float("-inf"))
    log_prob = logits - torch.logsumexp(logits, dim=1, keepdim=True)
    pos = (y[:, None] == y[None, :]) & ~eye
    counts = pos.sum(1)
    has = counts > 0
    if not bool(has.any()):
        return torch.zeros((), dtype=DTYPE)
    mean_pos = torch.where(pos, log_prob, torch.zeros_like(log_prob)).sum(1)[has] / counts[has]
    return -mean_pos.mean()


def hyp_contrastive_loss(points, labels, margin: float, cfg: BallConfig) -> float:
    """Margin contrastive loss over all unordered pairs of ``points`` (numpy route)."""
    pts = np.asarray(points, dtype=np.float64)
    lab = np.asarray(labels)
    n = len(pts)
    if n < 2 or len(lab) != n:
        raise InvalidInputError("need at least two points with one label each")
    i, j = np.triu_indices(n, 1)
    d = np.atleast_1d(poincare_distance(cfg, pts[i], pts[j]))
    same = lab[i] == lab[j]
    per_pair = np.where(same, d ** 2, np.maximum(margin - d, 0.0) ** 2)
    return float(per_pair.mean())


def hyp_loss_terms(cfg: HcnConfig, z: torch.Tensor, y: torch.Tensor):
    """Per-dimension contrastive terms summed over the four dimensions."""
    ball = cfg.ball
    l_hyp = torch.zeros((), dtype=DTYPE)
    l_con = torch.zeros((), dtype=DTYPE)
    for k in range(4):
        d = tops.pairwise_distance(ball, z[:, k])
        l_hyp = l_hyp + margin_contrastive(d, y[:, k], cfg.margin_m)
        if cfg.contrastive_mode == "margin+temperature":
            l_con = l_con + temperature_contrastive(d, y[:, k], cfg.temperature_tau)
    return l_hyp, l_con


def objective(model: HcnModel, cfg: HcnConfig, features, labels):
    """(total, l_task, l_hyp, l_con) tensors for one batch."""
    y = _label_tensor(labels)
    out = model(features)
    l_task = task_loss(out.logits, y)
    if y.shape[0] >= 2:
        l_hyp, l_con = hyp_loss_terms(cfg, out.z, y)
    else:
        l_hyp = l_con = torch.zeros((), dtype=DTYPE)
    total = l_task + cfg.lambda_hyper * l_hyp
    if cfg.contrastive_mode == "margin+temperature":
        total = total + cfg.lambda_contrastive * l_con
    return total, l_task, l_hyp, l_con


def make_optimizer(model: HcnModel, cfg: HcnConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999))


def train_step(model: HcnModel, cfg: HcnConfig, batch, optimizer: Optional[torch.optim.Optimizer] = None):
    """One Adam update on ``batch = (features, labels)``; returns (model, LossBreakdown)."""
    features, labels = batch
    if len(features) == 0:
        raise InvalidInputError("batch must be nonempty")
    if optimizer is None:
        optimizer = getattr(model, "_optimizer", None) or make_optimizer(model, cfg)
        model._optimizer = optimizer
    model.train()
    optimizer.zero_grad()
    total, l_task, l_hyp, l_con = objective(model, cfg, features, labels)
    for name, term in (("l_task", l_task), ("l_hyp", l_hyp), ("l_con", l_con), ("total", total)):
        if not torch.isfinite(term):
            raise DivergenceError(f"non-finite {name} ({term.detach().item()})", term=name)
    total.backward()
    optimizer.step()
    vals = [t.detach().item() for t in (l_task, l_hyp, total, l_con)]
    return model, LossBreakdown(*vals)


@dataclass
class TrainResult:
    model: HcnModel
    trace: list[LossBreakdown]


def train(cfg: HcnConfig, features, labels, steps: int,
          model: Optional[HcnModel] = None, log_every: int = 0) -> TrainResult:
    """Minibatch training over reshuffled epochs, deterministic per ``cfg.seed``."""
    x = torch.as_tensor(np.asarray(features), dtype=DTYPE)
    y = _label_tensor(labels)
    if x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise InvalidInputError("features and labels must be nonempty and aligned")
    model = model or build_model(cfg)
    opt = make_optimizer(model, cfg)
    order_gen = torch.Generator().manual_seed(cfg.seed + 1)
    perm = torch.randperm(x.shape[0], generator=order_gen)
    pos = 0
    trace = []
    for step in range(steps):
        if pos + cfg.batch_size > x.shape[0] and pos > 0:
            perm = torch.randperm(x.shape[0], generator=order_gen)
            pos = 0
        idx = perm[pos:pos + cfg.batch_size]
        pos += cfg.batch_size
        _, lb = train_step(model, cfg, (x[idx], y[idx]), opt)
        trace.append(lb)
        if log_every and (step + 1) % log_every == 0:
            print(f"step {step + 1}: total={lb.total:.6f} task={lb.l_task:.6f} hyp={lb.l_hyp:.6f}")
    model.eval()
    return TrainResult(model, trace)


@torch.no_grad()
def evaluate_losses(model: HcnModel, cfg: HcnConfig, features, labels) -> LossBreakdown:
    """Full-set losses with dropout off (contrastive term over all pairs)."""
    model.eval()
    total, l_task, l_hyp, l_con = objective(model, cfg, features, labels)
    return LossBreakdown(float(l_task), float(l_hyp), float(total), float(l_con))


@torch.no_grad()
def embed(model: HcnModel, features) -> HcnOutput:
    model.eval()
    return model(features)


@torch.no_grad()
def predict(model: HcnModel, cfg: HcnConfig, features) -> list[CognitiveLabel]:
    """Per-dimension argmax; ties go to the lowest class index."""
    model.eval()
    out = model(np.atleast_2d(np.asarray(features, dtype=np.float64)))
    ids = [np.argmax(l.numpy(), axis=1) for l in out.logits]
    return [CognitiveLabel(*(int(ids[k][i]) for k in range(4))) for i in range(len(ids[0]))]


def decode_logits(logits: Sequence) -> CognitiveLabel:
    return CognitiveLabel(*(int(np.argmax(np.asarray(l))) for l in logits))


# --- checkpoints --------------------------------------------------------------------

def save_checkpoint(path, model: HcnModel, extra: Optional[dict] = None) -> None:
    params = {
        name: {"shape": list(p.shape), "data": [float(v) for v in p.detach().reshape(-1).tolist()]}
        for name, p in model.state_dict().items()
    }
    payload = {"config": _config_json(model.cfg), "parameters": params}
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def _config_json(cfg: HcnConfig) -> dict:
    d = asdict(cfg)
    d["class_counts"] = list(cfg.class_counts)
    return d


def load_checkpoint(path) -> HcnModel:
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"checkpoint is not valid JSON ({exc.msg})") from None
    for key in ("config", "parameters"):
        if key not in payload:
            raise SchemaError("missing checkpoint block", field=key)
    model = build_model(HcnConfig.from_dict(payload["config"]))
    state = model.state_dict()
    loaded = {}
    for name, ref in state.items():
        if name not in payload["parameters"]:
            raise SchemaError("missing parameter", field=name)
        entry = payload["parameters"][name]
        t = torch.tensor(entry["data"], dtype=DTYPE).reshape(entry["shape"])
        if tuple(t.shape) != tuple(ref.shape):
            raise SchemaError(f"shape {tuple(t.shape)} != {tuple(ref.shape)}", field=name)
        loaded[name] = t
    model.load_state_dict(loaded)
    model.eval()
    return model


# --- geometry diagnostics ------------------------------------------------------------

def class_distance_stats(cfg: HcnConfig, z: torch.Tensor, y: torch.Tensor,
                         leaf_category: Optional[Sequence[Sequence[int]]] = None) -> dict:
    """Mean within/between-class Poincare distances per dimension.

    With ``leaf_category`` also the mean distance between different leaves
    sharing a category versus leaves from different categories.
    """
    ball = cfg.ball
    out = {}
    for k, name in enumerate(DIMENSIONS):
        d = tops.pairwise_distance(ball, z[:, k]).numpy()
        lab = y[:, k].numpy()
        iu = np.triu_indices(len(lab), 1)
        dd = d[iu]
        same = lab[iu[0]] == lab[iu[1]]
        rec = {"within": float(dd[same].mean()) if same.any() else float("nan"),
               "between": float(dd[~same].mean()) if (~same).any() else float("nan")}
        if leaf_category is not None:
            cat = np.asarray(leaf_category[k])[lab]
            same_cat = (cat[iu[0]] == cat[iu[1]]) & ~same
            diff_cat = cat[iu[0]] != cat[iu[1]]
            if same_cat.any() and diff_cat.any():
                rec["same_category"] = float(dd[same_cat].mean())
                rec["cross_category"] = float(dd[diff_cat].mean())
        out[name] = rec
    return out
