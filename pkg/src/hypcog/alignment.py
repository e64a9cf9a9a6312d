"""Anchor-conditioned soft prompts and the topology alignment loss.

A frozen cognitive anchor is projected to ``prompt_len`` soft-prompt rows
that prefix the context and target embeddings of a small causal language
model. Training combines next-token cross-entropy with one minus the
cosine between the projected final hidden state and the anchor.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .errors import DivergenceError, InvalidInputError, SchemaError

DTYPE = torch.float64
DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class ProjectorConfig:
    anchor_dim: int = 32
    model_dim: int = 32
    prompt_len: int = 4
    scale_a: float = 1.0
    lambda_sct: float = 1.0
    cosine_eps: float = 1e-8
    projector_hidden: int = 64

    def __post_init__(self):
        if self.prompt_len < 1:
            raise InvalidInputError("prompt_len must be >= 1")
        if not self.scale_a > 0:
            raise InvalidInputError("scale_a must be positive")
        if self.lambda_sct < 0:
            raise InvalidInputError("lambda_sct must be nonnegative")
        if not self.cosine_eps > 0:
            raise InvalidInputError("cosine_eps must be positive")
        if min(self.anchor_dim, self.model_dim, self.projector_hidden) < 1:
            raise InvalidInputError("dimensions must be positive")


def _t(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x), dtype=DTYPE)


def project_prompt(pcfg: ProjectorConfig, W1, W2, v_cog, ln_weight=None, ln_bias=None) -> torch.Tensor:
    """Soft prompt ``a * tanh(W2 @ sigmoid(LayerNorm(W1 @ v_cog)))`` as (L, d_model)."""
    W1, W2, v = _t(W1), _t(W2), _t(v_cog)
    if v.shape[-1] != pcfg.anchor_dim or W1.shape[-1] != pcfg.anchor_dim:
        raise InvalidInputError(f"v_cog and W1 must use anchor_dim={pcfg.anchor_dim}")
    if W2.shape[0] != pcfg.prompt_len * pcfg.model_dim or W2.shape[1] != W1.shape[0]:
        raise InvalidInputError("W2 must map the projector hidden size to prompt_len * model_dim")
    h = W1 @ v
    w = _t(ln_weight) if ln_weight is not None else None
    b = _t(ln_bias) if ln_bias is not None else None
    h = nn.functional.layer_norm(h, (h.shape[-1],), w, b)
    out = pcfg.scale_a * torch.tanh(W2 @ torch.sigmoid(h))
    return out.reshape(pcfg.prompt_len, pcfg.model_dim)


class CognitiveProjector(nn.Module):
    def __init__(self, pcfg: ProjectorConfig, gen: torch.Generator, std: float = 0.1):
        super().__init__()
        self.pcfg = pcfg
        self.W1 = nn.Parameter(torch.normal(0.0, std, (pcfg.projector_hidden, pcfg.anchor_dim),
                                            generator=gen, dtype=DTYPE))
        self.W2 = nn.Parameter(torch.normal(0.0, std, (pcfg.prompt_len * pcfg.model_dim, pcfg.projector_hidden),
                                            generator=gen, dtype=DTYPE))
        self.ln = nn.LayerNorm(pcfg.projector_hidden, dtype=DTYPE)

    def forward(self, v_cog) -> torch.Tensor:
        return project_prompt(self.pcfg, self.W1, self.W2, v_cog, self.ln.weight, self.ln.bias)


class ToySeqModel(nn.Module):
    """One causal attention block over a small vocabulary, plus the projectors."""

    def __init__(self, pcfg: ProjectorConfig, vocab: int, max_len: int = 64, seed: int = 0, std: float = 0.1):
        super().__init__()
        if vocab < 2:
            raise InvalidInputError("vocab must be >= 2")
        self.pcfg = pcfg
        self.vocab = vocab
        self.max_len = max_len
        d = pcfg.model_dim
        gen = torch.Generator().manual_seed(seed)

        def w(*shape):
            return nn.Parameter(torch.normal(0.0, std, shape, generator=gen, dtype=DTYPE))

        self.tok_emb = w(vocab, d)
        self.pos_emb = w(max_len, d)
        self.ln1 = nn.LayerNorm(d, dtype=DTYPE)
        self.Wq, self.Wk, self.Wv, self.Wo = w(d, d), w(d, d), w(d, d), w(d, d)
        self.ln2 = nn.LayerNorm(d, dtype=DTYPE)
        self.ff1, self.ff2 = w(2 * d, d), w(d, 2 * d)
        self.ln_f = nn.LayerNorm(d, dtype=DTYPE)
        self.out_proj = w(vocab, d)
        self.align_proj = w(pcfg.anchor_dim, d)      # A_phi: hidden state -> tangent space
        self.projector = CognitiveProjector(pcfg, gen, std)

    def embed_tokens(self, tokens: Sequence[int]) -> torch.Tensor:
        ids = torch.as_tensor(list(tokens), dtype=torch.long).reshape(-1)
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.vocab):
            raise InvalidInputError(f"token id outside vocabulary [0, {self.vocab})")
        return self.tok_emb[ids]

    def hidden_states(self, seq: torch.Tensor) -> torch.Tensor:
        """Final-layer hidden states of an embedded sequence (n, d_model)."""
        n, d = seq.shape
        if n > self.max_len:
            raise InvalidInputError(f"sequence length {n} exceeds max_len {self.max_len}")
        x = seq + self.pos_emb[:n]
        h = self.ln1(x)
        q, k, v = h @ self.Wq.T, h @ self.Wk.T, h @ self.Wv.T
        scores = (q @ k.T) / math.sqrt(d)
        causal = torch.ones(n, n, dtype=torch.bool).tril()
        attn = torch.softmax(scores.masked_fill(~causal, float("-inf")), dim=-1)
        x = x + (attn @ v) @ self.Wo.T
        x = x + nn.functional.gelu(self.ln2(x) @ self.ff1.T, approximate="tanh") @ self.ff2.T
        return self.ln_f(x)

    def logits(self, hidden: torch.Tensor) -> torch.Tensor:
        return hidden @ self.out_proj.T

    def align(self, h_last: torch.Tensor) -> torch.Tensor:
        return h_last @ self.align_proj.T


def assemble_input(prompt, context: Sequence[int], target: Sequence[int], model: ToySeqModel) -> torch.Tensor:
    """Prompt rows, then context embeddings, then target embeddings."""
    parts = [_t(prompt).reshape(-1, model.pcfg.model_dim)]
    parts.append(model.embed_tokens(context).reshape(-1, model.pcfg.model_dim))
    parts.append(model.embed_tokens(target).reshape(-1, model.pcfg.model_dim))
    return torch.cat(parts, dim=0)


def sct_loss(pcfg: ProjectorConfig, h_last, v_cog, A_phi=None):
    """``1 - cos(A_phi(h_last), v_cog)`` with ``cosine_eps`` added to the norm product.

    ``A_phi`` may be a callable or a matrix; ``None`` treats ``h_last`` as
    already projected. Returns a tensor if any input is one, else a float.
    """
    as_tensor = any(isinstance(x, torch.Tensor) for x in (h_last, v_cog, A_phi))
    h = _t(h_last)
    if A_phi is None:
        v_sem = h
    elif callable(A_phi):
        v_sem = A_phi(h)
    else:
        v_sem = _t(A_phi) @ h
    v = _t(v_cog)
    cos = (v_sem @ v) / (v_sem.norm() * v.norm() + pcfg.cosine_eps)
    loss = 1.0 - cos
    return loss if as_tensor else float(loss)


@dataclass(frozen=True)
class AlignSample:
    context: tuple[int, ...]
    target: tuple[int, ...]
    response: tuple[int, ...]        # Y, the teacher-forced output tokens
    v_cog: tuple[float, ...]


@dataclass(frozen=True)
class AlignLoss:
    sft: float
    sct: float
    total: float


def _sample_terms(pcfg: ProjectorConfig, model: ToySeqModel, s: AlignSample):
    v = _t(s.v_cog)
    prefix = assemble_input(model.projector(v), s.context, s.target, model)
    if not s.response:
        raise InvalidInputError("each sample needs at least one response token")
    seq = torch.cat([prefix, model.embed_tokens(s.response)], dim=0)
    h = model.hidden_states(seq)
    start = prefix.shape[0] - 1
    pred = model.logits(h[start:start + len(s.response)])
    ce = nn.functional.cross_entropy(pred, torch.as_tensor(s.response, dtype=torch.long), reduction="sum")
    sct = sct_loss(pcfg, h[-1], v, model.align)
    return ce, len(s.response), sct


def total_loss(pcfg: ProjectorConfig, model: ToySeqModel, batch: Sequence[AlignSample]):
    """(sft, sct, total) tensors: token-mean cross-entropy, mean SCT, sft + lambda * sct."""
    if not batch:
        raise InvalidInputError("batch must be nonempty")
    ce_sum = torch.zeros((), dtype=DTYPE)
    n_tok = 0
    scts = []
    for s in batch:
        ce, nt, sct = _sample_terms(pcfg, model, s)
        ce_sum = ce_sum + ce
        n_tok += nt
        scts.append(sct)
    sft = ce_sum / n_tok
    sct = torch.stack(scts).mean()
    total = sft + pcfg.lambda_sct * sct
    for name, term in (("sft", sft), ("sct", sct), ("total", total)):
        if not torch.isfinite(term):
            raise DivergenceError(f"non-finite {name}", term=name)
    return sft, sct, total


@dataclass(frozen=True)
class AlignRunConfig:
    projector: ProjectorConfig = ProjectorConfig()
    vocab: int = 16
    epochs: int = 3
    learning_rate: float = 2e-4
    batch_size: int = 4
    seed: int = 0
    n_samples: int = 400
    n_clusters: int = 4

    @classmethod
    def from_dict(cls, d: dict) -> "AlignRunConfig":
        d = dict(d)
        proj_keys = {f.name for f in fields(ProjectorConfig)}
        run_keys = {f.name for f in fields(cls)} - {"projector"}
        unknown = set(d) - proj_keys - run_keys - {"projector"}
        if unknown:
            raise SchemaError(f"unknown config keys {sorted(unknown)}")
        proj = dict(d.pop("projector", {}) or {})
        for k in list(d):
            if k in proj_keys:
                proj[k] = d.pop(k)
        return cls(projector=ProjectorConfig(**proj), **d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(out.pop("projector"))
        return out


def make_alignment_dataset(n: int, vocab: int, anchor_dim: int, n_clusters: int, seed: int,
                           anchors: Optional[np.ndarray] = None,
                           context_len: int = 3, target_len: int = 4, response_len: int = 2) -> list[AlignSample]:
    """Random contexts/targets whose response suffix is fixed by the anchor's cluster.

    Anchors are drawn around ``n_clusters`` random centres unless given; when
    given, clusters come from the nearest of ``n_clusters`` anchors picked
    as centres.
    """
    if n < 1 or vocab < 2:
        raise InvalidInputError("need n >= 1 and vocab >= 2")
    rng = np.random.default_rng(seed)
    if anchors is None:
        centres = rng.standard_normal((n_clusters, anchor_dim))
        cluster = rng.integers(0, n_clusters, size=n)
        v = centres[cluster] + 0.1 * rng.standard_normal((n, anchor_dim))
    else:
        v = np.asarray(anchors, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != anchor_dim:
            raise InvalidInputError(f"anchors must have shape (n, {anchor_dim})")
        pick = rng.choice(len(v), size=min(n_clusters, len(v)), replace=False)
        cluster = np.argmin(((v[:, None, :] - v[pick][None, :, :]) ** 2).sum(-1), axis=1)
        n = len(v)
    suffixes = rng.integers(0, vocab, size=(n_clusters, response_len))
    out = []
    for i in range(n):
        out.append(AlignSample(
            context=tuple(int(t) for t in rng.integers(0, vocab, size=context_len)),
            target=tuple(int(t) for t in rng.integers(0, vocab, size=target_len)),
            response=tuple(int(t) for t in suffixes[cluster[i]]),
            v_cog=tuple(float(x) for x in v[i]),
        ))
    return out


@dataclass
class AlignResult:
    model: ToySeqModel
    trace: list[AlignLoss]


def align_train(run: AlignRunConfig, dataset: Sequence[AlignSample],
                model: Optional[ToySeqModel] = None, steps: Optional[int] = None) -> AlignResult:
    """Adam over shuffled minibatches; ``steps`` overrides ``epochs`` when given."""
    if not dataset:
        raise InvalidInputError("dataset must be nonempty")
    pcfg = run.projector
    model = model or ToySeqModel(pcfg, run.vocab, seed=run.seed)
    opt = torch.optim.Adam(model.parameters(), lr=run.learning_rate)
    order = torch.Generator().manual_seed(run.seed + 1)
    per_epoch = math.ceil(len(dataset) / run.batch_size)
    n_steps = steps if steps is not None else run.epochs * per_epoch
    trace = []
    perm, pos = torch.randperm(len(dataset), generator=order).tolist(), 0
    for _ in range(n_steps):
        if pos >= len(dataset):
            perm, pos = torch.randperm(len(dataset), generator=order).tolist(), 0
        batch = [dataset[i] for i in perm[pos:pos + run.batch_size]]
        pos += run.batch_size
        opt.zero_grad()
        sft, sct, total = total_loss(pcfg, model, batch)
        if total.item() > DIVERGENCE_LIMIT:
            raise DivergenceError(f"total loss {total.item():.3g} exceeds {DIVERGENCE_LIMIT:g}", term="total")
        total.backward()
        opt.step()
        trace.append(AlignLoss(sft.item(), sct.item(), total.item()))
    return AlignResult(model, trace)


@torch.no_grad()
def infer(model: ToySeqModel, context: Sequence[int], target: Sequence[int], max_new: int = 4) -> list[int]:
    """Greedy decoding from context and target alone; no prompt or anchor involved."""
    seq = torch.cat([model.embed_tokens(context).reshape(-1, model.pcfg.model_dim),
                     model.embed_tokens(target).reshape(-1, model.pcfg.model_dim)])
    out = []
    for _ in range(max_new):
        if seq.shape[0] == 0:
            nxt = 0
        else:
            nxt = int(torch.argmax(model.logits(model.hidden_states(seq)[-1])))
        out.append(nxt)
        seq = torch.cat([seq, model.embed_tokens([nxt])])
    return out


def write_trace_csv(path, trace: Sequence[AlignLoss]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "sft", "sct", "total"])
        for i, t in enumerate(trace):
            w.writerow([i, repr(t.sft), repr(t.sct), repr(t.total)])


def read_trace_csv(path) -> list[AlignLoss]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [AlignLoss(float(r["sft"]), float(r["sct"]), float(r["total"])) for r in rows]


def save_model(path, model: ToySeqModel, run: AlignRunConfig, extra: Optional[dict] = None) -> None:
    payload = {
        "config": run.to_dict(),
        "parameters": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                       for k, v in model.state_dict().items()},
    }
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> tuple[ToySeqModel, AlignRunConfig]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    run = AlignRunConfig.from_dict(payload["config"])
    model = ToySeqModel(run.projector, run.vocab, seed=run.seed)
    model.load_state_dict({k: torch.tensor(v["data"], dtype=DTYPE).reshape(v["shape"])
                           for k, v in payload["parameters"].items()})
    return model, run
