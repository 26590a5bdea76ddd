"""Insertion Transformer (baseline variant).

The decoder sees ``<start> hyp <end>`` without a causal mask; adjacent pairs of
its n + 2 outputs are concatenated and projected into n + 1 slot vectors. Each
slot gets a content softmax (weights tied to the decoder embedding) and a single
learned query attends over the slots to give the location softmax.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .corpus import END, PAD, START
from .distributions import SlotDistributions

CHECKPOINT_MAGIC = b"IOLAB"
CHECKPOINT_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    d_ffn: int = 128
    max_len: int = 64
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        dims = (self.vocab_size, self.d_model, self.n_layers, self.n_heads, self.d_ffn, self.max_len)
        if min(dims) < 1:
            raise ModelError("all model dimensions must be >= 1")
        if self.d_model % self.n_heads:
            raise ModelError("d_model must be divisible by n_heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ModelError("dropout_rate must be in [0, 1)")


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    i = torch.arange(0, dim, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / dim)
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : dim // 2])
    return pe.to(dtype)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float) -> None:
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        return x.view(b, t, self.n_heads, self.d_head).transpose(1, 2)

    def forward(self, query: torch.Tensor, memory: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        # key_mask: (B, T_k) True where the key is real
        q, k, v = self._split(self.q(query)), self._split(self.k(memory)), self._split(self.v(memory))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        attn = self.dropout(torch.softmax(scores, dim=-1))
        out = (attn @ v).transpose(1, 2).reshape(query.shape)
        return self.o(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ffn: int, dropout: float) -> None:
        super().__init__()
        self.inner = nn.Linear(d_model, d_ffn)
        self.outer = nn.Linear(d_ffn, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.outer(self.dropout(F.gelu(self.inner(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout_rate)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ffn, cfg.dropout_rate)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout_rate)

    def forward(self, x, mask):
        h = self.norm1(x)
        x = x + self.dropout(self.self_attn(h, h, mask))
        return x + self.dropout(self.ffn(self.norm2(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout_rate)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout_rate)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ffn, cfg.dropout_rate)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout_rate)

    def forward(self, x, mask, memory, memory_mask):
        h = self.norm1(x)
        x = x + self.dropout(self.self_attn(h, h, mask))  # no causal mask
        x = x + self.dropout(self.cross_attn(self.norm2(x), memory, memory_mask))
        return x + self.dropout(self.ffn(self.norm3(x)))


@dataclass
class Encoded:
    memory: torch.Tensor  # (B, S, d)
    mask: torch.Tensor    # (B, S)


class InsertionTransformer(nn.Module):
    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        d = config.d_model
        self.src_embed = nn.Embedding(config.vocab_size, d)
        self.tgt_embed = nn.Embedding(config.vocab_size, d)
        self.encoder = nn.ModuleList(EncoderLayer(config) for _ in range(config.n_layers))
        self.decoder = nn.ModuleList(DecoderLayer(config) for _ in range(config.n_layers))
        self.enc_norm = nn.LayerNorm(d)
        self.dec_norm = nn.LayerNorm(d)
        self.slot_proj = nn.Linear(2 * d, d)
        self.content_bias = nn.Parameter(torch.zeros(config.vocab_size))
        self.location_query = nn.Parameter(torch.zeros(d))
        self.dropout = nn.Dropout(config.dropout_rate)
        self.use_positions = True  # diagnostic switch
        self.reset_parameters()

    def reset_parameters(self) -> None:
        gen = torch.Generator().manual_seed(self.config.seed)
        d = self.config.d_model
        for name, p in self.named_parameters():
            with torch.no_grad():
                if "norm" in name:
                    p.fill_(1.0 if name.endswith("weight") else 0.0)
                elif name.endswith("embed.weight"):
                    p.normal_(0.0, d ** -0.5, generator=gen)
                elif name == "location_query":
                    p.normal_(0.0, d ** -0.5, generator=gen)
                elif p.dim() == 2:
                    nn.init.xavier_uniform_(p, generator=gen)
                else:
                    p.zero_()

    def _embed(self, table: nn.Embedding, ids: torch.Tensor) -> torch.Tensor:
        x = table(ids) * math.sqrt(self.config.d_model)
        if self.use_positions:
            x = x + sinusoidal_positions(ids.shape[1], self.config.d_model, x.dtype)
        return self.dropout(x)

    def _check_ids(self, seqs: Sequence[Sequence[int]], extra: int) -> None:
        cfg = self.config
        for s in seqs:
            if len(s) + extra > cfg.max_len + 2:
                raise ModelError(f"sequence of length {len(s)} exceeds max_len {cfg.max_len}")
            for t in s:
                if not 0 <= t < cfg.vocab_size:
                    raise ModelError(f"token id {t} outside vocabulary of size {cfg.vocab_size}")

    def encode(self, sources: Sequence[Sequence[int]]) -> Encoded:
        """Encode ``src <end>``; the end marker gives cross-attention a fixed key to rest on."""
        self._check_ids(sources, 1)
        width = max(len(s) for s in sources) + 1
        ids = torch.full((len(sources), width), PAD, dtype=torch.long)
        mask = torch.zeros((len(sources), width), dtype=torch.bool)
        for b, s in enumerate(sources):
            ids[b, : len(s) + 1] = torch.tensor([*s, END], dtype=torch.long)
            mask[b, : len(s) + 1] = True
        x = self._embed(self.src_embed, ids)
        for layer in self.encoder:
            x = layer(x, mask)
        return Encoded(self.enc_norm(x), mask)

    def decoder_states(self, enc: Encoded, hypotheses: Sequence[Sequence[int]]):
        """Decoder outputs for ``<start> hyp <end>`` (B, n + 2, d) and their mask."""
        self._check_ids(hypotheses, 2)
        bsz = len(hypotheses)
        width = max(len(h) for h in hypotheses) + 2
        ids = torch.full((bsz, width), PAD, dtype=torch.long)
        mask = torch.zeros((bsz, width), dtype=torch.bool)
        for b, h in enumerate(hypotheses):
            ids[b, : len(h) + 2] = torch.tensor([START, *h, END], dtype=torch.long)
            mask[b, : len(h) + 2] = True
        x = self._embed(self.tgt_embed, ids)
        for layer in self.decoder:
            x = layer(x, mask, enc.memory, enc.mask)
        return self.dec_norm(x), mask

    def slot_logits(self, enc: Encoded, hypotheses: Sequence[Sequence[int]]):
        """Content logits (B, L, V), location logits (B, L) and slot mask (B, L), L = max n + 1."""
        x, mask = self.decoder_states(enc, hypotheses)
        pairs = torch.cat([x[:, :-1], x[:, 1:]], dim=-1)
        slots = F.gelu(self.slot_proj(pairs))
        slot_mask = mask[:, 1:]
        content = slots @ self.tgt_embed.weight.T + self.content_bias
        location = (slots @ self.location_query).masked_fill(~slot_mask, float("-inf"))
        return content, location, slot_mask

    def forward(self, sources, hypotheses):
        """Log p(c | l) and log p(l) for a batch; padded slots of location are -inf."""
        content, location, slot_mask = self.slot_logits(self.encode(sources), hypotheses)
        return F.log_softmax(content, dim=-1), F.log_softmax(location, dim=-1), slot_mask

    # decoding protocol: encode once, then query slot distributions per canvas
    @property
    def max_output_len(self) -> int:
        return self.config.max_len

    @torch.no_grad()
    def prepare(self, source: Sequence[int]) -> Encoded:
        self.eval()
        return self.encode([list(source)])

    @torch.no_grad()
    def slot_distributions(self, prepared: Encoded, hypothesis: Sequence[int]) -> SlotDistributions:
        content, location, _ = self.slot_logits(prepared, [list(hypothesis)])
        content_logp = F.log_softmax(content[0].double(), dim=-1).numpy()
        location_logp = F.log_softmax(location[0].double(), dim=-1).numpy()
        return SlotDistributions(content_logp, location_logp)

    def distributions(self, source: Sequence[int], hypothesis: Sequence[int]) -> SlotDistributions:
        return self.slot_distributions(self.prepare(source), hypothesis)


def init(config: ModelConfig) -> InsertionTransformer:
    return InsertionTransformer(config)


def policy_targets(policies, vocab_size: int, dtype=torch.float32):
    """Stack oracle policies into dense content (B, L, V) and location (B, L) targets."""
    width = max(p.num_slots for p in policies)
    content = np.zeros((len(policies), width, vocab_size))
    location = np.zeros((len(policies), width))
    for b, p in enumerate(policies):
        for l, dist in enumerate(p.slots):
            for c, q in dist.items():
                content[b, l, c] = q
        location[b, : p.num_slots] = p.location
    return torch.as_tensor(content, dtype=dtype), torch.as_tensor(location, dtype=dtype)


def _xlogx(q: torch.Tensor) -> torch.Tensor:
    return torch.where(q > 0, q * torch.log(torch.where(q > 0, q, torch.ones_like(q))), torch.zeros_like(q))


def sequence_losses(content_logp, location_logp, slot_mask, q_content, q_location) -> torch.Tensor:
    """Per-example loss: mean content KL over the n + 1 slots plus the location KL.

    Targets are constants; entries with zero target mass contribute nothing.
    """
    safe_c = torch.where(q_content > 0, content_logp, torch.zeros_like(content_logp))
    kl_slot = (_xlogx(q_content) - q_content * safe_c).sum(-1)
    kl_slot = torch.where(slot_mask, kl_slot, torch.zeros_like(kl_slot))
    content_term = kl_slot.sum(-1) / slot_mask.sum(-1)
    safe_l = torch.where(q_location > 0, location_logp, torch.zeros_like(location_logp))
    location_term = (_xlogx(q_location) - q_location * safe_l).sum(-1)
    return content_term + location_term


def batch_loss(model: InsertionTransformer, sources, hypotheses, policies) -> torch.Tensor:
    content_logp, location_logp, slot_mask = model(sources, hypotheses)
    dtype = content_logp.dtype
    q_content, q_location = policy_targets(policies, model.config.vocab_size, dtype)
    losses = sequence_losses(content_logp, location_logp, slot_mask, q_content, q_location)
    bad = ~torch.isfinite(losses)
    if bad.any():
        raise ModelError(f"non-finite loss for example {int(bad.nonzero()[0, 0])}")
    return losses.mean()


def backward(model: InsertionTransformer, sources, hypotheses, policies) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and exact gradients for the deterministic forward graph (dropout off)."""
    was_training = model.training
    model.eval()
    model.zero_grad(set_to_none=True)
    loss = batch_loss(model, sources, hypotheses, policies)
    loss.backward()
    grads = {n: (p.grad.detach().cpu().numpy().copy() if p.grad is not None else np.zeros(tuple(p.shape)))
             for n, p in model.named_parameters()}
    model.train(was_training)
    return float(loss.detach()), grads


def save_checkpoint(model: InsertionTransformer, path: str | Path) -> None:
    cfg = json.dumps(asdict(model.config), sort_keys=True).encode("utf-8")
    out = bytearray(CHECKPOINT_MAGIC)
    out += struct.pack("<II", CHECKPOINT_VERSION, len(cfg)) + cfg
    state = model.state_dict()
    out += struct.pack("<I", len(state))
    for name, tensor in state.items():
        raw = name.encode("utf-8")
        arr = tensor.detach().cpu().numpy().astype("<f4")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes(order="C")
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path: str | Path) -> InsertionTransformer:
    data = Path(path).read_bytes()
    if data[:5] != CHECKPOINT_MAGIC:
        raise ModelError(f"{path}: not a checkpoint (bad magic)")
    off = 5
    version, cfg_len = struct.unpack_from("<II", data, off)
    off += 8
    if version != CHECKPOINT_VERSION:
        raise ModelError(f"{path}: unsupported checkpoint version {version}")
    config = ModelConfig(**json.loads(data[off: off + cfg_len].decode("utf-8")))
    off += cfg_len
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off: off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        state[name] = torch.from_numpy(arr.astype(np.float32))
    model = InsertionTransformer(config)
    model.load_state_dict(state)
    return model
