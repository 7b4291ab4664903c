"""Hybrid input assembly and the compact causal transformer that encodes it."""
import math
from dataclasses import dataclass, field

import torch
from torch import nn

from exceptions import ConfigError, ShapeError
from numerics import DTYPE, LayerNorm, dropout, gelu, linear, matmul, softmax_lastdim


@dataclass
class BackboneConfig:
    layers: int = 2
    heads: int = 4
    dim: int = 64
    ffn_dim: int = 256
    prompt_len: int = 4
    causal: bool = True
    dropout: float = 0.1

    def validate(self):
        errors = []
        if self.layers < 0:
            errors.append('backbone layer count must be >= 0')
        if self.heads < 1 or self.dim % self.heads:
            errors.append(f'dim {self.dim} must be divisible by {self.heads} backbone heads')
        if self.ffn_dim < 1:
            errors.append('backbone FFN width must be >= 1')
        if self.prompt_len < 0:
            errors.append('prompt length must be >= 0')
        return errors


@dataclass(frozen=True)
class EventSpan:
    """Inclusive token range of one event: e_t at `first`, s' at `last`"""
    first: int
    last: int


@dataclass
class SegmentMap:
    prompt: tuple
    events: list = field(default_factory=list)

    @property
    def total(self):
        return self.events[-1].last + 1 if self.events else self.prompt[1]

    @property
    def slots(self):
        return [span.last for span in self.events]


def assemble_input(prompt, per_event):
    """[P, e_t(t_1), X_1, s'_1, e_t(t_2), X_2, s'_2, ...] plus where each event lives"""
    dim = prompt.shape[-1]
    pieces = [prompt]
    position = prompt.shape[0]
    segmap = SegmentMap(prompt=(0, position))
    for i, (e_t, x, s_prime) in enumerate(per_event):
        if e_t.shape[-1] != dim or x.shape[-1] != dim or s_prime.shape[-1] != dim:
            raise ShapeError(f'event {i}: every input piece must have width {dim}')
        length = x.shape[0]
        pieces.extend([e_t.reshape(1, dim), x, s_prime.reshape(1, dim)])
        segmap.events.append(EventSpan(first=position, last=position + length + 1))
        position += length + 2
    return torch.cat(pieces, dim=0), segmap


class BackboneBlock(nn.Module):
    """Pre-LN block: x + Attn(LN(x)), then x + FFN(LN(x))"""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.attn_norm = LayerNorm(cfg.dim)
        self.w_qkv = linear(cfg.dim, 3 * cfg.dim)
        self.w_o = linear(cfg.dim, cfg.dim)
        self.ffn_norm = LayerNorm(cfg.dim)
        self.ffn_in = linear(cfg.dim, cfg.ffn_dim)
        self.ffn_out = linear(cfg.ffn_dim, cfg.dim)

    def forward(self, x, mask, generator=None):
        length, dim = x.shape
        heads = self.cfg.heads
        head_dim = dim // heads
        q, k, v = self.w_qkv(self.attn_norm(x)).split(dim, dim=-1)
        q = q.reshape(length, heads, head_dim).transpose(0, 1)
        k = k.reshape(length, heads, head_dim).transpose(0, 1)
        v = v.reshape(length, heads, head_dim).transpose(0, 1)
        scores = matmul(q, k.transpose(-2, -1)) / math.sqrt(head_dim)
        scores = scores.masked_fill(~mask, float('-inf'))
        attended = matmul(softmax_lastdim(scores), v).transpose(0, 1).reshape(length, dim)
        x = x + dropout(self.w_o(attended), self.cfg.dropout, self.training, generator)
        hidden = self.ffn_out(gelu(self.ffn_in(self.ffn_norm(x))))
        return x + dropout(hidden, self.cfg.dropout, self.training, generator)


class Backbone(nn.Module):
    """Trainable stand-in for the language model: learnable prompt + causal transformer"""

    def __init__(self, cfg):
        super().__init__()
        errors = cfg.validate()
        if errors:
            raise ConfigError(errors)
        self.cfg = cfg
        self.prompt = nn.Parameter(torch.zeros(cfg.prompt_len, cfg.dim, dtype=DTYPE))
        self.blocks = nn.ModuleList([BackboneBlock(cfg) for _ in range(cfg.layers)])

    def reset_parameters(self, generator):
        with torch.no_grad():
            self.prompt.copy_(torch.randn(self.prompt.shape, generator=generator, dtype=DTYPE) * 0.02)

    def forward(self, tokens, generator=None):
        length = tokens.shape[0]
        mask = torch.ones(length, length, dtype=torch.bool)
        if self.cfg.causal:
            mask = torch.tril(mask)
        hidden = tokens
        for block in self.blocks:
            hidden = block(hidden, mask, generator)
        return hidden


def encode_context(tokens, segmap, backbone, generator=None):
    """h_0 from the last prompt token (zeros without a prompt), then h_i at each s'_i slot"""
    hidden = backbone(tokens, generator)
    prompt_end = segmap.prompt[1]
    if prompt_end > 0:
        h0 = hidden[prompt_end - 1]
    else:
        h0 = torch.zeros(hidden.shape[-1], dtype=hidden.dtype)
    slots = torch.tensor(segmap.slots, dtype=torch.long)
    return torch.cat([h0.unsqueeze(0), hidden[slots]], dim=0)
