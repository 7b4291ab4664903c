"""Temporal cross-fusion: inject an event's time embedding into its token rows, then pool."""
import math
from dataclasses import dataclass

import torch
from torch import nn

from exceptions import ConfigError, ShapeError
from numerics import LayerNorm, dropout, linear, matmul, softmax_lastdim

FUSION_MODES = ('none', 'additive', 'concat', 'cross_attention')


@dataclass
class TcfConfig:
    fusion_mode: str = 'cross_attention'
    heads: int = 4
    dim: int = 64
    dropout: float = 0.1

    def validate(self):
        errors = []
        if self.fusion_mode not in FUSION_MODES:
            errors.append(f'fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}')
        if self.fusion_mode == 'cross_attention' and (self.heads < 1 or self.dim % self.heads):
            errors.append(f'dim {self.dim} must be divisible by {self.heads} fusion heads')
        if not 0 <= self.dropout < 1:
            errors.append('fusion dropout must lie in [0, 1)')
        return errors

    @property
    def head_dim(self):
        return self.dim // self.heads


@dataclass
class FusedEventRep:
    tokens: torch.Tensor
    pooled: torch.Tensor
    attention: torch.Tensor = None


def pool_event(tokens, token_mask=None):
    """Mean over the token axis (-2), ignoring padded token slots"""
    if tokens.shape[-2] < 1:
        raise ShapeError('pool_event needs at least one token')
    if token_mask is None:
        return tokens.mean(dim=-2)
    weights = token_mask.to(tokens.dtype).unsqueeze(-1)
    return (tokens * weights).sum(dim=-2) / weights.sum(dim=-2)


class TemporalCrossFusion(nn.Module):
    """Owns only the parameters of its configured mode, each mode with its own LN"""

    def __init__(self, cfg):
        super().__init__()
        errors = cfg.validate()
        if errors:
            raise ConfigError(errors)
        self.cfg = cfg
        dim = cfg.dim
        if cfg.fusion_mode != 'none':
            self.norm = LayerNorm(dim)
        if cfg.fusion_mode == 'additive':
            self.w_t = linear(dim, dim, bias=False)
        elif cfg.fusion_mode == 'concat':
            self.w_c = linear(2 * dim, dim, bias=False)
        elif cfg.fusion_mode == 'cross_attention':
            self.w_q = linear(dim, dim, bias=False)
            self.w_k = linear(dim, dim, bias=False)
            self.w_v = linear(dim, dim, bias=False)
            self.w_o = linear(dim, dim, bias=False)

    def _check(self, x, e_t):
        if x.shape[-1] != self.cfg.dim or e_t.shape[-1] != self.cfg.dim:
            raise ShapeError(f'fusion expects width {self.cfg.dim}, got {x.shape[-1]} and {e_t.shape[-1]}')

    def fuse_additive(self, x, e_t, generator=None):
        self._check(x, e_t)
        shift = self.w_t(e_t).unsqueeze(-2).expand_as(x)
        return self.norm(x + dropout(shift, self.cfg.dropout, self.training, generator))

    def fuse_concat(self, x, e_t, generator=None):
        self._check(x, e_t)
        joined = torch.cat([x, e_t.unsqueeze(-2).expand_as(x)], dim=-1)
        return self.norm(x + dropout(self.w_c(joined), self.cfg.dropout, self.training, generator))

    def fuse_cross_attention(self, x, e_t, generator=None, return_attention=False):
        """Token queries against a single time key/value per head"""
        self._check(x, e_t)
        heads, head_dim = self.cfg.heads, self.cfg.head_dim
        lead = x.shape[:-2]
        length = x.shape[-2]
        q = self.w_q(x).reshape(*lead, length, heads, head_dim).transpose(-3, -2)
        k = self.w_k(e_t).reshape(*lead, heads, 1, head_dim)
        v = self.w_v(e_t).reshape(*lead, heads, 1, head_dim)
        scores = matmul(q, k.transpose(-2, -1)) / math.sqrt(head_dim)
        weights = softmax_lastdim(scores)
        attended = matmul(weights, v).transpose(-3, -2).reshape(*lead, length, self.cfg.dim)
        update = dropout(self.w_o(attended), self.cfg.dropout, self.training, generator)
        fused = self.norm(x + update)
        if return_attention:
            return fused, weights
        return fused

    def forward(self, x, e_t, token_mask=None, generator=None):
        mode = self.cfg.fusion_mode
        attention = None
        if mode == 'none':
            tokens = x
        elif mode == 'additive':
            tokens = self.fuse_additive(x, e_t, generator)
        elif mode == 'concat':
            tokens = self.fuse_concat(x, e_t, generator)
        else:
            tokens, attention = self.fuse_cross_attention(x, e_t, generator, return_attention=True)
        return FusedEventRep(tokens=tokens, pooled=pool_event(tokens, token_mask), attention=attention)
