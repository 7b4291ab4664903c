"""Cross-event self-attention with log-bucketized, per-head temporal biases."""
import math
from dataclasses import dataclass

import torch
from torch import nn

from exceptions import ConfigError, ShapeError
from numerics import DTYPE, LayerNorm, gelu, linear, matmul, softmax_lastdim

BIAS_MODES = ('full', 'none', 'no_log_bucket', 'shared')


@dataclass
class MtbtConfig:
    heads: int = 4
    dim: int = 64
    buckets: int = 32
    bucket_dim: int = 32
    bias_mode: str = 'full'
    epsilon: float = 1e-6
    dt_min: float = None
    dt_max: float = None
    causal: bool = True
    layers: int = 1

    def validate(self):
        errors = []
        if self.bias_mode not in BIAS_MODES:
            errors.append(f'bias_mode must be one of {BIAS_MODES}, got {self.bias_mode!r}')
        if self.buckets < 2:
            errors.append('bucket count B must be >= 2')
        if self.epsilon <= 0:
            errors.append('epsilon must be > 0')
        if self.heads < 1 or self.dim % self.heads:
            errors.append(f'dim {self.dim} must be divisible by {self.heads} MTBT heads')
        if self.layers < 0:
            errors.append('MTBT layer count must be >= 0')
        if self.dt_min is None or self.dt_max is None:
            errors.append('dt_min/dt_max are not fitted')
        elif not self.dt_max > self.dt_min >= 0:
            errors.append(f'need dt_max > dt_min >= 0, got dt_min={self.dt_min}, dt_max={self.dt_max}')
        return errors

    @property
    def head_dim(self):
        return self.dim // self.heads


def fit_delta_range(sequences):
    """Smallest positive pairwise gap and largest pairwise gap over the training split"""
    smallest, largest = math.inf, 0.0
    for seq in sequences:
        gaps = [g for g in seq.gaps if g > 0]
        if gaps:
            smallest = min(smallest, min(gaps))
            largest = max(largest, seq.events[-1].t - seq.events[0].t)
    if not math.isfinite(smallest) or largest <= smallest:
        raise ConfigError('cannot fit the time-delta range: need at least two distinct positive gaps')
    return smallest, largest


def time_delta_matrix(timestamps):
    t = torch.as_tensor(timestamps, dtype=DTYPE)
    return (t.unsqueeze(-1) - t.unsqueeze(-2)).abs()


def log_bucketize(delta, cfg):
    """Log-spaced bucket index in [0, B-1]; deltas outside the fitted range are clamped first"""
    if cfg.dt_min is None or cfg.dt_max is None or not cfg.dt_max > cfg.dt_min:
        raise ConfigError(f'log bucketization needs dt_max > dt_min, got {cfg.dt_min}, {cfg.dt_max}')
    delta = torch.as_tensor(delta, dtype=DTYPE).clamp(cfg.dt_min, cfg.dt_max)
    # same op on both ends so that delta == dt_max lands exactly in bucket B-1
    low = torch.log(torch.tensor(cfg.dt_min + cfg.epsilon, dtype=DTYPE))
    high = torch.log(torch.tensor(cfg.dt_max + cfg.epsilon, dtype=DTYPE))
    ratio = (torch.log(delta + cfg.epsilon) - low) / (high - low)
    index = torch.floor((cfg.buckets - 1) * ratio)
    return index.clamp(0, cfg.buckets - 1).long()


class TemporalBiasTable(nn.Module):
    """Bucket embeddings plus a 2-layer tanh MLP producing one bias per head"""

    def __init__(self, cfg):
        super().__init__()
        self.mode = cfg.bias_mode
        self.heads = cfg.heads
        if self.mode == 'none':
            return
        out_width = 1 if self.mode == 'shared' else cfg.heads
        if self.mode == 'no_log_bucket':
            self.hidden = linear(1, cfg.bucket_dim)
        else:
            self.embedding = nn.Embedding(cfg.buckets, cfg.bucket_dim, dtype=DTYPE)
            self.hidden = linear(cfg.bucket_dim, cfg.bucket_dim)
        self.out = linear(cfg.bucket_dim, out_width)

    def forward(self, buckets, delta=None):
        n = buckets.shape[-1]
        if self.mode == 'none':
            return torch.zeros(*buckets.shape, self.heads, dtype=DTYPE)
        if self.mode == 'no_log_bucket':
            if delta is None:
                raise ValueError('no_log_bucket bias needs the raw deltas')
            features = torch.as_tensor(delta, dtype=DTYPE).unsqueeze(-1)
        else:
            features = self.embedding(buckets)
        bias = self.out(torch.tanh(self.hidden(features)))
        if self.mode == 'shared':
            bias = bias.expand(*buckets.shape[:-1], n, self.heads)
        return bias


def bias_from_buckets(buckets, table, mode=None, delta=None):
    if mode is not None and mode != table.mode:
        raise ConfigError(f'bias table was built for mode {table.mode!r}, not {mode!r}')
    return table(buckets, delta)


def attention_mask(n, causal, valid=None):
    """allowed[i, j]: query i may attend to key j"""
    allowed = torch.ones(n, n, dtype=torch.bool)
    if causal:
        allowed = torch.tril(allowed)
    if valid is not None:
        allowed = allowed & valid.unsqueeze(-2)
    return allowed


class MtbtLayer(nn.Module):
    """score = QK^T/sqrt(d_k) + b; s' = FFN(LN(s + y))"""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        dim = cfg.dim
        self.w_q = linear(dim, dim, bias=False)
        self.w_k = linear(dim, dim, bias=False)
        self.w_v = linear(dim, dim, bias=False)
        self.w_o = linear(dim, dim, bias=False)
        self.norm = LayerNorm(dim)
        self.ffn_in = linear(dim, 4 * dim)
        self.ffn_out = linear(4 * dim, dim)

    def forward(self, s, bias, mask):
        n, dim = s.shape
        heads, head_dim = self.cfg.heads, self.cfg.head_dim
        if dim != self.cfg.dim:
            raise ShapeError(f'MTBT expects width {self.cfg.dim}, got {dim}')
        if not bool(mask.any(dim=-1).all()):
            raise ValueError('every query position is masked out for some event')
        q = self.w_q(s).reshape(n, heads, head_dim).transpose(0, 1)
        k = self.w_k(s).reshape(n, heads, head_dim).transpose(0, 1)
        v = self.w_v(s).reshape(n, heads, head_dim).transpose(0, 1)
        scores = matmul(q, k.transpose(-2, -1)) / math.sqrt(head_dim)
        if bias is not None:
            scores = scores + bias.permute(2, 0, 1)
        scores = scores.masked_fill(~mask, float('-inf'))
        weights = softmax_lastdim(scores)
        y = matmul(weights, v).transpose(0, 1).reshape(n, dim)
        y = self.w_o(y)
        out = self.ffn_out(gelu(self.ffn_in(self.norm(s + y))))
        return out, weights


def biased_self_attention(s, bias, mask, layer):
    return layer(s, bias, mask)


class MultiScaleTemporalBias(nn.Module):
    """Stack of MtbtLayers sharing one temporal bias table"""

    def __init__(self, cfg):
        super().__init__()
        errors = cfg.validate()
        if errors:
            raise ConfigError(errors)
        self.cfg = cfg
        self.bias_table = TemporalBiasTable(cfg)
        self.layers = nn.ModuleList([MtbtLayer(cfg) for _ in range(cfg.layers)])

    def temporal_bias(self, times):
        if self.cfg.bias_mode == 'none':
            return None
        delta = time_delta_matrix(times)
        buckets = log_bucketize(delta, self.cfg)
        return bias_from_buckets(buckets, self.bias_table, self.cfg.bias_mode, delta)

    def forward(self, s, times, valid=None):
        mask = attention_mask(s.shape[0], self.cfg.causal, valid)
        bias = self.temporal_bias(times)
        attentions = []
        for layer in self.layers:
            s, weights = layer(s, bias, mask)
            attentions.append(weights)
        return s, attentions
