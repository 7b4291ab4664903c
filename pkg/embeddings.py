import json
import re

import torch
from torch import nn

from exceptions import ClosedVocabularyError, ConfigError, ShapeError
from numerics import DTYPE, linear

PAD_TOKEN = '<pad>'
TIME_EMBED_MODES = ('linear', 'sinusoidal', 'interval_mlp')
SINUSOID_BASE = 10000.0

_SPLIT = re.compile(r'[\W_]+', re.UNICODE)


class Vocab:
    """Token vocabulary; id 0 is reserved for padding"""

    def __init__(self, tokens=None):
        self.token_to_id = {PAD_TOKEN: 0}
        for token in tokens or []:
            self.add(token)

    def __len__(self):
        return len(self.token_to_id)

    def add(self, token):
        if token not in self.token_to_id:
            self.token_to_id[token] = len(self.token_to_id)
        return self.token_to_id[token]

    def to_json(self):
        return dict(self.token_to_id)

    @classmethod
    def from_json(cls, mapping):
        vocab = cls()
        vocab.token_to_id = {str(k): int(v) for k, v in mapping.items()}
        if vocab.token_to_id.get(PAD_TOKEN) != 0:
            raise ClosedVocabularyError('vocabulary does not reserve id 0 for padding')
        return vocab

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as handle:
            json.dump(self.to_json(), handle, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path, 'r', encoding='utf-8') as handle:
            return cls.from_json(json.load(handle))


def tokenize_type(type_text, vocab, build):
    """Lowercase, split on whitespace and punctuation, map to ids"""
    tokens = [tok for tok in _SPLIT.split(type_text.lower()) if tok]
    if not tokens:
        raise ClosedVocabularyError(f'event type {type_text!r} has no tokens')
    ids = []
    for token in tokens:
        if token in vocab.token_to_id:
            ids.append(vocab.token_to_id[token])
        elif build:
            ids.append(vocab.add(token))
        else:
            raise ClosedVocabularyError(f'unknown token {token!r} in event type {type_text!r}')
    return ids


def build_type_tokens(type_names, vocab, build=True):
    """Padded (K, L_max) token-id matrix plus per-type lengths"""
    rows = [tokenize_type(name, vocab, build) for name in type_names]
    width = max(len(row) for row in rows)
    table = torch.zeros(len(rows), width, dtype=torch.long)
    for k, row in enumerate(rows):
        table[k, :len(row)] = torch.tensor(row, dtype=torch.long)
    lengths = torch.tensor([len(row) for row in rows], dtype=torch.long)
    return table, lengths


def embed_tokens(ids, table):
    ids = torch.as_tensor(ids, dtype=torch.long)
    if ids.numel() and (int(ids.max()) >= table.shape[0] or int(ids.min()) < 0):
        raise ShapeError(f'token id out of range for a table of {table.shape[0]} rows')
    return table[ids]


class TemporalEmbedder(nn.Module):
    """e_t(t) in one of three forms: linear, sinusoidal, or an MLP over [t, t - prev_t]"""

    def __init__(self, dim, mode='linear'):
        super().__init__()
        if mode not in TIME_EMBED_MODES:
            raise ConfigError(f'time embedding mode must be one of {TIME_EMBED_MODES}, got {mode!r}')
        if mode == 'sinusoidal' and dim % 2:
            raise ConfigError(f'sinusoidal time embedding needs an even dimension, got {dim}')
        self.dim = dim
        self.mode = mode
        if mode == 'linear':
            self.weight = nn.Parameter(torch.zeros(dim, dtype=DTYPE))
            self.bias = nn.Parameter(torch.zeros(dim, dtype=DTYPE))
        elif mode == 'interval_mlp':
            self.hidden = linear(2, dim)
            self.out = linear(dim, dim)
        else:
            exponents = torch.arange(0, dim, 2, dtype=DTYPE) / dim
            self.register_buffer('frequencies', SINUSOID_BASE ** (-exponents), persistent=False)

    def reset_parameters(self, generator):
        if self.mode == 'linear':
            with torch.no_grad():
                # fan_in of a scalar input is 1
                self.weight.copy_(torch.randn(self.dim, generator=generator, dtype=DTYPE))
                self.bias.zero_()

    def forward(self, t, prev_t=None):
        t = torch.as_tensor(t, dtype=DTYPE)
        if self.mode == 'linear':
            return t.unsqueeze(-1) * self.weight + self.bias
        if self.mode == 'sinusoidal':
            angles = t.unsqueeze(-1) * self.frequencies
            out = torch.stack([torch.sin(angles), torch.cos(angles)], dim=-1)
            return out.reshape(*t.shape, self.dim)
        prev_t = t if prev_t is None else torch.as_tensor(prev_t, dtype=DTYPE)
        features = torch.stack([t, t - prev_t], dim=-1)
        return self.out(torch.tanh(self.hidden(features)))


def temporal_embed(t, prev_t, embedder):
    t = torch.as_tensor(t, dtype=DTYPE)
    prev_t = torch.as_tensor(prev_t, dtype=DTYPE)
    if bool((prev_t > t).any()) or bool((prev_t < 0).any()):
        raise ValueError('temporal_embed needs t >= prev_t >= 0')
    return embedder(t, prev_t)


def previous_times(times):
    """prev_t per event; the first event is its own predecessor"""
    return torch.cat([times[:1], times[:-1]])
