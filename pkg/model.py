"""The full event model: embeddings -> TCF -> MTBT -> backbone -> intensity and prediction heads."""
import logging
from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from backbone import Backbone, BackboneConfig, assemble_input, encode_context
from embeddings import TemporalEmbedder, build_type_tokens, embed_tokens, previous_times, temporal_embed
from exceptions import ConfigError, ShapeError
from intensity_tpp import IntensityHead
from mtbt import MtbtConfig, MultiScaleTemporalBias
from numerics import DTYPE, init_parameters, linear, softmax_lastdim
from tcf import TcfConfig, TemporalCrossFusion

logger = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    num_types: int
    vocab_size: int
    dim: int = 64
    time_embed: str = 'linear'
    fusion_mode: str = 'cross_attention'
    tcf_heads: int = 4
    dropout: float = 0.1
    mtbt: MtbtConfig = field(default_factory=MtbtConfig)
    use_mtbt: bool = True
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    softplus_sharpness: float = 1.0

    @property
    def tcf(self):
        return TcfConfig(fusion_mode=self.fusion_mode, heads=self.tcf_heads, dim=self.dim, dropout=self.dropout)

    def validate(self):
        errors = []
        if self.num_types < 1:
            errors.append('a model needs at least one event type')
        if self.vocab_size < 2:
            errors.append('token vocabulary must hold padding plus at least one token')
        if self.softplus_sharpness <= 0:
            errors.append('softplus_sharpness must be > 0')
        if self.mtbt.dim != self.dim or self.backbone.dim != self.dim:
            errors.append(f'MTBT width {self.mtbt.dim} and backbone width {self.backbone.dim} must equal dim {self.dim}')
        errors.extend(self.tcf.validate())
        if self.use_mtbt:
            errors.extend(self.mtbt.validate())
        errors.extend(self.backbone.validate())
        return errors

    def check(self):
        errors = self.validate()
        if errors:
            raise ConfigError(errors)

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, payload):
        payload = dict(payload)
        payload['mtbt'] = MtbtConfig(**payload.get('mtbt', {}))
        payload['backbone'] = BackboneConfig(**payload.get('backbone', {}))
        return cls(**payload)

    @classmethod
    def from_run_config(cls, run_config, num_types, vocab_size, delta_range):
        dt_min, dt_max = delta_range
        return cls(
            num_types=num_types,
            vocab_size=vocab_size,
            dim=run_config.dim,
            time_embed=run_config.time_embed,
            fusion_mode=run_config.fusion,
            tcf_heads=run_config.tcf_heads,
            dropout=run_config.dropout,
            mtbt=MtbtConfig(
                heads=run_config.mtbt_heads,
                dim=run_config.dim,
                buckets=run_config.buckets,
                bucket_dim=run_config.bucket_dim,
                bias_mode=run_config.bias,
                epsilon=run_config.epsilon,
                dt_min=dt_min,
                dt_max=dt_max,
                causal=run_config.causal,
                layers=run_config.mtbt_layers,
            ),
            use_mtbt=run_config.use_mtbt,
            backbone=BackboneConfig(
                layers=run_config.backbone_layers,
                heads=run_config.backbone_heads,
                dim=run_config.dim,
                ffn_dim=run_config.ffn_dim,
                prompt_len=run_config.prompt_len,
                causal=run_config.causal,
                dropout=run_config.dropout,
            ),
            softplus_sharpness=run_config.softplus_sharpness,
        )


@dataclass
class SequenceOutput:
    hs: torch.Tensor
    event_vectors: torch.Tensor
    enhanced: torch.Tensor
    mtbt_attention: torch.Tensor = None
    tcf_attention: torch.Tensor = None
    segmap: object = None


class PredictionHeads(nn.Module):
    """Auxiliary heads read off h_i: next-type logits and the next scaled gap"""

    def __init__(self, num_types, dim):
        super().__init__()
        self.type_head = linear(dim, num_types)
        self.time_head = linear(dim, 1)

    def type_logits(self, h):
        return self.type_head(h)

    def type_probs(self, h):
        return softmax_lastdim(self.type_logits(h))

    def gap(self, h):
        return self.time_head(h).squeeze(-1)


class TalTppModel(nn.Module):

    def __init__(self, cfg, type_tokens, type_lengths):
        super().__init__()
        cfg.check()
        if type_tokens.shape[0] != cfg.num_types:
            raise ShapeError(f'type token table has {type_tokens.shape[0]} rows for {cfg.num_types} types')
        self.cfg = cfg
        self.token_embedding = nn.Embedding(cfg.vocab_size, cfg.dim, padding_idx=0, dtype=DTYPE)
        self.time_embedder = TemporalEmbedder(cfg.dim, cfg.time_embed)
        self.fusion = TemporalCrossFusion(cfg.tcf)
        self.mtbt = MultiScaleTemporalBias(cfg.mtbt) if cfg.use_mtbt else None
        self.backbone = Backbone(cfg.backbone)
        self.intensity = IntensityHead(cfg.num_types, cfg.dim, cfg.softplus_sharpness)
        self.heads = PredictionHeads(cfg.num_types, cfg.dim)
        self.register_buffer('type_tokens', torch.as_tensor(type_tokens, dtype=torch.long), persistent=False)
        self.register_buffer('type_lengths', torch.as_tensor(type_lengths, dtype=torch.long), persistent=False)

    @classmethod
    def build(cls, cfg, type_names, token_vocab, generator=None):
        """Tokenise the type names into `token_vocab` (growing it) and initialise a fresh model"""
        table, lengths = build_type_tokens(type_names, token_vocab, build=True)
        cfg.vocab_size = len(token_vocab)
        model = cls(cfg, table, lengths)
        if generator is not None:
            model.reset_parameters(generator)
        return model

    def reset_parameters(self, generator):
        init_parameters(self, generator)
        self.time_embedder.reset_parameters(generator)
        self.backbone.reset_parameters(generator)

    def forward_sequence(self, times, type_ids, generator=None):
        times = torch.as_tensor(times, dtype=DTYPE)
        type_ids = torch.as_tensor(type_ids, dtype=torch.long)
        if times.dim() != 1 or times.shape != type_ids.shape or times.shape[0] < 1:
            raise ShapeError(f'forward_sequence needs matching non-empty 1-D times and types, '
                             f'got {tuple(times.shape)} and {tuple(type_ids.shape)}')
        if int(type_ids.max()) >= self.cfg.num_types or int(type_ids.min()) < 0:
            raise ShapeError(f'type id out of range for K={self.cfg.num_types}')

        e_t = temporal_embed(times, previous_times(times), self.time_embedder)
        token_ids = self.type_tokens[type_ids]
        lengths = self.type_lengths[type_ids]
        token_mask = torch.arange(token_ids.shape[-1]).unsqueeze(0) < lengths.unsqueeze(-1)
        x = embed_tokens(token_ids, self.token_embedding.weight)

        fused = self.fusion(x, e_t, token_mask, generator)
        s = fused.pooled
        if self.mtbt is not None:
            s_prime, attentions = self.mtbt(s, times)
            mtbt_attention = torch.stack(attentions) if attentions else None
        else:
            s_prime, mtbt_attention = s, None

        per_event = [(e_t[i], x[i, :int(lengths[i])], s_prime[i]) for i in range(times.shape[0])]
        tokens, segmap = assemble_input(self.backbone.prompt, per_event)
        hs = encode_context(tokens, segmap, self.backbone, generator)
        return SequenceOutput(
            hs=hs,
            event_vectors=s,
            enhanced=s_prime,
            mtbt_attention=mtbt_attention,
            tcf_attention=fused.attention,
            segmap=segmap,
        )

    def forward_batch(self, batch, generator=None):
        outputs = []
        for b in range(len(batch)):
            times, type_ids, _ = batch.row(b)
            outputs.append(self.forward_sequence(times, type_ids, generator))
        return outputs

    def forward(self, times, type_ids, generator=None):
        return self.forward_sequence(times, type_ids, generator)
