"""Checkpoint bundles and the prediction service shared by the CLI and the HTTP API."""
import json
import logging

import torch

from config import RunConfig
from embeddings import Vocab, build_type_tokens
from event_data import TimeScaler, TypeVocabulary, parse_sequence
from exceptions import CheckpointError, ConfigError
from intensity_tpp import McConfig, predict_next_time, predict_next_type
from model import ModelConfig, TalTppModel
from numerics import DTYPE, load_state, read_checkpoint, save_checkpoint
from training_eval import evaluate

logger = logging.getLogger(__name__)


def mc_config(run_config):
    return McConfig(
        integral_samples=run_config.mc_samples,
        grid_size=run_config.grid_size,
        survival_cutoff=run_config.survival_cutoff,
        seed=run_config.seed,
    )


def save_bundle(path, model, scaler, type_vocab, token_vocab, run_config):
    """One checkpoint document carrying everything needed to rebuild the model"""
    extra = {
        'config_hash': run_config.config_hash(),
        'run_config': run_config.to_dict(),
        'model_config': model.cfg.to_json(),
        'scaler': scaler.to_json(),
        'delta_range': [model.cfg.mtbt.dt_min, model.cfg.mtbt.dt_max],
        'type_vocab': type_vocab.to_json(),
        'token_vocab': token_vocab.to_json(),
    }
    save_checkpoint(path, model, extra)


class PredictionService:
    """A trained model plus its scaler and vocabularies, answering queries in original time units"""

    def __init__(self, model, scaler, type_vocab, token_vocab, run_config):
        self.model = model.eval()
        self.scaler = scaler
        self.type_vocab = type_vocab
        self.token_vocab = token_vocab
        self.run_config = run_config
        self.mc = mc_config(run_config)
        self.config_hash = run_config.config_hash()

    @classmethod
    def load(cls, path):
        payload = read_checkpoint(path)
        extra = payload.get('extra', {})
        missing = [key for key in ('run_config', 'model_config', 'scaler', 'type_vocab', 'token_vocab')
                   if key not in extra]
        if missing:
            raise CheckpointError(f'checkpoint {path} lacks {", ".join(missing)}')
        run_config = RunConfig.from_dict(extra['run_config'])
        model_cfg = ModelConfig.from_json(extra['model_config'])
        type_vocab = TypeVocabulary.from_json(extra['type_vocab'])
        token_vocab = Vocab.from_json(extra['token_vocab'])
        table, lengths = build_type_tokens(type_vocab.names, token_vocab, build=False)
        model = TalTppModel(model_cfg, table, lengths)
        load_state(model, payload)
        logger.info('loaded checkpoint %s (K=%d, config %s)', path, len(type_vocab), extra['config_hash'][:12])
        return cls(model, TimeScaler.from_json(extra['scaler']), type_vocab, token_vocab, run_config)

    def sequence_from_payload(self, payload):
        """Parse a request body {"events": [{"t", "type"}, ...], "t_end"?} against the closed type vocabulary"""
        if isinstance(payload, dict):
            payload = {'seq_id': 'request', **payload}
        return parse_sequence(payload, self.type_vocab)

    def summary(self):
        cfg = self.model.cfg
        return {
            'config_hash': self.config_hash,
            'num_types': cfg.num_types,
            'type_names': self.type_vocab.to_json(),
            'fusion_mode': cfg.fusion_mode,
            'bias_mode': cfg.mtbt.bias_mode if cfg.use_mtbt else None,
            'use_mtbt': cfg.use_mtbt,
            'time_embed': cfg.time_embed,
            'dim': cfg.dim,
            'time_scale': self.scaler.scale,
        }

    def _route(self, route):
        route = route or self.run_config.route
        if route not in ('heads', 'mbr'):
            raise ConfigError(f'route must be heads or mbr, got {route!r}')
        return route

    def predict_next(self, sequence, route=None):
        route = self._route(route)
        scaled = self.scaler.transform(sequence)
        times = torch.tensor(scaled.times, dtype=DTYPE)
        type_ids = torch.tensor(scaled.type_ids, dtype=torch.long)
        with torch.no_grad():
            output = self.model.forward_sequence(times, type_ids)
            h = output.hs[-1]
            t_prev = times[-1]
            if route == 'heads':
                t_hat = t_prev + self.model.heads.gap(h)
                type_id = int(torch.argmax(self.model.heads.type_logits(h)))
            else:
                t_hat = predict_next_time(h, t_prev, self.model.intensity, self.mc)
                type_id = int(predict_next_type(h, t_hat, t_prev, self.model.intensity))
            probs = self.model.heads.type_probs(h)
        t_hat = float(t_hat)
        return {
            'seq_id': sequence.seq_id,
            'time': self.scaler.inverse_time(t_hat),
            'gap': (t_hat - float(t_prev)) * self.scaler.scale,
            'type_id': type_id,
            'type_text': self.type_vocab.names[type_id],
            'type_probs': [float(p) for p in probs],
            'route': route,
            'config_hash': self.config_hash,
        }

    def score(self, sequences, route=None):
        route = self._route(route)
        scaled = [self.scaler.transform(seq) for seq in sequences]
        metrics = evaluate(self.model, scaled, self.mc, route, self.scaler, seed=self.run_config.seed, step='score')
        metrics['config_hash'] = self.config_hash
        return metrics

    def attention(self, sequence):
        """MTBT weights as [layer][head][query][key], plus the TCF weights when cross-attention is used"""
        scaled = self.scaler.transform(sequence)
        with torch.no_grad():
            output = self.model.forward_sequence(
                torch.tensor(scaled.times, dtype=DTYPE),
                torch.tensor(scaled.type_ids, dtype=torch.long),
            )
        mtbt = [] if output.mtbt_attention is None else output.mtbt_attention.tolist()
        tcf = None if output.tcf_attention is None else output.tcf_attention.squeeze(-1).tolist()
        return {'seq_id': sequence.seq_id, 'mtbt': mtbt, 'tcf': tcf}


def dumps(payload):
    return json.dumps(payload, indent=2, sort_keys=True)
