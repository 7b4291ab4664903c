import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields

from dotenv import load_dotenv

from exceptions import ConfigError

load_dotenv()

FUSION_ALIASES = {
    'none': 'none',
    'additive': 'additive',
    'concat': 'concat',
    'xattn': 'cross_attention',
    'cross_attention': 'cross_attention',
}
BIAS_ALIASES = {
    'full': 'full',
    'none': 'none',
    'nolog': 'no_log_bucket',
    'no_log_bucket': 'no_log_bucket',
    'shared': 'shared',
}
TIME_EMBED_ALIASES = {
    'linear': 'linear',
    'sin': 'sinusoidal',
    'sinusoidal': 'sinusoidal',
    'interval': 'interval_mlp',
    'interval_mlp': 'interval_mlp',
}
ROUTES = ('heads', 'mbr')


class Config:
    """Base configuration"""
    SEED = int(os.getenv('TALTPP_SEED', 42))
    LOG_LEVEL = os.getenv('TALTPP_LOG_LEVEL', 'INFO')
    NUM_THREADS = int(os.getenv('TALTPP_NUM_THREADS', 1))

    # Serving
    CHECKPOINT = os.getenv('TALTPP_CHECKPOINT')
    CORS_ORIGINS = os.getenv('TALTPP_CORS_ORIGINS', 'http://localhost:3000').split(',')
    JSON_SORT_KEYS = False


class DevelopmentConfig(Config):
    """Development configuration"""
    DEBUG = True
    TESTING = False


class ProductionConfig(Config):
    """Production configuration"""
    DEBUG = False
    TESTING = False


class TestingConfig(Config):
    """Testing configuration"""
    DEBUG = True
    TESTING = True
    LOG_LEVEL = 'WARNING'


config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}


def configure_logging(level=None):
    """Install the root handler once; later calls only adjust the level"""
    level = (level or Config.LOG_LEVEL).upper()
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(
            level=level,
            format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        )
    root.setLevel(level)


@dataclass
class RunConfig:
    """Every knob a command can receive, flat, so a JSON file and CLI flags can share keys"""

    # paths
    data_dir: str = 'data'
    out_dir: str = 'runs/default'
    checkpoint: str = ''
    dataset: str = ''

    # generation
    preset: str = 'poisson'
    num_sequences: int = 500
    horizon: float = 50.0
    rate: float = 1.0
    num_types: int = 1
    hawkes_mu: float = 0.5
    hawkes_alpha: float = 0.8
    hawkes_beta: float = 1.0
    split_ratios: list = field(default_factory=lambda: [0.8, 0.1, 0.1])

    # model
    dim: int = 64
    time_embed: str = 'linear'
    fusion: str = 'cross_attention'
    tcf_heads: int = 4
    dropout: float = 0.1
    use_mtbt: bool = True
    bias: str = 'full'
    buckets: int = 32
    bucket_dim: int = 32
    mtbt_heads: int = 4
    mtbt_layers: int = 1
    epsilon: float = 1e-6
    causal: bool = True
    backbone_layers: int = 2
    backbone_heads: int = 4
    ffn_dim: int = 256
    prompt_len: int = 4
    softplus_sharpness: float = 1.0

    # likelihood / prediction
    mc_samples: int = 20
    grid_size: int = 256
    survival_cutoff: float = 1e-4

    # training
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 8
    alpha: float = 1.0
    beta: float = 1.0
    patience: int = 0
    seed: int = Config.SEED
    route: str = 'heads'
    progress: bool = True

    @classmethod
    def from_dict(cls, payload):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ConfigError([f'unknown config key: {key}' for key in unknown])
        return cls(**payload)

    @classmethod
    def load(cls, path=None, overrides=None):
        """Read a JSON config file, then apply flag overrides; flags win"""
        payload = {}
        if path:
            try:
                with open(path, 'r', encoding='utf-8') as handle:
                    payload = json.load(handle)
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f'cannot read config file {path}: {e}')
            if not isinstance(payload, dict):
                raise ConfigError(f'config file {path} must hold a JSON object')
        payload.update({k: v for k, v in (overrides or {}).items() if v is not None})
        run_config = cls.from_dict(payload)
        run_config.normalize()
        run_config.validate()
        return run_config

    def normalize(self):
        self.fusion = FUSION_ALIASES.get(self.fusion, self.fusion)
        self.bias = BIAS_ALIASES.get(self.bias, self.bias)
        self.time_embed = TIME_EMBED_ALIASES.get(self.time_embed, self.time_embed)

    def validate(self):
        """Collect every violation before raising"""
        errors = []
        if self.fusion not in FUSION_ALIASES.values():
            errors.append(f'fusion must be one of {sorted(set(FUSION_ALIASES))}, got {self.fusion!r}')
        if self.bias not in BIAS_ALIASES.values():
            errors.append(f'bias must be one of {sorted(set(BIAS_ALIASES))}, got {self.bias!r}')
        if self.time_embed not in TIME_EMBED_ALIASES.values():
            errors.append(f'time_embed must be one of {sorted(set(TIME_EMBED_ALIASES))}, got {self.time_embed!r}')
        if self.route not in ROUTES:
            errors.append(f'route must be one of {list(ROUTES)}, got {self.route!r}')
        if self.preset not in ('poisson', 'hawkes', 'hawkes_multi'):
            errors.append(f'preset must be poisson, hawkes or hawkes_multi, got {self.preset!r}')
        for name in ('dim', 'tcf_heads', 'mtbt_heads', 'backbone_heads', 'bucket_dim', 'ffn_dim',
                     'mc_samples', 'grid_size', 'batch_size', 'num_types', 'num_sequences'):
            if getattr(self, name) < 1:
                errors.append(f'{name} must be >= 1')
        for name in ('mtbt_layers', 'backbone_layers', 'prompt_len', 'epochs', 'patience'):
            if getattr(self, name) < 0:
                errors.append(f'{name} must be >= 0')
        if self.buckets < 2:
            errors.append('buckets must be >= 2')
        if self.epsilon <= 0:
            errors.append('epsilon must be > 0')
        if not 0 <= self.dropout < 1:
            errors.append('dropout must lie in [0, 1)')
        if not 0 < self.survival_cutoff < 1:
            errors.append('survival_cutoff must lie in (0, 1)')
        if self.lr < 0:
            errors.append('lr must be >= 0')
        if self.alpha < 0 or self.beta < 0:
            errors.append('loss weights alpha and beta must be >= 0')
        if self.softplus_sharpness <= 0:
            errors.append('softplus_sharpness must be > 0')
        if self.fusion == 'cross_attention' and self.tcf_heads >= 1 and self.dim % self.tcf_heads:
            errors.append(f'dim {self.dim} is not divisible by tcf_heads {self.tcf_heads}')
        if self.mtbt_heads >= 1 and self.dim % self.mtbt_heads:
            errors.append(f'dim {self.dim} is not divisible by mtbt_heads {self.mtbt_heads}')
        if self.backbone_heads >= 1 and self.dim % self.backbone_heads:
            errors.append(f'dim {self.dim} is not divisible by backbone_heads {self.backbone_heads}')
        if self.time_embed == 'sinusoidal' and self.dim % 2:
            errors.append('sinusoidal time embedding needs an even dim')
        if self.horizon <= 0 or self.rate <= 0:
            errors.append('horizon and rate must be > 0')
        if self.preset.startswith('hawkes'):
            if self.hawkes_mu <= 0 or self.hawkes_beta <= 0 or self.hawkes_alpha < 0:
                errors.append('hawkes parameters need mu > 0, alpha >= 0, beta > 0')
            elif self.hawkes_alpha / self.hawkes_beta >= 1:
                errors.append(
                    f'hawkes process is not stationary: alpha/beta = '
                    f'{self.hawkes_alpha / self.hawkes_beta:.4g} >= 1'
                )
        ratios = self.split_ratios
        if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
            errors.append('split_ratios must be three positive numbers summing to 1')
        if errors:
            raise ConfigError(errors)

    def to_dict(self):
        return asdict(self)

    def config_hash(self):
        """Provenance hash; paths and display-only switches are excluded"""
        payload = {k: v for k, v in self.to_dict().items()
                   if k not in ('data_dir', 'out_dir', 'checkpoint', 'dataset', 'progress')}
        canonical = json.dumps(payload, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


# Ablation row -> the flag combination that reproduces it
ABLATIONS = {
    'full model': {},
    'w/o TCF': {'fusion': 'none'},
    'w/o MTBT': {'use_mtbt': False},
    'token-only baseline': {'fusion': 'none', 'use_mtbt': False},
    'fusion: additive': {'fusion': 'additive'},
    'fusion: concat': {'fusion': 'concat'},
    'fusion: cross-attention': {'fusion': 'cross_attention'},
    'w/o temporal bias': {'bias': 'none'},
    'w/o log bucketization': {'bias': 'no_log_bucket'},
    'shared bias': {'bias': 'shared'},
    'buckets B=8': {'buckets': 8},
    'buckets B=16': {'buckets': 16},
    'buckets B=32': {'buckets': 32},
    'buckets B=64': {'buckets': 64},
    'buckets B=128': {'buckets': 128},
}

_FLAG_NAMES = {'fusion': '--fusion', 'bias': '--bias', 'buckets': '--buckets'}
_FLAG_VALUES = {'cross_attention': 'xattn', 'no_log_bucket': 'nolog'}


def ablation_flags(overrides):
    """CLI flags for one ablation row"""
    flags = []
    for key, value in overrides.items():
        if key == 'use_mtbt':
            if not value:
                flags.append('--no-mtbt')
            continue
        flags.extend([_FLAG_NAMES[key], str(_FLAG_VALUES.get(value, value))])
    return ' '.join(flags)
