import json

import pytest
import torch

from backbone import BackboneConfig
from cli import cmd_generate, cmd_train
from config import Config, RunConfig
from embeddings import Vocab
from event_data import Event, EventSequence
from model import ModelConfig, TalTppModel
from mtbt import MtbtConfig
from numerics import Rng

TYPE_NAMES = ['type_0', 'type_1']

# small enough for the whole pipeline to train in seconds
TINY_RUN = {
    'dim': 8,
    'tcf_heads': 2,
    'mtbt_heads': 2,
    'backbone_heads': 2,
    'backbone_layers': 1,
    'ffn_dim': 16,
    'bucket_dim': 4,
    'buckets': 8,
    'prompt_len': 2,
    'dropout': 0.0,
    'epochs': 2,
    'batch_size': 4,
    'mc_samples': 5,
    'grid_size': 64,
    'num_sequences': 20,
    'horizon': 10.0,
    'num_types': 2,
    'progress': False,
}


def sequence(times, types=None, seq_id='s0', t_end=None):
    types = types if types is not None else [0] * len(times)
    events = tuple(Event(t=float(t), type_id=int(k), type_text=f'type_{k}') for t, k in zip(times, types))
    return EventSequence(seq_id=seq_id, events=events, t_end=float(times[-1] if t_end is None else t_end))


def random_sequence(generator, n, num_types=2, seq_id='r0'):
    gaps = torch.rand(n, generator=generator, dtype=torch.float64) + 0.05
    times = torch.cumsum(gaps, dim=0).tolist()
    types = torch.randint(0, num_types, (n,), generator=generator).tolist()
    return sequence(times, types, seq_id=seq_id, t_end=times[-1] + 0.5)


def tiny_model_config(num_types=2, **overrides):
    dim = overrides.pop('dim', 8)
    mtbt = MtbtConfig(heads=2, dim=dim, buckets=8, bucket_dim=4, bias_mode=overrides.pop('bias_mode', 'full'),
                      dt_min=0.01, dt_max=50.0, layers=overrides.pop('mtbt_layers', 1))
    backbone = BackboneConfig(layers=overrides.pop('backbone_layers', 1), heads=2, dim=dim, ffn_dim=16,
                              prompt_len=overrides.pop('prompt_len', 2), dropout=0.0)
    values = dict(num_types=num_types, vocab_size=2, dim=dim, tcf_heads=2, dropout=0.0, mtbt=mtbt, backbone=backbone)
    values.update(overrides)
    return ModelConfig(**values)


def build_tiny_model(seed=0, num_types=2, **overrides):
    cfg = tiny_model_config(num_types=num_types, **overrides)
    names = [f'type_{k}' for k in range(num_types)]
    model = TalTppModel.build(cfg, names, Vocab(), Rng(seed).torch('init'))
    return model.eval()


@pytest.fixture
def make_sequence():
    return sequence


@pytest.fixture
def tiny_model():
    return build_tiny_model()


@pytest.fixture
def generator():
    g = torch.Generator()
    g.manual_seed(1234)
    return g


def write_run_config(path, data_dir, out_dir, **overrides):
    payload = dict(TINY_RUN, data_dir=str(data_dir), out_dir=str(out_dir))
    payload.update(overrides)
    path.write_text(json.dumps(payload), encoding='utf-8')
    return path


@pytest.fixture(scope='session')
def trained_run(tmp_path_factory):
    """A tiny Poisson corpus plus a model trained on it; shared by the CLI, service and HTTP tests"""
    torch.set_num_threads(Config.NUM_THREADS)
    root = tmp_path_factory.mktemp('run')
    config_path = write_run_config(root / 'run.json', root / 'data', root / 'out')
    run_config = RunConfig.load(str(config_path))
    cmd_generate(run_config)
    metrics = cmd_train(run_config)
    return {
        'root': root,
        'config': config_path,
        'data_dir': root / 'data',
        'out_dir': root / 'out',
        'checkpoint': root / 'out' / 'checkpoint.json',
        'metrics': metrics,
    }
