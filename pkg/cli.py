"""Command-line entry point: generate | train | eval | predict | attn-dump | list-ablations | stats | serve."""
import argparse
import json
import logging
import os
import sys

import numpy as np
import torch

from config import ABLATIONS, Config, RunConfig, ablation_flags, configure_logging
from embeddings import Vocab
from event_data import (batch_pad, dataset_stats, fit_time_scaler, load_dataset, save_sequences,
                        split_dataset)
from exceptions import ConfigError, TalTppError
from model import ModelConfig, TalTppModel
from mtbt import fit_delta_range
from numerics import Rng
from predictor import PredictionService, dumps, mc_config, save_bundle
from synth import HawkesParams, generate_corpus
from training_eval import TrainConfig, evaluate, train, write_history

logger = logging.getLogger(__name__)

SPLITS = ('train', 'val', 'test')
MANIFEST = 'manifest.json'
METRIC_KEYS = {
    'll': float,
    'll_per_event': float,
    'acc': (float, type(None)),
    'rmse': (float, type(None)),
    'rmse_scaled': (float, type(None)),
    'rmse_unscaled': (float, type(None)),
    'route': str,
    'n_events': int,
    'config_hash': str,
}


def validate_metrics(payload):
    """Schema check for metrics JSON; returns the payload or raises ConfigError listing every problem"""
    errors = []
    for key, kind in METRIC_KEYS.items():
        if key not in payload:
            errors.append(f'metrics lack {key!r}')
        elif not isinstance(payload[key], kind) or isinstance(payload[key], bool):
            errors.append(f'metrics field {key!r} has type {type(payload[key]).__name__}')
    if payload.get('route') not in ('heads', 'mbr'):
        errors.append('metrics route must be heads or mbr')
    acc = payload.get('acc')
    if isinstance(acc, float) and not 0.0 <= acc <= 1.0:
        errors.append('metrics acc must lie in [0, 1]')
    if errors:
        raise ConfigError(errors)
    return payload


def write_json(path, payload):
    with open(path, 'w', encoding='utf-8') as handle:
        handle.write(dumps(payload) + '\n')


def split_path(data_dir, split):
    return os.path.join(data_dir, f'{split}.jsonl')


def _hawkes_params(run_config):
    k = run_config.num_types
    if run_config.preset == 'hawkes_multi':
        # uniform cross-excitation keeps the spectral radius at alpha/beta
        return HawkesParams(
            mu=[run_config.hawkes_mu / k] * k,
            alpha=np.full((k, k), run_config.hawkes_alpha / k),
            beta=run_config.hawkes_beta,
        )
    probs = None if k == 1 else [1.0 / k] * k
    return HawkesParams(mu=run_config.hawkes_mu, alpha=run_config.hawkes_alpha,
                        beta=run_config.hawkes_beta, type_probs=probs)


def cmd_generate(run_config, force=False):
    os.makedirs(run_config.data_dir, exist_ok=True)
    targets = [split_path(run_config.data_dir, s) for s in SPLITS] + [os.path.join(run_config.data_dir, MANIFEST)]
    existing = [path for path in targets if os.path.exists(path)]
    if existing and not force:
        raise ConfigError(f'refusing to overwrite {", ".join(existing)}; pass --force')

    hawkes = _hawkes_params(run_config) if run_config.preset.startswith('hawkes') else None
    sequences = generate_corpus(
        run_config.preset, run_config.num_sequences, run_config.horizon, Rng(run_config.seed),
        rate=run_config.rate, num_types=run_config.num_types, hawkes=hawkes,
    )
    parts = split_dataset(sequences, tuple(run_config.split_ratios), run_config.seed)
    for split, part in zip(SPLITS, parts):
        save_sequences(split_path(run_config.data_dir, split), part)
    manifest = {
        'config_hash': run_config.config_hash(),
        'preset': run_config.preset,
        'seed': run_config.seed,
        'generator': hawkes.to_json() if hawkes else {'rate': run_config.rate, 'num_types': run_config.num_types},
        'counts': {split: len(part) for split, part in zip(SPLITS, parts)},
        'run_config': run_config.to_dict(),
    }
    write_json(targets[-1], manifest)
    logger.info('wrote %s to %s', ', '.join(f'{s}={len(p)}' for s, p in zip(SPLITS, parts)), run_config.data_dir)
    return manifest


def load_splits(data_dir):
    train_seqs, type_vocab = load_dataset(split_path(data_dir, 'train'))
    type_vocab.close()
    val_seqs, _ = load_dataset(split_path(data_dir, 'val'), type_vocab)
    test_seqs, _ = load_dataset(split_path(data_dir, 'test'), type_vocab)
    return train_seqs, val_seqs, test_seqs, type_vocab


def cmd_train(run_config):
    train_seqs, val_seqs, test_seqs, type_vocab = load_splits(run_config.data_dir)
    scaler = fit_time_scaler(train_seqs)
    train_s, val_s, test_s = ([scaler.transform(seq) for seq in part] for part in (train_seqs, val_seqs, test_seqs))

    token_vocab = Vocab()
    model_cfg = ModelConfig.from_run_config(run_config, len(type_vocab), 2, fit_delta_range(train_s))
    model = TalTppModel.build(model_cfg, type_vocab.names, token_vocab, Rng(run_config.seed).torch('init'))
    mc = mc_config(run_config)
    logger.info('training %d parameters on %d sequences (K=%d, scale=%.6g)',
                sum(p.numel() for p in model.parameters()), len(train_s), len(type_vocab), scaler.scale)

    result = train(model, train_s, val_s, TrainConfig.from_run_config(run_config), mc, batch_pad)
    metrics = evaluate(model, test_s, mc, run_config.route, scaler, seed=run_config.seed, step='test')
    metrics['rmse'] = metrics['rmse_scaled']
    metrics['config_hash'] = run_config.config_hash()
    metrics['best_epoch'] = result.best_epoch

    os.makedirs(run_config.out_dir, exist_ok=True)
    save_bundle(os.path.join(run_config.out_dir, 'checkpoint.json'), model, scaler, type_vocab, token_vocab, run_config)
    token_vocab.save(os.path.join(run_config.out_dir, 'vocab.json'))
    write_history(os.path.join(run_config.out_dir, 'history.csv'), result.history)
    write_json(os.path.join(run_config.out_dir, 'metrics.json'), validate_metrics(metrics))
    return metrics


def _checkpoint(args, run_config):
    path = args.checkpoint or run_config.checkpoint or os.path.join(run_config.out_dir, 'checkpoint.json')
    return PredictionService.load(path)


def cmd_eval(service, dataset, route=None, out=None):
    sequences, _ = load_dataset(dataset, service.type_vocab)
    metrics = service.score(sequences, route)
    metrics['rmse'] = metrics['rmse_scaled']
    validate_metrics(metrics)
    if out:
        write_json(out, metrics)
    return metrics


def cmd_predict(service, dataset, route=None, seq_id=None):
    sequences, _ = load_dataset(dataset, service.type_vocab)
    if seq_id is not None:
        sequences = [seq for seq in sequences if seq.seq_id == seq_id]
        if not sequences:
            raise ConfigError(f'no sequence {seq_id!r} in {dataset}')
    return [service.predict_next(seq, route) for seq in sequences]


def _heatmap(path, matrix, title):
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(matrix, cmap='Greys', vmin=0.0, vmax=1.0, interpolation='nearest')
    ax.set_xlabel('key event')
    ax.set_ylabel('query event')
    ax.set_title(title)
    fig.savefig(path, format='svg', bbox_inches='tight')
    plt.close(fig)


def cmd_attn_dump(service, dataset, out_dir, max_sequences=1, svg=True):
    """Per sequence, MTBT layer and head: the attention matrix as CSV (and an SVG heatmap)"""
    sequences, _ = load_dataset(dataset, service.type_vocab)
    if not sequences:
        raise ConfigError(f'{dataset} holds no sequences')
    if service.model.mtbt is None or not service.model.mtbt.layers:
        logger.warning('model has no MTBT layers; nothing to dump')
        return []
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for seq in sequences[:max_sequences]:
        attention = service.attention(seq)
        for layer, heads in enumerate(attention['mtbt']):
            for head, matrix in enumerate(heads):
                stem = os.path.join(out_dir, f'{seq.seq_id}_layer{layer}_head{head}')
                np.savetxt(stem + '.csv', np.asarray(matrix), delimiter=',', fmt='%.17g')
                written.append(stem + '.csv')
                if svg:
                    _heatmap(stem + '.svg', np.asarray(matrix), f'{seq.seq_id} layer {layer} head {head}')
                    written.append(stem + '.svg')
    manifest = os.path.join(out_dir, 'manifest.json')
    write_json(manifest, {
        'config_hash': service.config_hash,
        'dataset': dataset,
        'files': [os.path.basename(path) for path in written],
    })
    written.append(manifest)
    logger.info('wrote %d attention files to %s', len(written), out_dir)
    return written


def list_ablations():
    return [{'row': name, 'flags': ablation_flags(overrides), 'overrides': overrides}
            for name, overrides in ABLATIONS.items()]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON run config; flags override its keys')
    common.add_argument('--seed', type=int)
    common.add_argument('--log-level')

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument('--data-dir')

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument('--fusion', choices=['none', 'additive', 'concat', 'xattn'])
    model.add_argument('--bias', choices=['full', 'none', 'nolog', 'shared'])
    model.add_argument('--buckets', type=int)
    model.add_argument('--mc-samples', type=int)
    model.add_argument('--alpha', type=float)
    model.add_argument('--beta', type=float)
    model.add_argument('--time-embed', choices=['linear', 'sin', 'interval'])
    model.add_argument('--no-mtbt', dest='use_mtbt', action='store_const', const=False)
    model.add_argument('--dim', type=int)
    model.add_argument('--epochs', type=int)
    model.add_argument('--lr', type=float)
    model.add_argument('--batch-size', type=int)
    model.add_argument('--patience', type=int)
    model.add_argument('--out-dir')
    model.add_argument('--no-progress', dest='progress', action='store_const', const=False)

    checkpoint = argparse.ArgumentParser(add_help=False)
    checkpoint.add_argument('--checkpoint')

    route = argparse.ArgumentParser(add_help=False)
    route.add_argument('--route', choices=['heads', 'mbr'])

    parser = argparse.ArgumentParser(prog='taltpp', description='Temporal point process with time-aware event fusion')
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('generate', parents=[common, data], help='write a synthetic corpus')
    gen.add_argument('--preset', choices=['poisson', 'hawkes', 'hawkes_multi'])
    gen.add_argument('--num-sequences', type=int)
    gen.add_argument('--horizon', type=float)
    gen.add_argument('--rate', type=float)
    gen.add_argument('--num-types', type=int)
    gen.add_argument('--hawkes-mu', type=float)
    gen.add_argument('--hawkes-alpha', type=float)
    gen.add_argument('--hawkes-beta', type=float)
    gen.add_argument('--manifest', help='replay the generator settings of an existing manifest')
    gen.add_argument('--force', action='store_true')

    sub.add_parser('train', parents=[common, data, model, checkpoint, route], help='train and evaluate on test')

    ev = sub.add_parser('eval', parents=[common, checkpoint, route], help='metrics of a checkpoint on a dataset')
    ev.add_argument('--dataset', required=True)
    ev.add_argument('--out')

    pr = sub.add_parser('predict', parents=[common, checkpoint, route], help='next-event prediction per sequence')
    pr.add_argument('--dataset', required=True)
    pr.add_argument('--seq-id')

    at = sub.add_parser('attn-dump', parents=[common, checkpoint], help='dump MTBT attention matrices')
    at.add_argument('--dataset', required=True)
    at.add_argument('--out', required=True)
    at.add_argument('--max-sequences', type=int, default=1)
    at.add_argument('--no-svg', dest='svg', action='store_false')

    sub.add_parser('list-ablations', parents=[common], help='ablation rows and their flags')

    st = sub.add_parser('stats', parents=[common], help='dataset characteristics')
    st.add_argument('--dataset', required=True)

    sv = sub.add_parser('serve', parents=[common, checkpoint], help='serve a checkpoint over HTTP')
    sv.add_argument('--host', default='127.0.0.1')
    sv.add_argument('--port', type=int, default=5000)
    return parser


_NOT_CONFIG = {'command', 'config', 'log_level', 'force', 'manifest', 'dataset', 'out', 'seq_id',
               'max_sequences', 'svg', 'host', 'port'}


def run_config_from_args(args):
    overrides = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    config_path = args.config
    if getattr(args, 'manifest', None):
        with open(args.manifest, 'r', encoding='utf-8') as handle:
            replay = json.load(handle)['run_config']
        replay.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.load(None, replay)
    return RunConfig.load(config_path, overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    torch.set_num_threads(Config.NUM_THREADS)
    try:
        if args.command == 'list-ablations':
            for row in list_ablations():
                print(f'{row["row"]:<28} {row["flags"] or "(defaults)"}')
            return 0
        if args.command == 'stats':
            sequences, _ = load_dataset(args.dataset)
            print(dumps(dataset_stats(sequences)))
            return 0

        run_config = run_config_from_args(args)
        if args.command == 'generate':
            manifest = cmd_generate(run_config, force=args.force)
            print(dumps(manifest['counts']))
        elif args.command == 'train':
            print(dumps(cmd_train(run_config)))
        elif args.command == 'serve':
            from app import create_app
            app = create_app('production', checkpoint=args.checkpoint or run_config.checkpoint or None)
            app.run(host=args.host, port=args.port)
        else:
            service = _checkpoint(args, run_config)
            if args.command == 'eval':
                print(dumps(cmd_eval(service, args.dataset, args.route, args.out)))
            elif args.command == 'predict':
                print(dumps(cmd_predict(service, args.dataset, args.route, args.seq_id)))
            elif args.command == 'attn-dump':
                for path in cmd_attn_dump(service, args.dataset, args.out, args.max_sequences, args.svg):
                    print(path)
    except TalTppError as e:
        logger.error('%s failed: %s', args.command, e)
        return 2
    except OSError as e:
        logger.error('%s failed: %s', args.command, e)
        return 2
    return 0


if __name__ == '__main__':
    sys.exit(main())
