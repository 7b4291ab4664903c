"""Multi-task objective, the optimisation loop, and LL / accuracy / RMSE evaluation."""
import copy
import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from config import ROUTES
from exceptions import ConfigError, DivergenceError, ShapeError
from intensity_tpp import nll_sequence, predict_next_time, predict_next_type
from numerics import DTYPE, Rng

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ('epoch', 'train_loss', 'val_ll', 'val_acc', 'val_rmse')


@dataclass
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 8
    alpha: float = 1.0
    beta: float = 1.0
    seed: int = 42
    patience: int = 0
    route: str = 'heads'
    progress: bool = True

    def validate(self):
        errors = []
        if self.alpha < 0 or self.beta < 0:
            errors.append('loss weights alpha and beta must be >= 0')
        if self.lr < 0:
            errors.append('learning rate must be >= 0')
        if self.epochs < 0:
            errors.append('epochs must be >= 0')
        if self.batch_size < 1:
            errors.append('batch_size must be >= 1')
        if self.patience < 0:
            errors.append('patience must be >= 0')
        if self.route not in ROUTES:
            errors.append(f'route must be one of {list(ROUTES)}, got {self.route!r}')
        if errors:
            raise ConfigError(errors)

    @classmethod
    def from_run_config(cls, run_config):
        return cls(
            epochs=run_config.epochs,
            lr=run_config.lr,
            batch_size=run_config.batch_size,
            alpha=run_config.alpha,
            beta=run_config.beta,
            seed=run_config.seed,
            patience=run_config.patience,
            route=run_config.route,
            progress=run_config.progress,
        )


@dataclass
class LossParts:
    """Batch sums of per-sequence terms"""
    nll: torch.Tensor
    type_loss: torch.Tensor
    time_loss: torch.Tensor
    n_events: int = 0

    def combine(self, alpha, beta):
        return self.nll + alpha * self.type_loss + beta * self.time_loss


def mc_generator(seed, step, seq_id):
    return Rng(seed).torch('mc', step, seq_id)


def dropout_generator(seed, step, seq_id):
    return Rng(seed).torch('dropout', step, seq_id)


def sequence_loss_parts(model, times, type_ids, t_end, mc, seq_id, step=0, seed=42):
    times = torch.as_tensor(times, dtype=DTYPE)
    type_ids = torch.as_tensor(type_ids, dtype=torch.long)
    output = model.forward_sequence(times, type_ids, dropout_generator(seed, step, seq_id))
    terms = nll_sequence(output.hs, times, type_ids, t_end, model.intensity, mc,
                         mc_generator(seed, step, seq_id))
    n = times.shape[0]
    if n > 1:
        # h_i for i = 1..N-1 predicts event i + 1
        h = output.hs[1:n]
        type_loss = F.cross_entropy(model.heads.type_logits(h), type_ids[1:])
        gap_error = model.heads.gap(h) - (times[1:] - times[:-1])
        time_loss = (gap_error * gap_error).mean()
    else:
        type_loss = times.new_zeros(())
        time_loss = times.new_zeros(())
    return terms.nll, type_loss, time_loss


def loss_parts(model, batch, mc, step=0, seed=42):
    if len(batch) == 0:
        raise ValueError('cannot compute a loss on an empty batch')
    nll, type_loss, time_loss = [], [], []
    for b, seq in enumerate(batch.sequences):
        times, type_ids, t_end = batch.row(b)
        parts = sequence_loss_parts(model, times, type_ids, float(t_end), mc, seq.seq_id, step, seed)
        nll.append(parts[0])
        type_loss.append(parts[1])
        time_loss.append(parts[2])
    return LossParts(
        nll=torch.stack(nll).sum(),
        type_loss=torch.stack(type_loss).sum(),
        time_loss=torch.stack(time_loss).sum(),
        n_events=int(batch.lengths.sum()),
    )


def multitask_loss(model, batch, mc, alpha=1.0, beta=1.0, step=0, seed=42):
    """-L_TPP + alpha * L_type + beta * L_time, summed over the sequences of the batch"""
    return loss_parts(model, batch, mc, step, seed).combine(alpha, beta)


def _check_pair(predicted, truth, name):
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ShapeError(f'{name}: predictions {predicted.shape} and targets {truth.shape} differ')
    if predicted.size == 0:
        raise ValueError(f'{name} of an empty set is undefined')
    return predicted, truth


def accuracy(predicted_types, true_types):
    predicted, truth = _check_pair(predicted_types, true_types, 'accuracy')
    return float(np.count_nonzero(predicted == truth)) / predicted.size


def rmse(predicted_times, true_times):
    predicted, truth = _check_pair(predicted_times, true_times, 'rmse')
    diff = predicted.astype(np.float64) - truth.astype(np.float64)
    return math.sqrt(float(np.mean(diff * diff)))


def next_event_predictions(model, output, times, mc, route='heads'):
    """(predicted types, predicted absolute times) for events 2..N from h_1..h_{N-1}"""
    n = times.shape[0]
    h = output.hs[1:n]
    t_prev = times[:-1]
    if route == 'heads':
        types = torch.argmax(model.heads.type_logits(h), dim=-1)
        t_hat = t_prev + model.heads.gap(h)
    else:
        t_hat = predict_next_time(h, t_prev, model.intensity, mc)
        types = predict_next_type(h, t_hat, t_prev, model.intensity)
    return types, t_hat


def evaluate(model, sequences, mc, route='heads', scaler=None, seed=42, step='eval'):
    """LL per event plus next-event accuracy and RMSE; rmse_unscaled = scale * rmse_scaled"""
    if route not in ROUTES:
        raise ConfigError(f'route must be one of {list(ROUTES)}, got {route!r}')
    if not sequences:
        raise ValueError('cannot evaluate on an empty set of sequences')
    was_training = model.training
    model.eval()
    total_ll, total_events = 0.0, 0
    pred_types, true_types, pred_times, true_times = [], [], [], []
    with torch.no_grad():
        for seq in sequences:
            times = torch.tensor(seq.times, dtype=DTYPE)
            type_ids = torch.tensor(seq.type_ids, dtype=torch.long)
            output = model.forward_sequence(times, type_ids)
            terms = nll_sequence(output.hs, times, type_ids, seq.t_end, model.intensity, mc,
                                 mc_generator(seed, step, seq.seq_id))
            total_ll += float(terms.log_likelihood)
            total_events += len(seq)
            if len(seq) > 1:
                types, t_hat = next_event_predictions(model, output, times, mc, route)
                pred_types.extend(types.tolist())
                true_types.extend(seq.type_ids[1:])
                pred_times.extend(t_hat.tolist())
                true_times.extend(seq.times[1:])
    model.train(was_training)

    metrics = {
        'll': total_ll,
        'll_per_event': total_ll / total_events,
        'n_events': total_events,
        'n_predictions': len(pred_types),
        'route': route,
        'acc': None,
        'rmse_scaled': None,
        'rmse_unscaled': None,
    }
    if pred_types:
        metrics['acc'] = accuracy(pred_types, true_types)
        metrics['rmse_scaled'] = rmse(pred_times, true_times)
        scale = scaler.scale if scaler is not None else 1.0
        metrics['rmse_unscaled'] = scale * metrics['rmse_scaled']
    return metrics


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_ll: float = -math.inf


def train(model, train_sequences, val_sequences, train_cfg, mc, make_batches):
    """Adam over seeded shuffles; the parameters with the best validation LL per event are kept.

    `make_batches(sequences, size)` turns an ordered list into batches.
    """
    train_cfg.validate()
    if not train_sequences or not val_sequences:
        raise ValueError('training needs non-empty train and validation splits')
    rng = Rng(train_cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.lr, betas=(0.9, 0.999))
    result = TrainResult()
    best_state = copy.deepcopy(model.state_dict())
    stale = 0
    step = 0

    for epoch in range(1, train_cfg.epochs + 1):
        model.train()
        order = rng.numpy('shuffle', epoch).permutation(len(train_sequences))
        batches = make_batches([train_sequences[i] for i in order], train_cfg.batch_size)
        running = 0.0
        for batch in tqdm(batches, desc=f'epoch {epoch}', disable=not train_cfg.progress, leave=False):
            optimizer.zero_grad()
            loss = multitask_loss(model, batch, mc, train_cfg.alpha, train_cfg.beta, step, train_cfg.seed)
            if not torch.isfinite(loss):
                logger.error('non-finite loss at epoch %d step %d', epoch, step)
                raise DivergenceError(f'loss became {float(loss)} at epoch {epoch}, step {step}; '
                                      f'try a lower learning rate')
            loss.backward()
            optimizer.step()
            running += float(loss)
            step += 1

        val = evaluate(model, val_sequences, mc, train_cfg.route, seed=train_cfg.seed, step=f'val-{epoch}')
        row = {
            'epoch': epoch,
            'train_loss': running / len(train_sequences),
            'val_ll': val['ll_per_event'],
            'val_acc': val['acc'],
            'val_rmse': val['rmse_scaled'],
        }
        result.history.append(row)
        logger.info('epoch=%d train_loss=%.6f val_ll=%.6f val_acc=%s val_rmse=%s',
                    epoch, row['train_loss'], row['val_ll'], row['val_acc'], row['val_rmse'])

        if row['val_ll'] > result.best_val_ll:
            result.best_val_ll = row['val_ll']
            result.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            stale = 0
        else:
            stale += 1
            if train_cfg.patience and stale >= train_cfg.patience:
                logger.info('early stop after epoch %d (best epoch %d)', epoch, result.best_epoch)
                break

    model.load_state_dict(best_state)
    model.eval()
    return result


def write_history(path, history):
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        writer = csv.DictWriter(handle, fieldnames=HISTORY_COLUMNS, lineterminator='\n')
        writer.writeheader()
        for row in history:
            writer.writerow({k: ('' if row[k] is None else repr(row[k])) for k in HISTORY_COLUMNS})
