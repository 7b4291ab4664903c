import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from exceptions import (ClosedVocabularyError, DatasetParseError, ScalerError,
                        SequenceValidationError, SplitError)

logger = logging.getLogger(__name__)

DEFAULT_SPLIT = (0.8, 0.1, 0.1)
DEFAULT_SPLIT_SEED = 42


@dataclass(frozen=True)
class Event:
    t: float
    type_id: int
    type_text: str


@dataclass(frozen=True)
class EventSequence:
    """Events in strictly increasing time, observed up to t_end"""
    seq_id: str
    events: tuple
    t_end: float

    def __post_init__(self):
        if not self.events:
            raise SequenceValidationError(self.seq_id, 'empty sequence')
        previous = None
        for event in self.events:
            if not math.isfinite(event.t) or event.t < 0:
                raise SequenceValidationError(self.seq_id, f'timestamp {event.t} is not finite and non-negative')
            if not event.type_text:
                raise SequenceValidationError(self.seq_id, 'empty event type')
            if previous is not None and event.t <= previous:
                raise SequenceValidationError(self.seq_id, 'timestamps not strictly increasing')
            previous = event.t
        if not math.isfinite(self.t_end):
            raise SequenceValidationError(self.seq_id, f't_end {self.t_end} is not finite')
        if self.t_end < self.events[-1].t:
            raise SequenceValidationError(self.seq_id, f't_end {self.t_end} precedes the last event')

    def __len__(self):
        return len(self.events)

    @property
    def times(self):
        return [e.t for e in self.events]

    @property
    def type_ids(self):
        return [e.type_id for e in self.events]

    @property
    def gaps(self):
        times = self.times
        return [b - a for a, b in zip(times, times[1:])]

    def to_json(self):
        return {
            'seq_id': self.seq_id,
            't_end': self.t_end,
            'events': [{'t': e.t, 'type': e.type_text} for e in self.events],
        }


class TypeVocabulary:
    """type_text <-> type_id in first-appearance order; closed once training data is read"""

    def __init__(self, names=None, closed=False):
        self.names = []
        self.index = {}
        self.closed = False
        for name in names or []:
            self.add(name)
        self.closed = closed

    def __len__(self):
        return len(self.names)

    def add(self, name):
        if name in self.index:
            return self.index[name]
        if self.closed:
            raise ClosedVocabularyError(f'unseen event type {name!r}')
        self.index[name] = len(self.names)
        self.names.append(name)
        return self.index[name]

    def close(self):
        self.closed = True
        return self

    def to_json(self):
        return list(self.names)

    @classmethod
    def from_json(cls, names):
        return cls(names, closed=True)


def parse_sequence(payload, type_vocab, line_number=None):
    if not isinstance(payload, dict):
        raise DatasetParseError(line_number, 'expected a JSON object')
    seq_id = str(payload.get('seq_id', line_number))
    raw_events = payload.get('events')
    if not isinstance(raw_events, list):
        raise DatasetParseError(line_number, 'missing "events" array')
    events = []
    for raw in raw_events:
        try:
            t = float(raw['t'])
            type_text = str(raw['type'])
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetParseError(line_number, f'bad event {raw!r}: {e}')
        if not type_text:
            raise SequenceValidationError(seq_id, 'empty event type')
        try:
            type_id = type_vocab.add(type_text)
        except ClosedVocabularyError as e:
            raise SequenceValidationError(seq_id, str(e))
        events.append(Event(t=t, type_id=type_id, type_text=type_text))
    if not events:
        raise SequenceValidationError(seq_id, 'empty sequence')
    t_end = payload.get('t_end')
    t_end = events[-1].t if t_end is None else float(t_end)
    return EventSequence(seq_id=seq_id, events=tuple(events), t_end=t_end)


def load_dataset(path, type_vocab=None):
    """Read a JSON Lines file; returns (sequences, type vocabulary)"""
    type_vocab = type_vocab if type_vocab is not None else TypeVocabulary()
    sequences = []
    with open(path, 'r', encoding='utf-8') as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetParseError(line_number, f'invalid JSON: {e.msg}')
            sequences.append(parse_sequence(payload, type_vocab, line_number))
    logger.info('loaded %d sequences from %s (K=%d)', len(sequences), path, len(type_vocab))
    return sequences, type_vocab


def load_sequences(path):
    sequences, _ = load_dataset(path)
    return sequences


def save_sequences(path, sequences):
    with open(path, 'w', encoding='utf-8') as handle:
        for seq in sequences:
            handle.write(json.dumps(seq.to_json(), sort_keys=True) + '\n')


@dataclass(frozen=True)
class TimeScaler:
    scale: float
    offset: float = 0.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ScalerError(f'scale must be positive, got {self.scale}')

    def transform_time(self, t):
        return (t - self.offset) / self.scale

    def inverse_time(self, t):
        return t * self.scale + self.offset

    def transform(self, seq):
        events = tuple(Event(self.transform_time(e.t), e.type_id, e.type_text) for e in seq.events)
        return EventSequence(seq.seq_id, events, self.transform_time(seq.t_end))

    def inverse(self, seq):
        events = tuple(Event(self.inverse_time(e.t), e.type_id, e.type_text) for e in seq.events)
        return EventSequence(seq.seq_id, events, self.inverse_time(seq.t_end))

    def to_json(self):
        return {'scale': self.scale, 'offset': self.offset}

    @classmethod
    def from_json(cls, payload):
        return cls(scale=float(payload['scale']), offset=float(payload['offset']))


def fit_time_scaler(train_sequences):
    gaps = [gap for seq in train_sequences for gap in seq.gaps]
    if not gaps:
        raise ScalerError('cannot fit scaler: every training sequence has a single event')
    return TimeScaler(scale=float(np.mean(gaps)), offset=0.0)


def split_dataset(sequences, ratios=DEFAULT_SPLIT, seed=DEFAULT_SPLIT_SEED):
    """Seeded shuffle, then contiguous train/val/test partition; rounding remainder goes to train"""
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f'ratios must be three positive numbers summing to 1, got {ratios}')
    n = len(sequences)
    n_val = int(math.floor(n * ratios[1]))
    n_test = int(math.floor(n * ratios[2]))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise SplitError(f'{n} sequences cannot fill a {ratios} split without an empty part')
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [sequences[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:]


@dataclass
class Batch:
    sequences: list
    times: torch.Tensor
    type_ids: torch.Tensor
    pad_mask: torch.Tensor
    lengths: torch.Tensor
    t_end: torch.Tensor = field(default=None)

    def __len__(self):
        return len(self.sequences)

    def row(self, b):
        """Unpadded (times, type_ids, t_end) of row b"""
        n = int(self.lengths[b])
        return self.times[b, :n], self.type_ids[b, :n], self.t_end[b]


def make_batch(sequences):
    lengths = [len(seq) for seq in sequences]
    max_len = max(lengths)
    times = torch.zeros(len(sequences), max_len, dtype=torch.float64)
    type_ids = torch.zeros(len(sequences), max_len, dtype=torch.long)
    pad_mask = torch.zeros(len(sequences), max_len, dtype=torch.bool)
    for b, seq in enumerate(sequences):
        n = len(seq)
        times[b, :n] = torch.tensor(seq.times, dtype=torch.float64)
        type_ids[b, :n] = torch.tensor(seq.type_ids, dtype=torch.long)
        pad_mask[b, :n] = True
    return Batch(
        sequences=list(sequences),
        times=times,
        type_ids=type_ids,
        pad_mask=pad_mask,
        lengths=torch.tensor(lengths, dtype=torch.long),
        t_end=torch.tensor([seq.t_end for seq in sequences], dtype=torch.float64),
    )


def batch_pad(sequences, max_batch):
    if max_batch < 1:
        raise ValueError('max_batch must be >= 1')
    return [make_batch(sequences[i:i + max_batch]) for i in range(0, len(sequences), max_batch)]


def dataset_stats(sequences):
    """Summary in the shape of a dataset-characteristics table"""
    lengths = [len(seq) for seq in sequences]
    gaps = [gap for seq in sequences for gap in seq.gaps]
    types = {e.type_text for seq in sequences for e in seq.events}
    return {
        'event_types': len(types),
        'total_events': int(sum(lengths)),
        'sequences': len(sequences),
        'avg_sequence_length': float(np.mean(lengths)) if lengths else 0.0,
        'mean_gap': float(np.mean(gaps)) if gaps else 0.0,
        'time_span': float(np.mean([seq.t_end - seq.events[0].t for seq in sequences])) if sequences else 0.0,
    }
