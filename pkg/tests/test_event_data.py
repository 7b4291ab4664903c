import json

import pytest
import torch

from event_data import (Event, EventSequence, TimeScaler, TypeVocabulary, batch_pad, dataset_stats,
                        fit_time_scaler, load_dataset, make_batch, parse_sequence, save_sequences,
                        split_dataset)
from exceptions import DatasetParseError, ScalerError, SequenceValidationError, SplitError
from tests.conftest import sequence


def write_lines(path, rows):
    path.write_text('\n'.join(row if isinstance(row, str) else json.dumps(row) for row in rows) + '\n',
                    encoding='utf-8')
    return path


def test_load_dataset_builds_vocabulary_in_first_appearance_order(tmp_path):
    path = write_lines(tmp_path / 'd.jsonl', [
        {'seq_id': 'a', 'events': [{'t': 0.5, 'type': 'Login'}, {'t': 1.0, 'type': 'question-answer'}], 't_end': 2.0},
        {'seq_id': 'b', 'events': [{'t': 0.1, 'type': 'question-answer'}, {'t': 0.4, 'type': 'Logout'}]},
    ])
    sequences, vocab = load_dataset(str(path))
    assert vocab.names == ['Login', 'question-answer', 'Logout']
    assert sequences[0].type_ids == [0, 1]
    assert sequences[1].type_ids == [1, 2]
    assert sequences[0].t_end == 2.0
    # without an explicit t_end the sequence ends at its last event
    assert sequences[1].t_end == 0.4


def test_bad_json_reports_line_number(tmp_path):
    path = write_lines(tmp_path / 'd.jsonl', [
        {'seq_id': 'a', 'events': [{'t': 0.5, 'type': 'x'}]},
        '{not json',
    ])
    with pytest.raises(DatasetParseError) as excinfo:
        load_dataset(str(path))
    assert excinfo.value.line_number == 2


def test_non_increasing_times_are_rejected():
    vocab = TypeVocabulary()
    payload = {'seq_id': 'dup', 'events': [{'t': 1.0, 'type': 'x'}, {'t': 1.0, 'type': 'x'}]}
    with pytest.raises(SequenceValidationError, match='strictly increasing') as excinfo:
        parse_sequence(payload, vocab)
    assert excinfo.value.seq_id == 'dup'


def test_empty_sequence_is_rejected():
    with pytest.raises(SequenceValidationError, match='empty'):
        parse_sequence({'seq_id': 'e', 'events': []}, TypeVocabulary())


def test_t_end_before_last_event_is_rejected():
    with pytest.raises(SequenceValidationError):
        EventSequence('x', (Event(1.0, 0, 'a'), Event(2.0, 0, 'a')), 1.5)


@pytest.mark.parametrize('horizon', ['Infinity', 'NaN'])
def test_non_finite_t_end_is_rejected(tmp_path, horizon):
    path = write_lines(tmp_path / 'd.jsonl', [
        '{"seq_id": "h", "t_end": %s, "events": [{"t": 0.5, "type": "x"}]}' % horizon,
    ])
    with pytest.raises(SequenceValidationError, match='not finite') as excinfo:
        load_dataset(str(path))
    assert excinfo.value.seq_id == 'h'


def test_closed_vocabulary_rejects_unseen_types():
    vocab = TypeVocabulary(['a', 'b']).close()
    with pytest.raises(SequenceValidationError, match='unseen'):
        parse_sequence({'seq_id': 'z', 'events': [{'t': 1.0, 'type': 'c'}]}, vocab)


def test_saved_sequences_load_back(tmp_path):
    original = [sequence([0.5, 1.5, 2.0], [0, 1, 0], seq_id='a', t_end=3.0)]
    save_sequences(str(tmp_path / 'out.jsonl'), original)
    loaded, vocab = load_dataset(str(tmp_path / 'out.jsonl'))
    assert loaded[0].times == original[0].times
    assert vocab.names == ['type_0', 'type_1']


def test_scaler_uses_mean_training_gap():
    scaler = fit_time_scaler([sequence([0.0, 2.0, 6.0]), sequence([1.0, 4.0])])
    # gaps 2, 4, 3
    assert scaler.scale == pytest.approx(3.0)
    seq = sequence([3.0, 9.0], t_end=12.0)
    scaled = scaler.transform(seq)
    assert scaled.times == [1.0, 3.0]
    assert scaled.t_end == 4.0
    assert scaler.inverse(scaled).times == seq.times


def test_scaler_needs_a_gap():
    with pytest.raises(ScalerError):
        fit_time_scaler([sequence([1.0]), sequence([2.0])])
    with pytest.raises(ScalerError):
        TimeScaler(scale=0.0)


def test_split_is_seeded_and_floors_val_and_test():
    seqs = [sequence([float(i + 1)], seq_id=str(i)) for i in range(23)]
    train, val, test = split_dataset(seqs, (0.8, 0.1, 0.1), seed=42)
    assert (len(train), len(val), len(test)) == (19, 2, 2)
    again = split_dataset(seqs, (0.8, 0.1, 0.1), seed=42)
    assert [s.seq_id for s in train] == [s.seq_id for s in again[0]]
    assert {s.seq_id for s in train + val + test} == {s.seq_id for s in seqs}


def test_split_refuses_empty_parts():
    seqs = [sequence([1.0], seq_id=str(i)) for i in range(5)]
    with pytest.raises(SplitError):
        split_dataset(seqs)


def test_make_batch_pads_and_masks():
    batch = make_batch([sequence([0.1, 0.2, 0.3], [0, 1, 1], t_end=1.0), sequence([0.5], [1])])
    assert batch.times.shape == (2, 3)
    assert batch.pad_mask.tolist() == [[True, True, True], [True, False, False]]
    times, types, t_end = batch.row(1)
    assert times.tolist() == [0.5]
    assert types.tolist() == [1]
    assert float(t_end) == 0.5


def test_batch_pad_chunks_in_order():
    seqs = [sequence([float(i + 1)], seq_id=str(i)) for i in range(5)]
    batches = batch_pad(seqs, 2)
    assert [len(b) for b in batches] == [2, 2, 1]
    assert batches[2].sequences[0].seq_id == '4'
    assert torch.equal(batches[0].lengths, torch.tensor([1, 1]))


def test_dataset_stats():
    stats = dataset_stats([sequence([0.0, 1.0, 3.0], [0, 1, 0], t_end=4.0), sequence([2.0], [1], t_end=2.0)])
    assert stats['event_types'] == 2
    assert stats['total_events'] == 4
    assert stats['sequences'] == 2
    assert stats['avg_sequence_length'] == 2.0
    assert stats['mean_gap'] == pytest.approx(1.5)
    assert stats['time_span'] == pytest.approx(2.0)
