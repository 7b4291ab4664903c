import pytest
import torch

from embeddings import TemporalEmbedder, Vocab, build_type_tokens, embed_tokens, previous_times, temporal_embed, tokenize_type
from exceptions import ClosedVocabularyError, ConfigError, ShapeError
from numerics import DTYPE


def test_tokenize_single_word():
    vocab = Vocab()
    assert tokenize_type('Login', vocab, build=True) == [vocab.token_to_id['login']]


def test_tokenize_splits_on_punctuation():
    vocab = Vocab()
    ids = tokenize_type('question-answer', vocab, build=True)
    assert ids == [vocab.token_to_id['question'], vocab.token_to_id['answer']]
    assert tokenize_type('type_0', vocab, build=True) == [vocab.token_to_id['type'], vocab.token_to_id['0']]


def test_closed_tokenizer_rejects_unknown_tokens():
    vocab = Vocab(['login'])
    with pytest.raises(ClosedVocabularyError):
        tokenize_type('logout', vocab, build=False)


def test_vocabulary_build_is_reproducible():
    names = ['Login', 'question-answer', 'answer accepted', 'Logout']
    first, second = Vocab(), Vocab()
    build_type_tokens(names, first)
    build_type_tokens(names, second)
    assert first.to_json() == second.to_json()
    assert first.token_to_id['<pad>'] == 0


def test_type_token_table_is_padded():
    vocab = Vocab()
    table, lengths = build_type_tokens(['a', 'b-c-d'], vocab)
    assert table.shape == (2, 3)
    assert lengths.tolist() == [1, 3]
    assert table[0, 1:].tolist() == [0, 0]


def test_vocab_json_round_trip(tmp_path):
    vocab = Vocab(['x', 'y'])
    vocab.save(str(tmp_path / 'vocab.json'))
    assert Vocab.load(str(tmp_path / 'vocab.json')).to_json() == vocab.to_json()


def test_embed_tokens_lookup():
    table = torch.zeros(3, 4, dtype=DTYPE)
    assert torch.equal(embed_tokens([0], table), torch.zeros(1, 4, dtype=DTYPE))
    table = torch.arange(12, dtype=DTYPE).reshape(3, 4)
    assert torch.equal(embed_tokens([2], table)[0], table[2])
    with pytest.raises(ShapeError):
        embed_tokens([3], table)


def test_embedding_gradient_only_on_looked_up_rows():
    table = torch.randn(5, 3, dtype=DTYPE, requires_grad=True)
    embed_tokens([1, 3, 3], table).sum().backward()
    expected = torch.zeros(5, 3, dtype=DTYPE)
    expected[1] = 1.0
    expected[3] = 2.0
    assert torch.equal(table.grad, expected)


def test_sinusoidal_at_zero_alternates():
    embedder = TemporalEmbedder(6, 'sinusoidal')
    assert embedder(torch.tensor(0.0, dtype=DTYPE)).tolist() == [0.0, 1.0, 0.0, 1.0, 0.0, 1.0]


def test_sinusoidal_is_bounded():
    embedder = TemporalEmbedder(16, 'sinusoidal')
    out = embedder(torch.linspace(0, 1e5, 1000, dtype=DTYPE))
    assert out.shape == (1000, 16)
    assert float(out.abs().max()) <= 1.0


def test_sinusoidal_needs_even_dim():
    with pytest.raises(ConfigError):
        TemporalEmbedder(5, 'sinusoidal')


def test_linear_with_zero_weight_is_constant():
    embedder = TemporalEmbedder(4, 'linear')
    with torch.no_grad():
        embedder.bias.copy_(torch.tensor([1.0, -2.0, 3.0, 0.5], dtype=DTYPE))
    out = embedder(torch.tensor([0.0, 7.0, 100.0], dtype=DTYPE))
    assert torch.equal(out, embedder.bias.detach().expand(3, 4))


def test_interval_mlp_with_zero_weights_returns_output_bias():
    embedder = TemporalEmbedder(4, 'interval_mlp')
    with torch.no_grad():
        embedder.hidden.weight.zero_()
        embedder.hidden.bias.zero_()
        embedder.out.weight.zero_()
        embedder.out.bias.copy_(torch.tensor([0.1, 0.2, 0.3, 0.4], dtype=DTYPE))
    out = temporal_embed(torch.tensor([1.0, 5.0], dtype=DTYPE), torch.tensor([1.0, 2.0], dtype=DTYPE), embedder)
    assert torch.equal(out, embedder.out.bias.detach().expand(2, 4))


def test_every_mode_has_width_d():
    t = torch.tensor([0.5, 1.5, 4.0], dtype=DTYPE)
    for mode in ('linear', 'sinusoidal', 'interval_mlp'):
        out = temporal_embed(t, previous_times(t), TemporalEmbedder(8, mode))
        assert out.shape == (3, 8)
        assert bool(torch.isfinite(out).all())


def test_first_event_is_its_own_predecessor():
    t = torch.tensor([0.5, 1.5, 4.0], dtype=DTYPE)
    assert previous_times(t).tolist() == [0.5, 0.5, 1.5]


def test_temporal_embed_rejects_time_travel():
    with pytest.raises(ValueError):
        temporal_embed(torch.tensor([1.0], dtype=DTYPE), torch.tensor([2.0], dtype=DTYPE), TemporalEmbedder(4))
