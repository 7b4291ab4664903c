import pytest
import torch

from embeddings import Vocab
from event_data import make_batch
from exceptions import ConfigError, ShapeError
from intensity_tpp import McConfig, nll_sequence
from model import ModelConfig, TalTppModel
from numerics import DTYPE, Rng
from tests.conftest import build_tiny_model, random_sequence, tiny_model_config
from training_eval import multitask_loss


def test_output_shapes(tiny_model, generator):
    seq = random_sequence(generator, 5)
    out = tiny_model(seq.times, seq.type_ids)
    assert out.hs.shape == (6, 8)
    assert out.event_vectors.shape == (5, 8)
    assert out.enhanced.shape == (5, 8)
    assert out.mtbt_attention.shape == (1, 2, 5, 5)
    assert out.tcf_attention.shape == (5, 2, 2, 1)
    assert len(out.segmap.events) == 5


def test_build_grows_the_token_vocabulary():
    vocab = Vocab()
    cfg = tiny_model_config()
    TalTppModel.build(cfg, ['type_0', 'type_1'], vocab, Rng(0).torch('init'))
    assert set(vocab.token_to_id) == {'<pad>', 'type', '0', '1'}
    assert cfg.vocab_size == 4


def test_appending_an_event_leaves_earlier_contexts_alone(tiny_model, generator):
    seq = random_sequence(generator, 6)
    short = tiny_model(seq.times[:5], seq.type_ids[:5])
    full = tiny_model(seq.times, seq.type_ids)
    torch.testing.assert_close(full.hs[:6], short.hs, atol=1e-10, rtol=0)


def test_without_mtbt_the_enhanced_vectors_are_the_pooled_ones(generator):
    model = build_tiny_model(use_mtbt=False)
    assert model.mtbt is None
    seq = random_sequence(generator, 4)
    out = model(seq.times, seq.type_ids)
    assert out.mtbt_attention is None
    assert torch.equal(out.enhanced, out.event_vectors)


def test_without_fusion_there_is_no_token_attention(generator):
    model = build_tiny_model(fusion_mode='none')
    seq = random_sequence(generator, 3)
    out = model(seq.times, seq.type_ids)
    assert out.tcf_attention is None
    assert out.hs.shape == (4, 8)


@pytest.mark.parametrize('time_embed', ['linear', 'sinusoidal', 'interval_mlp'])
def test_every_time_embedding_runs(time_embed, generator):
    model = build_tiny_model(time_embed=time_embed)
    seq = random_sequence(generator, 3)
    assert bool(torch.isfinite(model(seq.times, seq.type_ids).hs).all())


def test_type_out_of_range(tiny_model):
    with pytest.raises(ShapeError):
        tiny_model([0.5, 1.0], [0, 2])
    with pytest.raises(ShapeError):
        tiny_model([], [])


def test_batch_rows_match_single_sequences(tiny_model, generator):
    seqs = [random_sequence(generator, n, seq_id=f'r{n}') for n in (2, 5, 3)]
    outputs = tiny_model.forward_batch(make_batch(seqs))
    for seq, out in zip(seqs, outputs):
        assert torch.equal(out.hs, tiny_model(seq.times, seq.type_ids).hs)


def test_gradient_reaches_every_component(generator):
    model = build_tiny_model()
    model.train()
    seqs = [random_sequence(generator, 4, seq_id='a'), random_sequence(generator, 3, seq_id='b')]
    multitask_loss(model, make_batch(seqs), McConfig(integral_samples=5)).backward()
    for name in ('token_embedding', 'time_embedder', 'fusion', 'mtbt', 'backbone', 'intensity', 'heads'):
        module = getattr(model, name)
        norm = sum(float(p.grad.abs().sum()) for p in module.parameters() if p.grad is not None)
        assert norm > 0, name


def test_padding_row_of_the_token_table_stays_zero():
    model = build_tiny_model()
    assert torch.count_nonzero(model.token_embedding.weight[0]) == 0


def test_initialisation_is_seeded():
    first = build_tiny_model(seed=3)
    second = build_tiny_model(seed=3)
    other = build_tiny_model(seed=4)
    for (name, a), (_, b) in zip(first.state_dict().items(), second.state_dict().items()):
        assert torch.equal(a, b), name
    assert not torch.equal(first.backbone.prompt, other.backbone.prompt)


def test_config_width_mismatch():
    cfg = tiny_model_config()
    cfg.dim = 16
    with pytest.raises(ConfigError):
        cfg.check()


def test_disabled_mtbt_skips_its_validation():
    cfg = tiny_model_config(use_mtbt=False)
    cfg.mtbt.dt_min = cfg.mtbt.dt_max = 1.0
    assert cfg.validate() == []


def test_config_json_restores_nested_sections():
    cfg = tiny_model_config(bias_mode='shared')
    restored = ModelConfig.from_json(cfg.to_json())
    assert restored == cfg
    assert restored.mtbt.bias_mode == 'shared'


def test_parameters_are_float64():
    model = build_tiny_model()
    assert all(p.dtype == DTYPE for p in model.parameters())


def test_perturbing_a_suffix_leaves_the_prefix_bit_identical():
    model = build_tiny_model(seed=2)
    mc = McConfig(integral_samples=5)
    g = Rng(12).torch('suffix')
    for i in range(50):
        seq = random_sequence(g, 6, seq_id=f'p{i}')
        cut = 1 + i % 5
        times = torch.tensor(seq.times, dtype=DTYPE)
        types = torch.tensor(seq.type_ids)
        edited_times = times.clone()
        edited_times[cut:] += 0.37
        edited_types = types.clone()
        edited_types[cut:] = 1 - edited_types[cut:]
        out = model(times, types)
        edited = model(edited_times, edited_types)
        assert torch.equal(out.hs[:cut + 1], edited.hs[:cut + 1])
        terms = nll_sequence(out.hs, times, types, float(times[-1]) + 1.0, model.intensity, mc, Rng(i).torch('mc'))
        edited_terms = nll_sequence(edited.hs, edited_times, edited_types, float(edited_times[-1]) + 1.0,
                                    model.intensity, mc, Rng(i).torch('mc'))
        assert torch.equal(terms.event_log_intensity[:cut], edited_terms.event_log_intensity[:cut])
        assert torch.equal(terms.compensator[:cut], edited_terms.compensator[:cut])
