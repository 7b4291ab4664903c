import numpy as np
import pytest
import torch

from exceptions import ConfigError
from mtbt import (MtbtConfig, MtbtLayer, MultiScaleTemporalBias, TemporalBiasTable, attention_mask,
                  biased_self_attention, bias_from_buckets, fit_delta_range, log_bucketize, time_delta_matrix)
from numerics import DTYPE, Rng, grad_check, init_parameters
from tests.conftest import sequence


def cfg(**overrides):
    values = dict(heads=2, dim=8, buckets=32, bucket_dim=4, epsilon=1e-6, dt_min=0.1, dt_max=100.0)
    values.update(overrides)
    return MtbtConfig(**values)


def make_module(seed=0, **overrides):
    module = MultiScaleTemporalBias(cfg(**overrides))
    init_parameters(module, Rng(seed).torch('mtbt'))
    return module


def test_time_delta_matrix():
    assert time_delta_matrix([0.0, 1.0, 3.0]).tolist() == [[0, 1, 3], [1, 0, 2], [3, 2, 0]]
    assert time_delta_matrix([2.5]).tolist() == [[0.0]]
    delta = time_delta_matrix(torch.rand(7, dtype=DTYPE) * 10)
    assert torch.equal(delta, delta.T)
    assert bool((torch.diagonal(delta) == 0).all())


def test_bucket_endpoints():
    config = cfg()
    assert int(log_bucketize(torch.tensor(0.1, dtype=DTYPE), config)) == 0
    assert int(log_bucketize(torch.tensor(100.0, dtype=DTYPE), config)) == 31
    assert int(log_bucketize(torch.tensor(0.0, dtype=DTYPE), config)) == 0
    assert int(log_bucketize(torch.tensor(1e6, dtype=DTYPE), config)) == 31


def test_geometric_midpoint_lands_in_the_middle():
    config = cfg()
    bucket = int(log_bucketize(torch.tensor(np.sqrt(0.1 * 100.0), dtype=DTYPE), config))
    assert abs(bucket - 31 / 2) <= 1


def _reference_bucket(delta, buckets, dt_min, dt_max, eps):
    delta = np.longdouble(min(max(delta, dt_min), dt_max))
    low = np.log(np.longdouble(dt_min) + np.longdouble(eps))
    high = np.log(np.longdouble(dt_max) + np.longdouble(eps))
    ratio = (np.log(delta + np.longdouble(eps)) - low) / (high - low)
    return int(min(max(np.floor((buckets - 1) * ratio), 0), buckets - 1))


def test_bucketize_matches_extended_precision_reference():
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(10_000):
        buckets = int(rng.integers(2, 129))
        dt_min = float(10 ** rng.uniform(-3, 0))
        dt_max = dt_min * float(10 ** rng.uniform(0.3, 4))
        delta = float(10 ** rng.uniform(np.log10(dt_min) - 0.5, np.log10(dt_max) + 0.5))
        config = cfg(buckets=buckets, dt_min=dt_min, dt_max=dt_max)
        got = int(log_bucketize(torch.tensor(delta, dtype=DTYPE), config))
        mismatches += got != _reference_bucket(delta, buckets, dt_min, dt_max, config.epsilon)
    assert mismatches == 0


def test_bucketize_is_monotone():
    deltas = torch.logspace(-4, 4, 10_000, dtype=DTYPE)
    buckets = log_bucketize(deltas, cfg())
    assert bool((buckets[1:] >= buckets[:-1]).all())
    assert int(buckets.min()) == 0 and int(buckets.max()) == 31


def test_bucketize_needs_a_fitted_range():
    with pytest.raises(ConfigError):
        log_bucketize(torch.tensor(1.0, dtype=DTYPE), cfg(dt_min=5.0, dt_max=5.0))


def test_fit_delta_range():
    dt_min, dt_max = fit_delta_range([sequence([0.0, 0.5, 2.0]), sequence([1.0, 1.2, 4.0])])
    assert dt_min == pytest.approx(0.2)
    assert dt_max == pytest.approx(3.0)


def test_none_table_yields_zeros():
    table = TemporalBiasTable(cfg(bias_mode='none'))
    assert len(list(table.parameters())) == 0
    buckets = torch.zeros(3, 3, dtype=torch.long)
    assert torch.equal(bias_from_buckets(buckets, table, 'none'), torch.zeros(3, 3, 2, dtype=DTYPE))


def test_shared_bias_is_equal_across_heads():
    module = make_module(bias_mode='shared', heads=4)
    bias = module.temporal_bias(torch.tensor([0.0, 0.3, 2.0, 9.0], dtype=DTYPE))
    assert bias.shape == (4, 4, 4)
    for h in range(1, 4):
        assert torch.equal(bias[..., h], bias[..., 0])


def test_full_bias_with_zeroed_output_layer_is_constant():
    module = make_module(bias_mode='full')
    with torch.no_grad():
        module.bias_table.out.weight.zero_()
        module.bias_table.out.bias.copy_(torch.tensor([0.7, -0.2], dtype=DTYPE))
    bias = module.temporal_bias(torch.tensor([0.0, 0.3, 2.0], dtype=DTYPE))
    assert torch.equal(bias, torch.tensor([0.7, -0.2], dtype=DTYPE).expand(3, 3, 2))


def test_no_log_bucket_reads_raw_deltas():
    module = make_module(bias_mode='no_log_bucket')
    assert not hasattr(module.bias_table, 'embedding')
    near = module.temporal_bias(torch.tensor([0.0, 1.0], dtype=DTYPE))
    far = module.temporal_bias(torch.tensor([0.0, 1.001], dtype=DTYPE))
    # both deltas fall in the same log bucket but the raw values differ
    assert not torch.equal(near[1, 0], far[1, 0])


def test_bias_mode_mismatch_is_rejected():
    table = TemporalBiasTable(cfg(bias_mode='full'))
    with pytest.raises(ConfigError):
        bias_from_buckets(torch.zeros(2, 2, dtype=torch.long), table, 'shared')


def test_single_event_attends_to_itself():
    module = make_module()
    s = torch.randn(1, 8, generator=Rng(1).torch('s'), dtype=DTYPE)
    _, attentions = module(s, torch.tensor([0.5], dtype=DTYPE))
    assert attentions[0].tolist() == [[[1.0]], [[1.0]]]


def test_causal_attention_rows_and_support():
    module = make_module()
    g = Rng(2).torch('s')
    s = torch.randn(6, 8, generator=g, dtype=DTYPE)
    times = torch.cumsum(torch.rand(6, generator=g, dtype=DTYPE) + 0.1, dim=0)
    _, attentions = module(s, times)
    weights = attentions[0]
    torch.testing.assert_close(weights.sum(dim=-1), torch.ones(2, 6, dtype=DTYPE), atol=1e-12, rtol=0)
    upper = torch.triu(torch.ones(6, 6, dtype=torch.bool), diagonal=1)
    assert bool((weights[:, upper] == 0.0).all())


def test_none_mode_is_bit_identical_to_bias_free_attention():
    module = make_module(bias_mode='none')
    g = Rng(3).torch('s')
    s = torch.randn(5, 8, generator=g, dtype=DTYPE)
    times = torch.cumsum(torch.rand(5, generator=g, dtype=DTYPE) + 0.1, dim=0)
    out, _ = module(s, times)
    layer = module.layers[0]
    expected, _ = layer(s, None, attention_mask(5, causal=True))
    assert torch.equal(out, expected)
    zeros, _ = layer(s, torch.zeros(5, 5, 2, dtype=DTYPE), attention_mask(5, causal=True))
    assert torch.equal(out, zeros)


def test_full_and_none_bias_give_different_attention():
    full = make_module(bias_mode='full')
    none = MultiScaleTemporalBias(cfg(bias_mode='none'))
    none.layers.load_state_dict(full.layers.state_dict())
    g = Rng(4).torch('s')
    s = torch.randn(5, 8, generator=g, dtype=DTYPE)
    times = torch.tensor([0.0, 0.2, 3.0, 3.1, 40.0], dtype=DTYPE)
    _, with_bias = full(s, times)
    _, without = none(s, times)
    assert float((with_bias[0] - without[0]).abs().max()) > 0


def test_constant_row_shift_leaves_attention_unchanged():
    layer = MtbtLayer(cfg())
    init_parameters(layer, Rng(5).torch('layer'))
    s = torch.randn(4, 8, generator=Rng(6).torch('s'), dtype=DTYPE)
    bias = torch.randn(4, 4, 2, generator=Rng(7).torch('b'), dtype=DTYPE)
    shifted = bias.clone()
    shifted[2] += 3.5
    mask = attention_mask(4, causal=True)
    _, a = biased_self_attention(s, bias, mask, layer)
    _, b = biased_self_attention(s, shifted, mask, layer)
    torch.testing.assert_close(a, b, atol=1e-12, rtol=0)


def test_perturbing_a_later_event_leaves_earlier_outputs_identical():
    module = make_module()
    g = Rng(8).torch('s')
    s = torch.randn(5, 8, generator=g, dtype=DTYPE)
    times = torch.tensor([0.0, 0.4, 1.0, 2.5, 2.6], dtype=DTYPE)
    out, _ = module(s, times)
    s2 = s.clone()
    s2[3] += 10.0
    out2, _ = module(s2, times)
    assert torch.equal(out[:3], out2[:3])


def test_fully_masked_query_is_an_error():
    module = make_module()
    s = torch.randn(3, 8, dtype=DTYPE)
    valid = torch.tensor([False, True, True])
    with pytest.raises(ValueError):
        module(s, torch.tensor([0.0, 1.0, 2.0], dtype=DTYPE), valid)


def test_biased_attention_gradient():
    module = make_module()
    g = Rng(9).torch('s')
    s = torch.randn(4, 8, generator=g, dtype=DTYPE)
    weights = torch.randn(4, 8, generator=g, dtype=DTYPE)
    times = torch.tensor([0.0, 0.3, 1.7, 5.0], dtype=DTYPE)

    def f(args):
        out, _ = module(args[0], times)
        return (out * weights).sum()

    assert grad_check(f, [s]) <= 1e-4


def test_bucket_embeddings_receive_gradient():
    module = make_module()
    s = torch.randn(4, 8, generator=Rng(10).torch('s'), dtype=DTYPE)
    out, _ = module(s, torch.tensor([0.0, 0.3, 1.7, 5.0], dtype=DTYPE))
    out.pow(2).sum().backward()
    grad = module.bias_table.embedding.weight.grad
    assert float(grad.abs().sum(dim=-1).max()) > 0
