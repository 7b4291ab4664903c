"""Dense float64 tensor primitives shared by every model component.

Reverse-mode differentiation comes from torch autograd; this module pins the
dtype, the initialisation rules, the seeded random streams, and a central
difference gradient checker used throughout the tests.
"""
import hashlib
import json
import logging
import math

import numpy as np
import torch
from torch import nn

from exceptions import CheckpointError, GradCheckError, ShapeError

logger = logging.getLogger(__name__)

DTYPE = torch.float64
CHECKPOINT_FORMAT = 'taltpp-ckpt-v1'
LAYER_NORM_EPS = 1e-5


def derive_seed(seed, *components):
    """Stable 63-bit seed for a named sub-stream"""
    text = ':'.join([str(int(seed))] + [str(c) for c in components])
    digest = hashlib.sha256(text.encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'little') & ((1 << 63) - 1)


class Rng:
    """Seed holder handing out independent, reproducible streams per component id"""

    def __init__(self, seed):
        self.seed = int(seed)

    def torch(self, *component):
        generator = torch.Generator()
        generator.manual_seed(derive_seed(self.seed, *component))
        return generator

    def numpy(self, *component):
        return np.random.default_rng(derive_seed(self.seed, *component))

    def child(self, *component):
        return Rng(derive_seed(self.seed, *component))


def matmul(a, b):
    if a.dim() < 1 or b.dim() < 1:
        raise ShapeError('matmul needs tensors of rank >= 1')
    inner_a = a.shape[-1]
    inner_b = b.shape[-2] if b.dim() > 1 else b.shape[0]
    if inner_a != inner_b:
        raise ShapeError(f'matmul inner dimensions differ: {tuple(a.shape)} x {tuple(b.shape)}')
    return torch.matmul(a, b)


def softmax_lastdim(x):
    # max-subtraction; a fully -inf row is the caller's problem
    shifted = x - x.amax(dim=-1, keepdim=True).detach()
    weights = torch.exp(shifted)
    return weights / weights.sum(dim=-1, keepdim=True)


def layer_norm(x, gamma=None, beta=None, eps=LAYER_NORM_EPS):
    if x.shape[-1] < 2:
        raise ShapeError('layer_norm needs a last dimension of at least 2')
    mean = x.mean(dim=-1, keepdim=True)
    centered = x - mean
    variance = (centered * centered).mean(dim=-1, keepdim=True)
    normed = centered / torch.sqrt(variance + eps)
    if gamma is not None:
        normed = normed * gamma
    if beta is not None:
        normed = normed + beta
    return normed


def dropout(x, p, training, generator=None):
    if not 0 <= p < 1:
        raise ValueError(f'dropout probability must lie in [0, 1), got {p}')
    if not training or p == 0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p
    return x * keep.to(x.dtype) / (1.0 - p)


def gelu(x):
    return 0.5 * x * (1.0 + torch.erf(x / math.sqrt(2.0)))


def softplus(x, sharpness=1.0):
    return torch.nn.functional.softplus(x, beta=sharpness, threshold=20.0)


class LayerNorm(nn.Module):
    """Affine layer norm over the last dimension"""

    def __init__(self, dim):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(dim, dtype=DTYPE))
        self.beta = nn.Parameter(torch.zeros(dim, dtype=DTYPE))

    def forward(self, x):
        return layer_norm(x, self.gamma, self.beta)


def linear(in_dim, out_dim, bias=True):
    return nn.Linear(in_dim, out_dim, bias=bias, dtype=DTYPE)


def init_parameters(module, generator):
    """Projections ~ N(0, 1/fan_in), biases zero, embedding tables ~ N(0, 0.02^2)"""
    with torch.no_grad():
        for sub in module.modules():
            if isinstance(sub, nn.Linear):
                std = 1.0 / math.sqrt(sub.in_features)
                sub.weight.copy_(torch.randn(sub.weight.shape, generator=generator, dtype=DTYPE) * std)
                if sub.bias is not None:
                    sub.bias.zero_()
            elif isinstance(sub, nn.Embedding):
                sub.weight.copy_(torch.randn(sub.weight.shape, generator=generator, dtype=DTYPE) * 0.02)
                if sub.padding_idx is not None:
                    sub.weight[sub.padding_idx].zero_()


def grad_check(f, inputs, step=1e-5):
    """Max relative error between autograd and central differences.

    `f` maps the list of input tensors to a scalar tensor and must be
    deterministic. The error of each coordinate is |a - n| / max(|a|, |n|, 1)
    so that vanishing coordinates are judged absolutely.
    """
    inputs = [x.detach().clone().to(DTYPE).requires_grad_(True) for x in inputs]
    value = f(inputs)
    if not torch.isfinite(value).all():
        raise GradCheckError('function is not finite at the given inputs')
    analytic = torch.autograd.grad(value, inputs, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for x, grad in zip(inputs, analytic):
            grad = torch.zeros_like(x) if grad is None else grad
            flat = x.view(-1)
            for idx in range(flat.numel()):
                original = flat[idx].item()
                flat[idx] = original + step
                upper = f(inputs).item()
                flat[idx] = original - step
                lower = f(inputs).item()
                flat[idx] = original
                if not (math.isfinite(upper) and math.isfinite(lower)):
                    raise GradCheckError('function is not finite near the given inputs')
                numeric = (upper - lower) / (2.0 * step)
                exact = grad.view(-1)[idx].item()
                scale = max(abs(exact), abs(numeric), 1.0)
                worst = max(worst, abs(exact - numeric) / scale)
    return worst


def parameter_groups(module):
    """name -> tensor, in registration order"""
    return {name: p for name, p in module.named_parameters()}


def save_checkpoint(path, module, extra=None):
    params = {}
    for name, tensor in module.state_dict().items():
        values = tensor.detach().to(DTYPE).contiguous().view(-1).tolist()
        params[name] = {'shape': list(tensor.shape), 'values': values}
    payload = {'format': CHECKPOINT_FORMAT, 'extra': extra or {}, 'params': params}
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(payload, handle, sort_keys=True)
    logger.info('checkpoint written to %s (%d tensors)', path, len(params))


def read_checkpoint(path):
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            payload = json.load(handle)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f'cannot read checkpoint {path}: {e}')
    if not isinstance(payload, dict) or payload.get('format') != CHECKPOINT_FORMAT:
        found = payload.get('format') if isinstance(payload, dict) else None
        raise CheckpointError(f'checkpoint format tag {found!r} does not match {CHECKPOINT_FORMAT!r}')
    return payload


def load_state(module, payload):
    state = {}
    for name, entry in payload['params'].items():
        state[name] = torch.tensor(entry['values'], dtype=DTYPE).view(entry['shape'])
    try:
        module.load_state_dict(state)
    except RuntimeError as e:
        raise CheckpointError(f'checkpoint parameters do not fit the model: {e}')
