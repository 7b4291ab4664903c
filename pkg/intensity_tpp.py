"""Conditional intensity, Monte Carlo log-likelihood, and minimum-Bayes-risk prediction."""
import logging
import math
from dataclasses import dataclass

import torch
from torch import nn

from exceptions import ConfigError
from numerics import DTYPE, linear, softplus

logger = logging.getLogger(__name__)


@dataclass
class McConfig:
    integral_samples: int = 20
    grid_size: int = 256
    survival_cutoff: float = 1e-4
    seed: int = 42
    time_unit: float = 1.0
    max_horizon_factor: float = 1000.0

    def validate(self):
        errors = []
        if self.integral_samples < 1:
            errors.append(f'integral_samples must be >= 1, got {self.integral_samples}')
        if self.grid_size < 2:
            errors.append('grid_size must be >= 2')
        if not 0 < self.survival_cutoff < 1:
            errors.append('survival_cutoff must lie in (0, 1)')
        if self.time_unit <= 0 or self.max_horizon_factor <= 1:
            errors.append('time_unit must be > 0 and max_horizon_factor > 1')
        return errors

    def check(self):
        errors = self.validate()
        if errors:
            raise ConfigError(errors)


class IntensityHead(nn.Module):
    """lambda_k(t) = softplus_s(alpha_k (t - t_prev) + w_k . h + b_k)"""

    def __init__(self, num_types, dim, sharpness=1.0):
        super().__init__()
        if sharpness <= 0:
            raise ConfigError('softplus sharpness must be > 0')
        self.num_types = num_types
        self.sharpness = float(sharpness)
        self.proj = linear(dim, num_types)
        self.alpha = nn.Parameter(torch.zeros(num_types, dtype=DTYPE))

    def preactivation(self, h, dt):
        dt = torch.as_tensor(dt, dtype=DTYPE)
        return self.alpha * dt.unsqueeze(-1) + self.proj(h)

    def forward(self, h, dt):
        return softplus(self.preactivation(h, dt), self.sharpness)

    def log_intensity(self, h, dt):
        x = self.preactivation(h, dt) * self.sharpness
        # softplus(x) ~ exp(x) far left; keep the log finite there
        tail = x - math.log(self.sharpness)
        body = torch.log(softplus(x.clamp_min(-30.0)) / self.sharpness)
        return torch.where(x < -30.0, tail, body)

    def total(self, h, dt):
        return self.forward(h, dt).sum(dim=-1)


def intensity(h, t, t_prev, k, head):
    return head(h, torch.as_tensor(t, dtype=DTYPE) - t_prev)[..., k]


def mc_compensator(rate_fn, t_lo, t_hi, num_samples, generator=None):
    """Integral of a total-rate function over each (t_lo, t_hi] by uniform sampling.

    `rate_fn` maps an (I, M) tensor of times to (I, M) total rates, where row
    i belongs to interval i. Returns the estimates and their standard errors.
    """
    if num_samples < 1:
        raise ConfigError(f'integral_samples must be >= 1, got {num_samples}')
    t_lo = torch.as_tensor(t_lo, dtype=DTYPE)
    t_hi = torch.as_tensor(t_hi, dtype=DTYPE)
    width = t_hi - t_lo
    fractions = torch.rand(t_lo.shape[0], num_samples, generator=generator, dtype=DTYPE)
    samples = t_lo.unsqueeze(-1) + fractions * width.unsqueeze(-1)
    rates = rate_fn(samples)
    estimate = width * rates.mean(dim=-1)
    if num_samples > 1:
        stderr = width * rates.detach().std(dim=-1) / math.sqrt(num_samples)
    else:
        stderr = torch.zeros_like(estimate).detach()
    return estimate, stderr


@dataclass
class LikelihoodTerms:
    event_log_intensity: torch.Tensor
    compensator: torch.Tensor
    stderr: torch.Tensor
    n_events: int

    @property
    def log_likelihood(self):
        return self.event_log_intensity.sum() - self.compensator.sum()

    @property
    def nll(self):
        return -self.log_likelihood

    @property
    def total_stderr(self):
        return float(torch.sqrt((self.stderr ** 2).sum()))


def nll_sequence(hs, times, type_ids, t_end, head, mc, generator=None):
    """Monte Carlo sequence log-likelihood terms.

    hs holds N + 1 context rows: hs[0] precedes the first event and hs[i]
    summarises events 1..i. Interval i runs from t_{i-1} (t_0 = 0) to t_i; the
    tail (t_N, t_end] is added when t_end lies beyond the last event.
    """
    mc.check()
    times = torch.as_tensor(times, dtype=DTYPE)
    type_ids = torch.as_tensor(type_ids, dtype=torch.long)
    n = times.shape[0]
    t_prev = torch.cat([times.new_zeros(1), times[:-1]])
    h_prev = hs[:n]
    event_log = head.log_intensity(h_prev, times - t_prev).gather(-1, type_ids.unsqueeze(-1)).squeeze(-1)

    lo, hi, contexts = t_prev, times, h_prev
    t_end = float(t_end)
    if t_end > float(times[-1]):
        lo = torch.cat([lo, times[-1:]])
        hi = torch.cat([hi, times.new_tensor([t_end])])
        contexts = torch.cat([contexts, hs[n:n + 1]])

    def rate_fn(samples):
        return head.total(contexts.unsqueeze(1), samples - lo.unsqueeze(-1))

    compensator, stderr = mc_compensator(rate_fn, lo, hi, mc.integral_samples, generator)
    return LikelihoodTerms(event_log_intensity=event_log, compensator=compensator, stderr=stderr, n_events=n)


def _trapezoid_survival(head, c, span, grid_size):
    """Total rates, cumulative hazard and survival on a uniform grid over [0, span] per row"""
    x = torch.linspace(0.0, 1.0, grid_size, dtype=DTYPE).unsqueeze(0) * span.unsqueeze(-1)
    pre = head.alpha * x.unsqueeze(-1) + c.unsqueeze(-2)
    rates = softplus(pre, head.sharpness).sum(dim=-1)
    hazard = torch.cumulative_trapezoid(rates, x, dim=-1)
    hazard = torch.cat([torch.zeros_like(hazard[..., :1]), hazard], dim=-1)
    return x, rates, torch.exp(-hazard)


def _expected_gap(head, c, span, grid_size):
    x, rates, survival = _trapezoid_survival(head, c, span, grid_size)
    density = rates * survival
    return torch.trapezoid(x * density, x, dim=-1) / torch.trapezoid(density, x, dim=-1)


def predict_next_time(h, t_prev, head, mc):
    """Expected next time under the model's inter-event density, by trapezoidal quadrature.

    The first window spans twice the time at which a constant process at the
    starting total rate would reach the survival cutoff. It doubles until
    survival at its end falls below the cutoff. The density is renormalised by
    the mass it captures, and the grid and its halving are combined by
    Richardson extrapolation.
    """
    mc.check()
    with torch.no_grad():
        squeeze = h.dim() == 1
        h = h.unsqueeze(0) if squeeze else h
        t_prev = torch.as_tensor(t_prev, dtype=DTYPE).reshape(-1).expand(h.shape[0])
        c = head.proj(h)
        cap = mc.time_unit * mc.max_horizon_factor
        rate0 = softplus(c, head.sharpness).sum(dim=-1)
        span = torch.clamp(-2.0 * math.log(mc.survival_cutoff) / rate0, max=cap)
        while True:
            _, _, survival = _trapezoid_survival(head, c, span, mc.grid_size)
            pending = survival[..., -1] >= mc.survival_cutoff
            growable = pending & (span < cap)
            if not bool(growable.any()):
                if bool(pending.any()):
                    logger.warning(
                        'survival stayed above %.1e within %.1f time units for %d row(s); '
                        'returning the expectation over the captured mass',
                        mc.survival_cutoff, cap, int(pending.sum()),
                    )
                break
            span = torch.where(growable, torch.clamp(span * 2.0, max=cap), span)
        coarse = _expected_gap(head, c, span, mc.grid_size)
        fine = _expected_gap(head, c, span, 2 * mc.grid_size - 1)
        t_hat = t_prev + (4.0 * fine - coarse) / 3.0
        return t_hat[0] if squeeze else t_hat


def predict_next_type(h, t_hat, t_prev, head):
    """argmax_k lambda_k(t_hat); ties go to the lowest type id"""
    with torch.no_grad():
        dt = torch.as_tensor(t_hat, dtype=DTYPE) - torch.as_tensor(t_prev, dtype=DTYPE)
        return torch.argmax(head(h, dt), dim=-1)
