"""Ground-truth generators (Poisson, exponential Hawkes) and closed-form likelihoods."""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from event_data import Event, EventSequence
from exceptions import ConfigError

logger = logging.getLogger(__name__)


def type_name(k):
    return f'type_{k}'


@dataclass
class HawkesParams:
    """Univariate exp-kernel Hawkes; `alpha` is the jump size, so the branching ratio is alpha / beta.

    For the mutually-exciting variant pass a per-type `mu` vector and an
    `alpha` matrix where alpha[k, j] is the jump of type k's intensity after a
    type-j event; beta stays shared.
    """
    mu: object = 0.5
    alpha: object = 0.8
    beta: float = 1.0
    type_probs: list = field(default=None)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        errors = []
        if np.any(self.mu <= 0):
            errors.append('baseline mu must be > 0')
        if np.any(self.alpha < 0):
            errors.append('excitation alpha must be >= 0')
        if self.beta <= 0:
            errors.append('decay beta must be > 0')
        if self.multitype:
            k = self.mu.shape[0]
            if self.alpha.shape != (k, k):
                errors.append(f'alpha must be a {k}x{k} matrix for {k} baselines')
            elif self.spectral_radius() >= 1:
                errors.append(f'stationarity violated: spectral radius of alpha/beta is {self.spectral_radius():.4g} >= 1')
        elif self.alpha.ndim == 0 and self.alpha / self.beta >= 1:
            errors.append(f'stationarity violated: alpha/beta = {float(self.alpha) / self.beta:.4g} >= 1')
        if self.type_probs is not None:
            probs = np.asarray(self.type_probs, dtype=np.float64)
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
                errors.append('type_probs must be a probability vector')
        if errors:
            raise ConfigError(errors)

    @property
    def multitype(self):
        return self.mu.ndim == 1

    @property
    def num_types(self):
        if self.multitype:
            return self.mu.shape[0]
        return 1 if self.type_probs is None else len(self.type_probs)

    def spectral_radius(self):
        if not self.multitype:
            return float(self.alpha) / self.beta
        return float(np.max(np.abs(np.linalg.eigvals(self.alpha / self.beta))))

    def mean_rate(self):
        if not self.multitype:
            return float(self.mu) / (1.0 - float(self.alpha) / self.beta)
        k = self.mu.shape[0]
        return float(np.linalg.solve(np.eye(k) - self.alpha / self.beta, self.mu).sum())

    def to_json(self):
        return {
            'mu': self.mu.tolist(),
            'alpha': self.alpha.tolist(),
            'beta': self.beta,
            'type_probs': self.type_probs,
        }


def _build_sequence(seq_id, times, types, horizon):
    events = tuple(Event(t=float(t), type_id=int(k), type_text=type_name(int(k))) for t, k in zip(times, types))
    return EventSequence(seq_id=seq_id, events=events, t_end=float(horizon))


def _draw_types(rng, n, num_types, type_probs=None):
    if num_types == 1:
        return np.zeros(n, dtype=np.int64)
    return rng.choice(num_types, size=n, p=type_probs)


def gen_poisson(rate, horizon, num_types, rng, seq_id='poisson', type_probs=None):
    """Homogeneous Poisson on [0, horizon]; empty draws are redrawn until one event exists"""
    if rate <= 0 or horizon <= 0:
        raise ConfigError('poisson generation needs rate > 0 and horizon > 0')
    resamples = 0
    while True:
        times = []
        t = rng.exponential(1.0 / rate)
        while t < horizon:
            times.append(t)
            t += rng.exponential(1.0 / rate)
        if times:
            break
        resamples += 1
    if resamples:
        logger.warning('sequence %s: redrew %d empty poisson realisation(s)', seq_id, resamples)
    types = _draw_types(rng, len(times), num_types, type_probs)
    return _build_sequence(seq_id, times, types, horizon)


def _thin_univariate(params, horizon, rng):
    mu, alpha, beta = float(params.mu), float(params.alpha), params.beta
    times = []
    t, excitation = 0.0, 0.0
    while True:
        # the kernel only decays between events, so the current rate bounds the next candidate
        upper = mu + excitation
        wait = rng.exponential(1.0 / upper)
        t += wait
        if t >= horizon:
            return times, None
        excitation *= math.exp(-beta * wait)
        if rng.uniform() * upper <= mu + excitation:
            times.append(t)
            excitation += alpha


def _thin_multitype(params, horizon, rng):
    mu, alpha, beta = params.mu, params.alpha, params.beta
    times, types = [], []
    t = 0.0
    excitation = np.zeros_like(mu)
    while True:
        upper = float((mu + excitation).sum())
        wait = rng.exponential(1.0 / upper)
        t += wait
        if t >= horizon:
            return times, types
        excitation = excitation * math.exp(-beta * wait)
        rates = mu + excitation
        if rng.uniform() * upper <= rates.sum():
            k = int(rng.choice(len(mu), p=rates / rates.sum()))
            times.append(t)
            types.append(k)
            excitation = excitation + alpha[:, k]


def gen_hawkes_exp(params, horizon, rng, seq_id='hawkes'):
    """Ogata thinning on [0, horizon]"""
    resamples = 0
    while True:
        if params.multitype:
            times, types = _thin_multitype(params, horizon, rng)
        else:
            times, types = _thin_univariate(params, horizon, rng)
        if times:
            break
        resamples += 1
    if resamples:
        logger.warning('sequence %s: redrew %d empty hawkes realisation(s)', seq_id, resamples)
    if types is None:
        types = _draw_types(rng, len(times), params.num_types, params.type_probs)
    return _build_sequence(seq_id, times, types, horizon)


def hawkes_exp_intensity(params, history, query):
    """True total intensity at each query time given the events strictly before it"""
    history = np.asarray(history, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    lags = query[..., None] - history
    kernel = np.where(lags > 0, np.exp(-params.beta * np.where(lags > 0, lags, 0.0)), 0.0)
    if not params.multitype:
        return float(params.mu) + float(params.alpha) * kernel.sum(axis=-1)
    raise ValueError('hawkes_exp_intensity needs the event types for a multitype process')


def hawkes_exp_loglik(params, seq):
    """Closed-form log-likelihood with the O(N) recursion A_i = e^{-beta dt}(1 + A_{i-1})"""
    times = np.asarray(seq.times, dtype=np.float64)
    horizon = seq.t_end
    beta = params.beta
    if params.multitype:
        return _multitype_loglik(params, times, np.asarray(seq.type_ids), horizon)
    mu, alpha = float(params.mu), float(params.alpha)
    ll = 0.0
    a = 0.0
    for i, t in enumerate(times):
        if i > 0:
            a = math.exp(-beta * (t - times[i - 1])) * (1.0 + a)
        ll += math.log(mu + alpha * a)
    ll -= mu * horizon
    ll -= (alpha / beta) * float(np.sum(1.0 - np.exp(-beta * (horizon - times))))
    return ll


def _multitype_loglik(params, times, types, horizon):
    mu, alpha, beta = params.mu, params.alpha, params.beta
    ll = 0.0
    excitation = np.zeros_like(mu)
    previous = 0.0
    for t, k in zip(times, types):
        excitation = excitation * math.exp(-beta * (t - previous))
        ll += math.log(mu[k] + excitation[k])
        excitation = excitation + alpha[:, k]
        previous = t
    ll -= float(mu.sum()) * horizon
    decay = 1.0 - np.exp(-beta * (horizon - times))
    ll -= float(np.sum(alpha[:, types].sum(axis=0) / beta * decay))
    return ll


def poisson_loglik(rate, seq):
    return len(seq) * math.log(rate) - rate * seq.t_end


def generate_corpus(preset, num_sequences, horizon, rng, rate=1.0, num_types=1, hawkes=None):
    """Independent sequences, each drawn from its own sub-stream of `rng` (a numerics.Rng)"""
    sequences = []
    for i in range(num_sequences):
        seq_id = f'seq-{i:05d}'
        stream = rng.numpy('synth', preset, i)
        if preset == 'poisson':
            sequences.append(gen_poisson(rate, horizon, num_types, stream, seq_id=seq_id))
        elif preset in ('hawkes', 'hawkes_multi'):
            sequences.append(gen_hawkes_exp(hawkes, horizon, stream, seq_id=seq_id))
        else:
            raise ConfigError(f'unknown generator preset {preset!r}')
    logger.info('generated %d %s sequences (%d events)', len(sequences), preset,
                sum(len(s) for s in sequences))
    return sequences
