"""Langevin samplers: SGLD, MALA, cyclical SGMCMC and two-chain reSGLD.

Samplers work on flat parameter vectors.  A *target* is any object with an
``energy_grad(x, batch)`` method returning ``(energy, gradient)`` and an
``n_rows`` attribute (``None`` when the energy is not a sum over data rows,
which disables mini-batching).  :class:`FunctionTarget` wraps plain
callables.

All moves accept an optional constant metric ``M`` (a symmetric positive
definite matrix); the Langevin update then reads
``x - eta M grad + sqrt(2 eta T) M^{1/2} xi``, which leaves the same
stationary law ``exp(-U / T)`` as the identity-metric update.
"""

import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .exceptions import ChainFailure, ConfigurationError

log = logging.getLogger(__name__)

METHODS = ("sgld", "mala", "cyclical", "resgld")
AUTO_BATCH_THRESHOLD = 2000
DEFAULT_BATCH = 256


class FunctionTarget:
    """Target built from ``energy(x)`` and ``grad(x)`` callables."""

    n_rows = None

    def __init__(self, energy, grad):
        self.energy_fn = energy
        self.grad_fn = grad

    def energy_grad(self, x, batch=None):
        return float(self.energy_fn(x)), np.asarray(self.grad_fn(x), dtype=float)


class Metric:
    """Constant preconditioner; ``None`` means the identity."""

    def __init__(self, matrix=None):
        if matrix is None:
            self.matrix = None
            return
        m = np.asarray(matrix, dtype=float)
        m = 0.5 * (m + m.T)
        self.matrix = m
        self.factor = np.linalg.cholesky(m)
        self.inverse = np.linalg.inv(m)

    def apply(self, g):
        return g if self.matrix is None else self.matrix @ g

    def noise(self, z):
        return z if self.matrix is None else self.factor @ z

    def inv_quad(self, v):
        if self.matrix is None:
            return float(v @ v)
        return float(v @ self.inverse @ v)


def _as_metric(metric):
    return metric if isinstance(metric, Metric) else Metric(metric)


def _check_finite(x, what, iteration):
    if not np.all(np.isfinite(x)):
        raise ChainFailure(f"non-finite {what}", iteration=iteration)


def sgld_step(state, eta, temperature, grad, rng, metric=None, iteration=None):
    """One unadjusted Langevin (Euler-Maruyama) move."""
    if eta <= 0:
        raise ValueError("step size must be positive")
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    grad = np.asarray(grad, dtype=float)
    _check_finite(grad, "gradient", iteration)
    metric = _as_metric(metric)
    out = state - eta * metric.apply(grad)
    if temperature > 0:
        z = rng.standard_normal(np.shape(state))
        out = out + math.sqrt(2.0 * eta * temperature) * metric.noise(z)
    return out


def _log_q(to, frm, grad_frm, eta, temperature, metric):
    diff = to - frm + eta * metric.apply(grad_frm)
    return -metric.inv_quad(diff) / (4.0 * eta * temperature)


def mala_log_accept(x, y, e_x, g_x, e_y, g_y, eta, temperature=1.0, metric=None):
    """Log Metropolis-Hastings ratio for a Langevin proposal ``x -> y``."""
    metric = _as_metric(metric)
    return (-(e_y - e_x) / temperature
            + _log_q(x, y, g_y, eta, temperature, metric)
            - _log_q(y, x, g_x, eta, temperature, metric))


def mala_accept_prob(x, y, eta, energy, grad, temperature=1.0, metric=None):
    """``min(1, exp(log ratio))`` for moving from ``x`` to the proposal ``y``."""
    la = mala_log_accept(x, y, energy(x), grad(x), energy(y), grad(y), eta,
                         temperature, metric)
    return 1.0 if la >= 0 else math.exp(la)


def mala_step(state, eta, grad, energy, rng, temperature=1.0, metric=None):
    """One MALA transition.  Returns ``(new_state, accepted)``."""
    target = FunctionTarget(energy, grad)
    res = _mh_langevin(target, state, None, None, None, eta, temperature,
                       _as_metric(metric), rng)
    return res[0], res[1]


def _mh_langevin(target, x, e_full, g_batch, batch, eta, temperature, metric, rng,
                 iteration=None):
    """Metropolis-adjusted Langevin move with exact (full-data) energies.

    With a mini-batch the proposal drift uses the batch gradient at both
    ends, which makes the kernel reversible for every fixed batch.
    Returns ``(x, accepted, full_energy, batch_grad_at_x, accept_prob)``.
    """
    if e_full is None or g_batch is None:
        e_b, g_b = target.energy_grad(x, batch)
        if g_batch is None:
            g_batch = g_b
        if e_full is None:
            e_full = e_b if batch is None else target.energy_grad(x, None)[0]
    _check_finite(g_batch, "gradient", iteration)
    z = rng.standard_normal(np.shape(x))
    y = x - eta * metric.apply(g_batch) + math.sqrt(2.0 * eta * temperature) * metric.noise(z)
    e_yb, g_y = target.energy_grad(y, batch)
    e_y = e_yb if batch is None else target.energy_grad(y, None)[0]
    if not (np.isfinite(e_y) and np.all(np.isfinite(g_y))):
        return x, False, e_full, g_batch, 0.0
    la = mala_log_accept(x, y, e_full, g_batch, e_y, g_y, eta, temperature, metric)
    prob = 1.0 if la >= 0 else math.exp(la)
    if rng.uniform() < prob:
        return y, True, e_y, g_y, prob
    return x, False, e_full, g_batch, prob


def cyclical_step_size(k, eta0, cycles, total):
    """Cosine step size restarting every ``floor(total / cycles)`` iterations."""
    if total < cycles:
        raise ValueError("total iterations must be at least the number of cycles")
    if cycles < 1:
        raise ValueError("need at least one cycle")
    if not 1 <= k:
        raise ValueError("iterations are counted from 1")
    period = total // cycles
    return eta0 / 2.0 * (math.cos(math.pi * ((k - 1) % period) / period) + 1.0)


def swap_rate(e1, e2, t1, t2, sigma2=0.0, C=1.0):
    """Corrected replica-exchange swap rate (may exceed 1)."""
    if not (np.isfinite(e1) and np.isfinite(e2)):
        raise ChainFailure("non-finite energy estimate in swap test")
    dt = 1.0 / t1 - 1.0 / t2
    expo = dt * (e1 - e2 - dt * sigma2 / C)
    return math.exp(min(expo, 700.0))


def window_variance(history, window):
    """Sample variance of the last ``window`` energy differences (0 if < 2)."""
    tail = np.asarray(history[-window:], dtype=float)
    if tail.size < 2:
        return 0.0
    return float(np.var(tail, ddof=1))


@dataclass
class ReplicaStep:
    state1: np.ndarray
    state2: np.ndarray
    swapped: bool
    rate: float
    energies: tuple
    grads: tuple


def resgld_step(state1, state2, eta, temperatures, grads, energy_grad, sigma2, C,
                rng, metric=None, iteration=None):
    """Advance both replicas by one Langevin move each, then attempt a swap.

    ``energy_grad(x)`` returns the (mini-batch) energy estimate and gradient
    at the advanced states; those values decide the swap and are returned so
    the caller can reuse the gradients for the next move.
    """
    t1, t2 = temperatures
    if not t2 > t1:
        raise ValueError("need temperatures t2 > t1")
    metric = _as_metric(metric)
    x1 = sgld_step(state1, eta, t1, grads[0], rng, metric, iteration)
    x2 = sgld_step(state2, eta, t2, grads[1], rng, metric, iteration)
    e1, g1 = energy_grad(x1)
    e2, g2 = energy_grad(x2)
    rate = swap_rate(e1, e2, t1, t2, sigma2, C)
    if rng.uniform() < rate:
        return ReplicaStep(x2, x1, True, rate, (e2, e1), (g2, g1))
    return ReplicaStep(x1, x2, False, rate, (e1, e2), (g1, g2))


@dataclass
class ChainConfig:
    """Sampler settings.

    ``step_size=None`` calibrates a MALA step on the target (acceptance near
    ``target_accept``); unadjusted methods then use ``unadjusted_fraction``
    of it.  ``batch_size=None`` means full batch up to 2000 rows and 256-row
    mini-batches above.  ``swap_C=None`` means ``10 N``.  ``mh_adjust=None``
    resolves to True for ``mala`` and ``resgld`` and False otherwise.
    """

    method: str = "resgld"
    step_size: float = None
    iterations: int = 4000
    burn_in_fraction: float = 0.5
    thin: int = 1
    temperatures: tuple = (1.0, 10.0)
    cycles: int = 4
    batch_size: object = None
    swap_C: float = None
    window: int = 100
    seed: int = 0
    mh_adjust: bool = None
    unadjusted_fraction: float = 0.1
    calibration_iterations: int = 300
    target_accept: float = 0.57

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown sampler method {self.method!r}")
        if self.step_size is not None and self.step_size <= 0:
            raise ConfigurationError("step size must be positive")
        if self.iterations < 1:
            raise ConfigurationError("need at least one iteration")
        if not 0.0 <= self.burn_in_fraction < 1.0:
            raise ConfigurationError("burn_in_fraction must lie in [0, 1)")
        if self.thin < 1:
            raise ConfigurationError("thin must be >= 1")
        t1, t2 = self.temperatures
        if not t2 > t1 > 0:
            raise ConfigurationError("need temperatures t2 > t1 > 0")
        if self.cycles < 1 or (self.method == "cyclical" and self.iterations < self.cycles):
            raise ConfigurationError("cyclical schedule needs 1 <= cycles <= iterations")
        if self.window < 2:
            raise ConfigurationError("variance window must be >= 2")
        self.temperatures = (float(t1), float(t2))

    @property
    def use_mh(self):
        if self.method == "mala":
            return True
        if self.mh_adjust is None:
            return self.method == "resgld"
        return bool(self.mh_adjust)

    def resolved_batch(self, n_rows):
        if n_rows is None:
            return None
        b = self.batch_size
        if b is None:
            b = DEFAULT_BATCH if n_rows > AUTO_BATCH_THRESHOLD else "full"
        if b == "full" or (isinstance(b, int) and b >= n_rows):
            return None
        if self.method == "mala":
            return None
        return int(b)

    def to_dict(self):
        d = asdict(self)
        d["temperatures"] = list(self.temperatures)
        return d


@dataclass
class PosteriorSamples:
    """Retained draws (one flat vector per row) and run diagnostics."""

    draws: np.ndarray
    energy_trace: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    coefficients: np.ndarray = None  # (P, m, d) when drawn from a regression posterior

    def __len__(self):
        return self.draws.shape[0]


def calibrate_step_size(target, x0, rng, metric=None, iterations=300,
                        target_accept=0.57, eta0=0.1):
    """Tune a MALA step by stochastic approximation on ``log eta``.

    Runs full-data MALA from ``x0``; returns ``(eta, x_last)`` where ``eta``
    is the geometric mean of the second half of the adaptation path.
    """
    metric = _as_metric(metric)
    log_eta = math.log(eta0)
    x = np.array(x0, dtype=float)
    e, g = target.energy_grad(x, None)
    path = []
    for t in range(iterations):
        x, _, e, g, prob = _mh_langevin(target, x, e, g, None, math.exp(log_eta),
                                        1.0, metric, rng, t)
        log_eta += (prob - target_accept) * 2.0 / math.sqrt(t + 5.0)
        log_eta = min(log_eta, math.log(50.0))
        if t >= iterations // 2:
            path.append(log_eta)
    eta = math.exp(float(np.mean(path))) if path else math.exp(log_eta)
    return eta, x


def run_chain(config, target, init, metric=None):
    """Run the configured sampler and return post-burn-in draws.

    For ``resgld`` only the low-temperature (exploitation) replica is
    recorded.  Draws are kept from iteration ``floor(K * burn_in_fraction)``
    on, every ``thin``-th iteration.
    """
    rng = np.random.default_rng(config.seed)
    metric = _as_metric(metric)
    x = np.array(init, dtype=float)
    n_rows = getattr(target, "n_rows", None)
    batch_size = config.resolved_batch(n_rows)

    eta = config.step_size
    calibrated = eta is None
    if calibrated:
        eta, x = calibrate_step_size(target, x, rng, metric,
                                     config.calibration_iterations,
                                     config.target_accept)
        if not config.use_mh:
            eta *= config.unadjusted_fraction
    K = config.iterations
    burn = int(K * config.burn_in_fraction)
    if K - burn <= 0:
        raise ConfigurationError("no iterations left after burn-in")

    def next_batch():
        if batch_size is None:
            return None
        return rng.integers(0, n_rows, size=batch_size)

    draws, trace = [], []
    accepted = proposals = 0
    swaps = attempts = 0
    method = config.method
    use_mh = config.use_mh
    # an adjusted chain runs on exact energies and gradients; only the
    # hot replica and unadjusted chains see mini-batches
    batch = next_batch()
    e, g = target.energy_grad(x, None if use_mh else batch)

    if method == "resgld":
        t1, t2 = config.temperatures
        C = config.swap_C if config.swap_C is not None else 10.0 * (n_rows or 1)
        x2 = x.copy()
        g2 = target.energy_grad(x2, batch)[1] if use_mh else g.copy()
        diffs = []
    for k in range(1, K + 1):
        step = cyclical_step_size(k, eta, config.cycles, K) if method == "cyclical" else eta
        temp = config.temperatures[0] if method == "resgld" else 1.0
        if use_mh:
            x, acc, e, g, _ = _mh_langevin(target, x, e, g, None, step, temp,
                                           metric, rng, k)
            accepted += acc
            proposals += 1
        else:
            x = sgld_step(x, step, temp, g, rng, metric, k)
        if method == "resgld":
            x2 = sgld_step(x2, step, t2, g2, rng, metric, k)
        batch = next_batch()
        if not use_mh:
            e, g = target.energy_grad(x, batch)
        if method == "resgld":
            if use_mh:
                e2, g2_full = target.energy_grad(x2, None)
                sigma2 = 0.0
            else:
                e2, g2 = target.energy_grad(x2, batch)
                if batch is not None:
                    diffs.append(e - e2)
                sigma2 = window_variance(diffs, config.window) if batch is not None else 0.0
            attempts += 1
            swapped = rng.uniform() < swap_rate(e, e2, t1, t2, sigma2, C)
            if swapped:
                swaps += 1
                x, x2 = x2, x
                if use_mh:
                    e, g, g2_full = e2, g2_full, g
                else:
                    e, e2, g, g2 = e2, e, g2, g
            if use_mh:
                g2 = g2_full if batch is None else target.energy_grad(x2, batch)[1]
        if not np.all(np.isfinite(x)) or not np.isfinite(e):
            raise ChainFailure("chain state or energy became non-finite", iteration=k)
        trace.append(e)
        if k > burn and (k - burn - 1) % config.thin == 0:
            draws.append(x.copy())

    if not draws:
        raise ConfigurationError("no draws retained after burn-in and thinning")
    draws = np.asarray(draws)
    diagnostics = {
        "method": method,
        "step_size": eta,
        "step_size_calibrated": calibrated,
        "batch_size": batch_size if batch_size is not None else "full",
        "acceptance_rate": (accepted / proposals) if proposals else None,
        "swap_attempts": attempts,
        "swap_accepts": swaps,
        "iterations": K,
        "burn_in": burn,
    }
    return PosteriorSamples(draws, np.asarray(trace), diagnostics)
