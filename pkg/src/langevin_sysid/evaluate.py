"""Error Bar, MSE and AIC; reconstruction from posterior draws; threshold sweeps."""

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import BandUnavailableError, DegenerateEntryError, SysIdError
from .identify import SupportMask, _coefficient_draws, fit, mode_estimate
from .systems import (DEFAULT_ATOL, DEFAULT_RTOL, DIVERGENCE_BOUND, Field,
                      Trajectory, integrate_rk45, spectral_rhs)

log = logging.getLogger(__name__)


@dataclass
class MetricReport:
    error_bar: float
    mse: float
    aic: float
    k_active: int
    n_points: int
    dims: int

    def to_dict(self):
        return dict(self.__dict__)


def _active(mask, shape):
    if mask is None:
        return np.ones(shape, dtype=bool)
    return mask.active if isinstance(mask, SupportMask) else np.asarray(mask, dtype=bool)


def error_bar(samples, mask=None):
    """Sum over active entries of sample variance divided by squared mode."""
    draws = _coefficient_draws(samples)
    active = _active(mask, draws.shape[1:])
    if not active.any():
        raise ValueError("error bar needs at least one active entry")
    modes = mode_estimate(draws)[active]
    if np.any(modes == 0.0):
        raise DegenerateEntryError("an active entry has an exactly-zero mode estimate")
    if draws.shape[0] < 2:
        return 0.0
    var = draws.var(axis=0, ddof=1)[active]
    return float(np.sum(var / modes ** 2))


def _values(x):
    if isinstance(x, Trajectory):
        return x.states
    if isinstance(x, Field):
        return x.values
    return np.asarray(x, dtype=float)


def mse(truth, prediction):
    """Mean of squared entrywise differences."""
    a, b = _values(truth), _values(prediction)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def aic(mse_value, k_active, n_points, dims):
    """``2k + N d ln(MSE)``; a perfect fit gives ``-inf`` with a warning."""
    if mse_value < 0:
        raise ValueError("MSE must be non-negative")
    if mse_value == 0:
        warnings.warn("zero MSE: AIC is -inf", RuntimeWarning, stacklevel=2)
        return -math.inf
    return 2.0 * k_active + n_points * dims * math.log(mse_value)


def _pde_terms(coef, descriptors):
    coef = np.asarray(coef, dtype=float).reshape(len(descriptors), -1)
    return [(float(coef[i, 0]), b.exponents) for i, b in enumerate(descriptors)
            if coef[i, 0] != 0.0]


def _fd_rhs(space, terms):
    """Method-of-lines right-hand side for non-periodic grids."""
    dx = space.dx

    def rhs(t, u):
        u_x = np.gradient(u, dx, edge_order=2)
        u_xx = np.gradient(u_x, dx, edge_order=2)
        out = np.zeros_like(u)
        for c, (a, b, e) in terms:
            out += c * u ** a * u_x ** b * u_xx ** e
        return out

    return rhs


def ode_rhs(coef, descriptors):
    """Right-hand side ``theta(x) @ coef`` evaluated with active rows only."""
    coef = np.asarray(coef, dtype=float)
    rows = np.flatnonzero(np.any(coef != 0.0, axis=1))
    n_vars = len(descriptors[0].exponents)
    exps = np.array([descriptors[i].exponents for i in rows], dtype=float).reshape(rows.size,
                                                                                  n_vars)
    c = coef[rows]

    def rhs(t, x):
        feats = np.prod(x[None, :] ** exps, axis=1) if rows.size else np.zeros(0)
        return feats @ c if rows.size else np.zeros(coef.shape[1])

    return rhs


def reconstruct(coef, descriptors, ic, grid, space=None, rtol=DEFAULT_RTOL,
                atol=DEFAULT_ATOL, bound=DIVERGENCE_BOUND):
    """Integrate the identified model from ``ic``.

    With ``space`` given the descriptors are monomials over ``(u, u_x, u_xx)``
    and ``ic`` is the initial profile (array or callable of ``x``); periodic
    grids use FFT derivatives, others second-order finite differences.
    """
    if space is None:
        return integrate_rk45(ode_rhs(coef, descriptors), ic, grid, rtol, atol, bound)
    terms = _pde_terms(coef, descriptors)
    rhs = spectral_rhs(space, terms) if space.periodic else _fd_rhs(space, terms)
    u0 = ic(space.points) if callable(ic) else np.asarray(ic, dtype=float)
    traj = integrate_rk45(rhs, u0, grid, rtol, atol, bound)
    return Field(space, grid, traj.states, diverged=traj.diverged)


@dataclass
class CredibleBand:
    grid: object
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    level: float
    ensemble_size: int
    diverged: int

    def contains(self, truth):
        v = _values(truth)
        return (v >= self.lower) & (v <= self.upper)


def credible_band(samples, descriptors, ic, grid, level=0.95, ensemble_size=200,
                  seed=0, space=None, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL):
    """Pointwise quantile band over reconstructions from resampled draws.

    Diverged members are dropped and counted in ``diverged``.
    """
    draws = _coefficient_draws(samples)
    if draws.shape[0] < 1 or ensemble_size < 2:
        raise ValueError("need draws and an ensemble of at least 2")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    pick = rng.integers(0, draws.shape[0], size=ensemble_size)
    uniq, inverse = np.unique(pick, return_inverse=True)
    cache = {}
    for u in uniq:
        key = draws[u].tobytes()
        if key not in cache:
            cache[key] = reconstruct(draws[u], descriptors, ic, grid, space, rtol, atol)
    runs = [cache[draws[uniq[i]].tobytes()] for i in inverse]
    good = [_values(r) for r in runs if not r.diverged]
    n_div = len(runs) - len(good)
    if not good:
        raise BandUnavailableError("every ensemble member diverged")
    stack = np.stack(good)
    lo, med, hi = np.quantile(stack, [(1 - level) / 2, 0.5, (1 + level) / 2],
                              axis=0, method="linear")
    return CredibleBand(grid, lo, med, hi, level, ensemble_size, n_div)


def evaluate_model(model, truth, ic, grid, space=None):
    """Fill ``mse`` and ``aic`` of ``model`` from a reconstruction at its modes."""
    pred = reconstruct(model.coefficients, _descriptors(model), ic, grid, space)
    ref = _values(truth)
    got = _values(pred)
    if pred.diverged:
        value = math.inf
    else:
        value = mse(ref, got)
    n, d = ref.shape
    model.metrics["mse"] = value
    model.metrics["aic"] = aic(value, model.mask.k, n, d) if math.isfinite(value) else math.inf
    return pred


def _descriptors(model):
    desc = model.descriptors
    if desc is None:
        raise ValueError("model does not carry library descriptors")
    return desc


@dataclass
class SweepPoint:
    threshold: float
    error_bar: float
    k_active: int
    model: object = None
    error: str = None


def threshold_sweep(dataset, library, config, thresholds, max_outer=10, prior=None,
                    cache=None):
    """Fit once per threshold and record the resulting Error Bar.

    Sampling rounds are shared between thresholds whenever they reach the
    same support (round seeds depend only on the mask), so the sweep costs
    little more than its distinct supports.  Pass ``cache`` to share rounds
    with other fits on the same data and chain settings.
    """
    thresholds = [float(c) for c in thresholds]
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    cache = {} if cache is None else cache
    out = []
    for c in thresholds:
        try:
            model = fit(dataset, library, config, c, max_outer, prior, cache=cache)
            out.append(SweepPoint(c, model.metrics["error_bar"], model.mask.k, model))
        except SysIdError as exc:
            log.warning("threshold %g failed: %s", c, exc)
            out.append(SweepPoint(c, None, 0, None, str(exc)))
    return out
