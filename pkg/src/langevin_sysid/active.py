"""Pool-based active learning of derivative measurements.

Candidates are scored by a weighted sum of two min-max standardised
criteria: the predictive variance of the derivative across posterior draws
and a density-adjusted maximin distance in library-feature space.
"""

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import ConfigurationError
from .features import Dataset, build_library
from .identify import _coefficient_draws, fit
from .samplers import ChainConfig

log = logging.getLogger(__name__)


def predictive_variance(features, samples, n_draws=None):
    """Variance of ``theta(u) @ Xi`` across draws, summed over state dimensions.

    ``features`` is one library row or an ``(n, m)`` matrix; uses the
    population variance (divide by the number of draws).
    """
    draws = _coefficient_draws(samples)
    if draws.shape[0] < 2:
        raise ValueError("predictive variance needs at least 2 draws")
    if n_draws is not None and draws.shape[0] > n_draws:
        pick = np.linspace(0, draws.shape[0] - 1, n_draws).round().astype(int)
        draws = draws[pick]
    feats = np.asarray(features, dtype=float)
    single = feats.ndim == 1
    feats = np.atleast_2d(feats)
    preds = np.einsum("nm,pmd->pnd", feats, draws)
    var = preds.var(axis=0).sum(axis=1)
    return float(var[0]) if single else var


def knn_density(point, reference, k):
    """Inverse mean Euclidean distance from ``point`` to its ``k`` nearest references."""
    ref = np.atleast_2d(np.asarray(reference, dtype=float))
    if k < 1 or ref.shape[0] < k:
        raise ValueError("reference set smaller than k")
    dist = np.sqrt(((ref - np.asarray(point, dtype=float)) ** 2).sum(axis=1))
    mean = np.sort(dist)[:k].mean()
    return math.inf if mean == 0 else 1.0 / mean


def pool_density(features, k):
    """KNN density of every row against the other rows of ``features``."""
    feats = np.atleast_2d(np.asarray(features, dtype=float))
    n = feats.shape[0]
    if not 1 <= k < n:
        raise ValueError("need 1 <= k < pool size")
    dist, idx = cKDTree(feats).query(feats, k=k + 1)
    # drop each row's own entry; duplicates make the choice immaterial
    own = idx == np.arange(n)[:, None]
    drop = np.where(own.any(axis=1), own.argmax(axis=1), k)
    keep = np.ones_like(dist, dtype=bool)
    keep[np.arange(n), drop] = False
    mean = dist[keep].reshape(n, k).mean(axis=1)
    with np.errstate(divide="ignore"):
        return np.where(mean == 0, np.inf, 1.0 / mean)


def min_distance(features, selected):
    """Distance from each row of ``features`` to its nearest selected row."""
    feats = np.atleast_2d(np.asarray(features, dtype=float))
    sel = np.atleast_2d(np.asarray(selected, dtype=float))
    if sel.shape[0] == 0:
        raise ValueError("selected set is empty")
    return cKDTree(sel).query(feats, k=1)[0]


def space_filling_score(point, selected, lam=0.0, density=1.0):
    """Minimum feature distance to ``selected`` times ``density ** lam``."""
    d = float(min_distance(np.atleast_2d(point), selected)[0])
    if lam == 0:
        return d
    return d * density ** lam


def standardize(values):
    """Min-max scale to [0, 1]; a constant vector maps to zeros."""
    v = np.asarray(values, dtype=float)
    lo, hi = v.min(), v.max()
    if not hi > lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


@dataclass
class Scores:
    variance: np.ndarray
    distance: np.ndarray
    total: np.ndarray

    def best(self):
        return int(np.argmax(self.total))  # first maximum: lowest index wins


def hybrid_acquisition(variance, distance, alpha):
    """``alpha * std(variance) + (1 - alpha) * std(distance)``."""
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    sv, sd = standardize(variance), standardize(distance)
    return Scores(sv, sd, alpha * sv + (1 - alpha) * sd)


@dataclass
class AcquisitionConfig:
    alpha: float = 0.5
    lam: float = 0.0
    k_neighbors: int = 10
    n_draws: int = 200
    batch: int = 10
    n_initial: int = 20
    max_points: int = 100
    tol: float = 0.8
    threshold: float = 0.05
    strategy: str = "hybrid"
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ConfigurationError("alpha must lie in [0, 1]")
        if self.lam < 0:
            raise ConfigurationError("lambda must be non-negative")
        if self.k_neighbors < 1 or self.batch < 1 or self.n_initial < 1:
            raise ConfigurationError("k_neighbors, batch and n_initial must be >= 1")
        if self.n_draws < 2:
            raise ConfigurationError("need at least 2 posterior draws for scoring")
        if self.max_points < self.n_initial:
            raise ConfigurationError("max_points must be at least n_initial")
        if self.strategy not in ("hybrid", "random"):
            raise ConfigurationError(f"unknown strategy {self.strategy!r}")


class Pool:
    """Candidate rows plus the derivatives acquired so far.

    ``oracle(indices)`` returns derivative rows for pool indices; it is only
    called for rows being moved into the selected set.
    """

    def __init__(self, candidates, oracle, max_degree=2, mode=None):
        if not isinstance(candidates, Dataset):
            candidates = Dataset(candidates)
        self.data = candidates
        self.oracle = oracle
        self.library = build_library(candidates, max_degree, mode)
        self.features = self.library.theta
        self.selected = []
        self.derivatives = {}

    def __len__(self):
        return len(self.data)

    @property
    def remaining(self):
        taken = np.zeros(len(self), dtype=bool)
        taken[self.selected] = True
        return np.flatnonzero(~taken)

    def acquire(self, indices):
        indices = [int(i) for i in indices]
        if set(indices) & set(self.selected):
            raise ValueError("pool rows selected twice")
        values = np.atleast_2d(np.asarray(self.oracle(np.array(indices)), dtype=float))
        if values.shape[0] != len(indices):
            values = values.reshape(len(indices), -1)
        for i, v in zip(indices, values):
            self.derivatives[i] = v
        self.selected.extend(indices)

    def training_set(self):
        idx = np.array(self.selected)
        sub = self.data.subset(idx)
        sub.derivatives = np.array([self.derivatives[i] for i in self.selected])
        return sub, self.library.theta[idx]


@dataclass
class ActiveResult:
    model: object
    history: list
    rounds: list
    selected: list
    converged: bool

    def points_to_reach(self, error_bar):
        """Training-set size of the first fit whose Error Bar is below ``error_bar``."""
        for r in self.rounds:
            if r["error_bar"] is not None and r["error_bar"] < error_bar:
                return r["n_points"]
        return None


def _fit_pool(pool, chain, acq, round_index):
    data, theta = pool.training_set()
    lib = replace(pool.library, theta=theta)
    cfg = replace(chain, seed=int(np.random.SeedSequence([chain.seed, round_index])
                                  .generate_state(1)[0]))
    return fit(data, lib, cfg, acq.threshold)


def select_batch(pool, model, acq, rng, info=None):
    """Greedy within-round picks: distances updated, variances frozen.

    If ``info`` is a dict it receives the raw space-filling score range of
    the round, ``space_filling_min`` and ``space_filling_max``.
    """
    remaining = pool.remaining
    m = min(acq.batch, remaining.size)
    if acq.strategy == "random":
        draws = rng.uniform(size=remaining.size)
        order = np.argsort(-draws, kind="stable")[:m]
        nan = np.full(m, np.nan)
        return [(int(remaining[i]), nan[j], nan[j], float(draws[i]))
                for j, i in enumerate(order)]
    feats = pool.features[remaining]
    if model.samples is not None:
        var = predictive_variance(feats, model.samples, acq.n_draws)
    else:
        var = np.zeros(remaining.size)
    dmin = min_distance(feats, pool.features[pool.selected])
    if acq.lam > 0 and remaining.size > 1:
        dens = pool_density(feats, min(acq.k_neighbors, remaining.size - 1))
        finite = dens[np.isfinite(dens)]
        dens = np.where(np.isfinite(dens), dens, finite.max() if finite.size else 1.0)
        weight = dens ** acq.lam
    else:
        weight = np.ones(remaining.size)
    if info is not None:
        raw = dmin * weight
        info["space_filling_min"] = float(raw.min())
        info["space_filling_max"] = float(raw.max())
    alive = np.ones(remaining.size, dtype=bool)
    picks = []
    for _ in range(m):
        live = np.flatnonzero(alive)
        sc = hybrid_acquisition(var[live], dmin[live] * weight[live], acq.alpha)
        b = sc.best()
        i = live[b]
        picks.append((int(remaining[i]), float(sc.variance[b]), float(sc.distance[b]),
                      float(sc.total[b])))
        alive[i] = False
        step = np.sqrt(((feats - feats[i]) ** 2).sum(axis=1))
        dmin = np.minimum(dmin, step)
    return picks


def active_learning_loop(pool, chain=None, acq=None):
    """Grow the training set until the Error Bar settles or the budget runs out.

    Each round fits on the selected rows, scores the remaining candidates,
    acquires ``batch`` more rows and then compares the round's Error Bar
    with the previous one: it stops when the relative change is below
    ``tol``, when more than ``max_points`` rows are selected, or when the
    pool is exhausted (``converged=False``).
    """
    chain = chain or ChainConfig(method="mala")
    acq = acq or AcquisitionConfig()
    if len(pool) < acq.n_initial + min(acq.batch, 1):
        raise ConfigurationError("pool smaller than the initial design")
    rng = np.random.default_rng(acq.seed)
    init = np.sort(rng.choice(len(pool), size=acq.n_initial, replace=False))
    pool.acquire(init)
    history = [{"round": 0, "pool_index": int(i), "score_variance": np.nan,
                "score_distance": np.nan, "score_total": np.nan,
                "error_bar_after_round": np.nan} for i in init]
    rounds = []
    e_prev = math.inf
    converged = False
    model = None
    r = 0
    while len(pool.selected) <= acq.max_points:
        r += 1
        model = _fit_pool(pool, chain, acq, r)
        e = model.metrics["error_bar"]
        remaining = pool.remaining.size
        if remaining == 0:
            rounds.append(_round_row(r, pool, model, None))
            break
        info = {}
        picks = select_batch(pool, model, acq, rng, info)
        rounds.append({**_round_row(r, pool, model, picks), **info})
        pool.acquire([p[0] for p in picks])
        e_val = math.inf if e is None else e
        for idx, sv, sd, st in picks:
            history.append({"round": r, "pool_index": idx, "score_variance": sv,
                            "score_distance": sd, "score_total": st,
                            "error_bar_after_round": e_val})
        log.info("round %d: fit on %d points, error bar %s", r,
                 rounds[-1]["n_points"], e)
        if e is not None and e > 0 and (math.isinf(acq.tol) or abs(e - e_prev) / e < acq.tol):
            converged = True
            break
        if e == 0:
            converged = True
            break
        e_prev = e_val
        if pool.remaining.size == 0:
            break
    return ActiveResult(model, history, rounds, list(pool.selected), converged)


def _round_row(r, pool, model, picks):
    n_fit = len(pool.selected)
    return {"round": r, "n_points": n_fit, "error_bar": model.metrics["error_bar"],
            "k_active": model.mask.k, "support": model.support()}


# -- benchmark pools -----------------------------------------------------

def lotka_volterra_pool(n_steps=50000, pool_size=10000, noise=0.05, seed=0, dt=5e-3):
    """Randomly subsampled noisy states; derivatives from the clean regular grid."""
    from .features import finite_difference_time
    from .systems import TimeGrid, add_noise, simulate_lotka_volterra

    grid = TimeGrid.uniform(0.0, dt, n_steps)
    clean = simulate_lotka_volterra(grid=grid)
    noisy = add_noise(clean, noise, seed=seed)
    deriv = finite_difference_time(clean.states, grid)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    rows = np.sort(rng.choice(n_steps, size=pool_size, replace=False))
    data = Dataset(noisy.states[rows], coords=grid.times[rows][:, None],
                   provenance=["pool"] * pool_size)
    oracle = ArrayOracle(deriv[rows])
    return Pool(data, oracle)


def fourier_resample(values, n):
    """Band-limited interpolation of periodic rows onto ``n`` equispaced points."""
    values = np.atleast_2d(values)
    m = values.shape[1]
    coef = np.fft.rfft(values, axis=1)
    out = np.zeros((values.shape[0], n // 2 + 1), dtype=complex)
    keep = min(coef.shape[1], out.shape[1])
    out[:, :keep] = coef[:, :keep]
    if m % 2 == 0 and keep == m // 2 + 1:
        out[:, m // 2] *= 0.5  # split the coarse Nyquist mode
    return np.fft.irfft(out, n, axis=1) * (n / m)


def burgers_pool(times=(1.0, 5.0, 8.0), n_x=4000, n_t=1001, t_end=10.0, nu=0.1,
                 noise_sigma=0.1, seed=0, n_solver=512):
    """Three time slices of a fine Burgers solution.

    The PDE is solved spectrally on ``n_solver`` periodic points and
    Fourier-interpolated onto the ``n_x``-point grid.  Library variables use
    finite differences on that grid; the oracle returns the central time
    difference on the ``n_t``-step grid times lognormal(0, ``noise_sigma``)
    noise.
    """
    from .features import finite_difference_space
    from .systems import (Field, SpaceGrid, TimeGrid, burgers_ic, integrate_rk45,
                          spectral_rhs)

    coarse = SpaceGrid(-8.0, 8.0, n_solver, periodic=True)
    space = SpaceGrid(-8.0, 8.0, n_x, periodic=True)
    dt = t_end / (n_t - 1)
    want = sorted({0.0, *(t + s * dt for t in times for s in (-1, 0, 1))})
    grid = TimeGrid(np.array(want))
    rhs = spectral_rhs(coarse, [(-1.0, (1, 1, 0)), (nu, (0, 0, 1))])
    traj = integrate_rk45(rhs, burgers_ic(coarse.points), grid, rtol=1e-6, atol=1e-9)
    fine = fourier_resample(traj.states, n_x)
    row = {round(float(t), 9): i for i, t in enumerate(grid.times)}
    u, ux, uxx, ut, coords = [], [], [], [], []
    for t in times:
        mid = fine[row[round(t, 9)]]
        f = Field(space, TimeGrid(np.array([0.0, 1.0])), np.vstack([mid, mid]))
        gx, gxx = finite_difference_space(f)
        u.append(mid)
        ux.append(gx[0])
        uxx.append(gxx[0])
        ut.append((fine[row[round(t + dt, 9)]] - fine[row[round(t - dt, 9)]]) / (2 * dt))
        coords.append(np.column_stack([np.full(n_x, t), space.points]))
    u = np.concatenate(u)
    rng = np.random.default_rng(seed)
    ut = np.concatenate(ut) * rng.lognormal(0.0, noise_sigma, size=u.size)
    data = Dataset(u[:, None], coords=np.vstack(coords),
                   spatial=np.column_stack([np.concatenate(ux), np.concatenate(uxx)]),
                   provenance=["pool"] * u.size, state_names=("u",))
    return Pool(data, ArrayOracle(ut[:, None]), mode="pde")


class ArrayOracle:
    """Derivative oracle backed by a precomputed array indexed by pool row."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        self.calls = 0

    def __call__(self, indices):
        idx = np.asarray(indices, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= self.values.shape[0]):
            bad = idx[(idx < 0) | (idx >= self.values.shape[0])][0]
            raise KeyError(f"pool row {int(bad)} has no derivative")
        self.calls += idx.size
        return self.values[idx]
