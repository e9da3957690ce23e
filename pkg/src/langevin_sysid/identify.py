"""Sequential thresholding: sample, drop small coefficients, resample."""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ChainFailure, InsufficientDataError
from .posterior import HorseshoePosterior, HorseshoePrior
from .samplers import ChainConfig, PosteriorSamples, run_chain

log = logging.getLogger(__name__)


@dataclass
class SupportMask:
    """Boolean ``(m, d)`` inclusion matrix."""

    active: np.ndarray

    def __post_init__(self):
        self.active = np.array(self.active, dtype=bool)
        if self.active.ndim != 2:
            raise ValueError("support mask must be two-dimensional")

    @classmethod
    def full(cls, m, d):
        return cls(np.ones((m, d), dtype=bool))

    @property
    def shape(self):
        return self.active.shape

    @property
    def k(self):
        return int(self.active.sum())

    def unidentifiable(self):
        """State dimensions left without any active entry."""
        return [int(j) for j in np.flatnonzero(~self.active.any(axis=0))]

    def __eq__(self, other):
        other = other.active if isinstance(other, SupportMask) else np.asarray(other)
        return self.active.shape == other.shape and bool(np.all(self.active == other))

    def terms(self, names, state_names):
        """``{state_name: [basis names]}`` for the active entries."""
        return {state_names[j]: [names[i] for i in np.flatnonzero(self.active[:, j])]
                for j in range(self.active.shape[1])}


def _coefficient_draws(samples):
    if isinstance(samples, PosteriorSamples):
        draws = samples.coefficients if samples.coefficients is not None else samples.draws
    else:
        draws = samples
    draws = np.asarray(draws, dtype=float)
    if draws.shape[0] == 0:
        raise ValueError("no draws to summarise")
    return draws


def mode_estimate(samples):
    """Per-entry posterior mean of the retained draws."""
    draws = _coefficient_draws(samples)
    # shifted by the first draw so identical draws give that draw back exactly
    return draws[0] + (draws - draws[0]).mean(axis=0)


def threshold_support(modes, c, mask=None):
    """Keep entries that are active and whose ``|mode| >= c``."""
    if c < 0:
        raise ValueError("threshold must be non-negative")
    modes = np.asarray(modes, dtype=float)
    current = np.ones(modes.shape, bool) if mask is None else (
        mask.active if isinstance(mask, SupportMask) else np.asarray(mask, bool))
    return SupportMask(current & (np.abs(modes) >= c))


@dataclass
class IdentifiedModel:
    mask: SupportMask
    names: list
    state_names: tuple
    coefficients: np.ndarray
    summary: dict
    samples: PosteriorSamples
    metrics: dict
    provenance: dict
    converged: bool = True
    rounds: list = field(default_factory=list)
    descriptors: list = None

    @property
    def unidentifiable(self):
        return self.mask.unidentifiable()

    @property
    def identifiable(self):
        return not self.unidentifiable

    def support(self):
        return self.mask.terms(self.names, self.state_names)

    def coefficient_draws(self):
        if self.samples is None:
            return np.zeros((0,) + self.mask.shape)
        return self.samples.coefficients


def summarize(draws, mask, names, state_names):
    """Mode, standard deviation and central 95% interval per active entry."""
    out = {}
    modes = mode_estimate(draws)
    for i, j in zip(*np.nonzero(mask.active)):
        col = draws[:, i, j]
        out[(names[i], state_names[j])] = {
            "mode": float(modes[i, j]),
            "std": float(col.std(ddof=1)) if col.size > 1 else 0.0,
            "q025": float(np.quantile(col, 0.025)),
            "q975": float(np.quantile(col, 0.975)),
        }
    return out


def round_seed(seed, mask):
    """Chain seed for a sampling round, a function of the master seed and the mask.

    Identical masks always get identical chains, so a fit restarted from
    its own fixpoint repeats the final round exactly.
    """
    bits = np.packbits(np.asarray(mask, dtype=bool).ravel()).tolist()
    ss = np.random.SeedSequence([int(seed), len(bits), *bits])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def sample_support(theta, derivatives, mask, config, prior=None, precondition=True):
    """One sampling round on a fixed support; returns ``PosteriorSamples``."""
    post = HorseshoePosterior(theta, derivatives, mask.active, prior)
    init = post.initial_state()
    metric = post.preconditioner(init) if precondition else None
    cfg = replace(config, seed=round_seed(config.seed, mask.active))
    samples = run_chain(cfg, post, post.pack(init), metric)
    k = post.k
    coefs = np.zeros((len(samples), post.n_terms, post.n_dims))
    coefs[:, post.rows, post.cols] = samples.draws[:, :k]
    samples.coefficients = coefs
    samples.diagnostics["round_seed"] = cfg.seed
    samples.diagnostics["k_active"] = k
    return samples


def fit(dataset, library, config=None, threshold=0.05, max_outer=10, prior=None,
        initial_mask=None, precondition=True, cache=None):
    """Alternate posterior sampling and thresholding until the support is stable.

    Each round restarts from the ridge solution on the current support.  The
    returned model carries the last round's draws; ``converged`` is False when
    ``max_outer`` rounds ran out while the mask was still shrinking.
    ``cache`` (a dict) reuses sampling rounds across calls on the same data.
    """
    from .evaluate import error_bar

    if dataset.derivatives is None:
        raise InsufficientDataError("fit needs time derivatives on the dataset")
    config = config or ChainConfig()
    prior = prior or HorseshoePrior()
    theta = library.theta
    y = dataset.derivatives
    m, d = theta.shape[1], y.shape[1]
    mask = SupportMask.full(m, d) if initial_mask is None else SupportMask(
        initial_mask.active if isinstance(initial_mask, SupportMask) else initial_mask)
    if mask.shape != (m, d):
        raise ValueError("initial mask does not match the library")

    samples = None
    converged = False
    rounds = []
    for r in range(max_outer):
        if mask.k == 0:
            converged = True
            break
        try:
            key = mask.active.tobytes()
            if cache is not None and key in cache:
                samples = cache[key]
            else:
                samples = sample_support(theta, y, mask, config, prior, precondition)
                if cache is not None:
                    cache[key] = samples
            sampled_mask = mask
        except ChainFailure as exc:
            exc.round_index = r
            raise
        modes = mode_estimate(samples)
        new = threshold_support(modes, threshold, mask)
        rounds.append({"round": r, "k_active": mask.k, "k_kept": new.k,
                       "acceptance_rate": samples.diagnostics.get("acceptance_rate"),
                       "swap_accepts": samples.diagnostics.get("swap_accepts")})
        log.info("round %d: %d active -> %d kept", r, mask.k, new.k)
        if new == mask:
            converged = True
            break
        mask = new

    names = library.names
    state_names = tuple(dataset.state_names)
    if mask.k == 0 or samples is None:
        samples = None
        coef = np.zeros((m, d))
        summary = {}
        eb = None
    else:
        # out of rounds right after a shrink: report the support that was sampled
        mask = sampled_mask
        coef = np.where(mask.active, mode_estimate(samples), 0.0)
        summary = summarize(samples.coefficients, mask, names, state_names)
        eb = error_bar(samples, mask)
    metrics = {"error_bar": eb, "mse": None, "aic": None, "k_active": mask.k,
               "n_points": int(theta.shape[0]), "dims": int(d)}
    provenance = {"chain": config.to_dict(), "threshold": float(threshold),
                  "seed": config.seed, "max_outer": max_outer,
                  "prior": {"nu": prior.nu, "slab_scale": prior.slab_scale,
                            "tau0": prior.tau0}}
    return IdentifiedModel(mask, names, state_names, coef, summary, samples, metrics,
                           provenance, converged, rounds, list(library.descriptors))
