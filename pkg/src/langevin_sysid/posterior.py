"""Regularized-horseshoe posterior over sparse regression coefficients.

The sampled state lives on an unconstrained space: coefficients are raw,
every positive hyperparameter is stored on the log scale and its prior
carries the change-of-variables term.  For an active entry ``i``

    beta_i ~ N(0, lam_i^2 tau^2 c^2 / (c^2 + tau^2 lam_i^2))
    lam_i ~ C+(0, 1),   tau ~ C+(0, tau0),   c^2 ~ InvGamma(nu/2, nu s^2 / 2)

and each state dimension ``j`` has Gaussian observation noise with variance
``sigma2_j``, whose logarithm has a ``N(mean, sd^2)`` prior.

The energy is the negative log density, including normalising constants,
with the likelihood sum rescaled by ``N / |B|`` on a mini-batch ``B``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class HorseshoePrior:
    nu: float = 4.0
    slab_scale: float = 2.0
    tau0: float = 0.1
    noise_log_mean: float = 0.0
    noise_log_sd: float = 1.0

    def __post_init__(self):
        if min(self.nu, self.slab_scale, self.tau0, self.noise_log_sd) <= 0:
            raise ValueError("horseshoe constants must be positive")

    @property
    def c2_shape(self):
        return 0.5 * self.nu

    @property
    def c2_rate(self):
        return 0.5 * self.nu * self.slab_scale ** 2


@dataclass
class HorseshoeHyper:
    log_lambda: np.ndarray
    log_tau: float
    log_c2: float
    prior: HorseshoePrior = HorseshoePrior()


@dataclass
class SamplerState:
    coefficients: np.ndarray
    hyper: HorseshoeHyper
    noise_log_sigma2: np.ndarray


def effective_scale(hyper):
    """Per-entry prior standard deviation ``lambda_tilde * tau``.

    ``lambda_tilde = c lam / sqrt(c^2 + tau^2 lam^2)``, evaluated in log space
    so that extreme scales neither overflow nor lose precision.
    """
    log_lam = np.asarray(hyper.log_lambda, dtype=float)
    log_a = 2.0 * (log_lam + hyper.log_tau)
    log_prec = np.logaddexp(-log_a, -hyper.log_c2)
    return np.exp(-0.5 * log_prec)


def _softplus(x):
    return np.logaddexp(0.0, x)


class HorseshoePosterior:
    """Energy and gradients for ``derivatives ~ theta @ coefficients``.

    Only entries set in ``mask`` (an ``(m, d)`` boolean array) are free; the
    others are held at exactly zero and contribute nothing to the energy.
    The flat parameter vector is laid out as
    ``[beta (k), log_lambda (k), log_tau, log_c2, log_sigma2 (d)]`` with the
    ``k`` active entries in row-major order.
    """

    def __init__(self, theta, derivatives, mask=None, prior=None):
        self.theta = np.ascontiguousarray(theta, dtype=float)
        y = np.asarray(derivatives, dtype=float)
        self.y = y[:, None] if y.ndim == 1 else y
        n, m = self.theta.shape
        if self.y.shape[0] != n:
            raise ValueError("theta and derivatives must have the same rows")
        d = self.y.shape[1]
        if mask is None:
            mask = np.ones((m, d), dtype=bool)
        self.mask = np.asarray(mask, dtype=bool)
        if self.mask.shape != (m, d):
            raise ValueError("mask must be (m, d)")
        self.prior = prior or HorseshoePrior()
        self.n_rows, self.n_terms, self.n_dims = n, m, d
        self.rows, self.cols = np.nonzero(self.mask)
        self.k = self.rows.size
        self.size = 2 * self.k + 2 + d
        # columns that carry at least one active entry
        self._used = np.flatnonzero(self.mask.any(axis=1))
        self._theta_used = np.ascontiguousarray(self.theta[:, self._used])

    # -- layout ---------------------------------------------------------
    @property
    def slices(self):
        k = self.k
        return {
            "beta": slice(0, k),
            "log_lambda": slice(k, 2 * k),
            "log_tau": 2 * k,
            "log_c2": 2 * k + 1,
            "log_sigma2": slice(2 * k + 2, 2 * k + 2 + self.n_dims),
        }

    def pack(self, state):
        lam = np.asarray(state.hyper.log_lambda, dtype=float)
        return np.concatenate([
            np.asarray(state.coefficients, dtype=float)[self.rows, self.cols],
            lam[self.rows, self.cols],
            [state.hyper.log_tau, state.hyper.log_c2],
            np.asarray(state.noise_log_sigma2, dtype=float).reshape(-1),
        ])

    def unpack(self, x):
        s = self.slices
        coef = np.zeros((self.n_terms, self.n_dims))
        coef[self.rows, self.cols] = x[s["beta"]]
        lam = np.zeros((self.n_terms, self.n_dims))
        lam[self.rows, self.cols] = x[s["log_lambda"]]
        hyper = HorseshoeHyper(lam, float(x[s["log_tau"]]), float(x[s["log_c2"]]),
                               self.prior)
        return SamplerState(coef, hyper, np.array(x[s["log_sigma2"]], dtype=float))

    def coefficient_matrix(self, x):
        coef = np.zeros((self.n_terms, self.n_dims))
        coef[self.rows, self.cols] = x[: self.k]
        return coef

    # -- energy ---------------------------------------------------------
    def _rows(self, batch):
        if batch is None:
            return self._theta_used, self.y, 1.0
        batch = np.asarray(batch)
        if batch.size == 0:
            raise ValueError("mini-batch must be non-empty")
        return self._theta_used[batch], self.y[batch], self.n_rows / batch.size

    def prior_energy_grad(self, x):
        """Negative log prior (with log-scale Jacobians) and its gradient."""
        pr = self.prior
        s = self.slices
        k = self.k
        beta = x[s["beta"]]
        phi = x[s["log_lambda"]]
        psi_tau = x[s["log_tau"]]
        psi_c = x[s["log_c2"]]
        omega = x[s["log_sigma2"]]
        g = np.zeros_like(x)

        # coefficient | scales: log-precision L = logaddexp(-2(phi+psi_tau), -psi_c)
        z = -2.0 * (phi + psi_tau)
        log_prec = np.logaddexp(z, -psi_c)
        w = expit(z + psi_c)  # dL/dz share
        prec = np.exp(log_prec)
        e = np.sum(0.5 * beta ** 2 * prec - 0.5 * log_prec) + 0.5 * k * LOG_2PI
        dl = 0.5 * beta ** 2 * prec - 0.5  # dE/dL
        g[s["beta"]] = beta * prec
        g[s["log_lambda"]] = -2.0 * w * dl
        g_tau = np.sum(-2.0 * w * dl)
        g_c = np.sum(-(1.0 - w) * dl)

        # lambda ~ C+(0,1) on log scale
        e += np.sum(_softplus(2.0 * phi) - phi) + k * np.log(0.5 * np.pi)
        g[s["log_lambda"]] += 2.0 * expit(2.0 * phi) - 1.0

        # tau ~ C+(0, tau0) on log scale
        u = 2.0 * (psi_tau - np.log(pr.tau0))
        e += _softplus(u) - psi_tau + np.log(0.5 * np.pi * pr.tau0)
        g_tau += 2.0 * expit(u) - 1.0

        # c^2 ~ InvGamma(a, b) on log scale
        a, b = pr.c2_shape, pr.c2_rate
        e += a * psi_c + b * np.exp(-psi_c) - a * np.log(b) + gammaln(a)
        g_c += a - b * np.exp(-psi_c)

        # log sigma^2 ~ N(mean, sd^2)
        dz = (omega - pr.noise_log_mean) / pr.noise_log_sd
        e += np.sum(0.5 * dz ** 2) + omega.size * (np.log(pr.noise_log_sd) + 0.5 * LOG_2PI)
        g[s["log_sigma2"]] = dz / pr.noise_log_sd

        g[s["log_tau"]] = g_tau
        g[s["log_c2"]] = g_c
        return float(e), g

    def likelihood_energy_grad(self, x, batch=None):
        """Rescaled Gaussian negative log likelihood on ``batch`` (all rows if None)."""
        theta, y, scale = self._rows(batch)
        s = self.slices
        omega = x[s["log_sigma2"]]
        coef = self.coefficient_matrix(x)
        used = self._used
        resid = y - theta @ coef[used]
        inv_var = np.exp(-omega)
        sq = np.einsum("ij,ij->j", resid, resid)
        n_b = theta.shape[0]
        e = scale * float(np.sum(0.5 * sq * inv_var + 0.5 * n_b * (omega + LOG_2PI)))
        g = np.zeros_like(x)
        gc = np.zeros((self.n_terms, self.n_dims))
        gc[used] = -scale * (theta.T @ resid) * inv_var
        g[s["beta"]] = gc[self.rows, self.cols]
        g[s["log_sigma2"]] = scale * (-0.5 * sq * inv_var + 0.5 * n_b)
        return e, g

    def energy_grad(self, x, batch=None):
        e0, g0 = self.prior_energy_grad(x)
        e1, g1 = self.likelihood_energy_grad(x, batch)
        return e0 + e1, g0 + g1

    def energy_flat(self, x, batch=None):
        return self.energy_grad(x, batch)[0]

    def grad_flat(self, x, batch=None):
        return self.energy_grad(x, batch)[1]

    # sampler-facing names
    energy_fn = energy_flat
    grad_fn = grad_flat

    # -- structured API --------------------------------------------------
    def energy(self, state, batch=None):
        return self.energy_flat(self.pack(state), batch)

    def grad_energy(self, state, batch=None):
        """Gradient with the same structure as ``state``; masked entries are 0."""
        return self.unpack(self.grad_flat(self.pack(state), batch))

    # -- initialisation and preconditioning ------------------------------
    def ridge_coefficients(self, ridge=1e-6):
        coef = np.zeros((self.n_terms, self.n_dims))
        for j in range(self.n_dims):
            act = np.flatnonzero(self.mask[:, j])
            if act.size == 0:
                continue
            t = self.theta[:, act]
            gram = t.T @ t
            gram[np.diag_indices_from(gram)] += ridge * max(1.0, np.trace(gram) / act.size)
            coef[act, j] = np.linalg.solve(gram, t.T @ self.y[:, j])
        return coef

    def initial_state(self, ridge=1e-6):
        """Ridge solution for the coefficients, prior medians for the scales.

        The noise variance starts at the ridge residual variance (floored),
        which is where the likelihood puts essentially all its mass.
        """
        coef = self.ridge_coefficients(ridge)
        resid = self.y - self.theta @ coef
        sigma2 = np.maximum(np.mean(resid ** 2, axis=0), 1e-12 * max(1.0, np.mean(self.y ** 2)) + 1e-300)
        pr = self.prior
        # InvGamma median has no closed form; use the mode-free scipy value
        from scipy.stats import invgamma
        c2_med = invgamma(pr.c2_shape, scale=pr.c2_rate).median()
        hyper = HorseshoeHyper(np.zeros((self.n_terms, self.n_dims)),
                               float(np.log(pr.tau0)), float(np.log(c2_med)), pr)
        # lambda for strong coefficients: place the local scale near |beta|
        lam = hyper.log_lambda
        scale = np.abs(coef[self.rows, self.cols]) / pr.tau0
        lam[self.rows, self.cols] = np.log(np.maximum(scale, 1.0))
        return SamplerState(coef, hyper, np.log(sigma2))

    def preconditioner(self, state):
        """Constant SPD metric for Langevin moves around ``state``.

        Coefficient blocks get the inverse of the likelihood-plus-prior
        curvature per state dimension; every log-scale hyperparameter gets
        the inverse of an order-of-magnitude curvature estimate.
        """
        x = self.pack(state)
        s = self.slices
        k = self.k
        metric = np.zeros((self.size, self.size))
        inv_var = np.exp(-x[s["log_sigma2"]])
        sd = effective_scale(state.hyper)
        for j in range(self.n_dims):
            idx = np.flatnonzero(self.cols == j)
            if idx.size == 0:
                continue
            act = self.rows[idx]
            t = self.theta[:, act]
            h = (t.T @ t) * inv_var[j]
            h[np.diag_indices_from(h)] += 1.0 / sd[act, j] ** 2
            metric[np.ix_(idx, idx)] = np.linalg.inv(h)
        beta = x[s["beta"]]
        prior_sd = sd[self.rows, self.cols]
        # curvature of the coefficient prior term in log lambda, plus the C+ term
        lam_curv = 1.0 + 2.0 * beta ** 2 / prior_sd ** 2
        metric[np.arange(k, 2 * k), np.arange(k, 2 * k)] = 1.0 / np.minimum(lam_curv, 1e6)
        metric[2 * k, 2 * k] = 1.0 / (1.0 + np.sum(np.minimum(lam_curv, 1e6)))
        metric[2 * k + 1, 2 * k + 1] = 1.0
        for j in range(self.n_dims):
            metric[2 * k + 2 + j, 2 * k + 2 + j] = 2.0 / self.n_rows
        return metric
