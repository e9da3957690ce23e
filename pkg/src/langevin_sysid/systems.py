"""Reference simulators for the benchmark systems, plus noise injection.

ODE trajectories are integrated with adaptive RK4(5) (scipy's ``RK45``) and
sampled on the requested grid through dense output.  Burgers' equation is
reduced to an ODE system by Fourier differentiation in space; the
convection-diffusion equation uses its closed-form Gaussian solution.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import solve_ivp

from .exceptions import InvalidModelError

DIVERGENCE_BOUND = 1e6
DEFAULT_RTOL = 1e-3
DEFAULT_ATOL = 1e-6


@dataclass(frozen=True)
class TimeGrid:
    """Sorted sample times.  Use :meth:`uniform` for regular grids."""

    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        if t.size < 2:
            raise ValueError("a time grid needs at least 2 points")
        if not np.all(np.isfinite(t)) or np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be finite and strictly increasing")
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, t0, dt, n):
        if dt <= 0:
            raise ValueError("dt must be positive")
        if n < 2:
            raise ValueError("a time grid needs at least 2 points")
        return cls(t0 + dt * np.arange(n))

    @classmethod
    def linspace(cls, t0, t1, n):
        return cls(np.linspace(t0, t1, n))

    def __len__(self):
        return self.times.size

    @property
    def t0(self):
        return float(self.times[0])

    @property
    def dt(self):
        """Spacing of a uniform grid (``None`` if irregular)."""
        steps = np.diff(self.times)
        if np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            return float(steps[0])
        return None

    @property
    def is_uniform(self):
        return self.dt is not None

    def subset(self, index):
        return TimeGrid(self.times[index])


@dataclass(frozen=True)
class SpaceGrid:
    """Uniform 1-D spatial grid.

    With ``periodic=True`` the right end point is omitted so that the grid
    tiles the period ``x_max - x_min`` (the layout FFT differentiation needs).
    """

    x_min: float
    x_max: float
    n_x: int
    periodic: bool = False

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be smaller than x_max")
        if self.n_x < 3:
            raise ValueError("a space grid needs at least 3 points")

    @property
    def points(self):
        if self.periodic:
            return self.x_min + self.dx * np.arange(self.n_x)
        return np.linspace(self.x_min, self.x_max, self.n_x)

    @property
    def dx(self):
        if self.periodic:
            return (self.x_max - self.x_min) / self.n_x
        return (self.x_max - self.x_min) / (self.n_x - 1)

    @property
    def length(self):
        return self.x_max - self.x_min


@dataclass
class Trajectory:
    """States sampled on a time grid, one row per time."""

    grid: TimeGrid
    states: np.ndarray
    diverged: bool = False

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if self.states.shape[0] > len(self.grid):
            raise ValueError("more state rows than grid points")
        if not self.diverged and self.states.shape[0] != len(self.grid):
            raise ValueError("state rows must match grid length")

    @property
    def times(self):
        return self.grid.times[: self.states.shape[0]]

    @property
    def dim(self):
        return self.states.shape[1]


@dataclass
class Field:
    """Scalar field ``values[i, j] = u(time[i], x[j])``."""

    space: SpaceGrid
    time: TimeGrid
    values: np.ndarray
    diverged: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n_t = len(self.time)
        if self.values.ndim != 2 or self.values.shape[1] != self.space.n_x:
            raise ValueError("field values must be (n_t, n_x)")
        if self.values.shape[0] > n_t or (
            not self.diverged and self.values.shape[0] != n_t
        ):
            raise ValueError("field rows must match the time grid")


def _check_rhs(rhs, t0, ic):
    try:
        f0 = np.asarray(rhs(t0, ic), dtype=float)
    except (FloatingPointError, OverflowError, ZeroDivisionError) as exc:
        raise InvalidModelError(f"right-hand side failed at the initial state: {exc}")
    if f0.shape != ic.shape or not np.all(np.isfinite(f0)):
        raise InvalidModelError("right-hand side is not finite at the initial state")


def integrate_rk45(rhs, ic, grid, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL,
                   bound=DIVERGENCE_BOUND, method="RK45"):
    """Integrate ``du/dt = rhs(t, u)`` and sample the solution on ``grid``.

    If any state exceeds ``bound`` in magnitude (or turns non-finite), the
    integration stops and the trajectory is returned truncated with
    ``diverged=True``.
    """
    if grid is None or len(grid) == 0:
        raise ValueError("empty time grid")
    ic = np.atleast_1d(np.asarray(ic, dtype=float))
    if not np.all(np.isfinite(ic)):
        raise ValueError("initial condition must be finite")
    if rtol <= 0 or atol <= 0:
        raise ValueError("tolerances must be positive")
    _check_rhs(rhs, grid.t0, ic)

    def guarded(t, u):
        du = rhs(t, u)
        if not np.all(np.isfinite(du)):
            # non-finite derivative: push the event below to fire
            return np.full_like(u, bound)
        return du

    def blowup(t, u):
        if not np.all(np.isfinite(u)):
            return -1.0
        return bound - np.max(np.abs(u))

    blowup.terminal = True

    with np.errstate(over="ignore", invalid="ignore"):
        sol = solve_ivp(guarded, (grid.times[0], grid.times[-1]), ic,
                        method=method, t_eval=grid.times, rtol=rtol,
                        atol=atol, events=blowup)
    states = sol.y.T
    keep = np.all(np.isfinite(states), axis=1) & (
        np.max(np.abs(states), axis=1, initial=0.0) <= bound)
    n_ok = int(np.argmin(keep)) if not keep.all() else states.shape[0]
    states = states[:n_ok]
    diverged = n_ok < len(grid)
    return Trajectory(grid, states.reshape(n_ok, ic.size), diverged=diverged)


def lotka_volterra_rhs(alpha, beta, delta, gamma):
    def rhs(t, u):
        x, y = u
        return np.array([alpha * x - beta * x * y, -delta * y + gamma * x * y])
    return rhs


def lorenz_rhs(sigma, rho, beta):
    def rhs(t, u):
        x, y, z = u
        return np.array([sigma * (y - x), x * (rho - z) - y, x * y - beta * z])
    return rhs


def simulate_lotka_volterra(alpha=1.0, beta=0.1, delta=1.5, gamma=0.075,
                            ic=(10.0, 5.0), grid=None, **kwargs):
    """Predator-prey system ``x' = alpha x - beta xy``, ``y' = -delta y + gamma xy``."""
    if grid is None:
        grid = TimeGrid.uniform(0.0, 5e-3, 5000)
    return integrate_rk45(lotka_volterra_rhs(alpha, beta, delta, gamma), ic,
                          grid, **kwargs)


def simulate_lorenz(sigma=10.0, rho=28.0, beta=8.0 / 3.0, ic=(-8.0, 8.0, 27.0),
                    grid=None, **kwargs):
    if grid is None:
        grid = TimeGrid.uniform(0.0, 1e-3, 5001)
    return integrate_rk45(lorenz_rhs(sigma, rho, beta), ic, grid, **kwargs)


def wavenumbers(space):
    """Angular wavenumbers matching ``numpy.fft.rfft`` on a periodic grid."""
    return 2.0 * np.pi * np.fft.rfftfreq(space.n_x, d=space.dx)


def dealias_mask(n_x):
    """2/3-rule mask over rfft modes."""
    k_index = np.arange(n_x // 2 + 1)
    return k_index <= (n_x // 2) * 2 // 3


def spectral_rhs(space, terms):
    """Build ``du/dt = sum_k coef_k * u^a u_x^b u_xx^c`` with FFT derivatives.

    ``terms`` is a list of ``(coef, (a, b, c))``.  Products are formed from
    2/3-dealiased fields and the result is dealiased again.
    """
    if not space.periodic:
        raise ValueError("spectral differentiation needs a periodic SpaceGrid")
    k = wavenumbers(space)
    mask = dealias_mask(space.n_x)
    n = space.n_x
    ik = 1j * k
    k2 = k ** 2
    linear = {}
    nonlinear = []
    for coef, exps in terms:
        exps = tuple(int(e) for e in exps)
        if coef == 0:
            continue
        if sum(exps) == 1:
            linear[exps] = linear.get(exps, 0.0) + coef
        else:
            nonlinear.append((coef, exps))
    lin_hat = np.zeros(k.size, dtype=complex)
    for exps, coef in linear.items():
        if exps == (1, 0, 0):
            lin_hat += coef
        elif exps == (0, 1, 0):
            lin_hat += coef * ik
        else:
            lin_hat += -coef * k2
    const = sum(c for c, e in nonlinear if e == (0, 0, 0))
    nonlinear = [(c, e) for c, e in nonlinear if e != (0, 0, 0)]

    def rhs(t, u):
        u_hat = np.fft.rfft(u)
        out_hat = lin_hat * u_hat
        if nonlinear:
            ud_hat = u_hat * mask
            u_d = np.fft.irfft(ud_hat, n)
            ux_d = np.fft.irfft(ik * ud_hat, n)
            uxx_d = np.fft.irfft(-k2 * ud_hat, n)
            prod = np.zeros(n)
            for coef, (a, b, c) in nonlinear:
                prod += coef * u_d ** a * ux_d ** b * uxx_d ** c
            out_hat += np.fft.rfft(prod) * mask
        out = np.fft.irfft(out_hat, n)
        if const:
            out += const
        return out

    return rhs


def simulate_burgers_spectral(nu=0.1, space=None, time=None, ic=None,
                              rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL, method="RK45"):
    """Viscous Burgers ``u_t = -u u_x + nu u_xx`` on a periodic domain."""
    if nu < 0:
        raise ValueError("viscosity must be non-negative")
    if space is None:
        space = SpaceGrid(-8.0, 8.0, 256, periodic=True)
    if time is None:
        time = TimeGrid.linspace(0.0, 10.0, 101)
    if ic is None:
        ic = burgers_ic
    rhs = spectral_rhs(space, [(-1.0, (1, 1, 0)), (nu, (0, 0, 1))])
    u0 = np.asarray(ic(space.points), dtype=float)
    traj = integrate_rk45(rhs, u0, time, rtol=rtol, atol=atol, method=method)
    return Field(space, time, traj.states, diverged=traj.diverged)


def burgers_ic(x):
    return np.exp(-((x - 3.0) ** 2) / 2.0)


@dataclass(frozen=True)
class GaussianPulse:
    amplitude: float = 1.0
    center: float = 5.0
    width: float = 1.0


def solve_convection_diffusion_analytic(c=1.0, D=1.0, space=None, time=None,
                                        ic=GaussianPulse()):
    """Closed-form transport of a Gaussian pulse under ``u_t + c u_x = D u_xx``."""
    if D <= 0:
        raise ValueError("diffusivity must be positive")
    if ic.width <= 0:
        raise ValueError("pulse width must be positive")
    if space is None:
        space = SpaceGrid(0.0, 20.0, 201)
    if time is None:
        time = TimeGrid.linspace(0.0, 5.0, 501)
    x = space.points[None, :]
    t = time.times[:, None]
    var = ic.width ** 2 + 2.0 * D * t
    values = (ic.amplitude * ic.width / np.sqrt(var)
              * np.exp(-((x - ic.center - c * t) ** 2) / (2.0 * var)))
    return Field(space, time, values)


def add_noise(data, p, distribution="gaussian", seed=None, mu=0.0, sigma=0.1):
    """Return a noisy copy of a Trajectory, Field or array.

    ``gaussian``: additive zero-mean noise with standard deviation
    ``p * std(column)`` per state dimension (a Field counts as one dimension).
    ``lognormal``: multiplicative ``exp(N(mu, sigma))`` noise; ``p`` is ignored
    except that ``p == 0`` disables it.
    """
    if p < 0:
        raise ValueError("noise fraction must be non-negative")
    if isinstance(data, Trajectory):
        values = data.states
    elif isinstance(data, Field):
        values = data.values
    else:
        values = np.asarray(data, dtype=float)
    if p == 0:
        noisy = values.copy()
    else:
        rng = np.random.default_rng(seed)
        if distribution == "gaussian":
            if isinstance(data, Field):
                scale = p * np.std(values)
            elif values.ndim == 1:
                scale = p * np.std(values)
            else:
                scale = p * np.std(values, axis=0)
            noisy = values + rng.standard_normal(values.shape) * scale
        elif distribution == "lognormal":
            noisy = values * rng.lognormal(mu, sigma, size=values.shape)
        else:
            raise ValueError(f"unknown noise distribution {distribution!r}")
    if isinstance(data, Trajectory):
        return replace(data, states=noisy)
    if isinstance(data, Field):
        return replace(data, values=noisy)
    return noisy
