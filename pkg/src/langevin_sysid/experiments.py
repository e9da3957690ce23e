"""Ready-made benchmark problems: data, library, ground truth and defaults."""

from dataclasses import dataclass

import numpy as np

from .features import (build_library, dataset_from_field, dataset_from_trajectory,
                       finite_difference_time)
from .systems import (SpaceGrid, TimeGrid, add_noise, burgers_ic, simulate_burgers_spectral,
                      simulate_lorenz, simulate_lotka_volterra,
                      solve_convection_diffusion_analytic, GaussianPulse)

SYSTEMS = ("lotka_volterra", "lorenz", "burgers", "convection_diffusion")
DEFAULT_THRESHOLDS = {"lotka_volterra": 0.05, "lorenz": 0.5, "burgers": 0.05,
                      "convection_diffusion": 0.5}
DEFAULT_NOISE = {"lotka_volterra": 0.05, "lorenz": 0.05, "burgers": 0.002,
                 "convection_diffusion": 0.001}


@dataclass
class Problem:
    """Everything needed to fit and score one benchmark."""

    name: str
    dataset: object
    library: object
    truth: object          # noise-free Trajectory or Field on the training grid
    noisy: object
    ic: object
    grid: TimeGrid
    space: SpaceGrid = None
    true_coefficients: np.ndarray = None
    threshold: float = 0.05
    test_truth: object = None
    test_grid: TimeGrid = None


def _true_matrix(library, d, entries):
    coef = np.zeros((library.n_terms, d))
    names = library.names
    for (basis, j), value in entries.items():
        coef[names.index(basis), j] = value
    return coef


def _ode_dataset(clean, noisy, derivative_source):
    if derivative_source == "clean":
        deriv = finite_difference_time(clean.states, clean.grid)
    elif derivative_source == "noisy":
        deriv = None
    else:
        raise ValueError("derivative_source must be 'clean' or 'noisy'")
    return dataset_from_trajectory(noisy, derivatives=deriv)


def lotka_volterra_problem(noise=0.05, seed=0, n=5000, dt=5e-3, derivative_source="clean",
                           alpha=1.0, beta=0.1, delta=1.5, gamma=0.075, ic=(10.0, 5.0)):
    """Predator-prey benchmark on ``n`` steps of size ``dt``.

    States carry Gaussian noise of ``noise * std`` per column.  With
    ``derivative_source="clean"`` the time derivatives come from the
    noise-free series; ``"noisy"`` differentiates the noisy states.
    """
    grid = TimeGrid.uniform(0.0, dt, n)
    clean = simulate_lotka_volterra(alpha, beta, delta, gamma, ic, grid)
    noisy = add_noise(clean, noise, seed=seed)
    data = _ode_dataset(clean, noisy, derivative_source)
    lib = build_library(data, 2)
    true = _true_matrix(lib, 2, {("x", 0): alpha, ("xy", 0): -beta,
                                 ("y", 1): -delta, ("xy", 1): gamma})
    return Problem("lotka_volterra", data, lib, clean, noisy, np.array(ic, float), grid,
                   true_coefficients=true, threshold=DEFAULT_THRESHOLDS["lotka_volterra"])


def lorenz_problem(noise=0.05, seed=0, n_train=3000, n_test=2500, dt=1e-3,
                   derivative_source="clean", sigma=10.0, rho=28.0, beta=8.0 / 3.0,
                   ic=(-8.0, 8.0, 27.0)):
    """Lorenz benchmark: train on the first ``n_train`` steps, test on the next ``n_test``."""
    full_grid = TimeGrid.uniform(0.0, dt, n_train + n_test)
    full = simulate_lorenz(sigma, rho, beta, ic, full_grid)
    noisy_full = add_noise(full, noise, seed=seed)
    train_grid = full_grid.subset(slice(0, n_train))
    clean = type(full)(train_grid, full.states[:n_train])
    noisy = type(full)(train_grid, noisy_full.states[:n_train])
    if derivative_source == "clean":
        deriv = finite_difference_time(full.states, full_grid)[:n_train]
        data = dataset_from_trajectory(noisy, derivatives=deriv)
    else:
        data = _ode_dataset(clean, noisy, derivative_source)
    lib = build_library(data, 2)
    true = _true_matrix(lib, 3, {("x", 0): -sigma, ("y", 0): sigma,
                                 ("x", 1): rho, ("y", 1): -1.0, ("xz", 1): -1.0,
                                 ("z", 2): -beta, ("xy", 2): 1.0})
    return Problem("lorenz", data, lib, clean, noisy, np.array(ic, float), train_grid,
                   true_coefficients=true, threshold=DEFAULT_THRESHOLDS["lorenz"],
                   test_truth=full, test_grid=full_grid)


def _pde_problem(name, clean, noise, seed, ic, true_entries):
    noisy = add_noise(clean, noise, seed=seed)
    data = dataset_from_field(noisy)
    lib = build_library(data, 2, mode="pde")
    true = _true_matrix(lib, 1, true_entries)
    return Problem(name, data, lib, clean, noisy, ic, clean.time, clean.space,
                   true_coefficients=true, threshold=DEFAULT_THRESHOLDS[name])


def burgers_problem(noise=0.002, seed=0, nu=0.1, n_x=256, n_t=101, t_end=10.0):
    """Viscous Burgers on a periodic ``[-8, 8)`` grid; derivatives from the noisy field."""
    space = SpaceGrid(-8.0, 8.0, n_x, periodic=True)
    time = TimeGrid.linspace(0.0, t_end, n_t)
    clean = simulate_burgers_spectral(nu, space, time, burgers_ic)
    return _pde_problem("burgers", clean, noise, seed, burgers_ic(space.points),
                        {("u_xx", 0): nu, ("uu_x", 0): -1.0})


def convection_diffusion_problem(noise=0.001, seed=0, c=1.0, D=1.0, n_x=201, n_t=501,
                                 t_end=5.0, pulse=GaussianPulse()):
    """Closed-form Gaussian pulse on ``[0, 20]``; derivatives from the noisy field."""
    space = SpaceGrid(0.0, 20.0, n_x)
    time = TimeGrid.linspace(0.0, t_end, n_t)
    clean = solve_convection_diffusion_analytic(c, D, space, time, pulse)
    return _pde_problem("convection_diffusion", clean, noise, seed, clean.values[0],
                        {("u_x", 0): -c, ("u_xx", 0): D})


def make_problem(system, **kwargs):
    builders = {"lotka_volterra": lotka_volterra_problem, "lorenz": lorenz_problem,
                "burgers": burgers_problem,
                "convection_diffusion": convection_diffusion_problem}
    if system not in builders:
        raise ValueError(f"unknown system {system!r}")
    return builders[system](**kwargs)
