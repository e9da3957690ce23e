"""Finite-difference derivatives and polynomial candidate libraries."""

from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from .exceptions import InsufficientDataError
from .systems import Field, TimeGrid

PDE_VARIABLES = ("u", "u_x", "u_xx")


def default_state_names(d):
    if d <= 3:
        return ("x", "y", "z")[:d]
    return tuple(f"x{i + 1}" for i in range(d))


@dataclass(frozen=True)
class BasisDescriptor:
    """A monomial ``prod_k var_k ** exponents[k]``."""

    exponents: tuple
    variables: tuple
    kind: str = "state"

    @property
    def degree(self):
        return sum(self.exponents)

    @property
    def name(self):
        if self.degree == 0:
            return "1"
        parts = []
        for var, p in zip(self.variables, self.exponents):
            if p == 1:
                parts.append(var)
            elif p > 1:
                parts.append(f"{var}^{p}")
        return "".join(parts)

    def evaluate(self, values):
        values = np.atleast_2d(values)
        out = np.ones(values.shape[0])
        for k, p in enumerate(self.exponents):
            if p:
                out = out * values[:, k] ** p
        return out


def monomial_descriptors(variables, max_degree, kind="state"):
    """All monomials of total degree <= max_degree in graded-lex order."""
    if max_degree < 0:
        raise ValueError("max_degree must be non-negative")
    d = len(variables)
    out = []
    for deg in range(max_degree + 1):
        for combo in combinations_with_replacement(range(d), deg):
            exps = [0] * d
            for k in combo:
                exps[k] += 1
            out.append(BasisDescriptor(tuple(exps), tuple(variables), kind))
    return out


@dataclass
class Dataset:
    """Rows of states (or field samples) with optional time derivatives.

    For PDE data ``inputs`` is ``(N, 1)``, ``coords`` holds ``(t, x)`` per row
    and ``spatial`` holds ``(u_x, u_xx)`` per row.
    """

    inputs: np.ndarray
    derivatives: np.ndarray = None
    coords: np.ndarray = None
    spatial: np.ndarray = None
    provenance: list = None
    state_names: tuple = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs[:, None]
        n = self.inputs.shape[0]
        if n < 1:
            raise InsufficientDataError("a dataset needs at least one row")
        if self.derivatives is not None:
            self.derivatives = np.asarray(self.derivatives, dtype=float)
            if self.derivatives.ndim == 1:
                self.derivatives = self.derivatives[:, None]
            if self.derivatives.shape[0] != n:
                raise ValueError("derivative rows must align with input rows")
        if self.spatial is not None:
            self.spatial = np.asarray(self.spatial, dtype=float)
            if self.spatial.shape != (n, 2):
                raise ValueError("spatial derivatives must be (N, 2)")
        if self.state_names is None:
            self.state_names = (("u",) if self.spatial is not None
                                else default_state_names(self.inputs.shape[1]))

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]

    @property
    def is_pde(self):
        return self.spatial is not None

    def subset(self, index):
        index = np.arange(len(self))[index]
        pick = lambda a: None if a is None else a[index]
        prov = None
        if self.provenance is not None:
            prov = [self.provenance[i] for i in index]
        return Dataset(self.inputs[index], pick(self.derivatives),
                       pick(self.coords), pick(self.spatial), prov,
                       self.state_names)

    def library_variables(self):
        """Matrix whose columns are the variables the library is built over."""
        if self.is_pde:
            return np.column_stack([self.inputs[:, 0], self.spatial])
        return self.inputs


@dataclass
class CandidateLibrary:
    descriptors: list
    theta: np.ndarray = field(repr=False)

    @property
    def names(self):
        return [b.name for b in self.descriptors]

    @property
    def n_terms(self):
        return len(self.descriptors)

    def evaluate(self, variables):
        """Evaluate the descriptors on new rows of library variables."""
        return evaluate_descriptors(self.descriptors, variables)


def evaluate_descriptors(descriptors, variables):
    variables = np.atleast_2d(np.asarray(variables, dtype=float))
    return np.column_stack([b.evaluate(variables) for b in descriptors])


def _second_derivative(u, h, axis):
    """Compact 3-point second derivative, one-sided 4-point at the ends."""
    u = np.moveaxis(np.asarray(u, dtype=float), axis, 0)
    n = u.shape[0]
    out = np.empty_like(u)
    out[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h ** 2
    if n >= 4:
        out[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / h ** 2
        out[-1] = (2.0 * u[-1] - 5.0 * u[-2] + 4.0 * u[-3] - u[-4]) / h ** 2
    else:
        out[0] = out[1]
        out[-1] = out[-2]
    return np.moveaxis(out, 0, axis)


def finite_difference_time(states, grid):
    """Second-order finite-difference time derivative along axis 0.

    Central differences in the interior, 3-point one-sided stencils at the
    two end points; irregular grids use the non-uniform variants.
    """
    states = np.asarray(states, dtype=float)
    if states.shape[0] < 3:
        raise InsufficientDataError("finite differences need at least 3 samples")
    if isinstance(grid, TimeGrid):
        dt = grid.dt
        spacing = dt if dt is not None else grid.times
    else:
        spacing = grid
    return np.gradient(states, spacing, axis=0, edge_order=2)


def finite_difference_space(field, second="iterated"):
    """Return ``(u_x, u_xx)`` for every time row of ``field``.

    ``second="iterated"`` applies the first-derivative stencil twice (the
    five-point-wide central stencil); ``second="compact"`` uses the 3-point
    stencil, which amplifies measurement noise 16 times more in variance.
    """
    values = field.values if isinstance(field, Field) else np.asarray(field)
    if values.shape[1] < 3:
        raise InsufficientDataError("spatial differences need at least 3 points")
    dx = field.space.dx
    u_x = np.gradient(values, dx, axis=1, edge_order=2)
    if second == "iterated":
        u_xx = np.gradient(u_x, dx, axis=1, edge_order=2)
    elif second == "compact":
        u_xx = _second_derivative(values, dx, axis=1)
    else:
        raise ValueError(f"unknown second-derivative stencil {second!r}")
    return u_x, u_xx


def dataset_from_trajectory(traj, derivatives=None, state_names=None, source="sim"):
    """Rows of a trajectory with finite-difference derivatives unless given."""
    if derivatives is None:
        derivatives = finite_difference_time(traj.states, traj.grid)
    coords = traj.times[:, None]
    return Dataset(traj.states, derivatives, coords=coords,
                   provenance=[source] * traj.states.shape[0],
                   state_names=state_names)


def dataset_from_field(field, u_t=None, time_index=None, second="iterated",
                       source="sim"):
    """Flatten a field into rows ``(t, x)`` ordered by time then position."""
    u_x, u_xx = finite_difference_space(field, second=second)
    if u_t is None:
        u_t = finite_difference_time(field.values, field.time)
    rows = np.arange(field.values.shape[0]) if time_index is None else np.asarray(time_index)
    t = field.time.times[rows]
    x = field.space.points
    tt, xx = np.meshgrid(t, x, indexing="ij")
    n = tt.size
    return Dataset(field.values[rows].reshape(n, 1), u_t[rows].reshape(n, 1),
                   coords=np.column_stack([tt.ravel(), xx.ravel()]),
                   spatial=np.column_stack([u_x[rows].ravel(), u_xx[rows].ravel()]),
                   provenance=[source] * n, state_names=("u",))


def build_library(dataset, max_degree=2, mode=None):
    """Evaluate all monomials up to ``max_degree`` on the dataset rows.

    ``ode`` mode uses the state columns; ``pde`` mode uses ``(u, u_x, u_xx)``.
    """
    if mode is None:
        mode = "pde" if dataset.is_pde else "ode"
    if mode == "ode":
        if max_degree < 1:
            raise ValueError("ode libraries need max_degree >= 1")
        variables = tuple(dataset.state_names)
        values = dataset.inputs
    elif mode == "pde":
        if not dataset.is_pde:
            raise ValueError("pde mode requires spatial derivatives on the dataset")
        variables = PDE_VARIABLES
        values = dataset.library_variables()
    else:
        raise ValueError(f"unknown library mode {mode!r}")
    descriptors = monomial_descriptors(variables, max_degree, kind=mode)
    return CandidateLibrary(descriptors, evaluate_descriptors(descriptors, values))
