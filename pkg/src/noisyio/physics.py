"""Ground truths, reaction-diffusion solvers, random fields and noisy datasets."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import linalg as sla

from .errors import CholeskyFailure, InvalidInput, IoError, ShapeError, SolverDiverged
from .nets import OperatorDataset

POISSON_KAPPA = 0.01
POISSON_LAMBDA = 0.1
RD_DIFFUSION = 0.01
RD_KAPPA = 0.01
N_SENSORS = 100
DIVERGENCE_LIMIT = 1e6


def sensor_grid(n: int = N_SENSORS) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


# ---------------------------------------------------------------------------
# Poisson ground truth
# ---------------------------------------------------------------------------


def poisson_truth(x, kappa: float = POISSON_KAPPA, lam: float = POISSON_LAMBDA) -> tuple:
    """``u = cos^3(2 pi x)`` and ``f = kappa u'' - lam u^3``."""
    x = np.asarray(x, dtype=np.float64)
    a = 2.0 * np.pi
    c, s = np.cos(a * x), np.sin(a * x)
    u = c**3
    upp = 6.0 * a**2 * c * s**2 - 3.0 * a**2 * c**3
    return u, kappa * upp - lam * u**3


def poisson_truth_derivs(x) -> tuple:
    """``(u, u', u'', u''')`` of ``cos^3(2 pi x)``."""
    x = np.asarray(x, dtype=np.float64)
    a = 2.0 * np.pi
    c, s = np.cos(a * x), np.sin(a * x)
    u1 = -3.0 * a * c**2 * s
    u2 = 6.0 * a**2 * c * s**2 - 3.0 * a**2 * c**3
    u3 = -6.0 * a**3 * s**3 + 21.0 * a**3 * c**2 * s
    return c**3, u1, u2, u3


# ---------------------------------------------------------------------------
# Gaussian random fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GrfSpec:
    length: float = 0.2
    grid: np.ndarray = field(default_factory=sensor_grid)
    jitter: float = 1e-10

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.ndim != 1 or not np.all(np.isfinite(g)):
            raise InvalidInput("GRF grid must be a finite 1-D array")
        if not self.length > 0:
            raise InvalidInput("correlation length must be positive")
        object.__setattr__(self, "grid", g)


def se_kernel(x1, x2, length: float) -> np.ndarray:
    d = np.subtract.outer(np.asarray(x1, dtype=np.float64), np.asarray(x2, dtype=np.float64))
    return np.exp(-(d * d) / (2.0 * length**2))


def grf_cholesky(spec: GrfSpec) -> np.ndarray:
    K = se_kernel(spec.grid, spec.grid, spec.length)
    K[np.diag_indices_from(K)] += spec.jitter
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        raise CholeskyFailure(f"kernel not positive definite with jitter {spec.jitter:g}; raise the jitter") from None
    if not np.all(np.isfinite(L)) or np.any(np.diag(L) <= 0):
        raise CholeskyFailure(f"kernel not positive definite with jitter {spec.jitter:g}; raise the jitter")
    return L


def grf_sample(spec: GrfSpec, seed: int, n: int | None = None, chol: np.ndarray | None = None) -> np.ndarray:
    """``L z`` with ``z`` standard normal; shape ``(grid,)`` or ``(n, grid)``."""
    L = grf_cholesky(spec) if chol is None else chol
    rng = np.random.default_rng(seed)
    if n is None:
        return L @ rng.standard_normal(L.shape[0])
    return rng.standard_normal((n, L.shape[0])) @ L.T


# ---------------------------------------------------------------------------
# reaction-diffusion solvers
# ---------------------------------------------------------------------------

Source = np.ndarray | Callable[[float], np.ndarray]


def _diffusion_matrix(a_nodes: np.ndarray, h: float) -> np.ndarray:
    """Interior conservative operator ``d/dx(a du/dx)`` with zero Dirichlet ends."""
    a_face = 0.5 * (a_nodes[1:] + a_nodes[:-1])
    m = a_nodes.size - 2
    A = np.zeros((m, m))
    lo, hi = a_face[:-1], a_face[1:]
    idx = np.arange(m)
    A[idx, idx] = -(lo + hi) / h**2
    A[idx[1:], idx[:-1]] = lo[1:] / h**2
    A[idx[:-1], idx[1:]] = hi[:-1] / h**2
    return A


def _source_fn(f: Source, grid: np.ndarray) -> Callable[[float], np.ndarray]:
    if callable(f):
        return lambda t: np.asarray(f(t), dtype=np.float64)
    arr = np.asarray(f, dtype=np.float64)
    if arr.shape[-1] != grid.size:
        raise ShapeError(f"source has {arr.shape[-1]} values, grid has {grid.size}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("source contains non-finite values")
    return lambda t: arr


@dataclass
class RdSolution:
    grid: np.ndarray
    times: np.ndarray
    states: np.ndarray          # (..., n_times, n_grid)
    tail: np.ndarray | None     # last three states, for residual checks


def _rd_march(a_nodes: np.ndarray, f: Source, grid: np.ndarray, kappa: float, dt: float, T: float,
              save_every: int | None, batch_shape: tuple) -> RdSolution:
    """Crank-Nicolson diffusion with second-order Adams-Bashforth reaction.

    ``(I - dt/2 A) u^{n+1} = (I + dt/2 A) u^n + dt [3/2 r^n - 1/2 r^{n-1}]``
    with ``r = kappa u^2 + f(t)``; the first step uses ``r^{-1} = r^0``.
    A time-dependent source is evaluated at the step end points so that the
    combination stays second order.
    """
    h = grid[1] - grid[0]
    if not np.allclose(np.diff(grid), h):
        raise InvalidInput("solver grid must be uniform")
    n_steps = int(round(T / dt))
    if n_steps < 1 or not np.isclose(n_steps * dt, T):
        raise InvalidInput("final time must be a positive multiple of the time step")
    A = _diffusion_matrix(a_nodes, h)
    m = A.shape[0]
    I = np.eye(m)
    lu = sla.lu_factor(I - 0.5 * dt * A)
    B = I + 0.5 * dt * A
    src = _source_fn(f, grid)
    u = np.zeros(batch_shape + (m,))

    def react(u, t):
        return kappa * u * u + src(t)[..., 1:-1]

    r_prev = react(u, 0.0)
    saved, times = [np.zeros(batch_shape + (grid.size,))], [0.0]
    tail = [u]
    for n in range(n_steps):
        t = n * dt
        r_now = react(u, t)
        if n == 0:
            r_prev = r_now
        rhs = u @ B.T + dt * (1.5 * r_now - 0.5 * r_prev)
        u_new = sla.lu_solve(lu, rhs.reshape(-1, m).T).T.reshape(rhs.shape)
        if not np.all(np.isfinite(u_new)) or np.max(np.abs(u_new), initial=0.0) > DIVERGENCE_LIMIT:
            raise SolverDiverged(f"solution exceeded {DIVERGENCE_LIMIT:g} at t = {t + dt:.4f}")
        r_prev, u = r_now, u_new
        tail = (tail + [u])[-3:]
        if save_every and (n + 1) % save_every == 0:
            full = np.zeros(batch_shape + (grid.size,))
            full[..., 1:-1] = u
            saved.append(full)
            times.append((n + 1) * dt)
    if not save_every:
        full = np.zeros(batch_shape + (grid.size,))
        full[..., 1:-1] = u
        saved, times = [full], [n_steps * dt]
    return RdSolution(grid, np.array(times), np.stack(saved, axis=-2), np.stack(tail, axis=-2))


def rd_solve_constant(f: Source, grid: np.ndarray | None = None, D: float = RD_DIFFUSION,
                      kappa: float = RD_KAPPA, dt: float = 1e-3, T: float = 1.0) -> np.ndarray:
    """``u(., T)`` for ``u_t = D u_xx + kappa u^2 + f`` from zero initial data.

    ``f`` may be a ``(n,)`` or ``(B, n)`` array (time independent, solved as a
    batch) or a callable ``t -> (n,)``.
    """
    grid = sensor_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    batch = () if callable(f) else np.asarray(f).shape[:-1]
    sol = _rd_march(np.full(grid.size, D), f, grid, kappa, dt, T, None, batch)
    return sol.states[..., -1, :]


def hetero_coefficient(k) -> np.ndarray:
    return 0.01 * (np.abs(np.asarray(k, dtype=np.float64)) + 1.0)


def rd_solve_hetero(k, f: Source, grid: np.ndarray | None = None, kappa: float = RD_KAPPA,
                    dt: float = 1e-3, T: float = 1.0, n_out: int = 101,
                    coefficient: np.ndarray | None = None) -> np.ndarray:
    """Space-time field ``(n_grid, n_out)`` for ``u_t = (a u_x)_x + kappa u^2 + f``.

    ``a = 0.01 (|k| + 1)`` unless ``coefficient`` supplies nodal values directly.
    """
    grid = sensor_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    a = hetero_coefficient(k) if coefficient is None else np.asarray(coefficient, dtype=np.float64)
    if a.shape != grid.shape:
        raise ShapeError("diffusion coefficient must live on the solver grid")
    n_steps = int(round(T / dt))
    save_every = n_steps // (n_out - 1)
    if save_every * (n_out - 1) != n_steps:
        raise InvalidInput("output times must fall on time steps")
    sol = _rd_march(a, f, grid, kappa, dt, T, save_every, ())
    return sol.states.T


def rd_step_residual(a_nodes, f, grid, tail: np.ndarray, kappa: float = RD_KAPPA, dt: float = 1e-3) -> np.ndarray:
    """Residual of the last time step given the final three interior states."""
    h = grid[1] - grid[0]
    A = _diffusion_matrix(np.asarray(a_nodes, dtype=np.float64), h)
    f_in = np.asarray(f, dtype=np.float64)[..., 1:-1]
    u0, u1, u2 = tail[..., 0, :], tail[..., 1, :], tail[..., 2, :]
    r0 = kappa * u0 * u0 + f_in
    r1 = kappa * u1 * u1 + f_in
    lhs = (u2 - u1) / dt - 0.5 * (u2 + u1) @ A.T
    return lhs - (1.5 * r1 - 0.5 * r0)


def rd_final_tail(a_nodes, f, grid=None, kappa: float = RD_KAPPA, dt: float = 1e-3, T: float = 1.0) -> np.ndarray:
    """Last three interior states of a solve (for residual checks)."""
    grid = sensor_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    batch = np.asarray(f).shape[:-1]
    return _rd_march(np.asarray(a_nodes, dtype=np.float64), f, grid, kappa, dt, T, None, batch).tail


# manufactured solutions ---------------------------------------------------


def manufactured_constant(grid: np.ndarray, D: float = RD_DIFFUSION, kappa: float = RD_KAPPA):
    """``u* = t sin(pi x)`` and its source for the constant-diffusion problem."""
    s = np.sin(np.pi * grid)

    def source(t):
        return s + D * np.pi**2 * t * s - kappa * (t * s) ** 2

    return (lambda t: t * s), source


def manufactured_hetero(grid: np.ndarray, kappa: float = RD_KAPPA):
    """``u* = t sin(pi x)`` with ``k = 1 + x`` so that ``a = 0.01 (2 + x)``."""
    k = 1.0 + grid
    a = hetero_coefficient(k)
    s, c = np.sin(np.pi * grid), np.cos(np.pi * grid)
    da = 0.01

    def source(t):
        flux_div = t * (da * np.pi * c - a * np.pi**2 * s)
        return s - flux_div - kappa * (t * s) ** 2

    return k, (lambda t: t * s), source


# ---------------------------------------------------------------------------
# noisy measurements
# ---------------------------------------------------------------------------


@dataclass
class NoisyDataset:
    """Clean and noisy copies of paired inputs and outputs.

    ``noise_in`` and ``noise_out`` are stored as the differences noisy minus
    clean, so they are exactly the perturbations present in the data.
    """

    x_clean: np.ndarray
    y_clean: np.ndarray
    x_noisy: np.ndarray
    y_noisy: np.ndarray
    sigma_in: float
    sigma_out: float
    seed: int
    noise_in: np.ndarray
    noise_out: np.ndarray

    def __len__(self) -> int:
        return self.x_clean.shape[0]


def make_noisy(x, y, sigma_in: float, sigma_out: float, seed: int) -> NoisyDataset:
    """Add seeded i.i.d. Gaussian noise; a zero scale leaves the channel untouched."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise ShapeError("inputs and outputs differ in length")
    if sigma_in < 0 or sigma_out < 0:
        raise InvalidInput("noise scales must be non-negative")
    rng = np.random.default_rng(seed)
    e_in = rng.standard_normal(x.shape)
    e_out = rng.standard_normal(y.shape)
    xn = x + sigma_in * e_in if sigma_in > 0 else x.copy()
    yn = y + sigma_out * e_out if sigma_out > 0 else y.copy()
    return NoisyDataset(x, y, xn, yn, float(sigma_in), float(sigma_out), int(seed), xn - x, yn - y)


def write_measurements(path, rows) -> Path:
    """CSV with columns channel, coordinate, clean, noisy.

    ``rows`` yields ``(channel, coordinate, clean, noisy)`` tuples; coordinates
    that are tuples are joined with ``;``.
    """
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["channel", "coordinate", "clean", "noisy"])
            for ch, coord, clean, noisy in rows:
                if isinstance(coord, (tuple, list, np.ndarray)):
                    coord = ";".join(repr(float(c)) for c in coord)
                elif not isinstance(coord, str):
                    coord = repr(coord if isinstance(coord, int) else float(coord))
                w.writerow([ch, coord, repr(float(clean)), repr(float(noisy))])
    except OSError as exc:
        raise IoError(f"cannot write measurements to {path}: {exc}") from exc
    return path


# ---------------------------------------------------------------------------
# operator corpora
# ---------------------------------------------------------------------------


@dataclass
class OperatorCorpus:
    problem: str
    train: OperatorDataset
    test: OperatorDataset
    train_seeds: np.ndarray
    test_seeds: np.ndarray

    def save(self, directory) -> list:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        out = []
        for split, ds, seeds in (("train", self.train, self.train_seeds), ("test", self.test, self.test_seeds)):
            p = directory / f"{self.problem}_{split}.npz"
            arrays = {f"input{i}": a for i, a in enumerate(ds.inputs)}
            np.savez(p, grid=ds.grid, points=ds.points, solutions=ds.targets, seeds=seeds, **arrays)
            out.append(p)
        return out

    @classmethod
    def load(cls, directory, problem: str) -> "OperatorCorpus":
        parts = {}
        for split in ("train", "test"):
            with np.load(Path(directory) / f"{problem}_{split}.npz") as z:
                n_in = sum(1 for k in z.files if k.startswith("input"))
                ds = OperatorDataset(z["grid"], tuple(z[f"input{i}"] for i in range(n_in)), z["points"], z["solutions"])
                parts[split] = (ds, z["seeds"])
        return cls(problem, parts["train"][0], parts["test"][0], parts["train"][1], parts["test"][1])


def hetero_points(grid: np.ndarray, n_out: int = 101) -> np.ndarray:
    """``(x, t)`` pairs in the row-major order of the ``(n_grid, n_out)`` field."""
    t = np.linspace(0.0, 1.0, n_out)
    X, Tm = np.meshgrid(grid, t, indexing="ij")
    return np.column_stack([X.ravel(), Tm.ravel()])


def build_operator_corpus(problem: str, n_train: int, n_test: int, seed: int, length: float = 0.2,
                          grid: np.ndarray | None = None, dt: float = 1e-3) -> OperatorCorpus:
    """Sample GRF inputs and solve for each; input function ``i`` uses seed ``(seed, i)``."""
    if problem not in ("rd_constant", "rd_hetero"):
        raise InvalidInput(f"unknown corpus problem {problem!r}")
    if n_train < 0 or n_test < 0:
        raise InvalidInput("split sizes must be non-negative")
    grid = sensor_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    spec = GrfSpec(length, grid)
    L = grf_cholesky(spec)
    n = n_train + n_test
    n_fields = 1 if problem == "rd_constant" else 2
    seeds = np.array([[seed, i] for i in range(n)], dtype=np.int64).reshape(n, 2)
    fields = np.empty((n_fields, n, grid.size))
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        fields[:, i] = rng.standard_normal((n_fields, grid.size)) @ L.T
    if problem == "rd_constant":
        points = grid.copy()
        try:
            sols = rd_solve_constant(fields[0], grid, dt=dt) if n else np.empty((0, grid.size))
        except SolverDiverged as exc:
            raise SolverDiverged(f"constant-diffusion solve diverged within seed batch {seed}: {exc}") from exc
    else:
        points = hetero_points(grid)
        sols = np.empty((n, points.shape[0]))
        for i in range(n):
            try:
                sols[i] = rd_solve_hetero(fields[0, i], fields[1, i], grid, dt=dt).ravel()
            except SolverDiverged as exc:
                raise SolverDiverged(f"input function {i} (seed {seed}) diverged: {exc}") from exc
    tr, te = slice(0, n_train), slice(n_train, n)
    train = OperatorDataset(grid, tuple(f[tr] for f in fields), points, sols[tr])
    test = OperatorDataset(grid, tuple(f[te] for f in fields), points, sols[te])
    return OperatorCorpus(problem, train, test, seeds[tr], seeds[te])
