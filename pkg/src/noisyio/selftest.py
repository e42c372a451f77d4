"""Fast oracle checks runnable from the command line."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bayes import NoiseModel, RegressionPosterior, mvn_logpdf
from .jets import Tape
from .nets import NetworkSpec, init_params, mlp_forward, mlp_jet_forward
from .physics import manufactured_constant, manufactured_hetero, poisson_truth, rd_solve_constant, rd_solve_hetero, sensor_grid


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def _jets() -> Check:
    spec = NetworkSpec.mlp([1, 50, 50, 1], "tanh")
    rng = np.random.default_rng(0)
    worst = 0.0
    for i in range(10):
        p = init_params(spec, i)
        x = float(rng.uniform(-1, 1))
        j = mlp_jet_forward(spec, p, x, 3)
        h = 1e-3
        f = lambda t: float(mlp_forward(spec, p, np.array([[t]]))[0, 0])
        g1 = lambda t: float(mlp_jet_forward(spec, p, t, 1).d1)
        fd1 = (f(x + h) - f(x - h)) / (2 * h)
        fd2 = (g1(x + h) - g1(x - h)) / (2 * h)
        worst = max(worst, abs(float(j.d1) - fd1) / (abs(fd1) + 1e-6), abs(float(j.d2) - fd2) / (abs(fd2) + 1e-6))
    return Check("jet derivatives vs finite differences", worst < 1e-4, f"max rel err {worst:.2e}")


def _recast() -> Check:
    rng = np.random.default_rng(1)
    spec = NetworkSpec.mlp([1, 1], "tanh")
    x = rng.normal(size=200)
    a, b = 1.7, -0.3
    y = a * x + b + rng.normal(scale=0.1, size=200)
    post = RegressionPosterior(spec, x, y, NoiseModel(0.05, 0.03), "recast")
    q = post.layout.flatten({"net.W0": np.array([[a]]), "net.b0": np.array([b])})
    got = post.evaluate(q, need_grad=False).terms["loglik_out"]
    var = a * a * 0.03**2 + 0.05**2
    want = float(np.sum(-0.5 * (y - a * x - b) ** 2 / var - 0.5 * np.log(2 * np.pi * var)))
    err = abs(got - want)
    return Check("recast likelihood is exact for linear maps", err < 1e-12 * max(1.0, abs(want)), f"abs err {err:.2e}")


def _mvn() -> Check:
    rng = np.random.default_rng(2)
    A = rng.normal(size=(5, 5))
    S = A @ A.T + 5 * np.eye(5)
    x, m = rng.normal(size=5), rng.normal(size=5)
    want = -0.5 * (x - m) @ np.linalg.solve(S, x - m) - 0.5 * np.linalg.slogdet(2 * np.pi * S)[1]
    got = mvn_logpdf(x, m, np.linalg.cholesky(S))
    return Check("multivariate normal log-density", abs(got - want) <= 1e-10 * abs(want), f"{got:.12g} vs {want:.12g}")


def _poisson() -> Check:
    x = np.linspace(0, 1, 201)
    u, f = poisson_truth(x)
    h = 1e-4
    upp = (poisson_truth(x + h)[0] - 2 * u + poisson_truth(x - h)[0]) / h**2
    res = np.max(np.abs(0.01 * upp - 0.1 * u**3 - f))
    return Check("Poisson ground truth satisfies its equation", res < 1e-5, f"max residual {res:.2e}")


def _solvers() -> Check:
    g = sensor_grid()
    us, src = manufactured_constant(g)
    e1 = np.linalg.norm(rd_solve_constant(src, g) - us(1.0)) / np.linalg.norm(us(1.0))
    k, us2, src2 = manufactured_hetero(g)
    e2 = np.linalg.norm(rd_solve_hetero(k, src2, g)[:, -1] - us2(1.0)) / np.linalg.norm(us2(1.0))
    return Check("reaction-diffusion manufactured solutions", max(e1, e2) < 1e-3, f"errors {e1:.2e}, {e2:.2e}")


def _tape() -> Check:
    t = Tape()
    a = t.lift(np.array(2.0), 3)
    b = t.add(t.variable(np.array(3.0)), 0.0)
    b = t.lift(b, 3)
    prod = t.mul(a, b)
    ok = np.allclose([c for c in prod.comps], [6.0, 5.0, 2.0, 0.0])
    return Check("jet product rule", bool(ok), str([float(c) for c in prod.comps]))


SUITES: tuple[Callable[[], Check], ...] = (_tape, _jets, _recast, _mvn, _poisson, _solvers)


def run_selftest() -> list[Check]:
    out = []
    for fn in SUITES:
        try:
            out.append(fn())
        except Exception as exc:  # a crashing oracle is a failed oracle
            out.append(Check(fn.__name__.strip("_"), False, f"{type(exc).__name__}: {exc}"))
    return out
