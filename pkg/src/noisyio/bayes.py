"""Joint log-posteriors for noisy inputs and outputs, and posterior summaries.

Three problem families are covered:

* regression with an MLP surrogate ``y = H_theta(chi)``;
* a B-PINN for ``kappa u'' - lambda u^3 = f`` on [0, 1] with hard-encoded
  Dirichlet data, optionally with unknown ``lambda = exp(ell)``;
* pretrained (multi-input) DeepONets whose input functions are latent
  discretisations on the sensor grid.

Each posterior object exposes ``layout`` (a :class:`ParamLayout`),
``__call__(q) -> (log density, gradient)`` for the samplers, and
``evaluate(q)`` which additionally returns every likelihood and prior term.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import linalg as sla

from .errors import InvalidCholesky, InvalidInput, NumericOverflow, ShapeError
from .jets import Jet, Tape
from .nets import NetworkSpec, OperatorModel, ParamLayout, init_params, param_nodes, subnet_tape

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class InferenceMode(str, Enum):
    IGNORE = "ignore_input_noise"
    MODEL = "model_input_noise"
    RECAST = "recast_taylor"

    @classmethod
    def parse(cls, value) -> "InferenceMode":
        if isinstance(value, cls):
            return value
        aliases = {"ignore": cls.IGNORE, "model": cls.MODEL, "recast": cls.RECAST}
        if value in aliases:
            return aliases[value]
        try:
            return cls(value)
        except ValueError:
            raise InvalidInput(f"unknown inference mode {value!r}") from None

    @property
    def short(self) -> str:
        return {"ignore_input_noise": "ignore", "model_input_noise": "model", "recast_taylor": "recast"}[self.value]


@dataclass(frozen=True)
class NoiseModel:
    """Known noise scales of one measured channel; ``sigma_in=None`` means a clean input."""

    sigma_out: float
    sigma_in: float | None = None

    def __post_init__(self):
        if not self.sigma_out > 0:
            raise InvalidInput("output noise scale must be positive")
        if self.sigma_in is not None and not self.sigma_in > 0:
            raise InvalidInput("input noise scale must be positive (use None for clean inputs)")

    @property
    def noisy_input(self) -> bool:
        return self.sigma_in is not None


@dataclass(frozen=True)
class Priors:
    theta_std: float = 1.0
    # None switches to a flat prior on latent inputs
    latent_std: float | None = 100.0
    latent_mean: float = 0.0
    log_lambda_mean: float = 0.0
    log_lambda_std: float = 1.0


@dataclass
class GaussianPrior:
    """Either i.i.d. ``N(mu, sigma^2)`` or ``N(mean, L L^T)``."""

    mean: np.ndarray | float
    sigma: float | None = None
    chol: np.ndarray | None = None

    def __post_init__(self):
        if (self.sigma is None) == (self.chol is None):
            raise InvalidInput("give exactly one of sigma (iid) or chol (multivariate)")
        if self.chol is not None:
            self.chol = np.asarray(self.chol, dtype=np.float64)
            _check_chol(self.chol)
            self.mean = np.asarray(self.mean, dtype=np.float64)

    @classmethod
    def iid(cls, mu: float, sigma: float) -> "GaussianPrior":
        return cls(mu, sigma=sigma)

    @classmethod
    def multivariate(cls, mean, chol) -> "GaussianPrior":
        return cls(mean, chol=chol)

    @property
    def kind(self) -> str:
        return "iid-normal" if self.sigma is not None else "multivariate"

    def logpdf(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        if self.sigma is not None:
            r = (x - self.mean) / self.sigma
            return float(-0.5 * np.sum(r * r) - x.size * (LOG_SQRT_2PI + np.log(self.sigma)))
        return mvn_logpdf(x, self.mean, self.chol)

    def tape_logpdf(self, tape: Tape, x: Jet) -> Jet:
        if self.sigma is not None:
            return gauss_loglik(tape, tape.add(x, -np.asarray(self.mean)), self.sigma)
        return tape.gaussian_logpdf(x, self.mean, self.chol)


def _check_chol(chol: np.ndarray) -> None:
    if chol.ndim != 2 or chol.shape[0] != chol.shape[1]:
        raise InvalidCholesky("Cholesky factor must be square")
    if np.any(np.triu(chol, 1) != 0):
        raise InvalidCholesky("Cholesky factor must be lower triangular")
    if np.any(np.diag(chol) <= 0):
        raise InvalidCholesky("Cholesky factor needs a positive diagonal")


def mvn_logpdf(x, mean, chol) -> float:
    """Multivariate normal log-density through a triangular solve."""
    x = np.asarray(x, dtype=np.float64)
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), x.shape)
    chol = np.asarray(chol, dtype=np.float64)
    _check_chol(chol)
    if chol.shape[0] != x.shape[-1]:
        raise ShapeError(f"dimension {x.shape[-1]} does not match Cholesky factor {chol.shape}")
    z = sla.solve_triangular(chol, x - mean, lower=True)
    d = x.shape[-1]
    return float(-0.5 * z @ z - np.sum(np.log(np.diag(chol))) - d * LOG_SQRT_2PI)


def gauss_loglik(tape: Tape, resid: Jet, sigma: float) -> Jet:
    """``sum_i log N(r_i | 0, sigma^2)`` as a scalar node."""
    n = resid.comps[0].size
    quad = tape.scale(tape.sum(tape.square(resid)), -0.5 / sigma**2)
    return tape.add(quad, -n * (LOG_SQRT_2PI + np.log(sigma)))


def gauss_loglik_var(tape: Tape, resid: Jet, var: Jet) -> Jet:
    """Heteroscedastic ``sum_i log N(r_i | 0, var_i)`` including ``-log var_i / 2``."""
    quad = tape.sum(tape.mul(tape.square(resid), tape.reciprocal(var)))
    logdet = tape.sum(tape.log(var))
    n = resid.comps[0].size
    return tape.add(tape.add(tape.scale(quad, -0.5), tape.scale(logdet, -0.5)), -n * LOG_SQRT_2PI)


@dataclass
class LogPostEval:
    value: float
    grad: np.ndarray | None
    terms: dict = field(default_factory=dict)


class _Posterior:
    """Shared plumbing: build a tape, sum terms, reverse sweep.

    Independent Gaussian terms on whole parameter blocks (weight priors,
    input likelihoods of latent coordinates) are evaluated in closed form on
    the flat vector; everything involving a network goes through the tape.
    """

    layout: ParamLayout

    def _terms(self, tape: Tape, nodes: dict) -> dict:
        raise NotImplementedError

    def _iid_terms(self) -> list:
        """``(term name, layout names, mean, sigma)`` blocks handled in closed form."""
        return []

    def evaluate(self, q, need_grad: bool = True) -> LogPostEval:
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.layout.size,):
            raise ShapeError(f"parameter vector has shape {q.shape}, layout needs ({self.layout.size},)")
        tape = Tape()
        nodes = param_nodes(tape, self.layout, q)
        terms = self._terms(tape, nodes)
        total = None
        for node in terms.values():
            total = node if total is None else tape.add(total, node)
        term_values = {k: float(v.comps[0]) for k, v in terms.items()}
        grad = None
        if need_grad:
            if total is None:
                grad = np.zeros(self.layout.size)
            else:
                grads = tape.gradient(total, [nodes[n] for n in self.layout.names])
                grad = np.concatenate([g.ravel() for g in grads])
        slices = self.layout.slices()
        for term, names, mean, sigma in self._iid_terms():
            idx = np.r_[tuple(slices[n][0] if isinstance(slices[n], tuple) else slices[n] for n in names)]
            r = q[idx] - mean
            term_values[term] = float(-0.5 * (r @ r) / sigma**2 - r.size * (LOG_SQRT_2PI + np.log(sigma)))
            if need_grad:
                grad[idx] -= r / sigma**2
        value = float(sum(term_values.values()))
        return LogPostEval(value, grad, term_values)

    def __call__(self, q):
        try:
            e = self.evaluate(q)
        except (NumericOverflow, FloatingPointError):
            return -np.inf, np.full(self.layout.size, np.nan)
        if not np.isfinite(e.value) or not np.all(np.isfinite(e.grad)):
            return -np.inf, np.full(self.layout.size, np.nan)
        return e.value, e.grad

    def neg(self):
        def f(q):
            e = self.evaluate(q)
            return -e.value, -e.grad

        return f


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------


class RegressionPosterior(_Posterior):
    """``y~ = H_theta(chi) + eps_o``, ``chi~ = chi + eps_in`` with an MLP ``H``."""

    def __init__(self, spec: NetworkSpec, x_obs, y_obs, noise: NoiseModel, mode,
                 priors: Priors = Priors()):
        if spec.kind != "mlp" or spec.widths["net"][0] != 1 or spec.widths["net"][-1] != 1:
            raise ShapeError("regression needs a scalar mlp")
        self.spec = spec
        self.x_obs = np.asarray(x_obs, dtype=np.float64).ravel()
        self.y_obs = np.asarray(y_obs, dtype=np.float64).ravel()
        if self.x_obs.shape != self.y_obs.shape:
            raise ShapeError("x and y observations differ in length")
        self.noise = noise
        self.mode = InferenceMode.parse(mode)
        self.priors = priors
        if self.mode is not InferenceMode.IGNORE and not noise.noisy_input:
            raise InvalidInput(f"{self.mode.short} mode needs an input noise scale")
        layout = spec.layout()
        if self.mode is InferenceMode.MODEL:
            layout = layout.extend(("latent.x", (self.x_obs.size,)))
        self.layout = layout

    def _terms(self, tape, nodes):
        spec, noise = self.spec, self.noise
        terms = {}
        y = self.y_obs.reshape(-1, 1)
        if self.mode is InferenceMode.MODEL:
            chi = tape.reshape(nodes["latent.x"], (-1, 1))
            out = subnet_tape(tape, spec, nodes, "net", chi)
            terms["loglik_out"] = gauss_loglik(tape, tape.add(out, -y), noise.sigma_out)
        elif self.mode is InferenceMode.IGNORE:
            out = subnet_tape(tape, spec, nodes, "net", tape.variable(self.x_obs.reshape(-1, 1)))
            terms["loglik_out"] = gauss_loglik(tape, tape.add(out, -y), noise.sigma_out)
        else:
            s = tape.lift(self.x_obs.reshape(-1, 1), 1)
            out = subnet_tape(tape, spec, nodes, "net", s)
            slope = out.comp(1)
            var = tape.add(tape.scale(tape.square(slope), noise.sigma_in**2), noise.sigma_out**2)
            terms["loglik_out"] = gauss_loglik_var(tape, tape.add(out.comp(0), -y), var)
        return terms

    def _iid_terms(self):
        out = [("logprior_theta", self.spec.layout().names, 0.0, self.priors.theta_std)]
        if self.mode is InferenceMode.MODEL:
            out.append(("loglik_in", ("latent.x",), self.x_obs, self.noise.sigma_in))
            if self.priors.latent_std is not None:
                out.append(("logprior_latent", ("latent.x",), self.priors.latent_mean, self.priors.latent_std))
        return out

    def initial(self, seed: int) -> np.ndarray:
        theta = init_params(self.spec, seed).values
        if self.mode is InferenceMode.MODEL:
            return np.concatenate([theta, self.x_obs])
        return theta

    def predict(self, q, x) -> np.ndarray:
        parts = self.layout.unflatten(q)
        h = np.asarray(x, dtype=np.float64).reshape(-1, 1)
        from .nets import _subnet_np

        return _subnet_np(self.spec, parts, "net", h).ravel()


def logpost_regression(theta, chi_latent, x_obs, y_obs, noise: NoiseModel, priors: Priors, mode,
                       spec: NetworkSpec) -> float:
    """Value of the regression log-posterior at ``(theta, chi_latent)``."""
    post = RegressionPosterior(spec, x_obs, y_obs, noise, mode, priors)
    chi = np.asarray(chi_latent, dtype=np.float64).ravel()
    if post.mode is InferenceMode.MODEL:
        if chi.size != post.x_obs.size:
            raise InvalidInput("model mode needs one latent input per datum")
    elif chi.size:
        raise InvalidInput(f"{post.mode.short} mode takes no latent inputs")
    q = np.concatenate([np.asarray(theta, dtype=np.float64).ravel(), chi])
    return post.evaluate(q, need_grad=False).value


# ---------------------------------------------------------------------------
# B-PINN for the nonlinear Poisson equation
# ---------------------------------------------------------------------------


@dataclass
class PointData:
    """Measurements ``(x~_i, y~_i)`` of one field with known noise scales."""

    x: np.ndarray
    y: np.ndarray
    noise: NoiseModel

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).ravel()
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if self.x.shape != self.y.shape:
            raise ShapeError("coordinates and values differ in length")

    def __len__(self) -> int:
        return self.x.size


def poisson_u_jet(tape: Tape, spec: NetworkSpec, nodes: Mapping, x: Jet, order: int,
                  bc: tuple = (1.0, 1.0)) -> Jet:
    """``u(x) = x(1-x) N(x) + (1-x) u(0) + x u(1)`` as a jet in ``x``.

    ``x`` is a plain ``(N, 1)`` node; it is lifted to the requested order.
    """
    s = tape.lift(x, order)
    net = subnet_tape(tape, spec, nodes, "net", s)
    bubble = tape.mul(s, tape.add(tape.neg(s), 1.0))
    u = tape.mul(bubble, net)
    u = tape.add(u, tape.scale(s, bc[1] - bc[0]))
    return tape.add(u, bc[0])


class PoissonPosterior(_Posterior):
    """B-PINN posterior for ``kappa u'' - lambda u^3 = f`` on [0, 1].

    ``lam=None`` makes the problem inverse: ``lambda = exp(ell)`` with
    ``ell`` a latent scalar.  A dataset with a clean input never receives
    latent coordinates, so clean and noisy inputs can be mixed.
    """

    def __init__(self, spec: NetworkSpec, f_data: PointData | None, u_data: PointData | None = None,
                 mode="model", priors: Priors = Priors(), kappa: float = 0.01, lam: float | None = 0.1,
                 bc: tuple = (1.0, 1.0)):
        if spec.kind != "mlp" or spec.widths["net"][0] != 1 or spec.widths["net"][-1] != 1:
            raise ShapeError("B-PINN needs a scalar mlp")
        self.spec = spec
        self.f_data = f_data if f_data is not None and len(f_data) else None
        self.u_data = u_data if u_data is not None and len(u_data) else None
        self.mode = InferenceMode.parse(mode)
        self.priors = priors
        self.kappa = float(kappa)
        self.lam = lam
        self.bc = bc
        layout = spec.layout()
        self.latent = {}
        for key, data in (("u", self.u_data), ("f", self.f_data)):
            if data is not None and data.noise.noisy_input and self.mode is InferenceMode.MODEL:
                name = f"latent.x_{key}"
                layout = layout.extend((name, (len(data),)))
                self.latent[key] = name
        if lam is None:
            layout = layout.extend(("latent.log_lambda", ()))
        self.layout = layout

    @property
    def inverse(self) -> bool:
        return self.lam is None

    def _lambda(self, tape, nodes):
        if self.lam is None:
            return tape.exp(nodes["latent.log_lambda"])
        return float(self.lam)

    def _coords(self, tape, nodes, key, data):
        if key in self.latent:
            return tape.reshape(nodes[self.latent[key]], (-1, 1))
        return tape.variable(data.x.reshape(-1, 1))

    def _cube_term(self, tape, lam, u0):
        cube = tape.power(u0, 3)
        return tape.mul(lam, cube) if isinstance(lam, Jet) else tape.scale(cube, lam)

    def _terms(self, tape, nodes):
        terms = {}
        lam = self._lambda(tape, nodes)
        recast = self.mode is InferenceMode.RECAST
        if self.u_data is not None:
            d = self.u_data
            rc = recast and d.noise.noisy_input
            u = poisson_u_jet(tape, self.spec, nodes, self._coords(tape, nodes, "u", d), 1 if rc else 0, self.bc)
            resid = tape.add(u.comp(0), -d.y.reshape(-1, 1))
            if rc:
                var = tape.add(tape.scale(tape.square(u.comp(1)), d.noise.sigma_in**2), d.noise.sigma_out**2)
                terms["loglik_u"] = gauss_loglik_var(tape, resid, var)
            else:
                terms["loglik_u"] = gauss_loglik(tape, resid, d.noise.sigma_out)
        if self.f_data is not None:
            d = self.f_data
            rc = recast and d.noise.noisy_input
            u = poisson_u_jet(tape, self.spec, nodes, self._coords(tape, nodes, "f", d), 3 if rc else 2, self.bc)
            u0 = u.comp(0)
            F = tape.add(tape.scale(u.comp(2), self.kappa), tape.neg(self._cube_term(tape, lam, u0)))
            resid = tape.add(F, -d.y.reshape(-1, 1))
            if rc:
                # dF/dx = kappa u''' - 3 lambda u^2 u'
                sq = tape.mul(tape.square(u0), u.comp(1))
                dsq = tape.mul(lam, sq) if isinstance(lam, Jet) else tape.scale(sq, lam)
                g = tape.add(tape.scale(u.comp(3), self.kappa), tape.scale(dsq, -3.0))
                var = tape.add(tape.scale(tape.square(g), d.noise.sigma_in**2), d.noise.sigma_out**2)
                terms["loglik_f"] = gauss_loglik_var(tape, resid, var)
            else:
                terms["loglik_f"] = gauss_loglik(tape, resid, d.noise.sigma_out)
        return terms

    def _iid_terms(self):
        pr = self.priors
        out = [("logprior_theta", self.spec.layout().names, 0.0, pr.theta_std)]
        for key, name in self.latent.items():
            data = self.u_data if key == "u" else self.f_data
            out.append((f"loglik_in_{key}", (name,), data.x, data.noise.sigma_in))
            if pr.latent_std is not None:
                out.append((f"logprior_x_{key}", (name,), pr.latent_mean, pr.latent_std))
        if self.inverse:
            out.append(("logprior_log_lambda", ("latent.log_lambda",), pr.log_lambda_mean, pr.log_lambda_std))
        return out

    def initial(self, seed: int, log_lambda: float | None = None) -> np.ndarray:
        parts = [init_params(self.spec, seed).values]
        for key in ("u", "f"):
            if key in self.latent:
                parts.append((self.u_data if key == "u" else self.f_data).x)
        if self.inverse:
            parts.append(np.array([self.priors.log_lambda_mean if log_lambda is None else log_lambda]))
        return np.concatenate(parts)

    def fields(self, q, x) -> tuple:
        """``(u, f)`` on the coordinates ``x`` for one parameter vector."""
        tape = Tape()
        nodes = {k: v for k, v in self.layout.unflatten(q).items()}
        u = poisson_u_jet(tape, self.spec, nodes, tape.variable(np.asarray(x, dtype=np.float64).reshape(-1, 1)),
                          2, self.bc)
        lam = float(np.exp(nodes["latent.log_lambda"])) if self.inverse else float(self.lam)
        f = self.kappa * u.d2 - lam * u.v**3
        return u.v.ravel(), f.ravel()

    def lambda_of(self, q) -> float:
        if not self.inverse:
            return float(self.lam)
        return float(np.exp(self.layout.unflatten(q)["latent.log_lambda"]))


def logpost_bpinn_poisson(q, spec: NetworkSpec, f_data: PointData | None, u_data: PointData | None = None,
                          mode="model", priors: Priors = Priors(), kappa: float = 0.01,
                          lam: float | None = 0.1) -> float:
    """Value of the B-PINN log-posterior at the flat vector ``q``."""
    post = PoissonPosterior(spec, f_data, u_data, mode, priors, kappa, lam)
    return post.evaluate(q, need_grad=False).value


# ---------------------------------------------------------------------------
# pretrained operators
# ---------------------------------------------------------------------------


@dataclass
class FunctionData:
    """Noisy values of an operator input function at sensor-grid indices."""

    name: str
    indices: np.ndarray
    values: np.ndarray
    sigma: float
    prior: GaussianPrior

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.intp).ravel()
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.indices.shape != self.values.shape:
            raise ShapeError("indices and values differ in length")
        if not self.sigma > 0:
            raise InvalidInput("input-function noise scale must be positive")


class OperatorPosterior(_Posterior):
    """Posterior over discretised operator inputs given noisy input and output data.

    With ``whiten=True`` the sampled coordinates are ``z`` with
    ``v = mean + L z`` for each input's multivariate prior; the density is then
    taken with respect to ``z`` (constant Jacobian ``log|L|`` added).
    ``use_u=False`` drops the output likelihood and ``use_inputs=False`` drops
    every input-function likelihood; these give the non-synergistic posteriors.
    """

    def __init__(self, model: OperatorModel, inputs: Sequence[FunctionData], u_points=None, u_values=None,
                 sigma_out: float | None = None, whiten: bool = False, use_u: bool = True,
                 use_inputs: bool = True):
        branches = [b for b in model.spec.subnets() if b != "trunk"]
        if len(inputs) != len(branches):
            raise ShapeError(f"operator needs {len(branches)} input functions, got {len(inputs)}")
        n = model.n_sensors
        for d in inputs:
            if np.any(d.indices < 0) or np.any(d.indices >= n):
                raise IndexError(f"measurement index of {d.name} lies off the {n}-point sensor grid")
            if d.prior.chol is not None and d.prior.chol.shape[0] != n:
                raise ShapeError(f"prior of {d.name} has the wrong dimension")
        if whiten and any(d.prior.chol is None for d in inputs):
            raise InvalidInput("whitening needs multivariate priors")
        self.model = model
        self.inputs = list(inputs)
        self.whiten = whiten
        self.use_u = use_u and u_points is not None and len(np.atleast_1d(u_values))
        self.use_inputs = use_inputs
        if self.use_u:
            if sigma_out is None or not sigma_out > 0:
                raise InvalidInput("output noise scale must be positive")
            self.u_points = np.asarray(u_points, dtype=np.float64)
            self.u_values = np.asarray(u_values, dtype=np.float64).ravel()
            self.sigma_out = float(sigma_out)
            self._trunk = model.trunk_features(self.u_points)
        prefix = "z" if whiten else "v"
        self.layout = ParamLayout(tuple((f"{prefix}.{d.name}", (n,)) for d in inputs))

    def _fields(self, tape, nodes) -> list:
        out = []
        prefix = "z" if self.whiten else "v"
        for d in self.inputs:
            node = nodes[f"{prefix}.{d.name}"]
            if self.whiten:
                node = tape.add(tape.matmul(tape.reshape(node, (1, -1)), d.prior.chol.T), d.prior.mean)
                node = tape.reshape(node, (-1,))
            out.append(node)
        return out

    def _terms(self, tape, nodes):
        terms = {}
        vs = self._fields(tape, nodes)
        if self.use_u:
            g = _operator_tape_eval(tape, self.model, [tape.reshape(v, (1, -1)) for v in vs], self._trunk)
            terms["loglik_u"] = gauss_loglik(tape, tape.add(g, -self.u_values[None, :]), self.sigma_out)
        for d, v in zip(self.inputs, vs):
            if self.use_inputs and d.indices.size:
                terms[f"loglik_{d.name}"] = gauss_loglik(tape, tape.add(tape.take(v, d.indices), -d.values), d.sigma)
            terms[f"logprior_{d.name}"] = d.prior.tape_logpdf(tape, v)
            if self.whiten:
                terms[f"logjac_{d.name}"] = tape.variable(np.sum(np.log(np.diag(d.prior.chol))))
        return terms

    def fields(self, q) -> dict:
        parts = self.layout.unflatten(q)
        out = {}
        for d in self.inputs:
            if self.whiten:
                out[d.name] = d.prior.mean + d.prior.chol @ parts[f"z.{d.name}"]
            else:
                out[d.name] = parts[f"v.{d.name}"].copy()
        return out

    def fields_batch(self, Q: np.ndarray) -> dict:
        """Input-function fields for a matrix of draws, shape ``(M, n)`` each."""
        sl = self.layout.slices()
        out = {}
        for d in self.inputs:
            prefix = "z" if self.whiten else "v"
            block = Q[:, sl[f"{prefix}.{d.name}"][0]]
            out[d.name] = d.prior.mean + block @ d.prior.chol.T if self.whiten else block.copy()
        return out

    def predict_u(self, Q: np.ndarray, points) -> np.ndarray:
        fields = self.fields_batch(np.atleast_2d(Q))
        return self.model.evaluate([fields[d.name] for d in self.inputs], points)

    def initial(self) -> np.ndarray:
        """Start at the prior mean."""
        parts = []
        for d in self.inputs:
            n = self.model.n_sensors
            parts.append(np.zeros(n) if self.whiten else np.broadcast_to(d.prior.mean, (n,)).astype(float))
        return np.concatenate(parts)


def _operator_tape_eval(tape, model, inputs, trunk_feats):
    from .nets import operator_tape

    return operator_tape(tape, model, inputs, trunk_feats)


def logpost_operator(v, inputs: Sequence[FunctionData], model: OperatorModel, u_points=None, u_values=None,
                     sigma_out: float | None = None) -> float:
    """Value of the operator posterior at the discretisations ``v`` (one per input)."""
    post = OperatorPosterior(model, inputs, u_points, u_values, sigma_out)
    q = np.concatenate([np.asarray(x, dtype=np.float64).ravel() for x in v])
    return post.evaluate(q, need_grad=False).value


def nonsynergistic_posteriors(post: OperatorPosterior) -> tuple:
    """``(inputs-only, u-only)`` posteriors with the other data removed."""
    kw = dict(whiten=post.whiten)
    u_pts = post.u_points if post.use_u else None
    u_vals = post.u_values if post.use_u else None
    sig = post.sigma_out if post.use_u else None
    inputs_only = OperatorPosterior(post.model, post.inputs, None, None, None, use_u=False, **kw)
    u_only = OperatorPosterior(post.model, post.inputs, u_pts, u_vals, sig, use_inputs=False, **kw)
    return inputs_only, u_only


def logpost_operator_nonsynergistic(v, inputs: Sequence[FunctionData], model: OperatorModel) -> float:
    """Input-function posterior from its own measurements and prior only."""
    post = OperatorPosterior(model, inputs, use_u=False)
    q = np.concatenate([np.asarray(x, dtype=np.float64).ravel() for x in v])
    return post.evaluate(q, need_grad=False).value


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


def predict_summary(samples, predictor: Callable | None = None, batched: bool = False) -> tuple:
    """Pointwise mean and population standard deviation over posterior draws.

    ``samples`` is an ``(M, D)`` matrix (or a ``PosteriorSamples``).  With
    ``predictor=None`` the draws themselves are summarised; ``batched=True``
    passes the whole matrix to ``predictor`` at once.
    """
    Q = np.asarray(getattr(samples, "samples", samples), dtype=np.float64)
    if Q.ndim != 2 or Q.shape[0] < 2:
        raise InvalidInput("need at least two posterior draws")
    if predictor is None:
        F = Q
    elif batched:
        F = np.asarray(predictor(Q), dtype=np.float64)
    else:
        F = np.stack([np.asarray(predictor(q), dtype=np.float64) for q in Q])
    mean = F.mean(axis=0)
    std = np.sqrt(np.mean((F - mean) ** 2, axis=0))
    return mean, std
