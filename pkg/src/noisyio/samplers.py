"""Hamiltonian Monte Carlo with step-size adaptation, and MAP estimation.

Log densities are callables ``logpost(q) -> (log_density, gradient)`` over a
flat float64 vector.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInit, InvalidInput, IoError, SamplerStuck, TrainingDiverged
from .nets import AdamState, ParamLayout, adam_step

log = logging.getLogger(__name__)

LogDensity = Callable[[np.ndarray], tuple]

DIVERGENCE_THRESHOLD = 1000.0


@dataclass
class HmcConfig:
    n_leapfrog: int = 50
    n_samples: int = 1000
    n_burnin: int = 1000
    step_size: float = 0.01
    accept_band: tuple = (0.5, 0.7)
    target_accept: float = 0.6
    mass: np.ndarray | None = None
    seed: int = 0
    adapt: bool = True
    # relative half-width of the uniform per-iteration step-size jitter
    step_jitter: float = 0.1

    def __post_init__(self):
        lo, hi = self.accept_band
        if self.n_leapfrog < 1 or self.n_samples < 1 or self.n_burnin < 0:
            raise InvalidInput("need L >= 1, M >= 1 and B >= 0")
        if not 0.0 < lo < hi < 1.0:
            raise InvalidInput("acceptance band must satisfy 0 < lo < hi < 1")
        if self.step_size <= 0.0:
            raise InvalidInput("initial step size must be positive")
        if not 0.0 <= self.step_jitter < 1.0:
            raise InvalidInput("step jitter must lie in [0, 1)")
        if self.mass is not None:
            self.mass = np.asarray(self.mass, dtype=np.float64)
            if np.any(self.mass <= 0):
                raise InvalidInput("mass entries must be positive")

    def to_dict(self) -> dict:
        return {
            "n_leapfrog": self.n_leapfrog,
            "n_samples": self.n_samples,
            "n_burnin": self.n_burnin,
            "step_size": self.step_size,
            "accept_band": list(self.accept_band),
            "target_accept": self.target_accept,
            "seed": self.seed,
            "adapt": self.adapt,
            "step_jitter": self.step_jitter,
            "mass": None if self.mass is None else "diagonal",
        }


@dataclass
class PosteriorSamples:
    samples: np.ndarray
    accepted: np.ndarray
    accept_prob: np.ndarray
    step_size: float
    logpost: np.ndarray
    burnin_accept_prob: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_divergent: int = 0
    layout: ParamLayout | None = None

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted))

    def __len__(self) -> int:
        return self.samples.shape[0]

    def block(self, name: str) -> np.ndarray:
        """Draws of one named layout slice, shape ``(M, *slice_shape)``."""
        if self.layout is None:
            raise InvalidInput("samples carry no layout")
        sl, shape = self.layout.slices()[name]
        return self.samples[:, sl].reshape(len(self), *shape)

    def stats(self) -> dict:
        return {
            "n_samples": int(len(self)),
            "acceptance_rate": self.acceptance_rate,
            "mean_accept_prob": float(np.mean(self.accept_prob)),
            "step_size": float(self.step_size),
            "n_divergent": int(self.n_divergent),
            "burnin_acceptance_rate": float(np.mean(self.burnin_accept_prob)) if len(self.burnin_accept_prob) else None,
        }

    def export(self, csv_path, json_path=None) -> None:
        """CSV of draws (header from the layout) plus a JSON statistics sidecar."""
        csv_path = Path(csv_path)
        header = self.layout.column_names() if self.layout is not None else [
            f"q[{i}]" for i in range(self.samples.shape[1])]
        try:
            csv_path.parent.mkdir(parents=True, exist_ok=True)
            with csv_path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                for row in self.samples:
                    w.writerow([repr(float(v)) for v in row])
            if json_path is None:
                json_path = csv_path.with_suffix(".json")
            Path(json_path).write_text(json.dumps(self.stats(), indent=1, sort_keys=True))
        except OSError as exc:
            raise IoError(f"cannot write samples to {csv_path}: {exc}") from exc


def leapfrog(q: np.ndarray, p: np.ndarray, grad_U: np.ndarray, potential: Callable, step: float,
             n_steps: int, inv_mass: np.ndarray | float = 1.0):
    """Velocity-Verlet integration of ``H = U(q) + p^T M^{-1} p / 2``.

    ``potential(q)`` returns ``(U, grad U)``.  Returns the end state
    ``(q, p, U, grad_U)``; ``U`` is ``inf`` if the trajectory left the
    finite region, in which case integration stops early.
    """
    q = q.copy()
    p = p - 0.5 * step * grad_U
    U = np.nan
    # overflow along a runaway trajectory is expected and handled below
    with np.errstate(all="ignore"):
        for i in range(n_steps):
            q = q + step * inv_mass * p
            U, grad_U = potential(q)
            if not np.isfinite(U) or not np.all(np.isfinite(grad_U)):
                return q, p, np.inf, grad_U
            if i < n_steps - 1:
                p = p - step * grad_U
        p = p - 0.5 * step * grad_U
    return q, p, U, grad_U


@dataclass
class AdaptState:
    """Robbins-Monro recursion on the log step size."""

    log_step: float
    t: int = 0
    target: float = 0.6
    t0: float = 10.0
    kappa: float = 0.6
    log_sum: float = 0.0
    n_avg: int = 0

    @property
    def step_size(self) -> float:
        return float(np.exp(self.log_step))

    def averaged_step_size(self) -> float:
        if self.n_avg == 0:
            return self.step_size
        return float(np.exp(self.log_sum / self.n_avg))


def adapt_step_size(state: AdaptState, accepted, average: bool = False) -> float:
    """Update the step size after one iteration; returns the new step size.

    ``accepted`` is the acceptance flag or the Metropolis acceptance
    probability.  The log step moves by ``(accepted - target) / (t + t0)^kappa``.
    """
    gamma = (state.t + state.t0) ** (-state.kappa)
    state.log_step += gamma * (float(accepted) - state.target)
    state.t += 1
    if average:
        state.log_sum += state.log_step
        state.n_avg += 1
    return state.step_size


def _as_potential(logpost: LogDensity):
    def potential(q):
        lp, g = logpost(q)
        return -lp, -np.asarray(g)

    return potential


def hmc_sample(logpost: LogDensity, init, cfg: HmcConfig, layout: ParamLayout | None = None,
               progress: Callable | None = None) -> PosteriorSamples:
    """Draw ``cfg.n_samples`` post-burn-in states with HMC.

    The step size adapts during burn-in only and is then frozen at the
    geometric mean of the iterates from the second half of burn-in.
    """
    q = np.array(getattr(init, "values", init), dtype=np.float64)
    D = q.size
    rng = np.random.default_rng(cfg.seed)
    potential = _as_potential(logpost)
    try:
        U, gU = potential(q)
    except (ArithmeticError, ValueError) as exc:
        raise InvalidInit(f"log posterior failed at the initial state: {exc}") from exc
    if not np.isfinite(U) or not np.all(np.isfinite(gU)):
        raise InvalidInit("log posterior is not finite at the initial state")
    mass = np.ones(D) if cfg.mass is None else np.broadcast_to(cfg.mass, (D,)).astype(np.float64)
    inv_mass = 1.0 / mass
    sqrt_mass = np.sqrt(mass)
    adapt = AdaptState(np.log(cfg.step_size), target=cfg.target_accept)
    B, M, L = cfg.n_burnin, cfg.n_samples, cfg.n_leapfrog
    draws = np.empty((M, D))
    accepted = np.zeros(M, dtype=bool)
    probs = np.zeros(M)
    lps = np.zeros(M)
    burn_probs = np.zeros(B)
    n_bad_burn = 0
    n_div = 0
    step = cfg.step_size
    for it in range(B + M):
        in_burn = it < B
        eps = step
        if cfg.step_jitter:
            eps = step * (1.0 + cfg.step_jitter * (2.0 * rng.random() - 1.0))
        p0 = rng.standard_normal(D) * sqrt_mass
        H0 = U + 0.5 * float(np.sum(p0 * p0 * inv_mass))
        q1, p1, U1, g1 = leapfrog(q, p0, gU, potential, eps, L, inv_mass)
        dH = np.inf
        if np.isfinite(U1):
            with np.errstate(over="ignore", invalid="ignore"):
                dH = U1 + 0.5 * float(np.sum(p1 * p1 * inv_mass)) - H0
        if not np.isfinite(dH) or dH > DIVERGENCE_THRESHOLD:
            alpha = 0.0
            n_div += 1
            if in_burn and not np.isfinite(dH):
                n_bad_burn += 1
        else:
            alpha = float(min(1.0, np.exp(-dH)))
        acc = rng.random() < alpha
        if acc:
            q, U, gU = q1, U1, g1
        if in_burn:
            burn_probs[it] = alpha
            if cfg.adapt:
                step = adapt_step_size(adapt, alpha, average=it >= B // 2)
                if it == B - 1:
                    step = adapt.averaged_step_size()
        else:
            j = it - B
            draws[j] = q
            accepted[j] = acc
            probs[j] = alpha
            lps[j] = -U
        if progress is not None:
            progress(it, alpha, step)
        if in_burn and it == B - 1 and B > 0 and n_bad_burn > 0.9 * B:
            raise SamplerStuck(f"{n_bad_burn} of {B} burn-in proposals were non-finite")
    log.debug("hmc: step %.3e acceptance %.3f", step, accepted.mean())
    return PosteriorSamples(draws, accepted, probs, step, lps, burn_probs, n_div, layout)


def run_chains(logpost: LogDensity, init, cfg: HmcConfig, n_chains: int,
               layout: ParamLayout | None = None) -> list[PosteriorSamples]:
    """Independent chains seeded ``cfg.seed + chain index`` (run sequentially)."""
    out = []
    for c in range(n_chains):
        sub = HmcConfig(**{**cfg.__dict__, "seed": cfg.seed + c})
        out.append(hmc_sample(logpost, init, sub, layout))
    return out


@dataclass
class MapResult:
    params: np.ndarray
    objective: float
    history: np.ndarray


def map_estimate(neg_logpost: LogDensity, init, lr: float = 1e-3, iterations: int = 5000,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> MapResult:
    """Adam minimisation of a negative log posterior ``f(q) -> (value, grad)``."""
    q = np.array(getattr(init, "values", init), dtype=np.float64)
    state = AdamState.zeros(q.size)
    hist = np.empty(iterations + 1)
    val = np.nan
    for it in range(iterations):
        val, g = neg_logpost(q)
        if not np.isfinite(val) or not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"MAP objective became non-finite at iteration {it}")
        hist[it] = val
        q, state = adam_step(q, g, state, lr, beta1, beta2, eps)
    val, _ = neg_logpost(q)
    if not np.isfinite(val):
        raise TrainingDiverged("MAP objective is non-finite at the final iterate")
    hist[iterations] = val
    return MapResult(q, float(val), hist)


def negate(logpost: LogDensity) -> LogDensity:
    def f(q):
        lp, g = logpost(q)
        return -lp, -np.asarray(g)

    return f


def effective_sample_size(x: np.ndarray) -> np.ndarray:
    """Per-column ESS from the initial positive sequence of autocorrelations."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    f = np.fft.rfft(xc, n=2 * n, axis=0)
    acov = np.fft.irfft(f * np.conj(f), axis=0)[:n] / n
    out = np.empty(x.shape[1])
    for j in range(x.shape[1]):
        if acov[0, j] <= 0:
            out[j] = n
            continue
        rho = acov[:, j] / acov[0, j]
        s = 0.0
        for k in range(0, n - 1, 2):
            pair = rho[k] + rho[k + 1]
            if pair < 0:
                break
            s += pair
        tau = max(2.0 * s - 1.0, 1.0 / n)
        out[j] = n / tau
    return out


def mc_standard_error(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return x.std(axis=0) / np.sqrt(effective_sample_size(x))


def split_layout(layout: ParamLayout, names: Sequence[str]) -> np.ndarray:
    """Boolean mask of the flat coordinates belonging to the named slices."""
    mask = np.zeros(layout.size, dtype=bool)
    slices = layout.slices()
    for n in names:
        mask[slices[n][0]] = True
    return mask
