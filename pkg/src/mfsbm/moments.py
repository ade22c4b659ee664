"""Moments of the mean-field super-Brownian density.

The n-th moment at (t, x) is a finite sum over index triples (see
``combinatorics``) of integrals over ordered times 0 < s_n' < ... < s_1 < t and
points z in R^n' of products of heat kernels, heat-convolved initial data and
the squared noise coefficient. ``moment_formula_mc`` estimates that sum by
Monte Carlo; ``picard_solve`` closes the loop when the coefficient depends on
the moments themselves.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _backend
from .combinatorics import enumerate_triples
from .errors import CapacityError, ContractError, DomainError, NumericError
from .kernels import InitialDensity, gauss_quadrature

__all__ = [
    "MAX_ORDER",
    "MCParams",
    "MCResult",
    "moment_formula_mc",
    "classical_second_moment",
    "moment_upper_bound",
    "fit_moment_bound",
    "MomentFunctional",
    "ConstantSigma",
    "LogisticSigma",
    "CosineSeriesSigma",
    "CallableSigma",
    "sigma_from_dict",
    "MomentField",
    "PicardResult",
    "initial_moment_field",
    "picard_step",
    "picard_solve",
    "picard_bound",
]

MAX_ORDER = 6
CHUNK = 2048
WORKERS_ENV = "MFSBM_WORKERS"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, *key)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class MCParams:
    samples: int = 20000
    seed: int = 0
    importance: bool | None = None  # None: on whenever there is a time integral
    stream_key: tuple = ()


@dataclass
class MCResult:
    estimate: float
    std_error: float
    terms: list = field(default_factory=list)  # (n', estimate, std_error, triples visited)
    samples: int = 0


@lru_cache(maxsize=64)
def triple_structure(n: int, n_prime: int):
    """Vectorised layout of all triples of (n, n').

    Returns (parents (T, n', 2), free (T, n') bool marking beta_k == 0,
    outer (T,) number of evaluation points not attached to an integration).
    """
    parents, free, outer = [], [], []
    for pair, taus in enumerate_triples(n, n_prime).blocks:
        a = sum(pair.alpha)
        slot_parent = np.array((0,) * a + pair.beta_positions, dtype=np.int_)
        order = np.argsort(taus, axis=1, kind="stable")
        parents.append(slot_parent[order].reshape(len(taus), n_prime, 2))
        free.append(np.broadcast_to(np.array(pair.beta) == 0, (len(taus), n_prime)))
        outer.append(np.full(len(taus), n - a))
    return (np.ascontiguousarray(np.concatenate(parents)), np.concatenate(free),
            np.concatenate(outer))


def _sample_times(rng, t, n_prime, m, importance):
    """Ordered times (m, n') on the simplex below t, with their density weights.

    With importance sampling the top time s_1 has t - s_1 = t * U^2, which
    cancels the (t - s_1)^(-1/2) singularity of the first coalescence.
    """
    u = rng.random((m, n_prime))
    if not importance:
        s = -np.sort(-t * u, axis=1)
        return s, t - s[:, 0], np.full(m, t ** n_prime / math.factorial(n_prime))
    gap = t * (1.0 - u[:, 0]) ** 2  # t - s_1, in (0, t]
    s1 = t - gap
    rest = -np.sort(-s1[:, None] * u[:, 1:], axis=1)
    s = np.concatenate([s1[:, None], rest], axis=1)
    weight = s1 ** (n_prime - 1) / math.factorial(n_prime - 1) * 2.0 * np.sqrt(t * gap)
    return s, gap, weight


def _sigma_eval(sigma_hat, s, z):
    if callable(sigma_hat):
        return np.asarray(sigma_hat(s, z), dtype=float)
    return float(sigma_hat)


def _chunk_values(n, n_prime, t, x, init, sigma_hat, delta, importance, rng, m, backend):
    parents, free, outer = triple_structure(n, n_prime)
    s, gap, tw = _sample_times(rng, t, n_prime, m, importance)
    xi = rng.standard_normal((m, n_prime))
    times = np.empty((m, n_prime + 1))
    times[:, 0] = t + delta
    times[:, 1:] = s
    pts, w = _backend.chain_weights(parents, times, x, xi, backend=backend)
    if importance:
        # first variable: both parents are the evaluation point; recompute its factor from the exact gap
        a = gap + delta
        w = w * (np.sqrt(4.0 * np.pi * (times[:, 0] - s[:, 0])) / np.sqrt(4.0 * np.pi * a))
    s_b = np.broadcast_to(s[None, :, :], pts.shape)
    sig = _sigma_eval(sigma_hat, s_b, pts)
    if np.ndim(sig) == 0:
        w = w * sig ** n_prime
    else:
        w = w * np.prod(sig, axis=2)
    for k in range(n_prime):
        col = free[:, k]
        if col.any():
            w[col] *= init.convolve(s[None, :, k], pts[col, :, k])
    p_outer = init.convolve(t + delta, x)
    w *= (p_outer ** outer)[:, None]
    vals = tw * w.sum(axis=0)
    if not np.all(np.isfinite(vals)):
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise NumericError("non-finite Monte Carlo weight", times=s[bad].tolist(),
                           points=pts[:, bad, :].tolist())
    return vals


def moment_formula_mc(n: int, t: float, x: float, init: InitialDensity, sigma_hat, mc: MCParams = MCParams(),
                      delta: float = 0.0, max_order: int = MAX_ORDER, backend=None) -> MCResult:
    """Monte Carlo estimate of E[X_t(x)^n] from the triple expansion.

    sigma_hat is the squared noise coefficient, either a constant or a callable
    (s, z) -> array. With delta > 0 the result is the moment of the field
    smoothed by p_delta, which only shifts the evaluation time of the outer
    kernels to t + delta. The n' = 0 term is computed exactly; each n' >= 1
    uses mc.samples draws shared by all triples of that n'.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise DomainError("moment order must be a positive integer")
    if n > max_order:
        raise CapacityError(f"moment order {n} exceeds the cap {max_order}")
    if t < 0 or delta < 0:
        raise DomainError("need t >= 0 and delta >= 0")
    base = float(init.convolve(t + delta, x)) if t + delta > 0 else float(init.density(x))
    terms = [(0, base ** n, 0.0, 1)]
    if t > 0 and mc.samples > 0:
        importance = True if mc.importance is None else mc.importance
        n_chunks = -(-mc.samples // CHUNK)
        for n_prime in range(1, n):
            parents, _, _ = triple_structure(n, n_prime)
            step = max(1, min(CHUNK, 2_000_000 // len(parents)))

            def run(c, n_prime=n_prime, step=step):
                rng = stream(mc.seed, *mc.stream_key, n, n_prime, c)
                m = min(CHUNK, mc.samples - c * CHUNK)
                return np.concatenate([
                    _chunk_values(n, n_prime, t, x, init, sigma_hat, delta, importance, rng,
                                  min(step, m - o), backend)
                    for o in range(0, m, step)])

            workers = worker_count()
            if workers > 1 and n_chunks > 1:
                with ThreadPoolExecutor(workers) as ex:
                    parts = list(ex.map(run, range(n_chunks)))
            else:
                parts = [run(c) for c in range(n_chunks)]
            vals = np.concatenate(parts)
            est = float(np.mean(vals))
            se = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
            terms.append((n_prime, est, se, len(parents)))
    estimate = math.fsum(e for _, e, _, _ in terms)
    se = math.sqrt(sum(s * s for _, _, s, _ in terms))
    return MCResult(estimate, se, terms, mc.samples)


def classical_second_moment(t: float, x: float, gamma: float, init: InitialDensity, delta: float = 0.0,
                            tol: float = 1e-11) -> float:
    """Second moment for a constant squared coefficient gamma, by 1-d quadrature.

    Uses p_r(u)^2 = (4 pi r)^(-1/2) p_{r/2}(u) and the semigroup property to
    reduce the space-time integral to one time integral, then s = t - v^2.
    """
    if t < 0 or delta < 0:
        raise DomainError("need t >= 0 and delta >= 0")
    first = float(init.convolve(t + delta, x)) ** 2 if t + delta > 0 else float(init.density(x)) ** 2
    if t == 0 or gamma == 0:
        return first

    def integrand(v):
        r = delta + v * v
        return 2.0 * v / math.sqrt(4.0 * math.pi * r) * float(init.convolve(t + 0.5 * (delta - v * v), x))

    if delta == 0:
        integrand = lambda v: float(init.convolve(t - 0.5 * v * v, x)) / math.sqrt(math.pi)
    return first + gamma * gauss_quadrature(integrand, 0.0, math.sqrt(t), tol=tol)


def moment_upper_bound(n: int, c1: float, c2: float) -> float:
    """c1 * c2^n * (n!)^(3/2), saturating at the largest finite float."""
    if c1 <= 0 or c2 <= 0:
        raise DomainError("bound constants must be positive")
    log_val = math.log(c1) + n * math.log(c2) + 1.5 * math.lgamma(n + 1)
    if log_val >= math.log(np.finfo(float).max):
        return float(np.finfo(float).max)
    return math.exp(log_val)


def fit_moment_bound(m1: float, m2: float) -> tuple:
    """Constants (c1, c2) for which the bound is tight at n = 1 and n = 2."""
    if m1 <= 0 or m2 <= 0:
        raise DomainError("moments must be positive to fit the bound")
    c2 = m2 / (m1 * 2.0 ** 1.5)
    return m1 / c2, c2


# --- moment-dependent coefficients -------------------------------------------------

class MomentFunctional:
    """Squared noise coefficient f(t, x, u_1, ..., u_N), positive and bounded by K0."""

    order: int = 0
    K0: float = math.inf

    def __call__(self, t, x, moments):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantSigma(MomentFunctional):
    gamma: float = 1.0
    order: int = 0

    @property
    def K0(self):
        return self.gamma

    def __call__(self, t, x, moments):
        return np.full(np.broadcast(t, x).shape, self.gamma)

    def to_dict(self):
        return {"kind": "constant", "gamma": self.gamma}


@dataclass(frozen=True)
class LogisticSigma(MomentFunctional):
    """lower + (upper - lower) * logistic(a_0 + sum_k a_k u_k); Lipschitz and bounded."""

    coefficients: tuple = (0.0, 1.0, 1.0)
    lower: float = 0.5
    upper: float = 2.0

    @property
    def order(self):
        return len(self.coefficients) - 1

    @property
    def K0(self):
        return self.upper

    def __call__(self, t, x, moments):
        a = np.asarray(self.coefficients, dtype=float)
        y = a[0] + np.asarray(moments, dtype=float)[..., : self.order] @ a[1:]
        return self.lower + (self.upper - self.lower) / (1.0 + np.exp(-y))

    def to_dict(self):
        return {"kind": "logistic", "coefficients": list(self.coefficients), "lower": self.lower,
                "upper": self.upper}


@dataclass(frozen=True)
class CosineSeriesSigma(MomentFunctional):
    """3 + sum_{n<=N} (-1)^n u_n / (2n)!, the moment series of 2 + cos(sqrt(X)) truncated at N."""

    order: int = 2
    K0: float = 4.0

    def __call__(self, t, x, moments):
        u = np.asarray(moments, dtype=float)[..., : self.order]
        c = np.array([(-1) ** k / math.factorial(2 * k) for k in range(1, self.order + 1)])
        return 3.0 + u @ c

    def to_dict(self):
        return {"kind": "cosine_series", "order": self.order, "K0": self.K0}


@dataclass(frozen=True)
class CallableSigma(MomentFunctional):
    func: object = None
    order: int = 0
    K0: float = math.inf

    def __call__(self, t, x, moments):
        return np.asarray(self.func(t, x, moments), dtype=float)

    def to_dict(self):
        raise DomainError("callable coefficients cannot be serialised")


def sigma_from_dict(d: dict) -> MomentFunctional:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind == "constant":
        return ConstantSigma(float(d.pop("gamma")))
    if kind == "logistic":
        return LogisticSigma(tuple(float(a) for a in d.pop("coefficients")), float(d.pop("lower", 0.5)),
                             float(d.pop("upper", 2.0)))
    if kind == "cosine_series":
        return CosineSeriesSigma(int(d.pop("order", 2)), float(d.pop("K0", 4.0)))
    raise DomainError(f"unknown coefficient kind {kind!r}")


# --- Picard iteration ----------------------------------------------------------------

def _gh_nodes(k=20):
    x, w = np.polynomial.hermite.hermgauss(k)
    return x, w / math.sqrt(math.pi)


@dataclass
class MomentField:
    """Moments u_1..u_N on a uniform (time, space) grid, with bilinear interpolation.

    values has shape (len(times), len(xs), N); std_errors matches it.
    """

    times: np.ndarray
    xs: np.ndarray
    values: np.ndarray
    std_errors: np.ndarray

    @property
    def order(self):
        return self.values.shape[2]

    def interpolate(self, t, x):
        """Bilinear interpolation, clamped at the grid edges; returns (..., N)."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        t, x = np.broadcast_arrays(t, x)
        ti = np.clip((t - self.times[0]) / (self.times[1] - self.times[0]), 0, len(self.times) - 1)
        xi = np.clip((x - self.xs[0]) / (self.xs[1] - self.xs[0]), 0, len(self.xs) - 1)
        i0 = np.minimum(ti.astype(np.int64), len(self.times) - 2)
        j0 = np.minimum(xi.astype(np.int64), len(self.xs) - 2)
        ft = (ti - i0)[..., None]
        fx = (xi - j0)[..., None]
        v = self.values
        return ((1 - ft) * ((1 - fx) * v[i0, j0] + fx * v[i0, j0 + 1])
                + ft * ((1 - fx) * v[i0 + 1, j0] + fx * v[i0 + 1, j0 + 1]))


class _FieldSigma:
    """sigma_hat^2(s, z) built from a moment field and a coefficient.

    With delta > 0 the coefficient's square root is smoothed by p_delta in
    space (Gauss-Hermite) on the grid and the result is squared.
    """

    def __init__(self, field_: MomentField, sigma: MomentFunctional, delta: float = 0.0):
        self.sigma = sigma
        grid_t, grid_x = np.meshgrid(field_.times, field_.xs, indexing="ij")
        if delta > 0:
            nodes, weights = _gh_nodes()
            acc = np.zeros(grid_t.shape)
            for y, w in zip(nodes, weights):
                shifted = grid_x + math.sqrt(2.0 * delta) * y
                vals = sigma(grid_t, shifted, field_.interpolate(grid_t, shifted))
                _check_contract(vals, sigma)
                acc += w * np.sqrt(vals)
            sq = acc ** 2
            self.field = MomentField(field_.times, field_.xs, sq[..., None], np.zeros(sq.shape + (1,)))
            self.smoothed = True
        else:
            _check_contract(sigma(grid_t, grid_x, field_.values), sigma)
            self.field = field_
            self.smoothed = False

    def __call__(self, s, z):
        u = self.field.interpolate(s, z)
        if self.smoothed:
            return u[..., 0]
        return self.sigma(s, z, u)


def _check_contract(vals, sigma):
    vals = np.asarray(vals)
    if not np.all(np.isfinite(vals)) or np.any(vals <= 0) or np.any(vals > sigma.K0 * (1 + 1e-12)):
        bad = vals[~((vals > 0) & (vals <= sigma.K0 * (1 + 1e-12)))]
        raise ContractError(f"coefficient leaves (0, K0={sigma.K0}]: e.g. {bad.ravel()[:3].tolist()}")


def default_grid(init: InitialDensity, horizon: float, n_t: int = 32, n_x: int = 64):
    half = 6.0 * (init.spread + math.sqrt(horizon))
    return np.linspace(0.0, horizon, n_t), np.linspace(-half, half, n_x)


def initial_moment_field(init: InitialDensity, times, xs, order: int) -> MomentField:
    """Powers of the initial density, held constant in time (the Picard seed argument)."""
    d = init.density(xs)
    vals = np.stack([d ** k for k in range(1, order + 1)], axis=-1)
    vals = np.broadcast_to(vals, (len(times),) + vals.shape).copy()
    return MomentField(np.asarray(times, float), np.asarray(xs, float), vals, np.zeros(vals.shape))


def _solve_on_grid(init, sigma_hat, times, xs, order, mc, delta, backend):
    vals = np.empty((len(times), len(xs), order))
    ses = np.zeros_like(vals)
    for j, t in enumerate(times):
        for i, x in enumerate(xs):
            for n in range(1, order + 1):
                if t == 0:
                    base = float(init.density(x)) if delta == 0 else float(init.convolve(delta, x))
                    vals[j, i, n - 1] = base ** n
                    continue
                node_mc = MCParams(mc.samples, mc.seed, mc.importance, mc.stream_key + (j, i))
                r = moment_formula_mc(n, float(t), float(x), init, sigma_hat, node_mc, delta=delta,
                                      backend=backend)
                vals[j, i, n - 1] = r.estimate
                ses[j, i, n - 1] = r.std_error
    return MomentField(np.asarray(times, float), np.asarray(xs, float), vals, ses)


def picard_step(previous: MomentField, init: InitialDensity, sigma: MomentFunctional, mc: MCParams,
                delta: float = 0.0, backend=None) -> MomentField:
    """One Picard update: moments of the linear equation whose coefficient is frozen at ``previous``.

    The stream keys depend only on (seed, grid node, order), so successive
    steps reuse the same random numbers.
    """
    sigma_hat = _FieldSigma(previous, sigma, delta)
    return _solve_on_grid(init, sigma_hat, previous.times, previous.xs, sigma.order or previous.order, mc,
                          delta, backend)


def sup_difference(a: MomentField, b: MomentField) -> np.ndarray:
    """h(t) = sum_n sup_x |a_n(t, x) - b_n(t, x)| per grid time."""
    return np.abs(a.values - b.values).max(axis=1).sum(axis=1)


def picard_bound(k: int, C: float, t: float) -> float:
    """Shape C^k t^(k/2) / Gamma(k/2 + 1) of the difference bound after k steps."""
    return C ** k * t ** (k / 2) / math.gamma(k / 2 + 1)


@dataclass
class PicardResult:
    field: MomentField
    diagnostics: list  # h^(k) = max_t sum_n sup_x |u^(k+1) - u^(k)|
    history: list  # every iterate u^(0), u^(1), ...
    converged: bool

    @property
    def iterations(self):
        return len(self.history) - 1


def picard_solve(init: InitialDensity, sigma: MomentFunctional, horizon: float, max_iter: int = 20,
                 tol: float = 1e-10, mc: MCParams = MCParams(samples=2000), grid=(32, 64), delta: float = 0.0,
                 keep_history: bool = True, backend=None) -> PicardResult:
    """Iterate u^(k) = step(u^(k-1)) from the seed built on powers of X0.

    Stops when the sup difference drops below tol or after max_iter steps.
    """
    if sigma.order < 1:
        raise DomainError("Picard iteration needs a coefficient depending on at least one moment")
    times, xs = default_grid(init, horizon, *grid)
    seed_arg = initial_moment_field(init, times, xs, sigma.order)
    if delta > 0:
        seed_arg.values[:] = np.stack([init.convolve(delta, xs) ** k for k in range(1, sigma.order + 1)], -1)
    current = picard_step(seed_arg, init, sigma, mc, delta, backend)
    history = [current]
    diags = []
    converged = False
    for _ in range(max_iter):
        nxt = picard_step(current, init, sigma, mc, delta, backend)
        h = float(sup_difference(nxt, current).max())
        diags.append(h)
        history.append(nxt)
        if not keep_history:
            history = history[-2:]
        current = nxt
        if h < tol:
            converged = True
            break
    return PicardResult(current, diags, history, converged)
