"""Heat kernel, initial densities and their heat-semigroup convolutions."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate

from .errors import DomainError, QuadratureError

__all__ = [
    "heat_kernel",
    "heat_kernel_sq",
    "gauss_quadrature",
    "InitialDensity",
    "GaussianMixture",
    "Bump",
    "heat_convolve_initial",
    "initial_from_dict",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)
# 64-point Gauss-Legendre rule used for vectorised bump convolutions
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def heat_kernel(t, x):
    """Gaussian heat kernel (2 pi t)^(-1/2) exp(-x^2 / (2 t)), vectorised.

    Raises DomainError if any t is not strictly positive.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("heat kernel needs t > 0")
    # peak times a factor <= 1, so the value never rounds above the peak
    out = np.power(2.0 * np.pi * t, -0.5) * np.exp(-0.5 * x * x / t)
    return out if out.ndim else float(out)


def heat_kernel_sq(t, x):
    """Square of the heat kernel, via p_t(x)^2 = (4 pi t)^(-1/2) p_{t/2}(x)."""
    t = np.asarray(t, dtype=float)
    return heat_kernel(0.5 * t, x) / np.sqrt(4.0 * np.pi * t)


def gauss_quadrature(f, a, b, tol=1e-10, max_subdivisions=200, points=None):
    """Adaptive Gauss-Kronrod integral of a scalar function on [a, b].

    Raises QuadratureError (with the best estimate and error bound) when the
    subdivision budget runs out before the absolute tolerance is met.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(
                f, a, b, epsabs=tol, epsrel=0.0, limit=max_subdivisions, points=points
            )
        except integrate.IntegrationWarning as exc:
            # rerun quietly to recover the best estimate
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                val, err = integrate.quad(
                    f, a, b, epsabs=tol, epsrel=0.0, limit=max_subdivisions, points=points
                )
            raise QuadratureError(str(exc).strip().splitlines()[0], val, err) from None
    if not err <= tol:
        raise QuadratureError("tolerance not reached", val, err)
    return val


class InitialDensity:
    """Nonnegative, bounded, integrable initial density on the real line."""

    kind = "abstract"

    def density(self, x):
        raise NotImplementedError

    def convolve(self, t, x):
        """(p_t * density)(x); t == 0 returns the density itself."""
        raise NotImplementedError

    @property
    def total_mass(self) -> float:
        raise NotImplementedError

    @property
    def sup_bound(self) -> float:
        """An upper bound on the sup norm."""
        raise NotImplementedError

    @property
    def spread(self) -> float:
        """Distance from the origin beyond which the density is negligible, in std units."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw i.i.d. points from the normalised density."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianMixture(InitialDensity):
    """sum_i weights[i] * p_{variances[i]}(x - means[i])."""

    weights: tuple
    means: tuple
    variances: tuple
    kind: str = field(default="gaussian_mixture", init=False)

    def __post_init__(self):
        w, m, v = (tuple(float(a) for a in np.atleast_1d(arr)) for arr in
                   (self.weights, self.means, self.variances))
        if not (len(w) == len(m) == len(v)) or not w:
            raise DomainError("mixture components must have matching nonzero length")
        if any(a < 0 or not math.isfinite(a) for a in w):
            raise DomainError("mixture weights must be finite and nonnegative")
        if any(not s > 0 for s in v):
            raise DomainError("mixture variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    def _arrays(self):
        return (np.array(self.weights), np.array(self.means), np.array(self.variances))

    def density(self, x):
        return self.convolve(0.0, x)

    def convolve(self, t, x):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("convolution time must be nonnegative")
        x = np.asarray(x, dtype=float)
        w, m, v = self._arrays()
        var = t[..., None] + v
        d = x[..., None] - m
        out = np.sum(w * np.exp(-0.5 * d * d / var) / np.sqrt(2.0 * np.pi * var), axis=-1)
        return out if out.ndim else float(out)

    @property
    def total_mass(self) -> float:
        return float(sum(self.weights))

    @property
    def sup_bound(self) -> float:
        return float(sum(a / math.sqrt(2 * math.pi * s) for a, s in zip(self.weights, self.variances)))

    @property
    def spread(self) -> float:
        return max(abs(a) for a in self.means) + math.sqrt(max(self.variances))

    def sample(self, rng, size):
        w, m, v = self._arrays()
        comp = rng.choice(len(w), size=size, p=w / w.sum())
        return m[comp] + np.sqrt(v[comp]) * rng.standard_normal(size)

    def to_dict(self):
        return {"kind": self.kind, "weights": list(self.weights), "means": list(self.means),
                "variances": list(self.variances)}


@dataclass(frozen=True)
class Bump(InitialDensity):
    """Smooth compactly supported bump height * exp(1 - 1/(1 - r^2)), r = (x - center)/radius."""

    center: float = 0.0
    radius: float = 1.0
    height: float = 1.0
    tol: float = 1e-10
    kind: str = field(default="bump", init=False)

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError("bump radius must be positive")
        if not self.height >= 0:
            raise DomainError("bump height must be nonnegative")

    def density(self, x):
        x = np.asarray(x, dtype=float)
        r2 = ((x - self.center) / self.radius) ** 2
        inside = r2 < 1.0
        out = np.zeros_like(r2)
        out[inside] = self.height * np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
        return out if out.ndim else float(out)

    def _convolve_scalar(self, t, x):
        lo, hi = self.center - self.radius, self.center + self.radius
        lo_w, hi_w = max(lo, x - 40 * math.sqrt(t)), min(hi, x + 40 * math.sqrt(t))
        if lo_w >= hi_w:
            return 0.0
        pts = [x] if lo_w < x < hi_w else None
        f = lambda z: heat_kernel(t, x - z) * self.density(z)
        return gauss_quadrature(f, lo_w, hi_w, tol=self.tol, points=pts)

    def convolve(self, t, x):
        t_arr = np.asarray(t, dtype=float)
        x_arr = np.asarray(x, dtype=float)
        if np.any(t_arr < 0):
            raise DomainError("convolution time must be nonnegative")
        if t_arr.ndim == 0 and x_arr.ndim == 0:
            return self.density(x_arr) if t_arr == 0 else self._convolve_scalar(float(t_arr), float(x_arr))
        t_arr, x_arr = np.broadcast_arrays(t_arr, x_arr)
        out = np.empty(t_arr.shape)
        zero = t_arr == 0
        out[zero] = self.density(x_arr[zero])
        pos = ~zero
        if np.any(pos):
            tt, xx = t_arr[pos], x_arr[pos]
            sd = np.sqrt(tt)
            lo = np.maximum(self.center - self.radius, xx - 12 * sd)
            hi = np.minimum(self.center + self.radius, xx + 12 * sd)
            width = np.clip(hi - lo, 0.0, None)
            z = lo[:, None] + 0.5 * width[:, None] * (_GL_NODES + 1.0)
            d = xx[:, None] - z
            vals = np.exp(-0.5 * d * d / tt[:, None]) / np.sqrt(2 * np.pi * tt[:, None]) * self.density(z)
            out[pos] = 0.5 * width * (vals @ _GL_WEIGHTS)
        return out

    @cached_property
    def _mass(self):
        lo, hi = self.center - self.radius, self.center + self.radius
        return gauss_quadrature(self.density, lo, hi, tol=self.tol)

    @property
    def total_mass(self) -> float:
        return self._mass

    @property
    def sup_bound(self) -> float:
        return float(self.height)

    @property
    def spread(self) -> float:
        return abs(self.center) + self.radius

    def sample(self, rng, size):
        out = np.empty(0)
        while out.size < size:
            k = max(2 * (size - out.size), 16)
            z = rng.uniform(self.center - self.radius, self.center + self.radius, k)
            keep = rng.uniform(0.0, self.height, k) < self.density(z)
            out = np.concatenate([out, z[keep]])
        return out[:size]

    def to_dict(self):
        return {"kind": self.kind, "center": self.center, "radius": self.radius, "height": self.height}


def heat_convolve_initial(t, x, init: InitialDensity):
    """(p_t * X0)(x) for t >= 0; exact for mixtures, adaptive quadrature for bumps."""
    return init.convolve(t, x)


def initial_from_dict(d: dict) -> InitialDensity:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind == "gaussian_mixture":
        return GaussianMixture(**d)
    if kind == "bump":
        return Bump(**d)
    raise DomainError(f"unknown initial density kind {kind!r}")
