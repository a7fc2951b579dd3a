"""Laplacian mixture distributions for per-ray colour forecasts.

A ray's predictive distribution is a mixture of Laplace components that
shares one set of mixing weights across the R, G and B channels, with the
channels treated as independent.  Two representations are provided:

* :class:`LaplacianMixture1D` / :class:`RayForecast` -- single-ray values with
  a scalar fast path, used for per-pixel queries.
* :class:`ForecastBatch` -- a stack of rays stored as dense arrays, used for
  whole-image work (confidence levels, NLL, IQR maps).

Rays with fewer components are padded with zero-weight components inside a
batch; zero-weight components never influence any result.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize

from .errors import DomainError, ValidationError

WEIGHT_TOL = 1e-9
DENSITY_FLOOR = 1e-12
CHANNELS = ("R", "G", "B")


def _laplace_cdf(x, loc, scale):
    z = (np.asarray(x, dtype=float) - loc) / scale
    # clip keeps exp() finite in the unused branch
    return np.where(z < 0, 0.5 * np.exp(np.minimum(z, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(z, 0.0)))


def _laplace_pdf(x, loc, scale):
    return np.exp(-np.abs(np.asarray(x, dtype=float) - loc) / scale) / (2.0 * scale)


def _laplace_ppf(q, loc, scale):
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(q < 0.5, loc + scale * np.log(2.0 * q), loc - scale * np.log(2.0 * (1.0 - q)))


def _check_weights(weights: np.ndarray) -> np.ndarray:
    if np.any(~np.isfinite(weights)) or np.any(weights < 0):
        raise ValidationError("mixture weights must be finite and non-negative")
    total = weights.sum(axis=-1, keepdims=True)
    if np.any(np.abs(total - 1.0) > WEIGHT_TOL):
        raise ValidationError(f"mixture weights must sum to 1 (got {np.ravel(total)[:3]} ...)")
    return weights / total


@dataclass(frozen=True, eq=False)
class LaplacianMixture1D:
    """One-dimensional mixture of Laplace distributions.

    Weights are renormalised when their sum is within ``WEIGHT_TOL`` of one;
    larger deviations raise :class:`ValidationError`.
    """

    weights: np.ndarray
    locations: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float)).copy()
        mu = np.atleast_1d(np.asarray(self.locations, dtype=float)).copy()
        b = np.atleast_1d(np.asarray(self.scales, dtype=float)).copy()
        if w.ndim != 1 or not (len(w) == len(mu) == len(b)) or len(w) == 0:
            raise ValidationError("weights, locations and scales must be equal-length non-empty vectors")
        if np.any(~np.isfinite(mu)):
            raise ValidationError("locations must be finite")
        if np.any(~np.isfinite(b)) or np.any(b <= 0):
            raise ValidationError("scales must be positive")
        w = _check_weights(w)
        for name, arr in (("weights", w), ("locations", mu), ("scales", b)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        # plain-float copies of the active components for the scalar path
        active = w > 0
        object.__setattr__(
            self, "_terms", tuple(zip(w[active].tolist(), mu[active].tolist(), b[active].tolist()))
        )

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def __eq__(self, other):
        if not isinstance(other, LaplacianMixture1D):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.locations, other.locations)
            and np.array_equal(self.scales, other.scales)
        )

    __hash__ = None

    def cdf(self, x):
        if isinstance(x, (float, int)):
            total = 0.0
            for w, mu, b in self._terms:
                z = (x - mu) / b
                total += w * (0.5 * math.exp(z) if z < 0 else 1.0 - 0.5 * math.exp(-z))
            return total
        x = np.asarray(x, dtype=float)
        return np.sum(self.weights * _laplace_cdf(x[..., None], self.locations, self.scales), axis=-1)

    def pdf(self, x):
        if isinstance(x, (float, int)):
            if math.isinf(x):
                return 0.0
            return sum(w * math.exp(-abs(x - mu) / b) / (2.0 * b) for w, mu, b in self._terms)
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore"):
            out = np.sum(self.weights * _laplace_pdf(x[..., None], self.locations, self.scales), axis=-1)
        return np.where(np.isinf(x), 0.0, out)

    def quantile(self, q: float) -> float:
        """Inverse CDF by bracketed root finding.

        The bracket ``[min_j Q_j(q), max_j Q_j(q)]`` over the component
        quantiles always contains the mixture quantile.
        """
        q = float(q)
        if not 0.0 < q < 1.0:
            raise DomainError(f"quantile level must lie in (0, 1), got {q}")
        comp = [mu + b * math.log(2 * q) if q < 0.5 else mu - b * math.log(2 * (1 - q)) for _, mu, b in self._terms]
        lo, hi = min(comp), max(comp)
        if hi - lo <= 0.0:
            return lo
        return optimize.brentq(lambda x: self.cdf(x) - q, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)

    def moments(self) -> tuple[float, float]:
        mean = float(np.sum(self.weights * self.locations))
        second = float(np.sum(self.weights * (2.0 * self.scales**2 + self.locations**2)))
        return mean, max(second - mean**2, 0.0)

    def sample(self, rng_seed: int, n: int) -> np.ndarray:
        if n < 1:
            raise ValidationError("sample size must be >= 1")
        rng = np.random.default_rng(rng_seed)
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        u = rng.random(n)
        return _laplace_ppf(np.clip(u, 2.0**-53, 1 - 2.0**-53), self.locations[comp], self.scales[comp])


def mixture_cdf(mix: LaplacianMixture1D, x):
    return mix.cdf(x)


def mixture_pdf(mix: LaplacianMixture1D, x):
    return mix.pdf(x)


def mixture_quantile(mix: LaplacianMixture1D, q: float) -> float:
    return mix.quantile(q)


def mixture_moments(mix: LaplacianMixture1D) -> tuple[float, float]:
    """Return ``(mean, variance)`` in closed form."""
    return mix.moments()


def mixture_sample(mix: LaplacianMixture1D, rng_seed: int, n: int) -> np.ndarray:
    """Draw ``n`` i.i.d. samples; identical seeds give identical draws."""
    return mix.sample(rng_seed, n)


@dataclass(frozen=True, eq=False)
class RayForecast:
    """Colour forecast for one ray: three channel mixtures with shared weights."""

    channels: tuple[LaplacianMixture1D, LaplacianMixture1D, LaplacianMixture1D]

    def __post_init__(self):
        chans = tuple(self.channels)
        if len(chans) != 3:
            raise ValidationError("a ray forecast needs exactly three channels")
        n = chans[0].n_components
        for c in chans[1:]:
            if c.n_components != n or not np.allclose(c.weights, chans[0].weights, rtol=0, atol=1e-12):
                raise ValidationError("all channels of a ray must share the same mixing weights")
        object.__setattr__(self, "channels", chans)

    @classmethod
    def from_arrays(cls, weights, locations, scales) -> "RayForecast":
        """Build from ``weights (M,)``, ``locations (3, M)``, ``scales (3, M)``."""
        locations = np.asarray(locations, dtype=float)
        scales = np.asarray(scales, dtype=float)
        return cls(tuple(LaplacianMixture1D(weights, locations[c], scales[c]) for c in range(3)))


def _as_colors(truths, n: int) -> np.ndarray:
    arr = np.asarray(truths, dtype=float).reshape(-1, 3)
    if len(arr) != n:
        raise ValidationError(f"expected {n} colours, got {len(arr)}")
    return arr


class ForecastBatch:
    """Dense stack of ``N`` ray forecasts.

    Attributes
    ----------
    weights : (N, M) array
    locations : (N, 3, M) array
    scales : (N, 3, M) array
    """

    def __init__(self, weights, locations, scales):
        w = np.asarray(weights, dtype=float)
        mu = np.asarray(locations, dtype=float)
        b = np.asarray(scales, dtype=float)
        if w.ndim != 2 or mu.shape != (w.shape[0], 3, w.shape[1]) or b.shape != mu.shape:
            raise ValidationError(
                f"inconsistent batch shapes: weights {w.shape}, locations {mu.shape}, scales {b.shape}"
            )
        if np.any(~np.isfinite(mu)) or np.any(~np.isfinite(b)) or np.any(b <= 0):
            raise ValidationError("locations must be finite and scales positive")
        self.weights = _check_weights(w)
        self.locations = mu
        self.scales = b
        for arr in (self.weights, self.locations, self.scales):
            arr.flags.writeable = False

    def __len__(self) -> int:
        return self.weights.shape[0]

    @property
    def n_components(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def from_rays(cls, rays: Sequence[RayForecast]) -> "ForecastBatch":
        if len(rays) == 0:
            raise ValidationError("empty forecast list")
        m = max(r.channels[0].n_components for r in rays)
        n = len(rays)
        w = np.zeros((n, m))
        mu = np.zeros((n, 3, m))
        b = np.ones((n, 3, m))
        for i, ray in enumerate(rays):
            k = ray.channels[0].n_components
            w[i, :k] = ray.channels[0].weights
            for c, ch in enumerate(ray.channels):
                mu[i, c, :k] = ch.locations
                b[i, c, :k] = ch.scales
        return cls(w, mu, b)

    def ray(self, i: int) -> RayForecast:
        active = self.weights[i] > 0
        return RayForecast.from_arrays(
            self.weights[i, active], self.locations[i][:, active], self.scales[i][:, active]
        )

    def subset(self, index) -> "ForecastBatch":
        return ForecastBatch(self.weights[index], self.locations[index], self.scales[index])

    def cdf(self, colors) -> np.ndarray:
        """Per-channel CDF at ``colors (N, 3)``; returns ``(N, 3)``."""
        x = _as_colors(colors, len(self))
        comp = _laplace_cdf(x[..., None], self.locations, self.scales)
        return np.einsum("nm,ncm->nc", self.weights, comp)

    def pdf(self, colors) -> np.ndarray:
        x = _as_colors(colors, len(self))
        comp = _laplace_pdf(x[..., None], self.locations, self.scales)
        return np.einsum("nm,ncm->nc", self.weights, comp)

    def mean(self) -> np.ndarray:
        return np.einsum("nm,ncm->nc", self.weights, self.locations)

    def variance(self) -> np.ndarray:
        second = np.einsum("nm,ncm->nc", self.weights, 2.0 * self.scales**2 + self.locations**2)
        return np.maximum(second - self.mean() ** 2, 0.0)

    def quantile(self, q) -> np.ndarray:
        """Per-channel quantiles; ``q`` broadcasts against ``(N, 3)``."""
        q = np.broadcast_to(np.asarray(q, dtype=float), (len(self), 3))
        return mixture_quantile_array(self.weights[:, None, :], self.locations, self.scales, q)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """One draw per ray and channel, components picked once per ray."""
        u = rng.random(len(self))
        comp = (np.cumsum(self.weights, axis=1) < u[:, None]).sum(axis=1)
        comp = np.minimum(comp, self.n_components - 1)
        idx = np.arange(len(self))
        mu = self.locations[idx, :, comp]
        b = self.scales[idx, :, comp]
        v = np.clip(rng.random((len(self), 3)), 2.0**-53, 1 - 2.0**-53)
        return _laplace_ppf(v, mu, b)


def mixture_quantile_array(weights, locations, scales, q, max_iter: int = 200) -> np.ndarray:
    """Vectorised mixture quantiles by safeguarded Newton inside a bisection bracket.

    ``weights``, ``locations`` and ``scales`` share a trailing component axis
    and broadcast against ``q[..., None]``.
    """
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0) | (q >= 1)):
        raise DomainError("quantile levels must lie in (0, 1)")
    w, mu, b = np.broadcast_arrays(
        np.asarray(weights, dtype=float), np.asarray(locations, dtype=float), np.asarray(scales, dtype=float)
    )
    comp = _laplace_ppf(q[..., None], mu, b)
    lo = np.min(np.where(w > 0, comp, np.inf), axis=-1)
    hi = np.max(np.where(w > 0, comp, -np.inf), axis=-1)
    lo, hi = np.broadcast_arrays(lo, hi)
    lo, hi = lo.copy(), hi.copy()
    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        F = np.sum(w * _laplace_cdf(x[..., None], mu, b), axis=-1)
        g = F - q
        width = hi - lo
        done = (np.abs(g) <= 1e-13) | (width <= 1e-15 * (1.0 + np.abs(x)))
        if np.all(done):
            break
        f = np.sum(w * _laplace_pdf(x[..., None], mu, b), axis=-1)
        lo = np.where(g < 0, x, lo)
        hi = np.where(g > 0, x, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = x - g / f
        ok = np.isfinite(step) & (step > lo) & (step < hi)
        x = np.where(done, x, np.where(ok, step, 0.5 * (lo + hi)))
    return x


def forecast_nll(forecasts, truths, calibration=None) -> float:
    """Mean negative log predictive density over rays and channels.

    Parameters
    ----------
    forecasts : ForecastBatch or sequence of RayForecast
    truths : (N, 3) observed colours
    calibration : None, a single map shared by all channels, or three maps
        Anything with a ``slope(p)`` method giving the derivative of the
        calibration map.  The calibrated density is ``slope(F(x)) * f(x)``.
    """
    return float(np.mean(channel_nll(forecasts, truths, calibration)))


def channel_nll(forecasts, truths, calibration=None) -> np.ndarray:
    """Per-channel mean negative log density, shape ``(3,)``; see :func:`forecast_nll`."""
    batch = forecasts if isinstance(forecasts, ForecastBatch) else ForecastBatch.from_rays(list(forecasts))
    x = _as_colors(truths, len(batch))
    dens = batch.pdf(x)
    if calibration is not None:
        maps = _per_channel(calibration)
        p = batch.cdf(x)
        dens = dens * np.stack([maps[c].slope(p[:, c]) for c in range(3)], axis=1)
    return np.mean(-np.log(np.maximum(dens, DENSITY_FLOOR)), axis=0)


def _per_channel(maps):
    if hasattr(maps, "slope"):
        return (maps, maps, maps)
    maps = tuple(maps)
    if len(maps) != 3:
        raise ValidationError("expected one calibration map or three per-channel maps")
    return maps
