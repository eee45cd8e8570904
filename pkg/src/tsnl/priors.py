"""Independent-marginal priors with an unconstrained reparameterization.

Every marginal maps its constrained value ``theta`` to an unconstrained
coordinate ``z`` (log for positive quantities, a scaled inverse-tanh for
bounded ones). Samplers work in ``z``; :meth:`Prior.log_prob_z` already
contains the log-Jacobian of ``z -> theta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

_LOG_2PI = math.log(2.0 * math.pi)


def _log_sech2(z):
    # log(1 - tanh(z)^2), stable for large |z|
    a = np.abs(z)
    return 2.0 * (math.log(2.0) - a - np.log1p(np.exp(-2.0 * a)))


class Marginal:
    """One prior coordinate. Subclasses implement the five maps below."""

    gaussian_in_z = False

    def sample(self, rng, size):
        raise NotImplementedError

    def log_prob(self, theta):
        raise NotImplementedError

    def to_z(self, theta):
        raise NotImplementedError

    def from_z(self, z):
        raise NotImplementedError

    def log_prob_z(self, z):
        raise NotImplementedError

    def in_support(self, theta):
        return np.isfinite(self.log_prob(theta))

    def z_moments(self):
        """Mean and stdev of the prior pushed to ``z`` (Gaussian marginals only)."""
        raise TypeError(f"{type(self).__name__} is not Gaussian on the unconstrained scale")


@dataclass(frozen=True)
class Normal(Marginal):
    mean: float = 0.0
    std: float = 1.0
    gaussian_in_z = True

    def sample(self, rng, size):
        return rng.normal(self.mean, self.std, size)

    def log_prob(self, theta):
        theta = np.asarray(theta, dtype=float)
        return -0.5 * ((theta - self.mean) / self.std) ** 2 - math.log(self.std) - 0.5 * _LOG_2PI

    def to_z(self, theta):
        return np.asarray(theta, dtype=float)

    def from_z(self, z):
        return np.asarray(z, dtype=float)

    def log_prob_z(self, z):
        return self.log_prob(z)

    def z_moments(self):
        return self.mean, self.std


@dataclass(frozen=True)
class LogNormal(Marginal):
    """``log(theta) ~ N(mu, sigma^2)``."""

    mu: float = 0.0
    sigma: float = 1.0
    gaussian_in_z = True

    def sample(self, rng, size):
        return np.exp(rng.normal(self.mu, self.sigma, size))

    def log_prob(self, theta):
        theta = np.asarray(theta, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            logt = np.log(np.where(theta > 0, theta, 1.0))
            out = (-0.5 * ((logt - self.mu) / self.sigma) ** 2 - math.log(self.sigma)
                   - 0.5 * _LOG_2PI - logt)
        return np.where(theta > 0, out, -np.inf)

    def to_z(self, theta):
        return np.log(np.asarray(theta, dtype=float))

    def from_z(self, z):
        return np.exp(np.asarray(z, dtype=float))

    def log_prob_z(self, z):
        z = np.asarray(z, dtype=float)
        return -0.5 * ((z - self.mu) / self.sigma) ** 2 - math.log(self.sigma) - 0.5 * _LOG_2PI

    def z_moments(self):
        return self.mu, self.sigma


@dataclass(frozen=True)
class Uniform(Marginal):
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if not self.high > self.low:
            raise ValueError("Uniform needs high > low")

    def sample(self, rng, size):
        return rng.uniform(self.low, self.high, size)

    def log_prob(self, theta):
        theta = np.asarray(theta, dtype=float)
        inside = (theta >= self.low) & (theta <= self.high)
        return np.where(inside, -math.log(self.high - self.low), -np.inf)

    def to_z(self, theta):
        s = 2.0 * (np.asarray(theta, dtype=float) - self.low) / (self.high - self.low) - 1.0
        return np.arctanh(s)

    def from_z(self, z):
        return self.low + (self.high - self.low) * 0.5 * (np.tanh(z) + 1.0)

    def log_prob_z(self, z):
        # uniform density times |dtheta/dz| reduces to a sech^2 / 2 density in z
        return _log_sech2(np.asarray(z, dtype=float)) - math.log(2.0)


@dataclass(frozen=True)
class LogUniform(Marginal):
    """``log(theta)`` uniform on ``[log(low), log(high)]``."""

    low: float = 1e-4
    high: float = 1.0

    def __post_init__(self):
        if not self.high > self.low > 0:
            raise ValueError("LogUniform needs high > low > 0")

    @property
    def _a(self):
        return math.log(self.low)

    @property
    def _b(self):
        return math.log(self.high)

    def sample(self, rng, size):
        return np.exp(rng.uniform(self._a, self._b, size))

    def log_prob(self, theta):
        theta = np.asarray(theta, dtype=float)
        inside = (theta >= self.low) & (theta <= self.high)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -np.log(np.where(inside, theta, 1.0)) - math.log(self._b - self._a)
        return np.where(inside, out, -np.inf)

    def to_z(self, theta):
        v = np.log(np.asarray(theta, dtype=float))
        return np.arctanh(2.0 * (v - self._a) / (self._b - self._a) - 1.0)

    def from_z(self, z):
        v = self._a + (self._b - self._a) * 0.5 * (np.tanh(z) + 1.0)
        return np.clip(np.exp(v), self.low, self.high)

    def log_prob_z(self, z):
        return _log_sech2(np.asarray(z, dtype=float)) - math.log(2.0)


@dataclass(frozen=True)
class PointMass(Marginal):
    """Degenerate prior; the unconstrained coordinate is pinned at 0."""

    value: float = 0.0
    gaussian_in_z = True

    def sample(self, rng, size):
        return np.full(size if size is not None else (), self.value, dtype=float)

    def log_prob(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.where(theta == self.value, 0.0, -np.inf)

    def to_z(self, theta):
        return np.zeros_like(np.asarray(theta, dtype=float))

    def from_z(self, z):
        return np.full_like(np.asarray(z, dtype=float), self.value)

    def log_prob_z(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def z_moments(self):
        return 0.0, 0.0


class Prior:
    """Product of independent :class:`Marginal` objects.

    ``theta`` arrays carry the parameter axis last, so the methods accept
    either a single vector ``(d,)`` or a batch ``(n, d)``.
    """

    def __init__(self, marginals: Sequence[Marginal], names: Sequence[str] | None = None):
        self.marginals = tuple(marginals)
        if not self.marginals:
            raise ValueError("prior needs at least one marginal")
        self.names = tuple(names) if names is not None else tuple(
            f"theta_{i + 1}" for i in range(len(self.marginals)))
        if len(self.names) != len(self.marginals):
            raise ValueError("names and marginals differ in length")

    def __repr__(self):
        return f"Prior({list(self.marginals)!r})"

    @property
    def dim(self) -> int:
        return len(self.marginals)

    @property
    def fixed(self) -> np.ndarray:
        """Mask of point-mass coordinates (excluded from random-walk moves)."""
        return np.array([isinstance(m, PointMass) for m in self.marginals])

    def _apply(self, name, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected trailing dimension {self.dim}, got {x.shape}")
        return np.stack([getattr(m, name)(x[..., i]) for i, m in enumerate(self.marginals)], axis=-1)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        cols = [np.asarray(m.sample(rng, size), dtype=float) for m in self.marginals]
        return np.stack(cols, axis=-1)

    def log_density(self, theta) -> np.ndarray | float:
        out = self._apply("log_prob", theta).sum(axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def in_support(self, theta) -> bool | np.ndarray:
        out = np.isfinite(self._apply("log_prob", theta)).all(axis=-1)
        return bool(out) if np.ndim(out) == 0 else out

    def to_unconstrained(self, theta) -> np.ndarray:
        return self._apply("to_z", theta)

    def from_unconstrained(self, z) -> np.ndarray:
        return self._apply("from_z", z)

    def log_prob_z(self, z) -> np.ndarray | float:
        """Prior log-density of the unconstrained coordinates (Jacobian included)."""
        out = self._apply("log_prob_z", z).sum(axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def gaussian_form(self):
        """Return ``(mean, std)`` of the prior on ``z`` if it is Gaussian there, else ``None``."""
        if not all(m.gaussian_in_z for m in self.marginals):
            return None
        mom = np.array([m.z_moments() for m in self.marginals], dtype=float)
        return mom[:, 0], mom[:, 1]
