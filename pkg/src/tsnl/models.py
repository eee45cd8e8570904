"""Concrete state-space models: linear-Gaussian, stochastic volatility, Lotka-Volterra."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .priors import LogNormal, LogUniform, Prior, Uniform
from .ssm import CostLedger, SsmModel, Trajectory

_LOG_2PI = math.log(2.0 * math.pi)


def _mat(v, d):
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        return a * np.eye(d)
    return a.reshape(d, d)


def _vec(v, d):
    a = np.asarray(v, dtype=float)
    return np.full(d, float(a)) if a.ndim == 0 else a.reshape(d)


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix (tolerates singular ones)."""
    w, V = np.linalg.eigh(M)
    if w.min() < -1e-10 * max(1.0, abs(w).max()):
        raise np.linalg.LinAlgError("matrix is not positive semi-definite")
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


# --------------------------------------------------------------------------
# Linear-Gaussian
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LgssmSpec:
    A: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    q0: np.ndarray
    r0: np.ndarray
    mu0: np.ndarray
    Sigma0: np.ndarray

    @classmethod
    def create(cls, d_x=1, d_y=1, A=0.9, H=1.0, Q=0.1, R=0.1, q0=0.0, r0=0.0, mu0=0.0, Sigma0=1.0):
        return cls(A=_mat(A, d_x), H=np.asarray(H, dtype=float).reshape(d_y, d_x) if np.ndim(H) else float(H) * np.eye(d_y, d_x),
                   Q=_mat(Q, d_x), R=_mat(R, d_y), q0=_vec(q0, d_x), r0=_vec(r0, d_y),
                   mu0=_vec(mu0, d_x), Sigma0=_mat(Sigma0, d_x))

    @property
    def d_x(self):
        return self.A.shape[0]

    @property
    def d_y(self):
        return self.H.shape[0]

    def override(self, **kw) -> "LgssmSpec":
        """Replace fields; scalars for matrix fields mean ``scalar * I``."""
        fixed = {}
        for k, v in kw.items():
            if k in ("A", "Q", "Sigma0"):
                fixed[k] = _mat(v, self.d_x)
            elif k == "R":
                fixed[k] = _mat(v, self.d_y)
            elif k in ("q0", "mu0"):
                fixed[k] = _vec(v, self.d_x)
            elif k == "r0":
                fixed[k] = _vec(v, self.d_y)
            elif k == "H":
                fixed[k] = np.asarray(v, dtype=float).reshape(self.d_y, self.d_x) if np.ndim(v) else float(v) * np.eye(self.d_y, self.d_x)
            else:
                raise KeyError(f"unknown LGSSM field {k!r}")
        return replace(self, **fixed)


def kalman_loglik(spec: LgssmSpec, y, overrides: dict | None = None) -> float:
    """Exact ``log p(y_{1:T})`` as a sum of one-step predictive log-densities."""
    if overrides:
        spec = spec.override(**overrides)
    y = np.asarray(y, dtype=float).reshape(-1, spec.d_y)
    if not np.all(np.isfinite(y)):
        raise ValueError("observations must be finite")
    A, H, Q, R = spec.A, spec.H, spec.Q, spec.R
    m, P = spec.mu0.copy(), spec.Sigma0.copy()
    total = 0.0
    for t in range(y.shape[0]):
        m = A @ m + spec.q0
        P = A @ P @ A.T + Q
        S = H @ P @ H.T + R
        S = 0.5 * (S + S.T)
        try:
            Lc = np.linalg.cholesky(S)
        except np.linalg.LinAlgError as err:
            raise np.linalg.LinAlgError(f"innovation covariance not positive definite at t={t + 1}") from err
        v = y[t] - (H @ m + spec.r0)
        a = np.linalg.solve(Lc, v)
        total += -0.5 * (a @ a) - np.log(np.diag(Lc)).sum() - 0.5 * spec.d_y * _LOG_2PI
        K = np.linalg.solve(S, H @ P).T
        m = m + K @ v
        P = P - K @ S @ K.T
        P = 0.5 * (P + P.T)
    return float(total)


class LgssmModel(SsmModel):
    """LGSSM with selected fields exposed as parameters.

    Each target is a scalar; matrix-valued targets scale the identity.
    """

    name = "lgssm"

    def __init__(self, spec: LgssmSpec | None = None, targets: Sequence[str] = ("Q",),
                 prior: Prior | None = None, ground_truth=None):
        self.spec = spec if spec is not None else LgssmSpec.create()
        self.targets = tuple(targets)
        self.d_x, self.d_y = self.spec.d_x, self.spec.d_y
        self.prior = prior if prior is not None else Prior([LogNormal(-2.0, 1.0)] * len(self.targets), self.targets)
        gt = ground_truth if ground_truth is not None else [0.1] * len(self.targets)
        self.ground_truth = np.asarray(gt, dtype=float)
        self._cache = (None, None)

    def spec_for(self, theta) -> LgssmSpec:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return self.spec.override(**dict(zip(self.targets, theta)))

    def _factors(self, theta):
        key = tuple(np.atleast_1d(theta).tolist())
        if self._cache[0] != key:
            s = self.spec_for(theta)
            self._cache = (key, (s, psd_sqrt(s.Q), psd_sqrt(s.R), psd_sqrt(s.Sigma0)))
        return self._cache[1]

    def sample_initial(self, theta, n, rng):
        s, _, _, S0 = self._factors(theta)
        return s.mu0 + rng.standard_normal((n, self.d_x)) @ S0

    def _transition(self, theta, x, rng):
        s, Qh, _, _ = self._factors(theta)
        return x @ s.A.T + s.q0 + rng.standard_normal(x.shape) @ Qh

    def sample_observation(self, theta, x, rng):
        s, _, Rh, _ = self._factors(theta)
        return x @ s.H.T + s.r0 + rng.standard_normal((x.shape[0], self.d_y)) @ Rh

    def observation_logpdf(self, theta, x, y):
        s = self._factors(theta)[0]
        Lc = np.linalg.cholesky(s.R)
        v = (np.asarray(y, dtype=float) - (x @ s.H.T + s.r0)).T
        a = np.linalg.solve(Lc, v)
        return -0.5 * (a * a).sum(axis=0) - np.log(np.diag(Lc)).sum() - 0.5 * self.d_y * _LOG_2PI

    @property
    def has_exact_loglik(self):
        return True

    def exact_loglik(self, theta, y):
        return kalman_loglik(self.spec_for(theta), y)


# --------------------------------------------------------------------------
# Stochastic volatility
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SvSpec:
    A: np.ndarray
    b: np.ndarray
    d: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    mu0: np.ndarray
    Sigma0: np.ndarray

    @classmethod
    def create(cls, dim=2, A=0.9, b=0.0, d=0.0, C=None, Q=0.1, R=1.0, mu0=0.0, Sigma0=0.5):
        if C is None:
            C = np.eye(dim)
            C[~np.eye(dim, dtype=bool)] = 0.52
        return cls(A=_mat(A, dim), b=_vec(b, dim), d=_vec(d, dim), C=_mat(C, dim), Q=_mat(Q, dim),
                   R=_mat(R, dim), mu0=_vec(mu0, dim), Sigma0=_mat(Sigma0, dim))

    @property
    def dim(self):
        return self.A.shape[0]


def correlation_from_offdiag(values, dim: int) -> np.ndarray:
    """Build a unit-diagonal symmetric matrix from its upper-triangle entries (row-major)."""
    C = np.eye(dim)
    iu = np.triu_indices(dim, 1)
    C[iu] = values
    C[(iu[1], iu[0])] = values
    return C


class SvModel(SsmModel):
    """Multivariate stochastic volatility with the correlation matrix as parameter.

    ``theta`` holds the upper-triangle entries of ``C``. Observations are
    ``y_t = d + chol(Sigma_t) r_t`` with ``Sigma_t = D_t C D_t``.
    """

    name = "sv"

    def __init__(self, spec: SvSpec | None = None, prior: Prior | None = None, ground_truth=None):
        self.spec = spec if spec is not None else SvSpec.create()
        k = self.spec.dim
        self.d_x = self.d_y = k
        n_off = k * (k - 1) // 2
        names = [f"C_{i + 1}{j + 1}" for i, j in zip(*np.triu_indices(k, 1))]
        self.prior = prior if prior is not None else Prior([Uniform(-1.0, 1.0)] * n_off, names)
        gt = ground_truth if ground_truth is not None else self.spec.C[np.triu_indices(k, 1)]
        self.ground_truth = np.asarray(gt, dtype=float)
        self._Qh = psd_sqrt(self.spec.Q)
        self._S0 = psd_sqrt(self.spec.Sigma0)
        self._cache = (None, None)

    def _obs_factor(self, theta):
        """Cholesky factor of ``C R C``-style core (``L_C R L_C^T``), or ``None`` if C is not PD."""
        key = tuple(np.atleast_1d(theta).tolist())
        if self._cache[0] != key:
            C = correlation_from_offdiag(np.atleast_1d(theta), self.spec.dim)
            try:
                Lc = np.linalg.cholesky(C)
                core = Lc @ self.spec.R @ Lc.T
                fac = (Lc, np.linalg.cholesky(0.5 * (core + core.T)))
            except np.linalg.LinAlgError:
                fac = None
            self._cache = (key, fac)
        return self._cache[1]

    def covariance(self, theta, x) -> np.ndarray:
        """``Sigma_t = D_t C D_t`` for a single state ``x``."""
        C = correlation_from_offdiag(np.atleast_1d(theta), self.spec.dim)
        Dt = np.diag(np.exp(np.asarray(x, dtype=float) / 2.0))
        return Dt @ C @ Dt

    def sample_initial(self, theta, n, rng):
        return self.spec.mu0 + rng.standard_normal((n, self.d_x)) @ self._S0

    def _transition(self, theta, x, rng):
        s = self.spec
        return x @ s.A.T + s.b + rng.standard_normal(x.shape) @ self._Qh

    def sample_observation(self, theta, x, rng):
        fac = self._obs_factor(theta)
        n = x.shape[0]
        if fac is None:
            return np.full((n, self.d_y), np.nan)
        Lc, _ = fac
        Rh = psd_sqrt(self.spec.R)
        r = rng.standard_normal((n, self.d_y)) @ Rh
        # Sigma_t^{1/2} = D_t L_C
        return self.spec.d + np.exp(x / 2.0) * (r @ Lc.T)

    def observation_logpdf(self, theta, x, y):
        fac = self._obs_factor(theta)
        if fac is None:
            return np.full(x.shape[0], -np.inf)
        _, Lcore = fac
        z = (np.asarray(y, dtype=float) - self.spec.d) * np.exp(-x / 2.0)
        a = np.linalg.solve(Lcore, z.T)
        logdet = 0.5 * x.sum(axis=1) + np.log(np.diag(Lcore)).sum()
        return -0.5 * (a * a).sum(axis=0) - logdet - 0.5 * self.d_y * _LOG_2PI


# --------------------------------------------------------------------------
# Lotka-Volterra (Gillespie)
# --------------------------------------------------------------------------

# reaction stoichiometry on (n_A, n_B): A+B->2A, A+B->A, B->2B, A->0
_LV_CHANGE = np.array([[1, 0], [0, -1], [0, 1], [-1, 0]], dtype=float)


@dataclass(frozen=True)
class LvSpec:
    rates: tuple = (0.01, 0.01, 1.0, 0.5)
    n0: tuple = (50, 100)
    grid_dt: float = 0.2
    sigma_e: float = 10.0
    max_events_per_step: int = 5000

    def __post_init__(self):
        if any(r < 0 for r in self.rates) or len(self.rates) != 4:
            raise ValueError("need four non-negative rates")
        if any(n < 0 for n in self.n0):
            raise ValueError("initial populations must be non-negative")


def lv_propensities(rates, x: np.ndarray) -> np.ndarray:
    nA, nB = x[:, 0], x[:, 1]
    r1, r2, r3, r4 = rates
    return np.stack([r1 * nA * nB, r2 * nA * nB, r3 * nB, r4 * nA], axis=1)


def gillespie_advance(rates, x: np.ndarray, dt: float, rng: np.random.Generator,
                      max_events: int = 5000) -> np.ndarray:
    """Run the direct-method SSA for time ``dt`` on every row of ``x``.

    Rows exceeding ``max_events`` reactions are returned as NaN.
    """
    x = np.array(x, dtype=float)
    n = x.shape[0]
    t = np.zeros(n)
    events = np.zeros(n, dtype=int)
    active = np.all(np.isfinite(x), axis=1)
    rates = np.asarray(rates, dtype=float)
    while active.any():
        idx = np.flatnonzero(active)
        a = lv_propensities(rates, x[idx])
        a0 = a.sum(axis=1)
        dead = a0 <= 0.0
        with np.errstate(divide="ignore"):
            tau = rng.exponential(1.0, idx.size) / np.where(dead, 1.0, a0)
        t_new = t[idx] + tau
        stop = dead | (t_new > dt)
        active[idx[stop]] = False
        go = ~stop
        if not go.any():
            break
        gi = idx[go]
        t[gi] = t_new[go]
        cum = np.cumsum(a[go], axis=1)
        u = rng.random(gi.size) * a0[go]
        which = np.minimum((u[:, None] >= cum).sum(axis=1), 3)
        x[gi] += _LV_CHANGE[which]
        events[gi] += 1
        over = gi[events[gi] > max_events]
        if over.size:
            x[over] = np.nan
            active[over] = False
    return x


class LvModel(SsmModel):
    """Stochastic Lotka-Volterra observed through noisy prey counts.

    ``theta`` = (rho_1, rho_2, rho_3, rho_4). One ledger unit per grid step.
    """

    name = "lv"
    d_x, d_y = 2, 1

    def __init__(self, spec: LvSpec | None = None, prior: Prior | None = None, ground_truth=None):
        self.spec = spec if spec is not None else LvSpec()
        self.prior = prior if prior is not None else Prior([LogUniform(1e-4, 1.0)] * 4,
                                                           ["rho_1", "rho_2", "rho_3", "rho_4"])
        self.ground_truth = np.asarray(ground_truth if ground_truth is not None else self.spec.rates, dtype=float)

    def sample_initial(self, theta, n, rng):
        return np.tile(np.asarray(self.spec.n0, dtype=float), (n, 1))

    def _transition(self, theta, x, rng):
        return gillespie_advance(theta, x, self.spec.grid_dt, rng, self.spec.max_events_per_step)

    def sample_observation(self, theta, x, rng):
        return x[:, 1:2] + self.spec.sigma_e * rng.standard_normal((x.shape[0], 1))

    def observation_logpdf(self, theta, x, y):
        s = self.spec.sigma_e
        out = -0.5 * ((np.asarray(y, dtype=float)[0] - x[:, 1]) / s) ** 2 - math.log(s) - 0.5 * _LOG_2PI
        return np.where(np.isfinite(out), out, -np.inf)


def gillespie_simulate(spec: LvSpec, T: int, rng: np.random.Generator,
                       ledger: CostLedger | None = None) -> Trajectory:
    """Populations on the grid ``t * grid_dt`` plus noisy prey observations."""
    x = np.asarray(spec.n0, dtype=float)[None, :]
    states = [x[0]]
    for _ in range(T):
        x = gillespie_advance(spec.rates, x, spec.grid_dt, rng, spec.max_events_per_step)
        if ledger is not None:
            ledger.add(1)
        states.append(x[0])
    states = np.array(states)
    traj = Trajectory(states, states[1:, 1:2])
    return Trajectory(states, lv_observe(traj, spec.sigma_e, rng))


def lv_observe(traj: Trajectory, sigma_e: float, rng: np.random.Generator) -> np.ndarray:
    if sigma_e < 0:
        raise ValueError("sigma_e must be >= 0")
    prey = traj.states[1:, 1:2]
    return prey + sigma_e * rng.standard_normal(prey.shape)


# --------------------------------------------------------------------------

MODEL_NAMES = ("lgssm1d", "lgssm1d-iid", "sv2d", "lv")


def make_model(name: str, params: dict | None = None, ground_truth=None) -> SsmModel:
    """Named experiment models with their default ground truths."""
    params = dict(params or {})
    if name == "lgssm1d":
        return LgssmModel(LgssmSpec.create(**params), targets=("Q",), ground_truth=ground_truth)
    if name == "lgssm1d-iid":
        params.setdefault("A", 0.0)
        return LgssmModel(LgssmSpec.create(**params), targets=("Q",), ground_truth=ground_truth)
    if name == "sv2d":
        return SvModel(SvSpec.create(**params), ground_truth=ground_truth)
    if name == "lv":
        if "rates" in params:
            params["rates"] = tuple(params["rates"])
        if "n0" in params:
            params["n0"] = tuple(params["n0"])
        return LvModel(LvSpec(**params), ground_truth=ground_truth)
    raise KeyError(f"unknown model {name!r}; choose from {MODEL_NAMES}")
