"""State-space model abstraction, trajectory simulation and lagged datasets."""

from __future__ import annotations

import csv
import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .priors import Prior

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """A simulator produced a non-finite draw."""

    def __init__(self, t: int, msg: str = ""):
        self.t = t
        super().__init__(f"non-finite sample at time index {t}" + (f": {msg}" if msg else ""))


class CostLedger:
    """Counter of calls to the dynamics simulator.

    Thread-safe; per-worker ledgers can be merged with :meth:`merge`.
    """

    def __init__(self, dynamics_calls: int = 0):
        self._calls = int(dynamics_calls)
        self._lock = threading.Lock()

    def __repr__(self):
        return f"CostLedger(dynamics_calls={self._calls})"

    @property
    def dynamics_calls(self) -> int:
        return self._calls

    def add(self, n: int) -> None:
        if n < 0:
            raise ValueError("ledger is monotone; cannot add a negative count")
        with self._lock:
            self._calls += int(n)

    def merge(self, other: "CostLedger") -> None:
        self.add(other.dynamics_calls)


def simulation_cost(ledger: CostLedger) -> int:
    return ledger.dynamics_calls


@dataclass(frozen=True)
class Trajectory:
    """Latent states ``x_0..x_T`` and observations ``y_1..y_T``."""

    states: np.ndarray
    observations: np.ndarray

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if states.shape[0] != obs.shape[0] + 1:
            raise ValueError("need len(states) == len(observations) + 1")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "observations", obs)

    @property
    def T(self) -> int:
        return self.observations.shape[0]


class SsmModel:
    """Base class for simulator-defined state-space models.

    Subclasses work on particle batches: ``x`` has shape ``(n, d_x)`` and
    ``theta`` is a single parameter vector. The ledger is charged inside
    :meth:`sample_transition`, once per row of ``x``.
    """

    name = "ssm"
    d_x: int
    d_y: int
    prior: Prior
    ground_truth: np.ndarray

    def sample_initial(self, theta, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _transition(self, theta, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def sample_observation(self, theta, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def observation_logpdf(self, theta, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_transition(self, theta, x, rng, ledger: CostLedger | None) -> np.ndarray:
        out = self._transition(theta, x, rng)
        if ledger is not None:
            ledger.add(x.shape[0])
        return out

    @property
    def has_exact_loglik(self) -> bool:
        return False

    def exact_loglik(self, theta, y) -> float:
        raise NotImplementedError(f"{self.name} has no exact likelihood")


def simulate_trajectory(model: SsmModel, theta, T: int, rng: np.random.Generator,
                        ledger: CostLedger | None = None) -> Trajectory:
    """Draw ``x_{0:T}`` and ``y_{1:T}`` from ``model`` at ``theta``."""
    if T < 1:
        raise ValueError("T must be >= 1")
    theta = np.asarray(theta, dtype=float)
    states = np.empty((T + 1, model.d_x))
    obs = np.empty((T, model.d_y))
    x = model.sample_initial(theta, 1, rng)
    if not np.all(np.isfinite(x)):
        raise SimulationError(0, "initial state")
    states[0] = x[0]
    for t in range(1, T + 1):
        x = model.sample_transition(theta, x, rng, ledger)
        y = model.sample_observation(theta, x, rng)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise SimulationError(t)
        states[t] = x[0]
        obs[t - 1] = y[0]
    return Trajectory(states, obs)


def simulate_batch(model: SsmModel, propose: Callable[[np.random.Generator], np.ndarray],
                   N: int, T: int, rng: np.random.Generator, ledger: CostLedger | None = None,
                   max_failures: int | None = None):
    """Simulate ``N`` successful trajectories with parameters from ``propose``.

    Each simulation runs on its own spawned stream. A failed trajectory is
    discarded and a fresh parameter is proposed; its dynamics calls stay on
    the ledger.

    Returns
    -------
    thetas : (N, d_theta) array
    trajectories : list of Trajectory
    n_failed : int
    """
    max_failures = 10 * N + 10 if max_failures is None else max_failures
    thetas, trajs, failed = [], [], 0
    while len(trajs) < N:
        (stream,) = rng.spawn(1)
        theta = np.asarray(propose(stream), dtype=float)
        try:
            trajs.append(simulate_trajectory(model, theta, T, stream, ledger))
            thetas.append(theta)
        except SimulationError as err:
            failed += 1
            log.info("simulation failed (%s); resampling theta", err)
            if failed > max_failures:
                raise RuntimeError(f"{failed} simulation failures while collecting {N} trajectories") from err
    if failed:
        log.warning("%d failed simulations discarded", failed)
    return np.array(thetas), trajs, failed


@dataclass
class LaggedDataset:
    """Lagged records ``(theta, y_{t-L:t-1}, y_t)`` kept in trajectory form.

    Windows that reach before ``t = 1`` are zero-padded; rows are ordered
    oldest first.
    """

    thetas: np.ndarray
    observations: np.ndarray
    lag: int
    _windows: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim == 2:
            obs = obs[:, :, None]
        self.observations = obs
        if self.lag < 1:
            raise ValueError("lag must be >= 1")
        if self.thetas.shape[0] != obs.shape[0]:
            raise ValueError("one theta per trajectory required")

    @property
    def n_trajectories(self) -> int:
        return self.observations.shape[0]

    @property
    def T(self) -> int:
        return self.observations.shape[1]

    @property
    def d_y(self) -> int:
        return self.observations.shape[2]

    def __len__(self) -> int:
        return self.n_trajectories * self.T

    @property
    def windows(self) -> np.ndarray:
        """``(N*T, L, d_y)`` array of past-observation windows."""
        if self._windows is None:
            self._windows = lag_windows(self.observations, self.lag).reshape(-1, self.lag, self.d_y)
        return self._windows

    @property
    def targets(self) -> np.ndarray:
        return self.observations.reshape(-1, self.d_y)

    @property
    def record_thetas(self) -> np.ndarray:
        return np.repeat(self.thetas, self.T, axis=0)

    @property
    def trajectory_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_trajectories), self.T)

    def records(self) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        yield from zip(self.record_thetas, self.windows, self.targets)

    def concat(self, other: "LaggedDataset") -> "LaggedDataset":
        if other.lag != self.lag or other.observations.shape[1:] != self.observations.shape[1:]:
            raise ValueError("datasets differ in lag, T or d_y")
        return LaggedDataset(np.concatenate([self.thetas, other.thetas]),
                             np.concatenate([self.observations, other.observations]), self.lag)

    def subset(self, idx) -> "LaggedDataset":
        idx = np.asarray(idx, dtype=int)
        return LaggedDataset(self.thetas[idx], self.observations[idx], self.lag)


def lag_windows(observations: np.ndarray, L: int) -> np.ndarray:
    """Windows ``y_{t-L..t-1}`` for every ``t``, zero-padded at the start.

    ``observations`` is ``(..., T, d_y)``; the result is ``(..., T, L, d_y)``.
    """
    obs = np.asarray(observations, dtype=float)
    pad = [(0, 0)] * (obs.ndim - 2) + [(L, 0), (0, 0)]
    padded = np.pad(obs, pad)
    # window over the time axis; drop the last one (it would end at y_T)
    win = sliding_window_view(padded, L, axis=-2)[..., :-1, :, :]
    return np.swapaxes(win, -1, -2)


def make_lagged_dataset(trajectories: Sequence[tuple[np.ndarray, Trajectory]], L: int) -> LaggedDataset:
    if len(trajectories) == 0:
        raise ValueError("no trajectories given")
    if L < 1:
        raise ValueError("L must be >= 1")
    T = {traj.T for _, traj in trajectories}
    dy = {traj.observations.shape[1] for _, traj in trajectories}
    if len(T) != 1 or len(dy) != 1:
        raise ValueError("trajectories must share T and d_y")
    thetas = np.array([np.atleast_1d(np.asarray(th, dtype=float)) for th, _ in trajectories])
    obs = np.stack([traj.observations for _, traj in trajectories])
    return LaggedDataset(thetas, obs, L)


def write_trajectory_csv(path, traj: Trajectory) -> None:
    dx, dy = traj.states.shape[1], traj.observations.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(dx)] + [f"y_{j + 1}" for j in range(dy)])
        for t in range(traj.T + 1):
            ys = [""] * dy if t == 0 else [repr(float(v)) for v in traj.observations[t - 1]]
            w.writerow([t] + [repr(float(v)) for v in traj.states[t]] + ys)


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    xcols = [i for i, h in enumerate(header) if h.startswith("x_")]
    ycols = [i for i, h in enumerate(header) if h.startswith("y_")]
    states = np.array([[float(r[i]) for i in xcols] for r in body])
    obs = np.array([[float(r[i]) for i in ycols] for r in body[1:]])
    return Trajectory(states, obs.reshape(len(body) - 1, len(ycols)))
