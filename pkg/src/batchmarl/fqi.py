"""Centralized fitted Q iteration over the joint state-control space."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse

from .errors import ConfigurationError, ConvergenceError
from .forest import ForestParams, TreeEnsemble, build_ensemble, joint_inputs, state_control_features
from .mdp import BatchDataset, SeedLike, all_joint_controls

DEFAULT_MAX_ITER = 500


def joint_grid_kernel(ensemble: TreeEnsemble, n_states: int, m: int, n_local: int) -> sparse.csr_matrix:
    """Kernel rows for every (state, joint control), row ``x * |U| + code``."""
    controls = all_joint_controls(m, n_local)
    n_joint = len(controls)
    states = np.repeat(np.arange(n_states), n_joint)
    return ensemble.kernel_matrix(state_control_features(states, np.tile(controls, (n_states, 1)), n_states))


@dataclass
class CentralQ:
    """Q_N held as Bellman targets at the batch points plus the frozen joint ensemble.

    ``Q_N(x, u)`` anywhere is the kernel-weighted sum of ``outputs``.
    """

    outputs: np.ndarray
    joint_ensemble: TreeEnsemble
    grid_kernel: sparse.csr_matrix
    n_states: int
    m: int
    n_local: int
    beta: float
    iteration: int = 0
    n_evaluations: int = 0
    _grid: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_joint(self) -> int:
        return self.n_local**self.m

    def grid(self) -> np.ndarray:
        """Q_N over all (state, joint control), shape (n_states, |U|)."""
        if self._grid is None:
            self._grid = (self.grid_kernel @ self.outputs).reshape(self.n_states, self.n_joint)
        return self._grid

    def evaluate(self, states, codes) -> np.ndarray:
        """Q_N at each (state, code) pair; every pair counts as one evaluation."""
        states = np.asarray(states, dtype=np.int64)
        self.n_evaluations += states.size
        return self.grid()[states, np.asarray(codes, dtype=np.int64)]


def initial_central_q(dataset: BatchDataset, beta: float, params: ForestParams = ForestParams(),
                      seed: SeedLike = None, ensemble: TreeEnsemble | None = None) -> CentralQ:
    if not 0.0 <= beta < 1.0:
        raise ConfigurationError("beta must lie in [0, 1)")
    if ensemble is None:
        ensemble = build_ensemble(joint_inputs(dataset), params.n_trees, params.n_min, seed)
    grid_kernel = joint_grid_kernel(ensemble, dataset.n_states, dataset.m, dataset.n_local)
    return CentralQ(np.zeros(dataset.L), ensemble, grid_kernel, dataset.n_states, dataset.m,
                    dataset.n_local, beta)


def fqi_iteration(dataset: BatchDataset, q: CentralQ) -> CentralQ:
    """outputs_l <- r_l + beta * max_u' Q_{N-1}(x+_l, u'), enumerating every joint control."""
    n_joint = q.n_joint
    values = q.evaluate(np.repeat(dataset.x_plus, n_joint), np.tile(np.arange(n_joint), dataset.L))
    targets = dataset.r + q.beta * values.reshape(dataset.L, n_joint).max(axis=1)
    return replace(q, outputs=targets, iteration=q.iteration + 1, n_evaluations=0, _grid=None)


def fqi_value(q: CentralQ, x: int) -> tuple[float, int]:
    """max_u Q(x, u) and the smallest maximizing joint-control code."""
    row = q.grid()[x]
    best = int(np.argmax(row))
    return float(row[best]), best


@dataclass
class TraceRow:
    iteration: int
    sup_norm: float
    eval_count: int
    wall_ms: float


@dataclass
class FqiResult:
    q: CentralQ
    trace: list[TraceRow]

    @property
    def iterations(self) -> int:
        return self.q.iteration

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "sup_norm", "eval_count", "wall_ms"])
        for row in self.trace:
            w.writerow([row.iteration, repr(row.sup_norm), row.eval_count, f"{row.wall_ms:.3f}"])
        return buf.getvalue()


def fqi_run(dataset: BatchDataset, beta: float = 0.5, epsilon: float = 1e-3,
            params: ForestParams = ForestParams(), seed: SeedLike = None,
            max_iter: int = DEFAULT_MAX_ITER, ensemble: TreeEnsemble | None = None) -> FqiResult:
    if epsilon <= 0:
        raise ConfigurationError("epsilon must be positive")
    q = initial_central_q(dataset, beta, params, seed, ensemble)
    trace: list[TraceRow] = []
    while True:
        if q.iteration >= max_iter:
            raise ConvergenceError(f"FQI did not converge within {max_iter} iterations",
                                   trace=trace, result=FqiResult(q, trace))
        t0 = time.perf_counter()
        new = fqi_iteration(dataset, q)
        sup = float(np.max(np.abs(new.outputs - q.outputs)))
        trace.append(TraceRow(new.iteration, sup, q.n_evaluations, 1e3 * (time.perf_counter() - t0)))
        q = new
        if sup < epsilon:
            return FqiResult(q, trace)
