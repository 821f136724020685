"""Approximated multi-agent fitted Q iteration and its single-agent light mode.

Per iteration N and tracked agent j:

1. targets  o_l = r_l + beta * max_a' q_{N-1}(x+_l, a')          (local kernel, |A| evaluations per sample)
2. aux      p_l = sum_k jointkernel(k; l) * o_k                  (joint kernel at batch points, no max over U)
3. fitted   t_l = max(q_{N-1}(x_l, u_l(j)), p_l)
            q_N(x, a) = sum_l localkernel(l; (x, a)) * t_l

With r >= 0 and q_0 = 0 every step is monotone, so q_N never decreases and is
capped by R_max / (1 - beta).
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse

from . import policy as policy_mod
from .errors import ConfigurationError, ConvergenceError
from .forest import ForestParams, TreeEnsemble, build_ensemble, joint_inputs, local_inputs, state_control_features
from .mdp import BatchDataset, SeedLike, as_seed_sequence, derive_seed

DEFAULT_EPSILON = 1e-3
DEFAULT_MAX_ITER = 500


def local_grid_kernel(ensemble: TreeEnsemble, n_states: int, n_local: int) -> sparse.csr_matrix:
    """Kernel rows for every (state, local control), row ``x * n_local + a``."""
    states = np.repeat(np.arange(n_states), n_local)
    actions = np.tile(np.arange(n_local), n_states)
    return ensemble.kernel_matrix(state_control_features(states, actions, n_states))


@dataclass
class LocalQ:
    """Agent j's q_hat_N: fitted values at batch points plus a grid log per iteration.

    ``targets`` are the values the local kernel averages; ``outputs`` is their
    kernel-sum image at the batch inputs (x_l, u_l(j)). ``grid_log[n]`` holds
    q_hat_n over every (state, local control), with ``grid_log[0]`` all zero.
    """

    agent: int
    targets: np.ndarray
    outputs: np.ndarray
    local_ensemble: TreeEnsemble
    batch_kernel: sparse.csr_matrix
    grid_kernel: sparse.csr_matrix
    n_states: int
    n_local: int
    beta: float
    iteration: int = 0
    grid_log: list = field(default_factory=list)
    n_evaluations: int = 0

    def grid(self) -> np.ndarray:
        return self.grid_log[-1]

    @property
    def maxima_log(self) -> np.ndarray:
        """(N+1, n_states) table of max_a q_hat_n(x, a)."""
        return np.array([g.max(axis=1) for g in self.grid_log])

    def evaluate(self, states, actions) -> np.ndarray:
        """q_hat_N at each (state, local control); every pair counts as one evaluation."""
        states = np.asarray(states, dtype=np.int64)
        self.n_evaluations += states.size
        return self.grid()[states, np.asarray(actions, dtype=np.int64)]

    def predict(self, x: int, a: int) -> float:
        """Direct kernel evaluation, independent of the cached grid."""
        feat = state_control_features([x], [a], self.n_states)
        return float((self.local_ensemble.kernel_matrix(feat) @ self.targets)[0])

    def to_dict(self) -> dict:
        return {
            "agent": self.agent,
            "iteration": self.iteration,
            "targets": self.targets.tolist(),
            "outputs": self.outputs.tolist(),
            "grid_log": [g.tolist() for g in self.grid_log],
            "local_ensemble": self.local_ensemble.to_json(),
        }


@dataclass
class AuxQ:
    values: np.ndarray
    joint_ensemble: TreeEnsemble
    n_evaluations: int = 0


def initial_local_q(dataset: BatchDataset, agent: int, beta: float, params: ForestParams = ForestParams(),
                    seed: SeedLike = None, ensemble: TreeEnsemble | None = None) -> LocalQ:
    if not 0.0 <= beta < 1.0:
        raise ConfigurationError("beta must lie in [0, 1)")
    if not 0 <= agent < dataset.m:
        raise ConfigurationError(f"agent {agent} out of range for m={dataset.m}")
    if ensemble is None:
        ensemble = build_ensemble(local_inputs(dataset, agent), params.n_trees, params.n_min, seed)
    return LocalQ(
        agent=agent,
        targets=np.zeros(dataset.L),
        outputs=np.zeros(dataset.L),
        local_ensemble=ensemble,
        batch_kernel=ensemble.training_kernel(),
        grid_kernel=local_grid_kernel(ensemble, dataset.n_states, dataset.n_local),
        n_states=dataset.n_states,
        n_local=dataset.n_local,
        beta=beta,
        grid_log=[np.zeros((dataset.n_states, dataset.n_local))],
    )


def fitting_targets(dataset: BatchDataset, lq: LocalQ) -> np.ndarray:
    """r_l + beta * max over a' of q_hat_{N-1}(x+_l, a'); L * |A| evaluations."""
    A = lq.n_local
    values = lq.evaluate(np.repeat(dataset.x_plus, A), np.tile(np.arange(A), dataset.L))
    return dataset.r + lq.beta * values.reshape(dataset.L, A).max(axis=1)


def auxiliary_q(joint_ensemble: TreeEnsemble, targets) -> AuxQ:
    targets = np.asarray(targets, dtype=float)
    if targets.shape != (joint_ensemble.L,):
        raise ConfigurationError("targets must have one entry per batch sample")
    return AuxQ(joint_ensemble.training_kernel() @ targets, joint_ensemble, n_evaluations=len(targets))


def local_q_update(lq: LocalQ, aux: AuxQ) -> LocalQ:
    targets = np.maximum(lq.outputs, aux.values)
    grid = (lq.grid_kernel @ targets).reshape(lq.n_states, lq.n_local)
    return replace(
        lq,
        targets=targets,
        outputs=lq.batch_kernel @ targets,
        iteration=lq.iteration + 1,
        grid_log=lq.grid_log + [grid],
        n_evaluations=0,
    )


@dataclass
class TraceRow:
    agent: int
    iteration: int
    sup_norm: float
    eval_count: int      # local q evaluations while generating targets
    wall_ms: float
    aux_count: int = 0   # joint-kernel auxiliary evaluations


@dataclass
class AmafqiModel:
    locals: list[LocalQ]
    epsilon: float
    gamma: float
    converged_at: dict
    joint_ensemble: TreeEnsemble
    policy: policy_mod.PolicyTable | None = None
    light_agent: int | None = None

    def __post_init__(self):
        if not (self.gamma >= self.epsilon > 0):
            raise ConfigurationError("need gamma >= epsilon > 0")

    @property
    def iteration(self) -> int:
        return self.locals[0].iteration

    @property
    def agents(self) -> list[int]:
        return [lq.agent for lq in self.locals]

    def local(self, agent: int) -> LocalQ:
        for lq in self.locals:
            if lq.agent == agent:
                return lq
        raise KeyError(agent)

    def state_max(self, agent: int, x: int) -> float:
        return float(self.local(agent).grid()[x].max())

    def to_json(self, generalized: policy_mod.GeneralizedPolicy | None = None) -> str:
        return json.dumps({
            "epsilon": self.epsilon,
            "gamma": self.gamma,
            "converged_at": {str(k): v for k, v in self.converged_at.items()},
            "light_agent": self.light_agent,
            "locals": [lq.to_dict() for lq in self.locals],
            "joint_ensemble": self.joint_ensemble.to_json(),
            "policy_table": None if self.policy is None else self.policy.to_dict(),
            "generalized_policy": None if generalized is None else generalized.to_dict(),
        })


def load_bundle(text: str) -> tuple[dict, policy_mod.GeneralizedPolicy | None]:
    """Parse a checkpoint; returns the raw document and its generalized policy, if stored."""
    d = json.loads(text)
    gp = d.get("generalized_policy")
    return d, (None if gp is None else policy_mod.GeneralizedPolicy.from_dict(gp))


@dataclass
class AmafqiResult:
    model: AmafqiModel
    trace: list[TraceRow]

    def per_iteration_counts(self) -> tuple[int, int]:
        """(local evaluations, auxiliary evaluations) summed over agents for one iteration."""
        first = [row for row in self.trace if row.iteration == 1]
        return sum(r.eval_count for r in first), sum(r.aux_count for r in first)

    def sup_norms(self, agent: int) -> np.ndarray:
        return np.array([r.sup_norm for r in self.trace if r.agent == agent])

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["agent", "iteration", "sup_norm", "eval_count", "wall_ms"])
        for r in self.trace:
            w.writerow([r.agent, r.iteration, repr(r.sup_norm), r.eval_count, f"{r.wall_ms:.3f}"])
        return buf.getvalue()


def build_ensembles(dataset: BatchDataset, params: ForestParams, seed: SeedLike, agents) -> tuple[TreeEnsemble, dict]:
    """Joint ensemble plus one local ensemble per agent, each on its own derived stream.

    Agent j's local stream depends only on (seed, j), so the light mode and the
    full mode fit identical local ensembles for the same agent.
    """
    base = as_seed_sequence(seed)
    joint = build_ensemble(joint_inputs(dataset), params.n_trees, params.n_min, derive_seed(base, 0))
    locals_ = {j: build_ensemble(local_inputs(dataset, j), params.n_trees, params.n_min, derive_seed(base, 1, j))
               for j in agents}
    return joint, locals_


def amafqi_run(dataset: BatchDataset, beta: float = 0.5, epsilon: float = DEFAULT_EPSILON,
               gamma: float | None = None, params: ForestParams = ForestParams(), seed: SeedLike = None,
               light_agent: int | None = None, max_iter: int = DEFAULT_MAX_ITER, track_policy: bool = True,
               joint_ensemble: TreeEnsemble | None = None, local_ensembles: dict | None = None) -> AmafqiResult:
    """Iterate until every tracked agent's grid sup-norm change drops below ``epsilon``.

    ``light_agent=None`` tracks all m agents; an integer tracks that agent only
    (the light mode). The sup-norm is taken over the distinct batch states and
    every local control.
    """
    gamma = epsilon if gamma is None else gamma
    if epsilon <= 0 or gamma < epsilon:
        raise ConfigurationError("need gamma >= epsilon > 0")
    agents = list(range(dataset.m)) if light_agent is None else [light_agent]
    if joint_ensemble is None or local_ensembles is None:
        built_joint, built_locals = build_ensembles(dataset, params, seed, agents)
        joint_ensemble = joint_ensemble or built_joint
        local_ensembles = local_ensembles or built_locals
    locals_ = [initial_local_q(dataset, j, beta, params, ensemble=local_ensembles[j]) for j in agents]
    table = policy_mod.PolicyTable.initial(dataset.n_states, dataset.m, gamma, agents) if track_policy else None
    states = dataset.distinct_states()
    converged_at: dict = {}
    trace: list[TraceRow] = []

    while True:
        if locals_[0].iteration >= max_iter:
            model = AmafqiModel(locals_, epsilon, gamma, converged_at, joint_ensemble, table, light_agent)
            raise ConvergenceError(f"AMAFQI did not converge within {max_iter} iterations",
                                   trace=trace, result=AmafqiResult(model, trace))
        new_locals, sups = [], []
        for lq in locals_:
            t0 = time.perf_counter()
            targets = fitting_targets(dataset, lq)
            aux = auxiliary_q(joint_ensemble, targets)
            new = local_q_update(lq, aux)
            sup = float(np.max(np.abs(new.grid()[states] - lq.grid()[states])))
            trace.append(TraceRow(lq.agent, new.iteration, sup, lq.n_evaluations,
                                  1e3 * (time.perf_counter() - t0), aux.n_evaluations))
            if sup < epsilon:
                converged_at.setdefault(lq.agent, new.iteration)
            new_locals.append(new)
            sups.append(sup)
        locals_ = new_locals
        if table is not None:
            table = policy_mod.policy_update(table, locals_, dataset)
        if max(sups) < epsilon:
            model = AmafqiModel(locals_, epsilon, gamma, converged_at, joint_ensemble, table, light_agent)
            return AmafqiResult(model, trace)
