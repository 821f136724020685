"""Greedy policy search over the local q-functions and its generalization.

The search runs alongside the fitting iterations. At iteration N a batch state
x is re-examined only if every tracked agent's ``max_a q_N(x, a)`` rose by at
least gamma since N-1. It then takes the first sample l (in batch order) with
``x_l == x`` whose control attains every tracked agent's local maximum, or
writes the sentinel when none does. Otherwise the previous entry is kept.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InconclusivePolicyError
from .forest import ForestParams, TreeEnsemble, build_ensemble, classify, one_hot_states
from .mdp import BatchDataset, SeedLike

SENTINEL = -1
ARGMAX_TOL = 1e-9


def state_index(dataset: BatchDataset, x: int) -> list[int]:
    """Ascending sample indices l with x_l == x."""
    return np.flatnonzero(dataset.x == x).tolist()


@dataclass
class UpdateEvent:
    iteration: int
    state: int
    sample: int  # chosen l, or -1 when the sentinel was written


@dataclass
class PolicyTable:
    entries: np.ndarray          # (n_states, m); SENTINEL rows mark "no batch control qualifies"
    gamma: float
    last_update: np.ndarray      # iteration of the last branch-(i) decision per state, -1 if never
    agents: tuple[int, ...]
    events: list[UpdateEvent] = field(default_factory=list)

    @classmethod
    def initial(cls, n_states: int, m: int, gamma: float, agents: Sequence[int]) -> "PolicyTable":
        return cls(np.full((n_states, m), SENTINEL, dtype=np.int64), gamma,
                   np.full(n_states, -1, dtype=np.int64), tuple(agents))

    @property
    def n_states(self) -> int:
        return self.entries.shape[0]

    def is_sentinel(self, x=None) -> np.ndarray:
        rows = self.entries if x is None else self.entries[x]
        return np.all(rows == SENTINEL, axis=-1)

    def labeled_states(self) -> np.ndarray:
        return np.flatnonzero(~self.is_sentinel())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["state"] + [f"u_{i}" for i in range(self.entries.shape[1])])
        for x, row in enumerate(self.entries):
            w.writerow([x, *map(int, row)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, gamma: float = float("nan"), agents: Sequence[int] = ()) -> "PolicyTable":
        rows = list(csv.reader(io.StringIO(text)))[1:]
        entries = np.array([[int(v) for v in r[1:]] for r in rows], dtype=np.int64)
        return cls(entries, gamma, np.full(len(entries), -1, dtype=np.int64), tuple(agents))

    def to_dict(self) -> dict:
        return {
            "entries": self.entries.tolist(),
            "gamma": self.gamma,
            "last_update": self.last_update.tolist(),
            "agents": list(self.agents),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyTable":
        return cls(np.asarray(d["entries"], dtype=np.int64), float(d["gamma"]),
                   np.asarray(d["last_update"], dtype=np.int64), tuple(d["agents"]))


def _qualifying_samples(grids: Sequence[np.ndarray], dataset: BatchDataset, agents: Sequence[int]) -> np.ndarray:
    """Mask over samples whose control attains every tracked agent's local max at x_l."""
    ok = np.ones(dataset.L, dtype=bool)
    for grid, j in zip(grids, agents):
        best = grid.max(axis=1)
        ok &= grid[dataset.x, dataset.u[:, j]] >= best[dataset.x] - ARGMAX_TOL
    return ok


def policy_step(prev: PolicyTable, grids_now: Sequence[np.ndarray], grids_before: Sequence[np.ndarray],
                dataset: BatchDataset, iteration: int) -> PolicyTable:
    """One application of the three-branch rule given q-grids at N and N-1.

    Each grid has shape (n_states, n_local) and holds q_hat^j over every
    (state, local control) for one tracked agent.
    """
    agents = prev.agents
    rise = np.min([g.max(axis=1) - h.max(axis=1) for g, h in zip(grids_now, grids_before)], axis=0)
    qualifies = _qualifying_samples(grids_now, dataset, agents)
    entries = prev.entries.copy()
    last_update = prev.last_update.copy()
    events = list(prev.events)
    for x in dataset.distinct_states():
        if rise[x] < prev.gamma:
            continue
        hits = np.flatnonzero(qualifies & (dataset.x == x))
        if len(hits):
            entries[x] = dataset.u[hits[0]]
            events.append(UpdateEvent(iteration, int(x), int(hits[0])))
        else:
            entries[x] = SENTINEL
            events.append(UpdateEvent(iteration, int(x), -1))
        last_update[x] = iteration
    return PolicyTable(entries, prev.gamma, last_update, agents, events)


def policy_update(prev: PolicyTable, locals_, dataset: BatchDataset) -> PolicyTable:
    """Advance the policy using the latest two grid snapshots of each tracked LocalQ."""
    locals_ = list(locals_)
    return policy_step(prev, [lq.grid_log[-1] for lq in locals_], [lq.grid_log[-2] for lq in locals_],
                       dataset, locals_[0].iteration)


def policy_update_light(prev: PolicyTable, local, dataset: BatchDataset) -> PolicyTable:
    """Single-agent variant: only agent ``local.agent`` is consulted."""
    return policy_update(prev, [local], dataset)


def replay_policy(locals_, dataset: BatchDataset, gamma: float, m: int | None = None) -> PolicyTable:
    """Rebuild the policy from logged grids alone; must equal the live table."""
    locals_ = list(locals_)
    m = dataset.m if m is None else m
    table = PolicyTable.initial(dataset.n_states, m, gamma, [lq.agent for lq in locals_])
    for n in range(1, len(locals_[0].grid_log)):
        table = policy_step(table, [lq.grid_log[n] for lq in locals_], [lq.grid_log[n - 1] for lq in locals_],
                            dataset, n)
    return table


@dataclass
class PredicateViolation:
    state: int
    iteration: int
    agent: int
    reason: str
    value: float


def check_update_predicate(table: PolicyTable, locals_) -> list[PredicateViolation]:
    """For each non-sentinel entry, re-check both selection conditions at its last update."""
    violations = []
    for x in table.labeled_states():
        n = int(table.last_update[x])
        for lq in locals_:
            now, before = lq.grid_log[n][x], lq.grid_log[n - 1][x]
            rise = now.max() - before.max()
            if rise < table.gamma:
                violations.append(PredicateViolation(int(x), n, lq.agent, "max increment below gamma", float(rise)))
            gap = now.max() - now[table.entries[x, lq.agent]]
            if gap > ARGMAX_TOL:
                violations.append(PredicateViolation(int(x), n, lq.agent, "control is not a local argmax", float(gap)))
    return violations


@dataclass
class GapRow:
    state: int
    control: tuple
    gaps: dict               # agent -> max_a q(x, a) - q(x, u(agent))
    alternates: list         # other batch controls at x attaining every local max now


@dataclass
class GapReport:
    rows: list[GapRow]
    gamma: float

    @property
    def violations(self) -> list[GapRow]:
        return [r for r in self.rows if max(r.gaps.values()) >= self.gamma]

    @property
    def fraction_within_gamma(self) -> float:
        if not self.rows:
            return 1.0
        return 1.0 - len(self.violations) / len(self.rows)


def greedy_gap_audit(table: PolicyTable, locals_, dataset: BatchDataset) -> GapReport:
    locals_ = list(locals_)
    grids = [lq.grid_log[-1] for lq in locals_]
    qualifies = _qualifying_samples(grids, dataset, [lq.agent for lq in locals_])
    rows = []
    for x in table.labeled_states():
        chosen = table.entries[x]
        gaps = {lq.agent: float(g[x].max() - g[x, chosen[lq.agent]]) for lq, g in zip(locals_, grids)}
        alts = {tuple(int(a) for a in dataset.u[l]) for l in np.flatnonzero(qualifies & (dataset.x == x))}
        alts.discard(tuple(int(a) for a in chosen))
        rows.append(GapRow(int(x), tuple(int(a) for a in chosen), gaps, sorted(alts)))
    return GapReport(rows, table.gamma)


@dataclass
class GeneralizedPolicy:
    """Total policy: table lookup where a control was found, classifier elsewhere."""

    table: PolicyTable
    classifier: TreeEnsemble | None
    labels: np.ndarray | None
    uses_classifier: bool

    def __call__(self, x: int) -> np.ndarray:
        if not self.table.is_sentinel(x):
            return self.table.entries[x].copy()
        query = one_hot_states([x], self.table.n_states)[0]
        return np.asarray(classify(self.classifier, self.labels, query))

    def actions(self) -> np.ndarray:
        return np.array([self(x) for x in range(self.table.n_states)])

    def to_dict(self) -> dict:
        return {
            "table": self.table.to_dict(),
            "classifier": None if self.classifier is None else self.classifier.to_json(),
            "labels": None if self.labels is None else self.labels.tolist(),
            "uses_classifier": self.uses_classifier,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneralizedPolicy":
        clf = None if d["classifier"] is None else TreeEnsemble.from_json(d["classifier"])
        labels = None if d["labels"] is None else np.asarray(d["labels"], dtype=np.int64)
        return cls(PolicyTable.from_dict(d["table"]), clf, labels, bool(d["uses_classifier"]))


def generalize(table: PolicyTable, dataset: BatchDataset, params: ForestParams = ForestParams(),
               seed: SeedLike = None) -> GeneralizedPolicy:
    """Extend the table to every state with a kernel-mass classifier over state features.

    Training pairs are the batch samples whose state holds a control, labeled
    with that control.
    """
    labeled = ~table.is_sentinel()
    if not labeled.any():
        raise InconclusivePolicyError("every state holds the sentinel; the batch does not identify a greedy policy")
    if labeled.all():
        return GeneralizedPolicy(table, None, None, uses_classifier=False)
    mask = labeled[dataset.x]
    if not mask.any():
        raise InconclusivePolicyError("no batch sample lies in a labeled state")
    inputs = one_hot_states(dataset.x[mask], table.n_states)
    labels = table.entries[dataset.x[mask]]
    clf = build_ensemble(inputs, params.n_trees, params.n_min, seed)
    return GeneralizedPolicy(table, clf, labels, uses_classifier=True)
