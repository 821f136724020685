"""Exact tabular Q updates on small deterministic MDPs, used as ground truth in tests.

Both sweeps update every (state, joint control) pair synchronously, so one
sweep of the distributed rule corresponds to one sweep of the centralized rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import SeedLike, all_joint_controls, as_generator


@dataclass
class DeterministicToy:
    delta: np.ndarray   # (X, |U|) next state
    r: np.ndarray       # (X, |U|) reward
    m: int
    n_local: int = 2

    @property
    def n_states(self) -> int:
        return self.delta.shape[0]


def random_deterministic_toy(m: int, X: int, seed: SeedLike = None, n_local: int = 2,
                             max_reward: int = 5) -> DeterministicToy:
    rng = as_generator(seed)
    n_joint = n_local**m
    delta = rng.integers(0, X, size=(X, n_joint))
    r = rng.integers(0, max_reward + 1, size=(X, n_joint)).astype(float)
    return DeterministicToy(delta, r, m, n_local)


def tabular_q_sweep(delta, r, q, beta):
    """Q_N(x, u) = r(x, u) + beta * max_u' Q_{N-1}(delta(x, u), u') for every pair."""
    return r + beta * q.max(axis=1)[delta]


def tabular_distributed_sweep(delta, r, lq, beta, m, n_local):
    """Per-agent update: q_N(x, a) = max over u with u(j) = a of max(q_{N-1}(x, a), r + beta * max_a' q_{N-1}(x+, a')).

    ``lq`` has shape (m, X, n_local).
    """
    controls = all_joint_controls(m, n_local)
    new = np.empty_like(lq)
    for j in range(m):
        best_next = lq[j].max(axis=1)[delta]                            # (X, |U|)
        keep = lq[j][:, controls[:, j]]                                 # q_{N-1}(x, u(j))
        cand = np.maximum(keep, r + beta * best_next)
        for a in range(n_local):
            new[j, :, a] = cand[:, controls[:, j] == a].max(axis=1)
    return new


def project_to_agents(q, m, n_local):
    """max over u with u(j) = a of Q(x, u), shape (m, X, n_local)."""
    controls = all_joint_controls(m, n_local)
    out = np.empty((m, q.shape[0], n_local))
    for j in range(m):
        for a in range(n_local):
            out[j, :, a] = q[:, controls[:, j] == a].max(axis=1)
    return out


def tabular_q_iterate(toy: DeterministicToy, beta: float, n_sweeps: int) -> list[np.ndarray]:
    q = [np.zeros_like(toy.r)]
    for _ in range(n_sweeps):
        q.append(tabular_q_sweep(toy.delta, toy.r, q[-1], beta))
    return q


def tabular_distributed_iterate(toy: DeterministicToy, beta: float, n_sweeps: int) -> list[np.ndarray]:
    lq = [np.zeros((toy.m, toy.n_states, toy.n_local))]
    for _ in range(n_sweeps):
        lq.append(tabular_distributed_sweep(toy.delta, toy.r, lq[-1], beta, toy.m, toy.n_local))
    return lq


def proposition1_check(toy: DeterministicToy, beta: float = 0.5, n_max: int = 20) -> tuple[bool, float]:
    """Compare the distributed local q with the per-agent max of the centralized Q for N <= n_max.

    Returns (holds, max absolute deviation); ``holds`` is deviation <= 1e-12.
    """
    if np.any(toy.r < 0):
        raise ValueError("rewards must be non-negative")
    q = tabular_q_iterate(toy, beta, n_max)
    lq = tabular_distributed_iterate(toy, beta, n_max)
    dev = max(float(np.max(np.abs(lq[n] - project_to_agents(q[n], toy.m, toy.n_local)))) for n in range(n_max + 1))
    return dev <= 1e-12, dev
