"""Random multi-agent MDP benchmark: generation, simulation, batch sampling.

Joint controls are encoded as mixed-radix integers with agent 0 as the least
significant digit, so ``code = sum(u[i] * A**i)``. That fixed ordering is
the tie-breaking order used everywhere else in the package.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence, Union

import numpy as np

from .errors import ConfigurationError

REWARD_HALF_WIDTH = 0.5
REWARD_MEAN_MAX = 5.0
R_MAX = REWARD_MEAN_MAX + REWARD_HALF_WIDTH

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]


def as_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def as_seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    """Normalize any seed-like value to a SeedSequence for deriving child streams."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        return np.random.SeedSequence(int(seed.integers(0, 2**63)))
    return np.random.SeedSequence(seed)


def derive_seed(seed: SeedLike, *key: int) -> np.random.SeedSequence:
    """Child stream identified by ``key``; the same (seed, key) always maps to the same stream."""
    base = as_seed_sequence(seed)
    return np.random.SeedSequence(base.entropy, spawn_key=tuple(base.spawn_key) + tuple(key))


# -- joint control encoding -------------------------------------------------

def encode_controls(u, n_local: int) -> np.ndarray:
    """Mixed-radix code of joint control vectors (last axis = agents)."""
    u = np.asarray(u, dtype=np.int64)
    radix = n_local ** np.arange(u.shape[-1], dtype=np.int64)
    return u @ radix


def decode_controls(code, m: int, n_local: int) -> np.ndarray:
    code = np.asarray(code, dtype=np.int64)
    digits = (code[..., None] // (n_local ** np.arange(m, dtype=np.int64))) % n_local
    return digits.astype(np.int64)


def all_joint_controls(m: int, n_local: int) -> np.ndarray:
    """Every joint control, row k being the control with code k."""
    return decode_controls(np.arange(n_local**m), m, n_local)


# -- data model -------------------------------------------------------------

@dataclass(frozen=True)
class MdpSpec:
    """Transition matrices ``P[x]`` of shape (|U|, X) and mean rewards ``R[x]``."""

    m: int
    X: int
    local_control_cardinality: int
    P: np.ndarray
    R: np.ndarray
    seed: int | None = None

    @property
    def n_joint(self) -> int:
        return self.local_control_cardinality**self.m

    def validate(self) -> None:
        if self.P.shape != (self.X, self.n_joint, self.X):
            raise ConfigurationError(f"P has shape {self.P.shape}, expected {(self.X, self.n_joint, self.X)}")
        if np.any(self.P < 0) or np.max(np.abs(self.P.sum(axis=-1) - 1.0)) > 1e-12:
            raise ConfigurationError("transition rows must be non-negative and sum to 1")
        if self.R.shape != (self.X,) or np.any(self.R < 0) or np.any(self.R > REWARD_MEAN_MAX):
            raise ConfigurationError("mean rewards must lie in [0, 5]")

    def to_json(self) -> str:
        return json.dumps({
            "m": self.m,
            "X": self.X,
            "local_control_cardinality": self.local_control_cardinality,
            "P": self.P.tolist(),
            "R": self.R.tolist(),
            "seed": self.seed,
        })

    @classmethod
    def from_json(cls, text: str) -> "MdpSpec":
        d = json.loads(text)
        spec = cls(
            m=int(d["m"]),
            X=int(d["X"]),
            local_control_cardinality=int(d.get("local_control_cardinality", 2)),
            P=np.asarray(d["P"], dtype=float),
            R=np.asarray(d["R"], dtype=float),
            seed=d.get("seed"),
        )
        spec.validate()
        return spec


class BatchSample(NamedTuple):
    x: int
    u: tuple
    x_plus: int
    r: float


@dataclass
class BatchDataset:
    """The ordered tuples (x, u, x_plus, r); row order is the tie-breaking order."""

    x: np.ndarray
    u: np.ndarray
    x_plus: np.ndarray
    r: np.ndarray
    n_states: int
    n_local: int = 2

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64)
        self.u = np.atleast_2d(np.asarray(self.u, dtype=np.int64))
        self.x_plus = np.asarray(self.x_plus, dtype=np.int64)
        self.r = np.asarray(self.r, dtype=float)
        L = len(self.x)
        if not (self.u.shape[0] == len(self.x_plus) == len(self.r) == L):
            raise ConfigurationError("dataset columns have inconsistent lengths")
        if L == 0:
            raise ConfigurationError("dataset is empty")
        if self.x.min() < 0 or max(self.x.max(), self.x_plus.max()) >= self.n_states:
            raise ConfigurationError("state id out of range")
        if self.u.min() < 0 or self.u.max() >= self.n_local:
            raise ConfigurationError("local control id out of range")
        if np.any(self.r < 0):
            raise ConfigurationError("rewards must be non-negative")

    @property
    def L(self) -> int:
        return len(self.x)

    @property
    def m(self) -> int:
        return self.u.shape[1]

    @property
    def u_code(self) -> np.ndarray:
        return encode_controls(self.u, self.n_local)

    @property
    def samples(self) -> list[BatchSample]:
        return [
            BatchSample(int(x), tuple(int(a) for a in u), int(xp), float(r))
            for x, u, xp, r in zip(self.x, self.u, self.x_plus, self.r)
        ]

    def distinct_states(self) -> np.ndarray:
        return np.unique(self.x)

    def scaled(self, c: float) -> "BatchDataset":
        return BatchDataset(self.x, self.u, self.x_plus, self.r * c, self.n_states, self.n_local)

    def with_agents_permuted(self, perm: Sequence[int]) -> "BatchDataset":
        """Dataset whose agent i column is the old agent ``perm[i]`` column."""
        return BatchDataset(self.x, self.u[:, list(perm)], self.x_plus, self.r, self.n_states, self.n_local)

    # -- serialization --

    def header(self) -> list[str]:
        return ["x"] + [f"u_{i}" for i in range(self.m)] + ["x_plus", "r"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for x, u, xp, r in zip(self.x, self.u, self.x_plus, self.r):
            w.writerow([int(x), *map(int, u), int(xp), repr(float(r))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, n_states: int, n_local: int = 2) -> "BatchDataset":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        m = sum(1 for h in header if h.startswith("u_"))
        if header != ["x"] + [f"u_{i}" for i in range(m)] + ["x_plus", "r"]:
            raise ConfigurationError(f"unexpected batch CSV header {header}")
        arr = np.array(body, dtype=object)
        return cls(
            x=arr[:, 0].astype(np.int64),
            u=arr[:, 1:1 + m].astype(np.int64),
            x_plus=arr[:, 1 + m].astype(np.int64),
            r=arr[:, 2 + m].astype(float),
            n_states=n_states,
            n_local=n_local,
        )

    def to_json(self) -> str:
        return json.dumps({
            "n_states": self.n_states,
            "n_local": self.n_local,
            "x": self.x.tolist(),
            "u": self.u.tolist(),
            "x_plus": self.x_plus.tolist(),
            "r": self.r.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "BatchDataset":
        d = json.loads(text)
        return cls(d["x"], d["u"], d["x_plus"], d["r"], int(d["n_states"]), int(d.get("n_local", 2)))


# -- operations -------------------------------------------------------------

def generate_random_mdp(m: int, X: int, seed: int | None = None, n_local: int = 2) -> MdpSpec:
    """Uniform random transition rows normalized to sum to one, R(x) ~ U[0, 5]."""
    if m < 1 or X < 1 or n_local < 1:
        raise ConfigurationError(f"invalid dimensions m={m}, X={X}, n_local={n_local}")
    rng = np.random.default_rng(seed)
    n_joint = n_local**m
    P = rng.uniform(0.0, 1.0, size=(X, n_joint, X))
    P /= P.sum(axis=-1, keepdims=True)
    R = rng.uniform(0.0, REWARD_MEAN_MAX, size=X)
    return MdpSpec(m=m, X=X, local_control_cardinality=n_local, P=P, R=R, seed=seed)


def _transition(spec: MdpSpec, x, code, u_state, u_reward):
    # inverse-CDF draw; the clip guards the last cumulative entry falling a hair under 1
    cdf = np.cumsum(spec.P[x, code], axis=-1)
    x_plus = np.minimum((cdf <= u_state[..., None]).sum(axis=-1), spec.X - 1)
    reward = spec.R[x_plus] - REWARD_HALF_WIDTH + 2 * REWARD_HALF_WIDTH * u_reward
    return x_plus, np.maximum(reward, 0.0)


def step(spec: MdpSpec, x: int, u, rng) -> tuple[int, float]:
    """One round from state ``x`` under joint control ``u`` (vector or code)."""
    code = int(u) if np.ndim(u) == 0 else int(encode_controls(u, spec.local_control_cardinality))
    if not (0 <= x < spec.X and 0 <= code < spec.n_joint):
        raise ConfigurationError(f"state {x} or control {u} out of range")
    rng = as_generator(rng)
    draws = rng.random(2)
    x_plus, r = _transition(spec, np.int64(x), np.int64(code), draws[0], draws[1])
    return int(x_plus), float(r)


def sample_batch(spec: MdpSpec, L: int, rng) -> BatchDataset:
    if L < 1:
        raise ConfigurationError("L must be at least 1")
    rng = as_generator(rng)
    x = rng.integers(0, spec.X, size=L)
    code = rng.integers(0, spec.n_joint, size=L)
    draws = rng.random((L, 2))
    x_plus, r = _transition(spec, x, code, draws[:, 0], draws[:, 1])
    u = decode_controls(code, spec.m, spec.local_control_cardinality)
    return BatchDataset(x, u, x_plus, r, n_states=spec.X, n_local=spec.local_control_cardinality)


@dataclass
class EvaluationResult:
    cumulative: np.ndarray
    discounted: np.ndarray
    mean_cumulative: float = field(init=False)
    std_cumulative: float = field(init=False)
    mean_discounted: float = field(init=False)
    std_discounted: float = field(init=False)

    def __post_init__(self):
        self.mean_cumulative = float(np.mean(self.cumulative)) if len(self.cumulative) else 0.0
        self.std_cumulative = float(np.std(self.cumulative)) if len(self.cumulative) else 0.0
        self.mean_discounted = float(np.mean(self.discounted)) if len(self.discounted) else 0.0
        self.std_discounted = float(np.std(self.discounted)) if len(self.discounted) else 0.0


PolicyLike = Union[Callable[[int], object], Sequence, np.ndarray]


def policy_codes(spec: MdpSpec, policy: PolicyLike) -> np.ndarray:
    """Tabulate a policy as one joint-control code per state."""
    if callable(policy):
        actions = [policy(x) for x in range(spec.X)]
    else:
        actions = list(policy)
    if len(actions) != spec.X:
        raise ConfigurationError("policy must be defined for every state")
    codes = np.array([
        int(a) if np.ndim(a) == 0 else int(encode_controls(a, spec.local_control_cardinality))
        for a in actions
    ], dtype=np.int64)
    if codes.min() < 0 or codes.max() >= spec.n_joint:
        raise ConfigurationError("policy returned an invalid joint control")
    return codes


def evaluate_policy(spec: MdpSpec, policy: PolicyLike, tau: int = 100, trials: int = 100,
                    beta: float = 0.5, seed: SeedLike = 0) -> EvaluationResult:
    """Roll out ``policy`` for ``trials`` episodes of ``tau`` rounds.

    Each trial draws its own stream from ``derive_seed(seed, trial)`` so the
    result for trial t does not depend on how many trials run alongside it.
    The discounted return weights round T (1-based) by ``beta**T``.
    """
    codes = policy_codes(spec, policy)
    base = as_seed_sequence(seed)
    x = np.empty(trials, dtype=np.int64)
    draws = np.empty((trials, tau, 2))
    for t in range(trials):
        g = np.random.default_rng(derive_seed(base, t))
        x[t] = g.integers(0, spec.X)
        draws[t] = g.random((tau, 2))
    cumulative = np.zeros(trials)
    discounted = np.zeros(trials)
    for T in range(tau):
        x, r = _transition(spec, x, codes[x], draws[:, T, 0], draws[:, T, 1])
        cumulative += r
        discounted += beta ** (T + 1) * r
    return EvaluationResult(cumulative, discounted)


