"""Seeded experiment harness comparing AMAFQI, its light mode and FQI.

Usage::

    bench run --config config.json
    bench act --model out/models/instance_000_amafqi.json --state 2
    bench prop1 --m 3 --x 4 --seed 7

Every random draw of instance i comes from ``derive_seed(seed, i, k)`` with a
fixed k per purpose, so reports are reproducible and instances can run in any
order or in parallel.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .amafqi import AmafqiModel, AmafqiResult, amafqi_run, load_bundle
from .errors import ConfigurationError, ConvergenceError, InconclusivePolicyError
from .forest import ForestParams
from .fqi import CentralQ, FqiResult, fqi_run, fqi_value
from .mdp import derive_seed, evaluate_policy, generate_random_mdp, sample_batch
from .oracle import proposition1_check, random_deterministic_toy
from .policy import generalize, greedy_gap_audit

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "BENCH_OUTPUT_DIR"
MODES = ("amafqi", "amafqi-l", "fqi", "all")

# stream ids within an instance
_MDP, _BATCH, _AMAFQI, _FQI, _GENERALIZE, _EVAL = range(6)


@dataclass
class ExperimentConfig:
    m: int = 3
    X: int = 4
    L: int = 500
    beta: float = 0.5
    epsilon: float = 1e-3
    gamma: float | None = None
    e: int = 5
    n_min: int = 10
    tau: int = 100
    trials: int = 20
    instances: int = 10
    seed: int = 0
    mode: str = "all"
    light_agent_index: int = 0
    output_dir: str = "bench_out"
    max_iter: int = 500
    workers: int = 1

    def __post_init__(self):
        if self.gamma is None:
            self.gamma = self.epsilon
        if not 0.0 <= self.beta < 1.0:
            raise ConfigurationError("beta must lie in [0, 1)")
        if not (self.gamma >= self.epsilon > 0):
            raise ConfigurationError("need gamma >= epsilon > 0")
        counts = ("m", "X", "L", "e", "n_min", "trials", "instances", "max_iter", "workers")
        if any(getattr(self, k) < 1 for k in counts) or self.tau < 0:
            raise ConfigurationError("all counts must be positive")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        if not 0 <= self.light_agent_index < self.m:
            raise ConfigurationError("light_agent_index out of range")

    @property
    def forest(self) -> ForestParams:
        return ForestParams(self.e, self.n_min)

    def methods(self) -> list[str]:
        return ["amafqi", "amafqi-l", "fqi"] if self.mode == "all" else [self.mode]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def paper_profile(**overrides) -> ExperimentConfig:
    """m=5, X=5, L=2000 with 100 trials of 100 rounds per instance."""
    base = dict(m=5, X=5, L=2000, beta=0.5, e=5, n_min=10, tau=100, trials=100, instances=10)
    base.update(overrides)
    return ExperimentConfig(**base)


def delta_metric(model: AmafqiModel, central: CentralQ, x: int, j: int) -> float | None:
    """|max_a q^j(x, a) - max_u Q(x, u)| / max_u Q(x, u); None when the FQI max is zero."""
    fqi_max, _ = fqi_value(central, x)
    if fqi_max == 0:
        return None
    return abs((model.state_max(j, x) - fqi_max) / fqi_max)


@dataclass
class MethodOutcome:
    method: str
    status: str = "ok"
    error: str = ""
    iterations: int = 0
    local_evals_per_iter: int = 0
    aux_evals_per_iter: int = 0
    mean_cumulative: float | None = None
    std_cumulative: float | None = None
    mean_discounted: float | None = None
    std_discounted: float | None = None
    sentinel_states: int | None = None
    gap_fraction: float | None = None
    fit_seconds: float = 0.0
    policy_seconds: float = 0.0
    trace: list = field(default_factory=list)


@dataclass
class InstanceReport:
    instance: int
    methods: dict
    delta_rows: list
    bundles: dict = field(default_factory=dict)


def analytic_evals(method: str, m: int, L: int, n_local: int) -> int:
    if method == "amafqi":
        return m * L * n_local
    if method == "amafqi-l":
        return L * n_local
    return L * n_local**m


def _run_amafqi(cfg, ds, spec, inst, light) -> tuple[MethodOutcome, AmafqiResult | None, str | None]:
    name = "amafqi-l" if light else "amafqi"
    out = MethodOutcome(name)
    t0 = time.perf_counter()
    try:
        res = amafqi_run(ds, cfg.beta, cfg.epsilon, cfg.gamma, cfg.forest, derive_seed(cfg.seed, inst, _AMAFQI),
                         light_agent=cfg.light_agent_index if light else None, max_iter=cfg.max_iter)
    except ConvergenceError as exc:
        out.status, out.error = "not-converged", str(exc)
        out.trace = [asdict(r) for r in exc.trace]
        return out, None, None
    out.fit_seconds = time.perf_counter() - t0
    model = res.model
    out.iterations = model.iteration
    out.local_evals_per_iter, out.aux_evals_per_iter = res.per_iteration_counts()
    out.trace = [asdict(r) for r in res.trace]
    out.sentinel_states = int(model.policy.is_sentinel()[ds.distinct_states()].sum())
    out.gap_fraction = greedy_gap_audit(model.policy, model.locals, ds).fraction_within_gamma
    t0 = time.perf_counter()
    try:
        gp = generalize(model.policy, ds, cfg.forest, derive_seed(cfg.seed, inst, _GENERALIZE))
    except InconclusivePolicyError as exc:
        out.status, out.error = "inconclusive", str(exc)
        return out, res, model.to_json()
    out.policy_seconds = time.perf_counter() - t0
    ev = evaluate_policy(spec, gp, cfg.tau, cfg.trials, cfg.beta, derive_seed(cfg.seed, inst, _EVAL))
    _fill_rewards(out, ev)
    return out, res, model.to_json(gp)


def _fill_rewards(out, ev):
    out.mean_cumulative, out.std_cumulative = ev.mean_cumulative, ev.std_cumulative
    out.mean_discounted, out.std_discounted = ev.mean_discounted, ev.std_discounted


def _run_fqi(cfg, ds, spec, inst) -> tuple[MethodOutcome, FqiResult | None]:
    out = MethodOutcome("fqi")
    t0 = time.perf_counter()
    try:
        res = fqi_run(ds, cfg.beta, cfg.epsilon, cfg.forest, derive_seed(cfg.seed, inst, _FQI), cfg.max_iter)
    except ConvergenceError as exc:
        out.status, out.error = "not-converged", str(exc)
        return out, None
    out.fit_seconds = time.perf_counter() - t0
    out.iterations = res.iterations
    out.local_evals_per_iter = res.trace[0].eval_count
    out.trace = [dict(agent=-1, **asdict(r)) for r in res.trace]
    t0 = time.perf_counter()
    greedy = [fqi_value(res.q, x)[1] for x in range(spec.X)]
    out.policy_seconds = time.perf_counter() - t0
    ev = evaluate_policy(spec, greedy, cfg.tau, cfg.trials, cfg.beta, derive_seed(cfg.seed, inst, _EVAL))
    _fill_rewards(out, ev)
    return out, res


def run_instance(cfg: ExperimentConfig, inst: int) -> InstanceReport:
    spec = generate_random_mdp(cfg.m, cfg.X, int(derive_seed(cfg.seed, inst, _MDP).generate_state(1)[0]))
    ds = sample_batch(spec, cfg.L, np.random.default_rng(derive_seed(cfg.seed, inst, _BATCH)))
    methods, bundles = {}, {}
    amafqi_res = fqi_res = None
    for name in cfg.methods():
        log.info("instance %d: %s", inst, name)
        try:
            if name == "fqi":
                methods[name], fqi_res = _run_fqi(cfg, ds, spec, inst)
            else:
                out, res, bundle = _run_amafqi(cfg, ds, spec, inst, light=(name == "amafqi-l"))
                methods[name] = out
                if bundle is not None:
                    bundles[name] = bundle
                if name == "amafqi":
                    amafqi_res = res
        except Exception as exc:  # recorded per instance; remaining instances still run
            methods[name] = MethodOutcome(name, status="error", error=f"{type(exc).__name__}: {exc}")
            log.debug(traceback.format_exc())

    delta_rows = []
    if amafqi_res is not None and fqi_res is not None:
        for j in range(cfg.m):
            for x in ds.distinct_states():
                fqi_max, _ = fqi_value(fqi_res.q, int(x))
                d = delta_metric(amafqi_res.model, fqi_res.q, int(x), j)
                delta_rows.append((inst, j, int(x), amafqi_res.model.state_max(j, int(x)), fqi_max, d))
    return InstanceReport(inst, methods, delta_rows, bundles)


def _mean_std(values):
    values = [v for v in values if v is not None]
    if not values:
        return None, None, 0
    return float(np.mean(values)), float(np.std(values)), len(values)


@dataclass
class RunReport:
    config: ExperimentConfig
    instances: list[InstanceReport]

    def delta_values(self) -> list[float | None]:
        return [row[-1] for inst in self.instances for row in inst.delta_rows]

    def mean_delta(self) -> float | None:
        return _mean_std(self.delta_values())[0]

    def mean_reward(self, method: str) -> float | None:
        return _mean_std([i.methods[method].mean_cumulative for i in self.instances if method in i.methods])[0]

    def reward_gap(self, method: str, reference: str = "fqi") -> float | None:
        """Relative decrease of the instance-averaged cumulative reward versus ``reference``.

        Only instances where both methods produced a policy enter the average.
        """
        pairs = [(i.methods[method].mean_cumulative, i.methods[reference].mean_cumulative)
                 for i in self.instances
                 if method in i.methods and reference in i.methods
                 and i.methods[method].mean_cumulative is not None
                 and i.methods[reference].mean_cumulative is not None]
        if not pairs:
            return None
        ours, ref = np.mean(pairs, axis=0)
        return float((ref - ours) / ref)

    def summary(self) -> dict:
        d_mean, d_std, d_n = _mean_std(self.delta_values())
        out = {
            "delta": {"mean": d_mean, "std": d_std, "count": d_n,
                      "undefined": sum(v is None for v in self.delta_values())},
            "methods": {},
        }
        for name in self.config.methods():
            outcomes = [i.methods[name] for i in self.instances if name in i.methods]
            mean, std, n = _mean_std([o.mean_cumulative for o in outcomes])
            out["methods"][name] = {
                "mean_cumulative": mean,
                "std_cumulative": std,
                "evaluated_instances": n,
                "status_counts": {s: sum(o.status == s for o in outcomes) for s in sorted({o.status for o in outcomes})},
                "mean_iterations": _mean_std([o.iterations or None for o in outcomes])[0],
                "mean_fit_seconds": _mean_std([o.fit_seconds or None for o in outcomes])[0],
            }
            if name != "fqi" and "fqi" in self.config.methods():
                out["methods"][name]["reward_gap_vs_fqi"] = self.reward_gap(name)
        return out

    # -- persistence --

    def delta_csv(self) -> str:
        return _csv(["instance", "agent", "state", "amafqi_max", "fqi_max", "delta"],
                    [(i, j, x, repr(a), repr(f), "" if d is None else repr(d))
                     for inst in self.instances for (i, j, x, a, f, d) in inst.delta_rows])

    def rewards_csv(self) -> str:
        rows = []
        for inst in self.instances:
            for name, o in inst.methods.items():
                rows.append((inst.instance, name, o.status, _fmt(o.mean_cumulative), _fmt(o.std_cumulative),
                             _fmt(o.mean_discounted), _fmt(o.std_discounted)))
        return _csv(["instance", "method", "status", "mean_cumulative", "std_cumulative",
                     "mean_discounted", "std_discounted"], rows)

    def work_csv(self) -> str:
        cfg = self.config
        rows = []
        for inst in self.instances:
            for name, o in inst.methods.items():
                rows.append((inst.instance, name, cfg.m, cfg.L, 2, o.iterations, o.local_evals_per_iter,
                             o.aux_evals_per_iter, analytic_evals(name, cfg.m, cfg.L, 2)))
        return _csv(["instance", "method", "m", "L", "n_local", "iterations", "local_evals_per_iter",
                     "aux_evals_per_iter", "analytic_evals_per_iter"], rows)

    def convergence_csv(self) -> str:
        rows = []
        for inst in self.instances:
            for name, o in inst.methods.items():
                for r in o.trace:
                    rows.append((inst.instance, name, r["agent"], r["iteration"], repr(r["sup_norm"]),
                                 r["eval_count"], f"{r['wall_ms']:.3f}"))
        return _csv(["instance", "method", "agent", "iteration", "sup_norm", "eval_count", "wall_ms"], rows)

    def to_json(self) -> str:
        return json.dumps({
            "config": asdict(self.config),
            "summary": self.summary(),
            "instances": [
                {"instance": i.instance,
                 "methods": {k: {kk: vv for kk, vv in asdict(v).items() if kk != "trace"} for k, v in i.methods.items()}}
                for i in self.instances
            ],
        }, indent=2)

    def write(self, output_dir) -> Path:
        out = Path(output_dir)
        (out / "models").mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        (out / "delta.csv").write_text(self.delta_csv())
        (out / "rewards.csv").write_text(self.rewards_csv())
        (out / "work.csv").write_text(self.work_csv())
        (out / "convergence.csv").write_text(self.convergence_csv())
        for inst in self.instances:
            for name, bundle in inst.bundles.items():
                (out / "models" / f"instance_{inst.instance:03d}_{name}.json").write_text(bundle)
        return out


def _fmt(v):
    return "" if v is None else repr(float(v))


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def run_experiment(config: ExperimentConfig, write: bool = True) -> RunReport:
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            instances = list(pool.map(run_instance, [config] * config.instances, range(config.instances)))
    else:
        instances = [run_instance(config, i) for i in range(config.instances)]
    report = RunReport(config, instances)
    if write:
        report.write(config.output_dir)
    return report


@dataclass
class WorkRow:
    m: int
    method: str
    measured: int
    analytic: int

    @property
    def matches(self) -> bool:
        return self.measured == self.analytic


def work_scaling_report(ms=(2, 3, 4), X: int = 4, L: int = 300, seed: int = 0,
                        params: ForestParams = ForestParams()) -> list[WorkRow]:
    """Measured per-iteration evaluation counts against m*L*|A|, L*|A| and L*|A|^m.

    A single iteration per method is enough since the counts do not depend on N.
    """
    rows = []
    for m in ms:
        spec = generate_random_mdp(m, X, seed)
        ds = sample_batch(spec, L, np.random.default_rng(derive_seed(seed, m)))
        full = _one_iteration_amafqi(ds, params, seed, None)
        light = _one_iteration_amafqi(ds, params, seed, 0)
        fqi = _one_iteration_fqi(ds, params, seed)
        for method, measured in (("amafqi", full), ("amafqi-l", light), ("fqi", fqi)):
            rows.append(WorkRow(m, method, measured, analytic_evals(method, m, L, ds.n_local)))
    bad = [r for r in rows if not r.matches]
    if bad:
        raise AssertionError("evaluation counts differ from the analytic formulas: "
                             + ", ".join(f"m={r.m} {r.method}: {r.measured} != {r.analytic}" for r in bad))
    return rows


def _one_iteration_amafqi(ds, params, seed, light_agent) -> int:
    try:
        res = amafqi_run(ds, 0.5, 1e-3, params=params, seed=seed, light_agent=light_agent, max_iter=1,
                         track_policy=False)
    except ConvergenceError as exc:
        res = exc.result
    return res.per_iteration_counts()[0]


def _one_iteration_fqi(ds, params, seed) -> int:
    try:
        res = fqi_run(ds, 0.5, 1e-3, params, seed, max_iter=1)
    except ConvergenceError as exc:
        res = exc.result
    return res.trace[0].eval_count


# -- CLI -----------------------------------------------------------------------

def _cmd_run(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    out = args.output_dir or os.environ.get(OUTPUT_DIR_ENV) or cfg.output_dir
    cfg.output_dir = out
    report = run_experiment(cfg)
    failed = [(i.instance, n, o.status) for i in report.instances for n, o in i.methods.items() if o.status == "error"]
    print(json.dumps(report.summary(), indent=2))
    print(f"wrote {out}")
    if failed:
        print(f"method errors: {failed}", file=sys.stderr)
        return 1
    return 0


def _cmd_act(args) -> int:
    _, gp = load_bundle(Path(args.model).read_text())
    if gp is None:
        print("bundle holds no generalized policy", file=sys.stderr)
        return 1
    if not 0 <= args.state < gp.table.n_states:
        print(f"state {args.state} out of range", file=sys.stderr)
        return 1
    print(",".join(str(int(a)) for a in gp(args.state)))
    return 0


def _cmd_prop1(args) -> int:
    toy = random_deterministic_toy(args.m, args.x, args.seed)
    holds, dev = proposition1_check(toy, args.beta, args.n_max)
    print(json.dumps({"holds": holds, "max_deviation": dev}))
    return 0 if holds else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a seeded experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("act", help="query a saved policy")
    p.add_argument("--model", required=True)
    p.add_argument("--state", type=int, required=True)
    p.set_defaults(func=_cmd_act)

    p = sub.add_parser("prop1", help="check the tabular local/central equivalence on a random toy")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--x", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--n-max", type=int, default=20)
    p.set_defaults(func=_cmd_prop1)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigurationError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
