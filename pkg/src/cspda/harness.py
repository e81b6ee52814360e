"""Seeded experiment sweeps: spec files, per-seed CSV logs, aggregates and plots."""
from __future__ import annotations

import csv
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import svg
from .envs import QueueParams, build_queue_cmdp, random_cmdp
from .lp import LpStatus, slater_margin, solve_cmdp_lp
from .model import CmdpModel, evaluate_occupancy, evaluate_policy, load_model, policy_from_occupancy
from .solver import SolverDiverged, derive_schedule, run

ENVIRONMENTS = ("queue", "random", "file")
KAPPA_MODES = ("auto", "zero", "explicit")
FULL_SWEEP_SEEDS = 200


class SpecError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    """Everything needed to reproduce a sweep.

    ``phi=None`` uses the model's LP Slater margin (capped at 1).
    ``schedule_cost_bound`` overrides the cost bound fed to the step-size
    schedule; ``None`` uses the model's own bound.
    """

    environment: str = "queue"
    model_path: str | None = None
    queue: dict = field(default_factory=dict)
    random_model: dict = field(default_factory=dict)
    T: int = 100_000
    delta: float = 0.25
    c_tilde1: float = 0.02
    phi: float | None = 0.2
    kappa_modes: tuple = ("auto",)
    kappa: float | None = None
    schedule_cost_bound: float | None = None
    num_seeds: int = 50
    seed_offset: int = 0
    stride: int | None = None
    out_dir: str = "results"
    workers: int = 1
    plots: bool = True

    def __post_init__(self):
        self.kappa_modes = tuple(self.kappa_modes)
        if self.environment not in ENVIRONMENTS:
            raise SpecError(f"environment must be one of {ENVIRONMENTS}, got {self.environment!r}")
        if self.environment == "file":
            if not self.model_path:
                raise SpecError("environment 'file' needs model_path")
            if not Path(self.model_path).is_file():
                raise SpecError(f"model file not found: {self.model_path}")
        if self.num_seeds < 1:
            raise SpecError("num_seeds must be at least 1")
        if self.T < 1:
            raise SpecError("T must be at least 1")
        if self.stride is not None and self.stride < 1:
            raise SpecError("stride must be at least 1")
        if self.workers < 1:
            raise SpecError("workers must be at least 1")
        if not self.kappa_modes or any(m not in KAPPA_MODES for m in self.kappa_modes):
            raise SpecError(f"kappa_modes must be a non-empty subset of {KAPPA_MODES}")
        if len(set(self.kappa_modes)) != len(self.kappa_modes):
            raise SpecError("duplicate kappa mode")
        if "explicit" in self.kappa_modes and (self.kappa is None or self.kappa < 0):
            raise SpecError("kappa mode 'explicit' needs a nonnegative kappa")

    @property
    def log_stride(self) -> int:
        return self.stride if self.stride is not None else max(1, self.T // 500)

    @property
    def seeds(self) -> list[int]:
        return list(range(self.seed_offset, self.seed_offset + self.num_seeds))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kappa_modes"] = list(self.kappa_modes)
        return d


def load_spec(path, **overrides) -> ExperimentSpec:
    """Read a YAML spec; relative ``model_path``/``out_dir`` resolve against the spec's folder."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    known = {f.name for f in fields(ExperimentSpec)}
    unknown = set(data) - known
    if unknown:
        raise SpecError(f"unknown spec keys: {sorted(unknown)}")
    for key in ("model_path", "out_dir"):
        if data.get(key) and not Path(data[key]).is_absolute():
            data[key] = str(path.parent / data[key])
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentSpec(**data)


def build_model(spec: ExperimentSpec) -> CmdpModel:
    if spec.environment == "queue":
        q = dict(spec.queue)
        for key in ("service_levels", "flow_levels"):
            if key in q:
                q[key] = tuple(q[key])
        return build_queue_cmdp(QueueParams(**q))
    if spec.environment == "random":
        return random_cmdp(**spec.random_model)
    return load_model(spec.model_path)


def columns(num_constraints: int) -> list[str]:
    g = [f"g{i + 1}" for i in range(num_constraints)]
    Jg = [f"J_g{i + 1}" for i in range(num_constraints)]
    return ["t", "obj_avg", *g, "flow_res", "J_r", *Jg]


@dataclass
class GapReport:
    optimum: float
    objective_gap: float
    conservative_objective_gap: float
    min_constraint: float
    flow_residual: float
    policy_objective_gap: float
    policy_constraints: np.ndarray


def compare_to_oracle(model: CmdpModel, avg_lambda, kappa: float = 0.0, oracle=None, oracle_kappa=None) -> GapReport:
    """Distance of an averaged occupancy measure from the LP optimum.

    ``oracle``/``oracle_kappa`` accept precomputed LP solutions at 0 and
    ``kappa`` to avoid re-solving inside sweeps.
    """
    lam = np.asarray(avg_lambda, dtype=float)
    oracle = oracle or solve_cmdp_lp(model, 0.0)
    if kappa == 0.0:
        oracle_kappa = oracle
    oracle_kappa = oracle_kappa or solve_cmdp_lp(model, kappa)
    if oracle.status is not LpStatus.OPTIMAL:
        raise ValueError(f"oracle LP is {oracle.status.value}")
    occ = evaluate_occupancy(model, lam)
    pol = evaluate_policy(model, policy_from_occupancy(lam))
    # lambda* satisfies the flow constraints, so its policy value is its LP objective
    return GapReport(
        optimum=oracle.objective,
        objective_gap=oracle.objective - occ.objective,
        conservative_objective_gap=(oracle_kappa.objective - occ.objective)
        if oracle_kappa.status is LpStatus.OPTIMAL else float("nan"),
        min_constraint=float(occ.constraint_values.min(initial=np.inf)),
        flow_residual=occ.flow_residual,
        policy_objective_gap=oracle.objective - pol.objective,
        policy_constraints=pol.constraint_values,
    )


@dataclass
class RunRecord:
    seed: int
    kappa_mode: str
    kappa: float
    rows: np.ndarray | None
    gap: GapReport | None = None
    positive_grad_events: int = 0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _log_rows(model: CmdpModel, avg_lams: np.ndarray, ts: np.ndarray) -> np.ndarray:
    I = model.num_constraints
    out = np.empty((len(ts), 2 * I + 4))
    for j, (t, lam) in enumerate(zip(ts, avg_lams)):
        occ = evaluate_occupancy(model, lam)
        pol = evaluate_policy(model, policy_from_occupancy(lam))
        out[j] = [t, occ.objective, *occ.constraint_values, occ.flow_residual,
                  pol.objective, *pol.constraint_values]
    return out


def _run_seed(job) -> RunRecord:
    model, config, mode, oracle, oracle_kappa = job
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = run(model, None, config)
    except SolverDiverged as exc:
        return RunRecord(config.seed, mode, config.kappa, None, error=str(exc))
    rows = _log_rows(model, res.log.avg_lam, res.log.t)
    gap = compare_to_oracle(model, res.avg_lambda, config.kappa, oracle, oracle_kappa)
    return RunRecord(config.seed, mode, config.kappa, rows, gap, int(res.log.positive_grad_events[-1]))


def _fmt(x: float) -> str:
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [[float(x) for x in row] for row in reader]
    return header, np.array(data, dtype=float).reshape(len(data), len(header))


def aggregate(records: list[RunRecord]) -> np.ndarray:
    """Columns ``t, <c>_mean, <c>_std, ...``; std is the sample std (0 for one seed)."""
    stack = np.stack([r.rows for r in records if r.ok])
    n = stack.shape[0]
    mean = stack.mean(axis=0)
    std = stack.std(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
    out = [mean[:, :1]]
    for c in range(1, stack.shape[2]):
        out += [mean[:, c : c + 1], std[:, c : c + 1]]
    return np.hstack(out)


def aggregate_columns(num_constraints: int) -> list[str]:
    head = ["t"]
    for c in columns(num_constraints)[1:]:
        head += [f"{c}_mean", f"{c}_std"]
    return head


PLOT_TITLES = {"J_r": "objective (policy value)", "obj_avg": "objective (occupancy)", "flow_res": "flow residual"}


def plot_aggregates(out_dir, modes: list[str]) -> list[Path]:
    """Render one SVG per logged quantity from ``<out_dir>/<mode>/aggregate.csv``."""
    out_dir = Path(out_dir)
    tables = {m: read_csv(out_dir / m / "aggregate.csv") for m in modes}
    header = tables[modes[0]][0]
    written = []
    for name in [h[: -len("_mean")] for h in header if h.endswith("_mean")]:
        series = []
        for m in modes:
            head, data = tables[m]
            i = head.index(f"{name}_mean")
            series.append(svg.Series(m, data[:, 0], data[:, i], data[:, i + 1]))
        if name.startswith("J_g") or (name.startswith("g") and name[1:].isdigit()):
            title, hline = f"constraint {name}", 0.0
        else:
            title, hline = PLOT_TITLES.get(name, name), None
        path = out_dir / f"{name}.svg"
        path.write_text(svg.render(series, title, "iteration t", name, hline), encoding="utf-8")
        written.append(path)
    return written


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    records: dict[str, list[RunRecord]]
    summary: dict
    out_dir: Path


def _resolve_phi(spec: ExperimentSpec, model: CmdpModel) -> float:
    if spec.phi is not None:
        return float(spec.phi)
    phi = slater_margin(model)
    if not phi > 0:
        raise SpecError(f"model has no positive Slater margin ({phi})")
    return min(float(phi), 1.0)


def _mode_kappa(spec: ExperimentSpec, mode: str):
    return {"auto": None, "zero": 0.0, "explicit": spec.kappa}[mode]


def run_experiment(spec: ExperimentSpec, model: CmdpModel | None = None) -> ExperimentResult:
    model = model or build_model(spec)
    phi = _resolve_phi(spec, model)
    out_dir = Path(spec.out_dir)
    oracle = solve_cmdp_lp(model, 0.0)
    if oracle.status is not LpStatus.OPTIMAL:
        raise SpecError(f"oracle LP is {oracle.status.value}")

    jobs, configs = [], {}
    for mode in spec.kappa_modes:
        base = derive_schedule(
            model, phi, spec.c_tilde1, spec.T, spec.schedule_cost_bound,
            delta=spec.delta, log_every=spec.log_stride, kappa=_mode_kappa(spec, mode),
        )
        configs[mode] = base
        oracle_kappa = solve_cmdp_lp(model, base.kappa)
        for seed in spec.seeds:
            jobs.append((model, derive_schedule(
                model, phi, spec.c_tilde1, spec.T, spec.schedule_cost_bound,
                delta=spec.delta, seed=seed, log_every=spec.log_stride, kappa=base.kappa,
            ), mode, oracle, oracle_kappa))

    workers = min(spec.workers, len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_seed, jobs))
    else:
        results = [_run_seed(j) for j in jobs]

    # single-threaded reduction and output
    records: dict[str, list[RunRecord]] = {m: [] for m in spec.kappa_modes}
    for rec in results:
        records[rec.kappa_mode].append(rec)
    head = columns(model.num_constraints)
    summary = {
        "model": {"num_states": model.num_states, "num_actions": model.num_actions,
                  "num_constraints": model.num_constraints, "discount": model.discount},
        "phi": phi, "T": spec.T, "stride": spec.log_stride, "lp_optimum": oracle.objective, "modes": {},
    }
    for mode, recs in records.items():
        mode_dir = out_dir / mode
        mode_dir.mkdir(parents=True, exist_ok=True)
        for rec in recs:
            if rec.ok:
                write_csv(mode_dir / f"seed_{rec.seed}.csv", head, rec.rows)
        ok = [r for r in recs if r.ok]
        entry = {
            "kappa": configs[mode].kappa,
            "schedule": {k: getattr(configs[mode], k) for k in ("alpha", "beta", "M", "u_radius", "v_radius", "delta")},
            "seeds_ok": len(ok),
            "failed": [{"seed": r.seed, "error": r.error} for r in recs if not r.ok],
        }
        if ok:
            agg = aggregate(ok)
            write_csv(mode_dir / "aggregate.csv", aggregate_columns(model.num_constraints), agg)
            entry["final"] = {c: float(x) for c, x in zip(aggregate_columns(model.num_constraints), agg[-1])}
            entry["mean_objective_gap"] = float(np.mean([r.gap.objective_gap for r in ok]))
            entry["mean_policy_objective_gap"] = float(np.mean([r.gap.policy_objective_gap for r in ok]))
            entry["positive_grad_events"] = int(sum(r.positive_grad_events for r in ok))
        summary["modes"][mode] = entry

    if spec.environment == "queue":
        params = QueueParams(**{k: tuple(v) if isinstance(v, list) else v for k, v in spec.queue.items()})
        summary["raw_lp_optimum"] = params.raw_objective(oracle.objective)
        for entry in summary["modes"].values():
            if "final" in entry:
                entry["raw_J_r_mean"] = params.raw_objective(entry["final"]["J_r_mean"])

    out_dir.mkdir(parents=True, exist_ok=True)
    modes_ok = [m for m in spec.kappa_modes if summary["modes"][m]["seeds_ok"]]
    if spec.plots and modes_ok:
        plot_aggregates(out_dir, modes_ok)
    with open(out_dir / "summary.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump({"spec": spec.to_dict(), **summary}, fh, sort_keys=False)
    return ExperimentResult(spec, records, summary, out_dir)


def default_workers() -> int:
    return max(1, min(os.cpu_count() or 1, 8))


@dataclass
class GapSweepPoint:
    T: int
    kappa: float
    mean_gap: float
    std_err: float


def duality_gap_sweep(model: CmdpModel, phi: float, c_tilde1: float, Ts, num_seeds: int = 20,
                      G_max: float | None = None) -> list[GapSweepPoint]:
    """Seed-averaged duality-gap proxy at each horizon in ``Ts`` (schedule re-derived per T)."""
    from .solver import duality_gap

    out = []
    for T in Ts:
        base = derive_schedule(model, phi, c_tilde1, T, G_max)
        star = solve_cmdp_lp(model, base.kappa)
        if star.status is not LpStatus.OPTIMAL:
            raise SpecError(f"tightened LP is {star.status.value} at T = {T}")
        gaps = []
        for seed in range(num_seeds):
            cfg = derive_schedule(model, phi, c_tilde1, T, G_max, seed=seed, log_every=T)
            res = run(model, None, cfg)
            gaps.append(duality_gap(model, res.avg_lambda, res.avg_duals, star.lambda_star, cfg))
        gaps = np.array(gaps)
        se = gaps.std(ddof=1) / np.sqrt(num_seeds) if num_seeds > 1 else 0.0
        out.append(GapSweepPoint(int(T), base.kappa, float(gaps.mean()), float(se)))
    return out
