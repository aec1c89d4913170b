"""
Experiment runners: one config in, one self-describing output directory out.

    <output_dir>/
        manifest.json       seed, spawn keys, config hash, versions
        report.txt          audits, counters, metric and tail reports
        moments.csv         one row per snapshot
        snapshots/          snapshot_NNNN.csv
        plots/              two-column .dat files
        sweep.csv | tail.csv | metric.csv

Nothing written depends on the clock or on the worker count, so the same
config and seed give the same bytes.
"""

import logging
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy

import edgeworth
from edgeworth import analysis
from edgeworth.config import AnalysisConfig, ExperimentConfig, ExperimentKind, require_compatible
from edgeworth.ensemble import (
    Ensemble,
    Mode,
    initial_ensemble,
    lineage,
    quasi_invariant_run,
    run,
    seed_sequence,
    worker_seeds,
)
from edgeworth.errors import InsufficientSampleError
from edgeworth.fokker_planck import FPSnapshot, FPTrajectory, moment_rate, run_fp, to_vw
from edgeworth.snapshots import read_snapshot, write_manifest, write_plot, write_report, write_snapshot, write_table

logger = logging.getLogger(__name__)

REFERENCE_STRETCH = 4.0     # the metric-study reference runs this many horizons
DECAY_SLACK = 0.1           # Monte Carlo slack on the Gronwall bound
PAIR_SPREAD = 0.5           # the metric-study partner keeps this fraction of the spread around the means

Report = Dict[str, Dict[str, object]]


@dataclass
class RunResult:
    kind: ExperimentKind
    output_dir: Path
    report: Report
    artifacts: List[str] = field(default_factory=list)


class _Artifacts:
    """Writes into one output directory and remembers what it wrote."""

    def __init__(self, cfg: ExperimentConfig):
        self.root = Path(cfg.output_dir)
        self.precision = cfg.precision
        self.written: List[str] = []

    def _path(self, relative: str) -> Path:
        self.written.append(relative)
        return self.root / relative

    def snapshot(self, index: int, snapshot):
        write_snapshot(self._path(f"snapshots/snapshot_{index:04d}.csv"), snapshot, self.precision)

    def table(self, name: str, columns):
        write_table(self._path(name), columns, self.precision)

    def plot(self, name: str, xs, ys):
        write_plot(self._path(f"plots/{name}.dat"), xs, ys, self.precision)

    def finish(self, cfg: ExperimentConfig, report: Report, spawn_keys: Dict[str, Tuple[int, ...]]):
        write_report(self._path("report.txt"), {k: {key: _show(v, self.precision) for key, v in entries.items()}
                                                for k, entries in report.items()})
        manifest = {
            "experiment": str(cfg.experiment),
            "seed": cfg.seed,
            "spawn_keys": {name: list(key) for name, key in spawn_keys.items()},
            "config_hash": cfg.config_hash(),
            "config": cfg.canonical(),
            "versions": {
                "edgeworth": edgeworth.__version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "pandas": pd.__version__,
                "python": platform.python_version(),
            },
            "artifacts": sorted(self.written + ["manifest.json"]),
        }
        write_manifest(self.root / "manifest.json", manifest)


def _show(value, precision: int) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.{precision}g}"
    if isinstance(value, (tuple, list)):
        return " ".join(_show(v, precision) for v in value)
    return str(value)


def _streams(cfg: ExperimentConfig):
    """(initial data, dynamics, analysis) streams; the first two are the ones ensemble.run uses."""
    return seed_sequence(cfg.seed).spawn(3)


def _tail_section(v: np.ndarray, cfg: ExperimentConfig, rng: np.random.Generator,
                  trajectory: Optional[FPTrajectory] = None) -> Dict[str, object]:
    try:
        tail = analysis.tail_index(v, cfg.analysis.tail_fraction, rng, cfg.analysis.bootstrap, trajectory)
    except InsufficientSampleError as e:
        return {"status": f"skipped ({e})"}
    return {
        "hill_index": tail.index,
        "hill_stderr": tail.stderr,
        "order_statistics": tail.k,
        "inner_hill_index": tail.inner_index,
        "rank_regression_index": tail.rank_index,
        "rank_regression_stderr": tail.rank_stderr,
        "thin_tailed": tail.thin_tailed,
    }


# agent runs


def run_simulation(cfg: ExperimentConfig, out: _Artifacts):
    sc = cfg.sim_config()
    init_ss, dyn_ss, analysis_ss = _streams(cfg)
    trajectory = run(sc)
    means = trajectory.reference_means

    for index, snapshot in enumerate(trajectory.snapshots):
        out.snapshot(index, snapshot)
    times = trajectory.times
    concentration = [analysis.concentration_diagnostic(s, means) for s in trajectory.snapshots]
    out.table("moments.csv", {
        "t": times,
        "mean_x": [s.means[0] for s in trajectory.snapshots],
        "mean_y": [s.means[1] for s in trajectory.snapshots],
        "concentration": concentration,
    })
    out.plot("concentration", times, concentration)

    audit = analysis.conservation_audit(trajectory)
    rng = np.random.default_rng(analysis_ss)
    contraction = analysis.contraction_audit(cfg.trade, cfg.analysis.s or 2.0, cfg.analysis.contraction_samples, rng)
    dissipation = analysis.dissipation_audit(cfg.trade)
    final = trajectory.final
    v, _ = to_vw(final.x, final.y, means)

    report = {
        "run": {
            "mode": str(trajectory.mode),
            "agents": len(final.x),
            "horizon": cfg.time.horizon,
            "selection": str(cfg.time.selection),
            "snapshots": len(trajectory.snapshots),
            "trades": trajectory.steps,
            "skipped_trades": trajectory.skipped,
            "clamped_trades": trajectory.clamped,
        },
        "conservation": {
            "initial_totals": audit.initial_totals,
            "final_totals": audit.final_totals,
            "max_abs_drift": audit.max_abs_drift,
            "max_rel_drift": audit.max_rel_drift,
            "exact": audit.exact,
        },
        "audits": {
            "dissipation": dissipation.value,
            "dissipative": dissipation.dissipative,
            "contraction_s": contraction.s,
            "contraction_estimate": contraction.estimate,
            "contraction_stderr": contraction.stderr,
            "contracts": contraction.contracts,
        },
        "concentration": {"initial": concentration[0], "final": concentration[-1]},
        "tail": _tail_section(v, cfg, rng),
    }
    if trajectory.mode is Mode.NONLINEAR and not audit.exact:
        logger.warning("totals drifted in a nonlinear run: %s", audit.max_abs_drift)
    return report, {"initial": lineage(init_ss), "dynamics": lineage(dyn_ss), "analysis": lineage(analysis_ss)}


# fokker-planck runs


def _fp_initial(cfg: ExperimentConfig, ss: np.random.SeedSequence) -> Tuple[np.ndarray, np.ndarray]:
    x, y = cfg.population.initial.generate(cfg.population.n, np.random.default_rng(ss))
    means = (math.fsum(x) / len(x), math.fsum(y) / len(y))
    v, w = to_vw(x, y, means)
    return v, w * (1.0 - cfg.fokker_planck.support_margin)


def _fp_run(cfg: ExperimentConfig, out: _Artifacts):
    init_ss, dyn_ss, analysis_ss = _streams(cfg)
    fp = cfg.fp_params()
    v0, w0 = _fp_initial(cfg, init_ss)
    trajectory = run_fp((v0, w0), fp, cfg.time.horizon, cfg.time.snapshot_every, seed=dyn_ss,
                        orders=cfg.fokker_planck.orders)

    for index, snapshot in enumerate(trajectory.snapshots):
        out.snapshot(index, snapshot)
    taus = trajectory.taus
    columns = {"tau": taus}
    for r in trajectory.orders:
        start = float(np.mean(np.abs(w0) ** (1.0 + r)))
        oracle = start * np.exp(moment_rate(r, fp) * taus)
        columns[f"w_moment_{r:g}"] = trajectory.w_moments[r]
        columns[f"w_oracle_{r:g}"] = oracle
        columns[f"v_moment_{r:g}"] = trajectory.v_moments[r]
        if all(m > 0 for m in trajectory.w_moments[r]):
            out.plot(f"log_w_moment_{r:g}", taus, np.log(trajectory.w_moments[r]))
    out.table("moments.csv", columns)

    report = {
        "run": {
            "particles": len(v0),
            "horizon": cfg.time.horizon,
            "dtau": fp.dtau,
            "snapshots": len(trajectory.snapshots),
            "projections": trajectory.projected,
        },
        "fokker_planck": {
            "lambda": fp.lam,
            "sigma1_sq": fp.sigma1_sq,
            "sigma2_sq": fp.sigma2_sq,
            "v_drift": fp.v_drift,
            "critical_order": analysis.critical_order(fp),
        },
    }
    spawn_keys = {"initial": lineage(init_ss), "dynamics": lineage(dyn_ss), "analysis": lineage(analysis_ss)}
    return trajectory, report, spawn_keys, analysis_ss


def run_fokker_planck(cfg: ExperimentConfig, out: _Artifacts):
    _, report, spawn_keys, _ = _fp_run(cfg, out)
    return report, spawn_keys


def run_tail_study(cfg: ExperimentConfig, out: _Artifacts):
    trajectory, report, spawn_keys, analysis_ss = _fp_run(cfg, out)
    fp = trajectory.fp
    v = trajectory.snapshots[-1].v
    rng = np.random.default_rng(analysis_ss)
    report["tail"] = _tail_section(v, cfg, rng, trajectory)

    w_growth = analysis.moment_growth_rates(trajectory.taus, trajectory.w_moments) if len(trajectory.snapshots) > 1 else {}
    v_growth = analysis.moment_growth_rates(trajectory.taus, trajectory.v_moments) if len(trajectory.snapshots) > 1 else {}
    threshold = analysis.critical_order(fp)
    orders = list(trajectory.orders)
    out.table("tail.csv", {
        "r": orders,
        "moment_order": [1.0 + r for r in orders],
        "predicted_rate": [moment_rate(r, fp) for r in orders],
        "w_growth": [w_growth.get(r, math.nan) for r in orders],
        "v_growth": [v_growth.get(r, math.nan) for r in orders],
        "above_critical": [int(r > threshold) for r in orders],
    })
    report["moment_law"] = {
        "critical_order": threshold,
        "sign_consistent": all((w_growth[r] < 0) == (r < threshold) for r in w_growth if r != threshold)
        if w_growth else "n/a",
    }
    return report, spawn_keys


# quasi-invariant sweep


def _sweep_point(cfg: ExperimentConfig, epsilon: float, ss: np.random.SeedSequence) -> Dict[str, object]:
    sc = replace(cfg.sim_config(Mode.LINEAR), seed=ss)
    trajectory = quasi_invariant_run(sc, epsilon)
    first, last = trajectory.snapshots[0], trajectory.final
    _, w0 = to_vw(first.x, first.y, trajectory.reference_means)
    _, w1 = to_vw(last.x, last.y, trajectory.reference_means)
    distance = analysis.quasi_invariant_distance(w0, w1, cfg.fp_params(), last.t - first.t)
    logger.info("eps=%g: KS distance %.4g after %d trades", epsilon, distance, trajectory.steps)
    return {
        "epsilon": epsilon,
        "distance": distance,
        "tau": last.t,
        "steps": trajectory.steps,
        "clamped": trajectory.clamped,
        "concentration": analysis.concentration_diagnostic(last, trajectory.reference_means),
        "snapshot": last,
    }


def run_quasi_invariant_sweep(cfg: ExperimentConfig, out: _Artifacts):
    epsilons = sorted(cfg.sweep.epsilons, reverse=True)
    children = worker_seeds(cfg.seed, len(epsilons))
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            points = list(pool.map(_sweep_point, [cfg] * len(epsilons), epsilons, children))
    else:
        points = [_sweep_point(cfg, eps, ss) for eps, ss in zip(epsilons, children)]

    distances = [p["distance"] for p in points]
    monotone = [1] + [int(b < a) for a, b in zip(distances, distances[1:])]
    for index, point in enumerate(points):
        out.snapshot(index, point["snapshot"])
    out.table("sweep.csv", {
        "epsilon": epsilons,
        "distance": distances,
        "tau": [p["tau"] for p in points],
        "trades": [p["steps"] for p in points],
        "clamped": [p["clamped"] for p in points],
        "monotone": monotone,
    })
    out.table("moments.csv", {
        "epsilon": epsilons,
        "tau": [p["tau"] for p in points],
        "concentration": [p["concentration"] for p in points],
    })
    out.plot("sweep", epsilons, distances)

    fp = cfg.fp_params()
    report = {
        "sweep": {
            "epsilons": epsilons,
            "distances": distances,
            "strictly_decreasing": all(monotone),
        },
        "limit": {"lambda": fp.lam, "sigma2_sq": fp.sigma2_sq, "tau": cfg.time.horizon},
    }
    return report, {f"eps_{eps:g}": lineage(ss) for eps, ss in zip(epsilons, children)}


# metric study


def run_metric_study(cfg: ExperimentConfig, out: _Artifacts):
    """
    d_s of a linear run against a late-time reference in the transformed
    frequencies, and d_s between two same-mean runs against the Gronwall bound.

    Both comparisons are made in market coordinates. Above s = 1 the samples
    are recentred, since d_s is only finite between equal means. The second
    solution is the first one with its spread around the means halved, driven
    by the same dynamics stream, so the pair differs only through its initial law.
    """
    sc = cfg.sim_config(Mode.LINEAR)
    init_ss, dyn_ss, analysis_ss = _streams(cfg)
    reference_ss, audit_ss = analysis_ss.spawn(2)

    base = initial_ensemble(sc, init_ss)
    trajectory = run(sc, ensemble=base)
    long_run = replace(sc, seed=reference_ss, horizon=REFERENCE_STRETCH * max(sc.horizon, 1.0), snapshot_every=None)
    reference = run(long_run, ensemble=base).final

    m_x, m_y = base.reference_means
    other = Ensemble.from_arrays(m_x + PAIR_SPREAD * (base.x - m_x), m_y + PAIR_SPREAD * (base.y - m_y),
                                 reference_means=base.reference_means)
    partner = run(sc, ensemble=other)

    s = cfg.analysis.s or 2.0
    recentre = s > 1.0
    grid = analysis.FourierGrid.rays(points=cfg.analysis.grid_points, s=s)
    a, b = cfg.trade.mean_coefficients()
    transformed = grid.transformed(a, b)
    means = trajectory.reference_means

    def market(snapshot):
        return analysis.market_coordinates(snapshot.x, snapshot.y, means)

    to_reference = [analysis.ds_distance(market(snap), market(reference), transformed, s, recentre=recentre)
                    for snap in trajectory.snapshots]
    pair = [analysis.ds_distance(market(snap), market(other_snap), grid, s, recentre=recentre)
            for snap, other_snap in zip(trajectory.snapshots, partner.snapshots)]

    rng = np.random.default_rng(audit_ss)
    contraction = analysis.contraction_audit(cfg.trade, s, cfg.analysis.contraction_samples, rng)
    c_s = analysis.contraction_constant(cfg.trade, grid, min(cfg.analysis.contraction_samples, 4096), rng)
    times = trajectory.times
    bound = [analysis.decay_bound(pair[0].distance, c_s.value, t - times[0]) for t in times]
    bound_holds = all(p.distance <= (1.0 + DECAY_SLACK) * limit for p, limit in zip(pair, bound))

    for index, snapshot in enumerate(trajectory.snapshots):
        out.snapshot(index, snapshot)
    concentration = [analysis.concentration_diagnostic(snap, means) for snap in trajectory.snapshots]
    out.table("metric.csv", {
        "t": times,
        "ds_reference": [m.distance for m in to_reference],
        "ds_pair": [m.distance for m in pair],
        "decay_bound": bound,
    })
    out.table("moments.csv", {"t": times, "concentration": concentration})
    out.plot("ds_reference", times, [m.distance for m in to_reference])
    out.plot("ds_pair", times, [m.distance for m in pair])

    try:
        slope = analysis.trend(times, [m.distance for m in to_reference])
        trend_section = {"slope": slope.slope, "stderr": slope.stderr, "lower": slope.lower,
                         "upper": slope.upper, "non_increasing": slope.non_increasing}
    except InsufficientSampleError as e:
        trend_section = {"status": f"skipped ({e})"}

    report = {
        "metric": {
            "s": s,
            "grid_points": len(grid),
            "A": a,
            "B": b,
            "initial_distance": to_reference[0].distance,
            "final_distance": to_reference[-1].distance,
            "diverging": any(m.diverging for m in to_reference + pair),
        },
        "trend": trend_section,
        "contraction": {
            "estimate": contraction.estimate,
            "stderr": contraction.stderr,
            "contracts": contraction.contracts,
            "grid_constant": c_s.value,
            "decay_bound_holds": bound_holds,
        },
    }
    spawn_keys = {"initial": lineage(init_ss), "dynamics": lineage(dyn_ss), "reference": lineage(reference_ss),
                  "audit": lineage(audit_ss)}
    return report, spawn_keys


RUNNERS = {
    ExperimentKind.NONLINEAR: run_simulation,
    ExperimentKind.LINEAR: run_simulation,
    ExperimentKind.FOKKER_PLANCK: run_fokker_planck,
    ExperimentKind.TAIL_STUDY: run_tail_study,
    ExperimentKind.QUASI_INVARIANT_SWEEP: run_quasi_invariant_sweep,
    ExperimentKind.METRIC_STUDY: run_metric_study,
}


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    """Run the configured experiment and write its output directory."""
    logger.info("running %s into %s (seed %d)", cfg.experiment, cfg.output_dir, cfg.seed)
    out = _Artifacts(cfg)
    report, spawn_keys = RUNNERS[cfg.experiment](cfg, out)
    out.finish(cfg, report, spawn_keys)
    return RunResult(cfg.experiment, out.root, report, sorted(out.written + ["manifest.json"]))


def run_sweep(cfg: ExperimentConfig) -> RunResult:
    """The quasi-invariant sweep of any linear-compatible config."""
    cfg = replace(cfg, experiment=ExperimentKind.QUASI_INVARIANT_SWEEP)
    require_compatible(cfg, ExperimentKind.QUASI_INVARIANT_SWEEP)
    return run_experiment(cfg)


# analysis of stored snapshots


def analyze_snapshot(path: Path, reference: Optional[Path] = None,
                     settings: AnalysisConfig = AnalysisConfig(), seed: int = 0) -> Report:
    snapshot = read_snapshot(path)
    rng = np.random.default_rng(seed)
    if isinstance(snapshot, FPSnapshot):
        v, w = snapshot.v, snapshot.w
        summary = {"kind": "particles", "tau": snapshot.tau, "particles": len(v)}
        spread = float(np.sum(v * v))
        concentration = float(np.sum(w * w)) / spread if spread else math.nan
    else:
        totals = snapshot.totals
        means = snapshot.means
        v, _ = to_vw(snapshot.x, snapshot.y, means)
        summary = {"kind": "agents", "t": snapshot.t, "agents": len(snapshot.x),
                   "total_x": totals[0], "total_y": totals[1], "mean_x": means[0], "mean_y": means[1]}
        concentration = analysis.concentration_diagnostic(snapshot, means)
    summary["concentration"] = concentration

    report = {"snapshot": summary}
    try:
        tail = analysis.tail_index(v, settings.tail_fraction, rng, settings.bootstrap)
        report["tail"] = {"hill_index": tail.index, "hill_stderr": tail.stderr,
                          "rank_regression_index": tail.rank_index, "thin_tailed": tail.thin_tailed}
    except InsufficientSampleError as e:
        report["tail"] = {"status": f"skipped ({e})"}

    if reference is not None:
        other = read_snapshot(reference)
        grid = analysis.FourierGrid.rays(points=settings.grid_points)
        metric = analysis.ds_distance(snapshot, other, grid, settings.s)
        report["distance"] = {"reference": str(reference), "s": metric.s, "d_s": metric.distance,
                              "argmax": metric.argmax, "diverging": metric.diverging}
    return report
