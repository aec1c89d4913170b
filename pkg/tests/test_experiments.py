import math

import numpy as np
import pytest

from edgeworth.config import ExperimentKind
from edgeworth.errors import ConfigError
from edgeworth.experiments import analyze_snapshot, run_experiment, run_sweep
from edgeworth.snapshots import read_manifest, read_snapshot, read_table

SMALL_RUN = """
[population]
n = 200

[time]
horizon = 2.0
snapshot_every = 1.0

[trade.noise]
kind = "uniform"
delta = 0.1
"""

SWEEP = """
experiment = "quasi-invariant-sweep"

[trade]
lambda = 0.5

[trade.noise]
kind = "uniform"
delta = 0.03
"""


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_nonlinear_run_writes_its_artifacts(make_config):
    cfg = make_config(SMALL_RUN)
    result = run_experiment(cfg)
    assert result.kind is ExperimentKind.NONLINEAR
    expected = {"manifest.json", "report.txt", "moments.csv", "plots/concentration.dat",
                "snapshots/snapshot_0000.csv", "snapshots/snapshot_0001.csv", "snapshots/snapshot_0002.csv"}
    assert set(result.artifacts) == expected
    assert set(_tree(result.output_dir)) == expected

    assert result.report["conservation"]["exact"]
    assert result.report["run"]["trades"] == 200
    # fewer than a thousand agents: no tail estimate
    assert result.report["tail"]["status"].startswith("skipped")

    moments = read_table(result.output_dir / "moments.csv")
    assert moments["t"].tolist() == [0.0, 1.0, 2.0]
    manifest = read_manifest(result.output_dir / "manifest.json")
    assert manifest["config_hash"] == cfg.config_hash()
    assert manifest["spawn_keys"]["dynamics"] == [0, 1]
    assert "[conservation]\n" in (result.output_dir / "report.txt").read_text()


def test_zero_horizon_writes_the_initial_snapshot(make_config):
    result = run_experiment(make_config("[population]\nn = 50\n[time]\nhorizon = 0.0\n"))
    assert result.report["run"]["trades"] == 0
    assert result.report["run"]["snapshots"] == 1
    assert read_snapshot(result.output_dir / "snapshots/snapshot_0000.csv").t == 0.0


def test_same_seed_same_bytes(make_config):
    text = 'experiment = "linear"\n' + SMALL_RUN
    first = run_experiment(make_config(text, seed=5))
    second = run_experiment(make_config(text, seed=5))
    assert first.output_dir != second.output_dir
    assert _tree(first.output_dir) == _tree(second.output_dir)
    third = run_experiment(make_config(text, seed=6))
    assert _tree(third.output_dir) != _tree(first.output_dir)


def test_snapshots_seed_new_runs(make_config, tmp_path):
    first = run_experiment(make_config("[population]\nn = 50\n[time]\nhorizon = 0.0\n"))
    source = first.output_dir / "snapshots/snapshot_0000.csv"
    text = f'[population]\nn = 50\ninitial = "csv"\npath = "{source.relative_to(tmp_path).as_posix()}"\n[time]\nhorizon = 0.0\n'
    again = run_experiment(make_config(text))
    assert (again.output_dir / "snapshots/snapshot_0000.csv").read_bytes() == source.read_bytes()


def test_linear_snapshots_seed_nonlinear_runs_bit_for_bit(make_config, tmp_path):
    first = run_experiment(make_config('experiment = "linear"\n' + SMALL_RUN))
    source = first.output_dir / "snapshots/snapshot_0000.csv"
    text = f'[population]\nn = 200\ninitial = "csv"\npath = "{source.relative_to(tmp_path).as_posix()}"\n[time]\nhorizon = 0.0\n'
    again = run_experiment(make_config(text))
    assert again.kind is ExperimentKind.NONLINEAR
    assert (again.output_dir / "snapshots/snapshot_0000.csv").read_bytes() == source.read_bytes()


def test_quasi_invariant_sweep(make_config):
    result = run_experiment(make_config(SWEEP + "[population]\nn = 1000\n"))
    sweep = read_table(result.output_dir / "sweep.csv")
    assert sweep["epsilon"].tolist() == [0.5, 0.1, 0.02]
    assert sweep["trades"].tolist() == sorted(sweep["trades"].tolist())
    assert sweep["tau"].tolist() == pytest.approx([1.0, 1.0, 1.0])
    assert all(0.0 <= d <= 1.0 for d in sweep["distance"])
    assert sweep["monotone"].iloc[0] == 1
    assert set(sweep["monotone"]) <= {0, 1}
    assert result.report["limit"]["sigma2_sq"] == pytest.approx(2 * 0.03 ** 2 / 3)


def test_sweep_does_not_depend_on_the_worker_count(make_config):
    text = SWEEP + "[population]\nn = 100\n"
    serial = run_experiment(make_config(text, workers=1))
    parallel = run_experiment(make_config(text, workers=2))
    assert _tree(serial.output_dir) == _tree(parallel.output_dir)


def test_sweep_of_a_linear_config(make_config):
    text = 'experiment = "linear"\n[trade.noise]\nkind = "uniform"\ndelta = 0.03\n[population]\nn = 100\n'
    result = run_sweep(make_config(text))
    assert result.kind is ExperimentKind.QUASI_INVARIANT_SWEEP
    assert "sweep.csv" in result.artifacts
    with pytest.raises(ConfigError):
        run_sweep(make_config('experiment = "linear"\n'))


@pytest.mark.slow
def test_sweep_distance_falls_with_epsilon(make_config):
    result = run_experiment(make_config(SWEEP + "[population]\nn = 100000\n"))
    distances = read_table(result.output_dir / "sweep.csv")["distance"].tolist()
    assert distances[0] > distances[1] > distances[2]
    assert result.report["sweep"]["strictly_decreasing"]


def test_fokker_planck_run(make_config):
    text = 'experiment = "fokker-planck"\n[fokker_planck]\nsigma1_sq = 0.5\nsigma2_sq = 0.5\n' \
           '[population]\nn = 500\n[time]\nsnapshot_every = 0.5\n'
    result = run_experiment(make_config(text))
    moments = read_table(result.output_dir / "moments.csv")
    assert moments["tau"].tolist() == pytest.approx([0.0, 0.5, 1.0])
    for r in ("0.5", "1", "3"):
        assert moments[f"w_moment_{r}"].iloc[0] == pytest.approx(moments[f"w_oracle_{r}"].iloc[0])
    assert result.report["fokker_planck"]["critical_order"] == 2.0
    snapshot = read_snapshot(result.output_dir / "snapshots/snapshot_0002.csv")
    assert np.all(np.abs(snapshot.w) <= snapshot.v)


def test_tail_study(make_config):
    text = 'experiment = "tail-study"\n[fokker_planck]\nsigma1_sq = 0.5\nsigma2_sq = 0.5\n' \
           '[population]\nn = 2000\n[time]\nsnapshot_every = 0.25\n[analysis]\nbootstrap = 20\n'
    result = run_experiment(make_config(text))
    tail = read_table(result.output_dir / "tail.csv")
    assert tail["r"].tolist() == [0.5, 1.0, 3.0]
    assert tail["above_critical"].tolist() == [0, 0, 1]
    assert tail["predicted_rate"].tolist() == pytest.approx([-0.5625, -0.5, 1.0])
    assert not any(math.isnan(g) for g in tail["w_growth"])
    assert result.report["moment_law"]["critical_order"] == 2.0
    assert "hill_index" in result.report["tail"]


def test_metric_study(make_config):
    text = 'experiment = "metric-study"\n[population]\nn = 300\n[time]\nhorizon = 2.0\nsnapshot_every = 0.5\n' \
           '[analysis]\ngrid_points = 16\ncontraction_samples = 1000\n'
    result = run_experiment(make_config(text))
    metric = read_table(result.output_dir / "metric.csv")
    assert metric["t"].tolist() == pytest.approx([0.0, 0.5, 1.0, 1.5, 2.0])
    assert metric["decay_bound"].iloc[0] == metric["ds_pair"].iloc[0]
    assert (result.report["metric"]["A"], result.report["metric"]["B"]) == (0.25, 0.25)
    assert result.report["metric"]["grid_points"] == 64
    assert set(result.report["trend"]) >= {"slope", "upper", "non_increasing"}
    assert result.report["contraction"]["decay_bound_holds"]


def test_metric_study_contracts_within_the_decay_bound(make_config):
    text = ('experiment = "metric-study"\nseed = 2\n[trade.noise]\nkind = "uniform"\ndelta = 0.1\n'
            '[population]\nn = 2000\n[time]\nhorizon = 5.0\nsnapshot_every = 0.5\n'
            '[analysis]\ngrid_points = 32\ncontraction_samples = 20000\n')
    report = run_experiment(make_config(text)).report
    assert report["contraction"]["contracts"]
    assert report["contraction"]["decay_bound_holds"]
    assert report["trend"]["non_increasing"]
    assert report["trend"]["upper"] < 0.0
    assert not report["metric"]["diverging"]
    assert report["metric"]["final_distance"] < 0.5 * report["metric"]["initial_distance"]


def test_analyze_stored_snapshots(make_config):
    result = run_experiment(make_config(SMALL_RUN))
    first = result.output_dir / "snapshots/snapshot_0000.csv"
    last = result.output_dir / "snapshots/snapshot_0002.csv"
    report = analyze_snapshot(last, reference=first)
    assert report["snapshot"]["kind"] == "agents"
    assert report["snapshot"]["agents"] == 200
    assert report["snapshot"]["total_x"] == read_snapshot(first).totals[0]
    # totals are conserved, so the means agree and s = 2
    assert report["distance"]["s"] == 2.0
    assert report["distance"]["d_s"] > 0
    assert report["tail"]["status"].startswith("skipped")
    assert analyze_snapshot(first, reference=first)["distance"]["d_s"] == 0.0

