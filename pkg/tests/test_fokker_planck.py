import math

import numpy as np
import pytest

from edgeworth.errors import DomainError
from edgeworth.fokker_planck import (
    FPParams,
    VWParticle,
    critical_order,
    em_oracle_ks,
    euler_maruyama,
    moment_rate,
    run_fp,
    sde_step,
    to_particles,
    to_vw,
    w_moment_oracle,
    w_path_oracle,
)
from edgeworth.trade import ExponentKind, ExponentLaw, NoiseKind, NoiseSpec, TradeParams, UtilityParams


@pytest.fixture
def fp():
    return FPParams(0.5, 0.5, sigma1_sq=0.5, sigma2_sq=0.5, dtau=0.005)


def test_particles_live_in_the_cone():
    with pytest.raises(DomainError):
        VWParticle(1.0, 2.0)
    with pytest.raises(DomainError):
        VWParticle(math.inf, 0.0)
    VWParticle(1.0, -1.0)


def test_parameter_defaults():
    fp = FPParams(0.5, 0.3, sigma1_sq=0.2, sigma2_sq=0.8)
    assert fp.beta == pytest.approx(0.7)
    assert fp.dtau == pytest.approx(0.01 / 0.8)
    assert fp.v_drift == pytest.approx(0.5 * (0.3 - 0.7))
    with pytest.raises(DomainError):
        FPParams(0.0)
    with pytest.raises(DomainError):
        FPParams(0.5, sigma2_sq=-1.0)


def test_limit_coefficients_of_a_trade():
    tp = TradeParams(0.5, UtilityParams(0.5), NoiseSpec(NoiseKind.UNIFORM, 0.1))
    fp = FPParams.from_trade(tp)
    assert fp.sigma1_sq == fp.sigma2_sq == pytest.approx(2 * 0.01 / 3)
    assert FPParams.uncorrelated(0.5, 0.25).sigma2_sq == 0.5
    random_exponents = TradeParams(0.5, exponents=ExponentLaw(ExponentKind.UNIFORM, 0.4, 1.0))
    assert FPParams.from_trade(random_exponents).drift_difference == pytest.approx(0.4)


def test_critical_order(fp):
    assert critical_order(fp) == 2.0
    assert critical_order(FPParams(0.5)) == math.inf


def test_market_coordinates():
    v, w = to_vw([2.0, 0.0], [0.0, 2.0], (1.0, 1.0))
    assert list(v) == [2.0, 2.0] and list(w) == [2.0, -2.0]
    assert [(p.v, p.w) for p in to_particles(v, w)] == [(2.0, 2.0), (2.0, -2.0)]


# stepping


def test_line_w_zero_is_absorbing(fp, rng):
    p = VWParticle(1.0, 0.0)
    for _ in range(100):
        p = sde_step(p, fp, rng)
    assert (p.v, p.w) == (1.0, 0.0)


def test_drift_only_step():
    fp = FPParams(0.5, 0.5, dtau=0.01)
    v, w, projected = euler_maruyama(np.array([2.0]), np.array([1.0]), fp, np.zeros(1), np.zeros(1))
    assert v[0] == 2.0
    assert w[0] - 1.0 == pytest.approx(-0.005)
    assert projected == 0


def test_steps_that_leave_the_cone_are_projected():
    fp = FPParams(0.5, 0.5, sigma1_sq=1.0, sigma2_sq=1.0, dtau=0.01)
    v, w, projected = euler_maruyama(np.array([1.0]), np.array([1.0]), fp, np.array([-5.0]), np.array([0.0]))
    assert projected == 1
    assert v[0] == abs(w[0])


# oracles


def test_moment_oracle(fp):
    assert w_moment_oracle(-2.0, 1.0, fp, 0.0) == 4.0
    assert w_moment_oracle(1.0, 1.0, fp, 1.0) == pytest.approx(math.exp(-0.5))
    assert w_moment_oracle(1.5, 2.0, fp, 3.0) == pytest.approx(1.5 ** 3)
    assert moment_rate(2.0, fp) == 0.0
    assert w_moment_oracle(1.0, 3.0, fp, 1.0) > w_moment_oracle(1.0, 3.0, fp, 0.5) > 1.0
    with pytest.raises(DomainError):
        w_moment_oracle(1.0, -1.0, fp, 1.0)
    with pytest.raises(DomainError):
        w_moment_oracle(1.0, 1.0, fp, -1.0)


def test_path_oracle_edge_cases(fp, rng):
    assert w_path_oracle(0.0, fp, 1.0, rng) == 0.0
    calm = FPParams(0.5)
    assert w_path_oracle(2.0, calm, 1.5, rng) == pytest.approx(2.0 * math.exp(-0.75))
    assert w_path_oracle(-1.0, fp, 1.0, rng) < 0


def test_path_oracle_matches_the_moment_oracle(fp, rng):
    w = w_path_oracle(np.ones(1_000_000), fp, 1.0, rng)
    squares = w ** 2
    stderr = squares.std(ddof=1) / math.sqrt(len(squares))
    assert abs(squares.mean() - w_moment_oracle(1.0, 1.0, fp, 1.0)) < 3 * stderr


# runs


def test_zero_horizon(fp):
    trajectory = run_fp([VWParticle(2.0, 1.0)], fp, 0.0, seed=1)
    assert len(trajectory.snapshots) == 1
    assert trajectory.taus.tolist() == [0.0]


def test_particles_on_the_line_never_move(fp):
    v0 = np.linspace(1.0, 2.0, 50)
    trajectory = run_fp((v0, np.zeros(50)), fp, 1.0, snapshot_every=0.25, seed=1)
    for snapshot in trajectory.snapshots:
        assert np.array_equal(snapshot.v, v0)
        assert not np.any(snapshot.w)


def test_v_moments_dominate_w_moments(fp, rng):
    v0 = rng.uniform(1.0, 3.0, 2000)
    w0 = v0 * rng.uniform(-1.0, 1.0, 2000)
    trajectory = run_fp((v0, w0), fp, 1.0, snapshot_every=0.1, seed=2)
    assert len(trajectory.snapshots) == 11
    for r in trajectory.orders:
        for v_moment, w_moment in zip(trajectory.v_moments[r], trajectory.w_moments[r]):
            assert v_moment >= w_moment
    for snapshot in trajectory.snapshots:
        assert np.all(np.abs(snapshot.w) <= snapshot.v)


def test_initial_particles_outside_the_cone(fp):
    with pytest.raises(DomainError):
        run_fp((np.array([1.0]), np.array([2.0])), fp, 1.0)


def test_v_mean_is_flat_when_alpha_equals_beta():
    fp = FPParams(0.5, 0.5, sigma1_sq=0.5, sigma2_sq=0.5, dtau=0.01)
    n = 20_000
    trajectory = run_fp((np.full(n, 4.0), np.ones(n)), fp, 1.0, seed=3)
    final = trajectory.snapshots[-1].v
    assert abs(final.mean() - 4.0) < 3 * final.std(ddof=1) / math.sqrt(n)


def test_second_w_moment_follows_the_oracle(fp):
    n = 20_000
    trajectory = run_fp((np.full(n, 2.0), np.ones(n)), fp, 1.0, snapshot_every=0.25, seed=4, orders=(1.0,))
    squares = trajectory.snapshots[-1].w ** 2
    stderr = squares.std(ddof=1) / math.sqrt(n)
    assert abs(squares.mean() - w_moment_oracle(1.0, 1.0, fp, 1.0)) < 3 * stderr + 1e-3
    assert trajectory.w_moments[1.0] == sorted(trajectory.w_moments[1.0], reverse=True)


@pytest.mark.slow
def test_moment_law_at_acceptance_size(fp):
    n = 100_000
    trajectory = run_fp((np.full(n, 2.0), np.ones(n)), fp, 1.0, snapshot_every=0.1, seed=5, orders=(0.5, 1.0, 3.0))
    for r in (0.5, 1.0):
        assert trajectory.w_moments[r][-1] == pytest.approx(w_moment_oracle(1.0, r, fp, 1.0), rel=0.05)
        assert trajectory.w_moments[r][-1] < 1.0
    # above the critical order 2 the moment grows
    assert trajectory.w_moments[3.0][-1] > 1.0


def test_em_convergence_needs_nested_steps(fp):
    with pytest.raises(DomainError):
        em_oracle_ks(fp, 1.0, [0.03, 0.02], 100)


def test_em_distance_shrinks_with_the_step(fp):
    distances = em_oracle_ks(fp, 1.0, [0.05, 0.0125], 20_000, seed=6)
    assert distances[0.0125] < distances[0.05]


@pytest.mark.slow
def test_em_distance_halves_at_acceptance_size(fp):
    distances = em_oracle_ks(fp, 1.0, [0.02, 0.01, 0.005], 100_000, seed=7)
    assert distances[0.005] < distances[0.01] < distances[0.02]
