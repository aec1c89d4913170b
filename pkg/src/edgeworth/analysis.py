"""
Post-processing of snapshots: conservation, Fourier distances, contraction
audits, concentration on the line m_y x = m_x y, and Pareto tails.

Every function takes plain arrays (or anything with x/y or v/w array
attributes) and never touches the simulation state.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from edgeworth.errors import (
    DegenerateMeansError,
    DomainError,
    EmptySampleError,
    InsufficientSampleError,
)
from edgeworth.fokker_planck import FPParams, FPTrajectory, critical_order
from edgeworth.trade import TradeParams, draw_coefficients

logger = logging.getLogger(__name__)

# default ray grid: axes and diagonals, log-spaced magnitudes
RAY_DIRECTIONS = ((1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, -1.0))
RAY_POINTS = 64
RAY_RANGE = (1e-3, 1e1)

CF_BLOCK = 1 << 22      # sample x frequency products evaluated at once
MIN_TAIL_SAMPLE = 1000
MEAN_MATCH = 1e-9
DIVERGENCE_EXPONENT = 0.25   # smallest growth |k|^-e toward the origin that counts as diverging


def _coordinates(sample) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(sample, tuple):
        first, second = sample
    elif hasattr(sample, "x"):
        first, second = sample.x, sample.y
    else:
        first, second = sample.v, sample.w
    first = np.asarray(first, dtype=np.float64)
    second = np.asarray(second, dtype=np.float64)
    if first.size == 0:
        raise EmptySampleError("empty sample")
    return first, second


def market_coordinates(x: np.ndarray, y: np.ndarray, means: Tuple[float, float]) -> Tuple[np.ndarray, np.ndarray]:
    """(m_y x, m_x y): the variables in which the linear trade is a dissipative collision."""
    m_x, m_y = means
    return m_y * np.asarray(x, dtype=np.float64), m_x * np.asarray(y, dtype=np.float64)


# fourier metric


@dataclass(frozen=True)
class FourierGrid:
    """
    Frequencies where characteristic functions are compared.

    `points` are the (xi, eta) where the transforms are evaluated. `metric_points`
    are the frequencies whose norm goes into the denominator; they equal
    `points` unless the grid was built by `transformed`. `ray` and `position`
    locate each point on its ray (position 0 is the smallest magnitude).
    """
    points: np.ndarray
    s: float = 2.0
    metric_points: Optional[np.ndarray] = None
    ray: Optional[np.ndarray] = None
    position: Optional[np.ndarray] = None

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        object.__setattr__(self, "points", points)
        if self.metric_points is None:
            object.__setattr__(self, "metric_points", points)
        if points.shape[1] != 2 or len(points) == 0:
            raise DomainError("a Fourier grid needs a non-empty list of (xi, eta) pairs")
        if not np.all(np.isfinite(points)):
            raise DomainError("grid frequencies must be finite")
        if np.any(np.all(self.metric_points == 0.0, axis=1)):
            raise DomainError("the origin can't be a grid point")
        if not self.s > 0:
            raise DomainError(f"s must be > 0, got {self.s}")

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def rays(cls, points: int = RAY_POINTS, lo: float = RAY_RANGE[0], hi: float = RAY_RANGE[1],
             s: float = 2.0, directions: Sequence[Tuple[float, float]] = RAY_DIRECTIONS) -> "FourierGrid":
        # f^(-k) is the conjugate of f^(k), so a half plane of directions is enough
        magnitudes = np.geomspace(lo, hi, points)
        grid, ray, position = [], [], []
        for index, (a, b) in enumerate(directions):
            norm = math.hypot(a, b)
            grid.append(np.outer(magnitudes, (a / norm, b / norm)))
            ray.append(np.full(points, index))
            position.append(np.arange(points))
        return cls(np.vstack(grid), s, ray=np.concatenate(ray), position=np.concatenate(position))

    def with_s(self, s: float) -> "FourierGrid":
        return replace(self, s=s)

    def transformed(self, a: float, b: float) -> "FourierGrid":
        """
        Read the grid as (xi_1, eta_1) = (xi + eta, A xi - B eta) frequencies.

        The characteristic functions are evaluated at the (xi, eta) solving that
        system, while the denominator uses |(xi_1, eta_1)|.
        """
        if not (a > 0 and b > 0):
            raise DomainError(f"transformed frequencies need A, B > 0, got ({a}, {b})")
        xi_1, eta_1 = self.metric_points[:, 0], self.metric_points[:, 1]
        xi = (b * xi_1 + eta_1) / (a + b)
        eta = (a * xi_1 - eta_1) / (a + b)
        return replace(self, points=np.column_stack([xi, eta]), metric_points=self.metric_points)

    @property
    def weights(self) -> np.ndarray:
        return np.sum(self.metric_points ** 2, axis=1) ** (self.s / 2.0)


@dataclass(frozen=True)
class MetricReport:
    distance: float
    argmax: Tuple[float, float]
    s: float
    grid_size: int
    sizes: Tuple[int, int]
    diverging: bool = False


def empirical_cf(sample, grid: FourierGrid) -> np.ndarray:
    """(1/N) sum_j exp(-i (x_j xi + y_j eta)) at every grid point."""
    first, second = _coordinates(sample)
    coords = np.column_stack([first, second])
    block = max(1, CF_BLOCK // len(coords))
    out = np.empty(len(grid), dtype=np.complex128)
    for start in range(0, len(grid), block):
        phase = coords @ grid.points[start:start + block].T
        out[start:start + block] = np.cos(phase).mean(axis=0) - 1j * np.sin(phase).mean(axis=0)
    return out


def default_s(means_a: Tuple[float, float], means_b: Tuple[float, float]) -> float:
    """s = 2 when the means agree, otherwise 1 (s = 2 is unbounded across a mean mismatch)."""
    same = all(math.isclose(a, b, rel_tol=MEAN_MATCH, abs_tol=0.0) for a, b in zip(means_a, means_b))
    return 2.0 if same else 1.0


def _diverging(grid: FourierGrid, ratios: np.ndarray, best: int) -> bool:
    if grid.ray is None or grid.position[best] != 0:
        return False
    neighbour = np.flatnonzero((grid.ray == grid.ray[best]) & (grid.position == 1))
    if not len(neighbour) or not ratios[best] > ratios[neighbour[0]]:
        return False
    spacing = np.linalg.norm(grid.metric_points[neighbour[0]]) / np.linalg.norm(grid.metric_points[best])
    growth = ratios[best] / ratios[neighbour[0]] if ratios[neighbour[0]] > 0 else math.inf
    return bool(math.log(growth) >= DIVERGENCE_EXPONENT * math.log(spacing))


def ds_distance(sample_a, sample_b, grid: Optional[FourierGrid] = None, s: Optional[float] = None,
                recentre: bool = False) -> MetricReport:
    """
    max over the grid of |f^_A - f^_B| / |(xi, eta)|^s.

    Without an explicit s, s = 2 when the sample means agree and 1 otherwise.
    `recentre` moves both samples to mean zero first. Two samples of laws with
    equal means never have exactly equal sample means, and at s = 2 that
    O(1/sqrt(N)) gap alone grows like 1/|k| toward the origin.

    A grid maximum is a lower bound of the true supremum. When the maximum sits
    on the smallest frequency of a ray and the ratio is still rising there,
    the report is flagged as diverging.
    """
    xa, ya = _coordinates(sample_a)
    xb, yb = _coordinates(sample_b)
    if recentre:
        xa, ya = xa - math.fsum(xa) / len(xa), ya - math.fsum(ya) / len(ya)
        xb, yb = xb - math.fsum(xb) / len(xb), yb - math.fsum(yb) / len(yb)
        s = 2.0 if s is None else s
    if s is None:
        s = default_s((math.fsum(xa) / len(xa), math.fsum(ya) / len(ya)),
                      (math.fsum(xb) / len(xb), math.fsum(yb) / len(yb)))
    grid = (grid if grid is not None else FourierGrid.rays()).with_s(s)

    ratios = np.abs(empirical_cf((xa, ya), grid) - empirical_cf((xb, yb), grid)) / grid.weights
    best = int(np.argmax(ratios))
    report = MetricReport(
        distance=float(ratios[best]),
        argmax=(float(grid.points[best, 0]), float(grid.points[best, 1])),
        s=s,
        grid_size=len(grid),
        sizes=(len(xa), len(xb)),
        diverging=_diverging(grid, ratios, best),
    )
    if report.diverging:
        logger.warning("d_%g ratio still grows at the smallest grid frequency; the distance may be infinite", s)
    return report


# contraction and dissipation


@dataclass(frozen=True)
class ContractionAudit:
    estimate: float
    stderr: float
    s: float
    samples: int

    @property
    def contracts(self) -> bool:
        """<|1 - A - B|^s> + 3 s.e. < 1, enough for the transformed d_s not to grow."""
        return self.estimate + 3.0 * self.stderr < 1.0


def contraction_audit(tp: TradeParams, s: float, samples: int, rng: np.random.Generator) -> ContractionAudit:
    """Monte Carlo estimate of <|1 - lambda - mu - mu~|^s>."""
    if not s > 0:
        raise DomainError(f"s must be > 0, got {s}")
    if tp.noise.variance == 0:
        return ContractionAudit(abs(1.0 - tp.lam) ** s, 0.0, s, samples)
    mu = tp.noise.sample(rng, samples)
    mu_tilde = tp.noise.sample(rng, samples)
    values = np.abs(1.0 - tp.lam - mu - mu_tilde) ** s
    audit = ContractionAudit(float(values.mean()), float(values.std(ddof=1) / math.sqrt(samples)), s, samples)
    logger.info("contraction audit s=%g: %.6g +- %.2g", s, audit.estimate, audit.stderr)
    return audit


@dataclass(frozen=True)
class DissipationAudit:
    value: float

    @property
    def dissipative(self) -> bool:
        return self.value < 1.0


def dissipation_audit(tp: TradeParams) -> DissipationAudit:
    """<(1 - lambda + mu + mu~)^2> = (1 - lambda)^2 + Var(mu + mu~), exactly from the noise law."""
    return DissipationAudit((1.0 - tp.lam) ** 2 + 2.0 * tp.noise.variance)


@dataclass(frozen=True)
class ContractionConstant:
    value: float
    argmax: Tuple[float, float]
    s: float


def contraction_constant(tp: TradeParams, grid: FourierGrid, draws: int, rng: np.random.Generator) -> ContractionConstant:
    """
    Grid estimate of C_s = sup <|(xi*, eta*)|^s> / |(xi, eta)|^s.

    The post-trade frequencies are xi* = (1 - A) xi + B eta and
    eta* = A xi + (1 - B) eta. A grid maximum can only underestimate C_s.
    """
    coefficients = draw_coefficients(tp, rng, draws)
    a, b = coefficients.a[:, None], coefficients.b[:, None]
    xi, eta = grid.points[:, 0][None, :], grid.points[:, 1][None, :]
    xi_star = (1.0 - a) * xi + b * eta
    eta_star = a * xi + (1.0 - b) * eta
    after = np.mean((xi_star ** 2 + eta_star ** 2) ** (grid.s / 2.0), axis=0)
    before = np.sum(grid.points ** 2, axis=1) ** (grid.s / 2.0)
    ratios = after / before
    best = int(np.argmax(ratios))
    return ContractionConstant(float(ratios[best]), (float(grid.points[best, 0]), float(grid.points[best, 1])), grid.s)


def decay_bound(d0: float, c_s: float, t: float) -> float:
    """Gronwall: d_s(t) <= d_s(0) exp((C_s - 1) t)."""
    return d0 * math.exp((c_s - 1.0) * t)


# concentration


def concentration_diagnostic(sample, means: Optional[Tuple[float, float]] = None) -> float:
    """
    sum w_i^2 / sum v_i^2 with v = m_y x + m_x y, w = m_y x - m_x y.

    0 means every agent sits on the line m_y x = m_x y. `means` default to the
    sample means.
    """
    x, y = _coordinates(sample)
    m_x, m_y = means if means is not None else (math.fsum(x) / len(x), math.fsum(y) / len(y))
    v = m_y * x + m_x * y
    w = m_y * x - m_x * y
    spread = float(np.sum(v * v))
    if spread == 0:
        raise DegenerateMeansError("every v_i is zero, concentration is undefined")
    return float(np.sum(w * w)) / spread


# conservation


@dataclass(frozen=True)
class ConservationAudit:
    initial_totals: Tuple[float, float]
    final_totals: Tuple[float, float]
    max_abs_drift: Tuple[float, float]
    max_rel_drift: Tuple[float, float]

    @property
    def exact(self) -> bool:
        return self.max_abs_drift == (0.0, 0.0)


def conservation_audit(trajectory) -> ConservationAudit:
    """Largest drift of (sum x, sum y) over the snapshots, compared with the first one."""
    totals = [s.totals for s in trajectory.snapshots]
    if not totals:
        raise EmptySampleError("trajectory has no snapshots")
    first = totals[0]
    drift = [max(abs(t[k] - first[k]) for t in totals) for k in (0, 1)]
    relative = [drift[k] / abs(first[k]) if first[k] else drift[k] for k in (0, 1)]
    audit = ConservationAudit(first, totals[-1], tuple(drift), tuple(relative))
    logger.info("conservation audit: max drift %s (relative %s)", audit.max_abs_drift, audit.max_rel_drift)
    return audit


# trends


@dataclass(frozen=True)
class Trend:
    slope: float
    stderr: float
    lower: float     # one-sided confidence bounds on the slope
    upper: float
    confidence: float
    tolerance: float = 0.0

    @property
    def non_increasing(self) -> bool:
        """The upper confidence bound of the slope is at most `tolerance`: any rise is ruled out."""
        return self.upper <= self.tolerance

    @property
    def decreasing(self) -> bool:
        return self.upper < 0.0


def trend(times: Sequence[float], values: Sequence[float], confidence: float = 0.95,
          tolerance: float = 0.0) -> Trend:
    """Least-squares slope with one-sided t bounds; `tolerance` is the largest slope still read as flat."""
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if len(times) < 3:
        raise InsufficientSampleError(f"a trend needs at least 3 points, got {len(times)}")
    fit = stats.linregress(times, values)
    critical = stats.t.ppf(confidence, len(times) - 2)
    return Trend(fit.slope, fit.stderr, fit.slope - critical * fit.stderr,
                 fit.slope + critical * fit.stderr, confidence, tolerance)


# tails


def hill_estimator(sample: np.ndarray, k: int) -> float:
    """k / sum_{i<=k} (log X_(i) - log X_(k+1)) over the k largest values."""
    sample = np.asarray(sample, dtype=np.float64)
    n = len(sample)
    if not 0 < k < n:
        raise InsufficientSampleError(f"need 0 < k < n, got k={k}, n={n}")
    top = np.partition(sample, n - k - 1)[n - k - 1:]
    threshold = top.min()
    if threshold <= 0:
        raise DomainError("the Hill estimator needs positive order statistics")
    logs = np.log(top) - math.log(threshold)
    return k / float(np.sum(logs))


def rank_regression_index(sample: np.ndarray, k: int) -> Tuple[float, float]:
    """
    Slope of log(rank - 1/2) against log X over the top k, with its asymptotic
    standard error index * sqrt(2/k).
    """
    sample = np.asarray(sample, dtype=np.float64)
    top = np.sort(sample)[::-1][:k]
    ranks = np.arange(1, k + 1) - 0.5
    fit = stats.linregress(np.log(top), np.log(ranks))
    index = -fit.slope
    return float(index), float(index * math.sqrt(2.0 / k))


def moment_growth_rates(times: Sequence[float], moments: Mapping[float, Sequence[float]]) -> Dict[float, float]:
    """Least-squares slope of log(moment) against time, per order."""
    times = np.asarray(times, dtype=np.float64)
    rates = {}
    for r, values in moments.items():
        values = np.asarray(values, dtype=np.float64)
        if np.any(values <= 0):
            rates[r] = -math.inf
            continue
        rates[r] = float(stats.linregress(times, np.log(values)).slope)
    return rates


@dataclass(frozen=True)
class TailReport:
    index: float
    stderr: float
    tail_fraction: float
    k: int
    inner_index: float         # Hill index over the top tail_fraction / 5
    inner_stderr: float
    rank_index: float
    rank_stderr: float
    orders: Tuple[float, ...] = ()
    w_growth: Dict[float, float] = field(default_factory=dict)
    v_growth: Dict[float, float] = field(default_factory=dict)
    threshold: Optional[float] = None

    @property
    def thin_tailed(self) -> bool:
        """The Hill index keeps climbing deeper in the tail: no power law."""
        combined = math.hypot(self.stderr, self.inner_stderr)
        return self.inner_index - self.index > 3.0 * combined

    @property
    def sign_consistent(self) -> Optional[bool]:
        """w-moments shrink below the critical order and grow above it."""
        if self.threshold is None or not self.w_growth:
            return None
        return all((rate < 0) == (r < self.threshold) for r, rate in self.w_growth.items() if r != self.threshold)


def tail_index(sample, tail_fraction: float = 0.05, rng: Optional[np.random.Generator] = None,
               bootstrap: int = 100, trajectory: Optional[FPTrajectory] = None) -> TailReport:
    """
    Pareto tail index of a positive sample (typically v values).

    Hill over the top `tail_fraction` order statistics, with bootstrap
    standard errors, and a rank regression cross-check. With a Fokker-Planck
    trajectory the moment growth rates and the critical order are reported too.
    """
    sample = np.asarray(sample, dtype=np.float64).ravel()
    sample = sample[sample > 0]
    if len(sample) < MIN_TAIL_SAMPLE:
        raise InsufficientSampleError(f"tail estimation needs at least {MIN_TAIL_SAMPLE} positive values, got {len(sample)}")
    if not 0 < tail_fraction <= 0.2:
        raise DomainError(f"tail fraction must lie in (0, 0.2], got {tail_fraction}")
    rng = rng if rng is not None else np.random.default_rng(0)

    n = len(sample)
    k = max(2, int(tail_fraction * n))
    k_inner = max(2, k // 5)
    index = hill_estimator(sample, k)
    inner = hill_estimator(sample, k_inner)
    resampled = np.empty((bootstrap, 2))
    for b in range(bootstrap):
        draw = sample[rng.integers(0, n, n)]
        resampled[b] = hill_estimator(draw, k), hill_estimator(draw, k_inner)
    stderr, inner_stderr = resampled.std(axis=0, ddof=1) if bootstrap > 1 else (math.nan, math.nan)
    rank_index, rank_stderr = rank_regression_index(sample, k)

    extra = {}
    if trajectory is not None:
        extra = dict(
            orders=trajectory.orders,
            w_growth=moment_growth_rates(trajectory.taus, trajectory.w_moments),
            v_growth=moment_growth_rates(trajectory.taus, trajectory.v_moments),
            threshold=critical_order(trajectory.fp),
        )
    report = TailReport(index, float(stderr), tail_fraction, k, inner, float(inner_stderr),
                        rank_index, rank_stderr, **extra)
    logger.info("Hill index %.4g +- %.2g over top %d (rank regression %.4g)", index, report.stderr, k, rank_index)
    return report


# quasi-invariant limit


def quasi_invariant_distance(initial_w: np.ndarray, final_w: np.ndarray, fp: FPParams, tau: float) -> float:
    """
    Kolmogorov-Smirnov distance of log(|w| / |w0|) from its exact law in the limit.

    In the limit log(|w(tau)| / |w0|) ~ Normal((-lambda - sigma_2^2/2) tau, sigma_2^2 tau),
    whatever w0. Agents starting on w = 0 carry no information and are dropped.
    """
    if not (fp.sigma2_sq > 0 and tau > 0):
        raise DomainError("the lognormal comparison needs sigma_2^2 > 0 and tau > 0")
    initial_w = np.asarray(initial_w, dtype=np.float64)
    final_w = np.asarray(final_w, dtype=np.float64)
    keep = (initial_w != 0) & (final_w != 0)
    if not np.any(keep):
        raise EmptySampleError("no agent off the line w = 0")
    growth = np.log(np.abs(final_w[keep]) / np.abs(initial_w[keep]))
    mean = (-fp.lam - 0.5 * fp.sigma2_sq) * tau
    return float(stats.kstest(growth, "norm", args=(mean, math.sqrt(fp.sigma2_sq * tau))).statistic)
