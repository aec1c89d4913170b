"""
The quasi-invariant limit in (v, w) coordinates.

The Fokker-Planck equation is simulated through its Ito diffusion

    dv = lambda <alpha - beta> w dtau + sigma_1 |w| dW_1
    dw = -lambda w dtau + sigma_2 |w| dW_2

with independent Brownian motions. The w equation is a geometric Brownian
motion, which gives exact oracles for paths and moments.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from edgeworth.errors import DomainError
from edgeworth.trade import ALPHA_BETA_TOLERANCE, TradeParams

logger = logging.getLogger(__name__)

PARTICLE_CHUNK = 10_000


@dataclass(frozen=True)
class VWParticle:
    v: float   # m_y x + m_x y
    w: float   # m_y x - m_x y

    def __post_init__(self):
        if not (math.isfinite(self.v) and math.isfinite(self.w)):
            raise DomainError(f"particle coordinates must be finite, got ({self.v}, {self.w})")
        if abs(self.w) > self.v:
            raise DomainError(f"particle ({self.v}, {self.w}) lies outside the cone |w| <= v")


@dataclass(frozen=True)
class FPParams:
    lam: float
    alpha: float = 0.5
    beta: Optional[float] = None
    sigma1_sq: float = 0.0     # <(mu - mu~)^2>
    sigma2_sq: float = 0.0     # <(mu + mu~)^2>
    dtau: Optional[float] = None
    drift_difference: Optional[float] = None   # <alpha - beta>, alpha - beta unless exponents are random

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError(f"lambda must be > 0, got {self.lam}")
        if self.beta is None:
            object.__setattr__(self, "beta", 1.0 - self.alpha)
        if self.drift_difference is None:
            object.__setattr__(self, "drift_difference", self.alpha - self.beta)
        if self.dtau is None:
            object.__setattr__(self, "dtau", 0.01 / max(self.lam, self.sigma2_sq))
        if abs(self.alpha + self.beta - 1.0) > ALPHA_BETA_TOLERANCE:
            raise DomainError(f"alpha + beta must equal 1, got {self.alpha + self.beta!r}")
        if self.sigma1_sq < 0 or self.sigma2_sq < 0:
            raise DomainError("diffusion coefficients must be >= 0")
        if not self.dtau > 0:
            raise DomainError(f"time step must be > 0, got {self.dtau}")

    @classmethod
    def uncorrelated(cls, lam: float, sigma_sq: float, alpha: float = 0.5, **kwargs) -> "FPParams":
        """sigma_1^2 = sigma_2^2 = 2 sigma^2 for independent errors of variance sigma^2."""
        return cls(lam, alpha, sigma1_sq=2.0 * sigma_sq, sigma2_sq=2.0 * sigma_sq, **kwargs)

    @classmethod
    def from_trade(cls, tp: TradeParams, dtau: Optional[float] = None) -> "FPParams":
        """Limit coefficients of a trade rule: lambda and sigma^2 are read before the eps scaling."""
        sigma_sq = tp.noise.variance
        return cls(tp.lam, tp.alpha, sigma1_sq=2.0 * sigma_sq, sigma2_sq=2.0 * sigma_sq,
                   dtau=dtau, drift_difference=tp.mean_difference())

    @property
    def v_drift(self) -> float:
        return self.lam * self.drift_difference


def critical_order(fp: FPParams) -> float:
    """r = 2 lambda / sigma_2^2: moments of order 1 + r above it blow up."""
    return math.inf if fp.sigma2_sq == 0 else 2.0 * fp.lam / fp.sigma2_sq


def to_vw(x: np.ndarray, y: np.ndarray, means: Tuple[float, float]) -> Tuple[np.ndarray, np.ndarray]:
    m_x, m_y = means
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    return m_y * x + m_x * y, m_y * x - m_x * y


def to_particles(v: np.ndarray, w: np.ndarray) -> List[VWParticle]:
    return [VWParticle(float(a), float(b)) for a, b in zip(v, w)]


def euler_maruyama(v: np.ndarray, w: np.ndarray, fp: FPParams, xi1: np.ndarray, xi2: np.ndarray,
                   dtau: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    One Euler-Maruyama step driven by the given standard normals.

    Returns (v, w, projected): particles pushed out of the cone are put back
    on its edge by raising v to |w|.
    """
    dtau = dtau or fp.dtau
    root = math.sqrt(dtau)
    spread = np.abs(w) * root
    new_v = v + fp.v_drift * w * dtau + math.sqrt(fp.sigma1_sq) * spread * xi1
    new_w = w - fp.lam * w * dtau + math.sqrt(fp.sigma2_sq) * spread * xi2
    outside = np.abs(new_w) > new_v
    projected = int(np.count_nonzero(outside))
    if projected:
        new_v = np.where(outside, np.abs(new_w), new_v)
    return new_v, new_w, projected


def sde_step(p: VWParticle, fp: FPParams, rng: np.random.Generator) -> VWParticle:
    xi = rng.standard_normal(2)
    v, w, projected = euler_maruyama(np.array([p.v]), np.array([p.w]), fp, xi[:1], xi[1:])
    if projected:
        logger.debug("particle (%g, %g) projected back onto the cone", p.v, p.w)
    return VWParticle(float(v[0]), float(w[0]))


def w_moment_oracle(w0: float, r: float, fp: FPParams, tau: float) -> float:
    """|w0|^(1+r) exp[(1+r)(r sigma_2^2 / 2 - lambda) tau], the exact moment of the GBM."""
    if not r > -1:
        raise DomainError(f"moment order needs r > -1, got {r}")
    if tau < 0:
        raise DomainError(f"time must be >= 0, got {tau}")
    rate = (1.0 + r) * (0.5 * r * fp.sigma2_sq - fp.lam)
    return abs(w0) ** (1.0 + r) * math.exp(rate * tau)


def moment_rate(r: float, fp: FPParams) -> float:
    return (1.0 + r) * (0.5 * r * fp.sigma2_sq - fp.lam)


def w_path_oracle(w0, fp: FPParams, tau: float, rng: Optional[np.random.Generator] = None,
                  brownian: Optional[np.ndarray] = None):
    """
    Exact sample of w(tau) = w0 exp[(-lambda - sigma_2^2/2) tau + sigma_2 W_tau].

    Pass `brownian` (W_tau values) to couple the sample with a simulated path.
    Works elementwise on arrays of w0; the sign of w0 is kept and 0 stays 0.
    """
    w0 = np.asarray(w0, dtype=np.float64)
    if brownian is None:
        brownian = rng.normal(0.0, math.sqrt(tau), w0.shape)
    result = w0 * np.exp((-fp.lam - 0.5 * fp.sigma2_sq) * tau + math.sqrt(fp.sigma2_sq) * brownian)
    return float(result) if result.ndim == 0 else result


@dataclass(frozen=True)
class FPSnapshot:
    tau: float
    v: np.ndarray
    w: np.ndarray


@dataclass
class FPTrajectory:
    snapshots: List[FPSnapshot]
    fp: FPParams
    orders: Tuple[float, ...] = ()
    w_moments: Dict[float, List[float]] = field(default_factory=dict)
    v_moments: Dict[float, List[float]] = field(default_factory=dict)
    projected: int = 0

    @property
    def taus(self) -> np.ndarray:
        return np.array([s.tau for s in self.snapshots])


def _record(trajectory: FPTrajectory, tau: float, v: np.ndarray, w: np.ndarray):
    trajectory.snapshots.append(FPSnapshot(tau, v.copy(), w.copy()))
    for r in trajectory.orders:
        trajectory.w_moments[r].append(float(np.mean(np.abs(w) ** (1.0 + r))))
        trajectory.v_moments[r].append(float(np.mean(v ** (1.0 + r))))


def run_fp(initial: Union[Sequence[VWParticle], Tuple[np.ndarray, np.ndarray]], fp: FPParams,
           horizon: float, snapshot_every: Optional[float] = None, seed=None,
           orders: Sequence[float] = (0.5, 1.0, 3.0)) -> FPTrajectory:
    """Evolve the particles by sde_step up to `horizon`, recording moments at every snapshot."""
    if isinstance(initial, tuple):
        v, w = (np.array(a, dtype=np.float64) for a in initial)
        if np.any(np.abs(w) > v):
            raise DomainError("initial particles must satisfy |w| <= v")
    else:
        v = np.array([p.v for p in initial], dtype=np.float64)
        w = np.array([p.w for p in initial], dtype=np.float64)
    if horizon < 0:
        raise DomainError(f"horizon must be >= 0, got {horizon}")
    rng = np.random.default_rng(seed)
    orders = tuple(float(r) for r in orders)
    trajectory = FPTrajectory([], fp, orders, {r: [] for r in orders}, {r: [] for r in orders})

    total = int(round(horizon / fp.dtau))
    if snapshot_every:
        marks = sorted({min(total, int(round(j * snapshot_every / fp.dtau)))
                        for j in range(int(math.floor(horizon / snapshot_every + 1e-9)) + 1)} | {total})
    else:
        marks = sorted({0, total})
    logger.info("Fokker-Planck run: %d particles, %d steps of %g", len(v), total, fp.dtau)

    done = 0
    for mark in marks:
        for _ in range(mark - done):
            xi = rng.standard_normal((2, len(v)))
            v, w, projected = euler_maruyama(v, w, fp, xi[0], xi[1])
            trajectory.projected += projected
        done = mark
        _record(trajectory, mark * fp.dtau, v, w)

    if trajectory.projected:
        logger.warning("%d particle steps were projected back onto |w| = v", trajectory.projected)
    return trajectory


def em_oracle_ks(fp: FPParams, w0: float, dtaus: Sequence[float], n: int, tau: float = 1.0,
                 seed=None) -> Dict[float, float]:
    """
    Kolmogorov-Smirnov distance between Euler-Maruyama and exact w(tau), per step size.

    All step sizes share one Brownian path per particle: increments are drawn at
    the finest step and summed for the coarser ones, and the exact endpoint uses
    the same W_tau. Coarse steps must be whole multiples of the finest.
    """
    finest = min(dtaus)
    fine_steps = int(round(tau / finest))
    factors = {}
    for dt in dtaus:
        factor = int(round(dt / finest))
        if not math.isclose(factor * finest, dt) or fine_steps % factor:
            raise DomainError(f"step {dt} is not a multiple of {finest} dividing the horizon")
        factors[dt] = factor

    rng = np.random.default_rng(seed)
    endpoints = {dt: [] for dt in dtaus}
    exact = []
    for start in range(0, n, PARTICLE_CHUNK):
        size = min(PARTICLE_CHUNK, n - start)
        increments = rng.standard_normal((fine_steps, size)) * math.sqrt(finest)
        exact.append(w_path_oracle(np.full(size, w0), fp, tau, brownian=increments.sum(axis=0)))
        for dt, factor in factors.items():
            coarse = increments.reshape(fine_steps // factor, factor, size).sum(axis=1)
            w = np.full(size, float(w0))
            for dW in coarse:
                w = w - fp.lam * w * dt + math.sqrt(fp.sigma2_sq) * np.abs(w) * dW
            endpoints[dt].append(w)

    exact = np.concatenate(exact)
    return {dt: float(stats.ks_2samp(np.concatenate(ws), exact).statistic) for dt, ws in endpoints.items()}
