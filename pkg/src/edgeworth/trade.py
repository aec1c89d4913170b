"""
Binary trades in the Edgeworth box.

Two agents holding (x_A, y_A) and (x_B, y_B) of two goods look at their shares
(p, q) of the pooled goods and move them towards each other, the way a
Cobb-Douglas trader would. Everything here is a pure function of its inputs
plus an explicit numpy Generator, so workers only need their own generator.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import List, Optional, Tuple

import numpy as np
from scipy import stats

from edgeworth.errors import (
    AdmissibilityError,
    ConfigError,
    ConfigIssue,
    DegeneratePoolError,
    DomainError,
)

logger = logging.getLogger(__name__)

ALPHA_BETA_TOLERANCE = 1e-12
GAUSSIAN_TRUNCATION = 2.0   # truncated-gaussian noise keeps +-2 standard deviations

_SMALLEST = np.nextafter(0.0, 1.0)
_BELOW_ONE = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class PercentPair:
    """Share of good 1 (p) and of good 2 (q) owned by agent A."""
    p: float
    q: float

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0 and 0.0 <= self.q <= 1.0):
            raise DomainError(f"percentages must lie in the unit square, got ({self.p}, {self.q})")


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DomainError(f"holdings must be finite, got ({self.x}, {self.y})")
        if self.x < 0 or self.y < 0:
            raise DomainError(f"holdings must be non-negative, got ({self.x}, {self.y})")


@dataclass(frozen=True)
class UtilityParams:
    """Cobb-Douglas exponents; beta defaults to 1 - alpha."""
    alpha: float
    beta: Optional[float] = None

    def __post_init__(self):
        if self.beta is None:
            object.__setattr__(self, "beta", 1.0 - self.alpha)
        if not (0.0 < self.alpha < 1.0 and 0.0 < self.beta < 1.0):
            raise DomainError(f"exponents must lie in (0, 1), got ({self.alpha}, {self.beta})")
        if abs(self.alpha + self.beta - 1.0) > ALPHA_BETA_TOLERANCE:
            raise DomainError(f"alpha + beta must equal 1, got {self.alpha + self.beta!r}")


class NoiseKind(StrEnum):
    UNIFORM = "uniform"
    TRUNCATED_GAUSSIAN = "truncated-gaussian"
    ZERO = "degenerate-zero"


@dataclass(frozen=True)
class NoiseSpec:
    """
    Law of the trade errors mu and mu-tilde.

    Both kinds are supported on [-delta, delta]: uniform, or a normal with
    standard deviation delta/2 cut at +-delta. Zero mean, every moment finite.
    """
    kind: NoiseKind = NoiseKind.ZERO
    delta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if not math.isfinite(self.delta) or self.delta < 0:
            raise DomainError(f"noise half-width must be finite and >= 0, got {self.delta}")
        if self.kind is NoiseKind.ZERO:
            object.__setattr__(self, "delta", 0.0)

    @property
    def half_width(self) -> float:
        return self.delta

    @property
    def variance(self) -> float:
        if self.kind is NoiseKind.UNIFORM:
            return self.delta ** 2 / 3.0
        if self.kind is NoiseKind.TRUNCATED_GAUSSIAN and self.delta > 0:
            law = stats.truncnorm(-GAUSSIAN_TRUNCATION, GAUSSIAN_TRUNCATION,
                                  scale=self.delta / GAUSSIAN_TRUNCATION)
            return float(law.var())
        return 0.0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind is NoiseKind.ZERO or self.delta == 0:
            return np.zeros(size)
        if self.kind is NoiseKind.UNIFORM:
            return rng.uniform(-self.delta, self.delta, size)
        return stats.truncnorm.rvs(-GAUSSIAN_TRUNCATION, GAUSSIAN_TRUNCATION,
                                   scale=self.delta / GAUSSIAN_TRUNCATION,
                                   size=size, random_state=rng)

    def scaled(self, factor: float) -> "NoiseSpec":
        return replace(self, delta=self.delta * factor)


class ExponentKind(StrEnum):
    DEGENERATE = "degenerate"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class ExponentLaw:
    """Distribution of alpha for traders with random preferences (beta = 1 - alpha)."""
    kind: ExponentKind = ExponentKind.DEGENERATE
    low: float = 0.5
    high: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ExponentKind(self.kind))
        if self.kind is ExponentKind.DEGENERATE or self.high is None:
            object.__setattr__(self, "high", self.low)
        issues = exponent_issues(self.kind, self.low, self.high)
        if issues:
            raise ConfigError(issues)

    @property
    def mean_alpha(self) -> float:
        return 0.5 * (self.low + self.high)

    def mean_difference(self) -> float:
        """<alpha - beta> = 2<alpha> - 1."""
        return 2.0 * self.mean_alpha - 1.0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind is ExponentKind.DEGENERATE:
            return np.full(size, self.low)
        # the upper end may be 1; alpha itself has to stay inside (0, 1)
        return np.clip(rng.uniform(self.low, self.high, size), _SMALLEST, _BELOW_ONE)


def exponent_issues(kind: ExponentKind, low: float, high: float) -> List[ConfigIssue]:
    if kind is ExponentKind.DEGENERATE:
        if not 0.0 < low < 1.0:
            return [ConfigIssue("trade.exponents.low", f"degenerate alpha must lie in (0, 1), got {low}")]
        return []
    if not (0.0 <= low < 1.0 and 0.0 < high <= 1.0 and low <= high):
        return [ConfigIssue("trade.exponents", f"uniform support ({low}, {high}) leaves (0, 1)")]
    return []


class RuleVariant(StrEnum):
    DIFFERENCE = "edgeworth-difference"      # randomness proportional to q - p
    PROPORTIONAL = "edgeworth-proportional"  # randomness proportional to p and q


BOX_CONSTRAINT = "0 < lambda*beta + mu < 1, 0 < lambda*alpha + mu~ <= 1"


def admissible_half_width(lam: float, alpha: float) -> float:
    """Largest symmetric noise support keeping 0 < A < 1 and 0 < B <= 1."""
    beta = 1.0 - alpha
    return min(lam * beta, 1.0 - lam * beta, lam * alpha, 1.0 - lam * alpha)


def trade_issues(lam: float, utility: Optional[UtilityParams], noise: NoiseSpec,
                 exponents: Optional[ExponentLaw]) -> List[ConfigIssue]:
    """Every way (lam, exponents, noise) can break 0 < lambda <= 1 or noise admissibility."""
    if not (math.isfinite(lam) and 0.0 < lam <= 1.0):
        return [ConfigIssue("trade.lambda", f"intensity must satisfy 0 < lambda <= 1, got {lam}")]
    if exponents is not None:
        alphas = (exponents.low, exponents.high)
    elif utility is not None:
        alphas = (utility.alpha,)
    else:
        return []
    bound = min(admissible_half_width(lam, a) for a in alphas)
    if noise.half_width > bound:
        return [ConfigIssue(
            "trade.noise.delta",
            f"noise not admissible: half-width {noise.half_width} exceeds "
            f"min(lambda*beta, 1-lambda*beta, lambda*alpha, 1-lambda*alpha) = {bound}, "
            f"so the box constraint {BOX_CONSTRAINT} can fail",
        )]
    return []


@dataclass(frozen=True)
class TradeParams:
    lam: float
    utility: UtilityParams = field(default_factory=lambda: UtilityParams(0.5))
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    variant: RuleVariant = RuleVariant.DIFFERENCE
    exponents: Optional[ExponentLaw] = None

    def __post_init__(self):
        object.__setattr__(self, "variant", RuleVariant(self.variant))
        issues = trade_issues(self.lam, self.utility, self.noise, self.exponents)
        if issues and issues[0].location == "trade.noise.delta":
            raise AdmissibilityError(issues[0].message.removeprefix("noise not admissible: "),
                                     location=issues[0].location)
        if issues:
            raise ConfigError(issues)

    @property
    def alpha(self) -> float:
        return self.exponents.mean_alpha if self.exponents else self.utility.alpha

    @property
    def beta(self) -> float:
        return 1.0 - self.alpha if self.exponents else self.utility.beta

    def mean_difference(self) -> float:
        """<alpha - beta>, the only trace of the preferences left in the Fokker-Planck limit."""
        if self.exponents:
            return self.exponents.mean_difference()
        return self.utility.alpha - self.utility.beta

    def mean_coefficients(self) -> Tuple[float, float]:
        """(<A>, <B>) = (lambda <beta>, lambda <alpha>)."""
        return self.lam * self.beta, self.lam * self.alpha

    def scaled(self, epsilon: float) -> "TradeParams":
        """Quasi-invariant scaling: lambda -> eps lambda, noise -> sqrt(eps) noise."""
        return replace(self, lam=self.lam * epsilon, noise=self.noise.scaled(math.sqrt(epsilon)))


@dataclass(frozen=True)
class CoefficientDraw:
    a: float          # lambda beta + mu
    b: float          # lambda alpha + mu-tilde
    mu: float = 0.0
    mu_tilde: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.a < 1.0 and 0.0 < self.b <= 1.0):
            raise DomainError(f"coefficients must satisfy 0 < A < 1, 0 < B <= 1, got ({self.a}, {self.b})")


@dataclass
class CoefficientBatch:
    a: np.ndarray
    b: np.ndarray
    mu: np.ndarray
    mu_tilde: np.ndarray
    alpha: np.ndarray

    def __len__(self) -> int:
        return len(self.a)


def draw_coefficients(tp: TradeParams, rng: np.random.Generator, size: int) -> CoefficientBatch:
    """
    Draw `size` independent trades' coefficients.

    Draw order is alphas (only when exponents are random), then mu, then
    mu-tilde. The support is clamped to the open interval so that a draw on
    the closed edge of the noise law can't produce A = 0.
    """
    if tp.exponents is not None:
        alpha = tp.exponents.sample(rng, size)
    else:
        alpha = np.full(size, tp.utility.alpha)
    beta = 1.0 - alpha
    mu = tp.noise.sample(rng, size)
    mu_tilde = tp.noise.sample(rng, size)
    a = np.clip(tp.lam * beta + mu, _SMALLEST, _BELOW_ONE)
    b = np.clip(tp.lam * alpha + mu_tilde, _SMALLEST, 1.0)
    return CoefficientBatch(a, b, mu, mu_tilde, alpha)


def utility(pp: PercentPair, up: UtilityParams) -> float:
    if pp.p == 0 or pp.q == 0:
        return 0.0
    return pp.p ** up.alpha * pp.q ** up.beta


def partner_percentages(pp: PercentPair) -> PercentPair:
    """Agent B's shares: A's point rotated by 180 degrees around the centre of the box."""
    return PercentPair(1.0 - pp.p, 1.0 - pp.q)


def utility_gain_first_order(pp: PercentPair, up: UtilityParams, lam: float) -> float:
    """
    alpha beta (p-q)^2 p^(alpha-1) q^(beta-1) lambda, the slope at lambda = 0 times lambda.

    U is concave along the (affine) trade path, so this overestimates the gain.
    """
    _require_interior(pp)
    return up.alpha * up.beta * (pp.p - pp.q) ** 2 * pp.p ** (up.alpha - 1) * pp.q ** (up.beta - 1) * lam


def utility_gain_bound(pp: PercentPair, up: UtilityParams, lam: float) -> float:
    """
    Guaranteed utility gain of a noiseless trade of intensity lam.

    Along the path dU/dlam = alpha beta (1-lam) (q-p)^2 / (p*^beta q*^alpha), and
    p*, q* stay between p and q, so p*^beta q*^alpha <= max(p, q). Integrating
    gives alpha beta (p-q)^2 (lam - lam^2/2) / max(p, q).
    """
    if pp.p == pp.q:
        return 0.0
    return up.alpha * up.beta * (pp.p - pp.q) ** 2 * (lam - 0.5 * lam * lam) / max(pp.p, pp.q)


def _require_interior(pp: PercentPair):
    if pp.p in (0.0, 1.0) or pp.q in (0.0, 1.0):
        raise DomainError(f"first-order gain is only finite inside the open square, got ({pp.p}, {pp.q})")


def percentages(a: AgentState, b: AgentState) -> PercentPair:
    total_x = a.x + b.x
    total_y = a.y + b.y
    if total_x == 0 or total_y == 0:
        raise DegeneratePoolError(f"empty pool: totals ({total_x}, {total_y})")
    return PercentPair(a.x / total_x, a.y / total_y)


def sample_coefficients(tp: TradeParams, rng: np.random.Generator) -> CoefficientDraw:
    draw = draw_coefficients(tp, rng, 1)
    return CoefficientDraw(float(draw.a[0]), float(draw.b[0]), float(draw.mu[0]), float(draw.mu_tilde[0]))


def trade_percent(pp: PercentPair, cd: CoefficientDraw) -> PercentPair:
    p_star = pp.p + cd.a * (pp.q - pp.p)
    q_star = pp.q + cd.b * (pp.p - pp.q)
    # admissible noise keeps both inside the square; the clip only absorbs the last ulp
    return PercentPair(min(max(p_star, 0.0), 1.0), min(max(q_star, 0.0), 1.0))


def variant_percent(p: float, q: float, lam: float, alpha: float,
                    mu: float, mu_tilde: float) -> Tuple[float, float, bool]:
    """Proportional-noise rule on plain floats; returns (p*, q*, clamped)."""
    beta = 1.0 - alpha
    p_star = p * (1.0 + mu) + lam * beta * (q - p)
    q_star = q * (1.0 + mu_tilde) + lam * alpha * (p - q)
    clipped_p = min(max(p_star, 0.0), 1.0)
    clipped_q = min(max(q_star, 0.0), 1.0)
    return clipped_p, clipped_q, (clipped_p != p_star or clipped_q != q_star)


@dataclass
class ClampTally:
    """Running count of proportional-rule trades and of those clamped back into the square."""
    trades: int = 0
    clamped: int = 0

    @property
    def rate(self) -> float:
        return self.clamped / self.trades if self.trades else 0.0


def trade_percent_variant(pp: PercentPair, tp: TradeParams, rng: np.random.Generator,
                          tally: Optional[ClampTally] = None) -> PercentPair:
    """
    Proportional-noise trade of one pair. Draws are taken in the order
    draw_coefficients uses: the exponent (if random), then mu, then mu-tilde.
    """
    if tp.variant is not RuleVariant.PROPORTIONAL:
        raise ConfigError([ConfigIssue("trade.variant", "trade_percent_variant needs the edgeworth-proportional rule")])
    alpha = sample_random_exponents(tp, rng).alpha if tp.exponents is not None else tp.utility.alpha
    mu = float(tp.noise.sample(rng, 1)[0])
    mu_tilde = float(tp.noise.sample(rng, 1)[0])
    p_star, q_star, clamped = variant_percent(pp.p, pp.q, tp.lam, alpha, mu, mu_tilde)
    if tally is not None:
        tally.trades += 1
        tally.clamped += clamped
    if clamped:
        logger.debug("proportional trade left the unit square and was clamped")
    return PercentPair(p_star, q_star)


def sample_random_exponents(tp: TradeParams, rng: np.random.Generator) -> UtilityParams:
    if tp.exponents is None:
        raise ConfigError([ConfigIssue("trade.exponents", "exponent randomization is not configured")])
    alpha = float(tp.exponents.sample(rng, 1)[0])
    return UtilityParams(alpha, 1.0 - alpha)


# goods space


def split_total(share: float, total: float, quantum: Optional[float] = None) -> Tuple[float, float]:
    """
    Split `total` into (share, total - share) without losing a bit of it.

    With a quantum (a power of two, and `total` a multiple of it) the share is
    snapped to the lattice, so both parts and every running sum are exact.
    Without one, share is re-rounded as total - (total - share): one of the two
    subtractions is exact by Sterbenz, hence share + partner == total exactly.
    """
    share = min(max(share, 0.0), total)
    if quantum:
        share = round(share / quantum) * quantum
        return share, total - share
    partner = total - share
    return total - partner, partner


def exchange_goods(xa: float, ya: float, xb: float, yb: float, a: float, b: float,
                   qx: Optional[float] = None, qy: Optional[float] = None) -> Tuple[float, float, float, float]:
    """Difference rule carried to goods, on plain floats. Raises DegeneratePoolError on an empty pool."""
    total_x = xa + xb
    total_y = ya + yb
    if total_x == 0 or total_y == 0:
        raise DegeneratePoolError(f"empty pool: totals ({total_x}, {total_y})")
    new_xa = xa + a * (total_x / total_y * ya - xa)
    new_ya = ya + b * (total_y / total_x * xa - ya)
    new_xa, new_xb = split_total(new_xa, total_x, qx)
    new_ya, new_yb = split_total(new_ya, total_y, qy)
    return new_xa, new_ya, new_xb, new_yb


def exchange_goods_variant(xa: float, ya: float, xb: float, yb: float, lam: float, alpha: float,
                           mu: float, mu_tilde: float, qx: Optional[float] = None,
                           qy: Optional[float] = None) -> Tuple[float, float, float, float, bool]:
    """Proportional-noise rule carried to goods: x_A* = p* (x_A + x_B), y_A* = q* (y_A + y_B)."""
    total_x = xa + xb
    total_y = ya + yb
    if total_x == 0 or total_y == 0:
        raise DegeneratePoolError(f"empty pool: totals ({total_x}, {total_y})")
    p_star, q_star, clamped = variant_percent(xa / total_x, ya / total_y, lam, alpha, mu, mu_tilde)
    new_xa, new_xb = split_total(p_star * total_x, total_x, qx)
    new_ya, new_yb = split_total(q_star * total_y, total_y, qy)
    return new_xa, new_ya, new_xb, new_yb, clamped


def trade_goods(a: AgentState, b: AgentState, cd: CoefficientDraw,
                quantum: Optional[Tuple[float, float]] = None) -> Tuple[AgentState, AgentState]:
    qx, qy = quantum if quantum else (None, None)
    xa, ya, xb, yb = exchange_goods(a.x, a.y, b.x, b.y, cd.a, cd.b, qx, qy)
    return AgentState(xa, ya), AgentState(xb, yb)


def exchange_goods_batch(xa: np.ndarray, ya: np.ndarray, xb: np.ndarray, yb: np.ndarray,
                         coefficients: CoefficientBatch, tp: TradeParams,
                         qx: Optional[float] = None, qy: Optional[float] = None):
    """
    Vectorized trades of disjoint pairs.

    Returns (xa*, ya*, xb*, yb*, skipped, clamped); pairs with an empty pool
    are left untouched and counted in `skipped`.
    """
    total_x = xa + xb
    total_y = ya + yb
    live = (total_x > 0) & (total_y > 0)
    safe_x = np.where(live, total_x, 1.0)
    safe_y = np.where(live, total_y, 1.0)
    clamped = 0
    if tp.variant is RuleVariant.PROPORTIONAL:
        p, q = xa / safe_x, ya / safe_y
        beta = 1.0 - coefficients.alpha
        p_raw = p * (1.0 + coefficients.mu) + tp.lam * beta * (q - p)
        q_raw = q * (1.0 + coefficients.mu_tilde) + tp.lam * coefficients.alpha * (p - q)
        p_star, q_star = np.clip(p_raw, 0.0, 1.0), np.clip(q_raw, 0.0, 1.0)
        clamped = int(np.count_nonzero(live & ((p_star != p_raw) | (q_star != q_raw))))
        new_xa, new_ya = p_star * total_x, q_star * total_y
    else:
        new_xa = xa + coefficients.a * (safe_x / safe_y * ya - xa)
        new_ya = ya + coefficients.b * (safe_y / safe_x * xa - ya)
    new_xa, new_xb = _split_batch(new_xa, total_x, qx)
    new_ya, new_yb = _split_batch(new_ya, total_y, qy)
    out = (np.where(live, new_xa, xa), np.where(live, new_ya, ya),
           np.where(live, new_xb, xb), np.where(live, new_yb, yb))
    return (*out, int(np.count_nonzero(~live)), clamped)


def _split_batch(share: np.ndarray, total: np.ndarray, quantum: Optional[float]):
    share = np.clip(share, 0.0, total)
    if quantum:
        share = np.rint(share / quantum) * quantum
        return share, total - share
    partner = total - share
    return total - partner, partner
