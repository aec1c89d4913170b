"""
Particle simulation of the two-good Boltzmann dynamics.

Nonlinear mode pairs agents at random and lets them trade by the difference
rule; linear mode lets single agents trade against the frozen market means. The
interaction frequency is Maxwellian: one pair collision advances kinetic time
by 2/N and one mean-field trade by 1/N, so every agent trades once per unit
time on average.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from edgeworth.errors import (
    ConfigError,
    ConfigIssue,
    ConservationError,
    DegenerateMeansError,
    DegeneratePoolError,
    DomainError,
)
from edgeworth.trade import (
    AgentState,
    RuleVariant,
    TradeParams,
    draw_coefficients,
    exchange_goods,
    exchange_goods_batch,
    exchange_goods_variant,
)

logger = logging.getLogger(__name__)

CHUNK = 1 << 16     # random draws prepared per batch of sequential trades
OFF_LATTICE_RTOL = 1e-12


class Mode(StrEnum):
    NONLINEAR = "nonlinear"
    LINEAR = "linear"


class Selection(StrEnum):
    RANDOM = "random"   # one uniformly chosen pair (or agent) per step
    SWEEP = "sweep"     # every agent trades exactly once per unit time


def seed_sequence(seed: Union[int, np.random.SeedSequence, None]) -> np.random.SeedSequence:
    """A fresh SeedSequence, so spawning from it twice gives the same children."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key)
    return np.random.SeedSequence(seed)


def lineage(ss: np.random.SeedSequence) -> Tuple[int, ...]:
    """(entropy, *spawn_key) identifies a stream for the manifest."""
    return (int(ss.entropy), *(int(k) for k in ss.spawn_key))


def worker_seeds(seed, workers: int) -> List[np.random.SeedSequence]:
    """One independent stream per work item: the i-th child of SeedSequence(seed)."""
    return seed_sequence(seed).spawn(workers)


def _quantum_for(total: float) -> Optional[float]:
    if total <= 0:
        return None
    _, exponent = math.frexp(total)
    return math.ldexp(1.0, exponent - 53)


def conservation_lattice(values: np.ndarray) -> Tuple[np.ndarray, Optional[float]]:
    """
    Snap holdings to multiples of a power of two q with sum(values) < 2**53 q.

    On the lattice every holding, pair total and partial sum is an exact
    double, so pairwise trades split totals exactly and np.sum is order free.
    The result is a fixed point: snapping it again changes nothing.
    """
    quantum = _quantum_for(math.fsum(values))
    while quantum is not None:
        snapped = np.rint(values / quantum) * quantum
        settled = _quantum_for(math.fsum(snapped))
        if settled == quantum:
            return snapped, quantum
        values, quantum = snapped, settled
    return values, None


@dataclass
class Ensemble:
    """
    N agents as two holding arrays, plus kinetic time and bookkeeping.

    `reference_means` are the (m_x, m_y) frozen at construction; the linear
    rule trades against them. Trading mutates the arrays in place.
    """
    x: np.ndarray
    y: np.ndarray
    t: float = 0.0
    reference_means: Optional[Tuple[float, float]] = None
    lattice: Optional[Tuple[Optional[float], Optional[float]]] = None
    seed_lineage: Tuple[int, ...] = ()
    skipped: int = 0
    clamped: int = 0
    steps: int = 0
    totals: Tuple[float, float] = field(init=False)

    def __post_init__(self):
        self.x = np.array(self.x, dtype=np.float64)
        self.y = np.array(self.y, dtype=np.float64)
        if self.x.ndim != 1 or self.x.shape != self.y.shape:
            raise DomainError("x and y must be one-dimensional arrays of equal length")
        if len(self.x) < 2:
            raise DomainError(f"an ensemble needs at least two agents, got {len(self.x)}")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise DomainError("holdings must be finite")
        if np.any(self.x < 0) or np.any(self.y < 0):
            raise DomainError("holdings must be non-negative")
        self.totals = (math.fsum(self.x), math.fsum(self.y))
        if self.reference_means is None:
            self.reference_means = self.means

    @classmethod
    def from_arrays(cls, x, y, conserving: bool = False, **kwargs) -> "Ensemble":
        """conserving=True puts the holdings on the conservation lattice first."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if conserving:
            x, qx = conservation_lattice(x)
            y, qy = conservation_lattice(y)
            kwargs["lattice"] = (qx, qy)
        return cls(x, y, **kwargs)

    @classmethod
    def from_agents(cls, agents: Sequence[AgentState], **kwargs) -> "Ensemble":
        return cls.from_arrays([a.x for a in agents], [a.y for a in agents], **kwargs)

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def agents(self) -> List[AgentState]:
        return [AgentState(float(a), float(b)) for a, b in zip(self.x, self.y)]

    @property
    def means(self) -> Tuple[float, float]:
        return self.totals[0] / self.n, self.totals[1] / self.n

    def sample_means(self) -> Tuple[float, float]:
        return math.fsum(self.x) / self.n, math.fsum(self.y) / self.n

    def refresh_totals(self):
        self.totals = (math.fsum(self.x), math.fsum(self.y))

    def verify_totals(self):
        """
        Bit-exact on the conservation lattice. Off the lattice (ingested data)
        each pair trade keeps the rounded pair total, so the sums may move by
        rounding, never by more than OFF_LATTICE_RTOL.
        """
        current = (math.fsum(self.x), math.fsum(self.y))
        if current == self.totals:
            return
        if self.lattice is None and all(math.isclose(c, t, rel_tol=OFF_LATTICE_RTOL, abs_tol=0.0)
                                        for c, t in zip(current, self.totals)):
            logger.debug("off-lattice totals moved by rounding: %r -> %r", self.totals, current)
            return
        raise ConservationError(f"totals drifted from {self.totals!r} to {current!r}")

    def copy(self) -> "Ensemble":
        clone = replace(self, x=self.x.copy(), y=self.y.copy())
        clone.totals = self.totals
        return clone


# kernels


def _nonlinear_random(e: Ensemble, tp: TradeParams, rng: np.random.Generator, n_steps: int):
    """Sequential random pair trades; the arrays go through Python lists for speed."""
    xs, ys = e.x.tolist(), e.y.tolist()
    qx, qy = e.lattice if e.lattice else (None, None)
    proportional = tp.variant is RuleVariant.PROPORTIONAL
    n = e.n
    remaining = n_steps
    while remaining:
        k = min(CHUNK, remaining)
        first = rng.integers(0, n, k)
        second = rng.integers(0, n - 1, k)
        second += second >= first
        draws = draw_coefficients(tp, rng, k)
        pairs = zip(first.tolist(), second.tolist(), draws.a.tolist(), draws.b.tolist(),
                    draws.alpha.tolist(), draws.mu.tolist(), draws.mu_tilde.tolist())
        for i, j, a, b, alpha, mu, mu_tilde in pairs:
            try:
                if proportional:
                    xs[i], ys[i], xs[j], ys[j], clamped = exchange_goods_variant(
                        xs[i], ys[i], xs[j], ys[j], tp.lam, alpha, mu, mu_tilde, qx, qy)
                    e.clamped += clamped
                else:
                    xs[i], ys[i], xs[j], ys[j] = exchange_goods(xs[i], ys[i], xs[j], ys[j], a, b, qx, qy)
            except DegeneratePoolError:
                e.skipped += 1
        remaining -= k
    e.x[:] = xs
    e.y[:] = ys
    e.steps += n_steps


def _nonlinear_sweep(e: Ensemble, tp: TradeParams, rng: np.random.Generator, n_sweeps: int):
    """Each sweep matches agents into disjoint random pairs and trades them all at once."""
    qx, qy = e.lattice if e.lattice else (None, None)
    half = e.n // 2
    for _ in range(n_sweeps):
        order = rng.permutation(e.n)
        left, right = order[:half], order[half:2 * half]
        draws = draw_coefficients(tp, rng, half)
        xa, ya, xb, yb, skipped, clamped = exchange_goods_batch(
            e.x[left], e.y[left], e.x[right], e.y[right], draws, tp, qx, qy)
        e.x[left], e.y[left], e.x[right], e.y[right] = xa, ya, xb, yb
        e.skipped += skipped
        e.clamped += clamped
        e.steps += half


def _linear_update(e: Ensemble, agents: np.ndarray, tp: TradeParams, rng: np.random.Generator):
    """One mean-field trade for each listed agent, with fresh draws."""
    m_x, m_y = e.reference_means
    draws = draw_coefficients(tp, rng, len(agents))
    x, y = e.x[agents], e.y[agents]
    if tp.variant is RuleVariant.PROPORTIONAL:
        beta = 1.0 - draws.alpha
        new_x = x * (1.0 + draws.mu) + tp.lam * beta * (m_x / m_y * y - x)
        new_y = y * (1.0 + draws.mu_tilde) + tp.lam * draws.alpha * (m_y / m_x * x - y)
        negative = (new_x < 0) | (new_y < 0)
        e.clamped += int(np.count_nonzero(negative))
        new_x, new_y = np.maximum(new_x, 0.0), np.maximum(new_y, 0.0)
    else:
        new_x = x + draws.a * (m_x / m_y * y - x)
        new_y = y + draws.b * (m_y / m_x * x - y)
    e.x[agents] = new_x
    e.y[agents] = new_y
    e.steps += len(agents)


def _linear_random(e: Ensemble, tp: TradeParams, rng: np.random.Generator, n_steps: int):
    """
    n_steps uniformly chosen mean-field trades.

    Given frozen means the agents don't interact, so the trades are replayed
    in occupancy rounds: round r moves every agent chosen at least r times.
    Each agent still sees its own trades in order.
    """
    remaining = n_steps
    while remaining:
        k = min(CHUNK * 64, remaining)
        counts = np.bincount(rng.integers(0, e.n, k), minlength=e.n)
        for level in range(1, int(counts.max()) + 1):
            _linear_update(e, np.flatnonzero(counts >= level), tp, rng)
        remaining -= k


def _linear_sweep(e: Ensemble, tp: TradeParams, rng: np.random.Generator, n_sweeps: int):
    everyone = np.arange(e.n)
    for _ in range(n_sweeps):
        _linear_update(e, everyone, tp, rng)


def _require_means(e: Ensemble):
    m_x, m_y = e.reference_means
    if m_x == 0 or m_y == 0:
        raise DegenerateMeansError(f"linear trades need positive means, got ({m_x}, {m_y})")


def step_nonlinear(e: Ensemble, tp: TradeParams, rng: np.random.Generator) -> Ensemble:
    """One random pair collision; time advances by 2/N even when the pool is empty."""
    _nonlinear_random(e, tp, rng, 1)
    e.t += 2.0 / e.n
    return e


def step_linear(e: Ensemble, tp: TradeParams, rng: np.random.Generator) -> Ensemble:
    _require_means(e)
    agent = np.array([rng.integers(0, e.n)])
    _linear_update(e, agent, tp, rng)
    e.t += 1.0 / e.n
    return e


# runs


class InitialKind(StrEnum):
    UNIFORM = "uniform"
    EXPONENTIAL = "exponential"
    POINT = "point"
    TWO_POINT = "two-point"
    CSV = "csv"


@dataclass(frozen=True)
class InitialCondition:
    kind: InitialKind = InitialKind.EXPONENTIAL
    x_range: Tuple[float, float] = (0.0, 2.0)
    y_range: Tuple[float, float] = (0.0, 2.0)
    mean_x: float = 1.0
    mean_y: float = 1.0
    point: Tuple[float, float] = (1.0, 1.0)
    path: Optional[str] = None

    def generate(self, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        if self.kind is InitialKind.UNIFORM:
            return rng.uniform(*self.x_range, n), rng.uniform(*self.y_range, n)
        if self.kind is InitialKind.EXPONENTIAL:
            return rng.exponential(self.mean_x, n), rng.exponential(self.mean_y, n)
        if self.kind is InitialKind.POINT:
            return np.full(n, self.point[0]), np.full(n, self.point[1])
        if self.kind is InitialKind.TWO_POINT:
            a, b = self.point
            flip = np.arange(n) % 2 == 1
            return np.where(flip, b, a), np.where(flip, a, b)
        from edgeworth.snapshots import read_agents
        return read_agents(self.path)


@dataclass(frozen=True)
class SimConfig:
    n: int
    trade: TradeParams
    mode: Mode = Mode.NONLINEAR
    horizon: float = 1.0
    snapshot_every: Optional[float] = None   # None: initial and final snapshot only
    rate: float = 1.0
    seed: Optional[int] = 0
    selection: Selection = Selection.RANDOM
    initial: InitialCondition = field(default_factory=InitialCondition)

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "selection", Selection(self.selection))
        issues = []
        if self.n < 2:
            issues.append(ConfigIssue("population.n", f"need N >= 2, got {self.n}"))
        if not self.horizon >= 0:
            issues.append(ConfigIssue("time.horizon", f"horizon must be >= 0, got {self.horizon}"))
        if not self.rate > 0:
            issues.append(ConfigIssue("time.rate", f"rate must be > 0, got {self.rate}"))
        if self.snapshot_every is not None and not self.snapshot_every > 0:
            issues.append(ConfigIssue("time.snapshot_every", f"must be > 0, got {self.snapshot_every}"))
        if issues:
            raise ConfigError(issues)

    def steps_per_unit_time(self) -> float:
        if self.selection is Selection.SWEEP:
            return self.rate
        if self.mode is Mode.NONLINEAR:
            return self.n * self.rate / 2.0
        return self.n * self.rate

    def snapshot_times(self) -> List[float]:
        if self.horizon == 0:
            return [0.0]
        if self.snapshot_every is None:
            return [0.0, self.horizon]
        count = int(math.floor(self.horizon / self.snapshot_every + 1e-9))
        times = [j * self.snapshot_every for j in range(count + 1)]
        if self.horizon - times[-1] > 1e-9 * self.snapshot_every:
            times.append(self.horizon)
        return times


@dataclass(frozen=True)
class Snapshot:
    t: float
    x: np.ndarray
    y: np.ndarray

    @property
    def means(self) -> Tuple[float, float]:
        return math.fsum(self.x) / len(self.x), math.fsum(self.y) / len(self.y)

    @property
    def totals(self) -> Tuple[float, float]:
        return math.fsum(self.x), math.fsum(self.y)


@dataclass
class Trajectory:
    snapshots: List[Snapshot]
    mode: Mode
    reference_means: Tuple[float, float]
    seed_lineage: Tuple[int, ...] = ()
    epsilon: float = 1.0
    skipped: int = 0
    clamped: int = 0
    steps: int = 0

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]


def initial_ensemble(sc: SimConfig, ss: Optional[np.random.SeedSequence] = None) -> Ensemble:
    ss = ss or seed_sequence(sc.seed).spawn(2)[0]
    """
    Generated holdings go on the conservation lattice in nonlinear mode. CSV
    data is taken as written, so a stored snapshot comes back bit for bit.
    """
    x, y = sc.initial.generate(sc.n, np.random.default_rng(ss))
    conserving = sc.mode is Mode.NONLINEAR and sc.initial.kind is not InitialKind.CSV
    return Ensemble.from_arrays(x, y, conserving=conserving, seed_lineage=lineage(ss))


def _advance(e: Ensemble, sc: SimConfig, tp: TradeParams, rng: np.random.Generator, n_steps: int):
    if n_steps <= 0:
        return
    if sc.mode is Mode.NONLINEAR:
        kernel = _nonlinear_sweep if sc.selection is Selection.SWEEP else _nonlinear_random
    else:
        _require_means(e)
        kernel = _linear_sweep if sc.selection is Selection.SWEEP else _linear_random
    kernel(e, tp, rng, n_steps)


def run(sc: SimConfig, ensemble: Optional[Ensemble] = None, trade: Optional[TradeParams] = None) -> Trajectory:
    """
    Evolve the configured ensemble to the horizon, snapshotting on schedule.

    A fixed seed gives bit-identical trajectories. `ensemble` replaces the
    generated initial data (it is copied, never mutated or snapped).
    """
    init_ss, dyn_ss = seed_sequence(sc.seed).spawn(2)
    e = ensemble.copy() if ensemble is not None else initial_ensemble(sc, init_ss)
    if sc.mode is Mode.NONLINEAR and e.lattice is None:
        logger.info("holdings are off the conservation lattice; totals are kept to relative %g", OFF_LATTICE_RTOL)
    tp = trade or sc.trade
    rng = np.random.default_rng(dyn_ss)
    rate = sc.steps_per_unit_time()
    t0 = e.t
    logger.info("%s run: N=%d, horizon %g, %s selection", sc.mode, e.n, sc.horizon, sc.selection)

    snapshots = []
    done = 0
    for when in sc.snapshot_times():
        target = int(round(when * rate))
        _advance(e, sc, tp, rng, target - done)
        done = target
        e.t = t0 + target / rate
        if sc.mode is Mode.NONLINEAR:
            e.verify_totals()
        else:
            logger.debug("t=%g sample means %s vs frozen %s", e.t, e.sample_means(), e.reference_means)
        snapshots.append(Snapshot(e.t, e.x.copy(), e.y.copy()))

    if e.skipped or e.clamped:
        logger.warning("run finished with %d skipped and %d clamped trades", e.skipped, e.clamped)
    return Trajectory(snapshots, sc.mode, e.reference_means, seed_lineage=lineage(dyn_ss),
                      skipped=e.skipped, clamped=e.clamped, steps=e.steps)


def quasi_invariant_run(sc: SimConfig, epsilon: float, ensemble: Optional[Ensemble] = None) -> Trajectory:
    """
    Linear run under lambda -> eps lambda, noise -> sqrt(eps) noise, reported in tau = eps t.

    The horizon and snapshot spacing of `sc` are read in tau.
    """
    if sc.mode is not Mode.LINEAR:
        raise ConfigError([ConfigIssue("experiment", "the quasi-invariant scaling applies to linear runs")])
    if not 0.0 < epsilon <= 1.0:
        raise ConfigError([ConfigIssue("sweep.epsilons", f"epsilon must lie in (0, 1], got {epsilon}")])
    scaled = sc.trade.scaled(epsilon)
    every = sc.snapshot_every / epsilon if sc.snapshot_every else None
    stretched = replace(sc, trade=scaled, horizon=sc.horizon / epsilon, snapshot_every=every)
    trajectory = run(stretched, ensemble=ensemble)
    trajectory.snapshots = [replace(s, t=s.t * epsilon) for s in trajectory.snapshots]
    trajectory.epsilon = epsilon
    return trajectory
