"""
Experiment configuration, read from TOML.

    experiment = "linear"
    seed = 7

    [trade]
    lambda = 0.5
    alpha = 0.5

    [trade.noise]
    kind = "uniform"
    delta = 0.1

    [population]
    n = 10000
    initial = "exponential"

Every table and key is optional; missing ones take the defaults below.
parse_config reports every problem it finds at once, not just the first.
"""

import hashlib
import json
import logging
import math
import re
import tomllib
from dataclasses import dataclass, field, replace
from enum import StrEnum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from edgeworth.ensemble import InitialCondition, InitialKind, Mode, Selection, SimConfig
from edgeworth.errors import ArtifactError, ConfigError, ConfigIssue, ConfigSyntaxError, DomainError
from edgeworth.fokker_planck import FPParams
from edgeworth.trade import (
    ExponentKind,
    ExponentLaw,
    NoiseKind,
    NoiseSpec,
    RuleVariant,
    TradeParams,
    UtilityParams,
    exponent_issues,
    trade_issues,
)

logger = logging.getLogger(__name__)


class ExperimentKind(StrEnum):
    NONLINEAR = "nonlinear"
    LINEAR = "linear"
    FOKKER_PLANCK = "fokker-planck"
    QUASI_INVARIANT_SWEEP = "quasi-invariant-sweep"
    TAIL_STUDY = "tail-study"
    METRIC_STUDY = "metric-study"


KNOWN_KEYS = {
    "": {"experiment", "seed", "output_dir", "precision", "workers",
         "trade", "population", "time", "fokker_planck", "sweep", "analysis"},
    "trade": {"lambda", "alpha", "variant", "noise", "exponents"},
    "trade.noise": {"kind", "delta"},
    "trade.exponents": {"kind", "low", "high"},
    "population": {"n", "initial", "x_range", "y_range", "mean_x", "mean_y", "point", "path"},
    "time": {"horizon", "snapshot_every", "rate", "selection"},
    "fokker_planck": {"dtau", "orders", "support_margin", "sigma1_sq", "sigma2_sq"},
    "sweep": {"epsilons"},
    "analysis": {"s", "tail_fraction", "grid_points", "bootstrap", "contraction_samples"},
}


@dataclass(frozen=True)
class PopulationConfig:
    n: int = 1000
    initial: InitialCondition = field(default_factory=InitialCondition)


@dataclass(frozen=True)
class TimeConfig:
    horizon: float = 1.0
    snapshot_every: Optional[float] = None
    rate: float = 1.0
    selection: Selection = Selection.RANDOM


@dataclass(frozen=True)
class FokkerPlanckConfig:
    dtau: Optional[float] = None
    orders: Tuple[float, ...] = (0.5, 1.0, 3.0)
    support_margin: float = 0.0    # w is shrunk by this fraction to start strictly inside the cone
    # diffusion coefficients of the limit; derived from the trade noise when unset
    sigma1_sq: Optional[float] = None
    sigma2_sq: Optional[float] = None


@dataclass(frozen=True)
class SweepConfig:
    epsilons: Tuple[float, ...] = (0.5, 0.1, 0.02)


@dataclass(frozen=True)
class AnalysisConfig:
    s: Optional[float] = None
    tail_fraction: float = 0.05
    grid_points: int = 64
    bootstrap: int = 100
    contraction_samples: int = 100_000


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentKind = ExperimentKind.NONLINEAR
    trade: TradeParams = field(default_factory=lambda: TradeParams(0.5))
    population: PopulationConfig = field(default_factory=PopulationConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    fokker_planck: FokkerPlanckConfig = field(default_factory=FokkerPlanckConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    seed: int = 0
    output_dir: Path = Path("edgeworth-output")
    precision: int = 17
    workers: int = 1
    base_dir: Optional[Path] = None

    def with_overrides(self, seed: Optional[int] = None, output_dir: Optional[Path] = None,
                       workers: Optional[int] = None) -> "ExperimentConfig":
        """Command-line flags win over the file."""
        changes = {}
        if seed is not None:
            changes["seed"] = seed
        if output_dir is not None:
            changes["output_dir"] = Path(output_dir)
        if workers is not None:
            if workers < 1:
                raise ConfigError([ConfigIssue("workers", f"need at least one worker, got {workers}")])
            changes["workers"] = workers
        return replace(self, **changes)

    @property
    def mode(self) -> Mode:
        if self.experiment is ExperimentKind.NONLINEAR:
            return Mode.NONLINEAR
        return Mode.LINEAR

    def sim_config(self, mode: Optional[Mode] = None) -> SimConfig:
        return SimConfig(
            n=self.population.n,
            trade=self.trade,
            mode=mode or self.mode,
            horizon=self.time.horizon,
            snapshot_every=self.time.snapshot_every,
            rate=self.time.rate,
            seed=self.seed,
            selection=self.time.selection,
            initial=self.population.initial,
        )

    def fp_params(self) -> FPParams:
        fpc = self.fokker_planck
        derived = FPParams.from_trade(self.trade, dtau=fpc.dtau)
        if fpc.sigma1_sq is None and fpc.sigma2_sq is None:
            return derived
        return FPParams(
            self.trade.lam,
            self.trade.alpha,
            sigma1_sq=derived.sigma1_sq if fpc.sigma1_sq is None else fpc.sigma1_sq,
            sigma2_sq=derived.sigma2_sq if fpc.sigma2_sq is None else fpc.sigma2_sq,
            dtau=fpc.dtau,
            drift_difference=self.trade.mean_difference(),
        )

    def canonical(self) -> Dict[str, Any]:
        """Every input that changes the artifacts, as plain JSON data."""
        tp = self.trade
        initial = self.population.initial
        data = {
            "experiment": str(self.experiment),
            "seed": self.seed,
            "precision": self.precision,
            "trade": {
                "lambda": tp.lam,
                "alpha": tp.utility.alpha,
                "variant": str(tp.variant),
                "noise": {"kind": str(tp.noise.kind), "delta": tp.noise.delta},
                "exponents": None if tp.exponents is None else {
                    "kind": str(tp.exponents.kind), "low": tp.exponents.low, "high": tp.exponents.high},
            },
            "population": {
                "n": self.population.n,
                "initial": str(initial.kind),
                "x_range": list(initial.x_range),
                "y_range": list(initial.y_range),
                "mean_x": initial.mean_x,
                "mean_y": initial.mean_y,
                "point": list(initial.point),
                "path_sha256": _file_digest(initial.path) if initial.kind is InitialKind.CSV else None,
            },
            "time": {
                "horizon": self.time.horizon,
                "snapshot_every": self.time.snapshot_every,
                "rate": self.time.rate,
                "selection": str(self.time.selection),
            },
            "fokker_planck": {
                "dtau": self.fokker_planck.dtau,
                "orders": list(self.fokker_planck.orders),
                "support_margin": self.fokker_planck.support_margin,
                "sigma1_sq": self.fokker_planck.sigma1_sq,
                "sigma2_sq": self.fokker_planck.sigma2_sq,
            },
            "sweep": {"epsilons": list(self.sweep.epsilons)},
            "analysis": {
                "s": self.analysis.s,
                "tail_fraction": self.analysis.tail_fraction,
                "grid_points": self.analysis.grid_points,
                "bootstrap": self.analysis.bootstrap,
                "contraction_samples": self.analysis.contraction_samples,
            },
        }
        return data

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _file_digest(path: Optional[str]) -> Optional[str]:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except (OSError, TypeError):
        return None


# parsing


class _Reader:
    """Pulls typed values out of the TOML tree, collecting issues instead of raising."""

    def __init__(self, data: Dict[str, Any]):
        self.data = data
        self.issues: List[ConfigIssue] = []

    def table(self, name: str) -> Dict[str, Any]:
        node = self.data
        for part in name.split(".") if name else []:
            node = node.get(part, {})
            if not isinstance(node, dict):
                self.issues.append(ConfigIssue(name, "must be a table"))
                return {}
        return node

    def unknown_keys(self):
        for name, known in KNOWN_KEYS.items():
            for key in self.table(name):
                if key not in known:
                    where = f"{name}.{key}" if name else key
                    self.issues.append(ConfigIssue(where, "unknown key"))

    def get(self, name: str, key: str, kind, default):
        table = self.table(name)
        where = f"{name}.{key}" if name else key
        if key not in table:
            return default
        value = table[key]
        if kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                self.issues.append(ConfigIssue(where, f"expected a number, got {value!r}"))
                return default
            return float(value)
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                self.issues.append(ConfigIssue(where, f"expected an integer, got {value!r}"))
                return default
            return value
        if kind is str:
            if not isinstance(value, str):
                self.issues.append(ConfigIssue(where, f"expected a string, got {value!r}"))
                return default
            return value
        if kind is tuple:
            if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
                self.issues.append(ConfigIssue(where, f"expected a list of numbers, got {value!r}"))
                return default
            return tuple(float(v) for v in value)
        raise TypeError(kind)

    def choice(self, name: str, key: str, enum, default):
        raw = self.get(name, key, str, None)
        if raw is None:
            return default
        try:
            return enum(raw)
        except ValueError:
            where = f"{name}.{key}" if name else key
            allowed = ", ".join(repr(str(member)) for member in enum)
            self.issues.append(ConfigIssue(where, f"{raw!r} is not one of {allowed}"))
            return default

    def pair(self, name: str, key: str, default: Tuple[float, float]) -> Tuple[float, float]:
        value = self.get(name, key, tuple, default)
        if len(value) != 2:
            self.issues.append(ConfigIssue(f"{name}.{key}", f"expected two numbers, got {len(value)}"))
            return default
        return value

    def check(self, where: str, ok: bool, message: str):
        if not ok:
            self.issues.append(ConfigIssue(where, message))


def _syntax_position(error: tomllib.TOMLDecodeError) -> Tuple[Optional[int], Optional[int]]:
    line = getattr(error, "lineno", None)
    column = getattr(error, "colno", None)
    if line is None:
        match = re.search(r"line (\d+), column (\d+)", str(error))
        if match:
            line, column = int(match.group(1)), int(match.group(2))
    return line, column


def _read_trade(r: _Reader) -> Optional[TradeParams]:
    lam = r.get("trade", "lambda", float, 0.5)
    alpha = r.get("trade", "alpha", float, 0.5)
    variant = r.choice("trade", "variant", RuleVariant, RuleVariant.DIFFERENCE)
    noise_kind = r.choice("trade.noise", "kind", NoiseKind, NoiseKind.ZERO)
    delta = r.get("trade.noise", "delta", float, 0.0)

    exponents = None
    if "exponents" in r.table("trade"):
        kind = r.choice("trade.exponents", "kind", ExponentKind, ExponentKind.DEGENERATE)
        low = r.get("trade.exponents", "low", float, alpha)
        high = r.get("trade.exponents", "high", float, low)
        issues = exponent_issues(kind, low, high)
        r.issues.extend(issues)
        if not issues:
            exponents = ExponentLaw(kind, low, high)

    utility = None
    if not 0.0 < alpha < 1.0:
        r.issues.append(ConfigIssue("trade.alpha", f"alpha must lie in (0, 1), got {alpha}"))
    else:
        utility = UtilityParams(alpha)
    if not (math.isfinite(delta) and delta >= 0):
        r.issues.append(ConfigIssue("trade.noise.delta", f"noise half-width must be >= 0, got {delta}"))
        return None
    noise = NoiseSpec(noise_kind, delta)
    issues = trade_issues(lam, utility, noise, exponents)
    r.issues.extend(issues)
    if issues or utility is None:
        return None
    return TradeParams(lam, utility, noise, variant, exponents)


def _read_population(r: _Reader, base_dir: Optional[Path]) -> PopulationConfig:
    n = r.get("population", "n", int, 1000)
    r.check("population.n", n >= 2, f"need N >= 2, got {n}")
    kind = r.choice("population", "initial", InitialKind, InitialKind.EXPONENTIAL)
    x_range = r.pair("population", "x_range", (0.0, 2.0))
    y_range = r.pair("population", "y_range", (0.0, 2.0))
    mean_x = r.get("population", "mean_x", float, 1.0)
    mean_y = r.get("population", "mean_y", float, 1.0)
    point = r.pair("population", "point", (1.0, 1.0))
    path = r.get("population", "path", str, None)

    for where, (lo, hi) in (("population.x_range", x_range), ("population.y_range", y_range)):
        r.check(where, 0.0 <= lo <= hi, f"need 0 <= low <= high, got ({lo}, {hi})")
    r.check("population.mean_x", mean_x >= 0, f"mean must be >= 0, got {mean_x}")
    r.check("population.mean_y", mean_y >= 0, f"mean must be >= 0, got {mean_y}")
    r.check("population.point", min(point) >= 0, f"holdings must be >= 0, got {point}")
    if kind is InitialKind.CSV:
        if path is None:
            r.issues.append(ConfigIssue("population.path", "csv initial data needs a path"))
        elif base_dir is not None and not Path(path).is_absolute():
            path = str(base_dir / path)
    initial = InitialCondition(kind, x_range, y_range, mean_x, mean_y, point, path)
    return PopulationConfig(n, initial)


def _read_time(r: _Reader) -> TimeConfig:
    horizon = r.get("time", "horizon", float, 1.0)
    every = r.get("time", "snapshot_every", float, None)
    rate = r.get("time", "rate", float, 1.0)
    selection = r.choice("time", "selection", Selection, Selection.RANDOM)
    r.check("time.horizon", horizon >= 0, f"horizon must be >= 0, got {horizon}")
    r.check("time.snapshot_every", every is None or every > 0, f"must be > 0, got {every}")
    r.check("time.rate", rate > 0, f"rate must be > 0, got {rate}")
    return TimeConfig(horizon, every, rate, selection)


def _read_fokker_planck(r: _Reader) -> FokkerPlanckConfig:
    dtau = r.get("fokker_planck", "dtau", float, None)
    orders = r.get("fokker_planck", "orders", tuple, FokkerPlanckConfig.orders)
    margin = r.get("fokker_planck", "support_margin", float, 0.0)
    r.check("fokker_planck.dtau", dtau is None or dtau > 0, f"time step must be > 0, got {dtau}")
    r.check("fokker_planck.orders", all(o > -1 for o in orders), "moment orders need r > -1")
    r.check("fokker_planck.support_margin", 0.0 <= margin < 1.0, f"margin must lie in [0, 1), got {margin}")
    sigmas = {}
    for key in ("sigma1_sq", "sigma2_sq"):
        sigmas[key] = r.get("fokker_planck", key, float, None)
        r.check(f"fokker_planck.{key}", sigmas[key] is None or sigmas[key] >= 0,
                f"diffusion coefficient must be >= 0, got {sigmas[key]}")
    return FokkerPlanckConfig(dtau, orders, margin, **sigmas)


def _read_analysis(r: _Reader) -> AnalysisConfig:
    s = r.get("analysis", "s", float, None)
    tail_fraction = r.get("analysis", "tail_fraction", float, 0.05)
    grid_points = r.get("analysis", "grid_points", int, 64)
    bootstrap = r.get("analysis", "bootstrap", int, 100)
    samples = r.get("analysis", "contraction_samples", int, 100_000)
    r.check("analysis.s", s is None or s > 0, f"s must be > 0, got {s}")
    r.check("analysis.tail_fraction", 0 < tail_fraction <= 0.2, f"tail fraction must lie in (0, 0.2], got {tail_fraction}")
    r.check("analysis.grid_points", grid_points >= 2, f"need at least 2 points per ray, got {grid_points}")
    r.check("analysis.bootstrap", bootstrap >= 2, f"need at least 2 bootstrap draws, got {bootstrap}")
    r.check("analysis.contraction_samples", samples >= 2, f"need at least 2 samples, got {samples}")
    return AnalysisConfig(s, tail_fraction, grid_points, bootstrap, samples)


def _cross_checks(r: _Reader, experiment: ExperimentKind, trade: Optional[TradeParams], sweep: SweepConfig,
                  horizon: float, fpc: FokkerPlanckConfig = FokkerPlanckConfig()):
    if trade is None:
        return
    if experiment is ExperimentKind.TAIL_STUDY:
        sigma2_sq = 2.0 * trade.noise.variance if fpc.sigma2_sq is None else fpc.sigma2_sq
        r.check("fokker_planck.sigma2_sq", sigma2_sq > 0,
                "tail-study needs sigma2_sq > 0, from trade noise or set directly")
    if experiment is ExperimentKind.QUASI_INVARIANT_SWEEP:
        r.check("trade.noise", trade.noise.variance > 0, f"{experiment} needs noise with positive variance")
        r.check("time.horizon", horizon > 0, "the sweep compares laws at tau = horizon, which must be > 0")
        for eps in sweep.epsilons:
            scaled = trade_issues(trade.lam * eps, trade.utility, trade.noise.scaled(math.sqrt(eps)), trade.exponents)
            for issue in scaled:
                r.issues.append(ConfigIssue("sweep.epsilons", f"at eps={eps}: {issue.message}"))
    if trade.variant is RuleVariant.PROPORTIONAL and experiment in (
            ExperimentKind.FOKKER_PLANCK, ExperimentKind.TAIL_STUDY, ExperimentKind.QUASI_INVARIANT_SWEEP):
        r.issues.append(ConfigIssue("trade.variant", f"{experiment} is derived for the edgeworth-difference rule"))


def parse_config(text: str, base_dir: Optional[Path] = None) -> ExperimentConfig:
    """Validated config with defaults filled in, or ConfigError listing every issue."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        line, column = _syntax_position(e)
        raise ConfigSyntaxError(str(e).split(" (at line")[0], line, column) from e

    r = _Reader(data)
    r.unknown_keys()
    experiment = r.choice("", "experiment", ExperimentKind, ExperimentKind.NONLINEAR)
    seed = r.get("", "seed", int, 0)
    r.check("seed", seed >= 0, f"seed must be >= 0, got {seed}")
    output_dir = r.get("", "output_dir", str, "edgeworth-output")
    precision = r.get("", "precision", int, 17)
    r.check("precision", 1 <= precision <= 17, f"precision must lie in [1, 17], got {precision}")
    workers = r.get("", "workers", int, 1)
    r.check("workers", workers >= 1, f"need at least one worker, got {workers}")

    trade = _read_trade(r)
    population = _read_population(r, base_dir)
    time = _read_time(r)
    fokker_planck = _read_fokker_planck(r)
    epsilons = r.get("sweep", "epsilons", tuple, SweepConfig.epsilons)
    r.check("sweep.epsilons", len(epsilons) > 0 and all(0 < e <= 1 for e in epsilons),
            f"epsilons must be a non-empty list in (0, 1], got {list(epsilons)}")
    sweep = SweepConfig(epsilons)
    analysis = _read_analysis(r)
    _cross_checks(r, experiment, trade, sweep, time.horizon, fokker_planck)

    if r.issues:
        raise ConfigError(r.issues)
    try:
        cfg = ExperimentConfig(experiment, trade, population, time, fokker_planck, sweep, analysis,
                               seed, Path(output_dir), precision, workers, base_dir)
        cfg.sim_config()
        if experiment in (ExperimentKind.FOKKER_PLANCK, ExperimentKind.TAIL_STUDY):
            cfg.fp_params()
    except DomainError as e:
        raise ConfigError([ConfigIssue("config", str(e))]) from e
    logger.debug("parsed %s config, hash %s", experiment, cfg.config_hash()[:12])
    return cfg


def load_config(path: Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ArtifactError(f"cannot read config {path}: {e.strerror or e}") from e
    return parse_config(text, base_dir=path.parent)


def require_compatible(cfg: ExperimentConfig, experiment: ExperimentKind):
    """Raise ConfigError if `cfg` can't drive `experiment` (e.g. a linear config handed to sweep)."""
    r = _Reader({})
    _cross_checks(r, experiment, cfg.trade, cfg.sweep, cfg.time.horizon, cfg.fokker_planck)
    if r.issues:
        raise ConfigError(r.issues)
