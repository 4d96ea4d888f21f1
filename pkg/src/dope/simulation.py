"""Simulated single-index designs and the RMSE and coverage experiments.

Design: ``W ~ U[0,1]^d``, ``T | W ~ Bern(0.01 + 0.98 * 1(W_1 > 0.5))`` and
``Y | T, W ~ N(h(T, W^T beta), 1)`` for one of four links ``h``.  The target
is ``mu_1 = E[h(1, W^T beta)]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from threadpoolctl import threadpool_limits

from .data import ObservationTable
from .errors import ConfigError, DimensionMismatch, DopeError
from .inference import Interval, bootstrap, bootstrap_interval, normal_quantile
from .pipeline import MODE_FREE, MethodSettings, compute_methods, validate_methods
from .regressors.network import TrainConfig


def signed_cbrt(z):
    return np.cbrt(z)


LINKS: Dict[str, Callable] = {
    "lin": lambda t, z: t + 3.0 * z,
    "square": lambda t, z: z ** (1 + t),
    "cbrt": lambda t, z: (2.0 + t) * signed_cbrt(z),
    "sin": lambda t, z: (3.0 + t) * np.sin(np.pi * z),
}
LINK_IDS = {"lin": 0, "square": 1, "cbrt": 2, "sin": 3}
PROPENSITY_LOW, PROPENSITY_HIGH = 0.01, 0.99
TRUTH_CHUNK = 200_000
FAILED_CELL_FRACTION = 0.05


def link_function(link: str) -> Callable:
    try:
        return LINKS[link]
    except KeyError:
        raise ConfigError(f"unknown link {link!r}; choose from {sorted(LINKS)}") from None


@dataclass(frozen=True)
class SimConfig:
    """Settings for one simulated design.

    ``beta`` is ``None`` for a fresh ``beta`` per replicate, or a fixed
    vector of length ``d``.
    """

    n: int = 900
    d: int = 12
    link: str = "lin"
    N: int = 100
    seed: int = 0
    ground_truth_draws: int = 1_000_000
    beta: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.n < 30:
            raise ConfigError("n must be at least 30")
        if self.d < 2:
            raise ConfigError("d must be at least 2")
        if self.N < 1:
            raise ConfigError("N must be at least 1")
        if self.ground_truth_draws < 100_000:
            raise ConfigError("ground_truth_draws must be at least 1e5")
        link_function(self.link)
        if self.beta is not None:
            object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
            if len(self.beta) != self.d:
                raise DimensionMismatch(f"fixed beta has length {len(self.beta)}, expected d={self.d}")

    @property
    def beta_mode(self) -> str:
        return "random" if self.beta is None else "fixed"


def sample_beta(d: int, mode: Union[str, Sequence[float]], rng: np.random.Generator) -> np.ndarray:
    """``(1, b)`` with ``b ~ N(0, I / (d - 1))`` in random mode, else the
    supplied vector unchanged."""
    if d < 2:
        raise ConfigError("d must be at least 2")
    if isinstance(mode, str):
        if mode != "random":
            raise ConfigError(f"unknown beta mode {mode!r}")
        return np.concatenate([[1.0], rng.normal(0.0, math.sqrt(1.0 / (d - 1)), size=d - 1)])
    beta = np.asarray(mode, dtype=float)
    if beta.shape != (d,):
        raise DimensionMismatch(f"fixed beta has shape {beta.shape}, expected ({d},)")
    return beta.copy()


def true_propensity(W: np.ndarray) -> np.ndarray:
    return PROPENSITY_LOW + (PROPENSITY_HIGH - PROPENSITY_LOW) * (W[:, 0] > 0.5)


def sample_dataset(n: int, beta: np.ndarray, link: str, rng: np.random.Generator) -> ObservationTable:
    h = link_function(link)
    d = beta.shape[0]
    W = rng.uniform(size=(n, d))
    T = (rng.uniform(size=n) < true_propensity(W)).astype(np.int64)
    Y = h(T, W @ beta) + rng.normal(size=n)
    return ObservationTable.from_arrays(T, W, Y, labels=("0", "1"))


def ground_truth_mu1(link: str, beta: np.ndarray, draws: int, rng: np.random.Generator,
                     chunk: int = TRUTH_CHUNK) -> Tuple[float, float]:
    """Monte Carlo mean of ``h(1, W^T beta)`` and its standard error."""
    if draws < 100_000:
        raise ConfigError("draws must be at least 1e5")
    h = link_function(link)
    d = beta.shape[0]
    sums, squares = [], []
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        vals = h(1, rng.uniform(size=(m, d)) @ beta)
        sums.append(math.fsum(vals))
        squares.append(math.fsum(vals * vals))
        done += m
    mean = math.fsum(sums) / draws
    var = max(math.fsum(squares) / draws - mean * mean, 0.0) * draws / (draws - 1)
    return mean, math.sqrt(var / draws)


def replicate_streams(seed: int, cell: Tuple[int, ...], r: int):
    """Independent generators for ``beta``, data and truth plus a fit seed,
    keyed on ``(seed, cell, r)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(c) for c in cell) + (int(r),))
    beta_ss, data_ss, truth_ss, fit_ss = ss.spawn(4)
    fit_seed = int(fit_ss.generate_state(1)[0] & 0x7FFFFFFF)
    return (np.random.default_rng(beta_ss), np.random.default_rng(data_ss),
            np.random.default_rng(truth_ss), fit_seed)


@dataclass
class ReplicateResult:
    estimates: Dict[Tuple[str, str], float]
    truth: float
    truth_se: float
    beta: np.ndarray
    seed_used: int
    failed: Tuple = ()


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=threads, backend="loky")(delayed(fn)(x) for x in items)


@dataclass(frozen=True)
class RmseGrid:
    ns: Tuple[int, ...] = (300, 900, 2700)
    links: Tuple[str, ...] = ("lin", "square", "cbrt", "sin")
    methods: Tuple[str, ...] = ("reg-ols", "aipw-ols", "dope-ols", "reg-nn", "aipw-nn", "dope-idx", "dope-bcl")
    modes: Tuple[str, ...] = ("stratified",)

    def __post_init__(self):
        if not (self.ns and self.links and self.methods and self.modes):
            raise ConfigError("grid must be nonempty in every dimension")
        for link in self.links:
            link_function(link)
        validate_methods(self.methods)
        for m in self.modes:
            if m not in ("stratified", "joint"):
                raise ConfigError(f"unknown regression mode {m!r}")


@dataclass(frozen=True)
class RmseRow:
    method: str
    link: str
    n: int
    regression_mode: str
    sqrt_n_rmse: float
    clt_halfwidth: float
    n_replicates: int
    flagged: bool


def rmse_summary(errors: np.ndarray, n: int, level: float = 0.95) -> Tuple[float, float]:
    """``sqrt(n) * RMSE`` and the delta-method CLT half-width built from the
    replicate squared errors."""
    sq = np.asarray(errors, dtype=float) ** 2
    N = sq.size
    mse = float(np.mean(sq))
    value = math.sqrt(n * mse)
    if N < 2 or mse == 0.0:
        return value, 0.0
    se_mse = float(np.std(sq, ddof=1)) / math.sqrt(N)
    return value, normal_quantile(level) * math.sqrt(n) * se_mse / (2.0 * math.sqrt(mse))


def _guarded_methods(table, methods, settings, seed):
    """All methods from shared fits; on failure, retry one at a time so a
    single failing method is recorded as NaN without losing the others."""
    try:
        res = compute_methods(table, methods, 1, settings, seed)
        return {m: res[m].value for m in methods}, ()
    except DopeError:
        values, bad = {}, []
        for m in methods:
            try:
                values[m] = compute_methods(table, [m], 1, settings, seed)[m].value
            except DopeError:
                values[m] = float("nan")
                bad.append(m)
        return values, tuple(bad)


def _rmse_replicate(task):
    cfg, grid, network, clip, cell, r = task
    n, link = cell[0], cfg.link
    beta_rng, data_rng, truth_rng, fit_seed = replicate_streams(cfg.seed, cell, r)
    with threadpool_limits(1):
        beta = sample_beta(cfg.d, "random" if cfg.beta is None else cfg.beta, beta_rng)
        table = sample_dataset(n, beta, link, data_rng)
        truth, truth_se = ground_truth_mu1(link, beta, cfg.ground_truth_draws, truth_rng)
        estimates, failed = {}, []
        plain = [m for m in grid.methods if m in MODE_FREE]
        for mode in grid.modes:
            settings = MethodSettings.for_mode(mode, network, clip)
            wanted = [m for m in grid.methods if m not in MODE_FREE]
            if mode == grid.modes[0]:
                wanted = plain + wanted
            values, bad = _guarded_methods(table, wanted, settings, fit_seed)
            for m in wanted:
                key = (m, "none" if m in MODE_FREE else mode)
                estimates[key] = values[m]
                if m in bad:
                    failed.append(key)
    return ReplicateResult(estimates, truth, truth_se, beta, fit_seed, tuple(failed))


def run_rmse_experiment(grid: RmseGrid, cfg: SimConfig, network: Optional[TrainConfig] = None,
                        clip=None, threads: int = 1, progress: Optional[Callable] = None):
    """Replicate every ``(n, link)`` cell ``cfg.N`` times and summarise.

    Replicate ``r`` of cell ``(n, link)`` draws all randomness from a seed
    sequence keyed on ``(cfg.seed, n, link id, r)``; both regression modes
    are applied to the same dataset.  Returns ``(rows, replicates)``.
    """
    from .estimators import ClipRange

    network = network or TrainConfig()
    clip = clip or ClipRange()
    rows, reps = [], {}
    for n in grid.ns:
        for link in grid.links:
            cell_cfg = SimConfig(n, cfg.d, link, cfg.N, cfg.seed, cfg.ground_truth_draws, cfg.beta)
            cell = (n, LINK_IDS[link])
            tasks = [(cell_cfg, grid, network, clip, cell, r) for r in range(cfg.N)]
            results = _map(_rmse_replicate, tasks, threads)
            reps[(n, link)] = results
            keys = list(results[0].estimates)
            for key in keys:
                err = np.array([res.estimates[key] - res.truth for res in results])
                ok = np.isfinite(err)
                frac_failed = 1.0 - ok.mean()
                if ok.sum() == 0:
                    value, half = float("nan"), float("nan")
                else:
                    value, half = rmse_summary(err[ok], n)
                rows.append(RmseRow(key[0], link, n, key[1], value, half, int(ok.sum()),
                                    bool(frac_failed > FAILED_CELL_FRACTION)))
            if progress is not None:
                progress(n, link)
    return rows, reps


@dataclass(frozen=True)
class CoverageRow:
    method: str
    interval_kind: str
    coverage: float
    median_length: float
    n_replicates: int


@dataclass
class CoverageReplicate:
    truth: float
    estimates: Dict[str, float]
    intervals: Dict[Tuple[str, str], Interval]
    bootstrap_failures: int = 0


def _coverage_replicate(task):
    cfg, methods, settings, B, level, r = task
    cell = (cfg.n, LINK_IDS[cfg.link])
    _, data_rng, _, fit_seed = replicate_streams(cfg.seed, cell, r)
    beta = np.asarray(cfg.beta, dtype=float)
    with threadpool_limits(1):
        table = sample_dataset(cfg.n, beta, cfg.link, data_rng)
        point = compute_methods(table, methods, 1, settings, fit_seed)

        def closure(resampled, child_seed):
            res = compute_methods(resampled, methods, 1, settings, child_seed)
            return np.array([res[m].value for m in methods])

        boot = bootstrap(table, closure, B, fit_seed)
    intervals = {}
    z = normal_quantile(level)
    for k, m in enumerate(methods):
        est = point[m].value
        if point[m].se is not None:
            intervals[(m, "wald_asymptotic")] = Interval(est - z * point[m].se, est + z * point[m].se,
                                                         level, "wald_asymptotic")
        intervals[(m, "bootstrap_normal")] = bootstrap_interval(est, boot, level, "bootstrap_normal", k)
    return CoverageReplicate(float("nan"), {m: point[m].value for m in methods}, intervals, len(boot.failed))


def run_coverage_experiment(cfg: SimConfig, B: int = 200, level: float = 0.95,
                            methods: Sequence[str] = ("reg-nn", "aipw-nn", "dope-idx", "dope-bcl"),
                            network: Optional[TrainConfig] = None, mode: str = "joint", clip=None,
                            threads: int = 1, progress: Optional[Callable] = None):
    """Interval coverage for ``mu_1`` under a fixed ``beta``.

    Each replicate yields a Wald interval from the influence-function SE and
    a normal interval from the bootstrap SE (``B`` full refits).  Returns
    ``(rows, replicates, truth, truth_se)``.
    """
    if cfg.beta is None:
        raise ConfigError("the coverage experiment needs a fixed beta")
    methods = validate_methods(methods)
    settings = MethodSettings.for_mode(mode, network, clip)
    beta = np.asarray(cfg.beta, dtype=float)
    truth_rng = np.random.default_rng(np.random.SeedSequence(int(cfg.seed), spawn_key=(LINK_IDS[cfg.link], 0xC0)))
    truth, truth_se = ground_truth_mu1(cfg.link, beta, cfg.ground_truth_draws, truth_rng)
    tasks = [(cfg, methods, settings, B, level, r) for r in range(cfg.N)]
    if threads <= 1 and progress is not None:
        reps = []
        for task in tasks:
            reps.append(_coverage_replicate(task))
            progress(len(reps), cfg.N)
    else:
        reps = _map(_coverage_replicate, tasks, threads)
    for rep in reps:
        rep.truth = truth
    rows = []
    for m in methods:
        for kind in ("wald_asymptotic", "bootstrap_normal"):
            ivs = [rep.intervals[(m, kind)] for rep in reps if (m, kind) in rep.intervals]
            if not ivs:
                continue
            cover = float(np.mean([iv.covers(truth) for iv in ivs]))
            rows.append(CoverageRow(m, kind, cover, float(np.median([iv.length for iv in ivs])), len(ivs)))
    return rows, reps, truth, truth_se


def coverage_from_intervals(intervals: Sequence[Interval], truth: float) -> Tuple[float, float]:
    """Fraction of intervals containing ``truth`` and their median length."""
    if not intervals:
        raise ValueError("no intervals")
    return (float(np.mean([iv.covers(truth) for iv in intervals])),
            float(np.median([iv.length for iv in intervals])))


PAPER_RMSE_GRID = RmseGrid(
    ns=(300, 900, 2700),
    links=("lin", "square", "cbrt", "sin"),
    methods=("naive", "ipw", "reg-ols", "aipw-ols", "dope-ols", "reg-nn", "aipw-nn", "dope-idx", "dope-bcl"),
    modes=("stratified", "joint"),
)
PAPER_RMSE_N = 900
COVERAGE_BETA = (1.0, -2.0, 3.0) + (0.0,) * 9
