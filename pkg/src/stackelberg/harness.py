"""Outer learning loop, regret bookkeeping and experiment I/O."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .equilibrium import (
    DistanceToOracle,
    HarmonicStep,
    NotConverged,
    StoppingRule,
    approx_ne,
    certify_epsilon_nash,
    ne_oracle,
    ne_oracle_batch,
    stopping_rule_from_dict,
)
from .gp_core import (
    SQUARED_EXPONENTIAL,
    GpState,
    HyperBounds,
    KernelSpec,
    append_observation,
    fit_hyperparameters,
)
from .leader_learner import (
    AcquisitionConfig,
    BetaSchedule,
    Fixed,
    beta_schedule_from_dict,
    choose_next_price,
    price_grid,
)
from .ridehail_game import AllFleetsIdle, GameParams, RideHailGame, leader_cost, reference_params

logger = logging.getLogger(__name__)

# Independent random streams derived from one root seed.  Each consumer gets
# SeedSequence(seed, spawn_key=(id,)); new consumers take new ids, so adding
# one never shifts the draws of another.
STREAMS = {"warmup": 0, "hyperfit": 1}


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STREAMS[name],)))


@dataclass(frozen=True)
class ExperimentConfig:
    game: GameParams
    T: int = 25
    n_warm: int = 5
    inner_stop: StoppingRule = DistanceToOracle(1e-6)
    inner_step: HarmonicStep = HarmonicStep()
    beta: BetaSchedule = Fixed(0.2)
    acquisition: AcquisitionConfig = AcquisitionConfig()
    kernel_kind: str = SQUARED_EXPONENTIAL
    refit_after_warmup: bool = True
    seed: int = 0
    regret_oracle_grid: int = 200
    # GP hyperparameters used until (or instead of) the warm-up refit;
    # the lengthscale is relative to the price-box width
    prior_lengthscale: float = 0.25
    prior_signal_variance: float = 1.0
    prior_noise_sd: float = 0.01
    standardize: bool = False

    def __post_init__(self):
        if not self.T >= self.n_warm >= 0:
            raise ValueError("need T >= n_warm >= 0")
        if self.T < 1 or self.regret_oracle_grid < 2:
            raise ValueError("T must be positive and the regret grid at least 2 points")

    def to_dict(self) -> dict:
        return {
            "game": self.game.to_dict(),
            "T": self.T,
            "n_warm": self.n_warm,
            "inner_stop": self.inner_stop.to_dict(),
            "inner_step": self.inner_step.to_dict(),
            "beta": self.beta.to_dict(),
            "acquisition": self.acquisition.to_dict(),
            "kernel_kind": self.kernel_kind,
            "refit_after_warmup": self.refit_after_warmup,
            "seed": self.seed,
            "regret_oracle_grid": self.regret_oracle_grid,
            "prior_lengthscale": self.prior_lengthscale,
            "prior_signal_variance": self.prior_signal_variance,
            "prior_noise_sd": self.prior_noise_sd,
            "standardize": self.standardize,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        defaults = cls(game=GameParams.from_dict(data["game"]))
        kwargs = {"game": defaults.game}
        parsers = {
            "inner_stop": stopping_rule_from_dict,
            "inner_step": HarmonicStep.from_dict,
            "beta": beta_schedule_from_dict,
            "acquisition": AcquisitionConfig.from_dict,
        }
        for key, value in data.items():
            if key == "game":
                continue
            if key not in defaults.to_dict():
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = parsers[key](value) if key in parsers else value
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def reference_config(**overrides) -> ExperimentConfig:
    """The two-district pricing experiment: 25 rounds, 5 random warm-up rounds."""
    cfg = ExperimentConfig(
        game=reference_params(),
        T=25,
        n_warm=5,
        inner_stop=DistanceToOracle(1e-6),
        inner_step=HarmonicStep(5.0, 10.0),
        beta=Fixed(0.2),
        acquisition=AcquisitionConfig(epsilon=0.0, grid_points_per_dim=50, refine_starts=5, refine_tol=1e-6),
        kernel_kind=SQUARED_EXPONENTIAL,
        refit_after_warmup=True,
        seed=0,
        regret_oracle_grid=200,
    )
    return replace(cfg, **overrides)


@dataclass
class RoundRecord:
    t: int
    pi_t: np.ndarray
    x_t: np.ndarray
    realized_cost: float
    oracle_cost: float
    inner_iterations: int
    inner_residual: float
    instantaneous_regret: float
    cumulative_regret: float
    average_regret: float


# -- regret baseline ----------------------------------------------------------

_BASELINE_CACHE: dict[tuple, tuple[float, np.ndarray]] = {}


def _min_cost_on(game: RideHailGame, pis: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    x, _, _ = ne_oracle_batch(game, pis)
    costs = leader_cost(x, game.params)
    k = int(np.argmin(costs))
    return float(costs[k]), pis[k].copy(), costs


def regret_baseline(params: GameParams, grid_points: int = 200, refine: bool = True) -> tuple[float, np.ndarray]:
    """Smallest equilibrium cost over a uniform price grid, and its argmin.

    With ``refine`` a second, finer grid spanning one coarse cell either
    side of the incumbent is searched.  Results are memoised per
    ``(params, grid_points, refine)``.

    Raises
    ------
    OracleNotConverged
        If the equilibrium cannot be computed at some grid point.
    """
    key = (params, grid_points, refine)
    if key in _BASELINE_CACHE:
        value, arg = _BASELINE_CACHE[key]
        return value, arg.copy()
    game = RideHailGame(params)
    bounds = params.price_bounds()
    grid = price_grid(bounds, grid_points)
    best, arg, _ = _min_cost_on(game, grid)
    if refine:
        cell = (bounds[:, 1] - bounds[:, 0]) / (grid_points - 1)
        local = np.column_stack([np.maximum(arg - cell, bounds[:, 0]), np.minimum(arg + cell, bounds[:, 1])])
        fine_best, fine_arg, _ = _min_cost_on(game, price_grid(local, 21))
        if fine_best < best:
            best, arg = fine_best, fine_arg
    _BASELINE_CACHE[key] = (best, arg)
    logger.info("regret baseline %.3g at pi=%s", best, arg)
    return best, arg.copy()


# -- outer loop -----------------------------------------------------------------


class _CostScaler:
    """Affine map applied to costs before they reach the GP (identity by default)."""

    def __init__(self):
        self.shift, self.scale = 0.0, 1.0

    def fit(self, y):
        self.shift = float(np.mean(y))
        sd = float(np.std(y))
        self.scale = sd if sd > 0 else 1.0

    def __call__(self, y):
        return (np.asarray(y, dtype=float) - self.shift) / self.scale


def run_experiment(config: ExperimentConfig, baseline: float | None = None) -> list[RoundRecord]:
    """Run the bilevel learning loop and log every round.

    Rounds ``1..max(n_warm, 1)`` post uniformly random prices (the first
    price is random even without warm-up).  After round ``n_warm`` the
    GP hyperparameters are optionally refitted on the warm-up data.  Every
    later price minimises the LCB surrogate of the current GP.  The inner
    loop's iterate is accepted whether or not its stopping rule was met.
    """
    params = config.game
    game = RideHailGame(params)
    bounds = params.price_bounds()
    width = bounds[:, 1] - bounds[:, 0]
    if baseline is None:
        baseline, _ = regret_baseline(params, config.regret_oracle_grid)

    warm_rng = stream(config.seed, "warmup")
    fit_rng = stream(config.seed, "hyperfit")
    kernel = KernelSpec(config.kernel_kind, tuple(config.prior_lengthscale * width), config.prior_signal_variance)
    gp = GpState.create(params.d, kernel, config.prior_noise_sd)
    scaler = _CostScaler()
    raw_costs: list[float] = []

    records: list[RoundRecord] = []
    cumulative = 0.0
    n_random = max(config.n_warm, 1)
    for t in range(1, config.T + 1):
        if t <= n_random:
            pi = warm_rng.uniform(bounds[:, 0], bounds[:, 1])
        else:
            pi = choose_next_price(gp, config.beta, config.acquisition, t - 1, bounds)

        oracle = ne_oracle(game, pi)
        stop = config.inner_stop
        if isinstance(stop, DistanceToOracle):
            stop = stop.with_target(oracle.x_star)
        try:
            inner = approx_ne(game, pi, stop, config.inner_step)
        except NotConverged as err:
            logger.warning("round %d: %s; accepting the last iterate", t, err)
            inner = err.result
        try:
            realized = float(leader_cost(inner.x_star, params))
        except AllFleetsIdle as err:
            raise AllFleetsIdle(f"round {t}, pi={pi.tolist()}: {err}") from err
        oracle_cost = float(leader_cost(oracle.x_star, params))

        raw_costs.append(realized)
        gp = append_observation(gp, pi, float(scaler(realized)))
        if config.refit_after_warmup and t == config.n_warm and t >= 2:
            if config.standardize:
                scaler.fit(raw_costs)
            fit = fit_hyperparameters(
                gp.inputs,
                scaler(raw_costs),
                config.kernel_kind,
                HyperBounds(scale=float(np.max(width))),
                rng=fit_rng,
            )
            gp = GpState.create(params.d, fit.kernel, fit.noise_sd, gp.inputs, scaler(raw_costs))

        cumulative += realized - baseline
        records.append(
            RoundRecord(
                t=t,
                pi_t=np.asarray(pi, dtype=float),
                x_t=np.asarray(inner.x_star, dtype=float),
                realized_cost=realized,
                oracle_cost=oracle_cost,
                inner_iterations=int(inner.iterations),
                inner_residual=float(inner.residual),
                instantaneous_regret=realized - baseline,
                cumulative_regret=cumulative,
                average_regret=cumulative / t,
            )
        )
        logger.debug("round %d pi=%s J=%.4g R/t=%.4g", t, np.round(pi, 4), realized, cumulative / t)
    return records


# -- certification --------------------------------------------------------------


def best_round(records) -> RoundRecord | None:
    if not records:
        return None
    return min(records, key=lambda r: (r.realized_cost, r.t))


def certify_stackelberg(records, params: GameParams, epsilon_target: float, baseline: float | None = None) -> dict:
    """Check the lowest-cost round for the approximate-Stackelberg conditions.

    The leader gap compares that round's realized cost with the regret
    baseline; the follower gap is the eps-Nash slack of the allocation the
    followers actually played.
    """
    rec = best_round(records)
    if rec is None:
        raise ValueError("no rounds to certify")
    if baseline is None:
        baseline, _ = regret_baseline(params)
    game = RideHailGame(params)
    leader_gap = rec.realized_cost - baseline
    follower_gap = certify_epsilon_nash(game, rec.x_t, rec.pi_t)
    return {
        "t_star": rec.t,
        "pi": rec.pi_t.tolist(),
        "realized_cost": rec.realized_cost,
        "baseline": baseline,
        "leader_gap": leader_gap,
        "follower_gap": follower_gap,
        "epsilon_target": epsilon_target,
        "certified": bool(max(leader_gap, follower_gap) <= epsilon_target),
    }


def replay_allocation(config: ExperimentConfig, pi) -> np.ndarray:
    """Recompute the followers' play at ``pi`` under the config's inner loop.

    The inner loop is deterministic, so this reproduces ``x_t`` exactly from
    a logged price.
    """
    game = RideHailGame(config.game)
    pi = np.asarray(pi, dtype=float)
    stop = config.inner_stop
    if isinstance(stop, DistanceToOracle):
        stop = stop.with_target(ne_oracle(game, pi).x_star)
    try:
        return approx_ne(game, pi, stop, config.inner_step).x_star
    except NotConverged as err:
        return err.result.x_star


# -- files ------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def rounds_header(d: int) -> list[str]:
    return (
        ["t"]
        + [f"pi_{m + 1}" for m in range(d)]
        + ["J_realized", "J_oracle", "inner_iters", "inner_residual", "R_t", "avg_regret"]
    )


def write_rounds_csv(records, path, d: int) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(rounds_header(d))
        for r in records:
            writer.writerow(
                [r.t]
                + [_fmt(p) for p in r.pi_t]
                + [
                    _fmt(r.realized_cost),
                    _fmt(r.oracle_cost),
                    r.inner_iterations,
                    _fmt(r.inner_residual),
                    _fmt(r.cumulative_regret),
                    _fmt(r.average_regret),
                ]
            )


def read_rounds_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        pis = [float(row[k]) for k in row if k.startswith("pi_")]
        out.append(
            {
                "t": int(row["t"]),
                "pi": np.array(pis),
                "J_realized": float(row["J_realized"]),
                "J_oracle": float(row["J_oracle"]),
                "inner_iters": int(row["inner_iters"]),
                "inner_residual": float(row["inner_residual"]),
                "R_t": float(row["R_t"]),
                "avg_regret": float(row["avg_regret"]),
            }
        )
    return out


def summarize(records, report: dict | None = None) -> dict:
    rec = best_round(records)
    return {
        "best_round": None if rec is None else rec.t,
        "best_prices": None if rec is None else rec.pi_t.tolist(),
        "best_realized_cost": None if rec is None else rec.realized_cost,
        "final_average_regret": None if not records else records[-1].average_regret,
        "rounds": len(records),
        "certificate": report,
    }


def emit_outputs(records, path, config: ExperimentConfig | None = None, report: dict | None = None, d: int | None = None):
    """Write ``rounds.csv``, ``summary.json`` and (given a config) ``config.json``."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if d is None:
            d = config.game.d if config is not None else (len(records[0].pi_t) if records else 0)
        write_rounds_csv(records, out / "rounds.csv", d)
        (out / "summary.json").write_text(json.dumps(summarize(records, report), indent=2) + "\n", encoding="utf-8")
        if config is not None:
            (out / "config.json").write_text(config.to_json() + "\n", encoding="utf-8")
    except OSError as err:
        raise OSError(f"could not write experiment outputs to {out}: {err}") from err
    return out


# -- sweeps -----------------------------------------------------------------------


def _sweep_job(args):
    config, out_dir = args
    records = run_experiment(config)
    emit_outputs(records, out_dir, config)
    return config.inner_stop, config.seed, records


def run_sweep(config: ExperimentConfig, inner_tols, n_seeds: int, out, jobs: int = 1) -> dict:
    """One run per (inner tolerance, seed); seeds are ``config.seed + k``.

    Each run lands in ``out/eps_<tol>/seed_<s>/``; all rounds are merged
    into ``out/sweep_rounds.csv`` and per-tolerance medians into
    ``out/sweep_summary.json``.
    """
    out = Path(out)
    # compute the shared baseline once in this process before fanning out
    regret_baseline(config.game, config.regret_oracle_grid)
    tasks = []
    for tol in inner_tols:
        for k in range(n_seeds):
            cfg = replace(config, inner_stop=DistanceToOracle(float(tol)), seed=config.seed + k)
            tasks.append((cfg, out / f"eps_{tol:g}" / f"seed_{cfg.seed}"))
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_job, tasks))
    else:
        results = [_sweep_job(task) for task in tasks]

    d = config.game.d
    summary = {}
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep_rounds.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["eps", "seed"] + rounds_header(d))
        for stop, seed, records in results:
            for r in records:
                writer.writerow(
                    [_fmt(stop.eps), seed, r.t]
                    + [_fmt(p) for p in r.pi_t]
                    + [_fmt(r.realized_cost), _fmt(r.oracle_cost), r.inner_iterations, _fmt(r.inner_residual),
                       _fmt(r.cumulative_regret), _fmt(r.average_regret)]
                )
    for tol in inner_tols:
        runs = [recs for stop, _, recs in results if stop.eps == float(tol)]
        best = [best_round(recs) for recs in runs]
        summary[f"{tol:g}"] = {
            "median_best_cost": float(np.median([b.realized_cost for b in best])),
            "median_best_prices": np.median([b.pi_t for b in best], axis=0).tolist(),
            "median_final_average_regret": float(np.median([recs[-1].average_regret for recs in runs])),
            "runs": len(runs),
        }
    (out / "sweep_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary
