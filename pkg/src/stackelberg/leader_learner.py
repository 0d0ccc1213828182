"""Leader-side acquisition: confidence-width schedules and LCB minimisation.

The leader only ever sees a :class:`~stackelberg.gp_core.GpState` built
from its own prices and realized costs; nothing here touches follower
allocations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.optimize import minimize

from .gp_core import GpState, greedy_info_gain, posterior_batch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Fixed:
    value: float

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("beta must be non-negative")

    def to_dict(self):
        return {"kind": "fixed", "value": self.value}


@dataclass(frozen=True)
class Theoretical:
    """Confidence width that grows with the information gathered so far.

    ``B`` bounds the cost's RKHS norm, ``L_J`` is the cost's Lipschitz
    constant in the follower profile and ``M_diam`` the diameter of the
    followers' joint feasible set.
    """

    B: float
    L_J: float
    M_diam: float
    delta: float

    def __post_init__(self):
        if min(self.B, self.L_J, self.M_diam) <= 0 or not 0 < self.delta < 1:
            raise ValueError("need positive B, L_J, M_diam and delta in (0, 1)")

    def to_dict(self):
        return {"kind": "theoretical", "B": self.B, "L_J": self.L_J, "M_diam": self.M_diam, "delta": self.delta}


BetaSchedule = Union[Fixed, Theoretical]


def beta_schedule_from_dict(data: dict) -> BetaSchedule:
    if data["kind"] == "fixed":
        return Fixed(float(data["value"]))
    if data["kind"] == "theoretical":
        return Theoretical(float(data["B"]), float(data["L_J"]), float(data["M_diam"]), float(data["delta"]))
    raise ValueError(f"unknown beta schedule {data['kind']!r}")


def beta(schedule: BetaSchedule, t: int, gp: GpState) -> float:
    """Confidence width for round ``t``; ``gp`` holds the first ``t - 1`` observations.

    The theoretical schedule needs the maximum information gain, which is
    replaced by the log-det gain on the inputs actually observed.  That is
    a lower bound, so the resulting width is optimistic.
    """
    if t < 1:
        raise ValueError("rounds start at 1")
    if isinstance(schedule, Fixed):
        return schedule.value
    if gp.kernel.signal_variance > 1:
        raise ValueError("theoretical beta assumes k(pi, pi) <= 1; signal_variance must be <= 1")
    gain = greedy_info_gain(gp)
    scale = 2 * schedule.L_J * schedule.M_diam / gp.noise_sd**2
    return schedule.B + scale * math.sqrt(2 * (gain + 1 + math.log(2 / schedule.delta)))


@dataclass(frozen=True)
class AcquisitionConfig:
    epsilon: float = 0.0
    grid_points_per_dim: int = 50
    refine_starts: int = 5
    refine_tol: float = 1e-6

    def __post_init__(self):
        if self.epsilon < 0 or self.grid_points_per_dim < 1 or self.refine_starts < 1 or self.refine_tol <= 0:
            raise ValueError("invalid acquisition config")

    def to_dict(self):
        return {
            "epsilon": self.epsilon,
            "grid_points_per_dim": self.grid_points_per_dim,
            "refine_starts": self.refine_starts,
            "refine_tol": self.refine_tol,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            float(data["epsilon"]),
            int(data["grid_points_per_dim"]),
            int(data["refine_starts"]),
            float(data["refine_tol"]),
        )


def exploration_weight(gp: GpState, beta_t: float, epsilon: float, t: int) -> float:
    return beta_t + epsilon * math.sqrt(t) / gp.noise_sd


def surrogate_lcb_batch(gp: GpState, X, beta_t: float, epsilon: float, t: int) -> np.ndarray:
    mean, var = posterior_batch(gp, X)
    return mean - exploration_weight(gp, beta_t, epsilon, t) * np.sqrt(var)


def surrogate_lcb(gp: GpState, pi, beta_t: float, epsilon: float, t: int) -> float:
    """Optimistic cost estimate ``mean - (beta_t + eps sqrt(t) / sigma) * sd``."""
    return float(surrogate_lcb_batch(gp, np.asarray(pi, dtype=float)[None, :], beta_t, epsilon, t)[0])


def price_grid(bounds, points_per_dim: int) -> np.ndarray:
    """Uniform tensor grid in lexicographic order (first coordinate slowest)."""
    bounds = np.asarray(bounds, dtype=float)
    axes = [np.linspace(lo, hi, points_per_dim) for lo, hi in bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def choose_next_price(
    gp: GpState,
    schedule: BetaSchedule,
    config: AcquisitionConfig,
    t: int,
    bounds,
) -> np.ndarray:
    """Approximate ``argmin`` of the LCB surrogate over the price box.

    Grid search, then bounded Powell refinement from the best
    ``refine_starts`` grid points.  A refined point replaces the incumbent
    only if strictly better, so exact ties resolve to the first grid point
    in lexicographic order.  No randomness is involved.
    """
    bounds = np.asarray(bounds, dtype=float)
    beta_t = beta(schedule, t, gp)
    grid = price_grid(bounds, config.grid_points_per_dim)
    values = surrogate_lcb_batch(gp, grid, beta_t, config.epsilon, t)
    order = np.argsort(values, kind="stable")
    best_x, best_v = grid[order[0]].copy(), float(values[order[0]])

    def objective(p):
        return float(surrogate_lcb_batch(gp, np.clip(p, bounds[:, 0], bounds[:, 1])[None, :], beta_t, config.epsilon, t)[0])

    options = {"xtol": config.refine_tol, "ftol": 1e-12}
    for idx in order[: config.refine_starts]:
        try:
            res = minimize(objective, grid[idx], method="Powell", bounds=bounds, options=options)
        except ValueError:
            # scipy's bounded line search can fail on a degenerate direction;
            # the objective clips to the box, so an unbounded search is equivalent
            logger.debug("bounded Powell failed from %s; retrying unbounded", grid[idx])
            res = minimize(objective, grid[idx], method="Powell", options=options)
        p = np.clip(res.x, bounds[:, 0], bounds[:, 1])
        v = objective(p)
        if v < best_v:
            best_x, best_v = p, v
    return best_x
