"""Electric ride-hailing charging-price game.

``N`` companies split fleets of sizes ``M`` over ``d`` districts.  Company
``i`` earns a share of each district's revenue potential ``W_m`` that grows
with its own allocation and shrinks with everybody else's, and pays the
posted charging price ``pi_m`` per vehicle.  The regulator (leader) wants
the aggregate fleet distribution to match a target ``xi_star``.

All array-valued functions broadcast over leading batch dimensions: a
joint allocation has shape ``(..., N, d)`` and a price vector ``(..., d)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDLE_EPS = 1e-9


class AllFleetsIdle(ValueError):
    """Raised when the aggregate allocation is (numerically) zero."""


@dataclass(frozen=True)
class GameParams:
    """Parameters of one ride-hailing game instance.

    ``x_max`` may be a scalar or a length-``d`` vector; ``None`` means the
    box is never tighter than the fleet budget (``x_max = M_i`` per company).
    """

    N: int
    d: int
    W: tuple[float, ...]
    Delta: tuple[float, ...]
    M: tuple[float, ...]
    x_max: float | tuple[float, ...] | None = None
    pi_min: float = 0.1
    pi_max: float = 5.0
    xi_star: tuple[float, ...] | None = None

    def __post_init__(self):
        # normalise sequences to tuples so instances stay hashable
        for name in ("W", "Delta", "M", "xi_star"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, tuple(float(v) for v in np.ravel(val)))
        if self.x_max is not None and np.ndim(self.x_max) > 0:
            object.__setattr__(self, "x_max", tuple(float(v) for v in self.x_max))
        elif self.x_max is not None:
            object.__setattr__(self, "x_max", float(self.x_max))
        if self.xi_star is None:
            object.__setattr__(self, "xi_star", tuple([1.0 / self.d] * self.d))
        self.validate()

    def validate(self):
        if self.N < 1 or self.d < 1:
            raise ValueError("N and d must be positive")
        if len(self.W) != self.d or len(self.Delta) != self.d or len(self.xi_star) != self.d:
            raise ValueError("W, Delta and xi_star must have length d")
        if len(self.M) != self.N:
            raise ValueError("M must have length N")
        if min(self.W) <= 0 or min(self.Delta) <= 0 or min(self.M) <= 0:
            raise ValueError("W, Delta and M must be strictly positive")
        if not 0 <= self.pi_min < self.pi_max:
            raise ValueError("need 0 <= pi_min < pi_max")
        xi = np.asarray(self.xi_star)
        if np.any(xi < 0) or np.any(xi > 1) or abs(xi.sum() - 1.0) > 1e-9:
            raise ValueError("xi_star must lie on the probability simplex")
        if self.x_max is not None and np.any(np.asarray(self.x_max) <= 0):
            raise ValueError("x_max must be positive")

    # -- array views -------------------------------------------------------

    @property
    def W_arr(self) -> np.ndarray:
        return np.asarray(self.W)

    @property
    def Delta_arr(self) -> np.ndarray:
        return np.asarray(self.Delta)

    @property
    def M_arr(self) -> np.ndarray:
        return np.asarray(self.M)

    @property
    def xi_arr(self) -> np.ndarray:
        return np.asarray(self.xi_star)

    def cap(self) -> np.ndarray:
        """Per-company, per-district upper bounds, shape ``(N, d)``."""
        if self.x_max is None:
            return np.repeat(self.M_arr[:, None], self.d, axis=1)
        return np.broadcast_to(np.asarray(self.x_max, dtype=float), (self.N, self.d)).copy()

    def price_bounds(self) -> np.ndarray:
        """``(d, 2)`` array of ``[pi_min, pi_max]`` rows."""
        return np.tile([self.pi_min, self.pi_max], (self.d, 1)).astype(float)

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        x_max = self.x_max
        if isinstance(x_max, tuple):
            x_max = list(x_max)
        return {
            "N": self.N,
            "d": self.d,
            "W": list(self.W),
            "Delta": list(self.Delta),
            "M": list(self.M),
            "x_max": x_max,
            "pi_min": self.pi_min,
            "pi_max": self.pi_max,
            "xi_star": list(self.xi_star),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GameParams":
        keys = {"N", "d", "W", "Delta", "M", "x_max", "pi_min", "pi_max", "xi_star"}
        if set(data) != keys:
            raise ValueError(f"GameParams keys must be exactly {sorted(keys)}, got {sorted(data)}")
        return cls(
            N=int(data["N"]),
            d=int(data["d"]),
            W=data["W"],
            Delta=data["Delta"],
            M=data["M"],
            x_max=data["x_max"],
            pi_min=float(data["pi_min"]),
            pi_max=float(data["pi_max"]),
            xi_star=data["xi_star"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "GameParams":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "GameParams":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def reference_params() -> GameParams:
    """Two-district, three-company instance (outskirts, downtown)."""
    return GameParams(
        N=3,
        d=2,
        W=(30.0, 60.0),
        Delta=(0.1, 0.5),
        M=(2.0, 4.0, 6.0),
        x_max=None,
        pi_min=0.1,
        pi_max=5.0,
        xi_star=(0.5, 0.5),
    )


# -- payoffs ---------------------------------------------------------------


def utility(i: int, x, pi, params: GameParams):
    """Profit of company ``i``: market-share revenue minus charging cost."""
    x = np.asarray(x, dtype=float)
    pi = np.asarray(pi, dtype=float)
    S = x.sum(axis=-2)
    xi = x[..., i, :]
    share = params.W_arr * xi / (S + params.Delta_arr)
    return np.sum(share - xi * pi, axis=-1)


def utilities(x, pi, params: GameParams) -> np.ndarray:
    """All companies' profits at once, shape ``(..., N)``."""
    x = np.asarray(x, dtype=float)
    pi = np.asarray(pi, dtype=float)
    S = x.sum(axis=-2, keepdims=True)
    share = params.W_arr * x / (S + params.Delta_arr)
    return np.sum(share - x * pi[..., None, :], axis=-1)


def pseudogradient(x, pi, params: GameParams) -> np.ndarray:
    """Stacked negative own-gradients ``-dU_i/dx_i``, same shape as ``x``."""
    x = np.asarray(x, dtype=float)
    pi = np.asarray(pi, dtype=float)
    S = x.sum(axis=-2, keepdims=True)
    denom = S + params.Delta_arr
    return pi[..., None, :] - params.W_arr * (S - x + params.Delta_arr) / denom**2


# -- feasible set ----------------------------------------------------------


def project_capped_simplex(y, budget, cap) -> np.ndarray:
    """Euclidean projection onto ``{z : 0 <= z <= cap, sum(z) <= budget}``.

    Works row-wise on the last axis; ``budget`` broadcasts against
    ``y[..., 0]`` and ``cap`` against ``y``.

    The optimal point is ``clip(y - lam, 0, cap)`` where ``lam >= 0`` is
    the budget multiplier.  ``sum(clip(y - lam, 0, cap))`` is piecewise
    linear and non-increasing in ``lam`` with kinks at ``y`` and
    ``y - cap``, so ``lam`` is found exactly by locating the bracketing
    kinks and interpolating.
    """
    y = np.asarray(y, dtype=float)
    cap = np.broadcast_to(np.asarray(cap, dtype=float), y.shape)
    budget = np.broadcast_to(np.asarray(budget, dtype=float), y.shape[:-1])
    z = np.clip(y, 0.0, cap)
    over = z.sum(axis=-1) > budget
    if not np.any(over):
        return z

    kinks = np.sort(np.concatenate([y, y - cap], axis=-1), axis=-1)
    kinks = np.maximum(kinks, 0.0)
    # totals[..., k] = sum_m clip(y_m - kinks_k, 0, cap_m)
    totals = np.clip(y[..., None, :] - kinks[..., :, None], 0.0, cap[..., None, :]).sum(axis=-1)
    hi = np.argmax(totals <= budget[..., None], axis=-1)
    lo = np.maximum(hi - 1, 0)
    lam_lo = np.take_along_axis(kinks, lo[..., None], -1)[..., 0]
    lam_hi = np.take_along_axis(kinks, hi[..., None], -1)[..., 0]
    s_lo = np.take_along_axis(totals, lo[..., None], -1)[..., 0]
    s_hi = np.take_along_axis(totals, hi[..., None], -1)[..., 0]
    drop = s_lo - s_hi
    safe = np.where(drop > 0, drop, 1.0)
    lam = np.where(drop > 0, lam_lo + (s_lo - budget) * (lam_hi - lam_lo) / safe, lam_hi)
    projected = np.clip(y - lam[..., None], 0.0, cap)
    return np.where(over[..., None], projected, z)


def project_feasible(y, i: int, params: GameParams) -> np.ndarray:
    """Project a single company's allocation onto its feasible set."""
    return project_capped_simplex(y, params.M_arr[i], params.cap()[i])


def project_joint(x, params: GameParams) -> np.ndarray:
    """Project every block of a joint allocation ``(..., N, d)``."""
    return project_capped_simplex(x, params.M_arr, params.cap())


def is_feasible(x, params: GameParams, tol: float = 1e-12) -> bool:
    x = np.asarray(x, dtype=float)
    cap = params.cap()
    return bool(
        np.all(x >= -tol)
        and np.all(x <= cap + tol)
        and np.all(x.sum(axis=-1) <= params.M_arr + tol)
    )


# -- leader ----------------------------------------------------------------


def fleet_distribution(x) -> np.ndarray:
    """Aggregate fleet shares per district, shape ``(..., d)``."""
    agg = np.asarray(x, dtype=float).sum(axis=-2)
    total = agg.sum(axis=-1, keepdims=True)
    if np.any(total <= IDLE_EPS):
        raise AllFleetsIdle(f"total allocated fleet {np.min(total):.3g} <= {IDLE_EPS}")
    return agg / total


def leader_cost(x, params: GameParams):
    """Squared Euclidean gap between the achieved and target distributions."""
    gap = fleet_distribution(x) - params.xi_arr
    return np.sum(gap**2, axis=-1)


def distribution_gap_l1(x, params: GameParams):
    """L1 gap between achieved and target distributions (diagnostic only)."""
    gap = fleet_distribution(x) - params.xi_arr
    return np.sum(np.abs(gap), axis=-1)


class RideHailGame:
    """Adapter exposing a :class:`GameParams` instance to the equilibrium solvers."""

    def __init__(self, params: GameParams):
        self.params = params
        self.N = params.N
        self.d = params.d
        self._cap = params.cap()
        self._budget = params.M_arr

    def pseudogradient(self, x, pi):
        return pseudogradient(x, pi, self.params)

    def utility(self, i, x, pi):
        return utility(i, x, pi, self.params)

    def project(self, x):
        return project_capped_simplex(x, self._budget, self._cap)

    def project_block(self, y, i):
        return project_capped_simplex(y, self._budget[i], self._cap[i])

    def initial_point(self):
        x0 = np.repeat((self._budget / self.d)[:, None], self.d, axis=1)
        return np.minimum(x0, self._cap)

    def cost(self, x):
        return leader_cost(x, self.params)

    def __repr__(self):
        return f"RideHailGame(N={self.N}, d={self.d})"
