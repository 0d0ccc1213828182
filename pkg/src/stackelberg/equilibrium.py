"""Nash-equilibrium solvers for monotone games.

The solvers only talk to a game through :class:`GameInterface`, so any
concave game with a monotone pseudogradient can be plugged in.  Joint
allocations are ``(N, d)`` arrays; :func:`ne_oracle_batch` additionally
accepts a leading batch axis over price vectors.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Protocol, Union

import numpy as np

logger = logging.getLogger(__name__)


class GameInterface(Protocol):
    N: int
    d: int

    def pseudogradient(self, x, pi) -> np.ndarray: ...

    def project(self, x) -> np.ndarray: ...

    def project_block(self, y, i: int) -> np.ndarray: ...

    def utility(self, i: int, x, pi): ...

    def initial_point(self) -> np.ndarray: ...


class NotConverged(RuntimeError):
    def __init__(self, message, residual=float("nan"), result=None):
        super().__init__(message)
        self.residual = residual
        self.result = result


class OracleNotConverged(NotConverged):
    """The high-precision reference solve failed; results that depend on it are invalid."""


# -- stopping rules and step sizes ----------------------------------------


@dataclass(frozen=True)
class MaxIters:
    K: int

    def to_dict(self):
        return {"kind": "max_iters", "K": self.K}


@dataclass(frozen=True)
class Residual:
    tol: float
    max_iters: int = 100_000

    def to_dict(self):
        return {"kind": "residual", "tol": self.tol, "max_iters": self.max_iters}


@dataclass(frozen=True)
class DistanceToOracle:
    """Stop once ``||x - x*|| <= eps``.

    ``target`` is the reference equilibrium; when left as ``None``,
    :func:`approx_ne` computes it with :func:`ne_oracle`.
    """

    eps: float
    max_iters: int = 1_000_000
    target: np.ndarray | None = field(default=None, compare=False, repr=False)

    def with_target(self, target) -> "DistanceToOracle":
        return DistanceToOracle(self.eps, self.max_iters, np.asarray(target, dtype=float))

    def to_dict(self):
        return {"kind": "distance_to_oracle", "eps": self.eps, "max_iters": self.max_iters}


StoppingRule = Union[MaxIters, Residual, DistanceToOracle]


def stopping_rule_from_dict(data: dict) -> StoppingRule:
    kind = data["kind"]
    if kind == "max_iters":
        return MaxIters(int(data["K"]))
    if kind == "residual":
        return Residual(float(data["tol"]), int(data.get("max_iters", 100_000)))
    if kind == "distance_to_oracle":
        return DistanceToOracle(float(data["eps"]), int(data.get("max_iters", 1_000_000)))
    raise ValueError(f"unknown stopping rule {kind!r}")


@dataclass(frozen=True)
class HarmonicStep:
    """Step sizes ``gamma0 / (k + k0)``."""

    gamma0: float = 1.0
    k0: float = 10.0

    def __call__(self, k: int) -> float:
        return self.gamma0 / (k + self.k0)

    def to_dict(self):
        return {"gamma0": self.gamma0, "k0": self.k0}

    @classmethod
    def from_dict(cls, data):
        return cls(float(data["gamma0"]), float(data["k0"]))


# -- results ---------------------------------------------------------------


@dataclass
class NeResult:
    x_star: np.ndarray
    iterations: int
    residual: float
    converged: bool

    def to_dict(self) -> dict:
        return {
            "x_star": np.asarray(self.x_star).tolist(),
            "iterations": int(self.iterations),
            "residual": float(self.residual),
            "converged": bool(self.converged),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "NeResult":
        return cls(
            x_star=np.asarray(data["x_star"], dtype=float),
            iterations=int(data["iterations"]),
            residual=float(data["residual"]),
            converged=bool(data["converged"]),
        )


def ne_residual(game: GameInterface, x, pi) -> np.ndarray:
    """Natural-map residual ``||x - P(x - v(x; pi))||`` (zero exactly at a NE).

    Reduces over the last two axes, so batched profiles give batched residuals.
    """
    x = np.asarray(x, dtype=float)
    step = game.project(x - game.pseudogradient(x, pi))
    return np.sqrt(np.sum((x - step) ** 2, axis=(-2, -1)))


# -- inner loop ------------------------------------------------------------


def approx_ne(
    game: GameInterface,
    pi,
    stop: StoppingRule,
    step: HarmonicStep = HarmonicStep(),
    x0=None,
) -> NeResult:
    """Simultaneous projected pseudogradient descent with harmonic steps.

    Every follower updates ``x_i <- P_i(x_i - gamma_k v_i(x; pi))`` at the
    same time.  ``converged`` reports whether the stopping rule was met;
    for ``MaxIters`` that is always the case.

    Raises
    ------
    NotConverged
        When a ``Residual`` or ``DistanceToOracle`` rule exhausts its
        iteration budget.  The final iterate is attached as ``err.result``.
    """
    pi = np.asarray(pi, dtype=float)
    x = np.array(game.initial_point() if x0 is None else x0, dtype=float)

    if isinstance(stop, DistanceToOracle) and stop.target is None:
        stop = stop.with_target(ne_oracle(game, pi).x_star)

    if isinstance(stop, MaxIters):
        budget = stop.K
    else:
        budget = stop.max_iters

    def satisfied(x):
        if isinstance(stop, Residual):
            return float(ne_residual(game, x, pi)) <= stop.tol
        if isinstance(stop, DistanceToOracle):
            return float(np.linalg.norm(x - stop.target)) <= stop.eps
        return False

    v = game.pseudogradient(x, pi)
    if not np.any(v):
        return NeResult(x, 0, 0.0, True)

    k = 0
    done = satisfied(x)
    while not done and k < budget:
        x = game.project(x - step(k) * v)
        k += 1
        v = game.pseudogradient(x, pi)
        done = satisfied(x)

    residual = float(ne_residual(game, x, pi))
    if isinstance(stop, MaxIters):
        return NeResult(x, k, residual, True)
    result = NeResult(x, k, residual, done)
    if not done:
        raise NotConverged(
            f"inner loop hit {budget} iterations (residual {residual:.3g})", residual, result
        )
    return result


# -- reference equilibrium -------------------------------------------------


def ne_oracle_batch(
    game: GameInterface,
    pis,
    tol: float = 1e-10,
    max_iters: int = 200_000,
    step0: float = 1.0,
    check_every: int = 10,
):
    """High-precision equilibria for a batch of price vectors.

    Projected pseudogradient descent with a per-instance constant step.
    A step is halved (and the iterate kept) whenever successive moves fail
    to shrink or reverse direction.  Returns ``(x, iterations, residual)`` with shapes
    ``(P, N, d)``, ``(P,)`` and ``(P,)``.

    Raises
    ------
    OracleNotConverged
        If any instance is still above ``tol`` after ``max_iters``.
    """
    pis = np.atleast_2d(np.asarray(pis, dtype=float))
    P = pis.shape[0]
    x = np.broadcast_to(game.initial_point(), (P, game.N, game.d)).copy()
    gamma = np.full(P, step0)
    last_move = np.full(P, np.inf)
    last_dir = np.zeros_like(x)
    iters = np.zeros(P, dtype=int)
    residual = ne_residual(game, x, pis)
    active = np.flatnonzero(residual > tol)

    k = 0
    while active.size and k < max_iters:
        xa, pa, ga = x[active], pis[active], gamma[active]
        xn = game.project(xa - ga[:, None, None] * game.pseudogradient(xa, pa))
        d = xn - xa
        move = np.sqrt(np.sum(d**2, axis=(-2, -1))) / ga
        reversed_ = np.sum(d * last_dir[active], axis=(-2, -1)) < 0
        bad = ((move >= last_move[active]) | reversed_) & (move > 0)
        # a contraction strictly shrinks successive moves and does not
        # oscillate; otherwise halve the step and retry from the same point
        x[active] = np.where(bad[:, None, None], xa, xn)
        gamma[active] = np.where(bad, ga / 2, ga)
        last_move[active] = np.where(bad, np.inf, move)
        last_dir[active] = np.where(bad[:, None, None], 0.0, d)
        iters[active] += 1
        k += 1
        if k % check_every == 0:
            residual[active] = ne_residual(game, x[active], pis[active])
            active = active[residual[active] > tol]

    residual = ne_residual(game, x, pis)
    if np.any(residual > tol):
        worst = int(np.argmax(residual))
        raise OracleNotConverged(
            f"oracle failed at pi={pis[worst]} (residual {residual[worst]:.3g})",
            float(residual[worst]),
        )
    return x, iters, residual


def ne_oracle(game: GameInterface, pi, tol: float = 1e-10, max_iters: int = 200_000) -> NeResult:
    """Reference Nash equilibrium at residual ``tol``."""
    x, iters, res = ne_oracle_batch(game, np.asarray(pi, dtype=float)[None, :], tol, max_iters)
    return NeResult(x[0], int(iters[0]), float(res[0]), True)


# -- best responses --------------------------------------------------------


def best_response(
    game: GameInterface,
    i: int,
    x,
    pi,
    tol: float = 1e-10,
    max_iters: int = 100_000,
) -> np.ndarray:
    """Maximise follower ``i``'s utility against the opponents' blocks in ``x``.

    Projected gradient ascent on the own block.  The step is chosen by
    backtracking on a local Lipschitz estimate of the own gradient (only
    gradient information is compared, which stays accurate long after
    utility differences drop below machine precision) and is allowed to
    grow again after each accepted step.
    """
    x = np.array(x, dtype=float)
    pi = np.asarray(pi, dtype=float)

    def grad(z):
        x[i] = z
        return -game.pseudogradient(x, pi)[i]

    z = game.project_block(x[i], i)
    g = grad(z)
    gamma = 1.0
    for _ in range(max_iters):
        if np.linalg.norm(z - game.project_block(z + g, i)) <= tol:
            x[i] = z
            return z
        while True:
            zn = game.project_block(z + gamma * g, i)
            dz = zn - z
            gn = grad(zn)
            if np.linalg.norm(gn - g) * gamma <= np.linalg.norm(dz) * (1 + 1e-12) or gamma < 1e-14:
                break
            gamma /= 2
        z, g = zn, gn
        gamma *= 1.5
    res = float(np.linalg.norm(z - game.project_block(z + g, i)))
    raise NotConverged(f"best response of follower {i} stalled (residual {res:.3g})", res)


def best_response_iteration(
    game: GameInterface,
    pi,
    tol: float = 1e-10,
    max_rounds: int = 10_000,
    damping: float = 1.0,
    x0=None,
) -> NeResult:
    """Sequential (Gauss-Seidel) best-response dynamics.

    ``damping < 1`` mixes each best response with the current block.
    Stops when a full sweep moves the profile by at most ``tol``.
    """
    pi = np.asarray(pi, dtype=float)
    x = np.array(game.initial_point() if x0 is None else x0, dtype=float)
    for sweep in range(1, max_rounds + 1):
        prev = x.copy()
        for i in range(game.N):
            br = best_response(game, i, x, pi, tol=tol * 1e-2)
            x[i] = (1 - damping) * x[i] + damping * br
        if np.linalg.norm(x - prev) <= tol:
            return NeResult(x, sweep, float(ne_residual(game, x, pi)), True)
    res = float(ne_residual(game, x, pi))
    raise OracleNotConverged(f"best-response iteration did not settle (residual {res:.3g})", res)


def certify_epsilon_nash(game: GameInterface, x, pi, tol: float = 1e-10) -> float:
    """Smallest ``eps`` for which ``x`` is an eps-Nash equilibrium.

    Maximum over followers of the utility gain from unilaterally switching
    to a best response.  Accurate up to the best-response tolerance;
    tiny negative gains from that tolerance are reported as zero.
    """
    x = np.asarray(x, dtype=float)
    pi = np.asarray(pi, dtype=float)
    gains = []
    for i in range(game.N):
        br = best_response(game, i, x, pi, tol=tol)
        deviated = x.copy()
        deviated[i] = br
        gains.append(float(game.utility(i, deviated, pi) - game.utility(i, x, pi)))
    return max(0.0, max(gains))
