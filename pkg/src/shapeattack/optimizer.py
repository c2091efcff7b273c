"""Particle swarm optimization over real-valued shape encodings.

Positions live in a continuous space; :func:`decode` rounds half away from
zero and clamps into the mask box to get a renderable spec. All operations
return new :class:`Swarm` objects; the swarm's random stream travels with
it so trajectories depend only on ``(seed, hyper, problem)``.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ContractViolation, InvalidParameterError
from .geometry import (ClampBox, PerturbationSpec, ShapeKind, build_spec, encode,
                       param_bounds, random_params, round_half_away)

FIXED = "fixed"
RESAMPLED = "resampled"


@dataclass(frozen=True)
class PsoHyper:
    omega: float = 0.9
    c1: float = 1.6
    r1: float = 0.5
    c2: float = 1.4
    r2: float = 0.5
    r_mode: str = FIXED
    population: int = 30
    iterations: int = 50
    v_max: Optional[float] = None  # None -> 0.25 * mask-box diagonal

    def __post_init__(self):
        if self.r_mode not in (FIXED, RESAMPLED):
            raise InvalidParameterError(f"r_mode must be 'fixed' or 'resampled', got {self.r_mode!r}")
        if min(self.omega, self.c1, self.c2, self.r1, self.r2) < 0:
            raise InvalidParameterError("PSO factors must be non-negative")
        if self.r_mode == FIXED and not (self.r1 <= 1 and self.r2 <= 1):
            raise InvalidParameterError("r1 and r2 must lie in [0, 1]")
        if self.population < 1:
            raise InvalidParameterError("population must be >= 1")
        if self.iterations < 1:
            raise InvalidParameterError("iterations must be >= 1")
        if self.v_max is not None and not self.v_max > 0:
            raise InvalidParameterError("v_max must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def default_v_max(bbox: ClampBox) -> float:
    return max(0.25 * bbox.diagonal, 0.5)


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    best_position: np.ndarray
    best_fitness: float


@dataclass
class Swarm:
    positions: np.ndarray        # (population, dim)
    velocities: np.ndarray
    best_positions: np.ndarray
    best_fitness: np.ndarray     # (population,), +inf until evaluated
    global_best_position: np.ndarray
    global_best_fitness: float
    v_max: float
    rng_seed: int
    rng: np.random.Generator = field(repr=False)

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]

    @property
    def particles(self) -> list[Particle]:
        return [Particle(self.positions[a], self.velocities[a], self.best_positions[a],
                         float(self.best_fitness[a])) for a in range(self.size)]

    @property
    def global_best_index(self) -> int:
        return int(np.argmin(self.best_fitness))

    def copy(self) -> "Swarm":
        return Swarm(self.positions.copy(), self.velocities.copy(), self.best_positions.copy(),
                     self.best_fitness.copy(), self.global_best_position.copy(),
                     float(self.global_best_fitness), self.v_max, self.rng_seed,
                     copy.deepcopy(self.rng))


def decode(vector: Sequence[float], kind: ShapeKind, mask_bbox: ClampBox,
           color=(0, 0, 0)) -> PerturbationSpec:
    v = np.asarray(vector, dtype=float)
    if v.shape != (kind.dimension,):
        raise InvalidParameterError(
            f"{kind.label()} vectors have {kind.dimension} entries, got shape {v.shape}"
        )
    lower, upper = param_bounds(kind, mask_bbox)
    return build_spec(kind, np.clip(round_half_away(v), lower, upper), color)


def init_swarm(kind: ShapeKind, mask_bbox: ClampBox, hyper: PsoHyper, seed: int) -> Swarm:
    if hyper.population < 1:
        raise InvalidParameterError("population must be >= 1")
    rng = np.random.default_rng(seed)
    positions = np.stack([encode(random_params(kind, mask_bbox, rng))
                          for _ in range(hyper.population)])
    v_max = float(hyper.v_max) if hyper.v_max is not None else default_v_max(mask_bbox)
    velocities = rng.uniform(-v_max, v_max, size=positions.shape)
    return Swarm(
        positions=positions,
        velocities=velocities,
        best_positions=positions.copy(),
        best_fitness=np.full(hyper.population, np.inf),
        global_best_position=positions[0].copy(),
        global_best_fitness=float("inf"),
        v_max=v_max,
        rng_seed=int(seed),
        rng=rng,
    )


def update_bests(swarm: Swarm, fitnesses: Sequence[float]) -> Swarm:
    """Adopt strictly better personal bests; global best is the earliest-index minimum."""
    f = np.asarray(fitnesses, dtype=float)
    if f.shape != (swarm.size,):
        raise InvalidParameterError(f"expected {swarm.size} fitness values, got {f.shape}")
    out = swarm.copy()
    improved = f < out.best_fitness
    out.best_fitness[improved] = f[improved]
    out.best_positions[improved] = out.positions[improved]
    g = out.global_best_index
    out.global_best_fitness = float(out.best_fitness[g])
    out.global_best_position = out.best_positions[g].copy()
    return out


def step(swarm: Swarm, hyper: PsoHyper) -> Swarm:
    """One velocity/position update for every particle.

    ``v' = omega*v + c1*r1*(p_best - x) + c2*r2*(g_best - x)``, each
    component clamped to ``[-v_max, v_max]``, then ``x' = x + v'``.
    """
    if not np.all(np.isfinite(swarm.best_fitness)):
        raise ContractViolation("step() requires every particle to have an evaluated best")
    out = swarm.copy()
    n = out.size
    if hyper.r_mode == RESAMPLED:
        draws = out.rng.random((n, 2))
        r1, r2 = draws[:, :1], draws[:, 1:]
    else:
        r1, r2 = hyper.r1, hyper.r2
    x = out.positions
    v = (hyper.omega * out.velocities
         + hyper.c1 * r1 * (out.best_positions - x)
         + hyper.c2 * r2 * (out.global_best_position[None, :] - x))
    v = np.clip(v, -out.v_max, out.v_max)
    out.velocities = v
    out.positions = x + v
    return out
