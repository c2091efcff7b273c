"""Fitness evaluation and the single-target vanish attack."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .detector import (OracleConfig, QueryLedger, TargetRegistry, match_target, query)
from .errors import (AttackAbortedError, InvalidParameterError, OracleError,
                     TargetNotDetectedError)
from .geometry import (ELLIPSE, LINES, Mask, PerturbationSpec, ShapeKind,
                       clip_to_mask, rasterize)
from .imaging import (TransformSet, apply_transform, as_frame, frame_size, fuse,
                      scale_box)
from .optimizer import PsoHyper, decode, init_swarm, step, update_bests

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttackConfig:
    kind: ShapeKind = field(default_factory=ShapeKind.ellipse)
    color: tuple = (0, 0, 0)
    hyper: PsoHyper = field(default_factory=PsoHyper)
    threshold: float = 0.5
    eot: Optional[TransformSet] = None
    oracle: OracleConfig = field(default_factory=OracleConfig)
    seed: int = 0
    alpha: float = 1.0
    iou_threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise InvalidParameterError("threshold must be in (0, 1)")
        color = tuple(int(c) for c in self.color)
        if len(color) != 3 or any(c < 0 or c > 255 for c in color):
            raise InvalidParameterError(f"bad color {self.color!r}")
        object.__setattr__(self, "color", color)

    @property
    def transforms(self) -> TransformSet:
        return self.eot if self.eot is not None else TransformSet.identity()

    def to_dict(self) -> dict:
        return {
            "shape": {"family": self.kind.family, "count": self.kind.count,
                      "thickness": self.kind.thickness},
            "color": list(self.color),
            "hyper": self.hyper.to_dict(),
            "threshold": self.threshold,
            "eot_scales": None if self.eot is None else self.eot.scales,
            "oracle": self.oracle.to_dict(),
            "seed": self.seed,
            "alpha": self.alpha,
            "iou_threshold": self.iou_threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        s = d.get("shape", {})
        kind = ShapeKind(s.get("family", ELLIPSE), s.get("count", 1 if s.get("family") != LINES else 2),
                         s.get("thickness", 3))
        eot = d.get("eot_scales")
        return cls(
            kind=kind,
            color=tuple(d.get("color", (0, 0, 0))),
            hyper=PsoHyper(**d.get("hyper", {})),
            threshold=d.get("threshold", 0.5),
            eot=None if eot is None else TransformSet.from_scales(eot),
            oracle=OracleConfig(**d.get("oracle", {})),
            seed=d.get("seed", 0),
            alpha=d.get("alpha", 1.0),
            iou_threshold=d.get("iou_threshold", 0.5),
        )


@dataclass
class AttackResult:
    success: bool
    queries: int
    best_spec: PerturbationSpec
    best_fitness: float
    fitness_trace: list
    adv_frame: np.ndarray = field(repr=False)
    per_transform_objectness: list = field(default_factory=list)
    clean_objectness: float = 1.0
    iterations: int = 0
    precheck_queries: int = 0

    @property
    def final_objectness(self) -> float:
        """The objectness that decides success: worst case over transforms."""
        return max(self.per_transform_objectness)

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "queries": self.queries,
            "precheck_queries": self.precheck_queries,
            "iterations": self.iterations,
            "clean_objectness": self.clean_objectness,
            "best_fitness": self.best_fitness,
            "final_objectness": self.final_objectness,
            "per_transform_objectness": list(self.per_transform_objectness),
            "best_spec": self.best_spec.to_dict(),
            "fitness_trace": list(self.fitness_trace),
        }


def is_success(per_transform_objectness: Sequence[float], threshold: float) -> bool:
    """A sample succeeds only if it is below ``threshold`` under every transform."""
    objs = list(per_transform_objectness)
    return bool(objs) and max(objs) < threshold


def _query_retrying(frame, config: AttackConfig, ledger, registry, image_id):
    attempts = config.oracle.retries + 1
    for n in range(attempts):
        try:
            return query(frame, config.oracle, ledger, registry, image_id)
        except OracleError as exc:
            if n == attempts - 1:
                raise
            logger.warning("oracle error (attempt %d/%d): %s", n + 1, attempts, exc)


def render(clean: np.ndarray, spec: PerturbationSpec, mask: Mask, alpha: float = 1.0) -> np.ndarray:
    """Rasterize, confine to the mask, and paint onto a copy of ``clean``."""
    w, h = frame_size(clean)
    return fuse(clean, clip_to_mask(rasterize(spec, w, h), mask), spec.color, alpha)


def score_frame(adv: np.ndarray, target_bbox: Sequence[float], config: AttackConfig,
                ledger: QueryLedger, registry: Optional[TargetRegistry] = None,
                image_id: Optional[str] = None) -> list[float]:
    """Matched target objectness of ``adv`` under every configured transform."""
    size = frame_size(adv)
    objs = []
    for t in config.transforms:
        frame = apply_transform(adv, t)
        box = tuple(target_bbox) if t.scale == 1.0 else scale_box(target_bbox, size, frame_size(frame))
        dets = _query_retrying(frame, config, ledger, registry, image_id)
        objs.append(match_target(dets, box, config.iou_threshold))
    return objs


def evaluate(clean: np.ndarray, spec: PerturbationSpec, mask: Mask,
             target_bbox: Sequence[float], config: AttackConfig, ledger: QueryLedger,
             registry: Optional[TargetRegistry] = None,
             image_id: Optional[str] = None) -> tuple[float, list[float]]:
    """Mean matched objectness over transforms, plus the per-transform values."""
    if (mask.width, mask.height) != frame_size(clean):
        raise InvalidParameterError("mask and frame dimensions differ")
    adv = render(clean, spec, mask, config.alpha)
    objs = score_frame(adv, target_bbox, config, ledger, registry, image_id)
    return float(sum(objs) / len(objs)), objs


def fitness(clean, spec, mask, target_bbox, config, ledger, registry=None, image_id=None) -> float:
    return evaluate(clean, spec, mask, target_bbox, config, ledger, registry, image_id)[0]


def _default_registry(clean, target_bbox, config, registry):
    if registry is None and config.oracle.backend == "mock":
        return TargetRegistry.single(frame_size(clean), [tuple(target_bbox)])
    return registry


def clean_objectness(clean, target_bbox, config: AttackConfig, ledger: QueryLedger,
                     registry=None, image_id=None) -> float:
    registry = _default_registry(clean, target_bbox, config, registry)
    dets = _query_retrying(clean, config, ledger, registry, image_id)
    return match_target(dets, target_bbox, config.iou_threshold)


def attack_single(clean: np.ndarray, mask: Mask, target_bbox: Sequence[float],
                  config: AttackConfig, registry: Optional[TargetRegistry] = None,
                  image_id: Optional[str] = None,
                  recorder: Optional[Callable[[dict], None]] = None) -> AttackResult:
    """Optimize one perturbation against one target box.

    Stops at the first iteration whose global best is a success: every
    per-transform objectness strictly below ``threshold``. ``queries`` counts
    only the search (iterations x population x transforms); the clean-frame
    detection check is reported separately as ``precheck_queries``.
    """
    clean = as_frame(clean)
    registry = _default_registry(clean, target_bbox, config, registry)
    precheck = QueryLedger()
    try:
        clean_obj = clean_objectness(clean, target_bbox, config, precheck, registry, image_id)
    except OracleError as exc:
        raise AttackAbortedError(f"clean-frame query failed: {exc}", [], 0) from exc
    if clean_obj < config.threshold:
        raise TargetNotDetectedError(clean_obj, config.threshold)

    bbox = mask.bbox()
    kind, hyper = config.kind, config.hyper
    swarm = init_swarm(kind, bbox, hyper, config.seed)
    ledger = QueryLedger()
    trace: list[float] = []
    best_objs = [[float("inf")] for _ in range(swarm.size)]
    iterations = 0

    for b in range(hyper.iterations):
        fits, objs_all = [], []
        for a in range(swarm.size):
            spec = decode(swarm.positions[a], kind, bbox, config.color)
            try:
                f, objs = evaluate(clean, spec, mask, target_bbox, config, ledger, registry, image_id)
            except OracleError as exc:
                raise AttackAbortedError(f"iteration {b}, particle {a}: {exc}",
                                         trace, ledger.count) from exc
            fits.append(f)
            objs_all.append(objs)
        for a in range(swarm.size):
            if fits[a] < swarm.best_fitness[a]:
                best_objs[a] = objs_all[a]
        swarm = update_bests(swarm, fits)
        iterations = b + 1
        trace.append(swarm.global_best_fitness)
        g_objs = best_objs[swarm.global_best_index]
        done = is_success(g_objs, config.threshold)
        if recorder is not None:
            recorder({
                "iteration": b,
                "fitness": [float(v) for v in fits],
                "global_best_fitness": swarm.global_best_fitness,
                "global_best_objectness": [float(v) for v in g_objs],
                "global_best_spec": decode(swarm.global_best_position, kind, bbox,
                                           config.color).to_dict(),
                "queries": ledger.count,
            })
        if done:
            break
        if b + 1 < hyper.iterations:
            swarm = step(swarm, hyper)

    best_spec = decode(swarm.global_best_position, kind, bbox, config.color)
    g_objs = best_objs[swarm.global_best_index]
    return AttackResult(
        success=is_success(g_objs, config.threshold),
        queries=ledger.count,
        best_spec=best_spec,
        best_fitness=swarm.global_best_fitness,
        fitness_trace=trace,
        adv_frame=render(clean, best_spec, mask, config.alpha),
        per_transform_objectness=list(g_objs),
        clean_objectness=clean_obj,
        iterations=iterations,
        precheck_queries=precheck.count,
    )
