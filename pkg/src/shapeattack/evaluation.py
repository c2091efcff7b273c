"""Attack success rate, transfer evaluation, and ablation sweeps."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from .errors import InvalidParameterError, ShapeAttackError
from .geometry import ShapeKind

logger = logging.getLogger(__name__)

LINE_COUNT = "line_count"
POLYGON_EDGES = "polygon_edges"
COLOR = "color"
AXES = (LINE_COUNT, POLYGON_EDGES, COLOR)

GRAY_LADDER = [(v, v, v) for v in (0, 51, 102, 153, 204, 255)]


def compute_asr(objectness_values: Sequence[float], threshold: float = 0.5) -> float:
    """``1 - mean(F)`` with ``F(y) = 0`` iff ``y < threshold``.

    A value exactly at the threshold still counts as detected.
    """
    values = list(objectness_values)
    if not values:
        raise InvalidParameterError("ASR is undefined for an empty set of targets")
    if not 0.0 < threshold < 1.0:
        raise InvalidParameterError("threshold must be in (0, 1)")
    detected = sum(0 if y < threshold else 1 for y in values)
    return 1.0 - detected / len(values)


@dataclass
class EvalReport:
    asr: float
    n: int
    mean_queries: float
    per_target: list = field(default_factory=list)
    threshold: float = 0.5

    def recompute_asr(self) -> float:
        return compute_asr([t["final_objectness"] for t in self.per_target], self.threshold)

    def to_dict(self) -> dict:
        return {"asr": self.asr, "n": self.n, "mean_queries": self.mean_queries,
                "threshold": self.threshold, "per_target": self.per_target}

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    def format_table(self) -> str:
        lines = [f"{'id':<16} {'objectness':>10} {'success':>8} {'queries':>8}"]
        for t in self.per_target:
            lines.append(f"{t['id']:<16} {t['final_objectness']:>10.4f} "
                         f"{str(t['success']):>8} {t['queries']:>8}")
        lines.append(f"N={self.n}  ASR={self.asr:.4f}  mean queries={self.mean_queries:.2f}")
        return "\n".join(lines)


def _report(per_target: list, threshold: float) -> EvalReport:
    if not per_target:
        raise InvalidParameterError("no evaluable targets")
    asr = compute_asr([t["final_objectness"] for t in per_target], threshold)
    mean_q = sum(t["queries"] for t in per_target) / len(per_target)
    return EvalReport(asr, len(per_target), mean_q, per_target, threshold)


def report_from_run(run_dir) -> EvalReport:
    """Rebuild the ASR report of a finished run from its index alone."""
    from .runs import FAILURE, SUCCESS, load_index, load_run_config

    config = load_run_config(run_dir)
    per_target = [
        {"id": r["id"], "final_objectness": r["final_objectness"],
         "success": r["status"] == SUCCESS, "queries": r["queries"]}
        for r in load_index(run_dir) if r["status"] in (SUCCESS, FAILURE)
    ]
    return _report(per_target, config.threshold)


def transfer_eval(run_dir, second_oracle, threshold: Optional[float] = None) -> EvalReport:
    """Re-query the saved successful frames of ``run_dir`` against another oracle.

    Each frame is scored under the run's own transform set (one query per
    transform); the worst-case matched objectness decides success.
    """
    from .attack import score_frame
    from .detector import MOCK, QueryLedger, TargetRegistry
    from .imaging import frame_size, load_frame
    from .runs import SUCCESS, load_index, load_run_config

    run_dir = Path(run_dir)
    source = load_run_config(run_dir)
    config = replace(source, oracle=second_oracle,
                     threshold=source.threshold if threshold is None else threshold)
    per_target = []
    for rec in load_index(run_dir):
        if rec.get("status") != SUCCESS:
            continue
        try:
            frame = load_frame(run_dir / rec["frame"])
        except (KeyError, OSError, ShapeAttackError) as exc:
            logger.error("skipping %s: %s", rec.get("id"), exc)
            continue
        registry = None
        if second_oracle.backend == MOCK:
            registry = TargetRegistry.single(frame_size(frame), [tuple(t) for t in rec["targets"]])
        ledger = QueryLedger()
        objs = score_frame(frame, tuple(rec["box"]), config, ledger, registry, rec["entry"])
        final = max(objs)
        per_target.append({"id": rec["id"], "final_objectness": final,
                           "per_transform_objectness": objs,
                           "success": final < config.threshold, "queries": ledger.count})
    return _report(per_target, config.threshold)


def _axis_config(base, axis: str, value):
    if axis == LINE_COUNT:
        n = int(value)
        if not 1 <= n <= 7:
            raise InvalidParameterError(f"line_count must be in 1..7, got {value}")
        return replace(base, kind=ShapeKind.lines(n, base.kind.thickness))
    if axis == POLYGON_EDGES:
        k = int(value)
        if not 3 <= k <= 9:
            raise InvalidParameterError(f"polygon_edges must be in 3..9, got {value}")
        return replace(base, kind=ShapeKind.polygon(k))
    if axis == COLOR:
        c = tuple(int(v) for v in value)
        if len(c) != 3 or len(set(c)) != 1 or not 0 <= c[0] <= 255:
            raise InvalidParameterError(f"ablation colors must be equal-channel triples, got {value}")
        return replace(base, color=c)
    raise InvalidParameterError(f"unknown ablation axis {axis!r}")


def _value_label(value) -> str:
    if isinstance(value, (tuple, list)):
        return "(" + ",".join(str(int(v)) for v in value) + ")"
    return str(value)


def ablate(manifest, base_config, axis: str, values: Sequence, out_dir=None,
           workers: int = 1) -> list[dict]:
    """One dataset run per value with only ``axis`` varied; seed of row i is ``seed ^ i``."""
    from .runs import attack_dataset

    configs = [replace(_axis_config(base_config, axis, v), seed=base_config.seed ^ i)
               for i, v in enumerate(values)]
    rows = []
    out = Path(out_dir) if out_dir is not None else None
    for i, (value, cfg) in enumerate(zip(values, configs)):
        sub = None if out is None else out / f"{axis}_{i}"
        run = attack_dataset(manifest, cfg, out_dir=sub, workers=workers)
        rows.append({"axis": axis, "value": _value_label(value), "seed": cfg.seed,
                     "asr": run.summary["asr"], "mean_queries": run.summary["mean_queries"],
                     "n": run.summary["n"]})
    if out is not None:
        write_ablation(rows, out)
    return rows


def write_ablation(rows: Sequence[dict], out_dir) -> tuple[Path, Path]:
    """Write ``ablation.json`` (long form) and ``ablation.csv`` (values as columns)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath = out / "ablation.json"
    jpath.write_text(json.dumps(list(rows), indent=2, sort_keys=True) + "\n")
    cpath = out / "ablation.csv"
    with open(cpath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([""] + [r["value"] for r in rows])
        w.writerow(["ASR"] + ["" if r["asr"] is None else f"{100 * r['asr']:.1f}" for r in rows])
        w.writerow(["Query"] + ["" if r["mean_queries"] is None else f"{r['mean_queries']:.1f}"
                                for r in rows])
    return jpath, cpath
