"""Dataset manifests, batch attacks, and run-directory persistence.

A run directory looks like::

    run/
      run_manifest.json   config snapshot, seed, version, start time, statuses
      index.json          one summary record per target (machine-readable index)
      summary.json        ASR, N, mean queries
      records/<id>.jsonl  one document per PSO iteration (append-only)
      results/<id>.json   final AttackResult
      frames/<id>.png     adversarial frame

Everything except ``run_manifest.json["started_at"]`` is a deterministic
function of (manifest, config).
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import __version__
from .attack import AttackConfig, attack_single
from .detector import MOCK, TargetRegistry
from .errors import (AttackAbortedError, InvalidParameterError, ShapeAttackError,
                     TargetNotDetectedError)
from .evaluation import compute_asr
from .geometry import Mask
from .imaging import frame_size, load_frame, save_frame

logger = logging.getLogger(__name__)

MIN_TARGET_HEIGHT = 120

SUCCESS = "success"
FAILURE = "failure"
EXCLUDED = "excluded"
ABORTED = "aborted"
ERROR = "error"


@dataclass
class ManifestEntry:
    id: str
    image: Path
    targets: list
    masks: list = field(default_factory=list)

    def mask_path(self, k: int) -> Optional[Path]:
        return self.masks[k] if k < len(self.masks) else None


def load_manifest(path, filter_tall: bool = False) -> list[ManifestEntry]:
    """Read a JSON manifest; relative image paths resolve against its folder.

    With ``filter_tall`` only targets taller than 120 px are kept, and
    entries left without targets are dropped.
    """
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    raw = doc["entries"] if isinstance(doc, dict) else doc
    base = path.resolve().parent
    entries = []
    for n, e in enumerate(raw):
        targets = [tuple(int(v) for v in t) for t in e["targets"]]
        masks = [None if m is None else base / m for m in e.get("masks", [])]
        if filter_tall:
            keep = [k for k, t in enumerate(targets) if t[3] - t[1] > MIN_TARGET_HEIGHT]
            targets = [targets[k] for k in keep]
            masks = [masks[k] if k < len(masks) else None for k in keep]
        if not targets:
            if not filter_tall:
                raise InvalidParameterError(f"manifest entry {n} has no target boxes")
            continue
        entries.append(ManifestEntry(str(e.get("id", n)), base / e["image"], targets, masks))
    return entries


def write_manifest(entries: Sequence[ManifestEntry], path) -> Path:
    path = Path(path)
    base = path.parent
    doc = {"entries": []}
    for e in entries:
        item = {"id": e.id, "image": _rel(e.image, base), "targets": [list(t) for t in e.targets]}
        if any(m is not None for m in e.masks):
            item["masks"] = [None if m is None else _rel(m, base) for m in e.masks]
        doc["entries"].append(item)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def _rel(p: Path, base: Path) -> str:
    try:
        return str(Path(p).resolve().relative_to(base.resolve()))
    except ValueError:
        return str(p)


def target_seed(seed: int, entry_index: int, target_index: int) -> int:
    ss = np.random.SeedSequence([int(seed), entry_index, target_index])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def record_id(entry_id: str, k: int) -> str:
    return f"{entry_id}_t{k}"


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True)


@dataclass
class DatasetRun:
    records: list
    summary: dict
    out_dir: Optional[Path] = None


def summarize(records: Sequence[dict], config: AttackConfig) -> dict:
    included = [r for r in records if r["status"] in (SUCCESS, FAILURE)]
    counts = {s: sum(r["status"] == s for r in records)
              for s in (SUCCESS, FAILURE, EXCLUDED, ABORTED, ERROR)}
    return {
        "shape": config.kind.label(),
        "dimension": config.kind.dimension,
        "n": len(included),
        "asr": compute_asr([r["final_objectness"] for r in included], config.threshold)
        if included else None,
        "mean_queries": float(np.mean([r["queries"] for r in included])) if included else None,
        "counts": counts,
        "partial_failure": counts[ABORTED] + counts[ERROR] > 0,
    }


def _attack_target(job):
    ei, entry, k, frame, config, out_dir, load_error = job
    rid = record_id(entry.id, k)
    box = tuple(entry.targets[k])
    rec = {"id": rid, "entry": entry.id, "target_index": k, "box": list(box),
           "targets": [list(t) for t in entry.targets], "image": str(entry.image)}
    if load_error is not None:
        rec.update(status=ERROR, error=load_error)
        return rec
    seed = target_seed(config.seed, ei, k)
    rec["seed"] = seed
    cfg = replace(config, seed=seed)
    w, h = frame_size(frame)
    try:
        mpath = entry.mask_path(k)
        if mpath is not None:
            mask = Mask(load_frame(mpath)[:, :, 0] > 0)
            if (mask.width, mask.height) != (w, h):
                raise InvalidParameterError(f"mask is {mask.width}x{mask.height}, image is {w}x{h}")
        else:
            mask = Mask.from_box(box, w, h)
        mask.bbox()
    except (OSError, ShapeAttackError) as exc:
        rec.update(status=ERROR, error=f"mask: {exc}")
        return rec
    registry = TargetRegistry.single((w, h), entry.targets) if cfg.oracle.backend == MOCK else None

    lines = []
    try:
        result = attack_single(frame, mask, box, cfg, registry=registry, image_id=entry.id,
                               recorder=lambda doc: lines.append(_dump(doc)))
    except TargetNotDetectedError as exc:
        rec.update(status=EXCLUDED, clean_objectness=exc.objectness, queries=0)
        return rec
    except AttackAbortedError as exc:
        rec.update(status=ABORTED, error=str(exc), queries=exc.queries,
                   fitness_trace=exc.fitness_trace)
        if out_dir is not None:
            _write_lines(out_dir / "records" / f"{rid}.jsonl", lines)
        return rec

    rec.update(status=SUCCESS if result.success else FAILURE,
               final_objectness=result.final_objectness,
               best_fitness=result.best_fitness,
               queries=result.queries,
               iterations=result.iterations,
               clean_objectness=result.clean_objectness)
    if out_dir is not None:
        _write_lines(out_dir / "records" / f"{rid}.jsonl", lines)
        res = {**rec, **result.to_dict()}
        (out_dir / "results").mkdir(parents=True, exist_ok=True)
        (out_dir / "results" / f"{rid}.json").write_text(json.dumps(res, indent=2, sort_keys=True) + "\n")
        save_frame(result.adv_frame, out_dir / "frames" / f"{rid}.png")
        rec["frame"] = f"frames/{rid}.png"
    rec["_result"] = result
    return rec


def _write_lines(path: Path, lines: Sequence[str]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for line in lines:
            fh.write(line + "\n")


def attack_dataset(manifest: Union[str, Path, Sequence[ManifestEntry]], config: AttackConfig,
                   out_dir=None, workers: int = 1, filter_tall: bool = False) -> DatasetRun:
    """Attack every target of every entry; persist to ``out_dir`` when given.

    Targets the clean detector already misses are recorded as ``excluded``
    and do not count toward N. Unreadable images produce ``error`` records.
    """
    manifest_path = None
    if isinstance(manifest, (str, Path)):
        manifest_path = Path(manifest)
        entries = load_manifest(manifest_path, filter_tall)
    else:
        entries = list(manifest)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    jobs = []
    for ei, entry in enumerate(entries):
        frame, err = None, None
        try:
            frame = load_frame(entry.image)
        except (OSError, ShapeAttackError) as exc:
            err = f"image: {exc}"
            logger.error("entry %s: cannot read %s: %s", entry.id, entry.image, exc)
        for k in range(len(entry.targets)):
            jobs.append((ei, entry, k, frame, config, out, err))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_attack_target, jobs))
    else:
        records = [_attack_target(j) for j in jobs]

    summary = summarize(records, config)
    if out is not None:
        public = [{k: v for k, v in r.items() if not k.startswith("_")} for r in records]
        (out / "index.json").write_text(json.dumps(public, indent=2, sort_keys=True) + "\n")
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        run_manifest = {
            "tool": "shapeattack",
            "version": __version__,
            "started_at": started,
            "seed": config.seed,
            "config": config.to_dict(),
            "manifest": None if manifest_path is None else str(manifest_path),
            "filter_tall": filter_tall,
            "entries": {r["id"]: r["status"] for r in records},
        }
        (out / "run_manifest.json").write_text(json.dumps(run_manifest, indent=2, sort_keys=True) + "\n")
    return DatasetRun(records, summary, out)


def load_index(run_dir) -> list[dict]:
    with open(Path(run_dir) / "index.json") as fh:
        return json.load(fh)


def load_run_config(run_dir) -> AttackConfig:
    with open(Path(run_dir) / "run_manifest.json") as fh:
        return AttackConfig.from_dict(json.load(fh)["config"])
