"""
Result emission: JSON manifests and CSV tables.

A manifest is canonical JSON (sorted keys, non-finite numbers as null).
Its ``content_hash`` is the sha256 of the canonical text without the
``timestamps`` and ``content_hash`` fields, so reruns with the same
command and seed hash identically.
"""

import hashlib
import json
import logging
import math
from dataclasses import asdict, is_dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Optional

import numpy as np
import pandas as pd

from . import __version__
from .sus import BusRun, SusRun

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"
_UNHASHED = ("timestamps", "content_hash")


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def jsonable(obj):
    """Plain JSON types; numpy values unwrapped, non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, Path):
        return str(obj)
    if is_dataclass(obj) and not isinstance(obj, type):
        return jsonable(asdict(obj))
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def content_hash(manifest: Dict) -> str:
    hashed = {k: v for k, v in manifest.items() if k not in _UNHASHED}
    return hashlib.sha256(canonical_json(hashed).encode("utf-8")).hexdigest()


def build_manifest(body: Dict, started: Optional[str] = None) -> Dict:
    manifest = jsonable({"schema_version": SCHEMA_VERSION,
                         "tool": {"name": "susbayes", "version": __version__},
                         **body})
    manifest["timestamps"] = {"started": started or utc_now(), "finished": utc_now()}
    manifest["content_hash"] = content_hash(manifest)
    return manifest


def write_manifest(directory, body: Dict, started: Optional[str] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = build_manifest(body, started)
    path = directory / MANIFEST_NAME
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")
    logger.info(f"wrote {path} (hash {manifest['content_hash'][:12]})")
    return path


def read_manifest(path) -> Dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def problem_record(run) -> Dict:
    return {
        "name": run.problem_name,
        "dimension": run.prior.dimension,
        "prior_bounds": [list(b) for b in run.prior.marginals],
    }


def sus_run_record(run: SusRun) -> Dict:
    """Manifest body fields of a SuS run."""
    levels = []
    for lv in run.levels:
        levels.append({
            "index": lv.level_index,
            "log_p": lv.log_p,
            "log_ell": lv.log_ell,
            "log_ell_next": lv.log_ell_next,
            "log_h_hat": lv.log_h_hat,
            "log_z_hat": lv.log_z_hat,
            "p_c_hat": lv.p_c_hat,
            "n_samples": lv.n_samples,
            "acceptance_rate": lv.acceptance_rate,
            "acceptance_trace": list(lv.acceptance_trace),
            "lambda_trace": list(lv.lambda_trace),
        })
    return {
        "method": "sus",
        "problem": problem_record(run),
        "config": asdict(run.config),
        "result": {
            "log_evidence": run.log_evidence,
            "reference_log_evidence": run.reference_log_evidence,
            "n_levels": run.n_levels,
            "n_likelihood_calls": run.n_likelihood_calls,
            "terminated_by": run.terminated_by,
            "tail_log_z": run.tail_log_z,
            "final_lambda": run.final_lambda,
            "warnings": list(run.warnings),
        },
        "levels": levels,
    }


def bus_run_record(run: BusRun, metrics=None) -> Dict:
    """Manifest body fields of a BUS run."""
    return {
        "method": "bus",
        "problem": problem_record(run),
        "config": asdict(run.config),
        "result": {
            "log_evidence": run.log_evidence,
            "log_pf": run.log_pf,
            "log_c_inv": run.log_c_inv,
            "n_levels": run.n_levels,
            "n_likelihood_calls": run.n_likelihood_calls,
            "terminated_by": run.terminated_by,
            "warnings": list(run.warnings),
        },
        "levels": [{
            "index": lv.level_index,
            "threshold": lv.threshold,
            "threshold_next": lv.threshold_next,
            "p_hat": lv.p_hat,
            "acceptance_rate": lv.acceptance_rate,
        } for lv in run.levels],
        "uncertainty": None if metrics is None else metrics.to_dict(),
    }


def samples_frame(run: SusRun) -> pd.DataFrame:
    """Every sample of every level: level, chain, step, log_lik, theta_1..theta_d."""
    frames = []
    for lv in run.levels:
        theta = lv.theta(run.prior)
        block = pd.DataFrame({
            "level": lv.level_index,
            "chain": lv.chain_id,
            "step": lv.step,
            "log_lik": lv.log_lik,
        })
        for j in range(theta.shape[1]):
            block[f"theta_{j + 1}"] = theta[:, j]
        frames.append(block)
    return pd.concat(frames, ignore_index=True)


def fpf_frame(run: SusRun) -> pd.DataFrame:
    points = run.fpf_curve()
    return pd.DataFrame({
        "level": [lv.level_index for lv in run.levels],
        "log_ell": [p[0] for p in points],
        "log_p": [p[1] for p in points],
    })


def write_table(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.10g")
    logger.info(f"wrote {path} ({len(frame)} rows)")
    return path


def file_list(paths: Iterable[Path], directory) -> list:
    """Relative names of written files, for the manifest."""
    directory = Path(directory)
    return sorted(str(Path(p).relative_to(directory)) for p in paths)
