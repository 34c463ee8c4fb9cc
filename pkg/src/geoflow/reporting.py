"""Deterministic result persistence: canonical JSON, run manifests, digests.

Report JSON is byte-reproducible for a fixed config and seed: keys are
sorted, floats are printed with 17 significant digits, and no timestamps
enter report files (wall time lives in the manifest only).
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

TOOL_VERSION = "0.1.0"


def _canon(obj):
    if isinstance(obj, dict):
        return {str(k): _canon(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_canon(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_value(out, obj):
    if obj is None or isinstance(obj, bool):
        out.append("null" if obj is None else ("true" if obj else "false"))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        if not math.isfinite(obj):
            out.append("null")
        elif obj == int(obj) and abs(obj) < 1e15:
            out.append(f"{obj:.1f}")
        else:
            out.append(f"{obj:.17g}")
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if i:
                out.append(",")
            out.append(json.dumps(str(key)))
            out.append(":")
            _write_value(out, obj[key])
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _write_value(out, v)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj)!r}")


def deterministic_json(obj) -> str:
    """Canonical JSON text: sorted keys, 17-significant-digit floats."""
    out: list[str] = []
    _write_value(out, _canon(obj))
    out.append("\n")
    return "".join(out)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def config_hash(config: dict) -> str:
    return sha256_bytes(deterministic_json(config).encode())[:16]


class RunWriter:
    """Writes experiment artifacts under <out>/<experiment>/<config-hash>/
    and finishes with a manifest listing every file with its digest."""

    def __init__(self, out_dir, experiment: str, config: dict):
        self.config = config
        self.hash = config_hash(config)
        self.dir = Path(out_dir) / experiment / self.hash
        self.dir.mkdir(parents=True, exist_ok=True)
        self.artifacts: list[Path] = []

    def write_json(self, name: str, obj) -> Path:
        path = self.dir / name
        path.write_text(deterministic_json(obj))
        self.artifacts.append(path)
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self.dir / name
        path.write_text(text)
        self.artifacts.append(path)
        return path

    def write_frames_jsonl(self, name: str, run_result) -> Path:
        lines = []
        for t, frame in zip(run_result.frame_times, run_result.frames):
            rec = {"t": float(t)}
            rec.update(frame.to_frame_dict())
            lines.append(deterministic_json(rec).rstrip("\n"))
        path = self.dir / name
        path.write_text("\n".join(lines) + "\n")
        self.artifacts.append(path)
        return path

    def finish(self, wall_time_s: float) -> Path:
        manifest = {
            "config_hash": self.hash,
            "tool_version": TOOL_VERSION,
            "config": self.config,
            "artifacts": [
                {"path": p.name, "sha256": sha256_file(p)} for p in sorted(self.artifacts)
            ],
            "wall_time_s": wall_time_s,
        }
        path = self.dir / "manifest.json"
        path.write_text(deterministic_json(manifest))
        return path
