import csv
import hashlib
import json
import os
import time

import numpy as np
from pydantic import ValidationError as SchemaValidationError

from simulation.billiard import TraceLimits
from simulation.rigidity import SamplingSpec, TTSample, TTSet
from simulation.scene import SceneFile, build_scene
from utils.errors import SceneSchemaError
from utils.logger import setup_logger

logger = setup_logger("utils.io")

TTSET_SCHEMA = "ttset-v1"
MANIFEST_NAME = "manifest.json"


def _to_builtin(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def _dumps(data, indent=None):
    return json.dumps(data, default=_to_builtin, sort_keys=True, indent=indent)


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


# ---------------------------- SCENE FILES ----------------------------

def _line_of(text, loc):
    """Best-effort line number of the innermost named field of a schema error."""
    keys = [part for part in loc if isinstance(part, str)]
    if not keys:
        return None
    needle = f'"{keys[-1]}"'
    for number, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return number
    return None


def _parse_model_text(schema, text, source):
    """Validates JSON text against a schema model; problems name the line and field."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneSchemaError(f"{source}: line {e.lineno}: invalid JSON ({e.msg})")

    try:
        return schema.model_validate(raw)
    except SchemaValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or "<root>"
        line = _line_of(text, first["loc"])
        where = f"line {line}, " if line else ""
        raise SceneSchemaError(f"{source}: {where}field {field}: {first['msg']}")


def parse_scene_text(text, source="<scene>"):
    return _parse_model_text(SceneFile, text, source)


def load_scene(path, validate=True):
    """
    Loads and builds a scene from a scene-v1 file.
    Schema errors raise SceneSchemaError; geometric ones the scene errors.
    """
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    spec = parse_scene_text(text, source=os.path.basename(path))
    scene = build_scene(spec, validate=validate)
    logger.debug(f"Loaded scene {path} ({len(scene.obstacles)} obstacles, hash {scene.hash[:12]})")
    return scene


def store_scene(path, scene):
    store_json(path, scene.description)


def load_sampling_spec(path):
    """Sampling spec JSON; schema errors raise SceneSchemaError like scene files."""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    return _parse_model_text(SamplingSpec, text, os.path.basename(path))


# ---------------------------- GENERIC STORES ----------------------------

def store_json(path, data):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write(_dumps(data, indent=2))
        f.write("\n")
    return path


def store_jsonl(path, records):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(_dumps(record))
            f.write("\n")
    return path


def load_jsonl(path):
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def store_csv(path, header, rows):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def store_text(path, text):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path


# ---------------------------- TTSET FILES ----------------------------

def store_tt_set(path, tt):
    """
    ttset-v1 JSON lines: one header record, then one record per launch.
    """
    start_time = time.time()
    header = {"schema": TTSET_SCHEMA, **tt.header()}
    store_jsonl(path, [header] + [s.to_dict() for s in tt.samples])
    duration = time.time() - start_time
    logger.debug(f"Stored {len(tt.samples)} samples to {path} in {duration:.2f}s")
    return path


def load_tt_set(path):
    records = load_jsonl(path)
    if not records or records[0].get("schema") != TTSET_SCHEMA:
        raise SceneSchemaError(f"{os.path.basename(path)}: line 1: field schema: expected '{TTSET_SCHEMA}'")

    header = records[0]
    limits = header["limits"]
    return TTSet(
        samples=[TTSample.from_dict(r) for r in records[1:]],
        spec=SamplingSpec.model_validate(header["spec"]),
        scene_hash=header["scene_hash"],
        limits=TraceLimits(limits["t_max"], limits["n_max"], limits["tangency_eps"]),
        dim=int(header["dim"]),
        boundary_scale=float(header["boundary_scale"]),
        D=float(header["D"]),
    )


def tt_set_rows(tt):
    """CSV rows: index, outcome, t, n_reflections, n_tangential, flagged, foot_*, direction_*, y_foot_*."""
    dim = tt.dim
    header = (["index", "outcome", "t", "n_reflections", "n_tangential", "flagged"]
              + [f"foot_{i}" for i in range(dim)]
              + [f"direction_{i}" for i in range(dim)]
              + [f"y_foot_{i}" for i in range(dim)])
    rows = []
    for s in tt.samples:
        y_foot = s.y_foot.tolist() if s.y_foot is not None else [""] * dim
        t = s.t if s.t is not None else ""
        rows.append([s.index, s.outcome, t, s.n_reflections, s.n_tangential, int(s.flagged)]
                    + s.foot.tolist() + s.direction.tolist() + y_foot)
    return header, rows


# ---------------------------- TRACES AND FRONT LOGS ----------------------------

def store_trace(path, trace):
    """Trace dump: the launch, one line per event, then the terminal state."""
    records = [{"record": "sigma", "x": trace.sigma0.x, "v": trace.sigma0.v}]
    records += [{"record": "event", **e.to_dict()} for e in trace.events]
    terminal = trace.terminal
    if hasattr(terminal, "v"):
        records.append({"record": "exit", "x": terminal.x, "t": terminal.t, "v": terminal.v})
    else:
        records.append({"record": "trapped", "reason": terminal.reason, "t": terminal.t})
    records[-1]["flagged"] = trace.flagged
    return store_jsonl(path, records)


def store_front_log(path, steps):
    return store_jsonl(path, [s.to_dict() for s in steps])


# ---------------------------- MANIFEST ----------------------------

def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, files, config):
    """
    manifest.json: every artifact with its sha256, the run config and seed.
    Contents carry no timestamps, so identical runs hash identically.
    """
    entries = {}
    for path in sorted(files):
        rel = os.path.relpath(path, out_dir)
        entries[rel] = file_sha256(path)
    manifest = {
        "command": config.command,
        "seed": config.options.seed,
        "config": json.loads(config.model_dump_json()),
        "files": entries,
    }
    path = store_json(os.path.join(out_dir, MANIFEST_NAME), manifest)
    logger.info(f"Wrote manifest with {len(entries)} files to {path}")
    return path
