"""Checkpoints, CSV tables and PPM heatmaps.

Checkpoints are JSON documents whose arrays are base64 strings of
little-endian float64 bytes, so saving and loading is bit-exact and two
saves of the same network produce the same file.
"""

from __future__ import annotations

import base64
import csv
import hashlib
import io
import json
import os
from pathlib import Path

import numpy as np

from .nn import Mlp, MlpCritic, MlpGenerator

FORMAT_VERSION = "1.0"
ROLES = {"generator": MlpGenerator, "critic": MlpCritic}


class CheckpointError(ValueError):
    pass


class CsvFormatError(ValueError):
    pass


def _major(version: str) -> int:
    try:
        return int(str(version).split(".")[0])
    except ValueError:
        raise CheckpointError(f"unrecognized checkpoint format version {version!r}") from None


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """sha256 of the canonical JSON form of ``obj``."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d: dict, what: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in d["shape"])
        raw = base64.b64decode(d["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{what}: bad array record ({exc})") from None
    if len(raw) != 8 * int(np.prod(shape, dtype=np.int64)):
        raise CheckpointError(f"{what}: {len(raw)} bytes do not fill shape {shape}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def atomic_write(path, data: str | bytes) -> None:
    """Write through a sibling temp file so readers never see a partial file."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode, **({} if isinstance(data, bytes) else {"newline": ""})) as fh:
        fh.write(data)
    os.replace(tmp, path)


def checkpoint_dict(net: Mlp, metadata: dict | None = None) -> dict:
    role = "critic" if isinstance(net, MlpCritic) else "generator"
    doc = {
        "format_version": FORMAT_VERSION,
        "role": role,
        "dims": net.dims,
        "layers": [{"W": encode_array(w), "b": encode_array(b)} for w, b in zip(net.weights, net.biases)],
        "metadata": dict(metadata or {}),
    }
    if role == "critic":
        doc["spectral"] = [{"u": encode_array(u), "v": encode_array(v)} for u, v in zip(net.u, net.v)]
    return doc


def save_checkpoint(path, net: Mlp, metadata: dict | None = None) -> None:
    atomic_write(path, json.dumps(checkpoint_dict(net, metadata), sort_keys=True, indent=1) + "\n")


def load_checkpoint(path, role: str | None = None) -> tuple[Mlp, dict]:
    """Read a checkpoint; returns the network and its metadata.

    Any major format version other than ours is refused.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: malformed or truncated checkpoint ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise CheckpointError(f"{path}: not a checkpoint (no format_version)")
    version = doc["format_version"]
    if _major(version) != _major(FORMAT_VERSION):
        raise CheckpointError(f"{path}: checkpoint format version {version} is not supported by this reader (version {FORMAT_VERSION})")
    for key in ("role", "dims", "layers", "metadata"):
        if key not in doc:
            raise CheckpointError(f"{path}: missing field {key!r}")
    if doc["role"] not in ROLES:
        raise CheckpointError(f"{path}: unknown role {doc['role']!r}")
    if role is not None and doc["role"] != role:
        raise CheckpointError(f"{path}: expected a {role} checkpoint, found {doc['role']}")
    weights, biases = [], []
    for i, layer in enumerate(doc["layers"]):
        weights.append(decode_array(layer.get("W", {}), f"{path}: layer {i} W"))
        biases.append(decode_array(layer.get("b", {}), f"{path}: layer {i} b"))
    extra = {}
    if doc["role"] == "critic":
        spectral = doc.get("spectral")
        if spectral is None or len(spectral) != len(weights):
            raise CheckpointError(f"{path}: critic needs one spectral record per layer")
        extra["u"] = [decode_array(s.get("u", {}), f"{path}: layer {i} u") for i, s in enumerate(spectral)]
        extra["v"] = [decode_array(s.get("v", {}), f"{path}: layer {i} v") for i, s in enumerate(spectral)]
    try:
        net = ROLES[doc["role"]](weights, biases, **extra)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    if net.dims != list(doc["dims"]):
        raise CheckpointError(f"{path}: dims {doc['dims']} do not match arrays {net.dims}")
    if extra:
        for i, (w, u, v) in enumerate(zip(net.weights, net.u, net.v)):
            if u.shape != (w.shape[0],) or v.shape != (w.shape[1],):
                raise CheckpointError(f"{path}: layer {i} spectral vectors do not match weight {w.shape}")
    return net, doc["metadata"]


# -- CSV ------------------------------------------------------------------


def _cell(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    return str(x)


def write_csv(path, header: list[str], rows) -> None:
    """Floats are written with ``repr`` so they read back exactly."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(x) for x in row])
    atomic_write(path, buf.getvalue())


def read_csv(path, expect: list[str] | None = None) -> tuple[list[str], np.ndarray]:
    """Read an all-numeric CSV with a header row into a float array."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file, expected a header row") from None
        if expect is not None and header != expect:
            raise CsvFormatError(f"{path}:1: header {header} != expected {expect}")
        rows = []
        for row in reader:
            line = reader.line_num
            if len(row) != len(header):
                raise CsvFormatError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(x) for x in row]
            except ValueError:
                raise CsvFormatError(f"{path}:{line}: non-numeric field in {row}") from None
            if not all(np.isfinite(vals)):
                raise CsvFormatError(f"{path}:{line}: non-finite value in {row}")
            rows.append(vals)
    return header, np.array(rows, dtype=np.float64).reshape(len(rows), len(header))


# -- heatmap ----------------------------------------------------------------


def _ramp(t: np.ndarray) -> np.ndarray:
    # black -> red -> yellow -> white
    r = np.clip(3 * t, 0, 1)
    g = np.clip(3 * t - 1, 0, 1)
    b = np.clip(3 * t - 2, 0, 1)
    return np.round(255 * np.stack([r, g, b], axis=-1)).astype(int)


def write_ppm(path, values: np.ndarray, note: str = "") -> None:
    """Plain (P3) pixmap of ``values[i, j]`` with row 0 at the bottom.

    Colours are scaled by the grid's own min and max, recorded in a header comment.
    """
    lo, hi = float(values.min()), float(values.max())
    t = np.full(values.shape, 0.5) if hi == lo else (values - lo) / (hi - lo)
    rgb = _ramp(t[::-1])
    ny, nx = values.shape
    lines = ["P3", f"# per-grid min-max normalization: min={lo!r} max={hi!r}"]
    if note:
        lines.append(f"# {note}")
    lines += [f"{nx} {ny}", "255"]
    lines += [" ".join(str(c) for c in row.ravel()) for row in rgb]
    atomic_write(path, "\n".join(lines) + "\n")
