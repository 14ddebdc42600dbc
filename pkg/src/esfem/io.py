"""Mesh frame files, sequence manifests and result writers.

Frame formats
-------------
``off``
    ASCII: ``OFF`` header line, ``V F E`` counts, ``V`` coordinate lines,
    ``F`` face lines ``3 i j k``. ``#`` starts a comment.
``bin``
    Magic ``b"ESFMESH1"``, then little-endian ``uint32 V``, ``uint32 F``,
    ``V x 3 float64`` coordinates and ``F x 3 uint32`` indices.

Manifest (TOML or JSON)::

    format = "off"          # default frame format
    unit_scale = 1.0        # mesh units -> micrometres
    frame_interval = 4.0    # spacing used when frames carry no time
    [[frames]]
    path = "cell.0000.off"  # relative to the manifest
    time = 0.0
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .geometry import MeshError, MeshSequence, SurfaceMesh, validate_mesh

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

BIN_MAGIC = b"ESFMESH1"
FORMATS = ("off", "bin")
DEFAULT_FRAME_INTERVAL = 4.0


class FormatError(MeshError):
    """Malformed frame or manifest file."""


def _format_for(path: Path, fmt: str | None) -> str:
    if fmt:
        if fmt not in FORMATS:
            raise FormatError(f"unknown frame format {fmt!r}")
        return fmt
    return "bin" if path.suffix.lower() in (".bin", ".esfm") else "off"


def _off_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _read_off(path: Path) -> tuple[np.ndarray, np.ndarray]:
    lines = _off_lines(path.read_text())
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise FormatError(f"{path}: empty file") from None
    tokens = header.split()
    if tokens[0] != "OFF":
        raise FormatError(f"{path}:{lineno}: expected 'OFF' header, got {tokens[0]!r}")
    counts = tokens[1:]
    if not counts:
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise FormatError(f"{path}: missing counts line") from None
        counts = line.split()
    try:
        n_v, n_f = int(counts[0]), int(counts[1])
    except (ValueError, IndexError):
        raise FormatError(f"{path}:{lineno}: malformed counts line {' '.join(counts)!r}") from None
    if n_v < 0 or n_f < 0:
        raise FormatError(f"{path}:{lineno}: negative counts")

    verts = np.empty((n_v, 3))
    for i in range(n_v):
        try:
            lineno, line = next(lines)
            verts[i] = [float(x) for x in line.split()[:3]]
        except StopIteration:
            raise FormatError(f"{path}: file ends after {i} of {n_v} vertices") from None
        except ValueError:
            raise FormatError(f"{path}:{lineno}: malformed vertex line {line!r}") from None
    faces = np.empty((n_f, 3), dtype=np.int64)
    for i in range(n_f):
        try:
            lineno, line = next(lines)
            parts = [int(x) for x in line.split()]
        except StopIteration:
            raise FormatError(f"{path}: file ends after {i} of {n_f} faces") from None
        except ValueError:
            raise FormatError(f"{path}:{lineno}: malformed face line {line!r}") from None
        if parts[0] != 3 or len(parts) < 4:
            raise FormatError(f"{path}:{lineno}: only triangles supported, got {line!r}")
        idx = parts[1:4]
        if min(idx) < 0 or max(idx) >= n_v:
            raise FormatError(f"{path}:{lineno}: face index out of range [0, {n_v}): {line!r}")
        faces[i] = idx
    return verts, faces


def _read_bin(path: Path) -> tuple[np.ndarray, np.ndarray]:
    data = path.read_bytes()
    if data[:8] != BIN_MAGIC:
        raise FormatError(f"{path}@0: bad magic bytes {data[:8]!r}")
    if len(data) < 16:
        raise FormatError(f"{path}@8: truncated header")
    n_v, n_f = struct.unpack_from("<II", data, 8)
    off_v, off_f = 16, 16 + 24 * n_v
    end = off_f + 12 * n_f
    if len(data) != end:
        raise FormatError(f"{path}@{len(data)}: expected {end} bytes for V={n_v}, F={n_f}")
    verts = np.frombuffer(data, dtype="<f8", count=3 * n_v, offset=off_v).reshape(n_v, 3)
    faces = np.frombuffer(data, dtype="<u4", count=3 * n_f, offset=off_f).reshape(n_f, 3)
    bad = np.flatnonzero((faces >= n_v).any(axis=1))
    if bad.size:
        raise FormatError(f"{path}@{off_f + 12 * bad[0]}: face {bad[0]} index out of range")
    return verts.astype(np.float64), faces.astype(np.int64)


def read_mesh_frame(path, fmt: str | None = None, frame_time: float = 0.0, validate: bool = True) -> SurfaceMesh:
    path = Path(path)
    fmt = _format_for(path, fmt)
    verts, faces = _read_off(path) if fmt == "off" else _read_bin(path)
    mesh = SurfaceMesh(verts, faces, frame_time)
    if validate:
        report = validate_mesh(mesh)
        if not report.accepted:
            raise MeshError(f"{path}: {report.violations()[0]}")
    return mesh


def write_mesh_frame(path, mesh: SurfaceMesh, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = _format_for(path, fmt)
    if fmt == "bin":
        with open(path, "wb") as fh:
            fh.write(BIN_MAGIC)
            fh.write(struct.pack("<II", mesh.n_vertices, mesh.n_triangles))
            fh.write(mesh.vertices.astype("<f8").tobytes())
            fh.write(mesh.triangles.astype("<u4").tobytes())
        return
    n_edges = len(mesh.edges)
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles} {n_edges}\n")
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")
        for i, j, k in mesh.triangles.tolist():
            fh.write(f"3 {i} {j} {k}\n")


@dataclass
class SequenceManifest:
    frames: list[tuple[Path, float]]
    unit_scale: float = 1.0
    format: str = "off"

    def __post_init__(self):
        times = [t for _, t in self.frames]
        if not self.frames:
            raise FormatError("manifest lists no frames")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise FormatError("manifest frame times must be strictly increasing")
        if not self.unit_scale > 0:
            raise FormatError("unit_scale must be positive")
        missing = [str(p) for p, _ in self.frames if not p.exists()]
        if missing:
            raise FormatError(f"missing frame files: {', '.join(missing[:3])}")


_MANIFEST_KEYS = {"format", "unit_scale", "frame_interval", "frames"}


def read_manifest(path) -> SequenceManifest:
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text) if path.suffix.lower() == ".json" else tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    unknown = set(doc) - _MANIFEST_KEYS
    if unknown:
        raise FormatError(f"{path}: unknown manifest keys {sorted(unknown)}")
    interval = float(doc.get("frame_interval", DEFAULT_FRAME_INTERVAL))
    frames = []
    for i, entry in enumerate(doc.get("frames", [])):
        if isinstance(entry, str):
            entry = {"path": entry}
        if set(entry) - {"path", "time"}:
            raise FormatError(f"{path}: frame {i} has unknown keys {sorted(set(entry) - {'path', 'time'})}")
        frames.append((path.parent / entry["path"], float(entry.get("time", i * interval))))
    return SequenceManifest(frames, float(doc.get("unit_scale", 1.0)), doc.get("format", "off"))


def load_sequence(manifest: SequenceManifest, frames: int | None = None) -> MeshSequence:
    """Read the manifest's frames; only the first is validated topologically."""
    entries = manifest.frames if frames is None else manifest.frames[:frames]
    first = read_mesh_frame(entries[0][0], manifest.format, entries[0][1])
    out = [first]
    for p, t in entries[1:]:
        m = read_mesh_frame(p, manifest.format, t, validate=False)
        if m.n_vertices != first.n_vertices:
            raise FormatError(f"{p}: {m.n_vertices} vertices, first frame has {first.n_vertices}")
        if not np.array_equal(m.triangles, first.triangles):
            raise FormatError(f"{p}: connectivity differs from the first frame")
        out.append(first.with_vertices(m.vertices, t))
    return MeshSequence(out, validate=False)


def write_manifest(path, frame_paths: Iterable[str], times: Iterable[float], unit_scale: float = 1.0, fmt: str = "off") -> None:
    lines = [f'format = "{fmt}"', f"unit_scale = {unit_scale!r}", ""]
    for p, t in zip(frame_paths, times):
        lines += ["[[frames]]", f'path = "{p}"', f"time = {float(t)!r}", ""]
    Path(path).write_text("\n".join(lines))


def write_vtk_frame(path, mesh: SurfaceMesh, fields: Mapping[str, np.ndarray] | None = None, title: str = "esfem") -> None:
    """Legacy-VTK ASCII polydata with one SCALARS block per field, in order."""
    fields = dict(fields or {})
    for name, vals in fields.items():
        if len(vals) != mesh.n_vertices:
            raise ValueError(f"field {name!r} has {len(vals)} values, mesh has {mesh.n_vertices} vertices")
        if any(c.isspace() for c in name):
            raise ValueError(f"field name {name!r} contains whitespace")
    out = [
        "# vtk DataFile Version 3.0",
        title.splitlines()[0][:255] if title else "esfem",
        "ASCII",
        "DATASET POLYDATA",
        f"POINTS {mesh.n_vertices} double",
    ]
    out += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    out.append(f"POLYGONS {mesh.n_triangles} {4 * mesh.n_triangles}")
    out += [f"3 {i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    if fields:
        out.append(f"POINT_DATA {mesh.n_vertices}")
        for name, vals in fields.items():
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [repr(float(v)) for v in vals]
    Path(path).write_text("\n".join(out) + "\n")


CSV_HEADER = ("time_s", "mean_concentration", "roi_area")


def write_recovery_csv(path, times, means, areas) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in zip(times, means, areas):
            w.writerow([f"{float(x):.17g}" for x in row])


def read_recovery_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise FormatError(f"{path}: expected header {','.join(CSV_HEADER)}")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=np.float64).reshape(-1, 3)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return data[:, 0], data[:, 1], data[:, 2]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, record) -> None:
    """Deterministic JSON (sorted keys); non-finite floats become ``null``."""
    Path(path).write_text(json.dumps(_jsonable(record), indent=2, sort_keys=True, allow_nan=False) + "\n")
