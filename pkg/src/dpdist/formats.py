"""File formats: OFF meshes, XYZ point clouds, and the DPD1 model archive.

Parsers operate on text and report errors with 1-based line numbers; thin
path-based wrappers handle files.  The model archive is a little-endian
binary container (magic ``DPD1``, 64-bit lengths, 32-bit weights, trailing
CRC32) whose round trip reproduces bit-identical forward outputs.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .geometry import TriangleMesh, as_cloud

__all__ = [
    "MeshParseError",
    "ArchiveFormatError",
    "ArchiveIntegrityError",
    "parse_off",
    "format_off",
    "read_off",
    "write_off",
    "parse_xyz",
    "format_xyz",
    "read_xyz",
    "write_xyz",
    "save_model",
    "load_model",
]

ARCHIVE_MAGIC = b"DPD1"
ARCHIVE_VERSION = 1


class MeshParseError(ValueError):
    """Malformed OFF or XYZ text; the message carries the offending line number."""


class ArchiveFormatError(ValueError):
    """Model archive has wrong magic bytes or an unsupported version."""


class ArchiveIntegrityError(ValueError):
    """Model archive is truncated or fails its checksum."""


def _content_lines(text: str):
    """Yield (line_number, stripped_line) skipping blanks and '#' comments."""
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield number, line


def parse_off(text: str) -> TriangleMesh:
    """Parse OFF text into a triangle mesh; faces with more than three
    vertices are fan-triangulated as (0,1,2), (0,2,3), ...
    """
    lines = _content_lines(text)
    try:
        number, header = next(lines)
    except StopIteration:
        raise MeshParseError("line 1: empty OFF document") from None
    if header != "OFF":
        raise MeshParseError(f"line {number}: expected 'OFF' header, got {header!r}")
    try:
        number, counts = next(lines)
    except StopIteration:
        raise MeshParseError(f"line {number}: missing counts line") from None
    parts = counts.split()
    if len(parts) != 3:
        raise MeshParseError(f"line {number}: counts line must have 3 integers")
    try:
        n_vertices, n_faces, _n_edges = (int(p) for p in parts)
    except ValueError:
        raise MeshParseError(f"line {number}: counts line must have 3 integers") from None
    if n_vertices < 0 or n_faces < 0:
        raise MeshParseError(f"line {number}: negative count")

    vertices = np.empty((n_vertices, 3))
    for i in range(n_vertices):
        try:
            number, line = next(lines)
        except StopIteration:
            raise MeshParseError(f"line {number}: expected {n_vertices} vertices, found {i}") from None
        fields = line.split()
        if len(fields) != 3:
            raise MeshParseError(f"line {number}: vertex needs 3 coordinates, got {len(fields)}")
        try:
            vertices[i] = [float(f) for f in fields]
        except ValueError:
            raise MeshParseError(f"line {number}: bad vertex coordinate") from None

    triangles = []
    for i in range(n_faces):
        try:
            number, line = next(lines)
        except StopIteration:
            raise MeshParseError(f"line {number}: expected {n_faces} faces, found {i}") from None
        fields = line.split()
        try:
            values = [int(f) for f in fields]
        except ValueError:
            raise MeshParseError(f"line {number}: bad face index") from None
        if not values or len(values) != values[0] + 1 or values[0] < 3:
            raise MeshParseError(f"line {number}: face line must read 'n i1 ... in' with n >= 3")
        idx = values[1:]
        if any(j < 0 or j >= n_vertices for j in idx):
            raise MeshParseError(f"line {number}: vertex index out of range")
        for a, b in zip(idx[1:-1], idx[2:]):
            triangles.append((idx[0], a, b))

    tri = np.array(triangles, dtype=np.int64).reshape(len(triangles), 3)
    return TriangleMesh(vertices, tri)


def format_off(mesh: TriangleMesh) -> str:
    out = ["OFF", f"{mesh.n_vertices} {mesh.n_triangles} 0"]
    out.extend(" ".join(repr(float(c)) for c in v) for v in mesh.vertices)
    out.extend(f"3 {t[0]} {t[1]} {t[2]}" for t in mesh.triangles)
    return "\n".join(out) + "\n"


def read_off(path) -> TriangleMesh:
    return parse_off(Path(path).read_text())


def write_off(path, mesh: TriangleMesh):
    Path(path).write_text(format_off(mesh))


def parse_xyz(text: str) -> np.ndarray:
    """Parse XYZ text (one 'x y z' triple per line, '#' comments) into a cloud."""
    points = []
    for number, line in _content_lines(text):
        fields = line.split()
        if len(fields) != 3:
            raise MeshParseError(f"line {number}: expected 3 columns, got {len(fields)}")
        try:
            points.append([float(f) for f in fields])
        except ValueError:
            raise MeshParseError(f"line {number}: bad coordinate") from None
    if not points:
        raise MeshParseError("line 1: no points found")
    return as_cloud(points)


def format_xyz(cloud) -> str:
    # repr(float) keeps every significant digit, so parse(format(c)) == c exactly.
    pts = as_cloud(cloud)
    return "\n".join(" ".join(repr(float(c)) for c in p) for p in pts) + "\n"


def read_xyz(path) -> np.ndarray:
    return parse_xyz(Path(path).read_text())


def write_xyz(path, cloud):
    Path(path).write_text(format_xyz(cloud))


def _pack_archive(model) -> bytes:
    tensors = model.named_tensors()
    header = {
        "k": model.k,
        "fisher_channels": model.fisher_channels,
        "hidden": list(model.hidden),
        "grid_size": model.grid_size,
        "sigma": model.sigma,
        "metadata": dict(model.metadata),
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in tensors],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [ARCHIVE_MAGIC, struct.pack("<I", ARCHIVE_VERSION), struct.pack("<Q", len(header_bytes)), header_bytes]
    for _, arr in tensors:
        payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(payload)
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_model(model, sink):
    """Write a model to a path or binary file object.

    Weights are stored as 32-bit floats; models produced by this package keep
    their parameters on the 32-bit grid, so a save/load round trip reproduces
    forward outputs bit for bit.
    """
    blob = _pack_archive(model)
    if hasattr(sink, "write"):
        sink.write(blob)
    else:
        Path(sink).write_bytes(blob)


def load_model(source):
    """Read a model archive from a path, binary file object, or bytes."""
    # Imported here: the network module depends on dataset generation, which
    # depends on this module, so a top-level import would be circular.
    from .network import MlpModel

    if isinstance(source, (bytes, bytearray)):
        blob = bytes(source)
    elif hasattr(source, "read"):
        blob = source.read()
    else:
        blob = Path(source).read_bytes()

    if len(blob) < 4 or blob[:4] != ARCHIVE_MAGIC:
        raise ArchiveFormatError("not a model archive (bad magic bytes)")
    if len(blob) < 20:
        raise ArchiveIntegrityError("archive truncated before header")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    actual_crc = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ArchiveIntegrityError(f"checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}")

    version = struct.unpack("<I", blob[4:8])[0]
    if version != ARCHIVE_VERSION:
        raise ArchiveFormatError(f"unsupported archive version {version}")
    header_len = struct.unpack("<Q", blob[8:16])[0]
    offset = 16
    if offset + header_len > len(blob) - 4:
        raise ArchiveIntegrityError("archive truncated inside header")
    try:
        header = json.loads(blob[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveIntegrityError(f"malformed archive header: {exc}") from None
    offset += header_len

    tensors = {}
    for spec_entry in header["tensors"]:
        if offset + 8 > len(blob) - 4:
            raise ArchiveIntegrityError("archive truncated before tensor length")
        payload_len = struct.unpack("<Q", blob[offset : offset + 8])[0]
        offset += 8
        if offset + payload_len > len(blob) - 4:
            raise ArchiveIntegrityError(f"archive truncated inside tensor {spec_entry['name']!r}")
        shape = tuple(spec_entry["shape"])
        expected = int(np.prod(shape, dtype=np.int64)) * 4
        if payload_len != expected:
            raise ArchiveIntegrityError(
                f"tensor {spec_entry['name']!r}: payload {payload_len} bytes, shape needs {expected}"
            )
        data = np.frombuffer(blob, dtype="<f4", count=expected // 4, offset=offset)
        tensors[spec_entry["name"]] = data.reshape(shape).astype(np.float64)
        offset += payload_len
    if offset != len(blob) - 4:
        raise ArchiveIntegrityError("archive has trailing bytes after tensors")

    return MlpModel.from_tensors(header, tensors)
