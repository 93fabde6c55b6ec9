"""Triangle meshes in millimeter coordinates: STL I/O and geometric measurements.

Everything downstream (metrics, alignment, rendering, benchmark references)
operates on the `TriMesh` defined here. Meshes are immutable after
construction; all functions are pure.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

# STL files store one vertex triple per facet, so identical corners arrive
# duplicated. Welding at this tolerance restores shared vertices, which the
# edge-manifold (watertightness) check depends on.
WELD_TOLERANCE_MM = 1e-6

_BINARY_HEADER_BYTES = 80
_BINARY_RECORD_BYTES = 50


class MeshError(ValueError):
    """Raised for malformed STL input or invalid mesh construction."""


@dataclass(frozen=True)
class Bbox:
    """Axis-aligned bounding box, min/max corners in mm."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        if not np.all(lo <= hi):
            raise MeshError(f"bbox min {lo} exceeds max {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def center(self) -> np.ndarray:
        return (self.min + self.max) / 2.0

    @property
    def extents(self) -> np.ndarray:
        return self.max - self.min

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extents))

    def union(self, other: "Bbox") -> "Bbox":
        return Bbox(np.minimum(self.min, other.min), np.maximum(self.max, other.max))


@dataclass(frozen=True)
class TriMesh:
    """Indexed triangle mesh. Vertices (n,3) float64 mm, triangles (m,3) int."""

    vertices: np.ndarray
    triangles: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (n,3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError(f"triangles must be (m,3), got {t.shape}")
        if len(t) == 0:
            raise MeshError("mesh has no triangles")
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinates")
        if t.min(initial=0) < 0 or t.max(initial=-1) >= len(v):
            raise MeshError("triangle index out of range")
        if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise MeshError("triangle with repeated vertex index")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def bbox(self) -> Bbox:
        return Bbox(self.vertices.min(axis=0), self.vertices.max(axis=0))

    def corners(self) -> np.ndarray:
        """Per-triangle corner coordinates, shape (m, 3, 3)."""
        return self.vertices[self.triangles]

    def triangle_areas(self) -> np.ndarray:
        c = self.corners()
        cross = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "TriMesh":
        r = np.asarray(rotation, dtype=np.float64)
        t = np.asarray(translation, dtype=np.float64).reshape(3)
        return TriMesh(self.vertices @ r.T + t, self.triangles, self.provenance)

    def translated(self, offset) -> "TriMesh":
        return TriMesh(self.vertices + np.asarray(offset, dtype=np.float64),
                       self.triangles, self.provenance)


@dataclass(frozen=True)
class MeshStats:
    """Mesh-level measurements: volume, bbox, center of mass, topology flags."""

    volume_mm3: float
    bbox: Bbox
    center_of_mass: np.ndarray
    triangle_count: int
    is_watertight: bool
    inverted_orientation: bool = False

    def __post_init__(self):
        com = np.asarray(self.center_of_mass, dtype=np.float64).reshape(3)
        com.setflags(write=False)
        object.__setattr__(self, "center_of_mass", com)


def weld_vertices(vertices: np.ndarray, triangles: np.ndarray,
                  tolerance: float = WELD_TOLERANCE_MM) -> tuple[np.ndarray, np.ndarray]:
    """Merge vertices closer than `tolerance` and drop collapsed triangles.

    Coordinates are snapped onto a grid of `tolerance` spacing; vertices in the
    same cell merge. Good enough for export duplication, not a mesh repair.
    """
    v = np.asarray(vertices, dtype=np.float64)
    keys = np.round(v / tolerance).astype(np.int64)
    _, first_index, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    welded = v[first_index]
    remapped = inverse[np.asarray(triangles, dtype=np.int64)]
    degenerate = ((remapped[:, 0] == remapped[:, 1])
                  | (remapped[:, 1] == remapped[:, 2])
                  | (remapped[:, 0] == remapped[:, 2]))
    return welded, remapped[~degenerate]


def _looks_ascii(head: bytes) -> bool:
    if not head.lstrip().startswith(b"solid"):
        return False
    # Binary headers may also begin with "solid"; real ASCII files mention
    # "facet" in the early body.
    return b"facet" in head


def load_stl(path) -> TriMesh:
    """Load a binary or ASCII STL file into a welded TriMesh.

    Raises MeshError for malformed input, with the byte offset (binary) or
    line number (ASCII) of the problem.
    """
    path = str(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) == 0:
        raise MeshError(f"{path}: empty file")
    if _looks_ascii(raw[:512]):
        vertices, triangles = _parse_ascii(raw, path)
    else:
        vertices, triangles = _parse_binary(raw, path)
    if len(triangles) == 0:
        raise MeshError(f"{path}: STL contains no triangles")
    welded, tris = weld_vertices(vertices, triangles)
    if len(tris) == 0:
        raise MeshError(f"{path}: all triangles degenerate after welding")
    if not np.all(np.isfinite(welded)):
        raise MeshError(f"{path}: non-finite vertex coordinates")
    return TriMesh(welded, tris, provenance=path)


def _parse_binary(raw: bytes, path: str) -> tuple[np.ndarray, np.ndarray]:
    if len(raw) < _BINARY_HEADER_BYTES + 4:
        raise MeshError(
            f"{path}: binary STL truncated at byte {len(raw)}, "
            f"header needs {_BINARY_HEADER_BYTES + 4} bytes")
    (count,) = struct.unpack_from("<I", raw, _BINARY_HEADER_BYTES)
    expected = _BINARY_HEADER_BYTES + 4 + count * _BINARY_RECORD_BYTES
    if len(raw) != expected:
        actual = (len(raw) - _BINARY_HEADER_BYTES - 4) // _BINARY_RECORD_BYTES
        raise MeshError(
            f"{path}: binary STL declares {count} triangles but payload holds "
            f"{actual} (file is {len(raw)} bytes, expected {expected}; "
            f"error at byte offset {min(len(raw), expected)})")
    if count == 0:
        raise MeshError(f"{path}: binary STL declares 0 triangles")
    record = np.dtype([
        ("normal", "<f4", 3),
        ("verts", "<f4", (3, 3)),
        ("attr", "<u2"),
    ])
    body = np.frombuffer(raw, dtype=record, count=count, offset=_BINARY_HEADER_BYTES + 4)
    verts = body["verts"].astype(np.float64).reshape(-1, 3)
    tris = np.arange(3 * count, dtype=np.int64).reshape(-1, 3)
    return verts, tris


def _parse_ascii(raw: bytes, path: str) -> tuple[np.ndarray, np.ndarray]:
    verts: list[tuple[float, float, float]] = []
    pending: list[tuple[float, float, float]] = []
    tris: list[tuple[int, int, int]] = []
    in_loop = False
    for lineno, line in enumerate(raw.decode("ascii", errors="replace").splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        key = tokens[0].lower()
        if key == "vertex":
            if len(tokens) != 4:
                raise MeshError(f"{path}:{lineno}: vertex line needs 3 coordinates")
            try:
                pending.append((float(tokens[1]), float(tokens[2]), float(tokens[3])))
            except ValueError as exc:
                raise MeshError(f"{path}:{lineno}: bad vertex coordinate: {exc}") from exc
        elif key == "outer":
            in_loop = True
            pending = []
        elif key == "endloop":
            if len(pending) != 3:
                raise MeshError(
                    f"{path}:{lineno}: facet loop has {len(pending)} vertices, expected 3")
            base = len(verts)
            verts.extend(pending)
            tris.append((base, base + 1, base + 2))
            in_loop = False
        elif key in ("facet", "endfacet", "solid", "endsolid"):
            continue
        else:
            raise MeshError(f"{path}:{lineno}: unexpected token {tokens[0]!r}")
    if in_loop:
        raise MeshError(f"{path}: unterminated facet loop at end of file")
    if not tris:
        raise MeshError(f"{path}: ASCII STL contains no facets")
    return np.array(verts, dtype=np.float64), np.array(tris, dtype=np.int64)


def save_stl(mesh: TriMesh, path) -> None:
    """Write binary STL (deterministic bytes: fixed header, zero attributes)."""
    path = str(path)
    corners = mesh.corners().astype(np.float32)
    cross = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    norms = np.linalg.norm(cross, axis=1, keepdims=True)
    normals = np.divide(cross, norms, out=np.zeros_like(cross), where=norms > 0)
    count = len(mesh.triangles)
    record = np.zeros(count, dtype=np.dtype([
        ("normal", "<f4", 3),
        ("verts", "<f4", (3, 3)),
        ("attr", "<u2"),
    ]))
    record["normal"] = normals
    record["verts"] = corners
    header = b"cadsmith binary stl".ljust(_BINARY_HEADER_BYTES, b" ")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(struct.pack("<I", count))
        fh.write(record.tobytes())


def mesh_stats(mesh: TriMesh) -> MeshStats:
    """Volume, bbox, center of mass and watertightness of a mesh.

    Volume comes from the signed-tetrahedron sum (divergence theorem) and is
    reported as an absolute value; a negative signed sum only sets
    `inverted_orientation`, since generated STLs sometimes carry flipped
    winding. Watertight means every undirected edge is shared by exactly two
    triangles with opposite winding.
    """
    corners = mesh.corners()
    signed_tet = np.einsum("ij,ij->i", corners[:, 0],
                           np.cross(corners[:, 1], corners[:, 2])) / 6.0
    signed_volume = float(signed_tet.sum())
    volume = abs(signed_volume)

    if volume > 1e-12:
        tet_centroids = corners.sum(axis=1) / 4.0
        com = (signed_tet[:, None] * tet_centroids).sum(axis=0) / signed_volume
    else:
        com = mesh.vertices.mean(axis=0)

    return MeshStats(
        volume_mm3=volume,
        bbox=mesh.bbox,
        center_of_mass=com,
        triangle_count=len(mesh.triangles),
        is_watertight=_is_watertight(mesh.triangles),
        inverted_orientation=signed_volume < 0,
    )


def _is_watertight(triangles: np.ndarray) -> bool:
    t = triangles
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    # Opposite winding on a shared edge means each directed edge is unique
    # and its reverse appears exactly once.
    d_keys = directed[:, 0] << np.int64(32) | directed[:, 1]
    if len(np.unique(d_keys)) != len(d_keys):
        return False
    lo = np.minimum(directed[:, 0], directed[:, 1])
    hi = np.maximum(directed[:, 0], directed[:, 1])
    u_keys = lo << np.int64(32) | hi
    _, counts = np.unique(u_keys, return_counts=True)
    return bool(np.all(counts == 2))


def sample_surface(mesh: TriMesh, n: int, seed: int) -> np.ndarray:
    """Draw n points uniformly by area from the mesh surface (deterministic).

    Triangles are selected by area-weighted inverse CDF, points placed with
    the square-root barycentric trick. Raises MeshError when every triangle
    is degenerate (zero total area).
    """
    if n < 1:
        raise MeshError(f"sample count must be >= 1, got {n}")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0.0:
        raise MeshError("cannot sample: mesh has zero total surface area")
    cdf = np.cumsum(areas)
    rng = np.random.default_rng(seed)
    pick = np.searchsorted(cdf, rng.random(n) * total, side="right")
    pick = np.minimum(pick, len(areas) - 1)
    corners = mesh.corners()[pick]
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    w0 = 1.0 - r1
    w1 = r1 * (1.0 - r2)
    w2 = r1 * r2
    return (w0[:, None] * corners[:, 0]
            + w1[:, None] * corners[:, 1]
            + w2[:, None] * corners[:, 2])
