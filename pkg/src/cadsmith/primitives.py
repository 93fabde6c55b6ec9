"""Analytic watertight test geometry: boxes, cylinders, tori, revolved profiles.

These builders back the shipped benchmark references and the test suite.
Every solid has a closed-form volume so expected values in tests never come
from the code under test.
"""

from __future__ import annotations

import numpy as np

from .mesh import MeshError, TriMesh

_BOX_CORNERS = np.array([
    [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
    [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
], dtype=np.float64) - 0.5

# Outward-facing quads (counter-clockwise seen from outside).
_BOX_QUADS = [
    (0, 3, 2, 1),  # bottom (-z)
    (4, 5, 6, 7),  # top (+z)
    (0, 1, 5, 4),  # -y
    (2, 3, 7, 6),  # +y
    (1, 2, 6, 5),  # +x
    (3, 0, 4, 7),  # -x
]


def box(size, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Axis-aligned box; `size` is a scalar edge or (sx, sy, sz) in mm."""
    size = np.broadcast_to(np.asarray(size, dtype=np.float64), (3,))
    verts = _BOX_CORNERS * size + np.asarray(center, dtype=np.float64)
    tris = []
    for a, b, c, d in _BOX_QUADS:
        tris.append((a, b, c))
        tris.append((a, c, d))
    return TriMesh(verts, np.array(tris, dtype=np.int64), provenance="box")


def open_box(size, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Box with the +z face removed; handy non-watertight fixture."""
    closed = box(size, center)
    keep = np.concatenate([closed.triangles[:2], closed.triangles[4:]])
    return TriMesh(closed.vertices, keep, provenance="open_box")


def cylinder(radius: float, height: float, segments: int = 64,
             center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Closed cylinder along Z. Tessellated volume is the inscribed-prism
    value n/(2*pi)*sin(2*pi/n)*pi*r^2*h, which tests compare against pi*r^2*h."""
    profile = [(0.0, -height / 2), (radius, -height / 2),
               (radius, height / 2), (0.0, height / 2)]
    mesh = revolve(profile, segments)
    return TriMesh(mesh.vertices + np.asarray(center, dtype=np.float64),
                   mesh.triangles, provenance="cylinder")


def torus(major_radius: float, minor_radius: float,
          n_major: int = 64, n_minor: int = 32,
          center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Torus around Z; analytic volume 2*pi^2*R*r^2."""
    if minor_radius >= major_radius:
        raise MeshError("torus requires minor radius < major radius")
    i = np.arange(n_major)
    j = np.arange(n_minor)
    theta = 2 * np.pi * i / n_major  # around Z
    phi = 2 * np.pi * j / n_minor    # around the tube
    theta, phi = np.meshgrid(theta, phi, indexing="ij")
    r = major_radius + minor_radius * np.cos(phi)
    verts = np.stack([r * np.cos(theta), r * np.sin(theta),
                      minor_radius * np.sin(phi)], axis=-1).reshape(-1, 3)
    tris = []
    for a in range(n_major):
        a2 = (a + 1) % n_major
        for b in range(n_minor):
            b2 = (b + 1) % n_minor
            p00 = a * n_minor + b
            p01 = a * n_minor + b2
            p10 = a2 * n_minor + b
            p11 = a2 * n_minor + b2
            tris.append((p00, p10, p11))
            tris.append((p00, p11, p01))
    verts = verts + np.asarray(center, dtype=np.float64)
    return TriMesh(verts, np.array(tris, dtype=np.int64), provenance="torus")


def revolve(profile_rz, segments: int = 64) -> TriMesh:
    """Revolve a closed polygon in the (r, z) half-plane 360 degrees about Z.

    The profile is a CCW list of (r, z) pairs with r >= 0; consecutive points
    trace the boundary and the last point connects back to the first.
    Vertices at r == 0 become a single apex. The result is watertight; its
    volume is given by Pappus (2*pi * centroid_r * area) which the callers'
    analytic formulas reduce to.
    """
    profile = [(float(r), float(z)) for r, z in profile_rz]
    if len(profile) < 3:
        raise MeshError("revolve profile needs at least 3 points")
    if any(r < 0 for r, _ in profile):
        raise MeshError("revolve profile has negative radius")

    verts: list[tuple[float, float, float]] = []
    ring_of: list[np.ndarray | int] = []  # per profile point: apex index or ring indices
    angles = 2 * np.pi * np.arange(segments) / segments
    cos_a, sin_a = np.cos(angles), np.sin(angles)
    for r, z in profile:
        if r == 0.0:
            ring_of.append(len(verts))
            verts.append((0.0, 0.0, z))
        else:
            base = len(verts)
            for k in range(segments):
                verts.append((r * cos_a[k], r * sin_a[k], z))
            ring_of.append(np.arange(base, base + segments))

    # Winding: with a CCW profile (material to the left of travel) the
    # outward surface normal is obtained by the flipped quad orientation.
    tris: list[tuple[int, int, int]] = []
    n = len(profile)
    for i in range(n):
        j = (i + 1) % n
        a, b = ring_of[i], ring_of[j]
        a_is_apex = isinstance(a, int)
        b_is_apex = isinstance(b, int)
        if a_is_apex and b_is_apex:
            continue  # segment along the axis sweeps out nothing
        for k in range(segments):
            k2 = (k + 1) % segments
            if a_is_apex:
                tris.append((a, b[k2], b[k]))
            elif b_is_apex:
                tris.append((a[k], a[k2], b))
            else:
                tris.append((a[k], b[k2], b[k]))
                tris.append((a[k], a[k2], b[k2]))
    return TriMesh(np.array(verts, dtype=np.float64),
                   np.array(tris, dtype=np.int64), provenance="revolve")


def washer(outer_radius: float, inner_radius: float, height: float,
           segments: int = 64) -> TriMesh:
    """Annular cylinder (bushing); volume pi*(R^2 - r^2)*h."""
    if not 0 < inner_radius < outer_radius:
        raise MeshError("washer requires 0 < inner < outer radius")
    h = height / 2
    profile = [(inner_radius, -h), (outer_radius, -h),
               (outer_radius, h), (inner_radius, h)]
    mesh = revolve(profile, segments)
    return TriMesh(mesh.vertices, mesh.triangles, provenance="washer")


def stepped_revolve(sections, bore_radius: float = 0.0,
                    segments: int = 64) -> TriMesh:
    """Stack of coaxial cylinders described as (radius, z0, z1) sections,
    optionally with a through bore. Sections must be contiguous in z.

    Covers flanges (two sections), couplings (three sections plus bore) and
    stepped shafts. Volume is the sum of pi*(r^2 - bore^2)*(z1 - z0).
    """
    sections = [(float(r), float(z0), float(z1)) for r, z0, z1 in sections]
    if not sections:
        raise MeshError("stepped_revolve needs at least one section")
    for idx in range(len(sections) - 1):
        if abs(sections[idx][2] - sections[idx + 1][1]) > 1e-12:
            raise MeshError("stepped_revolve sections must be contiguous in z")
    if bore_radius and any(r <= bore_radius for r, _, _ in sections):
        raise MeshError("bore radius must be smaller than every section radius")

    # CCW boundary: out along the bottom, up the outer steps, back along the
    # top; the closing edge descends the bore wall (or the bare axis).
    profile: list[tuple[float, float]] = []
    profile.append((bore_radius, sections[0][1]))
    for r, z0, z1 in sections:
        profile.append((r, z0))
        profile.append((r, z1))
    profile.append((bore_radius, sections[-1][2]))
    cleaned = [profile[0]]
    for pt in profile[1:]:
        if pt != cleaned[-1]:
            cleaned.append(pt)
    if cleaned[0] == cleaned[-1]:
        cleaned.pop()
    mesh = revolve(cleaned, segments)
    return TriMesh(mesh.vertices, mesh.triangles, provenance="stepped_revolve")


def plate_with_hole(width: float, depth: float, thickness: float,
                    hole_radius: float, segments: int = 64) -> TriMesh:
    """Rectangular plate with a centered circular through-hole.

    Volume: width*depth*thickness - pi*r^2*thickness (hole area uses the
    inscribed polygon, so tests use the polygon formula when exactness
    matters). The top and bottom faces are ring-triangulated between the
    outer rectangle and the hole circle.
    """
    if segments % 4 != 0:
        raise MeshError("plate_with_hole needs segments divisible by 4")
    if hole_radius * 2 >= min(width, depth):
        raise MeshError("hole does not fit inside the plate")
    half_t = thickness / 2

    # Outer boundary: `segments` points walked CCW from the middle of the +x
    # edge. Every rectangle corner must be a ring point or the prism loses
    # corner volume, so points are allocated per path segment (largest
    # remainder) and each segment contributes its own start point.
    hw, hd = width / 2, depth / 2
    path = [(hw, 0.0), (hw, hd), (-hw, hd), (-hw, -hd), (hw, -hd), (hw, 0.0)]
    seg_lengths = [abs(path[i + 1][0] - path[i][0]) + abs(path[i + 1][1] - path[i][1])
                   for i in range(len(path) - 1)]
    perimeter = sum(seg_lengths)
    quotas = [segments * length / perimeter for length in seg_lengths]
    counts = [max(1, int(q)) for q in quotas]
    remainders = sorted(range(len(quotas)), key=lambda i: quotas[i] - int(quotas[i]),
                        reverse=True)
    for i in remainders:
        if sum(counts) == segments:
            break
        counts[i] += 1
    while sum(counts) > segments:
        counts[max(range(len(counts)), key=lambda i: counts[i])] -= 1
    outer: list[tuple[float, float]] = []
    for i, count in enumerate(counts):
        x0, y0 = path[i]
        x1, y1 = path[i + 1]
        for j in range(count):
            t = j / count
            outer.append((x0 + (x1 - x0) * t, y0 + (y1 - y0) * t))

    angles = 2 * np.pi * np.arange(segments) / segments
    inner = list(zip(hole_radius * np.cos(angles), hole_radius * np.sin(angles)))

    def ring(points2d, z):
        base = len(verts)
        for x, y in points2d:
            verts.append((x, y, z))
        return np.arange(base, base + segments)

    verts: list[tuple[float, float, float]] = []
    out_bot = ring(outer, -half_t)
    out_top = ring(outer, half_t)
    in_bot = ring(inner, -half_t)
    in_top = ring(inner, half_t)

    tris: list[tuple[int, int, int]] = []

    def band(ring_a, ring_b, flip=False):
        # Two rings with matching parameterization -> quad strip.
        for k in range(segments):
            k2 = (k + 1) % segments
            if flip:
                tris.append((ring_a[k], ring_b[k2], ring_b[k]))
                tris.append((ring_a[k], ring_a[k2], ring_b[k2]))
            else:
                tris.append((ring_a[k], ring_b[k], ring_b[k2]))
                tris.append((ring_a[k], ring_b[k2], ring_a[k2]))

    band(out_bot, out_top, flip=True)   # outer wall, normals away from axis
    band(in_bot, in_top)                # hole wall, normals toward the axis
    band(out_top, in_top, flip=True)    # top face annulus, +z
    band(out_bot, in_bot)               # bottom face annulus, -z
    return TriMesh(np.array(verts, dtype=np.float64),
                   np.array(tris, dtype=np.int64), provenance="plate_with_hole")


def merge(*meshes: TriMesh) -> TriMesh:
    """Concatenate meshes into one multi-body mesh (each body stays closed)."""
    if not meshes:
        raise MeshError("merge needs at least one mesh")
    verts = []
    tris = []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += len(m.vertices)
    return TriMesh(np.vstack(verts), np.vstack(tris), provenance="merge")


def l_bracket(leg: float = 40.0, width: float = 20.0, thickness: float = 8.0) -> TriMesh:
    """L-shaped bracket from two stacked boxes; asymmetric ICP fixture.

    Volume: leg*width*thickness + (leg - thickness)*width*thickness.
    """
    base = box((leg, width, thickness), center=(0.0, 0.0, thickness / 2))
    upright = box((thickness, width, leg - thickness),
                  center=(-(leg - thickness) / 2, 0.0, thickness + (leg - thickness) / 2))
    merged = merge(base, upright)
    return TriMesh(merged.vertices, merged.triangles, provenance="l_bracket")
