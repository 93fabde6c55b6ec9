"""Co-registration of generated and reference meshes before metric computation.

Both meshes are first translated so their bounding-box centers coincide, then
point-to-point ICP (closed-form SVD step per iteration) removes orientation
mismatch. No scale is ever estimated: evaluation happens in absolute
millimeters, so rescaling would defeat the point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriMesh, sample_surface

_ORTHO_TOL = 1e-9


class AlignmentError(ValueError):
    """Raised for degenerate registration input."""


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (3x3, det +1) plus translation, mapping x -> R x + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise AlignmentError("rotation is not orthonormal")
        if np.linalg.det(r) < 0:
            raise AlignmentError("rotation has negative determinant (reflection)")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def compose(self, inner: "RigidTransform") -> "RigidTransform":
        """self after inner: x -> self(inner(x))."""
        return RigidTransform(self.rotation @ inner.rotation,
                              self.rotation @ inner.translation + self.translation)

    def is_near_identity(self, tol: float = 1e-6) -> bool:
        return (np.abs(self.rotation - np.eye(3)).max() < tol
                and np.abs(self.translation).max() < tol)

    def to_json(self) -> dict:
        return {
            "rotation_row_major": [float(x) for x in self.rotation.ravel()],
            "translation_mm": [float(x) for x in self.translation],
        }

    @classmethod
    def from_json(cls, data: dict) -> "RigidTransform":
        return cls(np.array(data["rotation_row_major"], dtype=np.float64).reshape(3, 3),
                   np.array(data["translation_mm"], dtype=np.float64))


@dataclass(frozen=True)
class IcpConfig:
    n_points: int = 2000
    max_iters: int = 50
    convergence_rms_delta_mm: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.n_points < 3 or self.max_iters < 1:
            raise AlignmentError("n_points >= 3 and max_iters >= 1 required")
        if self.convergence_rms_delta_mm <= 0:
            raise AlignmentError("convergence delta must be positive")


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    icp_rms_mm: float
    converged: bool
    iterations: int


def optimal_rigid(src_pts: np.ndarray, dst_pts: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform mapping paired src onto dst (Kabsch).

    Reflections from the SVD are corrected by flipping the smallest singular
    axis. Degenerate (collinear or coincident) point sets raise.
    """
    src = np.asarray(src_pts, dtype=np.float64)
    dst = np.asarray(dst_pts, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise AlignmentError("paired (n,3) point sets required")
    if len(src) < 3:
        raise AlignmentError("at least 3 point pairs required")
    centroid_src = src.mean(axis=0)
    centroid_dst = dst.mean(axis=0)
    src_c = src - centroid_src
    dst_c = dst - centroid_dst
    spread_src = np.linalg.svd(src_c, compute_uv=False)
    spread_dst = np.linalg.svd(dst_c, compute_uv=False)
    if spread_src[1] < 1e-12 * max(spread_src[0], 1.0) \
            or spread_dst[1] < 1e-12 * max(spread_dst[0], 1.0):
        raise AlignmentError("degenerate point set (collinear or coincident)")
    h = src_c.T @ dst_c
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    flip = np.diag([1.0, 1.0, d])
    rotation = vt.T @ flip @ u.T
    translation = centroid_dst - rotation @ centroid_src
    return RigidTransform(rotation, translation)


def coregister(gen: TriMesh, ref: TriMesh, cfg: IcpConfig = IcpConfig()) -> IcpResult:
    """Align `gen` onto `ref`: bbox-center translation, then point-to-point ICP.

    Returns the full rigid transform from gen's original frame into ref's
    original frame, and the final RMS correspondence distance. ICP samples
    `cfg.n_points` from each surface with the same seed, matches nearest
    neighbors against the ref samples, and re-fits the closed-form optimal
    transform each iteration. If RMS rises five iterations in a row the best
    transform so far is returned with converged=False.
    """
    center_gen = gen.bbox.center
    center_ref = ref.bbox.center
    gen_pts = sample_surface(gen, cfg.n_points, cfg.seed) - center_gen
    ref_pts = sample_surface(ref, cfg.n_points, cfg.seed) - center_ref

    tree = cKDTree(ref_pts)
    current = RigidTransform.identity()
    best = current
    best_rms = np.inf
    prev_rms = np.inf
    rises = 0
    converged = False
    iterations = 0

    for iterations in range(1, cfg.max_iters + 1):
        moved = current.apply(gen_pts)
        dists, idx = tree.query(moved)
        rms = float(np.sqrt(np.mean(dists**2)))
        if rms < best_rms:
            best_rms = rms
            best = current
        if rms > prev_rms:
            rises += 1
            if rises >= 5:
                break
        else:
            rises = 0
        if abs(prev_rms - rms) < cfg.convergence_rms_delta_mm:
            converged = True
            break
        prev_rms = rms
        current = optimal_rigid(gen_pts, ref_pts[idx])
    else:
        # Budget exhausted; keep the best pose but treat as converged if the
        # last accepted step was still improving smoothly.
        converged = rises == 0

    final = current if converged else best
    dists, _ = tree.query(final.apply(gen_pts))
    final_rms = float(np.sqrt(np.mean(dists**2)))

    # Compose: original gen -> centered -> ICP -> back to ref's frame.
    centered = RigidTransform(np.eye(3), -center_gen)
    back = RigidTransform(np.eye(3), center_ref)
    full = back.compose(final).compose(centered)
    return IcpResult(transform=full, icp_rms_mm=final_rms,
                     converged=converged, iterations=iterations)
