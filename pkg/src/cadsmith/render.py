"""Deterministic offscreen renders of generated parts for the visual judge.

Three fixed shaded views (isometric, high-angle rear, front profile) are
rasterized into one 2400x800 composite. The rasterizer is a plain z-buffer
with per-pixel Phong lighting from a single headlight; no GPU, no hidden
state, so the same mesh and config always produce the same PNG bytes.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .mesh import Bbox, TriMesh


class RenderError(ValueError):
    """Raised for degenerate camera setups."""


@dataclass(frozen=True)
class ViewSpec:
    elevation_deg: float
    azimuth_deg: float
    label: str

    def __post_init__(self):
        if not -90.0 < self.elevation_deg < 90.0:
            raise RenderError(f"elevation {self.elevation_deg} outside (-90, 90)")
        if not 0.0 <= self.azimuth_deg < 360.0:
            raise RenderError(f"azimuth {self.azimuth_deg} outside [0, 360)")


# Left-to-right panel order of the composite.
THREE_VIEWS = (
    ViewSpec(35.0, 45.0, "isometric"),
    ViewSpec(65.0, 220.0, "high_rear"),
    ViewSpec(10.0, 0.0, "front_profile"),
)


@dataclass(frozen=True)
class RenderConfig:
    panel_px: tuple[int, int] = (800, 800)
    background: tuple[int, int, int] = (228, 228, 232)
    part_color: tuple[int, int, int] = (145, 148, 155)
    camera_distance_factor: float = 2.5
    fov_deg: float = 30.0
    ambient: float = 0.25

    @property
    def composite_px(self) -> tuple[int, int]:
        return (3 * self.panel_px[0], self.panel_px[1])


@dataclass(frozen=True)
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray


def camera_from_view(view: ViewSpec, bbox: Bbox, cfg: RenderConfig = RenderConfig()) -> Camera:
    """Place the camera on a sphere around the bbox center (Z-up convention).

    Radius scales with the bbox diagonal so framing is size-invariant.
    """
    diag = bbox.diagonal
    if diag <= 0.0:
        raise RenderError("bbox has zero diagonal; nothing to frame")
    el = np.radians(view.elevation_deg)
    az = np.radians(view.azimuth_deg)
    radius = cfg.camera_distance_factor * diag
    direction = np.array([np.cos(el) * np.cos(az),
                          np.cos(el) * np.sin(az),
                          np.sin(el)])
    center = bbox.center
    return Camera(position=center + radius * direction,
                  look_at=center,
                  up=np.array([0.0, 0.0, 1.0]))


def rasterize(mesh: TriMesh, camera: Camera, cfg: RenderConfig = RenderConfig()) -> np.ndarray:
    """Render one RGB panel (H, W, 3) uint8."""
    image, _ = rasterize_with_depth(mesh, camera, cfg)
    return image


def rasterize_with_depth(mesh: TriMesh, camera: Camera,
                         cfg: RenderConfig = RenderConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Panel plus its z-buffer (camera-space depth, +inf where background)."""
    width, height = cfg.panel_px
    image = np.empty((height, width, 3), dtype=np.uint8)
    image[:] = np.array(cfg.background, dtype=np.uint8)
    zbuf = np.full((height, width), np.inf)

    forward = camera.look_at - camera.position
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise RenderError("camera position equals look-at point")
    forward = forward / norm
    right = np.cross(forward, camera.up)
    r_norm = np.linalg.norm(right)
    if r_norm < 1e-12:
        raise RenderError("camera up vector parallel to view direction")
    right = right / r_norm
    up_cam = np.cross(right, forward)

    rel = mesh.vertices - camera.position
    cx = rel @ right
    cy = rel @ up_cam
    cz = rel @ forward

    focal = 1.0 / np.tan(np.radians(cfg.fov_deg) / 2.0)
    base_color = np.array(cfg.part_color, dtype=np.float64)

    tris = mesh.triangles
    corners_world = mesh.corners()
    near = 1e-9
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (cx / cz * focal * 0.5 + 0.5) * width - 0.5
        sy = (0.5 - cy / cz * focal * 0.5) * height - 0.5

    for t in range(len(tris)):
        i0, i1, i2 = tris[t]
        z0, z1, z2 = cz[i0], cz[i1], cz[i2]
        if z0 <= near or z1 <= near or z2 <= near:
            continue  # behind or at the camera plane
        x0, y0 = sx[i0], sy[i0]
        x1, y1 = sx[i1], sy[i1]
        x2, y2 = sx[i2], sy[i2]
        min_x = max(0, int(np.floor(min(x0, x1, x2))))
        max_x = min(width - 1, int(np.ceil(max(x0, x1, x2))))
        min_y = max(0, int(np.floor(min(y0, y1, y2))))
        max_y = min(height - 1, int(np.ceil(max(y0, y1, y2))))
        if min_x > max_x or min_y > max_y:
            continue
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if abs(area) < 1e-12:
            continue

        xs = np.arange(min_x, max_x + 1, dtype=np.float64)
        ys = np.arange(min_y, max_y + 1, dtype=np.float64)
        px, py = np.meshgrid(xs, ys)
        w0 = ((x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)) / area
        w1 = ((x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)) / area
        w2 = 1.0 - w0 - w1
        mask = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not mask.any():
            continue

        inv_z = w0 / z0 + w1 / z1 + w2 / z2
        depth = 1.0 / inv_z
        window = zbuf[min_y:max_y + 1, min_x:max_x + 1]
        visible = mask & (depth < window)
        if not visible.any():
            continue

        # Perspective-correct world position for the headlight direction.
        c0, c1, c2 = corners_world[t]
        world = (np.stack([w0 / z0] * 3, axis=-1) * c0
                 + np.stack([w1 / z1] * 3, axis=-1) * c1
                 + np.stack([w2 / z2] * 3, axis=-1) * c2) / inv_z[..., None]

        normal = np.cross(c1 - c0, c2 - c0)
        n_len = np.linalg.norm(normal)
        if n_len == 0:
            continue
        normal = normal / n_len
        if np.dot(normal, camera.position - (c0 + c1 + c2) / 3.0) < 0:
            normal = -normal  # STL winding is unreliable; face the camera

        to_light = camera.position - world
        dist = np.linalg.norm(to_light, axis=-1, keepdims=True)
        light_dir = to_light / dist
        ndotl = np.clip(light_dir @ normal, 0.0, 1.0)
        # Headlight: reflection direction dotted with the view direction
        # collapses to 2*(n.l)^2 - 1.
        spec = np.clip(2.0 * ndotl**2 - 1.0, 0.0, 1.0) ** 32
        intensity = cfg.ambient + 0.62 * ndotl + 0.13 * spec
        shade = np.clip(intensity[..., None] * base_color, 0.0, 255.0).astype(np.uint8)

        img_window = image[min_y:max_y + 1, min_x:max_x + 1]
        img_window[visible] = shade[visible]
        window[visible] = depth[visible]
    return image, zbuf


def three_view_composite(mesh: TriMesh, cfg: RenderConfig = RenderConfig()) -> bytes:
    """PNG bytes of the three standard views side by side (2400x800 default)."""
    panels = []
    for view in THREE_VIEWS:
        camera = camera_from_view(view, mesh.bbox, cfg)
        panels.append(rasterize(mesh, camera, cfg))
    composite = np.concatenate(panels, axis=1)
    buf = io.BytesIO()
    Image.fromarray(composite, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()
