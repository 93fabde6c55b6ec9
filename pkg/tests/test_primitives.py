"""Analytic volume and topology checks for the fixture geometry builders."""

import math

import pytest

from cadsmith import primitives
from cadsmith.mesh import mesh_stats


def poly_area_factor(n):
    """Inscribed n-gon area / circle area for the same radius."""
    return (n / (2 * math.pi)) * math.sin(2 * math.pi / n)


@pytest.mark.parametrize("builder,volume", [
    (lambda: primitives.box(10.0), 1000.0),
    (lambda: primitives.box((20.0, 10.0, 5.0)), 1000.0),
    (lambda: primitives.cylinder(5.0, 10.0, segments=96),
     math.pi * 25 * 10 * poly_area_factor(96)),
    (lambda: primitives.washer(10.0, 4.0, 6.0, segments=96),
     math.pi * (100 - 16) * 6 * poly_area_factor(96)),
    (lambda: primitives.l_bracket(40.0, 20.0, 8.0),
     40 * 20 * 8 + 32 * 20 * 8),
])
def test_analytic_volumes(builder, volume):
    stats = mesh_stats(builder())
    assert stats.volume_mm3 == pytest.approx(volume, rel=1e-9)
    assert stats.is_watertight
    assert not stats.inverted_orientation


def test_torus_volume():
    n_major, n_minor = 96, 48
    stats = mesh_stats(primitives.torus(15.0, 4.0, n_major, n_minor))
    analytic = 2 * math.pi**2 * 15.0 * 16.0
    # Tessellation shrinks both circles; tolerance covers the sag.
    assert abs(stats.volume_mm3 - analytic) / analytic < 0.01
    assert stats.is_watertight


def test_stepped_revolve_flange():
    # 50 dia x 10 flange under a 28 dia x 40 hub, 14 dia bore through both.
    mesh = primitives.stepped_revolve(
        [(25.0, 0.0, 10.0), (14.0, 10.0, 50.0)], bore_radius=7.0, segments=128)
    stats = mesh_stats(mesh)
    f = poly_area_factor(128)
    analytic = (math.pi * (25**2 - 7**2) * 10 + math.pi * (14**2 - 7**2) * 40) * f
    assert stats.volume_mm3 == pytest.approx(analytic, rel=1e-9)
    assert stats.is_watertight
    assert not stats.inverted_orientation


def test_stepped_revolve_solid_shaft():
    mesh = primitives.stepped_revolve(
        [(8.0, 0.0, 15.0), (12.0, 15.0, 30.0), (6.0, 30.0, 45.0)], segments=96)
    stats = mesh_stats(mesh)
    f = poly_area_factor(96)
    analytic = math.pi * (64 * 15 + 144 * 15 + 36 * 15) * f
    assert stats.volume_mm3 == pytest.approx(analytic, rel=1e-9)
    assert stats.is_watertight


def test_plate_with_hole():
    mesh = primitives.plate_with_hole(60.0, 40.0, 8.0, 8.0, segments=64)
    stats = mesh_stats(mesh)
    hole = math.pi * 64 * poly_area_factor(64) * 8.0
    assert stats.volume_mm3 == pytest.approx(60 * 40 * 8 - hole, rel=1e-9)
    assert stats.is_watertight
    assert not stats.inverted_orientation
    assert abs(stats.center_of_mass).max() < 1e-9


def test_merge_keeps_bodies_closed():
    a = primitives.box(10.0, center=(0, 0, 5.0))
    b = primitives.cylinder(3.0, 10.0, segments=32, center=(0, 0, 15.0))
    merged = primitives.merge(a, b)
    stats = mesh_stats(merged)
    assert stats.is_watertight
    expected = 1000.0 + math.pi * 9 * 10 * poly_area_factor(32)
    assert stats.volume_mm3 == pytest.approx(expected, rel=1e-9)


def test_open_box_volume_still_reported():
    stats = mesh_stats(primitives.open_box(10.0))
    assert not stats.is_watertight
    assert stats.triangle_count == 10
