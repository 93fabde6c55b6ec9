"""Shared fixtures: a small hand-scored knowledge base, stub-executor
fixtures, and mock-transcript builders for pipeline tests."""

import json

import pytest

from cadsmith import primitives
from cadsmith.executor import STATUS_EXEC_ERROR, StubFixture, kernel_from_mesh
from cadsmith.mesh import save_stl

# Twelve API entries with keyword sets chosen so rankings can be walked by
# hand in the tests that use them.
FIXTURE_API = [
    {"name": "box", "category": "primitives", "signature": "box(l, w, h)",
     "description": "rectangular solid", "example": "cq.Workplane().box(1,1,1)",
     "pitfalls": [], "keywords": ["box", "cube", "block", "rectangular"]},
    {"name": "cylinder", "category": "primitives", "signature": "cylinder(h, r)",
     "description": "solid cylinder", "example": "",
     "pitfalls": ["height before radius"], "keywords": ["cylinder", "rod", "shaft", "disc"]},
    {"name": "sphere", "category": "primitives", "signature": "sphere(r)",
     "description": "solid sphere", "example": "", "pitfalls": [],
     "keywords": ["sphere", "ball", "dome"]},
    {"name": "extrude", "category": "extrude", "signature": "extrude(d)",
     "description": "extrude pending wires", "example": "", "pitfalls": [],
     "keywords": ["extrude", "pad", "thickness"]},
    {"name": "hole", "category": "holes", "signature": "hole(d)",
     "description": "drill through hole", "example": "", "pitfalls": ["takes diameter"],
     "keywords": ["hole", "holes", "bolt", "drill", "bore"]},
    {"name": "polararray", "category": "array", "signature": "polarArray(r, s, a, n)",
     "description": "points on a circle", "example": "", "pitfalls": [],
     "keywords": ["bolt", "circle", "pattern", "polar", "pitch"]},
    {"name": "fillet", "category": "fillet", "signature": "fillet(r)",
     "description": "round selected edges", "example": "", "pitfalls": ["radius limits"],
     "keywords": ["fillet", "round", "radius", "edges"]},
    {"name": "chamfer", "category": "chamfer", "signature": "chamfer(l)",
     "description": "bevel selected edges", "example": "", "pitfalls": [],
     "keywords": ["chamfer", "bevel", "edges"]},
    {"name": "faces", "category": "selection", "signature": "faces(sel)",
     "description": "select faces", "example": "", "pitfalls": [],
     "keywords": ["faces", "select", "top", "bottom"]},
    {"name": "cut", "category": "boolean", "signature": "cut(tool)",
     "description": "boolean subtract", "example": "", "pitfalls": [],
     "keywords": ["cut", "subtract", "slot", "keyway", "pocket"]},
    {"name": "union", "category": "boolean", "signature": "union(other)",
     "description": "boolean fuse", "example": "", "pitfalls": [],
     "keywords": ["union", "fuse", "join", "merge"]},
    {"name": "shell", "category": "shell", "signature": "shell(t)",
     "description": "hollow the solid", "example": "", "pitfalls": [],
     "keywords": ["shell", "hollow", "wall"]},
]

FIXTURE_EXAMPLES = [
    {"name": "bolt_plate", "keywords": ["bolt", "holes", "plate", "pattern"],
     "code": "# bolt plate example"},
    {"name": "hub", "keywords": ["cylinder", "hub", "bore", "flange"],
     "code": "# hub example"},
    {"name": "bracket", "keywords": ["bracket", "profile", "extrude"],
     "code": "# bracket example"},
    {"name": "case", "keywords": ["shell", "hollow", "box"],
     "code": "# case example"},
]

FIXTURE_PATTERNS = [
    {"id": "boolean_failed",
     "trigger_keywords": ["brep", "api", "command", "done", "boolean", "cut"],
     "root_cause": "coincident faces", "fix_instructions": "overlap tools",
     "before_code": "a.cut(b)", "after_code": "a.cut(b2)"},
    {"id": "fillet_radius",
     "trigger_keywords": ["fillet", "radius", "standardfailure", "chfi3d"],
     "root_cause": "radius too large", "fix_instructions": "reduce radius",
     "before_code": "x.fillet(5)", "after_code": "x.fillet(1)"},
    {"id": "open_wire",
     "trigger_keywords": ["wire", "closed", "close"],
     "root_cause": "profile not closed", "fix_instructions": "call close()",
     "before_code": "w.polyline(p)", "after_code": "w.polyline(p).close()"},
    {"id": "bad_selector",
     "trigger_keywords": ["indexerror", "selector", "empty"],
     "root_cause": "selector matched nothing", "fix_instructions": "fix selector",
     "before_code": "f('>W')", "after_code": "f('>Z')"},
    {"id": "missing_import",
     "trigger_keywords": ["nameerror", "cq", "defined"],
     "root_cause": "missing import", "fix_instructions": "import cadquery as cq",
     "before_code": "cq.Workplane()", "after_code": "import cadquery as cq"},
]

FIXTURE_SELECTORS_MD = "# selectors\n`>Z` top face, `|Z` vertical edges.\n"


def write_fixture_kb(directory):
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "kb1_api.json").write_text(json.dumps(FIXTURE_API))
    (directory / "kb1_examples.json").write_text(json.dumps(FIXTURE_EXAMPLES))
    (directory / "kb2_errors.json").write_text(json.dumps(FIXTURE_PATTERNS))
    (directory / "kb1_selectors.md").write_text(FIXTURE_SELECTORS_MD)
    return directory


@pytest.fixture(scope="session")
def fixture_kb_dir(tmp_path_factory):
    return write_fixture_kb(tmp_path_factory.mktemp("kb"))


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when == "call" and "test_acceptance" in report.nodeid:
        outcome = "PASS" if report.passed else "FAIL"
        name = report.nodeid.split("::")[-1]
        print(f"\n[ACCEPTANCE] {outcome} {name}")


# ---------------------------------------------------------------------------
# Stub executor fixtures and transcript pieces for pipeline tests

CUBE_PLAN = json.dumps({
    "components": [{"name": "cube", "description": "10 mm cube"}],
    "target_bbox_mm": {"x": 10, "y": 10, "z": 10},
    "constraints": {"holes": [], "symmetry": [], "other": []},
    "notes": "",
})


def script_for(tag):
    return ("import cadquery as cq\n"
            f"# fixture:{tag}\n"
            'result = cq.Workplane("XY").box(10, 10, 10)\n'
            'cq.exporters.export(result, "model.step")\n'
            'cq.exporters.export(result, "model.stl")\n')


PASS_VERDICT = json.dumps({"passed": True, "feedback": ""})


def fail_verdict(text="bounding box Z is 10, prompt requires 60"):
    return json.dumps({"passed": False, "feedback": text})


@pytest.fixture(scope="session")
def stub_fixture_map(tmp_path_factory):
    base = tmp_path_factory.mktemp("stub")
    cube = primitives.box(10.0)
    cube_stl = base / "cube.stl"
    save_stl(cube, cube_stl)
    kernel_ok = kernel_from_mesh(cube)
    kernel_invalid = kernel_from_mesh(cube)
    kernel_invalid = type(kernel_invalid)(
        volume_mm3=kernel_invalid.volume_mm3,
        bbox=kernel_invalid.bbox,
        center_of_mass=kernel_invalid.center_of_mass,
        face_count=kernel_invalid.face_count,
        edge_count=kernel_invalid.edge_count,
        vertex_count=kernel_invalid.vertex_count,
        is_valid_solid=False,
        tessellation_note="stub: invalid solid",
    )
    return {
        "cube_ok": StubFixture(kernel=kernel_ok, stl_source=str(cube_stl)),
        "cube_invalid": StubFixture(kernel=kernel_invalid, stl_source=str(cube_stl)),
        "fillet_fail": StubFixture(
            status=STATUS_EXEC_ERROR, error_type="StdFail_NotDone",
            traceback=("Traceback (most recent call last):\n  ...\n"
                       "OCP.StdFail.StdFail_NotDone: BRep_API: command not done "
                       "(fillet radius too large)")),
    }
