"""The five prompt-engineered agents: Planner, Coder, Error Refiner,
Validator Judge, and Geometry Refiner.

Each agent is a stateless function over the chat client. Prompts live in
template files under `prompts/` (overridable per call site), so prompt edits
never require a rebuild. Structured outputs (plan, verdict) get exactly one
schema-repair re-ask, with the parse error quoted, before the agent fails.
"""

from __future__ import annotations

import difflib
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from string import Template

from .executor import KernelMetrics
from .llm import GENERATOR, JUDGE, ChatClient, ChatRequest, Message
from .retrieval import RetrievalContext, tokenize

EXPORT_TEMPLATE = ('\ncq.exporters.export(result, "model.step")'
                   '\ncq.exporters.export(result, "model.stl")\n')

# Adjacent feedback strings at or above this Jaccard token overlap count as
# "the same issue persists" and trigger the judge's escalation block.
FEEDBACK_OVERLAP_THRESHOLD = 0.8

_CODE_FENCE_RE = re.compile(r"```(?:python)?\s*\n(.*?)```", re.DOTALL)
_RESULT_ASSIGN_RE = re.compile(r"^\s*result\s*=", re.MULTILINE)


class AgentError(Exception):
    pass


class PlannerError(AgentError):
    pass


class CoderError(AgentError):
    pass


def load_prompt(name: str, prompts_dir: str | Path | None = None) -> str:
    if prompts_dir is not None:
        return (Path(prompts_dir) / f"{name}.txt").read_text()
    return (resources.files("cadsmith") / "prompts" / f"{name}.txt").read_text()


# ---------------------------------------------------------------------------
# Structured types

@dataclass(frozen=True)
class HoleSpec:
    count: int
    diameter_mm: float
    placement: str = ""

    def to_json(self) -> dict:
        return {"count": self.count, "diameter_mm": self.diameter_mm,
                "placement": self.placement}


@dataclass(frozen=True)
class Constraints:
    holes: tuple[HoleSpec, ...] = ()
    symmetry: tuple[str, ...] = ()
    other: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {"holes": [h.to_json() for h in self.holes],
                "symmetry": list(self.symmetry), "other": list(self.other)}


@dataclass(frozen=True)
class DesignPlan:
    components: tuple[dict, ...]
    target_bbox_mm: dict | None
    constraints: Constraints
    notes: str = ""

    def __post_init__(self):
        if not self.components:
            raise ValueError("plan needs at least one component")
        if self.target_bbox_mm is not None:
            for axis in ("x", "y", "z"):
                if float(self.target_bbox_mm.get(axis, 0)) <= 0:
                    raise ValueError(f"target bbox {axis} must be positive")

    def to_json(self) -> dict:
        return {"components": list(self.components),
                "target_bbox_mm": self.target_bbox_mm,
                "constraints": self.constraints.to_json(),
                "notes": self.notes}

    @classmethod
    def from_json(cls, data: dict) -> "DesignPlan":
        if not isinstance(data, dict):
            raise ValueError(f"plan must be a JSON object, got {type(data).__name__}")
        raw_constraints = data.get("constraints") or {}
        holes = tuple(
            HoleSpec(count=int(h.get("count", 0)),
                     diameter_mm=float(h.get("diameter_mm", 0.0)),
                     placement=str(h.get("placement", "")))
            for h in raw_constraints.get("holes") or [])
        constraints = Constraints(
            holes=holes,
            symmetry=tuple(str(s) for s in raw_constraints.get("symmetry") or ()),
            other=tuple(str(s) for s in raw_constraints.get("other") or ()),
        )
        components = tuple(
            {"name": str(c.get("name", "")), "description": str(c.get("description", ""))}
            for c in data.get("components") or [])
        bbox = data.get("target_bbox_mm")
        if bbox is not None:
            bbox = {k: float(v) for k, v in bbox.items()}
        return cls(components=components, target_bbox_mm=bbox,
                   constraints=constraints, notes=str(data.get("notes", "")))


@dataclass(frozen=True)
class JudgeVerdict:
    passed: bool
    feedback: str

    def __post_init__(self):
        if not self.passed and not self.feedback:
            raise ValueError("a failing verdict needs non-empty feedback")

    def to_json(self) -> dict:
        return {"passed": self.passed, "feedback": self.feedback}

    @classmethod
    def from_json(cls, data: dict) -> "JudgeVerdict":
        if not isinstance(data, dict) or "passed" not in data:
            raise ValueError("verdict must be an object with a 'passed' field")
        return cls(passed=bool(data["passed"]), feedback=str(data.get("feedback", "")))


@dataclass(frozen=True)
class HistoryEntry:
    iteration: int
    feedback: str
    code_diff_summary: str = ""

    def to_json(self) -> dict:
        return {"iteration": self.iteration, "feedback": self.feedback,
                "code_diff_summary": self.code_diff_summary}


@dataclass(frozen=True)
class RefinementHistory:
    entries: tuple[HistoryEntry, ...] = ()

    def __post_init__(self):
        iterations = [e.iteration for e in self.entries]
        if any(b <= a for a, b in zip(iterations, iterations[1:])):
            raise ValueError("history iterations must be strictly increasing")

    def with_entry(self, entry: HistoryEntry) -> "RefinementHistory":
        return RefinementHistory(self.entries + (entry,))

    def to_json(self) -> list[dict]:
        return [e.to_json() for e in self.entries]

    @classmethod
    def from_json(cls, data: list) -> "RefinementHistory":
        return cls(tuple(HistoryEntry(iteration=int(e["iteration"]),
                                      feedback=str(e["feedback"]),
                                      code_diff_summary=str(e.get("code_diff_summary", "")))
                         for e in data))

    def render(self) -> str:
        if not self.entries:
            return "(no previous refinement attempts)"
        lines = []
        for e in self.entries:
            lines.append(f"iteration {e.iteration}: feedback: {e.feedback}")
            if e.code_diff_summary:
                lines.append(f"  changes tried: {e.code_diff_summary}")
        return "\n".join(lines)


def diff_summary(old_script: str, new_script: str, limit: int = 400) -> str:
    """Compact +N/-M line summary of a script revision, with a few changed lines."""
    diff = list(difflib.unified_diff(old_script.splitlines(), new_script.splitlines(),
                                     lineterm="", n=0))
    added = sum(1 for l in diff if l.startswith("+") and not l.startswith("+++"))
    removed = sum(1 for l in diff if l.startswith("-") and not l.startswith("---"))
    changed = [l for l in diff if l[:1] in "+-" and l[:3] not in ("+++", "---")]
    sample = "; ".join(changed[:4])
    return f"+{added}/-{removed} lines. {sample}"[:limit]


# ---------------------------------------------------------------------------
# Parsing helpers

def extract_json(text: str) -> dict:
    """Pull the first JSON object out of a model response (fences tolerated)."""
    fence = _CODE_FENCE_RE.search(text)
    candidate = fence.group(1) if fence else text
    start = candidate.find("{")
    if start < 0:
        raise ValueError("no JSON object found in response")
    depth = 0
    for i in range(start, len(candidate)):
        if candidate[i] == "{":
            depth += 1
        elif candidate[i] == "}":
            depth -= 1
            if depth == 0:
                return json.loads(candidate[start:i + 1])
    raise ValueError("unbalanced JSON object in response")


def extract_code(text: str) -> str:
    fence = _CODE_FENCE_RE.search(text)
    code = fence.group(1) if fence else text
    return code.strip()


def ensure_exports(script: str) -> str:
    """Append the canonical STEP+STL export lines when either is missing."""
    has_step = "exporters.export" in script and ".step" in script
    has_stl = "exporters.export" in script and ".stl" in script
    if has_step and has_stl:
        return script
    return script.rstrip() + "\n" + EXPORT_TEMPLATE.strip() + "\n"


def postprocess_script(text: str) -> str:
    script = extract_code(text)
    if not script:
        raise CoderError("model returned no code")
    if not _RESULT_ASSIGN_RE.search(script):
        raise CoderError("script does not assign a `result` solid")
    return ensure_exports(script)


def feedback_repeats(history: RefinementHistory) -> bool:
    """True when adjacent feedback entries are duplicates or near-duplicates
    (Jaccard token overlap >= 0.8): the trigger for escalation guidance."""
    entries = history.entries
    for a, b in zip(entries, entries[1:]):
        if a.feedback == b.feedback:
            return True
        ta, tb = set(tokenize(a.feedback)), set(tokenize(b.feedback))
        if ta and tb:
            jaccard = len(ta & tb) / len(ta | tb)
            if jaccard >= FEEDBACK_OVERLAP_THRESHOLD:
                return True
    return False


# ---------------------------------------------------------------------------
# Agents

def plan(client: ChatClient, prompt: str,
         prompts_dir: str | Path | None = None) -> DesignPlan:
    """Planner: prompt -> structured DesignPlan (one repair re-ask)."""
    if not prompt.strip():
        raise PlannerError("empty prompt")
    system = load_prompt("planner", prompts_dir)
    request = ChatRequest(
        role_config_id=GENERATOR, system=system,
        messages=(Message("user", prompt),),
        temperature=client.cfg.generator_temperature,
        max_tokens=client.cfg.max_tokens)
    response = client.complete(request)
    try:
        return DesignPlan.from_json(extract_json(response.text))
    except (ValueError, json.JSONDecodeError) as first_error:
        repair = (f"{prompt}\n\nYour previous response could not be parsed as a "
                  f"design plan JSON object: {first_error}\n"
                  f"Respond again with ONLY the corrected JSON object.")
        retry = client.complete(ChatRequest(
            role_config_id=GENERATOR, system=system,
            messages=(Message("user", repair),),
            temperature=client.cfg.generator_temperature,
            max_tokens=client.cfg.max_tokens))
        try:
            return DesignPlan.from_json(extract_json(retry.text))
        except (ValueError, json.JSONDecodeError) as second_error:
            raise PlannerError(
                f"planner produced unparseable output twice: {second_error}"
            ) from second_error


def code(client: ChatClient, plan_obj: DesignPlan, prompt: str,
         ctx: RetrievalContext, prompts_dir: str | Path | None = None) -> str:
    """Coder: design plan + retrieval context -> executable script text."""
    system = load_prompt("coder", prompts_dir)
    user = (f"Original prompt:\n{prompt}\n\n"
            f"Design plan:\n{json.dumps(plan_obj.to_json(), indent=2)}\n\n"
            f"{ctx.render()}")
    response = client.complete(ChatRequest(
        role_config_id=GENERATOR, system=system,
        messages=(Message("user", user),),
        temperature=client.cfg.generator_temperature,
        max_tokens=client.cfg.max_tokens))
    return postprocess_script(response.text)


def zero_shot_code(client: ChatClient, prompt: str,
                   prompts_dir: str | Path | None = None) -> str:
    """Single minimal-prompt generation call: the ablation baseline."""
    system = load_prompt("zero_shot", prompts_dir)
    response = client.complete(ChatRequest(
        role_config_id=GENERATOR, system=system,
        messages=(Message("user", prompt),),
        temperature=client.cfg.generator_temperature,
        max_tokens=client.cfg.max_tokens))
    return postprocess_script(response.text)


def refine_error(client: ChatClient, script: str, traceback: str,
                 ctx: RetrievalContext,
                 prompts_dir: str | Path | None = None) -> str:
    """Error Refiner: failing script + traceback + KB context -> fixed script."""
    if not traceback.strip():
        raise AgentError("refine_error needs a traceback")
    system = load_prompt("error_refiner", prompts_dir)
    user = (f"Failing script:\n```python\n{script}\n```\n\n"
            f"Traceback:\n{traceback}\n\n"
            f"{ctx.render()}")
    response = client.complete(ChatRequest(
        role_config_id=GENERATOR, system=system,
        messages=(Message("user", user),),
        temperature=client.cfg.generator_temperature,
        max_tokens=client.cfg.max_tokens))
    return postprocess_script(response.text)


def judge(client: ChatClient, prompt: str, script: str, kernel: KernelMetrics,
          image: bytes | None, prior: RefinementHistory,
          prompts_dir: str | Path | None = None) -> JudgeVerdict:
    """Validator Judge: prompt + code + kernel metrics (+ three-view image)
    -> pass/fail verdict with analytical feedback."""
    system = load_prompt("judge", prompts_dir)
    sections = [
        f"Original prompt:\n{prompt}",
        f"CadQuery code:\n```python\n{script}\n```",
        f"Kernel measurements:\n{json.dumps(kernel.to_json(), indent=2)}",
        f"Previous feedback history:\n{prior.render()}",
    ]
    if image is not None:
        sections.append("The attached image shows the three rendered views "
                        "(isometric | high-angle rear | front profile).")
    if feedback_repeats(prior):
        sections.append(load_prompt("escalation", prompts_dir))
    request = ChatRequest(
        role_config_id=JUDGE, system=system,
        messages=(Message("user", "\n\n".join(sections), image_png=image),),
        temperature=client.cfg.judge_temperature,
        max_tokens=client.cfg.max_tokens)
    response = client.complete(request)
    try:
        return JudgeVerdict.from_json(extract_json(response.text))
    except (ValueError, json.JSONDecodeError) as first_error:
        repair = (f"Your previous verdict could not be parsed: {first_error}\n"
                  'Respond with ONLY {"passed": bool, "feedback": "..."} and '
                  "non-empty feedback when passed is false.")
        retry = client.complete(ChatRequest(
            role_config_id=JUDGE, system=system,
            messages=(Message("user", repair),),
            temperature=client.cfg.judge_temperature,
            max_tokens=client.cfg.max_tokens))
        try:
            return JudgeVerdict.from_json(extract_json(retry.text))
        except (ValueError, json.JSONDecodeError):
            return JudgeVerdict(passed=False, feedback="judge output unparseable")


def refine_geometry(client: ChatClient, script: str, verdict: JudgeVerdict,
                    plan_obj: DesignPlan, prompt: str,
                    history: RefinementHistory, outer_index: int,
                    escalation_from: int = 3,
                    prompts_dir: str | Path | None = None) -> str:
    """Geometry Refiner: failed verdict -> corrected script. From
    `escalation_from` onward the request carries the escalation block."""
    if verdict.passed:
        raise AgentError("refine_geometry called with a passing verdict")
    system = load_prompt("refiner", prompts_dir)
    sections = [
        f"Original prompt:\n{prompt}",
        f"Design plan:\n{json.dumps(plan_obj.to_json(), indent=2)}",
        f"Current script:\n```python\n{script}\n```",
        f"Validator feedback:\n{verdict.feedback}",
        f"Refinement history:\n{history.render()}",
    ]
    if outer_index >= escalation_from:
        sections.append(load_prompt("escalation", prompts_dir))
    response = client.complete(ChatRequest(
        role_config_id=GENERATOR, system=system,
        messages=(Message("user", "\n\n".join(sections)),),
        temperature=client.cfg.generator_temperature,
        max_tokens=client.cfg.max_tokens))
    return postprocess_script(response.text)
