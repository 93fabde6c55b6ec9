"""The dual-loop orchestrator.

One run walks: Planner -> [Coder -> Executor -> inner error loop] ->
three-view render -> Validator Judge -> outer refinement loop, with every
iteration persisted to the run directory as it completes. The inner loop
retries execution errors at most `max_inner` times per outer iteration; the
outer loop refines geometry at most `max_outer` times. A kernel-invalid solid
fails an iteration no matter what the judge said (the hard gate).

Run directories are self-contained: `run.json` plus per-iteration artifacts
fully reconstruct the run, which is what `resume` uses for crash recovery.
Under the mock client and stub executor the whole flow is deterministic, so a
resumed run reproduces the uninterrupted run byte for byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import agents
from .agents import (
    DesignPlan,
    HistoryEntry,
    JudgeVerdict,
    RefinementHistory,
    diff_summary,
)
from .executor import STATUS_OK, ExecResult
from .llm import ChatClient, CallLog
from .mesh import load_stl
from .render import RenderConfig, three_view_composite
from .retrieval import KB1, KB2, RetrievalContext, build_context

MODE_FULL = "full"
MODE_NO_VISION = "no_vision"
MODE_ZERO_SHOT = "zero_shot"
MODES = (MODE_FULL, MODE_NO_VISION, MODE_ZERO_SHOT)

OUTCOME_CONVERGED = "converged"
OUTCOME_EXEC_FAILED = "exec_failed"
OUTCOME_MAX_ITERS = "max_iters"

RUN_FILENAME = "run.json"
SCHEMA_VERSION = 1


class PipelineError(Exception):
    pass


class PipelineInterrupted(PipelineError):
    """Raised by the test-only stop hook after state has been persisted."""


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = MODE_FULL
    max_inner: int = 3
    max_outer: int = 5
    escalation_from: int = 3
    executor_backend: str = "stub"

    def __post_init__(self):
        if self.mode not in MODES:
            raise PipelineError(f"unknown mode {self.mode!r}")
        if self.max_inner < 1 or self.max_outer < 1:
            raise PipelineError("max_inner and max_outer must be >= 1")
        if self.escalation_from > self.max_outer:
            raise PipelineError("escalation_from must be <= max_outer")

    def to_json(self) -> dict:
        return {"mode": self.mode, "max_inner": self.max_inner,
                "max_outer": self.max_outer,
                "escalation_from": self.escalation_from,
                "executor_backend": self.executor_backend}

    @classmethod
    def from_json(cls, data: dict) -> "PipelineConfig":
        return cls(**data)


@dataclass
class PipelineDeps:
    """Everything a run needs besides its config: backends and KBs."""

    client: ChatClient
    executor: object  # .run(script, workdir) -> ExecResult
    kb1: KB1 | None = None
    kb2: KB2 | None = None
    prompts_dir: str | None = None
    render_cfg: RenderConfig = field(default_factory=RenderConfig)


@dataclass
class InnerAttempt:
    script: str
    result: ExecResult

    def to_json(self) -> dict:
        return {"script": self.script, "result": self.result.to_json()}

    @classmethod
    def from_json(cls, data: dict) -> "InnerAttempt":
        return cls(script=data["script"],
                   result=ExecResult.from_json(data["result"]))


@dataclass
class IterationRecord:
    outer_index: int
    script: str
    inner_attempts: list[InnerAttempt]
    exec_result: ExecResult
    render_path: str | None = None
    verdict: JudgeVerdict | None = None

    def to_json(self) -> dict:
        return {
            "outer_index": self.outer_index,
            "script": self.script,
            "inner_attempts": [a.to_json() for a in self.inner_attempts],
            "exec_result": self.exec_result.to_json(),
            "render_path": self.render_path,
            "verdict": self.verdict.to_json() if self.verdict else None,
        }

    @classmethod
    def from_json(cls, data: dict) -> "IterationRecord":
        verdict = data.get("verdict")
        return cls(
            outer_index=data["outer_index"],
            script=data["script"],
            inner_attempts=[InnerAttempt.from_json(a) for a in data["inner_attempts"]],
            exec_result=ExecResult.from_json(data["exec_result"]),
            render_path=data.get("render_path"),
            verdict=JudgeVerdict.from_json(verdict) if verdict else None,
        )


@dataclass
class PipelineRun:
    prompt: str
    config: PipelineConfig
    plan: DesignPlan | None = None
    iterations: list[IterationRecord] = field(default_factory=list)
    history: RefinementHistory = field(default_factory=RefinementHistory)
    outcome: str | None = None
    final_stl: str | None = None
    final_step: str | None = None
    call_log: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.outcome == OUTCOME_CONVERGED

    @property
    def refinement_iterations(self) -> int:
        return max(0, len(self.iterations) - 1)

    def exec_succeeded_any(self) -> bool:
        return any(it.exec_result.status == STATUS_OK for it in self.iterations)

    def exec_succeeded_final(self) -> bool:
        return bool(self.iterations) and self.iterations[-1].exec_result.status == STATUS_OK

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "prompt": self.prompt,
            "config": self.config.to_json(),
            "plan": self.plan.to_json() if self.plan else None,
            "iterations": [it.to_json() for it in self.iterations],
            "history": self.history.to_json(),
            "outcome": self.outcome,
            "final_stl": self.final_stl,
            "final_step": self.final_step,
            "llm_call_log": self.call_log,
        }

    @classmethod
    def from_json(cls, data: dict) -> "PipelineRun":
        plan = data.get("plan")
        return cls(
            prompt=data["prompt"],
            config=PipelineConfig.from_json(data["config"]),
            plan=DesignPlan.from_json(plan) if plan else None,
            iterations=[IterationRecord.from_json(i) for i in data["iterations"]],
            history=RefinementHistory.from_json(data.get("history", [])),
            outcome=data.get("outcome"),
            final_stl=data.get("final_stl"),
            final_step=data.get("final_step"),
            call_log=data.get("llm_call_log", []),
        )


def _relativize_result(result: ExecResult, run_dir: Path) -> ExecResult:
    """Rebase artifact paths onto the run directory so persisted state is
    location-independent (and byte-stable across resumed runs)."""
    if not result.stl_path and not result.step_path:
        return result
    from dataclasses import replace

    def rel(p):
        if not p:
            return p
        try:
            return os.path.relpath(p, run_dir)
        except ValueError:
            return p
    return replace(result, stl_path=rel(result.stl_path),
                   step_path=rel(result.step_path))


def _write_json(path: Path, obj: dict | list) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def _persist(run: PipelineRun, run_dir: Path) -> None:
    _write_json(run_dir / RUN_FILENAME, run.to_json())


def _empty_context() -> RetrievalContext:
    return RetrievalContext(api_entries=(), selectors_reference=None,
                            worked_examples=(), error_patterns=())


def _context(deps: PipelineDeps, plan: DesignPlan | None, prompt: str,
             traceback: str | None = None) -> RetrievalContext:
    if deps.kb1 is None or deps.kb2 is None:
        return _empty_context()
    return build_context(plan, prompt, deps.kb1, deps.kb2, traceback=traceback)


def run(prompt: str, cfg: PipelineConfig, deps: PipelineDeps, run_dir,
        stop_after_iterations: int | None = None) -> PipelineRun:
    """Execute one pipeline run into `run_dir`.

    `stop_after_iterations` aborts (with PipelineInterrupted) after that many
    outer iterations have been persisted; it exists to test crash recovery.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    state = PipelineRun(prompt=prompt, config=cfg)

    if cfg.mode == MODE_ZERO_SHOT:
        return _run_zero_shot(state, deps, run_dir)

    state.plan = agents.plan(deps.client, prompt, deps.prompts_dir)
    _write_json(run_dir / "plan.json", state.plan.to_json())
    _sync_call_log(state, deps)
    _persist(state, run_dir)
    return _continue(state, deps, run_dir, stop_after_iterations)


def resume(run_dir, deps: PipelineDeps) -> PipelineRun:
    """Continue an interrupted run from its persisted state.

    Finished runs are returned unchanged. The mock client is fast-forwarded
    past the calls the interrupted run already consumed, so a resumed mock
    run replays identically to an uninterrupted one.
    """
    run_dir = Path(run_dir)
    run_file = run_dir / RUN_FILENAME
    if not run_file.is_file():
        raise PipelineError(f"no resumable run in {run_dir} ({RUN_FILENAME} missing)")
    try:
        state = PipelineRun.from_json(json.loads(run_file.read_text()))
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise PipelineError(f"corrupt run state in {run_file}: {exc}") from exc
    if state.outcome is not None:
        return state

    counts: dict[str, int] = {}
    for rec in state.call_log:
        counts[rec["role_config_id"]] = counts.get(rec["role_config_id"], 0) + 1
    if hasattr(deps.client, "fast_forward"):
        deps.client.fast_forward(counts)
    deps.client.call_log = CallLog.from_json(state.call_log)
    return _continue(state, deps, run_dir, None)


def _sync_call_log(state: PipelineRun, deps: PipelineDeps) -> None:
    state.call_log = deps.client.call_log.to_json()


def _run_zero_shot(state: PipelineRun, deps: PipelineDeps,
                   run_dir: Path) -> PipelineRun:
    """One generator call, one execution, no validation, no refinement."""
    script = agents.zero_shot_code(deps.client, state.prompt, deps.prompts_dir)
    iter_dir = run_dir / "iter_0"
    iter_dir.mkdir(parents=True, exist_ok=True)
    (iter_dir / "script.py").write_text(script)
    result = _relativize_result(deps.executor.run(script, iter_dir / "exec_0"),
                                run_dir)
    _write_json(iter_dir / "result.json", result.to_json())
    state.iterations.append(IterationRecord(0, script, [], result))
    if result.status == STATUS_OK:
        if result.kernel.is_valid_solid:
            state.outcome = OUTCOME_CONVERGED
        else:
            # Executed but failed the validity gate; with no refinement loop
            # available this is the budget-exhausted outcome.
            state.outcome = OUTCOME_MAX_ITERS
        state.final_stl = result.stl_path
        state.final_step = result.step_path
    else:
        state.outcome = OUTCOME_EXEC_FAILED
    _sync_call_log(state, deps)
    _persist(state, run_dir)
    return state


def _continue(state: PipelineRun, deps: PipelineDeps, run_dir: Path,
              stop_after_iterations: int | None) -> PipelineRun:
    cfg = state.config
    prompt = state.prompt
    start_index = len(state.iterations)

    for k in range(start_index, cfg.max_outer):
        if k == 0:
            ctx = _context(deps, state.plan, prompt)
            script = agents.code(deps.client, state.plan, prompt, ctx,
                                 deps.prompts_dir)
        else:
            prev = state.iterations[-1]
            verdict_for_refine = _effective_verdict(prev)
            script = agents.refine_geometry(
                deps.client, prev.script, verdict_for_refine, state.plan,
                prompt, state.history, outer_index=k,
                escalation_from=cfg.escalation_from,
                prompts_dir=deps.prompts_dir)

        record = _run_iteration(state, deps, run_dir, k, script)
        state.iterations.append(record)

        if record.exec_result.status != STATUS_OK:
            state.outcome = OUTCOME_EXEC_FAILED
            _finalize_artifacts(state)
            _sync_call_log(state, deps)
            _persist(state, run_dir)
            return state

        verdict = record.verdict
        gate_ok = record.exec_result.kernel.is_valid_solid
        if verdict.passed and gate_ok:
            state.outcome = OUTCOME_CONVERGED
            state.final_stl = record.exec_result.stl_path
            state.final_step = record.exec_result.step_path
            _sync_call_log(state, deps)
            _persist(state, run_dir)
            return state

        feedback = _iteration_feedback(verdict, gate_ok)
        prev_script = state.iterations[-2].script if len(state.iterations) > 1 else ""
        state.history = state.history.with_entry(HistoryEntry(
            iteration=k, feedback=feedback,
            code_diff_summary=diff_summary(prev_script, script) if prev_script else ""))
        _sync_call_log(state, deps)
        _persist(state, run_dir)

        if stop_after_iterations is not None and k + 1 >= stop_after_iterations:
            raise PipelineInterrupted(
                f"stopped after {k + 1} iterations (test hook)")

    state.outcome = OUTCOME_MAX_ITERS
    _finalize_artifacts(state)
    _sync_call_log(state, deps)
    _persist(state, run_dir)
    return state


def _run_iteration(state: PipelineRun, deps: PipelineDeps, run_dir: Path,
                   k: int, script: str) -> IterationRecord:
    cfg = state.config
    iter_dir = run_dir / f"iter_{k}"
    iter_dir.mkdir(parents=True, exist_ok=True)

    result = _relativize_result(deps.executor.run(script, iter_dir / "exec_0"),
                                run_dir)
    inner_attempts: list[InnerAttempt] = []
    attempt = 0
    while result.status != STATUS_OK and attempt < cfg.max_inner:
        attempt += 1
        ctx = _context(deps, state.plan, state.prompt, traceback=result.traceback)
        script = agents.refine_error(deps.client, script, result.traceback,
                                     ctx, deps.prompts_dir)
        result = _relativize_result(
            deps.executor.run(script, iter_dir / f"exec_{attempt}"), run_dir)
        inner_attempts.append(InnerAttempt(script=script, result=result))

    (iter_dir / "script.py").write_text(script)
    _write_json(iter_dir / "result.json", result.to_json())

    record = IterationRecord(outer_index=k, script=script,
                             inner_attempts=inner_attempts, exec_result=result)
    if result.status != STATUS_OK:
        return record

    image = None
    if cfg.mode == MODE_FULL:
        mesh = load_stl(run_dir / result.stl_path)
        image = three_view_composite(mesh, deps.render_cfg)
        (iter_dir / "views.png").write_bytes(image)
        record.render_path = os.path.relpath(iter_dir / "views.png", run_dir)

    record.verdict = agents.judge(
        deps.client, state.prompt, script, result.kernel,
        image=image, prior=state.history, prompts_dir=deps.prompts_dir)
    _write_json(iter_dir / "verdict.json", record.verdict.to_json())
    return record


def _effective_verdict(prev: IterationRecord) -> JudgeVerdict:
    """The verdict the refiner sees; a kernel-invalid solid overrides a pass."""
    verdict = prev.verdict
    gate_ok = (prev.exec_result.kernel is not None
               and prev.exec_result.kernel.is_valid_solid)
    if verdict is not None and not verdict.passed:
        return verdict
    if not gate_ok:
        return JudgeVerdict(passed=False, feedback=_gate_message())
    return verdict


def _iteration_feedback(verdict: JudgeVerdict, gate_ok: bool) -> str:
    parts = []
    if not verdict.passed:
        parts.append(verdict.feedback)
    if not gate_ok:
        parts.append(_gate_message())
    return " | ".join(parts)


def _gate_message() -> str:
    return ("kernel validity gate failed: the solid is not valid (not "
            "watertight); rebuild so boolean operations produce one closed solid")


def _finalize_artifacts(state: PipelineRun) -> None:
    """Keep the best artifacts on a non-converged run: the last valid solid,
    else the last successful execution."""
    best = None
    for it in state.iterations:
        if it.exec_result.status == STATUS_OK:
            if it.exec_result.kernel.is_valid_solid:
                best = it
            elif best is None or not best.exec_result.kernel.is_valid_solid:
                best = it
    if best is not None:
        state.final_stl = best.exec_result.stl_path
        state.final_step = best.exec_result.step_path
