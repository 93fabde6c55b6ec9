"""Sandboxed execution of generated CadQuery scripts.

The real backend spawns one sidecar process per execution and talks to it
through a file protocol (script in, result.json + STEP/STL artifacts out),
so stray library chatter on stdout can never corrupt results. Scripts are
never imported or evaluated in-process. The stub backend replays canned
results keyed by `# fixture:<tag>` markers for hermetic pipeline tests; it
evaluates nothing at all.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import shlex
import shutil
import signal
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import Bbox, TriMesh, mesh_stats

STATUS_OK = "ok"
STATUS_EXEC_ERROR = "exec_error"
STATUS_TIMEOUT = "timeout"

SIDECAR_CMD_ENV = "CADSMITH_SIDECAR_CMD"
RESULT_FILENAME = "result.json"
SCRIPT_FILENAME = "script.py"

EXIT_OK = 0
EXIT_SCRIPT_ERROR = 2
EXIT_SIDECAR_INTERNAL = 3

_FIXTURE_TAG_RE = re.compile(r"#\s*fixture:\s*([\w.-]+)")


class ExecutorError(Exception):
    pass


class ExecutorConfigError(ExecutorError):
    pass


@dataclass(frozen=True)
class KernelMetrics:
    """Exact kernel measurements reported by the sidecar for one solid."""

    volume_mm3: float
    bbox: Bbox
    center_of_mass: tuple[float, float, float]
    face_count: int
    edge_count: int
    vertex_count: int
    is_valid_solid: bool
    tessellation_note: str = ""

    def __post_init__(self):
        if min(self.face_count, self.edge_count, self.vertex_count) < 0:
            raise ExecutorError("kernel metric counts must be non-negative")
        if self.is_valid_solid and self.volume_mm3 <= 0:
            raise ExecutorError("a valid solid must have positive volume")

    def to_json(self) -> dict:
        return {
            "volume_mm3": self.volume_mm3,
            "bbox": {"min": list(map(float, self.bbox.min)),
                     "max": list(map(float, self.bbox.max))},
            "center_of_mass": list(self.center_of_mass),
            "face_count": self.face_count,
            "edge_count": self.edge_count,
            "vertex_count": self.vertex_count,
            "is_valid_solid": self.is_valid_solid,
            "tessellation_note": self.tessellation_note,
        }

    @classmethod
    def from_json(cls, data: dict) -> "KernelMetrics":
        return cls(
            volume_mm3=float(data["volume_mm3"]),
            bbox=Bbox(data["bbox"]["min"], data["bbox"]["max"]),
            center_of_mass=tuple(float(x) for x in data["center_of_mass"]),
            face_count=int(data["face_count"]),
            edge_count=int(data["edge_count"]),
            vertex_count=int(data["vertex_count"]),
            is_valid_solid=bool(data["is_valid_solid"]),
            tessellation_note=str(data.get("tessellation_note", "")),
        )


@dataclass(frozen=True)
class ExecResult:
    status: str
    kernel: KernelMetrics | None = None
    stl_path: str | None = None
    step_path: str | None = None
    error_type: str | None = None
    traceback: str | None = None
    duration_ms: float = 0.0

    def __post_init__(self):
        if self.status not in (STATUS_OK, STATUS_EXEC_ERROR, STATUS_TIMEOUT):
            raise ExecutorError(f"unknown status {self.status!r}")
        if self.status == STATUS_OK:
            if self.kernel is None or not self.stl_path or not self.step_path:
                raise ExecutorError("ok result requires kernel metrics and artifacts")
        if self.status == STATUS_EXEC_ERROR and not self.traceback:
            raise ExecutorError("exec_error result requires a traceback")

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "kernel": self.kernel.to_json() if self.kernel else None,
            "stl_path": self.stl_path,
            "step_path": self.step_path,
            "error_type": self.error_type,
            "traceback": self.traceback,
            "duration_ms": self.duration_ms,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ExecResult":
        kernel = data.get("kernel")
        return cls(
            status=data["status"],
            kernel=KernelMetrics.from_json(kernel) if kernel else None,
            stl_path=data.get("stl_path"),
            step_path=data.get("step_path"),
            error_type=data.get("error_type"),
            traceback=data.get("traceback"),
            duration_ms=float(data.get("duration_ms", 0.0)),
        )


def _protocol_error(message: str, duration_ms: float = 0.0) -> ExecResult:
    return ExecResult(status=STATUS_EXEC_ERROR, error_type="protocol",
                      traceback=message, duration_ms=duration_ms)


def execute(script: str, workdir, timeout_s: float = 60.0,
            sidecar_cmd: list[str] | None = None) -> ExecResult:
    """Run one script through the sidecar in `workdir`.

    Spawns `<sidecar-cmd> --script <path> --out <workdir>`, captures
    stdout/stderr to files, kills the whole process group at the timeout, and
    ingests result.json on exit. Exit codes: 0 success, 2 script error,
    3 sidecar internal error.
    """
    if sidecar_cmd is None:
        raw = os.environ.get(SIDECAR_CMD_ENV, "")
        sidecar_cmd = shlex.split(raw)
    if not sidecar_cmd:
        raise ExecutorConfigError(
            f"no sidecar command configured (set {SIDECAR_CMD_ENV})")

    # The sidecar runs with the workdir as its cwd; a relative workdir would
    # make the --out argument resolve against itself.
    workdir = Path(workdir).resolve()
    workdir.mkdir(parents=True, exist_ok=True)
    script_path = workdir / SCRIPT_FILENAME
    script_path.write_text(script)
    result_path = workdir / RESULT_FILENAME
    if result_path.exists():
        result_path.unlink()

    cmd = list(sidecar_cmd) + ["--script", str(script_path), "--out", str(workdir)]
    start = time.monotonic()
    with open(workdir / "sidecar_stdout.log", "wb") as out, \
            open(workdir / "sidecar_stderr.log", "wb") as err:
        proc = subprocess.Popen(cmd, stdout=out, stderr=err,
                                start_new_session=True, cwd=str(workdir))
        try:
            returncode = proc.wait(timeout=timeout_s)
        except subprocess.TimeoutExpired:
            _kill_process_group(proc)
            duration = (time.monotonic() - start) * 1000.0
            return ExecResult(status=STATUS_TIMEOUT, error_type="timeout",
                              traceback=f"timeout after {timeout_s:g}s",
                              duration_ms=duration)
    duration = (time.monotonic() - start) * 1000.0

    result_data = None
    if result_path.exists():
        try:
            result_data = json.loads(result_path.read_text())
        except json.JSONDecodeError as exc:
            return _protocol_error(f"unparseable result.json: {exc}", duration)

    if returncode == EXIT_OK:
        if result_data is None:
            return _protocol_error("sidecar exited 0 without result.json", duration)
        try:
            kernel = KernelMetrics.from_json(result_data["kernel"])
            stl = workdir / result_data["stl_path"]
            step = workdir / result_data["step_path"]
        except (KeyError, TypeError, ValueError, ExecutorError) as exc:
            return _protocol_error(f"invalid result.json: {exc}", duration)
        if not stl.is_file() or not step.is_file():
            return _protocol_error("result.json names missing artifacts", duration)
        return ExecResult(status=STATUS_OK, kernel=kernel, stl_path=str(stl),
                          step_path=str(step), duration_ms=duration)

    traceback_text = None
    error_type = None
    if result_data:
        traceback_text = result_data.get("traceback")
        error_type = result_data.get("error_type")
    if not traceback_text:
        stderr_tail = (workdir / "sidecar_stderr.log").read_bytes()[-4000:]
        traceback_text = stderr_tail.decode("utf-8", errors="replace") \
            or f"sidecar exited {returncode} without traceback"
    if not error_type:
        error_type = ("sidecar_internal" if returncode == EXIT_SIDECAR_INTERNAL
                      else f"exit_{returncode}")
    return ExecResult(status=STATUS_EXEC_ERROR, error_type=error_type,
                      traceback=traceback_text, duration_ms=duration)


def _kill_process_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        proc.kill()
    proc.wait()


@dataclass(frozen=True)
class StubFixture:
    """Canned execution outcome for one script tag."""

    status: str = STATUS_OK
    kernel: KernelMetrics | None = None
    stl_source: str | None = None
    error_type: str | None = None
    traceback: str | None = None

    @classmethod
    def from_json(cls, data: dict, base_dir: Path) -> "StubFixture":
        kernel = data.get("kernel")
        stl = data.get("stl")
        return cls(
            status=data.get("status", STATUS_OK),
            kernel=KernelMetrics.from_json(kernel) if kernel else None,
            stl_source=str(base_dir / stl) if stl else None,
            error_type=data.get("error_type"),
            traceback=data.get("traceback"),
        )


def load_stub_fixtures(path) -> dict[str, StubFixture]:
    """Read a `{tag: fixture}` JSON map; STL paths resolve beside the file."""
    path = Path(path)
    data = json.loads(path.read_text())
    return {tag: StubFixture.from_json(item, path.parent)
            for tag, item in data.items()}


def stub_execute(script: str, fixtures: dict[str, StubFixture],
                 workdir) -> ExecResult:
    """Return the canned result for the script's `# fixture:<tag>` marker
    (or a registered `sha256:<digest>` of the whole script), copying the
    fixture STL into the workdir. Never evaluates the script."""
    workdir = Path(workdir).resolve()
    workdir.mkdir(parents=True, exist_ok=True)
    (workdir / SCRIPT_FILENAME).write_text(script)

    match = _FIXTURE_TAG_RE.search(script)
    if match:
        tag = match.group(1)
    else:
        tag = "sha256:" + hashlib.sha256(script.encode()).hexdigest()
    fixture = fixtures.get(tag)
    if fixture is None:
        return _protocol_error(f"unknown stub fixture tag {tag!r}")

    if fixture.status != STATUS_OK:
        return ExecResult(status=fixture.status, error_type=fixture.error_type,
                          traceback=fixture.traceback or "stub failure",
                          duration_ms=0.0)
    if not fixture.stl_source or not fixture.kernel:
        return _protocol_error(f"stub fixture {tag!r} lacks an STL source or kernel")
    stl_path = workdir / "model.stl"
    shutil.copyfile(fixture.stl_source, stl_path)
    step_path = workdir / "model.step"
    step_path.write_text(f"stub STEP artifact for fixture {tag}\n")
    return ExecResult(status=STATUS_OK, kernel=fixture.kernel,
                      stl_path=str(stl_path), step_path=str(step_path),
                      duration_ms=0.0)


class RealExecutor:
    """Backend that runs scripts through the configured sidecar."""

    name = "real"

    def __init__(self, sidecar_cmd: list[str] | None = None,
                 timeout_s: float = 60.0):
        self.sidecar_cmd = sidecar_cmd
        self.timeout_s = timeout_s

    def run(self, script: str, workdir) -> ExecResult:
        return execute(script, workdir, timeout_s=self.timeout_s,
                       sidecar_cmd=self.sidecar_cmd)


class StubExecutor:
    """Backend that replays canned fixtures; fully hermetic."""

    name = "stub"

    def __init__(self, fixtures: dict[str, StubFixture]):
        self.fixtures = dict(fixtures)

    def run(self, script: str, workdir) -> ExecResult:
        return stub_execute(script, self.fixtures, workdir)


def kernel_from_mesh(mesh: TriMesh, note: str = "stub metrics from mesh") -> KernelMetrics:
    """Build plausible kernel metrics from a mesh (stub fixtures only; real
    B-rep counts come from the sidecar's geometry kernel)."""
    stats = mesh_stats(mesh)
    tris = mesh.triangles
    directed = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    lo = np.minimum(directed[:, 0], directed[:, 1])
    hi = np.maximum(directed[:, 0], directed[:, 1])
    edge_count = len(np.unique(lo << np.int64(32) | hi))
    return KernelMetrics(
        volume_mm3=stats.volume_mm3,
        bbox=stats.bbox,
        center_of_mass=tuple(float(x) for x in stats.center_of_mass),
        face_count=int(stats.triangle_count),
        edge_count=int(edge_count),
        vertex_count=len(mesh.vertices),
        is_valid_solid=stats.is_watertight,
        tessellation_note=note,
    )
