"""Benchmark dataset, evaluation runner and per-tier aggregate reporting.

The dataset is a `bench.json` manifest plus reference STL files; references
(not reference scripts) are the comparison ground truth, so the harness never
needs the execution sidecar. Aggregates mirror the usual reporting layout:
one row per difficulty tier plus an overall row, with execution rate, median
and mean Chamfer distance, median F1 and median IoU. Reports are written as
Markdown and CSV with summary figures rendered alongside.
"""

from __future__ import annotations

import json
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .executor import STATUS_OK, StubFixture, kernel_from_mesh
from .mesh import TriMesh, load_stl, mesh_stats, save_stl
from .metrics import MetricConfig, MetricReport, evaluate_pair
from .pipeline import (
    MODE_ZERO_SHOT,
    PipelineConfig,
    PipelineDeps,
    PipelineRun,
    run as run_pipeline,
)

TIERS = ("T1", "T2", "T3")
OVERALL_LABEL = "ALL"

MANIFEST_NAME = "bench.json"

# Published reference results (full 100-entry corpus, proprietary-model runs).
# Shipped for comparison when reading new reports; they are documentation
# constants, never test oracles: the numbers depend on model behavior and a
# corpus that is not distributed with this repository.
PUBLISHED_OVERALL = {
    "zero_shot": {"exec_pct": 95, "cd_median": 0.55, "cd_mean": 28.37,
                  "f1_median": 0.9707, "iou_median": 0.8085},
    "no_vision": {"exec_pct": 99, "cd_median": 0.48, "cd_mean": 18.19,
                  "f1_median": 0.9792, "iou_median": 0.9563},
    "full": {"exec_pct": 100, "cd_median": 0.48, "cd_mean": 0.74,
             "f1_median": 0.9846, "iou_median": 0.9629},
}
PUBLISHED_FULL_BY_TIER = {
    "T1": {"n": 50, "cd_median": 0.32, "cd_mean": 0.47,
           "f1_median": 0.9985, "iou_median": 0.9834},
    "T2": {"n": 25, "cd_median": 0.32, "cd_mean": 0.58,
           "f1_median": 0.9979, "iou_median": 0.7661},
    "T3": {"n": 25, "cd_median": 0.96, "cd_mean": 1.42,
           "f1_median": 0.8859, "iou_median": 0.9582},
}


class BenchError(ValueError):
    pass


@dataclass(frozen=True)
class BenchEntry:
    id: str
    tier: str
    prompt: str
    reference: str  # absolute path to the reference STL
    reference_script: str | None = None

    def __post_init__(self):
        if self.tier not in TIERS:
            raise BenchError(f"entry {self.id}: unknown tier {self.tier!r}")
        if not self.id.startswith(self.tier + "_"):
            raise BenchError(f"entry {self.id}: id prefix does not match tier {self.tier}")


def load_dataset(directory) -> list[BenchEntry]:
    """Load and validate the dataset: unique ids, tier/id agreement, and
    watertight references (mirroring the hand-verification quality gate)."""
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    if not manifest.is_file():
        raise BenchError(f"dataset manifest missing: {manifest}")
    raw = json.loads(manifest.read_text())
    entries: list[BenchEntry] = []
    seen: set[str] = set()
    for item in raw:
        entry_id = item.get("id", "?")
        if entry_id in seen:
            raise BenchError(f"duplicate entry id {entry_id!r}")
        seen.add(entry_id)
        ref = directory / item["reference"]
        if not ref.is_file():
            raise BenchError(f"entry {entry_id}: reference missing: {ref}")
        entry = BenchEntry(id=entry_id, tier=item["tier"], prompt=item["prompt"],
                           reference=str(ref),
                           reference_script=item.get("reference_script"))
        stats = mesh_stats(load_stl(ref))
        if not stats.is_watertight:
            raise BenchError(f"entry {entry_id}: reference STL is not watertight")
        entries.append(entry)
    if not entries:
        raise BenchError(f"dataset in {directory} has no entries")
    return entries


@dataclass
class EntryResult:
    entry_id: str
    tier: str
    outcome: str | None
    exec_any: bool
    exec_final: bool
    refinement_iters: int
    report: MetricReport | None = None
    error: str | None = None

    def to_json(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "tier": self.tier,
            "outcome": self.outcome,
            "exec_any": self.exec_any,
            "exec_final": self.exec_final,
            "refinement_iters": self.refinement_iters,
            "report": self.report.to_json() if self.report else None,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, data: dict) -> "EntryResult":
        report = data.get("report")
        return cls(
            entry_id=data["entry_id"],
            tier=data["tier"],
            outcome=data.get("outcome"),
            exec_any=bool(data["exec_any"]),
            exec_final=bool(data["exec_final"]),
            refinement_iters=int(data["refinement_iters"]),
            report=MetricReport.from_json(report) if report else None,
            error=data.get("error"),
        )


def evaluate_entry(entry: BenchEntry, cfg: PipelineConfig, mcfg: MetricConfig,
                   deps: PipelineDeps, run_dir) -> tuple[PipelineRun | None, EntryResult]:
    """Run the pipeline on one entry and score the result against its
    reference. Pipeline exceptions are recorded, not raised."""
    run_dir = Path(run_dir)
    try:
        state = run_pipeline(entry.prompt, cfg, deps, run_dir)
    except Exception as exc:  # noqa: BLE001 - failure is data here
        return None, EntryResult(entry_id=entry.id, tier=entry.tier, outcome=None,
                                 exec_any=False, exec_final=False,
                                 refinement_iters=0, error=f"{type(exc).__name__}: {exc}")

    result = EntryResult(
        entry_id=entry.id, tier=entry.tier, outcome=state.outcome,
        exec_any=state.exec_succeeded_any(),
        exec_final=state.exec_succeeded_final(),
        refinement_iters=state.refinement_iterations)
    if state.final_stl:
        try:
            generated = load_stl(run_dir / state.final_stl)
            reference = load_stl(entry.reference)
            result.report = evaluate_pair(generated, reference, mcfg)
        except Exception as exc:  # noqa: BLE001
            result.error = f"metric evaluation failed: {type(exc).__name__}: {exc}"
    return state, result


@dataclass(frozen=True)
class TierAggregate:
    tier: str
    n: int
    exec_pct: float
    exec_final_pct: float
    cd_median: float | None
    cd_mean: float | None
    f1_median: float | None
    f1_mean: float | None
    iou_median: float | None
    avg_refinement_iters: float

    def to_json(self) -> dict:
        return dict(
            tier=self.tier, n=self.n, exec_pct=self.exec_pct,
            exec_final_pct=self.exec_final_pct, cd_median=self.cd_median,
            cd_mean=self.cd_mean, f1_median=self.f1_median,
            f1_mean=self.f1_mean, iou_median=self.iou_median,
            avg_refinement_iters=self.avg_refinement_iters)


def _aggregate_group(label: str, group: list[EntryResult]) -> TierAggregate:
    n = len(group)
    reports = [r.report for r in group if r.report is not None]
    cds = [r.chamfer_mm2 for r in reports]
    f1s = [r.f1 for r in reports]
    ious = [r.iou for r in reports if r.iou is not None]
    return TierAggregate(
        tier=label,
        n=n,
        exec_pct=100.0 * sum(r.exec_any for r in group) / n,
        exec_final_pct=100.0 * sum(r.exec_final for r in group) / n,
        cd_median=statistics.median(cds) if cds else None,
        cd_mean=statistics.fmean(cds) if cds else None,
        f1_median=statistics.median(f1s) if f1s else None,
        f1_mean=statistics.fmean(f1s) if f1s else None,
        iou_median=statistics.median(ious) if ious else None,
        avg_refinement_iters=statistics.fmean(r.refinement_iters for r in group),
    )


def aggregate(results: list[EntryResult]) -> list[TierAggregate]:
    """Per-tier rows (even-n medians are midpoints) plus an overall row.
    Metric statistics cover entries that produced a report; exec rates cover
    every entry. Order-independent over the input list."""
    if not results:
        raise BenchError("no results to aggregate")
    ordered = sorted(results, key=lambda r: r.entry_id)
    rows = []
    for tier in TIERS:
        group = [r for r in ordered if r.tier == tier]
        if group:
            rows.append(_aggregate_group(tier, group))
    rows.append(_aggregate_group(OVERALL_LABEL, ordered))
    return rows


def _fmt(value, digits=4) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.{digits}f}".rstrip("0").rstrip(".") or "0"
    return str(value)


_COLUMNS = ("tier", "n", "exec_pct", "exec_final_pct", "cd_median", "cd_mean",
            "f1_median", "f1_mean", "iou_median", "avg_refinement_iters")
_HEADERS = ("Tier", "N", "Exec%", "ExecFinal%", "CD_med", "CD_mean",
            "F1_med", "F1_mean", "IoU_med", "AvgRefine")


def to_markdown(rows: list[TierAggregate], title: str = "") -> str:
    lines = []
    if title:
        lines.append(f"## {title}")
        lines.append("")
    lines.append("| " + " | ".join(_HEADERS) + " |")
    lines.append("|" + "|".join("---" for _ in _HEADERS) + "|")
    for row in rows:
        values = [_fmt(getattr(row, col)) for col in _COLUMNS]
        lines.append("| " + " | ".join(values) + " |")
    return "\n".join(lines) + "\n"


def to_csv(rows: list[TierAggregate], label_column: str | None = None,
           label: str = "") -> str:
    header = list(_HEADERS)
    if label_column:
        header.insert(0, label_column)
    lines = [",".join(header)]
    for row in rows:
        values = [_fmt(getattr(row, col)) for col in _COLUMNS]
        if label_column:
            values.insert(0, label)
        lines.append(",".join(values))
    return "\n".join(lines) + "\n"


def write_figures(results: list[EntryResult], out_dir) -> list[str]:
    """Render the report figures (per-tier metric bars, CD distribution)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [row for row in aggregate(results) if row.tier != OVERALL_LABEL]
    written = []

    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    tiers = [row.tier for row in rows]
    specs = [("cd_median", "CD median (mm^2)"),
             ("f1_median", "F1 median"),
             ("iou_median", "IoU median")]
    for ax, (col, label) in zip(axes, specs):
        values = [getattr(row, col) or 0.0 for row in rows]
        ax.bar(tiers, values, color="#4878a8")
        ax.set_title(label)
        ax.grid(axis="y", alpha=0.3)
    fig.suptitle("Metric medians by difficulty tier")
    fig.tight_layout()
    path = out_dir / "metrics_by_tier.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(str(path))

    cds = [r.report.chamfer_mm2 for r in results if r.report is not None]
    if cds:
        fig, ax = plt.subplots(figsize=(6, 3.6))
        ax.hist(cds, bins=min(20, max(5, len(cds))), color="#a85448")
        ax.set_xlabel("Chamfer distance (mm^2)")
        ax.set_ylabel("entries")
        ax.set_title("CD distribution")
        fig.tight_layout()
        path = out_dir / "cd_distribution.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(str(path))
    return written


def save_results(results: list[EntryResult], out_dir) -> None:
    out_dir = Path(out_dir)
    (out_dir / "results").mkdir(parents=True, exist_ok=True)
    for res in results:
        path = out_dir / "results" / f"{res.entry_id}.json"
        path.write_text(json.dumps(res.to_json(), indent=2, sort_keys=True) + "\n")


def load_results(out_dir) -> list[EntryResult]:
    out_dir = Path(out_dir)
    results = []
    for path in sorted((out_dir / "results").glob("*.json")):
        results.append(EntryResult.from_json(json.loads(path.read_text())))
    if not results:
        raise BenchError(f"no saved results under {out_dir}/results")
    return results


def run_sweep(entries: list[BenchEntry], cfg: PipelineConfig, mcfg: MetricConfig,
              deps_factory, out_dir, workers: int = 1) -> list[EntryResult]:
    """Evaluate every entry (optionally in parallel), persist per-entry
    results, tables and figures under `out_dir`, and return the results.

    `deps_factory(entry, cfg)` must build an independent PipelineDeps per
    entry; run directories land in `out_dir/runs/<id>`.
    """
    out_dir = Path(out_dir)
    runs_dir = out_dir / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)

    def one(entry: BenchEntry) -> EntryResult:
        deps = deps_factory(entry, cfg)
        _, result = evaluate_entry(entry, cfg, mcfg, deps, runs_dir / entry.id)
        return result

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, entries))
    else:
        results = [one(entry) for entry in entries]

    results.sort(key=lambda r: r.entry_id)
    save_results(results, out_dir)
    rows = aggregate(results)
    (out_dir / "report.md").write_text(to_markdown(rows, title=f"mode: {cfg.mode}"))
    (out_dir / "report.csv").write_text(to_csv(rows))
    write_figures(results, out_dir / "figures")
    return results


def compare_configs(entries: list[BenchEntry], configs: list[PipelineConfig],
                    mcfg: MetricConfig, deps_factory, out_dir,
                    workers: int = 1) -> dict[str, list[TierAggregate]]:
    """One sweep per configuration plus a combined ablation table."""
    if not entries:
        raise BenchError("empty dataset")
    if not configs:
        raise BenchError("no configurations given")
    out_dir = Path(out_dir)
    tables: dict[str, list[TierAggregate]] = {}
    for cfg in configs:
        sub = out_dir / cfg.mode
        results = run_sweep(entries, cfg, mcfg, deps_factory, sub, workers=workers)
        tables[cfg.mode] = aggregate(results)

    md_parts = []
    csv_lines = []
    for mode, rows in tables.items():
        md_parts.append(to_markdown(rows, title=f"configuration: {mode}"))
        csv_text = to_csv(rows, label_column="config", label=mode)
        csv_lines.extend(csv_text.splitlines()[0 if not csv_lines else 1:])
    (out_dir / "ablation.md").write_text("\n".join(md_parts))
    (out_dir / "ablation.csv").write_text("\n".join(csv_lines) + "\n")
    return tables


# ---------------------------------------------------------------------------
# Hermetic-demo plumbing: stub fixtures and scripted transcripts derived from
# the dataset itself, so the full sweep runs without a model or sidecar.

def stub_fixtures_for_dataset(entries: list[BenchEntry]) -> dict[str, StubFixture]:
    fixtures = {}
    for entry in entries:
        mesh = load_stl(entry.reference)
        fixtures[entry.id] = StubFixture(
            kernel=kernel_from_mesh(mesh, note="stub: metrics from reference mesh"),
            stl_source=entry.reference)
    return fixtures


def fixture_script(entry_id: str) -> str:
    return ("import cadquery as cq\n"
            f"# fixture:{entry_id}\n"
            'result = cq.Workplane("XY").box(1, 1, 1)\n'
            'cq.exporters.export(result, "model.step")\n'
            'cq.exporters.export(result, "model.stl")\n')


def fixture_transcript(entry: BenchEntry, mode: str) -> list[dict]:
    """Scripted mock responses that walk one entry through a happy path."""
    script = fixture_script(entry.id)
    if mode == MODE_ZERO_SHOT:
        return [{"role_config_id": "generator", "response_text": script}]
    plan = {
        "components": [{"name": entry.id, "description": entry.prompt[:120]}],
        "target_bbox_mm": None,
        "constraints": {"holes": [], "symmetry": [], "other": []},
        "notes": "fixture transcript",
    }
    return [
        {"role_config_id": "generator", "response_text": json.dumps(plan)},
        {"role_config_id": "generator", "response_text": script},
        {"role_config_id": "judge",
         "response_text": json.dumps({"passed": True, "feedback": ""})},
    ]


# ---------------------------------------------------------------------------
# Fixture dataset construction (the shipped 9-entry benchmark)

def build_fixture_dataset(out_dir) -> list[dict]:
    """Write the 9-entry analytic benchmark (3 per tier) into `out_dir`.

    Every reference solid has a closed-form volume, so expected metric
    behavior is hand-checkable. Returns the manifest entries.
    """
    from . import primitives

    out_dir = Path(out_dir)
    refs = out_dir / "refs"
    refs.mkdir(parents=True, exist_ok=True)

    def flange():
        return primitives.stepped_revolve(
            [(25.0, 0.0, 10.0), (14.0, 10.0, 50.0)], bore_radius=7.0, segments=96)

    def coupling():
        return primitives.stepped_revolve(
            [(25.0, 0.0, 10.0), (14.0, 10.0, 50.0), (25.0, 50.0, 60.0)],
            bore_radius=7.0, segments=96)

    def shaft():
        return primitives.stepped_revolve(
            [(8.0, 0.0, 15.0), (12.0, 15.0, 30.0), (6.0, 30.0, 45.0)], segments=96)

    def boss_stack():
        return primitives.merge(
            primitives.box((50.0, 50.0, 8.0), center=(0, 0, 4.0)),
            primitives.cylinder(12.0, 20.0, segments=96, center=(0, 0, 18.0)),
            primitives.cylinder(5.0, 10.0, segments=96, center=(0, 0, 33.0)))

    specs = [
        ("T1_001", "T1", "A cube 10 mm on each side, centered at the origin "
         "with faces aligned to the coordinate axes.",
         lambda: primitives.box(10.0)),
        ("T1_002", "T1", "A solid cylinder 10 mm in diameter and 12 mm tall, "
         "standing along the Z axis, centered at the origin.",
         lambda: primitives.cylinder(5.0, 12.0, segments=96)),
        ("T1_003", "T1", "A torus lying in the XY plane, centered at the "
         "origin, with a 30 mm center-circle diameter and an 8 mm thick tube.",
         lambda: primitives.torus(15.0, 4.0, 96, 48)),
        ("T2_001", "T2", "A rectangular plate 60 mm by 40 mm by 8 mm thick, "
         "centered at the origin, with a single 16 mm diameter hole through "
         "the center.",
         lambda: primitives.plate_with_hole(60.0, 40.0, 8.0, 8.0, segments=96)),
        ("T2_002", "T2", "A flange: a 50 mm diameter disc 10 mm thick (Z=0 to "
         "Z=10) with a 28 mm diameter hub 40 mm long on top (Z=10 to Z=50), "
         "and a 14 mm diameter bore through the full length. Coaxial on Z.",
         flange),
        ("T2_003", "T2", "A bushing (hollow cylinder) with 40 mm outer "
         "diameter, 20 mm inner diameter, 15 mm tall, centered at the origin.",
         lambda: primitives.washer(20.0, 10.0, 15.0, segments=96)),
        ("T3_001", "T3", "A flanged shaft coupling along Z: bottom flange "
         "disc 50 mm diameter, 10 mm thick (Z=0 to 10); central hub 28 mm "
         "diameter (Z=10 to 50); top flange disc 50 mm diameter, 10 mm thick "
         "(Z=50 to 60); 14 mm diameter center bore through all 60 mm.",
         coupling),
        ("T3_002", "T3", "A stepped shaft along Z made of three coaxial "
         "cylinders: 16 mm diameter from Z=0 to 15, 24 mm diameter from Z=15 "
         "to 30, and 12 mm diameter from Z=30 to 45.",
         shaft),
        ("T3_003", "T3", "A mounting boss stack: a 50 mm square base plate "
         "8 mm thick, a 24 mm diameter boss 20 mm tall on top of it, and a "
         "10 mm diameter pin 10 mm tall on top of the boss, all coaxial on Z "
         "with the plate bottom at Z=0.",
         boss_stack),
    ]

    manifest = []
    for entry_id, tier, prompt, builder in specs:
        mesh = builder()
        stats = mesh_stats(mesh)
        if not stats.is_watertight:
            raise BenchError(f"fixture {entry_id} is not watertight")
        save_stl(mesh, refs / f"{entry_id}.stl")
        manifest.append({"id": entry_id, "tier": tier, "prompt": prompt,
                         "reference": f"refs/{entry_id}.stl"})
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
