"""Command-line entry points: single runs, metric comparisons, rendering,
and benchmark sweeps.

Exit codes are stable contracts: 0 success (run: converged), 1 run did not
converge, 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
from importlib import resources
from pathlib import Path

from . import bench as bench_mod
from .align import IcpConfig
from .config import CliConfig, ConfigError
from .executor import RealExecutor, StubExecutor, load_stub_fixtures
from .llm import LiveChatClient, LlmConfigError, MockChatClient, parse_transcript
from .mesh import MeshError, load_stl
from .metrics import MetricConfig, evaluate_pair
from .pipeline import (
    MODE_FULL,
    PipelineConfig,
    PipelineDeps,
    run as run_pipeline,
)
from .render import RenderConfig, three_view_composite
from .retrieval import RetrievalError, load_kb

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_CONFIG = 2

_MODE_FLAGS = {"full": "full", "no-vision": "no_vision", "zero-shot": "zero_shot"}


def _packaged(relative: str) -> Path:
    return Path(str(resources.files("cadsmith") / relative))


def _load_kbs(kb_dir: str | None):
    directory = Path(kb_dir) if kb_dir else _packaged("data/kb")
    return load_kb(directory)


def _build_executor(config: CliConfig, args) -> object:
    backend = args.executor
    if backend == "real":
        cmd = config.sidecar_cmd
        if not cmd:
            raise ConfigError("real executor requested but no sidecar command "
                              "configured (CADSMITH_SIDECAR_CMD or config file)")
        return RealExecutor(sidecar_cmd=shlex.split(cmd), timeout_s=args.timeout)
    fixtures_path = args.stub_fixtures or _packaged("data/stub/fixtures.json")
    return StubExecutor(load_stub_fixtures(fixtures_path))


def _build_client(config: CliConfig, mock: str | None):
    if mock:
        return MockChatClient.from_file(mock, config.llm)
    return LiveChatClient(config.llm)


def cmd_run(args) -> int:
    config = CliConfig.load(args.config, overrides={
        "pipeline.mode": _MODE_FLAGS[args.mode],
        "seed": args.seed,
    })
    if args.prompt_file:
        prompt = Path(args.prompt_file).read_text().strip()
    else:
        prompt = args.prompt
    if not prompt:
        raise ConfigError("empty prompt")

    kb1 = kb2 = None
    if config.pipeline.mode != "zero_shot":
        kb1, kb2 = _load_kbs(args.kb)
    deps = PipelineDeps(client=_build_client(config, args.mock),
                        executor=_build_executor(config, args),
                        kb1=kb1, kb2=kb2)
    state = run_pipeline(prompt, config.pipeline, deps, args.out)
    counts = deps.client.call_log.counts_by_role()
    print(f"outcome: {state.outcome}")
    print(f"iterations: {len(state.iterations)} "
          f"(refinements: {state.refinement_iterations})")
    print(f"llm calls: generator={counts.get('generator', 0)} "
          f"judge={counts.get('judge', 0)}")
    if state.final_stl:
        print(f"final stl: {Path(args.out) / state.final_stl}")
    print(f"run dir: {args.out}")
    return EXIT_OK if state.converged else EXIT_NOT_CONVERGED


def cmd_metrics(args) -> int:
    config = CliConfig.load(args.config, overrides={
        "metrics.tau_mm": args.tau,
        "metrics.voxel_pitch_mm": args.voxel,
        "metrics.n_samples": args.samples,
        "metrics.seed": args.seed,
    })
    gen = load_stl(args.gen)
    ref = load_stl(args.ref)
    report = evaluate_pair(gen, ref, config.metrics,
                           IcpConfig(seed=config.metrics.seed))
    print(json.dumps(report.to_json(), indent=2, sort_keys=True))
    if report.iou is None:
        print(f"warning: IoU unavailable: {report.iou_unavailable_reason}",
              file=sys.stderr)
    return EXIT_OK


def cmd_render(args) -> int:
    mesh = load_stl(args.stl)
    png = three_view_composite(mesh, RenderConfig())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(png)
    print(f"wrote {out} ({len(png)} bytes, 2400x800)")
    return EXIT_OK


def cmd_bench(args) -> int:
    config = CliConfig.load(args.config, overrides={"seed": args.seed})
    metric_cfg = MetricConfig(
        n_samples=config.metrics.n_samples, tau_mm=config.metrics.tau_mm,
        voxel_pitch_mm=config.metrics.voxel_pitch_mm,
        coarsen_threshold_mm=config.metrics.coarsen_threshold_mm,
        coarsen_target_cells=config.metrics.coarsen_target_cells,
        seed=config.seed)

    dataset_dir = Path(args.dataset) if args.dataset else _packaged("data/bench")
    entries = bench_mod.load_dataset(dataset_dir)

    if args.mock == "auto":
        fixtures = bench_mod.stub_fixtures_for_dataset(entries)

        def deps_factory(entry, cfg):
            transcript = parse_transcript(
                bench_mod.fixture_transcript(entry, cfg.mode))
            return PipelineDeps(client=MockChatClient(transcript, config.llm),
                                executor=StubExecutor(fixtures))
    else:
        kb1, kb2 = _load_kbs(args.kb)

        def deps_factory(entry, cfg):
            client = (MockChatClient.from_file(args.mock, config.llm)
                      if args.mock else LiveChatClient(config.llm))
            class _Args:
                executor = args.executor
                stub_fixtures = args.stub_fixtures
                timeout = args.timeout
            return PipelineDeps(client=client,
                                executor=_build_executor(config, _Args),
                                kb1=kb1, kb2=kb2)

    if args.mode == "all":
        configs = [PipelineConfig(mode=m, executor_backend=args.executor)
                   for m in ("zero_shot", "no_vision", "full")]
        tables = bench_mod.compare_configs(entries, configs, metric_cfg,
                                           deps_factory, args.out,
                                           workers=args.workers)
        for mode, rows in tables.items():
            print(bench_mod.to_markdown(rows, title=f"configuration: {mode}"))
    else:
        cfg = PipelineConfig(mode=_MODE_FLAGS[args.mode],
                             executor_backend=args.executor)
        results = bench_mod.run_sweep(entries, cfg, metric_cfg, deps_factory,
                                      args.out, workers=args.workers)
        print(bench_mod.to_markdown(bench_mod.aggregate(results),
                                    title=f"mode: {cfg.mode}"))
    print(f"report dir: {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cadsmith",
        description="Text-to-CAD pipeline with geometric validation, plus "
                    "mesh metrics, rendering and benchmark tools.")
    parser.add_argument("--config", help="JSON config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the pipeline on one prompt")
    group = p_run.add_mutually_exclusive_group(required=True)
    group.add_argument("--prompt", help="part description")
    group.add_argument("--prompt-file", help="file containing the description")
    p_run.add_argument("--mode", choices=sorted(_MODE_FLAGS), default="full")
    p_run.add_argument("--out", required=True, help="run directory")
    p_run.add_argument("--mock", help="scripted LLM transcript (JSON)")
    p_run.add_argument("--executor", choices=["real", "stub"], default="stub")
    p_run.add_argument("--stub-fixtures", help="stub fixture JSON map")
    p_run.add_argument("--kb", help="knowledge base directory")
    p_run.add_argument("--timeout", type=float, default=60.0,
                       help="sidecar timeout (seconds)")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.set_defaults(func=cmd_run)

    p_met = sub.add_parser("metrics", help="compare two STL files")
    p_met.add_argument("--gen", required=True, help="generated STL")
    p_met.add_argument("--ref", required=True, help="reference STL")
    p_met.add_argument("--tau", type=float, default=None, help="F1 threshold (mm)")
    p_met.add_argument("--voxel", type=float, default=None, help="voxel pitch (mm)")
    p_met.add_argument("--samples", type=int, default=None)
    p_met.add_argument("--seed", type=int, default=None)
    p_met.set_defaults(func=cmd_metrics)

    p_ren = sub.add_parser("render", help="three-view composite PNG of an STL")
    p_ren.add_argument("--stl", required=True)
    p_ren.add_argument("--out", required=True, help="output PNG path")
    p_ren.add_argument("--seed", type=int, default=None)  # accepted; unused
    p_ren.set_defaults(func=cmd_render)

    p_ben = sub.add_parser("bench", help="benchmark sweep with report tables")
    p_ben.add_argument("--dataset", help="dataset directory (default: shipped)")
    p_ben.add_argument("--mode", choices=sorted(_MODE_FLAGS) + ["all"],
                       default="full")
    p_ben.add_argument("--workers", type=int, default=1)
    p_ben.add_argument("--out", required=True, help="report directory")
    p_ben.add_argument("--mock", default="auto",
                       help="'auto' for dataset-derived transcripts, a "
                            "transcript path, or '' for the live backend")
    p_ben.add_argument("--executor", choices=["real", "stub"], default="stub")
    p_ben.add_argument("--stub-fixtures", help="stub fixture JSON map")
    p_ben.add_argument("--kb", help="knowledge base directory")
    p_ben.add_argument("--timeout", type=float, default=60.0)
    p_ben.add_argument("--seed", type=int, default=None)
    p_ben.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, LlmConfigError, RetrievalError, MeshError,
            bench_mod.BenchError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
