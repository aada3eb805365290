"""Command-line entry point: generate, benchmark, ablate, selftest, schedule.

Exit codes: 0 success, 1 configuration or run error, 2 selftest failure.
The ASG_LOG environment variable (debug|info|warning) sets verbosity.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import config as cfgmod
from .engine import (
    benchmark,
    boundary_structures,
    build_run_predictor,
    run_pipeline,
    run_stage1,
    run_stage2,
)
from .errors import ConfigError, RunError, ShapeError
from .export import write_image
from .metrics import MetricReport, seam_discontinuity, structure_disagreement
from .patching import interleave_split, spatial_split
from .schedule import make_schedule, schedule_csv
from .selftest import run_selftest
from .tensor import write_asgt


def _init_logging() -> None:
    level = {"debug": logging.DEBUG, "info": logging.INFO}.get(
        os.environ.get("ASG_LOG", "").lower(), logging.WARNING
    )
    logging.basicConfig(level=level, format="%(name)s %(levelname)s %(message)s")


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run configuration file (dotted-key JSON)")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--mode", choices=["sequential", "sync", "async"], help="executor mode")
    p.add_argument("--workers", type=int, help="worker count for parallel modes")
    p.add_argument("--delay-ms", type=float, dest="delay_ms", help="injected predict delay")
    p.add_argument("--predictor", help="gaussian | gmm | constant | remote:HOST:PORT")
    p.add_argument("--w", type=float, help="structure guidance scale")
    p.add_argument("--ratio", type=float, help="stage-1 fraction of the step budget")
    p.add_argument("--mask", help="off | one | attention | file:PATH")


def _overrides(args: argparse.Namespace) -> dict:
    return {
        "seed": args.seed,
        "out": args.out,
        "executor": args.mode,
        "workers": args.workers,
        "delay_ms": args.delay_ms,
        "predictor.kind": args.predictor,
        "guidance.w": args.w,
        "ratio": args.ratio,
        "guidance.mask": args.mask,
    }


def _load(args: argparse.Namespace) -> cfgmod.CliConfig:
    flat = cfgmod.load_config_file(args.config) if args.config else {}
    flat = cfgmod.apply_overrides(flat, _overrides(args))
    return cfgmod.build_config(flat)


def _prepare_out(cli: cfgmod.CliConfig) -> str:
    os.makedirs(cli.out_dir, exist_ok=True)
    probe = os.path.join(cli.out_dir, ".write-probe")
    with open(probe, "w") as f:
        f.write("ok")
    os.remove(probe)
    return cli.out_dir


def cmd_generate(args: argparse.Namespace) -> int:
    cli = _load(args)
    out_dir = _prepare_out(cli)
    final, report = run_pipeline(cli.pipeline)
    written = []
    if "asgt" in cli.formats:
        path = os.path.join(out_dir, "final.asgt")
        write_asgt(path, final)
        written.append(path)
    if "ppm" in cli.formats:
        written.append(write_image(os.path.join(out_dir, "final.ppm"), final))
    report_path = os.path.join(out_dir, "report.json")
    with open(report_path, "w") as f:
        f.write(report.to_json())
    written.append(report_path)
    config_path = os.path.join(out_dir, "config.json")
    with open(config_path, "w") as f:
        f.write(cfgmod.canonical(cfgmod.to_flat(cli)))
    written.append(config_path)
    print(f"checksum {report.checksum}")
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_benchmark(args: argparse.Namespace) -> int:
    cli = _load(args)
    out_dir = _prepare_out(cli)
    result = benchmark(cli.pipeline)
    print(result.table())
    csv_path = os.path.join(out_dir, "benchmark.csv")
    with open(csv_path, "w") as f:
        f.write(result.csv())
    for mode, rep in result.reports.items():
        with open(os.path.join(out_dir, f"timings_{mode}.csv"), "w") as f:
            f.write(rep.timing_csv())
    print(f"wrote {csv_path}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cli = _load(args)
    out_dir = _prepare_out(cli)
    pipe = cli.pipeline
    if pipe.upscale < 2:
        raise ConfigError("target_hw: ablation needs at least 2x upscale (multiple patches)")
    base_w = pipe.guidance.w if pipe.guidance.w > 0 else 2.0
    sched = make_schedule(pipe.train_steps, pipe.beta_start, pipe.beta_end)

    lines = ["sg,cam,mode,structure_disagreement,latent_disagreement,seam_ratio"]
    cell_reports = []
    for sg in (True, False):
        for cam in (True, False):
            for mode in ("sync", "async"):
                gcfg = dataclasses.replace(
                    pipe.guidance,
                    w=base_w if sg else 0.0,
                    mask_mode="attention" if cam else "off",
                    mask_path=None,
                )
                cell = dataclasses.replace(pipe, guidance=gcfg, executor=mode)
                predictor = build_run_predictor(cell, sched)
                boundary, report = run_stage1(cell, predictor, mode, sched=sched)
                disagreement = structure_disagreement(
                    boundary_structures(cell, predictor, boundary, sched)
                )
                latent_disagreement = structure_disagreement(
                    interleave_split(boundary, cell.upscale)
                )
                final = run_stage2(cell, predictor, mode, boundary, sched=sched, report=report)
                geom = spatial_split(final, cell.base_hw[0], cell.base_hw[1], cell.stage2_overlap)
                seam = seam_discontinuity(final, geom)
                report.metrics.append(
                    MetricReport(name="structure_disagreement", value=disagreement).to_dict()
                )
                report.metrics.append(
                    MetricReport(name="latent_disagreement", value=latent_disagreement).to_dict()
                )
                if np.isfinite(seam):
                    report.metrics.append(MetricReport(name="seam_ratio", value=seam).to_dict())
                cell_reports.append(
                    {"sg": sg, "cam": cam, "mode": mode, "report": report.to_dict()}
                )
                lines.append(
                    f"{int(sg)},{int(cam)},{mode},{disagreement:.6g},{latent_disagreement:.6g},{seam:.6g}"
                )
                print(lines[-1])
    csv_path = os.path.join(out_dir, "ablation.csv")
    with open(csv_path, "w") as f:
        f.write("\n".join(lines) + "\n")
    report_path = os.path.join(out_dir, "ablation_report.json")
    with open(report_path, "w") as f:
        json.dump(cell_reports, f, indent=2)
    print(f"wrote {csv_path}")
    print(f"wrote {report_path}")
    return 0


def cmd_selftest(args: argparse.Namespace) -> int:
    fault = os.environ.get("ASG_SELFTEST_FAULT") or None
    results = run_selftest(fault)
    failed = 0
    for name, ok, detail in results:
        marker = "ok  " if ok else "FAIL"
        suffix = f"  ({detail})" if detail else ""
        print(f"{marker} {name}{suffix}")
    failed = sum(1 for _, ok, _ in results if not ok)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 2


def cmd_schedule(args: argparse.Namespace) -> int:
    cli = _load(args)
    out_dir = _prepare_out(cli)
    pipe = cli.pipeline
    sched = make_schedule(pipe.train_steps, pipe.beta_start, pipe.beta_end)
    path = os.path.join(out_dir, "schedule.csv")
    with open(path, "w") as f:
        f.write(schedule_csv(sched))
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asgdiff",
        description="Patch-parallel diffusion sampling with asynchronous structure guidance",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, doc in [
        ("generate", cmd_generate, "run the two-stage pipeline and write the final latent"),
        ("benchmark", cmd_benchmark, "compare executor modes on identical work"),
        ("ablate", cmd_ablate, "toggle guidance/mask/mode and report the metrics grid"),
        ("schedule", cmd_schedule, "dump the noise schedule as CSV"),
    ]:
        p = sub.add_parser(name, help=doc)
        _add_common_flags(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("selftest", help="run the embedded invariant suite")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    _init_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ShapeError, RunError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
