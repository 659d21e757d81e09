"""Command-line entry points; flags mirror config keys and override them."""

from __future__ import annotations

import argparse
import logging
import math
import sys

import yaml

from . import fileio, pipeline
from .fbp import FbpConfig, fbp_reconstruct
from .geometry import HuCalibration
from .metrics import RegionMask, lesion_probe, rmse, ssim
from .prior import load_prior
from .solver import reconstruct_dcr, wtv_only_baseline
from .wce import wce_extrapolate

log = logging.getLogger(__name__)


def _load_cfg(args, scenario_flag: bool = True) -> dict:
    user = {}
    if args.config:
        with open(args.config) as f:
            user = yaml.safe_load(f) or {}
    scenario = user.get("scenario", "truncation")
    if scenario_flag and getattr(args, "scenario", None):
        scenario = args.scenario  # explicit flag wins over the config file
    cfg = pipeline.merge_config(pipeline.default_config(scenario), user)
    cfg["scenario"] = scenario
    if getattr(args, "output_dir", None):
        cfg["output_dir"] = args.output_dir
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
        cfg["noise"]["seed"] = args.seed
    if getattr(args, "noise", None) is not None:
        cfg["noise"]["enabled"] = args.noise
    return cfg


def _add_config_flags(p, with_scenario=True):
    p.add_argument("--config", help="YAML pipeline config; flags override its keys")
    if with_scenario:
        p.add_argument("--scenario", choices=pipeline.SCENARIOS)
    p.add_argument("--output-dir")
    p.add_argument("--seed", type=int)
    noise = p.add_mutually_exclusive_group()
    noise.add_argument("--noise", dest="noise", action="store_true", default=None)
    noise.add_argument("--no-noise", dest="noise", action="store_false", default=None)


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    result = pipeline.run_pipeline(cfg, arms=[])
    print(f"simulated scenario {cfg['scenario']} into {result.output_dir}")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _load_cfg(args)
    result = pipeline.run_pipeline(cfg)
    print(yaml.safe_dump(result.report, sort_keys=False))
    print(f"artifacts written to {result.output_dir}")
    return 0


def cmd_validate(args) -> int:
    cfg = pipeline.load_config(args.config)
    problems = pipeline.validate_config(cfg)
    if problems:
        for p in problems:
            print(f"invalid: {p}")
        return 1
    print("config ok")
    return 0


def _grid_from_args(args):
    if args.like:
        return fileio.load_volume(args.like).grid
    dims = tuple(int(d) for d in args.dims.split(","))
    spacing = tuple(float(s) for s in args.spacing.split(","))
    from .geometry import ImageGrid

    return ImageGrid.centered(*dims, spacing_mm=spacing)


def _add_grid_flags(p):
    p.add_argument("--like", help="take the grid from an existing volume file")
    p.add_argument("--dims", default="256,256,1", help="nx,ny,nz (isocentered grid)")
    p.add_argument("--spacing", default="1.25,1.25,1.0", help="sx,sy,sz in mm")


def cmd_fbp(args) -> int:
    sino = fileio.load_sinogram(args.sinogram)
    grid = _grid_from_args(args)
    cfg = FbpConfig(
        filter=args.filter,
        short_scan_weighting=not args.no_short_scan_weighting,
        fov_radius_mm=args.fov_radius_mm,
    )
    vol = fbp_reconstruct(sino, grid, cfg)
    fileio.save_volume(args.output, vol)
    print(f"wrote {args.output}")
    return 0


def cmd_wce(args) -> int:
    sino = fileio.load_sinogram(args.sinogram)
    out = wce_extrapolate(sino)
    fileio.save_sinogram(args.output, out)
    print(f"wrote {args.output}")
    return 0


def cmd_prior(args) -> int:
    cfg = _load_cfg(args)
    grid = pipeline.build_grid(cfg["grid"])
    truth = fileio.load_volume(args.truth) if args.truth else None
    vol = load_prior(pipeline.build_prior_source(cfg["prior"]), grid, truth)
    fileio.save_volume(args.output, vol)
    print(f"wrote {args.output}")
    return 0


def cmd_reconstruct(args) -> int:
    cfg = _load_cfg(args, scenario_flag=False)
    solver_block = dict(cfg["solver"])
    for key in ("e1", "e2", "n_max", "l_max", "relaxation", "epsilon_hu", "sampling_per_mm"):
        value = getattr(args, key, None)
        if value is not None:
            solver_block[key] = value
    if args.wtv_only:
        solver_block["e2"] = math.inf
    solver_cfg = pipeline.build_solver_config(solver_block)
    sino = fileio.load_sinogram(args.sinogram)
    if args.wtv_only:
        grid = fileio.load_volume(args.prior).grid if args.prior else _grid_from_args(args)
        vol, trace = wtv_only_baseline(sino, grid, solver_cfg)
    else:
        if not args.prior:
            print("reconstruct: --prior is required unless --wtv-only", file=sys.stderr)
            return 2
        prior = fileio.load_volume(args.prior)
        vol, trace = reconstruct_dcr(sino, prior, solver_cfg)
    fileio.save_volume(args.output, vol)
    if args.trace:
        trace.to_csv(args.trace)
    print(f"wrote {args.output}")
    return 0


def cmd_metrics(args) -> int:
    cal = HuCalibration()
    vol = fileio.load_volume(args.volume)
    ref = fileio.load_volume(args.reference)
    if args.fov_radius_mm:
        mask = RegionMask.fov_disk(vol.grid, args.fov_radius_mm)
    else:
        mask = RegionMask.full(vol.grid)
    report = {
        "volume": args.volume,
        "reference": args.reference,
        "mask": mask.kind,
        "rmse_hu": rmse(vol, ref, mask, cal),
        "ssim": ssim(vol, ref, mask, cal),
    }
    for i, spec in enumerate(args.lesion or []):
        cx, cy, cz, r = (float(v) for v in spec.split(","))
        lesion = RegionMask.sphere(vol.grid, (cx, cy, cz), r)
        report[f"lesion_{i}"] = lesion_probe(vol, ref, lesion, cal)
    text = yaml.safe_dump(report, sort_keys=False)
    if args.output:
        with open(args.output, "w") as f:
            f.write(text)
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dctomo",
        description="Insufficient-data CT simulation and data-consistent reconstruction",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="phantom + sinogram simulation for one scenario")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("fbp", help="filtered backprojection of a sinogram file")
    p.add_argument("--sinogram", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--filter", default="ram_lak", choices=["ram_lak", "shepp_logan_window"])
    p.add_argument("--no-short-scan-weighting", action="store_true")
    p.add_argument("--fov-radius-mm", type=float)
    _add_grid_flags(p)
    p.set_defaults(fn=cmd_fbp)

    p = sub.add_parser("wce", help="water-cylinder extrapolation of a truncated sinogram")
    p.add_argument("--sinogram", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_wce)

    p = sub.add_parser("prior", help="produce a prior volume file from the configured source")
    _add_config_flags(p)
    p.add_argument("--truth", help="ground-truth volume (needed by the degraded oracle)")
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_prior)

    p = sub.add_parser("reconstruct", help="constrained reconstruction from sinogram + prior")
    p.add_argument("--sinogram", required=True)
    p.add_argument("--prior")
    p.add_argument("--output", required=True)
    p.add_argument("--trace", help="write the per-iteration convergence trace CSV here")
    p.add_argument("--wtv-only", action="store_true", help="zero prior, unmeasured rays ignored")
    p.add_argument("--config")
    p.add_argument("--e1", type=float)
    p.add_argument("--e2", type=float)
    p.add_argument("--n-max", dest="n_max", type=int)
    p.add_argument("--l-max", dest="l_max", type=int)
    p.add_argument("--relaxation", type=float)
    p.add_argument("--epsilon-hu", dest="epsilon_hu", type=float)
    p.add_argument("--sampling-per-mm", dest="sampling_per_mm", type=float)
    _add_grid_flags(p)
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("metrics", help="masked RMSE/SSIM and lesion probes between two volumes")
    p.add_argument("--volume", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--fov-radius-mm", type=float)
    p.add_argument("--lesion", action="append", help="cx,cy,cz,radius in mm; repeatable")
    p.add_argument("--output")
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("pipeline", help="full paired-arm comparison for one scenario")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("validate", help="report every config invariant violation")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_validate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
