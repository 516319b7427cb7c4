"""Command-line entry point ``abcpass``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, pipeline
from .config import config_schema, load_config
from .errors import AbcError, ConfigError
from .io import LocusData, TrajectoryDataset, write_trajectories
from .sampler import Chain
from .wf.sim import SamplingPlan, wf_simulate_locus

log = logging.getLogger("abcpass")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="TOML run configuration")
    p.add_argument("--seed", type=int, help="overrides the config seed (unsigned 64-bit)")
    p.add_argument("--threads", type=int, help="worker threads (default: available cores)")
    p.add_argument("--out", help="output directory (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="abcpass", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in [("pilot", "simulate the pilot set"),
                        ("learn", "pilot + Box-Cox and projections"),
                        ("calibrate", "pilot + learn + tolerances, widths and start"),
                        ("run", "full pipeline: calibrate, warm start and the chain"),
                        ("sweep", "tolerance x proposal-width grid against the analytic posterior"),
                        ("wf-infer", "joint Ne / selection inference from a trajectory file")]:
        _common(sub.add_parser(name, help=help_))

    rp = sub.add_parser("report", help="posterior summary of a chain CSV")
    rp.add_argument("chain", help="chain CSV written by run or wf-infer")
    rp.add_argument("--burn-in", type=float, default=0.1)
    rp.add_argument("--out", help="write report.csv (and significance) here")

    sp = sub.add_parser("simulate", help="write a synthetic Wright-Fisher trajectory file")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--loci", type=int, default=20)
    sp.add_argument("--log10ne", type=float, default=3.0)
    sp.add_argument("--timepoints", type=int, default=10)
    sp.add_argument("--spacing", type=int, default=13)
    sp.add_argument("--sample-size", type=int, default=1000)
    sp.add_argument("--s", type=float, help="common selection coefficient (default: U[0, 1] per locus)")
    sp.add_argument("--init-freq", type=float, nargs=2, default=(0.05, 0.5), metavar=("LO", "HI"))
    sp.add_argument("--diploid", action="store_true")

    sub.add_parser("config-schema", help="print the JSON schema of the configuration")
    return ap


def _load(args):
    cfg = load_config(args.config)
    upd = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        upd["seed"] = args.seed
    if args.out is not None:
        upd["out"] = args.out
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        upd["threads"] = args.threads
    return cfg.model_copy(update=upd) if upd else cfg


def _threads(cfg) -> int:
    return cfg.threads or os.cpu_count() or 1


def cmd_stage(args) -> int:
    cfg = _load(args)
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    if cfg.model.kind == "wf":
        if args.command not in ("run", "wf-infer"):
            raise ConfigError(f"'{args.command}' is not a separate stage for WF models; use wf-infer")
        res = pipeline.run_wf_pipeline(cfg)
        if res.significance is not None:
            flagged = sum(f for *_, f in res.significance)
            print(f"{len(res.significance)} loci, {flagged} significant; results in {cfg.out}")
        return EXIT_OK
    if args.command == "wf-infer":
        raise ConfigError("wf-infer needs model.kind = 'wf'")
    out = pipeline.run_pipeline(cfg, args.command, _threads(cfg))
    if isinstance(out, Chain):
        rate = ", ".join(f"{n}={a:.3f}" for n, a in zip(out.param_names, out.acceptance_rate))
        print(f"chain of {out.iterations} iterations; acceptance {rate}")
    print(f"artifacts in {cfg.out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    summary = pipeline.stage_sweep(cfg, _threads(cfg))
    print(json.dumps(summary, indent=2, default=float))
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        names, records = Chain.read_csv(args.chain)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read chain {args.chain}: {e}") from None
    rep = pipeline.report_posteriors(names, records, args.burn_in)
    print(",".join(pipeline.REPORT_COLUMNS))
    for row in rep["table"]:
        print(row[0] + "," + ",".join(f"{x:.6g}" for x in row[1:]))
    if "significance" in rep:
        print("locus,P_Nes_gt_10,significant")
        for name, p, f in rep["significance"]:
            print(f"{name},{p:.4f},{str(f).lower()}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        pipeline.write_report(rep, out / "report.csv")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.loci < 1 or args.timepoints < 2 or args.spacing < 1 or args.sample_size < 1:
        raise ConfigError("need loci >= 1, timepoints >= 2, spacing >= 1, sample size >= 1")
    lo, hi = args.init_freq
    if not 0 < lo <= hi < 1:
        raise ConfigError("--init-freq needs 0 < LO <= HI < 1")
    rng = np.random.default_rng(args.seed)
    plan = SamplingPlan.regular(args.timepoints, args.spacing, args.sample_size)
    Ne = max(2, int(round(10 ** args.log10ne)))
    loci, truth = [], []
    for l in range(args.loci):
        s = args.s if args.s is not None else rng.uniform(0.0, 1.0)
        p0 = rng.uniform(lo, hi)
        traj = wf_simulate_locus(Ne, s, p0, plan, int(rng.integers(0, 2**63)), args.diploid)
        loci.append(LocusData(f"L{l + 1}", 1000 * (l + 1), traj))
        truth.append((f"L{l + 1}", s, p0))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectories(TrajectoryDataset(loci), out / "trajectories.csv")
    with open(out / "truth.csv", "w") as fh:
        fh.write(f"# log10Ne={args.log10ne!r}\nlocus,s,init_freq\n")
        for name, s, p0 in truth:
            fh.write(f"{name},{s!r},{p0!r}\n")
    print(f"wrote {args.loci} loci to {out / 'trajectories.csv'}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"sweep": cmd_sweep, "report": cmd_report, "simulate": cmd_simulate}
    try:
        if args.command == "config-schema":
            print(json.dumps(config_schema(), indent=2))
            return EXIT_OK
        return handlers.get(args.command, cmd_stage)(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (AbcError, ArithmeticError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
