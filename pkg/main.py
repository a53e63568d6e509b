import argparse
import logging
import sys
import uuid
from datetime import datetime
from fractions import Fraction
from pathlib import Path
from typing import List, Optional

import config
from aleufe.exceptions import AleUfeError
from aleufe.models import CASE_IDS, CaseConfig, ConvergenceReport
from bench.report import convergence_table
from bench.runner import run_case
from bench.worker import SweepWorker


def _parse_fraction(value: str) -> float:
    """Accept '1/32' or '0.03125'"""
    try:
        return float(Fraction(value))
    except (ValueError, ZeroDivisionError) as e:
        raise argparse.ArgumentTypeError(f"not a number or fraction: '{value}'") from e


def _parse_levels(value: str) -> List[int]:
    try:
        levels = [int(v) for v in value.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"levels must be comma-separated integers, got '{value}'") from e
    if len(levels) < 1:
        raise argparse.ArgumentTypeError("at least one level is required")
    return levels


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aleufe", description="Unfitted FEM on moving domains: benchmark runner")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--case", required=True, choices=CASE_IDS)
        p.add_argument("--k", type=int, default=3, choices=(2, 3, 4))
        p.add_argument("--T", type=float, default=None, help="final time (defaults to the case's)")
        p.add_argument("--gamma0", type=float, default=config.GAMMA0)
        p.add_argument("--nu1", type=float, default=None)
        p.add_argument("--nu2", type=float, default=None)
        p.add_argument("--solver", choices=("direct", "iterative"), default=config.LINEAR_SOLVER)
        p.add_argument("--reference", dest="reference_dir", default=None,
                       help="directory of the reference run (coupled case)")
        p.add_argument("--out", dest="output_dir", nargs="?", const=config.OUTPUT_DIR, default=None,
                       help=f"output directory (bare --out writes to {config.OUTPUT_DIR})")
        p.add_argument("--snapshot-every", type=int, default=0)

    run = sub.add_parser("run", help="run one configuration")
    common(run)
    run.add_argument("--h", type=_parse_fraction, required=True)
    run.add_argument("--tau", type=_parse_fraction, default=None)
    run.add_argument("--eta", type=_parse_fraction, default=None)

    sweep = sub.add_parser("sweep", help="run a refinement sweep and print the convergence table")
    common(sweep)
    sweep.add_argument("--levels", type=_parse_levels, default=[16, 32, 64, 128])
    sweep.add_argument("--workers", type=int, default=None, help=f"process cap (default {config.ALEUFE_THREADS})")
    return parser


def _config_from_args(args: argparse.Namespace, h: float, tau: Optional[float] = None,
                      eta: Optional[float] = None) -> CaseConfig:
    return CaseConfig(case=args.case, k=args.k, h=h, tau=tau, T=args.T, gamma0=args.gamma0, eta=eta,
                      nu1=args.nu1, nu2=args.nu2, reference_dir=args.reference_dir, output_dir=args.output_dir,
                      snapshot_every=args.snapshot_every, solver=args.solver,
                      allow_unequal=tau is not None and abs(tau - h) > 1e-14)


def _banner(title: str, cfg: CaseConfig, session_id: str) -> None:
    if not config.VERBOSE_OUTPUT:
        return
    print(f"\n{'='*60}")
    print(title)
    print(f"Session ID: {session_id}")
    print(f"{'='*60}")
    print(f"Case: {cfg.case}")
    print(f"Order k: {cfg.k}")
    print(f"gamma0: {cfg.gamma0}")
    print(f"Linear solver: {cfg.solver}")
    if cfg.output_dir:
        print(f"Output: {cfg.output_dir}")
    print(f"{'='*60}\n")


def run_command(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args, args.h, args.tau, args.eta)
    session_id = str(uuid.uuid4())
    start = datetime.now()
    _banner("ALE unfitted FEM: single run", cfg, session_id)
    print(f"🔧 Running {cfg.label} (h={cfg.h:g}, tau={cfg.tau:g})...")
    try:
        record = run_case(cfg)
    except AleUfeError as e:
        print(f"❌ Run failed: {e}")
        return 1
    report = ConvergenceReport(case=cfg.case, k=cfg.k, records=[record])
    print(convergence_table(report, cfg.output_dir))
    print(f"\n{'='*60}")
    print(f"📊 Final Statistics:")
    print(f"   - Steps: {record.steps}")
    print(f"   - Unknowns (last step): {record.dofs}")
    print(f"   - Duration: {(datetime.now() - start).total_seconds():.1f} seconds")
    print(f"{'='*60}\n")
    return 0


def sweep_command(args: argparse.Namespace) -> int:
    base = _config_from_args(args, 1.0 / args.levels[0])
    session_id = str(uuid.uuid4())
    start = datetime.now()
    _banner("ALE unfitted FEM: refinement sweep", base, session_id)
    print(f"📐 Levels: {', '.join(f'1/{n}' for n in args.levels)}")
    worker = SweepWorker(base, args.levels, max_workers=args.workers)
    report = worker.run()
    print()
    print(convergence_table(report, args.output_dir))
    failed = [job for job in worker.jobs if job.status == "failed"]
    for job in failed:
        print(f"❌ {job.config.label}: {job.error}")
    print(f"\n✓ Sweep finished in {(datetime.now() - start).total_seconds():.1f} seconds")
    return 1 if failed else 0


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=getattr(logging, config.LOG_LEVEL.upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.output_dir:
        Path(args.output_dir).mkdir(parents=True, exist_ok=True)
    if args.command == "run":
        return run_command(args)
    return sweep_command(args)


if __name__ == "__main__":
    sys.exit(main())
