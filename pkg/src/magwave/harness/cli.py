"""``python -m magwave <command>``: verify, go-decay, recover, stability.

Exit status 0 when the run completes and its checks pass, 1 when a check
fails, 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import ConfigError, ExperimentConfig, load_config
from .output import write_csv, write_field, write_manifest

log = logging.getLogger("magwave")


def _verify(cfg: ExperimentConfig, out: Path, workers: int) -> tuple[int, list[Path]]:
    checks = ex.run_verify(cfg)
    path = write_csv(out / "verify.csv", ex.CHECK_COLUMNS, (c.row() for c in checks))
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:18s} {c.measured:.3e} (tol {c.tolerance:.0e})")
    return (0 if all(c.passed for c in checks) else 1), [path]


def _go_decay(cfg: ExperimentConfig, out: Path, workers: int) -> tuple[int, list[Path]]:
    rows = ex.run_go_decay(cfg, workers)
    path = write_csv(out / "go_decay.csv", ex.GO_DECAY_COLUMNS, rows)
    for r in rows:
        print(f"sigma {r[0]:6.3g}  |psi| {r[1]:.4e}  |grad psi| {r[2]:.4e}  N {r[3]:.4e}")
    slope = rows[0][4] if rows else None
    if slope is not None:
        print(f"fitted slope of log|psi| against log sigma: {slope:.3f}")
    return 0, [path]


def _recover(cfg: ExperimentConfig, out: Path, workers: int) -> tuple[int, list[Path]]:
    res = ex.run_recover(cfg, workers)
    samples = out / "samples.csv"
    res.samples.write_csv(samples)
    summary = write_csv(out / "summary.csv", ex.SUMMARY_COLUMNS, [res.summary_row()])
    axes = {"x1": res.x1, "x2": res.x2, "x3": res.x3}
    domain = f"(0,1) x {cfg['geometry.shape']} cross-section, beta23 on grid nodes"
    rec = write_field(out / "beta23_reconstructed", res.field, axes, domain)
    tru = write_field(out / "beta23_true", np.real(res.truth), axes, domain)
    print(
        f"gamma {res.gamma:.4g}  retained {res.retained}  mass {res.mass_fraction:.4f}  "
        f"relative L2 error {res.rel_error:.4f}"
    )
    return 0, [samples, summary, *rec, *tru]


def _stability(cfg: ExperimentConfig, out: Path, workers: int) -> tuple[int, list[Path]]:
    rows = ex.stability_experiment(cfg, workers)
    path = write_csv(out / "stability.csv", ex.STABILITY_COLUMNS, rows)
    for r in rows:
        if r[2] is not None and (r[4] or r[5]):
            log.warning("eps = %g: resolution cap reached (gamma capped: %s, sigma capped: %s)", r[0], r[4], r[5])
        print(f"eps {r[0]:<6g} delta {r[1]:.4e}  rec error {r[8]:.4e}")
    return 0, [path]


COMMANDS = {"verify": _verify, "go-decay": _go_decay, "recover": _recover, "stability": _stability}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="magwave", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, default=None, help="flat key = value config file")
        s.add_argument("--out", type=Path, default=None, help="output directory (default run.out)")
        s.add_argument("--workers", type=int, default=None, help="worker processes (default run.workers)")
        s.add_argument("--seed", type=int, default=None, help="random seed (default run.seed)")
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    started = time.time()
    try:
        cfg = load_config(args.config)
        over = {}
        if args.workers is not None:
            over["run.workers"] = args.workers
        if args.seed is not None:
            over["run.seed"] = args.seed
        if args.out is not None:
            over["run.out"] = str(args.out)
        if over:
            cfg = cfg.with_overrides(**over)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg["run.out"])
    out.mkdir(parents=True, exist_ok=True)
    status, files = COMMANDS[args.command](cfg, out, cfg["run.workers"])
    write_manifest(out, args.command, cfg.snapshot(), files, started, cfg["run.seed"])
    return status
