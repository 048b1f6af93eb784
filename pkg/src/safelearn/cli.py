"""Command line front end.

Exit codes: 0 satisfied, 3 impossible, 4 budget exhausted, 5 config or
input error, 1 unexpected failure (2 is left to argparse usage errors).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .abstraction import Imdp
from .checker import satisfaction_bounds
from .config import ConfigError, load_config
from .explorer import ExperimentConfig, Outcome, SynthesisResult, iterative_synthesis, make_truth
from .model import product
from .report import plot_grid, plot_iterations, write_field, write_iterations, write_policy, write_trajectory
from .scltl import NONE_OBS, OUT_OBS, FormulaSyntaxError, StateCapExceeded, atoms, parse, to_fsa

EXIT_SATISFIED = 0
EXIT_FAILURE = 1
EXIT_IMPOSSIBLE = 3
EXIT_BUDGET = 4
EXIT_CONFIG = 5

EXIT_CODES = {Outcome.SATISFIED: EXIT_SATISFIED, Outcome.IMPOSSIBLE: EXIT_IMPOSSIBLE,
              Outcome.BUDGET_EXHAUSTED: EXIT_BUDGET}

ARTIFACT_ENV = "SAFELEARN_ARTIFACTS"

log = logging.getLogger("safelearn")


def artifact_root() -> Path:
    return Path(os.environ.get(ARTIFACT_ENV, "artifacts"))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    config_path: str
    config_hash: str
    version: str = __version__
    started: str = field(default_factory=_now)
    finished: str = ""
    seeds: list[dict] = field(default_factory=list)
    outcomes: list[dict] = field(default_factory=list)
    artifacts: list[str] = field(default_factory=list)

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(self.__dict__, indent=2) + "\n")


def _seed_info(cfg: ExperimentConfig) -> dict:
    return {"truth": cfg.seed_truth, "noise": cfg.seed_noise, "explore": cfg.seed_explore}


def write_run(cfg: ExperimentConfig, result: SynthesisResult, out: Path, plots: bool = True,
              truth=None) -> list[str]:
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def mark(name):
        written.append(name)
        return out / name

    write_iterations(mark("iterations.csv"), result.reports)
    write_trajectory(mark("trajectory.csv"), result, cfg.n)
    if result.data is not None:
        result.data.to_csv(mark("dataset.csv"))
    if result.policy is not None:
        write_policy(mark("policy.txt"), result.policy)
    if result.fsa is not None:
        mark("fsa.txt").write_text(result.fsa.dump())
    if truth is not None:
        write_field(mark("field.csv"), *truth.field_rows())
    if plots:
        plot_iterations(mark("iterations.png"), result.reports)
        if cfg.n == 2:
            plot_grid(mark("grid.png"), cfg.partition(), result)
    return written


def _execute(cfg: ExperimentConfig, out: Path, plots: bool) -> dict:
    t0 = time.perf_counter()
    truth = make_truth(cfg)
    result = iterative_synthesis(cfg, truth)
    wall = time.perf_counter() - t0
    files = write_run(cfg, result, out, plots, truth)
    return {"seed": cfg.seed_truth, "outcome": result.outcome.value, "iterations": result.iterations,
            "samples": result.reports[-1].m, "wall_seconds": round(wall, 3),
            "p_low": result.reports[-1].p_low, "p_high": result.reports[-1].p_high,
            "diagnostic": result.diagnostic, "artifacts": files, "dir": str(out)}


def _execute_safe(args) -> dict:
    cfg, out, plots = args
    try:
        return _execute(cfg, out, plots)
    except Exception as exc:  # one failing seed must not abort the batch
        return {"seed": cfg.seed_truth, "outcome": "error", "iterations": "", "samples": "",
                "wall_seconds": "", "p_low": "", "p_high": "", "diagnostic": f"{type(exc).__name__}: {exc}",
                "artifacts": [], "dir": str(out)}


def cmd_run(args) -> int:
    cfg, digest = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    name = f"{Path(args.config).stem}-{digest[:8]}" + ("" if args.seed is None else f"-seed{args.seed}")
    out = Path(args.out) if args.out else artifact_root() / name
    manifest = RunManifest(str(args.config), digest, seeds=[_seed_info(cfg)])
    row = _execute(cfg, out, not args.no_plots)
    manifest.finished = _now()
    manifest.outcomes.append({k: row[k] for k in ("seed", "outcome", "iterations", "samples",
                                                  "wall_seconds", "diagnostic")})
    manifest.artifacts = row["artifacts"]
    manifest.write(out / "manifest.json")
    print(f"{row['outcome']} after {row['iterations']} iterations "
          f"(P_low={row['p_low']:.6f}, P_high={row['p_high']:.6f}); artifacts in {out}")
    if row["diagnostic"]:
        print(row["diagnostic"])
    return EXIT_CODES[Outcome(row["outcome"])]


BATCH_COLUMNS = ["seed", "outcome", "iterations", "samples", "wall_seconds", "diagnostic"]


def cmd_batch(args) -> int:
    base, digest = load_config(args.config)
    if not args.seeds:
        raise ConfigError("seeds", "at least one seed is required")
    out = Path(args.out) if args.out else artifact_root() / f"{Path(args.config).stem}-{digest[:8]}-batch"
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(base.with_seed(s), out / f"seed-{s}", not args.no_plots) for s in args.seeds]
    manifest = RunManifest(str(args.config), digest, seeds=[_seed_info(j[0]) for j in jobs])
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_execute_safe, jobs))
    else:
        rows = [_execute_safe(j) for j in jobs]
    manifest.finished = _now()
    with open(out / "batch.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BATCH_COLUMNS)
        for r in rows:
            w.writerow([r[c] for c in BATCH_COLUMNS])
        done = [r for r in rows if r["outcome"] == Outcome.SATISFIED.value]
        iters = [r["iterations"] for r in done]
        walls = [r["wall_seconds"] for r in rows if r["wall_seconds"] != ""]
        w.writerow(["mean", f"{len(done)}/{len(rows)} satisfied",
                    f"{statistics.fmean(iters):.3f}" if iters else "", "",
                    f"{statistics.fmean(walls):.3f}" if walls else "", ""])
        w.writerow(["median", "", f"{statistics.median(iters):g}" if iters else "", "",
                    f"{statistics.median(walls):.3f}" if walls else "", ""])
    manifest.outcomes = [{k: r[k] for k in BATCH_COLUMNS} for r in rows]
    manifest.artifacts = ["batch.csv"] + [f"seed-{r['seed']}/{a}" for r in rows for a in r["artifacts"]]
    manifest.write(out / "manifest.json")
    for r in rows:
        print(f"seed {r['seed']}: {r['outcome']} {r['iterations']} {r['diagnostic']}".rstrip())
    print(f"{len(done)}/{len(rows)} satisfied; summary in {out / 'batch.csv'}")
    return EXIT_SATISFIED


def cmd_check(args) -> int:
    try:
        text = Path(args.imdp).read_text()
    except OSError as exc:
        raise ConfigError("imdp", f"cannot read {args.imdp}: {exc.strerror}") from None
    try:
        imdp = Imdp.from_text(text)
        imdp.check()
    except (ValueError, AssertionError) as exc:
        raise ConfigError("imdp", str(exc)) from None
    initial = args.initial if args.initial is not None else (imdp.initial[0] if imdp.initial else None)
    if initial is None:
        raise ConfigError("initial", "no initial state in the file; pass --initial")
    phi = parse(args.formula)
    fsa = to_fsa(phi, set(imdp.labels) | atoms(phi) | {NONE_OBS, OUT_OBS})
    prod = product(imdp, fsa, initial)
    low, high, _ = satisfaction_bounds(prod, prod.accepting, args.eps)
    if args.all:
        print("state p_low p_high")
        for i in range(prod.n_states):
            print(f"{prod.state_name(i)} {low[i]:.9f} {high[i]:.9f}")
    else:
        print(f"p_low {low[prod.initial]:.9f}")
        print(f"p_high {high[prod.initial]:.9f}")
    return EXIT_SATISFIED


def cmd_dump_fsa(args) -> int:
    phi = parse(args.formula)
    letters = atoms(phi) | set(args.alphabet or ()) | {NONE_OBS, OUT_OBS}
    print(to_fsa(phi, letters).dump(), end="")
    return EXIT_SATISFIED


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="safelearn", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("config")
    run.add_argument("--seed", type=int, help="derive all seeds from this one value")
    run.add_argument("--out", help=f"artifact directory (default under ${ARTIFACT_ENV})")
    run.add_argument("--no-plots", action="store_true")
    run.set_defaults(func=cmd_run)

    batch = sub.add_parser("batch", help="run one experiment per seed")
    batch.add_argument("config")
    batch.add_argument("--seeds", type=int, nargs="+", default=list(range(10)))
    batch.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    batch.add_argument("--out")
    batch.add_argument("--no-plots", action="store_true")
    batch.set_defaults(func=cmd_batch)

    check = sub.add_parser("check", help="bound satisfaction probabilities on an IMDP file")
    check.add_argument("imdp")
    check.add_argument("formula")
    check.add_argument("--initial", type=int)
    check.add_argument("--eps", type=float, default=1e-6)
    check.add_argument("--all", action="store_true", help="print every product state")
    check.set_defaults(func=cmd_check)

    dump = sub.add_parser("dump-fsa", help="print the automaton of a formula")
    dump.add_argument("formula")
    dump.add_argument("--alphabet", nargs="*", help="extra letters")
    dump.set_defaults(func=cmd_dump_fsa)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FormulaSyntaxError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StateCapExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
