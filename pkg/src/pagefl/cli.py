"""Command-line driver: ``run``, ``compare`` and ``fse-check``.

Exit codes: 0 success, 2 configuration or usage error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import subprocess
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, game, orchestrator
from .config import ALGORITHMS, ConfigError, ExperimentConfig, load_config
from .orchestrator import RunResult

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 2, 3

ROUND_COLUMNS = (
    "t", "global_acc", "global_loss", "mean_local_acc", "var_local_acc", "r_cs",
    "mean_r_i", "min_p", "max_p", "mean_alpha", "mean_eta", "wall_ms",
)
SUMMARY_KEYS = ("algorithm", "config_hash", "seeds", "final_global_acc", "final_local_acc", "equilibrium_round")
COMPARE_COLUMNS = (
    "label", "algorithm", "global_acc", "local_acc", "equilibrium_round",
    "global_improvement_pct", "local_improvement_pct",
)


class UsageError(Exception):
    pass


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def round_rows(result: RunResult) -> list[list]:
    rows = []
    for r in result.history:
        rows.append([
            r.t, r.global_acc, r.global_loss, r.mean_local_acc, r.var_local_acc, r.r_cs,
            r.mean_r_i, min(r.weights), max(r.weights), float(np.mean(r.alphas)),
            float(np.mean(r.etas)), r.wall_ms,
        ])
    return rows


def read_rounds_csv(path) -> list[dict]:
    """Parse a per-round CSV back into typed rows."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ROUND_COLUMNS:
            raise ValueError(f"unexpected columns {reader.fieldnames}")
        return [{k: (int(v) if k == "t" else float(v)) for k, v in row.items()} for row in reader]


def write_run_outputs(out: Path, result: RunResult, algorithm: str) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    files = {"rounds": out / "rounds.csv"}
    _write_csv(files["rounds"], ROUND_COLUMNS, round_rows(result))
    if algorithm == "page":
        n = len(result.history[0].weights)
        files["weights"] = out / "weights.csv"
        _write_csv(files["weights"], ["t", *[f"p_{i}" for i in range(n)]],
                   [[r.t, *r.weights] for r in result.history])
        files["actions"] = out / "actions.csv"
        _write_csv(files["actions"], ["t", "client", "alpha", "eta"],
                   [[r.t, i, a, e] for r in result.history for i, (a, e) in enumerate(zip(r.alphas, r.etas))])
    return {k: str(v) for k, v in files.items()}


def _version() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.algo is not None:
        changes["algorithm"] = args.algo
    if args.runs is not None:
        changes["runs"] = args.runs
    cfg = cfg.replace(**changes).validate()
    out = Path(args.out)
    started = _now()
    results = []
    outputs = {}
    for k in range(cfg.runs):
        seed = cfg.seed + k
        result = orchestrator.run(cfg, seed)
        results.append(result)
        run_dir = out / f"seed_{seed}"
        outputs[str(seed)] = write_run_outputs(run_dir, result, cfg.algorithm)
        if cfg.checkpoint:
            orchestrator.save_checkpoint(run_dir / "checkpoint", cfg, result)
            outputs[str(seed)]["checkpoint"] = str(run_dir / "checkpoint")
    summary = orchestrator.summarize(results)
    summary.update({"algorithm": cfg.algorithm, "config_hash": cfg.digest()})
    summary["per_run"] = [
        {"seed": r.seed, "global_acc": r.final.global_acc, "local_acc": r.final.mean_local_acc,
         "equilibrium_round": r.equilibrium_round, "rounds_run": len(r.history),
         "total_grad_steps": r.total_grad_steps}
        for r in results
    ]
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    manifest = {
        "config": cfg.to_dict(),
        "version": _version(),
        "seeds": [r.seed for r in results],
        "outputs": {"summary": str(out / "summary.json"), "runs": outputs},
        "started": started,
        "finished": _now(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    fg, fl = summary["final_global_acc"], summary["final_local_acc"]
    print(f"{cfg.algorithm}: global acc {fg['mean']:.4f} (var {fg['var']:.2e}), "
          f"local acc {fl['mean']:.4f} (var {fl['var']:.2e}) over {cfg.runs} run(s); outputs in {out}")
    return EXIT_OK


def _load_summary(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            s = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from exc
    missing = [k for k in SUMMARY_KEYS if not isinstance(s, dict) or k not in s]
    if missing:
        raise UsageError(f"{path}: not a run summary (missing {', '.join(missing)})")
    return s


def compare_rows(summaries: list[tuple[str, dict]]) -> list[dict]:
    """One row per summary; PAGE rows carry the relative gain over the best baseline in percent."""
    rows = []
    for label, s in summaries:
        eq = s["equilibrium_round"]["mean"]
        rows.append({
            "label": label, "algorithm": s["algorithm"],
            "global_acc": s["final_global_acc"]["mean"], "local_acc": s["final_local_acc"]["mean"],
            "equilibrium_round": eq, "global_improvement_pct": None, "local_improvement_pct": None,
        })
    baselines = [r for r in rows if r["algorithm"] != "page"]
    if baselines:
        best_g = max(r["global_acc"] for r in baselines)
        best_l = max(r["local_acc"] for r in baselines)
        for r in rows:
            if r["algorithm"] == "page":
                r["global_improvement_pct"] = (r["global_acc"] - best_g) / best_g * 100.0 if best_g > 0 else None
                r["local_improvement_pct"] = (r["local_acc"] - best_l) / best_l * 100.0 if best_l > 0 else None
    return rows


def format_table(rows: list[dict]) -> str:
    def acc(v):
        return f"{100 * v:.2f}"

    def gain(v):
        return "-" if v is None else f"{v:+.2f}%"

    header = ["label", "algorithm", "global acc (%)", "local acc (%)", "eq. round", "global gain", "local gain"]
    body = [[r["label"], r["algorithm"], acc(r["global_acc"]), acc(r["local_acc"]),
             "-" if r["equilibrium_round"] is None else f"{r['equilibrium_round']:.1f}",
             gain(r["global_improvement_pct"]), gain(r["local_improvement_pct"])] for r in rows]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(line, widths)).rstrip() for line in [header, *body]]
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    if len(args.summaries) < 2:
        raise UsageError("compare needs at least two summary files")
    summaries = []
    for p in args.summaries:
        s = _load_summary(p)
        summaries.append((str(Path(p).parent.name or p), s))
    rows = compare_rows(summaries)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "comparison.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_COLUMNS)
        for r in rows:
            w.writerow(["" if r[c] is None else (r[c] if isinstance(r[c], str) else _fmt(r[c])) for c in COMPARE_COLUMNS])
    table = format_table(rows)
    (out / "comparison.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


def cmd_fse_check(args) -> int:
    if args.probes < 0 or args.horizon < 1:
        raise UsageError("need --probes >= 0 and --horizon >= 1")
    ckpt = Path(args.checkpoint)
    if not ckpt.is_dir():
        raise UsageError(f"checkpoint directory {ckpt} does not exist")
    try:
        pg = orchestrator.PageGame.from_checkpoint(ckpt)
    except orchestrator.CheckpointError as exc:
        raise UsageError(str(exc)) from exc
    report = game.fse_diagnostic(pg, args.probes, args.horizon, scale=args.scale, seed=args.seed)
    report["checkpoint"] = str(ckpt)
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    out = Path(args.out) if args.out else ckpt / "fse_report.json"
    out.write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pagefl", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment and write per-round metrics")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--algo", choices=ALGORITHMS)
    r.add_argument("--runs", type=int)
    r.add_argument("--out", default="out")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="tabulate final metrics of several runs")
    c.add_argument("summaries", nargs="+")
    c.add_argument("--out", default=".")
    c.set_defaults(func=cmd_compare)

    f = sub.add_parser("fse-check", help="probe a checkpoint with unilateral deviations")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--probes", type=int, default=20)
    f.add_argument("--horizon", type=int, default=5)
    f.add_argument("--scale", type=float, default=0.2)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out")
    f.set_defaults(func=cmd_fse_check)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
