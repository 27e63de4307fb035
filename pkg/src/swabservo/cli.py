"""Command-line entry point.

Exit codes: 0 success, 2 invalid input or configuration, 3 output could not be written,
4 a trial recorded an infeasible lookup or a stage timeout under ``--strict``.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ChainFileError, InfeasibleCell
from .kinematics import load_chain, reference_chain
from .lut import (
    SEEDING,
    ConeStartSpec,
    build_table,
    export_csv,
    load_table,
    query,
    query_index,
    save_table,
)

EXIT_OK, EXIT_CONFIG, EXIT_WRITE, EXIT_TRIAL = 0, 2, 3, 4
FAILURE_STATUSES = ("LutInfeasible", "StageTimeout")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _triple(text: str, kind=float):
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {text!r}")
    try:
        return tuple(kind(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number in {text!r}") from None


def _int_triple(text: str):
    return _triple(text, int)


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _chain(args):
    if getattr(args, "chain", None):
        return load_chain(args.chain)
    return reference_chain()


def _table(path):
    try:
        return load_table(path)
    except FileNotFoundError:
        raise UsageError(f"table file not found: {path}") from None
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _scene(args):
    from .scene import PRESETS, load_scene_config

    cfg = PRESETS[args.noise](0)
    if getattr(args, "scene", None):
        try:
            cfg = load_scene_config(args.scene, cfg)
        except FileNotFoundError:
            raise UsageError(f"scene file not found: {args.scene}") from None
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return cfg


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from None
    return out


def _matplotlib():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save_figure(fig, path):
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})


# ---------------------------------------------------------------- lut


def cmd_lut_build(args) -> int:
    chain = _chain(args)
    spec = ConeStartSpec(resolution=args.res)
    table = build_table(chain, None, spec, candidates_per_cell=args.candidates, rng_seed=args.seed,
                        jobs=args.jobs, seeding=args.seeding)
    try:
        save_table(table, args.out)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_WRITE
    counts = table.counts()
    total = table.end_spec.n_targets
    edges = np.linspace(0, total, 9)
    hist, _ = np.histogram(counts[counts > 0], bins=edges)
    print(f"cells: {counts.size}  feasible: {int(np.sum(counts > 0))}  targets per cell: {total}")
    print("N histogram:")
    print(f"  {'N = 0':>13}: {int(np.sum(counts == 0))}")
    for lo, hi, n in zip(edges[:-1], edges[1:], hist):
        print(f"  {int(lo):>4} < N <= {int(hi):>3}: {n}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_lut_query(args) -> int:
    table = _table(args.table)
    idx = query_index(table.start_spec, args.pos)
    i, j, k = table.start_spec.cell_coords(idx)
    try:
        entry = query(table, args.pos)
    except InfeasibleCell:
        print(f"cell {idx} ({i},{j},{k}): infeasible (N = 0)")
        return EXIT_TRIAL
    print(f"cell {idx} ({i},{j},{k}): N = {entry.reach_count}/{entry.total_targets}")
    print("q_best: " + " ".join(f"{v:.6f}" for v in entry.q_best))
    return EXIT_OK


def cmd_lut_export(args) -> int:
    table = _table(args.table)
    try:
        export_csv(table, args.out)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_WRITE
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- trials


def _summary_text(summary) -> str:
    rows = summary.as_rows()
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows) + "\n"


def _plot_convergence(log_path, out_path):
    plt = _matplotlib()
    data = np.genfromtxt(log_path, delimiter=",", names=True)
    fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for stage, ax in zip((2, 3), axes):
        # settle ticks after final alignment are logged as stage 4
        sel = data["stage"] == stage if stage == 2 else data["stage"] >= stage
        t = data["t"][sel]
        for key, color in (("x", "C0"), ("y", "C1"), ("z", "C2")):
            raw = data[f"raw_{key}"][sel]
            ok = np.isfinite(raw)
            ax.plot(t[ok], raw[ok], ".", color=color, alpha=0.3, ms=3)
            ax.plot(t, data[f"filt_{key}"][sel], "-", color=color, label=key)
        ax.set_ylabel(f"stage {stage} nostril (m)")
        ax.legend(loc="upper right")
    axes[-1].set_xlabel("time (s)")
    fig.tight_layout()
    _save_figure(fig, out_path)
    plt.close(fig)


def _plot_batch(results, summary, out: Path):
    from .mission import EXTENSION_BINS

    plt = _matplotlib()
    ok = [r for r in results if r.status == "ok"]
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for ax, key, label in ((axes[0], "pitch_error_deg", "pitch error (deg)"), (axes[1], "yaw_error_deg", "yaw (deg)")):
        ax.hist([getattr(r, key) for r in ok], bins=20, color="C0")
        ax.set_xlabel(label)
        ax.set_ylabel("trials")
    fig.tight_layout()
    _save_figure(fig, out / "angles.png")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    width = EXTENSION_BINS[1] - EXTENSION_BINS[0]
    ax.bar(EXTENSION_BINS * 1000, summary.extension_hist, width=width * 1000, align="edge", color="C2")
    ax.axvline(130, color="k", ls="--")
    ax.set_xlabel("extension (mm)")
    ax.set_ylabel("trials")
    fig.tight_layout()
    _save_figure(fig, out / "extension.png")
    plt.close(fig)


def cmd_trial(args) -> int:
    from .mission import run_trial, score_outcomes, write_results_csv, write_summary_csv

    chain = _chain(args)
    table = _table(args.table)
    cfg = _scene(args)
    try:
        out = _out_dir(args.out)
        log = out / f"trial_{args.seed:05d}.csv"
        result = run_trial(chain, None, table, cfg, args.seed, log_path=log)
        summary = score_outcomes([result])
        write_results_csv([result], out / "result.csv")
        write_summary_csv(summary, out / "summary.csv")
        text = _summary_text(summary)
        (out / "summary.txt").write_text(text)
        if args.plot:
            _plot_convergence(log, out / "convergence.png")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WRITE
    print(f"seed {result.seed}: {result.status}, reached nostril: {'yes' if result.reached_nostril else 'no'}, "
          f"distance {result.distance * 1000:.2f} mm, extension {result.extension * 1000:.0f} mm")
    print(text, end="")
    if args.strict and result.status in FAILURE_STATUSES:
        return EXIT_TRIAL
    return EXIT_OK


def cmd_batch(args) -> int:
    from .mission import run_batch, score_outcomes, write_results_csv, write_summary_csv

    chain = _chain(args)
    table = _table(args.table)
    cfg = _scene(args)
    seeds = list(range(args.seed, args.seed + args.trials))
    try:
        out = _out_dir(args.out)
        log_dir = out / "logs" if args.logs else None
        results = run_batch(chain, None, table, cfg, seeds, jobs=args.jobs, log_dir=log_dir)
        summary = score_outcomes(results)
        write_results_csv(results, out / "results.csv")
        write_summary_csv(summary, out / "summary.csv")
        text = _summary_text(summary)
        (out / "summary.txt").write_text(text)
        if args.plot:
            _plot_batch(results, summary, out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WRITE
    print(text, end="")
    if args.strict and any(r.status in FAILURE_STATUSES for r in results):
        return EXIT_TRIAL
    return EXIT_OK


# ---------------------------------------------------------------- workspace


def analyze_workspace(chain, table, max_extend=0.30, step=0.005, pitch=0.2):
    """Per feasible cell: drive the swab tip onto the cell's nostril point, then sweep the extension.

    Returns rows (cell, i, j, k, N, extension) with extension = NaN when the terminal pose is unreachable.
    """
    from .kinematics import SUCCESS, solve_ik_batch
    from .manifold import Pose, minimal_rotation
    from .mission import workspace_extension

    rows = []
    tip = chain.swab_tip
    for c, entry in enumerate(table.entries):
        if not entry.feasible:
            continue
        i, j, k = table.start_spec.cell_coords(c)
        # terminal pose of the final alignment: swab axis on the insertion direction, tip on the nostril
        R_cam = entry.cell_pose.rotation
        R_flange = R_cam @ chain.camera.rotation.T
        axis = R_flange @ (chain.swab_tip - chain.swab_shaft)
        R_flange = minimal_rotation(axis / np.linalg.norm(axis), R_cam[:, 2]) @ R_flange
        flange = Pose(entry.cell_pose.position - R_flange @ tip, R_flange)
        Q, status, _ = solve_ik_batch(chain, entry.q_best[None], flange.position, flange.rotation, 300, 1e-6)
        if status[0] != SUCCESS:
            rows.append((c, i, j, k, entry.reach_count, float("nan")))
            continue
        ext = workspace_extension(chain, None, Q[0], pitch, max_extend, step)
        rows.append((c, i, j, k, entry.reach_count, ext))
    return rows


def cmd_workspace(args) -> int:
    chain = _chain(args)
    table = _table(args.table)
    rows = analyze_workspace(chain, table, args.max_extend, args.step)
    try:
        out = _out_dir(args.out)
        with open(out / "workspace.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell", "i_phi", "i_r", "i_z", "N", "extension"])
            for c, i, j, k, n, e in rows:
                w.writerow([c, i, j, k, n, f"{e:.4f}"])
        if args.plot:
            plt = _matplotlib()
            ext = np.array([r[-1] for r in rows], dtype=float)
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.hist(ext[np.isfinite(ext)] * 1000, bins=np.arange(0, args.max_extend * 1000 + 25, 25), color="C2")
            ax.axvline(130, color="k", ls="--")
            ax.set_xlabel("extension (mm)")
            ax.set_ylabel("cells")
            fig.tight_layout()
            _save_figure(fig, out / "workspace.png")
            plt.close(fig)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WRITE
    ext = np.array([r[-1] for r in rows], dtype=float)
    done = ext[np.isfinite(ext)]
    print(f"feasible cells: {len(rows)}  terminal poses reached: {done.size}")
    if done.size:
        print(f"extension median: {np.median(done) * 1000:.0f} mm  reaching 130 mm: {np.mean(done >= 0.13 - 1e-9):.2%}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _read_config(path) -> dict:
    """key = value lines; keys are long flag names with dashes or underscores."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _common(p, table=True, scene=False, out_dir=False):
    p.add_argument("--config", help="optional key = value file; explicit flags take precedence")
    p.add_argument("--chain", help="kinematic chain file (default: bundled reference chain)")
    if table:
        p.add_argument("--table", required=True, help="lookup-table file from `lut build`")
    if scene:
        p.add_argument("--scene", help="scene configuration file (key = value), applied over --noise")
        p.add_argument("--noise", choices=("paper", "none"), default="paper", help="noise preset (default: paper)")
        p.add_argument("--seed", type=int, default=0, help="trial seed (default: 0)")
        p.add_argument("--plot", action="store_true", help="also write static figures")
        p.add_argument("--strict", action="store_true",
                       help="exit 4 when a trial records an infeasible lookup or a stage timeout")
    if out_dir:
        p.add_argument("--out", required=True, help="output directory")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="swabservo", description="Eye-in-hand swab positioning simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    top = parser.add_subparsers(dest="group", required=True)
    leaves = {}

    lut = top.add_parser("lut", help="build, query or export joint lookup tables")
    lsub = lut.add_subparsers(dest="action", required=True)
    p = lsub.add_parser("build", help="build a lookup table")
    _common(p, table=False)
    p.add_argument("--out", required=True, help="table file to write")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--res", type=_int_triple, default=(9, 3, 9), help="grid resolution phi,r,z (default: 9,3,9)")
    p.add_argument("--candidates", type=_positive_int, default=32, help="IK candidates per cell (default: 32)")
    p.add_argument("--seeding", choices=SEEDING, default="mixed", help="IK seed distribution (default: mixed)")
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes (default: 1)")
    p.set_defaults(func=cmd_lut_build)
    leaves[("lut", "build")] = p

    p = lsub.add_parser("query", help="look up the cell nearest to a face position")
    _common(p)
    p.add_argument("--pos", type=_triple, required=True, help="face position x,y,z in metres (world frame)")
    p.set_defaults(func=cmd_lut_query)
    leaves[("lut", "query")] = p

    p = lsub.add_parser("export-csv", help="write one CSV row per cell")
    _common(p)
    p.add_argument("--out", required=True, help="CSV file to write")
    p.set_defaults(func=cmd_lut_export)
    leaves[("lut", "export-csv")] = p

    trial = top.add_parser("trial", help="single seeded trial")
    tsub = trial.add_subparsers(dest="action", required=True)
    p = tsub.add_parser("run", help="run one trial and write its log and summary")
    _common(p, scene=True, out_dir=True)
    p.set_defaults(func=cmd_trial)
    leaves[("trial", "run")] = p

    batch = top.add_parser("batch", help="Monte Carlo batches")
    bsub = batch.add_subparsers(dest="action", required=True)
    p = bsub.add_parser("run", help="run seeded trials seed .. seed+trials-1 and score them")
    _common(p, scene=True, out_dir=True)
    p.add_argument("--trials", type=_positive_int, default=10, help="number of trials (default: 10)")
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes (default: 1)")
    p.add_argument("--logs", action="store_true", help="also write one tick log per trial under logs/")
    p.set_defaults(func=cmd_batch)
    leaves[("batch", "run")] = p

    ws = top.add_parser("workspace", help="workspace extension analysis")
    wsub = ws.add_subparsers(dest="action", required=True)
    p = wsub.add_parser("analyze", help="extension reachable from each feasible cell's terminal pose")
    _common(p, out_dir=True)
    p.add_argument("--max-extend", type=float, default=0.30, help="largest extension tried, m (default: 0.30)")
    p.add_argument("--step", type=float, default=0.005, help="sweep increment, m (default: 0.005)")
    p.add_argument("--plot", action="store_true", help="also write a histogram figure")
    p.set_defaults(func=cmd_workspace)
    leaves[("workspace", "analyze")] = p
    return parser, leaves


def _apply_config(parser, leaves, argv, args):
    values = _read_config(args.config)
    leaf = leaves[(args.group, args.action)]
    known = {a.dest: a for a in leaf._actions}
    defaults = {}
    for key, raw in values.items():
        if key in ("config", "help", "func") or key not in known:
            raise UsageError(f"{args.config}: unknown setting {key!r}")
        action = known[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            continue
        value = raw
        if action.type is not None:
            try:
                value = action.type(raw)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"{args.config}: {key}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"{args.config}: {key}: invalid choice {value!r}")
        defaults[key] = value
        action.required = False
    leaf.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, leaves = build_parser()
    try:
        if any(a == "--config" or a.startswith("--config=") for a in argv):
            # a config file may supply required flags, so parse leniently first
            pre = argparse.ArgumentParser(add_help=False)
            pre.add_argument("--config")
            known, _ = pre.parse_known_args(argv)
            groups = {g for g, _ in leaves}
            at = next((i for i, a in enumerate(argv) if a in groups), None)
            group = argv[at] if at is not None else None
            action = argv[at + 1] if at is not None and at + 1 < len(argv) else None
            if (group, action) in leaves:
                ns = argparse.Namespace(config=known.config, group=group, action=action)
                args = _apply_config(parser, leaves, argv, ns)
            else:
                args = parser.parse_args(argv)
        else:
            args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ChainFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
