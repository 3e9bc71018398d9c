"""Command-line entry point: ``ibdetect {verify,train,eval,ablate,report}``.

Exit codes: 0 ok, 1 verification failure, 2 usage or config error,
3 training divergence (or every sweep run failed), 4 artifact mismatch.
Output goes to ``--out``; without it, to ``$IBDETECT_OUT/<subcommand>``
(``./runs/<subcommand>`` when the variable is unset).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import oracle
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigFileError, default_config_path, load_run_config
from .synth import distribution_shift_variant, generate_dataset
from .sweep import SWEEP_KINDS, ablation_csv, ablation_sweep
from .train import (
    RunConfig, TrainingDiverged, build_data, evaluate, history_csv, mi_matrix_csv, run_experiment, write_run,
)

log = logging.getLogger("ibdetect")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_DIVERGED, EXIT_MISMATCH = 0, 1, 2, 3, 4
OUT_ENV = "IBDETECT_OUT"
VERIFY_FORMAT_VERSION = 1
BOUND_TOL = 1e-9
DECOMPOSITION_TOL = 1e-12
CHAIN_TOL = 1e-9


class UsageError(Exception):
    pass


def _out_dir(args, name: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "runs")) / name


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _load_run(args) -> tuple[RunConfig, dict]:
    path = args.config or default_config_path()
    run, sweep = load_run_config(path)
    if args.seed is not None:
        run = run.with_seed(args.seed)
    if getattr(args, "epochs", None) is not None:
        run = replace(run, train=replace(run.train, epochs=args.epochs))
    return run, sweep


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# verify --------------------------------------------------------------------

def _verify_shapes(args, rng) -> tuple[list[int], int]:
    if args.cards:
        return args.cards[:-1], args.cards[-1]
    n = args.n if args.n is not None else int(rng.integers(2, 4))
    return [int(c) for c in rng.integers(2, 5, size=n)], 2


def cmd_verify(args) -> int:
    if args.trials < 1:
        raise UsageError(f"--trials must be at least 1, got {args.trials}")
    if args.n is not None and args.n < 2:
        raise UsageError(f"--n must be at least 2, got {args.n}")
    if args.cards is not None:
        if len(args.cards) < 3 or min(args.cards) < 1:
            raise UsageError("--cards needs at least two local cardinalities and a label cardinality, all positive")
        if args.n is not None and len(args.cards) != args.n + 1:
            raise UsageError(f"--cards has {len(args.cards)} entries, expected n + 1 = {args.n + 1}")
    if not args.concentrations or min(args.concentrations) <= 0:
        raise UsageError("--concentrations must be positive")
    seed = 0 if args.seed is None else args.seed
    out = _out_dir(args, "verify")
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 0])
    worst = {"bound": 0.0, "tightness": 0.0, "decomposition": 0.0, "chain": 0.0}
    failures = []
    for t in range(args.trials):
        z_cards, y_card = _verify_shapes(args, rng)
        conc = args.concentrations[t % len(args.concentrations)]
        joint = oracle.random_local_joint([seed, t + 1], z_cards, y_card, conc)
        rep = oracle.verify_theorem(joint)
        decomposition = abs(
            oracle.mutual_information(joint, "z1", "z2")
            - oracle.interaction_information(joint, "z1", "z2", "y")
            - oracle.conditional_mutual_information(joint, "z1", "z2", "y")
        )
        chain = oracle.chain_rule_residual(joint)
        checks = {
            "bound": -rep.residual, "tightness": abs(rep.residual), "decomposition": decomposition, "chain": chain,
        }
        limits = {"bound": BOUND_TOL, "tightness": BOUND_TOL, "decomposition": DECOMPOSITION_TOL, "chain": CHAIN_TOL}
        for k, v in checks.items():
            worst[k] = max(worst[k], v)
        broken = [k for k, v in checks.items() if not v <= limits[k]]
        if broken:
            name = f"failing_joint_{t}.txt"
            joint.save(out / name)
            failures.append({"trial": t, "checks": broken, "joint": name, "report": rep.to_dict()})
    report = {
        "format_version": VERIFY_FORMAT_VERSION,
        "seed": seed,
        "trials": args.trials,
        "concentrations": args.concentrations,
        "cards": args.cards,
        "n": args.n,
        "tolerances": {"bound": BOUND_TOL, "tightness": BOUND_TOL, "decomposition": DECOMPOSITION_TOL, "chain": CHAIN_TOL},
        "worst": worst,
        "failures": failures,
        "ok": not failures,
    }
    _write_json(out / "verify_report.json", report)
    print(f"verify: {args.trials - len(failures)}/{args.trials} joints pass; report in {out / 'verify_report.json'}")
    return EXIT_OK if not failures else EXIT_VERIFY


# train ---------------------------------------------------------------------

def cmd_train(args) -> int:
    run, _ = _load_run(args)
    out = _out_dir(args, "train")
    if (out / "run_manifest.json").exists() and not args.force:
        raise UsageError(f"{out / 'run_manifest.json'} exists; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()

    def progress(row):
        log.info("epoch %d  total %.4f  val_acc %s", row["epoch"], row["total"], row["val_acc"])

    try:
        outcome = run_experiment(run, progress=progress)
    except TrainingDiverged as exc:
        (out / "history.csv").write_text(history_csv(exc.history))
        print(f"train: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    write_run(outcome, out, started)
    print(f"train: val acc {outcome.val.accuracy:.4f}, val auc {outcome.val.auc:.4f}, "
          f"shifted auc {outcome.test.auc:.4f}; artifacts in {out}")
    return EXIT_OK


# eval ----------------------------------------------------------------------

def _checkpoint_stem(path: Path) -> Path:
    return path / "checkpoint" if path.is_dir() else path


def cmd_eval(args) -> int:
    stem = _checkpoint_stem(Path(args.checkpoint))
    if not stem.with_name(stem.name + ".json").exists() and not stem.with_suffix(".json").exists():
        raise UsageError(f"no checkpoint at {stem}")
    try:
        params, doc = load_checkpoint(stem)
    except CheckpointError as exc:
        print(f"eval: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    if args.config:
        run, _ = _load_run(args)
    else:
        run = RunConfig.from_dict(doc["config"])
        if args.seed is not None:
            run = run.with_seed(args.seed)
    if run.data.spec.input_dim != params.config.input_dim:
        print(
            f"eval: checkpoint expects input_dim {params.config.input_dim}, "
            f"data config gives {run.data.spec.input_dim}",
            file=sys.stderr,
        )
        return EXIT_MISMATCH
    if args.group_size is not None and args.group_size > 1:
        spec = run.data.spec
        if args.split == "shifted":
            spec = distribution_shift_variant(spec, run.data.shift)
        n = run.data.n_test if args.split == "shifted" else run.data.n_val
        dataset = generate_dataset(spec, n, seed=[run.data_seed, 3], group_size=args.group_size, split_name=args.split)
    else:
        data, test = build_data(run)
        dataset = test if args.split == "shifted" else data.subset(args.split)
    record = evaluate(params, dataset, groups=args.group_size is not None)
    out = _out_dir(args, "eval")
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "metrics.json", {args.split: record.to_dict(), "checkpoint": str(stem)})
    (out / "mi_matrix.csv").write_text(mi_matrix_csv(record))
    print(f"eval[{args.split}]: acc {record.accuracy:.4f}, auc {record.auc:.4f}, logloss {record.logloss:.4f}")
    return EXIT_OK


# ablate --------------------------------------------------------------------

def cmd_ablate(args) -> int:
    run, sweep = _load_run(args)
    kind = args.kind or sweep.get("kind", "toggles")
    if kind not in SWEEP_KINDS:
        raise UsageError(f"sweep kind must be one of {SWEEP_KINDS}, got {kind!r}")
    if args.seeds:
        seeds = args.seeds
    elif args.seed is not None:
        seeds = [args.seed]
    else:
        seeds = list(sweep.get("seeds", (0,)))
    n_values = args.n_values or sweep.get("n_values")
    out = _out_dir(args, "ablate")
    if (out / "ablation.csv").exists() and not args.force:
        raise UsageError(f"{out / 'ablation.csv'} exists; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)

    def progress(row):
        log.info("%s seed %s: %s", row["setting"], row["seed"], row["status"])

    rows = ablation_sweep(run, kind, seeds, n_values=n_values, progress=progress)
    (out / "ablation.csv").write_text(ablation_csv(rows))
    failed = [r for r in rows if r["status"] != "ok"]
    for r in failed:
        print(f"ablate: {r['setting']} seed {r['seed']} failed: {r['error']}", file=sys.stderr)
    print(f"ablate: {len(rows) - len(failed)}/{len(rows)} runs ok; table in {out / 'ablation.csv'}")
    return EXIT_OK if len(failed) < len(rows) else EXIT_DIVERGED


# report --------------------------------------------------------------------

SUMMARY_COLUMNS = [
    "run", "status", "seed", "val_acc", "val_auc", "val_logloss",
    "shifted_acc", "shifted_auc", "shifted_logloss", "mean_off_diagonal_mi", "mean_label_mi",
]


def _read_csv(path: Path) -> list[dict]:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def _summarise_run(path: Path) -> dict:
    row = {"run": str(path), "status": "ok"}
    metrics_path = path / "metrics.json"
    if not metrics_path.exists():
        row["status"] = "incomplete: no metrics.json"
        return row
    metrics = json.loads(metrics_path.read_text())
    manifest_path = path / "run_manifest.json"
    if manifest_path.exists():
        row["seed"] = json.loads(manifest_path.read_text()).get("seed")
    for prefix, key in (("val", "val"), ("shifted", "shifted")):
        rec = metrics.get(key)
        if rec is None:
            continue
        row[f"{prefix}_acc"] = rec.get("accuracy")
        row[f"{prefix}_auc"] = rec.get("auc")
        row[f"{prefix}_logloss"] = rec.get("logloss")
    val = metrics.get("val") or {}
    row["mean_off_diagonal_mi"] = val.get("mean_off_diagonal_mi")
    if val.get("label_mi"):
        row["mean_label_mi"] = float(np.mean(val["label_mi"]))
    return row


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}" if math.isfinite(v) else str(v)
    return str(v)


def cmd_report(args) -> int:
    if not args.runs:
        raise UsageError("report needs at least one run directory")
    out = _out_dir(args, "report")
    out.mkdir(parents=True, exist_ok=True)
    rows = [_summarise_run(Path(r)) for r in args.runs]

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in SUMMARY_COLUMNS])
    (out / "summary.csv").write_text(buf.getvalue())

    curves = io.StringIO()
    cw = csv.writer(curves, lineterminator="\n")
    cw.writerow(["run", "epoch", "ce", "lil", "gil", "total", "val_auc"])
    heat = io.StringIO()
    hw = csv.writer(heat, lineterminator="\n")
    hw.writerow(["run", "block_i", "block_j", "mi"])

    lines = ["# Run summary", ""]
    for r in rows:
        path = Path(r["run"])
        lines += [f"## {r['run']}", ""]
        if r["status"] != "ok":
            lines += [f"**{r['status']}**", ""]
            continue
        lines += ["| metric | val | shifted |", "|---|---|---|"]
        for m in ("acc", "auc", "logloss"):
            lines.append(f"| {m} | {_fmt(r.get(f'val_{m}'))} | {_fmt(r.get(f'shifted_{m}'))} |")
        lines += ["", f"mean off-diagonal MI: {_fmt(r.get('mean_off_diagonal_mi'))}  ",
                  f"mean label MI: {_fmt(r.get('mean_label_mi'))}", ""]
        if (path / "history.csv").exists():
            for h in _read_csv(path / "history.csv"):
                cw.writerow([r["run"], h["epoch"], h["ce"], h["lil"], h["gil"], h["total"], h["val_auc"]])
        if (path / "mi_matrix.csv").exists():
            mi_rows = _read_csv(path / "mi_matrix.csv")
            lines += ["| block | " + " | ".join(k for k in mi_rows[0] if k != "block") + " |",
                      "|---" * len(mi_rows[0]) + "|"]
            for m in mi_rows:
                lines.append(f"| {m['block']} | " + " | ".join(_fmt(float(v)) for k, v in m.items() if k != "block") + " |")
                for k, v in m.items():
                    if k not in ("block", "MI_with_label"):
                        hw.writerow([r["run"], m["block"], k, v])
            lines.append("")
    (out / "summary.md").write_text("\n".join(lines).rstrip() + "\n")
    (out / "loss_curves.csv").write_text(curves.getvalue())
    (out / "mi_heatmap.csv").write_text(heat.getvalue())

    bad = [r for r in rows if r["status"] != "ok"]
    for r in bad:
        print(f"report: {r['run']}: {r['status']}", file=sys.stderr)
    print(f"report: {len(rows) - len(bad)}/{len(rows)} runs summarised in {out}")
    return EXIT_OK if len(bad) < len(rows) else EXIT_MISMATCH


# parser --------------------------------------------------------------------

def _global_flags(required_defaults: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    default = None if required_defaults else argparse.SUPPRESS
    p.add_argument("--config", default=default, help="run config file (default: the packaged default.cfg)")
    p.add_argument("--out", default=default, help=f"output directory (default: ${OUT_ENV}/<subcommand>)")
    p.add_argument("--seed", type=int, default=default, help="seed override")
    p.add_argument("--force", action="store_true", default=False if required_defaults else argparse.SUPPRESS,
                   help="overwrite existing artifacts")
    p.add_argument("-v", "--verbose", action="store_true", default=False if required_defaults else argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ibdetect", parents=[_global_flags(True)], description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    common = _global_flags(False)

    v = sub.add_parser("verify", parents=[common], help="check the information identities on random joints")
    v.add_argument("--trials", type=int, default=1000)
    v.add_argument("--n", type=int, default=None, help="local variables per joint (default: 2 or 3 at random)")
    v.add_argument("--cards", type=_int_list, default=None, help="cardinalities z1,...,zn,y")
    v.add_argument("--concentrations", type=_float_list, default=[0.2, 1.0, 5.0])
    v.set_defaults(func=cmd_verify)

    t = sub.add_parser("train", parents=[common], help="train one model")
    t.add_argument("--epochs", type=int, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="score a checkpoint")
    e.add_argument("--checkpoint", required=True, help="run directory or checkpoint stem")
    e.add_argument("--split", choices=("train", "val", "shifted"), default="shifted")
    e.add_argument("--group-size", type=int, default=None, help="rows per group; enables group-level AUC")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", parents=[common], help="loss-toggle or block-count sweep")
    a.add_argument("--kind", choices=SWEEP_KINDS, default=None)
    a.add_argument("--n-values", type=_int_list, default=None)
    a.add_argument("--seeds", type=_int_list, default=None)
    a.add_argument("--epochs", type=int, default=None)
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", parents=[common], help="summarise run directories")
    r.add_argument("runs", nargs="*")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "group_size", None) is not None and args.group_size < 1:
        print("ibdetect: --group-size must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigFileError) as exc:
        print(f"ibdetect {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:  # config values rejected by the library
        print(f"ibdetect {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
