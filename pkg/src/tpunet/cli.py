"""Command-line entry points.

Every subcommand prints exactly one JSON result line to stdout and
exits nonzero when a contract is violated; progress chatter goes to
stderr so the result line stays machine-readable.
"""

import argparse
import json
import os
import sys
import time

import numpy as np


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))
    sys.stdout.flush()


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _load_config(path: str) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict):
        raise ValueError(f"{path}: config must be a flat JSON object")
    return payload


def _cmd_gen_data(args) -> int:
    from .synthdata import SynthConfig, generate_dataset, manifest_hash

    payload = _load_config(args.config) if args.config else {}
    known = set(SynthConfig.__dataclass_fields__)
    unknown = set(payload) - known
    if unknown:
        raise ValueError(f"unknown gen-data config keys: {sorted(unknown)}")
    config = SynthConfig(**payload)
    t0 = time.perf_counter()
    manifest = generate_dataset(config, args.out)
    _emit({
        "command": "gen-data",
        "out": args.out,
        "samples": len(manifest["records"]),
        "splits": {k: len(v) for k, v in manifest["splits"].items()},
        "manifest_hash": manifest_hash(manifest),
        "wall_clock_s": round(time.perf_counter() - t0, 3),
    })
    return 0


def _run_config(args) -> "RunConfig":
    from .harness import RunConfig

    payload = _load_config(args.config) if args.config else {}
    if getattr(args, "data", None):
        payload["data_dir"] = args.data
    return RunConfig.from_flat_dict(payload)


def _cmd_train(args) -> int:
    from .harness import train

    config = _run_config(args)
    result = train(config, out_dir=args.out, log=_log)
    _emit({
        "command": "train",
        "variant": config.variant,
        "seed": config.seed,
        "steps": config.steps,
        "best_step": result.best_step,
        "best_val_mean_dice": result.best_val.mean_dice,
        "final_loss": result.loss_curve[-1],
        "config_hash": config.hash(),
        "out": args.out,
        "wall_clock_s": round(result.wall_clock_s, 3),
    })
    return 0


def _write_eval_csv(path: str, report) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "dice", "jaccard"])
        for k, (d, j) in enumerate(zip(report.per_class_dice, report.per_class_jaccard)):
            writer.writerow([k, f"{d:.6f}", f"{j:.6f}"])
        writer.writerow(["mean", f"{report.mean_dice:.6f}", f"{report.mean_jaccard:.6f}"])


def _cmd_eval(args) -> int:
    from . import checkpoint
    from .harness import evaluate, load_run, predict
    from .synthdata import load_dataset

    run_dir = os.path.dirname(os.path.abspath(args.ckpt))
    params, config, vocab = load_run(run_dir)
    dataset = load_dataset(args.data)
    report = evaluate(params, dataset, args.split, config, vocab)
    _write_eval_csv(os.path.join(run_dir, f"eval_{args.split}.csv"), report)
    if args.export_masks:
        os.makedirs(args.export_masks, exist_ok=True)
        count = min(args.export_count, dataset.split(args.split).images.shape[0])
        probs = predict(params, dataset, args.split, config, vocab, list(range(count)))
        for b in range(count):
            for k in range(probs.shape[1]):
                stem = os.path.join(args.export_masks, f"{args.split}_s{b}_c{k}")
                checkpoint.write_pgm(f"{stem}_prob.pgm", probs[b, k])
                checkpoint.write_pgm(f"{stem}_mask.pgm", (probs[b, k] >= 0.5).astype(float))
    payload = {"command": "eval", **report.canonical_dict()}
    payload["wall_clock_s"] = round(report.wall_clock_s, 3)
    _emit(payload)
    return 0


def _cmd_ablate(args) -> int:
    from .harness import run_ablation

    config = _run_config(args)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise ValueError("--seeds must list at least one integer")
    result = run_ablation(config, seeds, out_csv=args.out, log=_log)
    _emit({
        "command": "ablate",
        "seeds": seeds,
        "table": result.table,
        "csv": args.out,
        "wall_clock_s": round(result.wall_clock_s, 3),
    })
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    t0 = time.perf_counter()
    results = run_suite(args.module)
    checks = []
    ok = True
    for name, report in results:
        checks.append({
            "name": name,
            "passed": report.passed,
            "max_rel_err": report.max_rel_err,
            "tol": report.tol,
        })
        ok = ok and report.passed
        if not report.passed:
            _log(f"gradcheck failure in {name}:\n{report.summary()}")
    _emit({
        "command": "gradcheck",
        "passed": ok,
        "checks": checks,
        "wall_clock_s": round(time.perf_counter() - t0, 3),
    })
    return 0 if ok else 1


def _cmd_bench(args) -> int:
    from .bench import run_bench

    result = run_bench(batch=args.batch, size=args.size, repeats=args.repeats)
    _emit({"command": "bench", **result})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tpunet",
        description="Temporal-prompt segmentation pipeline on a synthetic slice benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    p.add_argument("--config", help="JSON file of generator settings")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="train one variant")
    p.add_argument("--config", help="JSON file of run settings")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True, help="path to best.ckpt inside a run directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--export-masks", help="directory for per-class PGM exports")
    p.add_argument("--export-count", type=int, default=4)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate all five variants")
    p.add_argument("--config", help="JSON file of run settings")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--seeds", default="1,2,3", help="comma-separated seed list")
    p.add_argument("--out", required=True, help="output CSV for the median table")
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--module", help="restrict to one suite",
                   choices=["tensor", "fusion", "text_encoder", "objectives",
                            "align", "model"])
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("bench", help="compare numba and numpy kernel backends")
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(fn=_cmd_bench)
    return parser


def main(argv=None) -> int:
    np.seterr(all="ignore")  # finiteness is enforced per-op by the tensor layer
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except BrokenPipeError:
        return 0
    except Exception as err:  # contract violations surface as a JSON error line
        _emit({"command": args.command, "error": f"{type(err).__name__}: {err}"})
        return 2


if __name__ == "__main__":
    sys.exit(main())
