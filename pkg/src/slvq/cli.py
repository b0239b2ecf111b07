"""Command-line entry point: fit, compress, decompress, budget, solve, eval,
tables.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import archive as ar
from . import budget as bd
from . import harness as hz
from . import labels as lb
from . import vqae as vq

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

# reference accounting settings: target rate -> (d_h, d_c, k)
TABLE_SETTINGS = {
    10: (795, 5, 1024),
    20: (990, 15, 2048),
    30: (1000, 20, 1024),
    40: (1000, 25, 512),
    100: (1000, 50, 128),
    200: (1000, 100, 64),
}


class _UsageExit(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        raise _UsageExit


def _default_seed() -> int:
    return int(os.environ.get("SLVQ_SEED", "0"))


def _load_labels(path):
    if str(path).endswith(".csv"):
        return lb.read_labels_csv(path)
    return lb.read_slab(path)


def _build_parser():
    parser = _Parser(prog="slvq", description="soft-label VQ compression toolkit")
    parser.add_argument("--config", help="JSON file with default flag values")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=_default_seed())
        p.add_argument("--json", action="store_true", help="machine-readable output")

    p = sub.add_parser("fit", help="train a codec on a label file")
    common(p)
    p.add_argument("--labels", required=True, help="SLAB or CSV label file")
    p.add_argument("--out", required=True, help="output SLVQ model file")
    p.add_argument("--d-h", type=int, required=True)
    p.add_argument("--d-c", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.25)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-2)
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.add_argument("--gradient-mode", choices=vq.GRADIENT_MODES,
                   default=vq.STRAIGHT_THROUGH)

    p = sub.add_parser("compress", help="compress labels with a fitted model")
    common(p)
    p.add_argument("--labels", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output SLAR archive")

    p = sub.add_parser("decompress", help="reconstruct labels from an archive")
    common(p)
    p.add_argument("--archive", required=True)
    p.add_argument("--out", required=True, help="output SLAB label file")

    p = sub.add_parser("budget", help="storage accounting for a budget spec")
    common(p)
    p.add_argument("--ipc", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--aug", type=int, default=1)
    p.add_argument("--d-h", type=int)
    p.add_argument("--d-c", type=int)
    p.add_argument("--k", type=int)

    p = sub.add_parser("solve", help="find (d_h, d_c, k) for a target ratio")
    common(p)
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--ipc", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--aug", type=int, default=1)

    p = sub.add_parser("eval", help="desk-scale distillation comparison")
    common(p)
    p.add_argument("--classes", type=int, default=100)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--n-per-class", type=int, default=10)
    p.add_argument("--spread", type=float, default=1.5)
    p.add_argument("--views", type=int, default=4)
    p.add_argument("--jitter", type=float, default=0.3)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--d-h", type=int, default=50)
    p.add_argument("--d-c", type=int, default=5)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--student-epochs", type=int, default=150)
    p.add_argument("--account-epochs", type=int, default=300,
                   help="epoch count used for the storage-ratio accounting")
    p.add_argument("--csv", help="append (codec, ratio, retention) rows here")

    p = sub.add_parser("tables", help="reproduce the storage accounting tables")
    common(p)

    return parser, sub


def _report_text(report: bd.StorageReport) -> str:
    d = report.as_dict()
    lines = [
        f"raw:        {d['raw_bytes']:>16,.0f} B  ({d['raw_gb']:.3f} GB)",
        f"compressed: {d['compressed_bytes']:>16,.0f} B  ({d['compressed_gb']:.3f} GB)",
        f"ratio:      {d['ratio']:.2f}x",
    ]
    for name, value in d["breakdown"].items():
        lines.append(f"  {name:<12} {value:>14,.0f} B")
    if not d["exact"]:
        lines.append("  (inexact: k is not a power of two)")
    return "\n".join(lines)


def _cmd_fit(args) -> int:
    labels = _load_labels(args.labels)
    config = vq.TrainConfig(alpha=args.alpha, beta=args.beta, lr=args.lr,
                            weight_decay=args.weight_decay,
                            batch_size=min(args.batch_size, labels.n),
                            max_steps=args.steps, seed=args.seed,
                            gradient_mode=args.gradient_mode, epsilon=args.epsilon)
    model, trace = vq.fit(labels, args.d_h, args.d_c, args.k, config)
    ar.write_model(model, args.out, args.gradient_mode, args.epsilon)
    summary = {"steps": len(trace), "final_loss": trace.loss_total[-1] if len(trace) else None,
               "final_rec_loss": trace.loss_rec[-1] if len(trace) else None,
               "model": args.out}
    print(json.dumps(summary) if args.json
          else f"wrote {args.out} after {summary['steps']} steps "
               f"(rec loss {summary['final_rec_loss']})")
    return EXIT_OK


def _cmd_compress(args) -> int:
    labels = _load_labels(args.labels)
    model, _, epsilon = ar.read_model(args.model)
    indices = vq.compress(labels, model)
    ar.write_archive(ar.vqae_archive(model, indices, epsilon), args.out)
    print(json.dumps({"archive": args.out, "n": labels.n, "m": model.m})
          if args.json else f"wrote {args.out} ({labels.n} labels, {model.m} indices each)")
    return EXIT_OK


def _cmd_decompress(args) -> int:
    arch = ar.read_archive(args.archive)
    labels = ar.decompress_vqae_archive(arch)
    lb.write_slab(labels, args.out)
    print(json.dumps({"labels": args.out, "n": labels.n, "c": labels.c})
          if args.json else f"wrote {args.out} ({labels.n} x {labels.c} labels)")
    return EXIT_OK


def _cmd_budget(args) -> int:
    spec = bd.BudgetSpec(args.ipc, args.classes, args.epochs, args.aug,
                         d_h=args.d_h, d_c=args.d_c, k=args.k)
    if args.d_h is not None:
        report = bd.vq_bytes(spec)
        print(json.dumps(report.as_dict()) if args.json else _report_text(report))
    else:
        raw = bd.raw_label_bytes(spec)
        out = {"raw_bytes": raw, "raw_gb": round(raw / bd.GIB, 3)}
        print(json.dumps(out) if args.json
              else f"raw: {raw:,} B  ({out['raw_gb']:.3f} GB)")
    return EXIT_OK


def _cmd_solve(args) -> int:
    spec = bd.BudgetSpec(args.ipc, args.classes, args.epochs, args.aug)
    (d_h, d_c, k), ratio = bd.solve_hyperparams(args.target, spec)
    out = {"d_h": d_h, "d_c": d_c, "k": k, "ratio": ratio}
    print(json.dumps(out) if args.json
          else f"d_h={d_h} d_c={d_c} k={k}  (ratio {ratio:.3f}x, target {args.target}x)")
    return EXIT_OK


def _cmd_eval(args) -> int:
    task = hz.make_task(args.seed, args.dim, args.classes, args.n_per_class,
                        spread=args.spread)
    teacher = hz.train_teacher(task, seed=args.seed)
    labels = hz.cache_teacher_labels(teacher, task, views=args.views, tau=args.tau,
                                     jitter=args.jitter, seed=args.seed)
    config = vq.TrainConfig(max_steps=args.steps, seed=args.seed)
    model, _ = vq.fit(labels, args.d_h, args.d_c, args.k, config)
    reconstructed = vq.decompress(vq.compress(labels, model), model, config.epsilon)
    spec = bd.BudgetSpec(args.n_per_class, args.classes, args.account_epochs,
                         d_h=args.d_h, d_c=args.d_c, k=args.k)
    report = hz.compare(task, labels, reconstructed, bd.compression_ratio(spec),
                        tau=args.tau, epochs=args.student_epochs, seed=args.seed,
                        codec_name="vqae")
    if args.csv:
        hz.write_retention_csv([report], args.csv)
    if args.json:
        print(report.to_json())
    else:
        d = report.as_dict()
        for key in ("codec", "storage_ratio", "raw_accuracy", "compressed_accuracy",
                    "retention", "mean_kl"):
            print(f"{key:>21}: {d[key]}")
    return EXIT_OK


def _cmd_tables(args) -> int:
    ipcs = (10, 20, 50, 100)
    raw = {ipc: bd.raw_label_bytes(bd.BudgetSpec(ipc, 1000, 300)) / bd.GIB for ipc in ipcs}
    ours = {
        rate: {ipc: bd.vq_bytes(bd.BudgetSpec(ipc, 1000, 300, d_h=d_h, d_c=d_c, k=k))
                        .as_dict()["compressed_gb"]
               for ipc in ipcs}
        for rate, (d_h, d_c, k) in TABLE_SETTINGS.items()
    }
    if args.json:
        print(json.dumps({"raw_gb": {str(i): round(v, 3) for i, v in raw.items()},
                          "ours_gb": {str(r): {str(i): v for i, v in row.items()}
                                      for r, row in ours.items()}}))
        return EXIT_OK
    print("Soft label size without compression (GB, C=1000, 300 epochs)")
    print("  " + "  ".join(f"IPC {ipc:>3}: {raw[ipc]:7.3f}" for ipc in ipcs))
    print("\nCompressed size (GB) per rate setting")
    header = f"{'rate':>6} {'d_h':>5} {'d_c':>4} {'k':>5}" + "".join(f"  IPC {i:>3}" for i in ipcs)
    print(header)
    for rate, (d_h, d_c, k) in TABLE_SETTINGS.items():
        row = ours[rate]
        print(f"{rate:>5}x {d_h:>5} {d_c:>4} {k:>5}"
              + "".join(f"  {row[ipc]:7.3f}" for ipc in ipcs))
    return EXIT_OK


_COMMANDS = {
    "fit": _cmd_fit,
    "compress": _cmd_compress,
    "decompress": _cmd_decompress,
    "budget": _cmd_budget,
    "solve": _cmd_solve,
    "eval": _cmd_eval,
    "tables": _cmd_tables,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, sub = _build_parser()
    try:
        if "--config" in argv:
            cfg_path = argv[argv.index("--config") + 1]
            try:
                with open(cfg_path) as f:
                    defaults = json.load(f)
            except (OSError, json.JSONDecodeError) as err:
                print(f"error: cannot read config {cfg_path}: {err}", file=sys.stderr)
                return EXIT_DATA
            # subcommand parsers re-apply their own defaults over the top-level
            # namespace, so the config must be pushed into each of them
            parser.set_defaults(**defaults)
            for command in sub.choices.values():
                command.set_defaults(**defaults)
        args = parser.parse_args(argv)
    except _UsageExit:
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except (lb.LabelValidationError, lb.LabelFileError, ar.ArchiveError,
            bd.BudgetError, vq.ModelValidationError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (vq.TrainingError, FloatingPointError, np.linalg.LinAlgError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
