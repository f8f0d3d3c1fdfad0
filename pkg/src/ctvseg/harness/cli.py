"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .. import phantom
from ..diffcore import PROBES, gradcheck
from ..diffcore.tensor import ConformanceError, ContractError, NumericError
from ..metrics import write_report
from ..objective import ConfigError
from ..textenc import TokenizeError
from .ablation import KINDS, run_ablation
from .config import load_config
from .data import DataError, load_cases, train_test_manifests
from .evaluate import evaluate, model_predictor
from .train import load_checkpoint, save_checkpoint, sliding_window_infer, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _log(epoch, loss):
    print(f"epoch {epoch} loss {loss:.6f}", file=sys.stderr, flush=True)


def cmd_gen(args) -> int:
    manifest = phantom.generate_dataset(args.out, args.n, args.seed, tuple(args.grid), tuple(args.spacing))
    print(manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    if args.manifest:
        manifest = Path(args.manifest)
    else:
        manifest, _ = train_test_manifests(cfg, out.parent)
    cases = load_cases(manifest)
    state = train(cfg, cases, log=_log)
    save_checkpoint(out, state)
    print(out)
    return EXIT_OK


def cmd_infer(args) -> int:
    model = load_checkpoint(args.ckpt).model
    try:
        volume, spacing, kind = phantom.read_volume(args.volume)
        record = phantom.read_record(args.record)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None
    if kind != "intensity-f32":
        raise DataError(f"{args.volume}: expected an intensity volume, got {kind}")
    mask = sliding_window_infer(model, volume, model.condition(record))
    phantom.write_volume(args.out, mask, spacing, "mask-u8")
    print(args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt).model
    report = evaluate(model_predictor(model), load_cases(args.manifest))
    write_report(args.report, report)
    for metric, (m, lo, hi) in report.aggregate.items():
        print(f"{metric} {m:.4f} [{lo:.4f}, {hi:.4f}]")
    return EXIT_OK


def cmd_ablate(args) -> int:
    result = run_ablation(args.kind, load_config(args.config), args.out, log=_log)
    print(json.dumps(result, indent=2))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    worst = 0.0
    for kind in sorted(PROBES):
        errs = [gradcheck(kind, seed=s) for s in range(args.seeds)]
        worst = max(worst, max(errs))
        print(f"{kind:20s} max rel err {max(errs):.3e}")
    ok = worst < args.tol
    print(f"{'PASS' if ok else 'FAIL'} worst {worst:.3e} (tol {args.tol:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctvseg", description="text-conditioned target-volume segmentation")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate a phantom dataset")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--grid", type=int, nargs=3, default=list(phantom.DEFAULT_GRID))
    g.add_argument("--spacing", type=float, nargs=3, default=list(phantom.DEFAULT_SPACING))
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--manifest", help="training manifest (default: generate from the config)")
    t.set_defaults(fn=cmd_train)

    i = sub.add_parser("infer", help="predict a mask for one volume and record")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--volume", required=True)
    i.add_argument("--record", required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(fn=cmd_infer)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--report", required=True)
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="run an ablation protocol")
    a.add_argument("--kind", required=True, choices=KINDS)
    a.add_argument("--config", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(fn=cmd_ablate)

    c = sub.add_parser("gradcheck", help="finite-difference check of every operation")
    c.add_argument("--seeds", type=int, default=5)
    c.add_argument("--tol", type=float, default=1e-5)
    c.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, phantom.VolumeFormatError, TokenizeError, ContractError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, ConformanceError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
