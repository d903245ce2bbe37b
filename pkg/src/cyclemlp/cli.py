"""Command-line entry point.

Exit codes: 0 success, 1 a tolerance or check failed, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from . import accounting, gradcheck, oracle
from .errors import CycleMLPError
from .io import read_cymt, read_cymw, write_cymt, write_cymw
from .model import (VARIANTS, from_state, model_forward, model_init, stage_dims,
                    variant_config)
from .tensor import Rng

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def _add_format(p):
    p.add_argument("--format", choices=("text", "tsv"), default="text",
                   help="human-readable text (default) or tab-separated lines")


def _load_model(variant: str, weights_path: str):
    state = read_cymw(weights_path)
    if "head.bias" not in state:
        raise UsageError(f"{weights_path}: checkpoint has no head.bias")
    cfg = variant_config(variant, num_classes=state["head.bias"].shape[0])
    return from_state(cfg, state)


def _load_input(path: str) -> np.ndarray:
    x = read_cymt(path)
    if x.shape[1] != 3:
        raise UsageError(f"{path}: expected 3 input channels, got {x.shape[1]}")
    return x


# -- commands -------------------------------------------------------------------------


def cmd_inspect(args, out) -> int:
    cfg = variant_config(args.variant, num_classes=args.num_classes)
    H = W = args.resolution
    report = accounting.count_model(cfg, (H, W))
    dims = stage_dims(cfg, H, W)
    if args.format == "tsv":
        print(f"variant\t{cfg.name}", file=out)
        print(f"resolution\t{H}\t{W}", file=out)
        print(f"params\t{report.params}", file=out)
        print(f"macs\t{report.macs}", file=out)
        for s, ((h, w), st) in enumerate(zip(dims, cfg.stages), start=1):
            print(f"stage{s}\t{h}\t{w}\t{st.channels}", file=out)
        print(report.tsv(), file=out)
    else:
        print(f"CycleMLP-{cfg.name.upper()} at {H}x{W}", file=out)
        print(f"params {report.params / 1e6:.1f}M ({report.params:,})", file=out)
        print(f"MACs {report.macs / 1e9:.2f}G ({report.macs:,})", file=out)
        for s, ((h, w), st) in enumerate(zip(dims, cfg.stages), start=1):
            print(f"stage{s}: {h}x{w}x{st.channels}  depth {st.depth}  expand {st.expand}",
                  file=out)
        print("", file=out)
        print(report.text(), file=out)
    if args.plot:
        from .plotting import plot_stage_costs
        plot_stage_costs(accounting.stage_summary(cfg, report), args.plot,
                         title=f"CycleMLP-{cfg.name.upper()} at {H}x{W}")
        print(f"figure written to {args.plot}", file=sys.stderr)
    return EXIT_OK


def cmd_init(args, out) -> int:
    cfg = variant_config(args.variant, num_classes=args.num_classes)
    mp = model_init(cfg, Rng(args.seed))
    if args.zero:
        mp = mp.map(np.zeros_like)
    write_cymw(args.out, mp.state_dict())
    print(f"wrote {mp.num_params} parameters to {args.out}", file=out)
    return EXIT_OK


def cmd_infer(args, out) -> int:
    mp = _load_model(args.variant, args.weights)
    x = _load_input(args.input)
    logits, _, _ = model_forward(x, mp, record=False)
    z = logits[:, :, 0, 0]
    if args.format == "tsv":
        for n in range(z.shape[0]):
            for k in range(z.shape[1]):
                print(f"{n}\t{k}\t{_fmt(z[n, k])}", file=out)
    else:
        for n in range(z.shape[0]):
            print(f"sample {n}: argmax {int(z[n].argmax())}", file=out)
            print("  " + " ".join(_fmt(v) for v in z[n]), file=out)
    if args.output:
        write_cymt(args.output, logits)
    return EXIT_OK


def cmd_features(args, out) -> int:
    mp = _load_model(args.variant, args.weights)
    x = _load_input(args.input)
    _, feats, _ = model_forward(x, mp, record=False)
    for s, f in enumerate(feats, start=1):
        path = f"{args.out_prefix}stage{s}.cymt"
        write_cymt(path, f)
        if args.format == "tsv":
            print(f"stage{s}\t" + "\t".join(str(d) for d in f.shape) + f"\t{path}", file=out)
        else:
            print(f"stage{s}: {'x'.join(str(d) for d in f.shape)} -> {path}", file=out)
    return EXIT_OK


def cmd_gradcheck(args, out) -> int:
    if args.dtype != "f64":
        raise UsageError("gradcheck runs in float64 only")
    if args.block:
        target = "block"
    elif args.model_toy:
        target = "model-toy"
    else:
        target = args.op
    errors = gradcheck.check_op(target, seed=args.seed, corrupt=args.corrupt_vjp)
    tol = gradcheck.TOLERANCE.get(target, gradcheck.DEFAULT_TOLERANCE)
    worst = max(errors.values())
    for name, err in errors.items():
        if args.format == "tsv":
            print(f"{target}\t{name}\t{err:.3e}", file=out)
        else:
            print(f"{target:<12} {name:<40} rel err {err:.3e}", file=out)
    ok = worst <= tol
    verdict = "PASS" if ok else "FAIL"
    if args.format == "tsv":
        print(f"{target}\tmax\t{worst:.3e}\t{verdict}", file=out)
    else:
        print(f"{target}: max rel err {worst:.3e} (tolerance {tol:g}) {verdict}", file=out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_oracle_diff(args, out) -> int:
    if args.cases < 1:
        raise UsageError("--cases must be at least 1")
    reports = oracle.compare_all(seed=args.seed, cases=args.cases)
    ok = True
    if args.format == "tsv":
        print("op\tmax_abs\tmax_rel\tcases\tverdict", file=out)
    else:
        print(f"{'op':<14} {'max abs':>11} {'max rel':>11} {'cases':>6}", file=out)
    for r in reports:
        good = r.max_abs <= args.tolerance
        ok &= good
        verdict = "PASS" if good else "FAIL"
        if args.format == "tsv":
            print(f"{r.op}\t{r.max_abs:.3e}\t{r.max_rel:.3e}\t{r.cases}\t{verdict}", file=out)
        else:
            print(f"{r.op:<14} {r.max_abs:>11.3e} {r.max_rel:>11.3e} {r.cases:>6}  {verdict}",
                  file=out)
    rejected, msg = oracle.spatial_fc_scale_demo()
    ok &= rejected
    verdict = "PASS" if rejected else "FAIL"
    if args.format == "tsv":
        print(f"spatial_fc_scale\trejected={rejected}\t{msg}\t{verdict}", file=out)
    else:
        print(f"spatial FC on a mismatched scale: {'rejected' if rejected else 'ACCEPTED'} "
              f"({msg})  {verdict}", file=out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_sweep(args, out) -> int:
    if args.min < 1 or args.max < args.min or args.step < 1:
        raise UsageError("need 1 <= --min <= --max and --step >= 1")
    cfg = variant_config(args.variant)
    mp = model_init(cfg, Rng(args.seed))
    rng = Rng(args.seed + 1)
    rows = []
    ok = True
    for r in range(args.min, args.max + 1, args.step):
        x = rng.uniform(3 * r * r).reshape(1, 3, r, r).astype(np.float32)
        t0 = time.perf_counter()
        try:
            logits, feats, _ = model_forward(x, mp, record=False)
            got = [f.shape[2:] for f in feats]
            good = got == stage_dims(cfg, r, r) and bool(np.all(np.isfinite(logits)))
        except CycleMLPError as e:
            print(f"{r}x{r}: {e}", file=sys.stderr)
            got, good = [], False
        seconds = time.perf_counter() - t0
        ok &= good
        macs = accounting.count_model(cfg, (r, r)).macs
        rows.append({"resolution": r, "dims": got, "macs": macs, "seconds": seconds, "ok": good})

    base = rows[0]
    if args.format == "tsv":
        print("resolution\tstage_dims\tmacs\tmacs_per_pixel_rel\tseconds\tok", file=out)
    else:
        print(f"{'res':>5}  {'stage dims':<24} {'GMACs':>8} {'per-pixel':>9} {'seconds':>8}",
              file=out)
    for row in rows:
        r = row["resolution"]
        rel = (row["macs"] / (r * r)) / (base["macs"] / base["resolution"] ** 2)
        dims = "/".join(str(d[0]) for d in row["dims"]) or "-"
        if args.format == "tsv":
            print(f"{r}\t{dims}\t{row['macs']}\t{rel:.4f}\t{row['seconds']:.3f}\t"
                  f"{'ok' if row['ok'] else 'FAIL'}", file=out)
        else:
            print(f"{r:>5}  {dims:<24} {row['macs'] / 1e9:>8.3f} {rel:>9.4f} "
                  f"{row['seconds']:>8.3f}{'' if row['ok'] else '  FAIL'}", file=out)
    if args.plot:
        from .plotting import plot_sweep
        plot_sweep(rows, args.plot, title=f"CycleMLP-{cfg.name.upper()} resolution sweep")
        print(f"figure written to {args.plot}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_train_toy(args, out) -> int:
    from .train import SyntheticTask, train_toy
    if args.steps < 0:
        raise UsageError("--steps must be non-negative")
    kernels = None if args.branches == "3" else ((1, 1),)
    report = train_toy(SyntheticTask(seed=args.seed), steps=args.steps, lr=args.lr,
                       seed=args.seed, branch_kernels=kernels)
    if args.format == "tsv":
        print("step\tloss", file=out)
        for line in report.lines():
            print(line, file=out)
        print(f"accuracy\t{report.accuracy:.4f}", file=out)
    else:
        for line in report.lines():
            print(line, file=out)
        print(f"branches {args.branches}  steps {report.steps}  seed {report.seed}  "
              f"final accuracy {report.accuracy:.4f}", file=out)
    if args.plot:
        from .plotting import plot_losses
        plot_losses({f"branches={args.branches}": report.losses}, args.plot)
        print(f"figure written to {args.plot}", file=sys.stderr)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cyclemlp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="parameter/MAC report and stage shapes")
    p.add_argument("--variant", required=True, choices=VARIANTS)
    p.add_argument("--resolution", type=int, default=224)
    p.add_argument("--num-classes", type=int, default=1000)
    p.add_argument("--plot", metavar="PNG", help="also write a per-stage cost figure")
    _add_format(p)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("init", help="write a freshly initialized CYMW checkpoint")
    p.add_argument("--variant", required=True, choices=VARIANTS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-classes", type=int, default=1000)
    p.add_argument("--zero", action="store_true", help="all-zero weights")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    for name, func, help_ in (("infer", cmd_infer, "logits for a CYMT input batch"),
                              ("features", cmd_features, "write the four pyramid levels")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--variant", required=True, choices=VARIANTS)
        p.add_argument("--weights", required=True, metavar="FILE.cymw")
        p.add_argument("--input", required=True, metavar="FILE.cymt")
        if name == "infer":
            p.add_argument("--output", metavar="FILE.cymt", help="also write logits here")
        else:
            p.add_argument("--out-prefix", required=True,
                           help="files are written as PREFIXstage1.cymt .. PREFIXstage4.cymt")
        _add_format(p)
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="finite-difference check of a VJP")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--op", choices=gradcheck.OP_NAMES)
    g.add_argument("--block", action="store_true")
    g.add_argument("--model-toy", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", choices=("f64", "f32"), default="f64")
    p.add_argument("--corrupt-vjp", action="store_true", help=argparse.SUPPRESS)
    _add_format(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("oracle-diff", help="compare every forward op with its loop oracle")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=1e-5)
    _add_format(p)
    p.set_defaults(func=cmd_oracle_diff)

    p = sub.add_parser("sweep", help="run one parameter set across input resolutions")
    p.add_argument("--variant", default="b2", choices=VARIANTS)
    p.add_argument("--min", type=int, default=128)
    p.add_argument("--max", type=int, default=384)
    p.add_argument("--step", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--plot", metavar="PNG", help="also write MACs/time vs resolution")
    _add_format(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train-toy", help="train the toy variant on the patch-position task")
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--branches", choices=("3", "1x1-only"), default="3")
    p.add_argument("--plot", metavar="PNG", help="also write the loss curve")
    _add_format(p)
    p.set_defaults(func=cmd_train_toy)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, out)
    except (UsageError, CycleMLPError, OSError) as e:
        print(f"cyclemlp {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
