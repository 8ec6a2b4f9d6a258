"""``posit`` command line: table, convert, quantize, stats, train, eval, hw-verify.

Exit codes: 0 success, 1 verification failure or runtime/I/O error, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import checkpoint
from .posit import (
    MAX_TABLE_N,
    NAR,
    ZERO,
    PositBits,
    PositConfigError,
    decode_exact,
    decode_fields,
    encode_from_real,
    enumerate_table,
    make_config,
)
from .quantizer import (
    QuantSpec,
    auto_quantize,
    histogram_csv,
    log2_histogram,
    mean_relative_error,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def fmt_fraction(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def _config(args):
    try:
        return make_config(args.n, args.es)
    except PositConfigError as exc:
        raise UsageError(str(exc)) from None


def cmd_table(args, out) -> int:
    if args.n > MAX_TABLE_N:
        raise UsageError(f"table too large: n={args.n} exceeds {MAX_TABLE_N}")
    config = _config(args)
    rows = [
        (r.bits,
         "x" if r.regime is None else str(r.regime),
         "x" if r.exponent is None else str(r.exponent),
         "x" if r.mantissa is None else fmt_fraction(r.mantissa),
         fmt_fraction(r.value))
        for r in enumerate_table(config)
    ]
    header = ("bits", "regime", "exponent", "mantissa", "value")
    if args.format == "csv":
        out.write(",".join(header) + "\n")
        for row in rows:
            out.write(",".join(row) + "\n")
    else:
        widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
        out.write("  ".join(h.rjust(w) for h, w in zip(header, widths)) + "\n")
        for row in rows:
            out.write("  ".join(c.rjust(w) for c, w in zip(row, widths)) + "\n")
    return EXIT_OK


def _parse_value(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"--value must be a finite decimal or fraction, got {text!r}") from None


def _parse_bits(text: str, config) -> PositBits:
    try:
        bits = int(text, 0)
    except ValueError:
        raise UsageError(f"--bits must be an integer literal such as 0x10 or 0b10000, got {text!r}") from None
    if not 0 <= bits <= config.mask:
        raise UsageError(f"--bits {text} does not fit in {config.n} bits")
    return PositBits(bits, config)


def cmd_convert(args, out) -> int:
    config = _config(args)
    if (args.value is None) == (args.bits is None):
        raise UsageError("give exactly one of --value or --bits")
    if args.value is not None:
        x = _parse_value(args.value)
        out.write(f"input: {args.value}\n")
        p = encode_from_real(x, config)
    else:
        p = _parse_bits(args.bits, config)
    out.write(f"format: {config}\n")
    out.write(f"bits: {p.binary()} ({p.hex()})\n")
    fields = decode_fields(p)
    if fields is NAR:
        out.write("fields: NaR\nvalue: NaR\n")
        return EXIT_OK
    if fields is ZERO:
        out.write("fields: zero\nvalue: 0\n")
        return EXIT_OK
    out.write(f"s: {'+1' if fields.s > 0 else '-1'}  k: {fields.k}  e: {fields.e}  f: {fmt_fraction(fields.f)}\n")
    out.write(f"rb: {fields.rb}  eb: {fields.eb}  fb: {fields.fb}\n")
    value = decode_exact(p)
    out.write(f"value: {fmt_fraction(value)} ({float(value)!r})\n")
    return EXIT_OK


def _read_tensors(path) -> dict[str, np.ndarray]:
    try:
        return checkpoint.load(path)
    except checkpoint.CheckpointError as exc:
        raise RuntimeError(f"{path}: {exc}") from None


def cmd_quantize(args, out) -> int:
    config = _config(args)
    if args.sigma < 0:
        raise UsageError("--sigma must be nonnegative")
    spec = QuantSpec(config, args.scale, args.sigma)
    tensors = _read_tensors(args.input)
    result = {}
    for name, x in tensors.items():
        q, sf = auto_quantize(x, spec)
        result[name] = q
        err = mean_relative_error(x, q)
        if sf is None:
            print(f"{name}: scaling off, mean_rel_err={err!r}", file=sys.stderr)
        else:
            if sf.degenerate:
                print(f"warning: {name} has no nonzero elements; using center 0", file=sys.stderr)
            print(f"{name}: S_f={sf.value!r} (center={sf.center}), mean_rel_err={err!r}", file=sys.stderr)
    checkpoint.save(args.output, result)
    return EXIT_OK


def cmd_stats(args, out) -> int:
    tensors = _read_tensors(args.input)
    if args.tensor is not None:
        if args.tensor not in tensors:
            raise UsageError(f"no tensor named {args.tensor!r}; have {sorted(tensors)}")
        data = tensors[args.tensor]
    else:
        data = np.concatenate([t.ravel() for t in tensors.values()]) if tensors else np.zeros(0)
    text = histogram_csv(*log2_histogram(data))
    if args.output:
        Path(args.output).write_text(text)
    else:
        out.write(text)
    return EXIT_OK


def _load_plan(args):
    from .train import PlanError, TrainPlan, parse_quant_map

    try:
        plan = TrainPlan.load(args.plan)
        changes = {}
        if getattr(args, "seed", None) is not None:
            changes["rng_seed"] = args.seed
        if getattr(args, "epochs", None) is not None:
            changes["total_epochs"] = args.epochs
            if getattr(args, "warmup", None) is None and plan.warmup_epochs > args.epochs:
                changes["warmup_epochs"] = args.epochs
        if getattr(args, "warmup", None) is not None:
            changes["warmup_epochs"] = args.warmup
        if getattr(args, "quant", None) is not None:
            changes["quant"] = parse_quant_map(args.quant, sigma=plan.sigma)
        if getattr(args, "master_weights", False):
            changes["master_weights"] = True
        return plan.replace(**changes) if changes else plan
    except (PlanError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    except OSError as exc:
        raise UsageError(f"cannot read plan: {exc}") from None


def cmd_train(args, out) -> int:
    from .train import run_training

    plan = _load_plan(args)
    result = run_training(plan)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.csv").write_text(result.metrics.metrics_csv())
    (out_dir / "scale_factors.csv").write_text(result.metrics.scale_csv())
    checkpoint.save(out_dir / "model.pstm", result.model.state_dict())
    last = result.metrics.epochs[-1] if result.metrics.epochs else None
    if last is not None:
        out.write(f"final epoch {last.epoch}: loss={last.loss!r} val_acc={last.val_acc!r}\n")
    out.write(f"wrote {out_dir / 'metrics.csv'}, {out_dir / 'scale_factors.csv'}, {out_dir / 'model.pstm'}\n")
    return EXIT_OK


def cmd_eval(args, out) -> int:
    from .nn import Model
    from .idx import load_idx_dataset
    from .train import Dataset, evaluate

    plan = _load_plan(args)
    x, y = load_idx_dataset(plan.val_images, plan.val_labels, plan.standardize)
    model = Model.from_topology(plan.topology, x.shape[1:], plan.rng_seed)
    model.load_state_dict(_read_tensors(args.checkpoint))
    acc = evaluate(model, Dataset(x, y), plan.quant)
    out.write(f"val_acc={acc!r}\n")
    if args.out:
        Path(args.out).write_text(f"val_acc\n{acc!r}\n")
    return EXIT_OK


def cmd_hw_verify(args, out) -> int:
    from .hw import MAX_EXHAUSTIVE_N, verify

    config = _config(args)
    if config.n < 3:
        raise UsageError("hw-verify needs n >= 3")
    if args.exhaustive and config.n > MAX_EXHAUSTIVE_N:
        raise UsageError(f"--exhaustive is limited to n <= {MAX_EXHAUSTIVE_N}; use --samples K instead")
    exhaustive = args.exhaustive or args.samples is None and config.n <= MAX_EXHAUSTIVE_N
    samples = args.samples if args.samples is not None else 4096
    report = verify(config, exhaustive=exhaustive, samples=samples, seed=args.seed)
    out.write(report.text())
    return EXIT_OK if report.ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def fmt_args(p, required=True):
        p.add_argument("--n", type=int, required=required, help="word size")
        p.add_argument("--es", type=int, required=required, help="exponent field size")

    p = sub.add_parser("table", help="enumerate the nonnegative patterns of a format")
    fmt_args(p)
    p.add_argument("--format", choices=("csv", "pretty"), default="csv")
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("convert", help="real -> posit bits, or bits -> fields and value")
    fmt_args(p)
    p.add_argument("--value", help="decimal or fraction, e.g. 0.4 or 3/8")
    p.add_argument("--bits", help="pattern as 0x.. or 0b.. literal")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("quantize", help="quantize every tensor of a PSTM file")
    fmt_args(p)
    scale = p.add_mutually_exclusive_group()
    scale.add_argument("--scale", dest="scale", action="store_true", default=True)
    scale.add_argument("--no-scale", dest="scale", action="store_false")
    p.add_argument("--sigma", type=int, default=2)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("stats", help="log2 histogram of a PSTM file as CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--tensor", help="histogram one named tensor instead of all of them")
    p.add_argument("--out", dest="output", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="run a training plan and write metric CSVs and a checkpoint")
    p.add_argument("--plan", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--quant", help="override the plan's quant preset (fp32, posit16, posit8, posit8_bn16)")
    p.add_argument("--master-weights", action="store_true", help="keep a float64 master copy of the weights")
    p.add_argument("--out", default="run", help="output directory (default: ./run)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="validation accuracy of a checkpoint under a plan's quantization")
    p.add_argument("--plan", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--quant")
    p.add_argument("--out", help="also write the accuracy as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("hw-verify", help="check the decoder/encoder/MAC model against posit-core")
    fmt_args(p)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--exhaustive", action="store_true")
    mode.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_hw_verify)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, out)
    except UsageError as exc:
        print(f"posit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failures (I/O, NaR abort) exit 1 with a diagnostic
        from .train import TrainingAborted

        if isinstance(exc, (OSError, RuntimeError, TrainingAborted, ValueError)):
            print(f"posit {args.command}: {exc}", file=sys.stderr)
            return EXIT_FAIL
        raise


if __name__ == "__main__":
    sys.exit(main())
