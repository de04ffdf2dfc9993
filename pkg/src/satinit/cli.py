"""``satinit`` command line: encode | solve | train | compare | sweep."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from fractions import Fraction

from . import experiment as ex
from . import smt, solver
from .nn import Architecture, dump_params, load_params
from .train import TrainConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_UNSAT = 3
EXIT_UNKNOWN = 4
EXIT_SOUNDNESS = 5

log = logging.getLogger("satinit")


class UsageError(Exception):
    pass


def _fraction(text):
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}") from None


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be positive: {text}")
    return v


def _int_list(text):
    return [_positive_int(t) for t in text.split(",") if t.strip()]


def read_config(path: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys use flag names."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def _add_data_flags(p):
    g = p.add_argument_group("data")
    g.add_argument("--mnist-dir", default=os.environ.get("SATINIT_MNIST_DIR"),
                   help="directory with the four MNIST IDX files (optionally .gz)")
    g.add_argument("--classes", default="0,1", help="two digits, mapped to class 0 and class 1")
    g.add_argument("--n-train", type=_positive_int, default=ex.mnist.DEFAULT_N_TRAIN)
    g.add_argument("--n-val", type=_positive_int, default=None,
                   help="validation size (default: all balanced test-file samples)")
    g.add_argument("--data-seed", type=int, default=0)
    g.add_argument("--downsample", type=_positive_int, default=None, metavar="SIDE",
                   help="block-average images to SIDE x SIDE (e.g. 8) to shrink the input layer")


def _add_encoding_flags(p):
    g = p.add_argument_group("encoding")
    g.add_argument("--mode", choices=smt.MODES, default=smt.MARGIN)
    g.add_argument("--epsilon", type=_fraction, default=smt.DEFAULT_EPSILON, help="margin, as p/q")
    g.add_argument("--rho", type=_fraction, default=smt.DEFAULT_RHO,
                   help="probability that a weight gets a nonzero constraint")
    g.add_argument("--seed", type=int, default=0, help="subsample, nonzero-mask and training seed")
    g.add_argument("--logic", default=None, help="override the SMT-LIB logic")


def _add_solver_flags(p):
    g = p.add_argument_group("solver")
    g.add_argument("--solver", default=None,
                   help=f"solver command, run as '<cmd> <file>'; '{{seed}}' is replaced per restart "
                        f"(default ${solver.ENV_SOLVER} or {solver.DEFAULT_SOLVER!r})")
    g.add_argument("--timeout", type=float, default=600.0, help="total seconds per formula")
    g.add_argument("--restarts", type=int, default=0, help="extra seeded attempts after a timed-out slice")
    g.add_argument("--first-timeout", type=float, default=5.0, help="first restart slice in seconds")


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=_positive_int, default=50)
    g.add_argument("--lr", type=float, default=0.01)
    g.add_argument("--batch", type=_positive_int, default=32)
    g.add_argument("--init-seed", type=int, default=None, help="Glorot seed (default: --seed)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="satinit", description=__doc__)
    parser.add_argument("--config", help="key=value file; command-line flags override it")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="write the SMT-LIB formula for a training subset")
    p.add_argument("--arch", required=True)
    p.add_argument("--samples", type=int, required=True, help="number of encoded training samples")
    p.add_argument("--out", required=True)
    _add_data_flags(p)
    _add_encoding_flags(p)

    p = sub.add_parser("solve", help="run a solver on an encoded formula and verify the model")
    p.add_argument("doc", help="formula written by 'encode' (its .meta.json must sit next to it)")
    p.add_argument("--out", help="params file to write on verified sat (default: <doc>.params)")
    p.add_argument("--outcome-csv", help="append the outcome row here (default: <doc>.outcome.csv)")
    _add_solver_flags(p)

    p = sub.add_parser("train", help="train from random, zero or solved initial parameters")
    p.add_argument("--arch", required=True)
    p.add_argument("--init", default="random", help="'random', 'zero' or a params file")
    p.add_argument("--encoded", help="meta file from 'encode'; reports epoch-0 accuracy on its samples")
    p.add_argument("--seed", type=int, default=0, help="minibatch shuffling seed")
    p.add_argument("--out", required=True, help="per-epoch CSV")
    p.add_argument("--summary", help="summary CSV (default: <out stem>.summary.csv)")
    _add_data_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("compare", help="SMT vs random initialization, one row per run")
    p.add_argument("--arch", help="comma-separated hidden layouts, e.g. 10,10-10,50 (crossed with --samples)")
    p.add_argument("--samples", type=_int_list, help="comma-separated SMT subset sizes")
    p.add_argument("--runs", help="explicit runs, e.g. '10:random,10-10:100'; 'table1' for the reference six-row protocol")
    p.add_argument("--out", required=True)
    _add_data_flags(p)
    _add_encoding_flags(p)
    _add_solver_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("sweep", help="solver time against subset size")
    p.add_argument("--arch", required=True, help="comma-separated hidden layouts, e.g. 10,10-10")
    p.add_argument("--samples", type=_int_list, required=True)
    p.add_argument("--repeats", type=_positive_int, default=1)
    p.add_argument("--out", required=True)
    _add_data_flags(p)
    _add_encoding_flags(p)
    _add_solver_flags(p)
    return parser


def parse_args(argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    if known.config:
        conf = read_config(known.config)
        command = next((a for a in argv if a in COMMANDS), None)
        subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        sub = subparsers.choices.get(command)
        if sub is not None:
            actions = {a.dest: a for a in sub._actions}
            unknown = set(conf) - set(actions)
            if unknown:
                raise UsageError(f"unknown config keys for {command}: {', '.join(sorted(unknown))}")
            defaults = {}
            for key, text in conf.items():
                action = actions[key]
                try:
                    defaults[key] = action.type(text) if action.type else text
                except (ValueError, argparse.ArgumentTypeError) as e:
                    raise UsageError(f"config {key}: {e}") from None
                action.required = False
            sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _write_csv(path, rows, columns=None, append=False):
    columns = columns or list(rows[0].keys())
    exists = append and os.path.exists(path) and os.path.getsize(path) > 0
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
        if not exists:
            w.writeheader()
        for r in rows:
            w.writerow({k: _cell(v) for k, v in r.items()})


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _data_config(args) -> ex.DataConfig:
    if not args.mnist_dir:
        raise UsageError("--mnist-dir (or $SATINIT_MNIST_DIR) is required")
    try:
        a, b = (int(c) for c in args.classes.split(","))
    except ValueError:
        raise UsageError(f"--classes needs two digits, got {args.classes!r}") from None
    return ex.DataConfig(args.mnist_dir, a, b, args.n_train, args.n_val, args.data_seed, args.downsample)


def _opts(args) -> smt.EncodingOptions:
    try:
        return smt.EncodingOptions(args.mode, args.epsilon, args.rho, args.seed, args.logic)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _arch(text) -> Architecture:
    try:
        return Architecture.parse(text)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _hidden_archs(text, input_dim) -> list[Architecture]:
    archs = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        widths = item.split("-")
        # accept both "10-10" (hidden only) and a full "784-10-10-2"
        if len(widths) >= 3 and widths[-1] == "2" and int(widths[0]) == input_dim:
            archs.append(_arch(item))
        else:
            archs.append(Architecture(input_dim, tuple(int(w) for w in widths)))
    if not archs:
        raise UsageError("empty architecture list")
    return archs


def _train_config(args) -> TrainConfig:
    return TrainConfig(args.epochs, args.batch, args.lr, args.seed)


def cmd_encode(args) -> int:
    if args.samples < 1:
        raise UsageError("--samples must be positive")
    arch = _arch(args.arch)
    data = _data_config(args)
    ds = ex.load_dataset(data)
    doc, samples, idx = ex.encode(arch, ds, args.samples, _opts(args))
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        f.write(doc.render())
    ex.write_meta(args.out + ".meta.json", arch, _opts(args), samples, idx, extra=data.provenance())
    print(f"{args.out}: {len(doc.declarations)} declarations, {len(doc.assertions)} assertions "
          f"({len(samples)} samples + {len(doc.mask)} nonzero), logic {doc.logic}")
    return EXIT_OK


OUTCOME_COLUMNS = ["doc", "status", "elapsed_s", "solver_attempts", "solver_seed", "defaulted", "all_pass",
                   "solver", "timeout_s", "restarts", "arch", "mode", "epsilon", "rho", "smt_seed", "n_samples"]


def cmd_solve(args) -> int:
    meta_path = args.doc + ".meta.json"
    if not os.path.exists(args.doc) or not os.path.exists(meta_path):
        raise UsageError(f"need {args.doc} and {meta_path}")
    arch, opts, samples, _ = ex.read_meta(meta_path)
    with open(args.doc, encoding="utf-8") as f:
        text = f.read()
    mask = smt.nonzero_mask(arch, opts.rho, opts.seed)
    res = solver.solve_with_restarts(text, args.solver, args.timeout, args.restarts, args.first_timeout)
    out = res.outcome
    row = {"doc": args.doc, "status": out.status, "elapsed_s": f"{res.total_elapsed:.3f}",
           "solver_attempts": res.attempts, "solver_seed": res.solver_seed,
           "solver": solver.resolve_solver(args.solver), "timeout_s": args.timeout, "restarts": args.restarts,
           "arch": arch.spec(), "n_samples": len(samples), **ex.opts_provenance(opts)}
    code = {solver.SAT: EXIT_OK, solver.UNSAT: EXIT_UNSAT}.get(out.status, EXIT_UNKNOWN)
    if out.status == solver.SAT:
        params, defaulted = solver.assignment_to_params(out.assignment, arch)
        report = solver.verify_model(params, samples, opts, mask)
        row.update(defaulted=defaulted, all_pass=report.all_pass)
        if report.all_pass:
            out_path = args.out or args.doc + ".params"
            with open(out_path, "w", encoding="utf-8") as f:
                f.write(dump_params(params))
            print(f"sat in {res.total_elapsed:.2f}s; verified; {defaulted} defaulted; wrote {out_path}")
        else:
            print(f"SOUNDNESS FAILURE: model violates {report.n_failed} constraint(s)", file=sys.stderr)
            code = EXIT_SOUNDNESS
    else:
        print(f"{out.status} after {res.total_elapsed:.2f}s {out.message[:200]}".rstrip(), file=sys.stderr)
    _write_csv(args.outcome_csv or args.doc + ".outcome.csv", [row], OUTCOME_COLUMNS, append=True)
    return code


SUMMARY_COLUMNS = ["arch", "initialization", "params_file", "smt_inputs", "epoch0_encoded_acc",
                   "epoch0_train_acc", "epoch0_val_acc", "final_train_loss", "final_train_acc",
                   "final_val_loss", "final_val_acc", "init_seed", "epochs", "batch_size", "learning_rate",
                   "train_seed", "classes", "n_train", "n_val", "data_seed", "image_side"]


def cmd_train(args) -> int:
    arch = _arch(args.arch)
    data = _data_config(args)
    ds = ex.load_dataset(data)
    config = _train_config(args)
    init_seed = args.seed if args.init_seed is None else args.init_seed
    params, kind, params_file = None, args.init, ""
    if args.init not in ("random", "zero"):
        params_file = args.init
        with open(args.init, encoding="utf-8") as f:
            params = load_params(f.read())
        if params.arch != arch:
            raise UsageError(f"{args.init} holds a {params.arch} network, --arch is {arch}")
        kind = "smt"
    idx = None
    if args.encoded:
        _, _, _, meta = ex.read_meta(args.encoded)
        idx = meta.get("indices")
    try:
        rec = ex.run_training(kind, arch, ds, config, params=params, init_seed=init_seed, encoded_idx=idx)
    except ValueError as e:
        raise UsageError(str(e)) from None
    prov = {"arch": arch.spec(), "initialization": kind, "init_seed": init_seed if kind == "random" else "",
            **ex.config_provenance(config), **data.provenance(ds)}
    _write_csv(args.out, [{**r, **prov} for r in ex.epoch_rows(rec)])
    f = rec.final
    summary = {**prov, "params_file": params_file, "smt_inputs": rec.smt_inputs,
               "epoch0_encoded_acc": rec.encoded_acc0, "epoch0_train_acc": rec.initial.train_acc,
               "epoch0_val_acc": rec.initial.val_acc, "final_train_loss": f.train_loss,
               "final_train_acc": f.train_acc, "final_val_loss": f.val_loss, "final_val_acc": f.val_acc}
    summary_path = args.summary or os.path.splitext(args.out)[0] + ".summary.csv"
    _write_csv(summary_path, [summary], SUMMARY_COLUMNS)
    print(f"{kind}: val acc {f.val_acc:.4f}, train loss {f.train_loss:.4f} after {config.epochs} epochs")
    return EXIT_OK


def cmd_compare(args) -> int:
    data = _data_config(args)
    ds = ex.load_dataset(data)
    n = ds.n_inputs
    if args.runs:
        text = args.runs
        if text == "table1":
            runs = [(Architecture(n, h), m) for h, m in ex.TABLE1]
        else:
            try:
                runs = ex.parse_runs(text, n)
            except ValueError as e:
                raise UsageError(f"bad --runs: {e}") from None
    else:
        if not args.arch or not args.arch.strip(","):
            raise UsageError("give --arch (with --samples) or --runs")
        archs = _hidden_archs(args.arch, n)
        runs = []
        for a in archs:
            runs.append((a, None))
            runs += [(a, m) for m in (args.samples or [])]
    if not runs:
        raise UsageError("no runs requested")
    init_seed = args.seed if args.init_seed is None else args.init_seed
    rows = ex.compare(runs, ds, data, _train_config(args), _opts(args), args.solver, args.timeout,
                      args.restarts, args.first_timeout, init_seed)
    _write_csv(args.out, rows, ex.COMPARE_COLUMNS)
    for r in rows:
        print(f"{r['arch']:>14} {r['initialization']:>6} m={r['smt_inputs'] or '-':>4} {r['status']:>8} "
              f"val_acc={r['final_val_acc']}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    data = _data_config(args)
    ds = ex.load_dataset(data)
    archs = _hidden_archs(args.arch, ds.n_inputs)
    rows = ex.sweep_runtime(archs, args.samples, ds, data, _opts(args), args.solver, args.timeout,
                            args.repeats, args.restarts, args.first_timeout)
    _write_csv(args.out, rows, ex.SWEEP_COLUMNS)
    print(f"wrote {len(rows)} rows to {args.out}; spearman(m, time) = {ex.runtime_trend(rows):.3f}")
    return EXIT_OK


COMMANDS = {"encode": cmd_encode, "solve": cmd_solve, "train": cmd_train,
            "compare": cmd_compare, "sweep": cmd_sweep}


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as e:
        print(f"satinit: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # argparse usage errors
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"satinit: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ex.SoundnessError as e:
        print(f"satinit: soundness failure: {e}", file=sys.stderr)
        return EXIT_SOUNDNESS
    except (FileNotFoundError, ex.ArchMismatch, ex.mnist.IdxError, ex.mnist.InsufficientSamples,
            solver.SolverNotFound) as e:
        print(f"satinit: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
