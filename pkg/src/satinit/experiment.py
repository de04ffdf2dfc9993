"""Experiment orchestration shared by the CLI commands.

Each function here returns plain rows (dicts) so the CLI only has to
write CSV.  Every row carries the seeds and options needed to rerun it.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np
from scipy.stats import spearmanr

from . import mnist, smt, solver
from .nn import Architecture, ParamSet, glorot_init, zero_init
from .train import RunRecord, TrainConfig, accuracy, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DataConfig:
    mnist_dir: str
    class_a: int = 0
    class_b: int = 1
    n_train: int = mnist.DEFAULT_N_TRAIN
    n_val: int | None = None
    data_seed: int = 0
    side: int | None = None  # downsampled image side; None keeps 28x28

    def provenance(self, ds: mnist.Dataset | None = None) -> dict:
        """Row fields; with ``ds`` the split sizes are the ones actually used."""
        n_train, n_val = (len(ds.train), len(ds.val)) if ds is not None else (self.n_train, self.n_val)
        return {"classes": f"{self.class_a}/{self.class_b}", "n_train": n_train,
                "n_val": "" if n_val is None else n_val, "data_seed": self.data_seed,
                "image_side": self.side or 28}


_DATA_CACHE: dict = {}


def load_dataset(cfg: DataConfig) -> mnist.Dataset:
    key = cfg
    if key not in _DATA_CACHE:
        (tr, trl), (te, tel) = mnist.load_mnist_dir(cfg.mnist_dir)
        n_avail = sum(1 for v in trl if v in (cfg.class_a, cfg.class_b))
        n_train = min(cfg.n_train, n_avail)
        if n_train < cfg.n_train:
            log.warning("only %d training samples of digits %d/%d available; using all of them",
                        n_avail, cfg.class_a, cfg.class_b)
        spec = mnist.SubsetSpec(cfg.class_a, cfg.class_b, n_train, cfg.n_val, cfg.data_seed)
        _DATA_CACHE[key] = mnist.make_binary_dataset(tr, trl, spec, te, tel, side=cfg.side)
    return _DATA_CACHE[key]


class ArchMismatch(ValueError):
    pass


def check_arch(arch: Architecture, ds: mnist.Dataset):
    if arch.input_dim != ds.n_inputs:
        raise ArchMismatch(f"architecture {arch} expects {arch.input_dim} inputs, "
                         f"the dataset has {ds.n_inputs} (see --downsample)")


def encode(arch: Architecture, ds: mnist.Dataset, m: int, opts: smt.EncodingOptions):
    """Build the formula for ``m`` subsampled training points (seeded by ``opts.seed``)."""
    check_arch(arch, ds)
    idx = mnist.subsample_indices(ds, m, opts.seed)
    samples = [(ds.rational(i), int(ds.labels[i])) for i in idx]
    return smt.build_formula(arch, samples, opts), samples, idx


# -- sidecar metadata ---------------------------------------------------------

def write_meta(path: str, arch: Architecture, opts: smt.EncodingOptions, samples, idx=None, extra=None):
    meta = {
        "format": "satinit-meta v1",
        "arch": arch.spec(),
        "mode": opts.mode,
        "epsilon": str(opts.epsilon),
        "rho": str(opts.rho),
        "seed": opts.seed,
        "logic": opts.logic,
        "samples": [{"x": [str(v) for v in x], "y": int(y)} for x, y in samples],
        "indices": None if idx is None else [int(i) for i in idx],
        **(extra or {}),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(meta, f)


def read_meta(path: str):
    with open(path, encoding="utf-8") as f:
        meta = json.load(f)
    if meta.get("format") != "satinit-meta v1":
        raise ValueError(f"{path}: not a satinit metadata file")
    arch = Architecture.parse(meta["arch"])
    opts = smt.EncodingOptions(meta["mode"], Fraction(meta["epsilon"]), Fraction(meta["rho"]),
                               int(meta["seed"]), meta.get("logic"))
    samples = [([Fraction(v) for v in s["x"]], int(s["y"])) for s in meta["samples"]]
    return arch, opts, samples, meta


# -- solving --------------------------------------------------------------------

class SoundnessError(RuntimeError):
    """The solver said sat but its model violates the formula."""


@dataclass
class SolveResult:
    status: str
    elapsed: float
    attempts: int
    solver_seed: int | None
    params: ParamSet | None = None  # exact domain, verified
    defaulted: int = 0
    message: str = ""


def solve(doc: smt.SmtDocument, arch: Architecture, samples, opts: smt.EncodingOptions,
          solver_cmd: str | None, timeout: float, restarts: int = 0, first_timeout: float = 5.0) -> SolveResult:
    res = solver.solve_with_restarts(doc, solver_cmd, timeout, restarts, first_timeout)
    out = res.outcome
    result = SolveResult(out.status, res.total_elapsed, res.attempts, res.solver_seed, message=out.message)
    if out.status != solver.SAT:
        return result
    params, defaulted = solver.assignment_to_params(out.assignment, arch)
    report = solver.verify_model(params, samples, opts, doc.mask)
    if not report.all_pass:
        raise SoundnessError(f"solver model violates {report.n_failed} constraint(s)")
    result.params, result.defaulted = params, defaulted
    return result


# -- training -------------------------------------------------------------------

def init_params(kind: str, arch: Architecture, seed: int = 0, params: ParamSet | None = None) -> ParamSet:
    if kind == "random":
        return glorot_init(arch, seed)
    if kind == "zero":
        return zero_init(arch)
    if kind == "smt":
        if params is None:
            raise ValueError("smt initialization needs solved parameters")
        if params.arch != arch:
            raise ValueError(f"parameters are for {params.arch}, expected {arch}")
        return params.to_float()
    raise ValueError(f"unknown init kind {kind!r}")


def run_training(kind: str, arch: Architecture, ds: mnist.Dataset, config: TrainConfig,
                 params: ParamSet | None = None, init_seed: int | None = None,
                 encoded_idx=None, on_epoch=None) -> RunRecord:
    check_arch(arch, ds)
    p0 = init_params(kind, arch, config.seed if init_seed is None else init_seed, params)
    encoded_acc0 = None
    if encoded_idx is not None and len(encoded_idx):
        encoded_acc0 = accuracy(p0, ds.inputs[encoded_idx], ds.labels[encoded_idx])
    _, initial, history = train(p0, ds.split("train"), ds.split("val"), config, on_epoch=on_epoch)
    return RunRecord(kind, arch.spec(), config, initial, history,
                     smt_inputs=len(encoded_idx) if kind == "smt" and encoded_idx is not None else None,
                     init_seed=init_seed if kind == "random" else None, encoded_acc0=encoded_acc0)


def epoch_rows(rec: RunRecord) -> list[dict]:
    rows = []
    for e, m in enumerate([rec.initial, *rec.epochs]):
        rows.append({"epoch": e, "train_loss": m.train_loss, "train_acc": m.train_acc,
                     "val_loss": m.val_loss, "val_acc": m.val_acc})
    return rows


def config_provenance(config: TrainConfig) -> dict:
    return {"epochs": config.epochs, "batch_size": config.batch_size,
            "learning_rate": config.learning_rate, "train_seed": config.seed}


def opts_provenance(opts: smt.EncodingOptions) -> dict:
    return {"mode": opts.mode, "epsilon": str(opts.epsilon) if opts.mode == smt.MARGIN else "",
            "rho": str(opts.rho), "smt_seed": opts.seed}


# -- compare (Table 1 protocol) ---------------------------------------------------

TABLE1 = [((10,), None), ((10,), 100), ((10, 10), 100), ((50,), 100), ((10,), 200), ((10,), 500)]

COMPARE_COLUMNS = ["hidden_layers", "arch", "initialization", "smt_inputs", "status",
                   "final_train_loss", "final_val_loss", "final_val_acc", "final_train_acc",
                   "epoch0_encoded_acc", "epoch0_train_acc", "epoch0_val_acc",
                   "solver_elapsed_s", "solver_attempts", "solver_seed", "defaulted",
                   "solver", "timeout_s", "restarts", "init_seed", "mode", "epsilon", "rho", "smt_seed",
                   "epochs", "batch_size", "learning_rate", "train_seed",
                   "classes", "n_train", "n_val", "data_seed", "image_side", "solver_message"]


def parse_runs(text: str, input_dim: int) -> list[tuple[Architecture, int | None]]:
    """``10:random,10-10:100`` -> [(arch, None), (arch, 100)] for the given input size."""
    runs = []
    for item in text.split(","):
        hidden, _, what = item.strip().partition(":")
        widths = tuple(int(h) for h in hidden.split("-"))
        arch = Architecture(input_dim, widths)
        runs.append((arch, None if what in ("", "random") else int(what)))
    return runs


def compare(runs, ds: mnist.Dataset, data_cfg: DataConfig, config: TrainConfig, opts: smt.EncodingOptions,
            solver_cmd: str | None, timeout: float, restarts: int = 0, first_timeout: float = 5.0,
            init_seed: int = 0) -> list[dict]:
    if not runs:
        raise ValueError("no runs requested")
    rows = []
    for arch, m in runs:
        row = {c: "" for c in COMPARE_COLUMNS}
        row.update(hidden_layers=",".join(map(str, arch.hidden_widths)), arch=arch.spec(),
                   solver=solver.resolve_solver(solver_cmd) if m else "", timeout_s=timeout if m else "",
                   restarts=restarts if m else "", **config_provenance(config), **data_cfg.provenance(ds))
        if m is None:
            row.update(initialization="random", init_seed=init_seed, status="ok")
            rec = run_training("random", arch, ds, config, init_seed=init_seed)
        else:
            row.update(initialization="smt", smt_inputs=m, **opts_provenance(opts))
            try:
                doc, samples, idx = encode(arch, ds, m, opts)
                res = solve(doc, arch, samples, opts, solver_cmd, timeout, restarts, first_timeout)
            except (ValueError, solver.SolverNotFound) as e:
                row.update(status=f"error: {e}")
                rows.append(row)
                continue
            row.update(solver_elapsed_s=f"{res.elapsed:.3f}", solver_attempts=res.attempts,
                       solver_seed="" if res.solver_seed is None else res.solver_seed,
                       status=res.status, defaulted=res.defaulted,
                       solver_message=res.message[:200] if res.status == solver.SOLVER_ERROR else "")
            if res.params is None:
                rows.append(row)
                continue
            rec = run_training("smt", arch, ds, config, params=res.params, encoded_idx=idx)
            row["epoch0_encoded_acc"] = rec.encoded_acc0
        f = rec.final
        row.update(final_train_loss=f.train_loss, final_val_loss=f.val_loss, final_val_acc=f.val_acc,
                   final_train_acc=f.train_acc, epoch0_train_acc=rec.initial.train_acc,
                   epoch0_val_acc=rec.initial.val_acc)
        rows.append(row)
        log.info("%s %s m=%s -> %s", arch, row["initialization"], m, row["status"])
    return rows


# -- runtime sweep --------------------------------------------------------------------

SWEEP_COLUMNS = ["arch", "samples", "repeat", "status", "elapsed_s", "solver_attempts", "solver_seed",
                 "n_asserts", "doc_bytes", "solver", "timeout_s", "restarts", "mode", "epsilon", "rho",
                 "smt_seed", "classes", "n_train", "n_val", "data_seed", "image_side"]


def sweep_runtime(archs, ms, ds: mnist.Dataset, data_cfg: DataConfig, opts: smt.EncodingOptions,
                  solver_cmd: str | None, timeout: float, repeats: int = 1, restarts: int = 0,
                  first_timeout: float = 5.0) -> list[dict]:
    if not archs or not ms:
        raise ValueError("need at least one architecture and one subset size")
    rows = []
    for arch in archs:
        for m in sorted(ms):
            for r in range(repeats):
                row = {"arch": arch.spec(), "samples": m, "repeat": r,
                       "solver": solver.resolve_solver(solver_cmd), "timeout_s": timeout,
                       "restarts": restarts, **opts_provenance(opts), **data_cfg.provenance(ds)}
                try:
                    doc, samples, _ = encode(arch, ds, m, opts)
                    res = solve(doc, arch, samples, opts, solver_cmd, timeout, restarts, first_timeout)
                except (ValueError, solver.SolverNotFound) as e:
                    row.update(status=f"error: {e}", elapsed_s="", n_asserts="", doc_bytes="",
                               solver_attempts="", solver_seed="")
                    rows.append(row)
                    continue
                elapsed = timeout if res.status == solver.TIMEOUT else res.elapsed
                row.update(status=res.status, elapsed_s=f"{elapsed:.3f}", solver_attempts=res.attempts,
                           solver_seed="" if res.solver_seed is None else res.solver_seed,
                           n_asserts=len(doc.assertions), doc_bytes=len(doc.render().encode()))
                rows.append(row)
                log.info("%s m=%d rep=%d -> %s %.2fs", arch, m, r, res.status, elapsed)
    return rows


def runtime_trend(rows) -> float:
    """Spearman correlation between subset size and solver time over all rows."""
    pairs = [(int(r["samples"]), float(r["elapsed_s"])) for r in rows if r["elapsed_s"] != ""]
    if len(pairs) < 3:
        return float("nan")
    ms, ts = zip(*pairs)
    return float(spearmanr(ms, ts).statistic)
