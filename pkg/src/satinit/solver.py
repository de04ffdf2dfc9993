"""Run an external SMT solver and check its model in exact arithmetic."""
from __future__ import annotations

import os
import re
import shlex
import signal
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import sexpr
from .nn import EXACT, Architecture, ParamSet, ShapeError, zero_init
from .smt import LOOSE, MARGIN, STRICT, EncodingOptions, SmtDocument, to_fraction

SAT = "sat"
UNSAT = "unsat"
UNKNOWN = "unknown"
TIMEOUT = "timeout"
SOLVER_ERROR = "solver-error"

ENV_SOLVER = "SATINIT_SOLVER"
DEFAULT_SOLVER = "z3"

_WEIGHT = re.compile(r"^w_(\d+)_(\d+)_(\d+)$")
_BIAS = re.compile(r"^b_(\d+)_(\d+)$")


class SolverNotFound(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverOutcome:
    status: str
    elapsed: float
    assignment: Mapping[str, Fraction] | None = None
    message: str = ""

    def __post_init__(self):
        if (self.assignment is not None) != (self.status == SAT):
            raise ValueError("an assignment is present exactly when the status is sat")
        if self.elapsed < 0:
            raise ValueError("elapsed time must be nonnegative")


def resolve_solver(flag: str | None = None) -> str:
    """``--solver`` wins over $SATINIT_SOLVER, which wins over the default."""
    return flag or os.environ.get(ENV_SOLVER) or DEFAULT_SOLVER


def parse_model(model_text: str) -> dict[str, Fraction]:
    """Map each ``define-fun`` of sort Real to its exact value."""
    exprs = sexpr.parse_all(model_text)
    # unwrap "(model ...)" and the bare "( ... )" block both solvers print
    todo = list(exprs)
    out: dict[str, Fraction] = {}
    while todo:
        e = todo.pop(0)
        if not isinstance(e, list) or not e:
            continue
        head = e[0]
        if head == "define-fun":
            if len(e) != 5:
                raise sexpr.ParseError(f"malformed define-fun: {sexpr.to_text(e)[:80]}")
            name, args, sort, body = e[1], e[2], e[3], e[4]
            if args != [] or sort != "Real":
                continue
            try:
                out[str(name)] = sexpr.numeral_value(body)
            except ValueError:
                raise sexpr.ParseError(f"variable {name}: non-numeric value {sexpr.to_text(body)[:80]}") from None
        elif head == "model" or isinstance(head, list):
            todo[0:0] = e[1:] if head == "model" else e
    return out


def _classify(stdout: str) -> tuple[str, str]:
    """Status token plus the text after it."""
    m = re.match(r"\s*(sat|unsat|unknown)\b", stdout)
    if not m:
        return SOLVER_ERROR, stdout
    return m.group(1), stdout[m.end():]


def _kill(proc):
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        proc.kill()


def invoke_solver(doc: SmtDocument | str, solver_cmd: str | None = None, timeout_s: float = 60.0,
                  path: str | None = None) -> SolverOutcome:
    """Write ``doc`` to a file, run ``<solver_cmd> <file>`` and classify the reply.

    ``solver_cmd`` is split shell-style, so extra solver flags are allowed.
    The process (and its process group) is killed after ``timeout_s``.
    """
    if timeout_s <= 0:
        raise ValueError("timeout must be positive")
    argv = shlex.split(resolve_solver(solver_cmd))
    text = doc.render() if isinstance(doc, SmtDocument) else doc
    tmpdir = None
    if path is None:
        tmpdir = tempfile.TemporaryDirectory(prefix="satinit-")
        path = os.path.join(tmpdir.name, "formula.smt2")
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    try:
        start = time.perf_counter()
        try:
            proc = subprocess.Popen(argv + [path], stdout=subprocess.PIPE, stderr=subprocess.PIPE,
                                    text=True, start_new_session=True)
        except FileNotFoundError:
            raise SolverNotFound(f"solver executable not found: {argv[0]!r}") from None
        try:
            out, err = proc.communicate(timeout=timeout_s)
        except subprocess.TimeoutExpired:
            _kill(proc)
            proc.communicate()
            return SolverOutcome(TIMEOUT, time.perf_counter() - start)
        elapsed = time.perf_counter() - start
    finally:
        if tmpdir is not None:
            tmpdir.cleanup()

    status, rest = _classify(out)
    if status == SOLVER_ERROR:
        message = (out + err).strip()
        if proc.returncode < 0:
            # killed by a signal, typically SIGKILL from the kernel's OOM killer
            message = f"solver killed by signal {-proc.returncode}" + (f": {message}" if message else "")
        elif not message:
            message = f"solver exited with status {proc.returncode} and no output"
        return SolverOutcome(SOLVER_ERROR, elapsed, message=message)
    if status != SAT:
        # get-model after unsat is an error for most solvers; that is expected
        return SolverOutcome(status, elapsed, message=rest.strip())
    try:
        assignment = parse_model(rest)
    except sexpr.ParseError as e:
        return SolverOutcome(SOLVER_ERROR, elapsed, message=f"could not parse model: {e}")
    return SolverOutcome(SAT, elapsed, assignment)


@dataclass(frozen=True)
class RestartResult:
    outcome: SolverOutcome
    attempts: int
    solver_seed: int | None  # seed of the attempt that produced ``outcome``
    total_elapsed: float


def solve_with_restarts(doc: SmtDocument | str, solver_cmd: str | None = None, timeout_s: float = 600.0,
                        restarts: int = 0, first_timeout: float = 5.0) -> RestartResult:
    """Retry timed-out runs with a new solver seed and a doubled time slice.

    Nonlinear real arithmetic runtimes are heavy-tailed in the solver's
    random seed, so short seeded attempts beat one long run.  ``{seed}`` in
    ``solver_cmd`` is replaced by the attempt number; without the
    placeholder every attempt is identical and ``restarts`` should be 0.
    ``timeout_s`` bounds the total wall-clock time of all attempts.
    """
    cmd = resolve_solver(solver_cmd)
    seeded = "{seed}" in cmd
    total = 0.0
    slice_s = first_timeout if restarts else timeout_s
    outcome = None
    for attempt in range(restarts + 1):
        remaining = timeout_s - total
        if remaining <= 0:
            break
        budget = remaining if attempt == restarts else min(slice_s, remaining)
        outcome = invoke_solver(doc, cmd.replace("{seed}", str(attempt)), budget)
        total += outcome.elapsed
        if outcome.status != TIMEOUT:
            return RestartResult(outcome, attempt + 1, attempt if seeded else None, total)
        slice_s *= 2
    if outcome is None:
        outcome = SolverOutcome(TIMEOUT, 0.0)
    return RestartResult(SolverOutcome(TIMEOUT, total), attempt + 1, None, total)


def assignment_to_params(assignment: Mapping[str, Fraction], arch: Architecture) -> tuple[ParamSet, int]:
    """Exact ParamSet from a model, plus how many parameters defaulted to 0."""
    params = zero_init(arch, EXACT)
    shapes = arch.layer_shapes()
    for name, value in assignment.items():
        m = _WEIGHT.match(name)
        if m:
            l, i, j = map(int, m.groups())
            if l >= len(shapes) or i >= shapes[l][0] or j >= shapes[l][1]:
                raise ValueError(f"{name} is outside architecture {arch}")
            params.weights[l][i, j] = to_fraction(value)
            continue
        m = _BIAS.match(name)
        if m:
            l, i = map(int, m.groups())
            if l >= len(shapes) or i >= shapes[l][1]:
                raise ValueError(f"{name} is outside architecture {arch}")
            params.biases[l][i] = to_fraction(value)
            continue
        raise ValueError(f"{name!r} is not a parameter name")
    defaulted = arch.n_params - sum(1 for n in assignment if _WEIGHT.match(n) or _BIAS.match(n))
    return params, defaulted


def eval_exact(params: ParamSet, x: Sequence) -> tuple[Fraction, Fraction]:
    if params.domain != EXACT:
        params = params.to_exact()
    h = [to_fraction(v) for v in x]
    if len(h) != params.weights[0].shape[0]:
        raise ShapeError(f"layer 0: input has {len(h)} components, expected {params.weights[0].shape[0]}")
    last = params.n_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        rows, cols = w.shape
        z = []
        for j in range(cols):
            acc = b[j]
            for i in range(rows):
                if h[i]:
                    acc += w[i, j] * h[i]
            z.append(acc)
        h = z if l == last else [v if v > 0 else Fraction(0) for v in z]
    return h[0], h[1]


def constraint_holds(l0: Fraction, l1: Fraction, label: int, opts: EncodingOptions) -> bool:
    win, lose = (l0, l1) if label == 0 else (l1, l0)
    if opts.mode == STRICT:
        return win > lose
    if opts.mode == LOOSE:
        return win >= lose
    return win > lose + opts.epsilon


@dataclass
class VerifyReport:
    passed: list[bool] = field(default_factory=list)
    logits: list[tuple[Fraction, Fraction]] = field(default_factory=list)

    @property
    def all_pass(self) -> bool:
        return all(self.passed)

    @property
    def n_failed(self) -> int:
        return self.passed.count(False)


def verify_model(params: ParamSet, samples, opts: EncodingOptions, mask=()) -> VerifyReport:
    """Re-check every sample constraint (and any nonzero constraints) exactly."""
    report = VerifyReport()
    for x, y in samples:
        l0, l1 = eval_exact(params, x)
        report.logits.append((l0, l1))
        report.passed.append(constraint_holds(l0, l1, int(y), opts))
    for l, i, j in sorted(mask):
        report.passed.append(params.weights[l][i, j] != 0)
    return report


def params_from_model(assignment, arch) -> ParamSet:
    return assignment_to_params(assignment, arch)[0]


def as_rational_vector(x) -> list[Fraction]:
    return [to_fraction(v) for v in np.asarray(x, dtype=object).ravel()]
