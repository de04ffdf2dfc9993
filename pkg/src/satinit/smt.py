"""SMT-LIB v2 encoding of "this ReLU network classifies these samples".

Every weight and bias becomes a ``Real`` constant.  Each training sample
contributes one assertion comparing the two output logits, with the
network's forward pass expanded inline and ReLU written as ``ite``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .nn import Architecture

STRICT = "strict"
LOOSE = "loose"
MARGIN = "margin"
MODES = (STRICT, LOOSE, MARGIN)

DEFAULT_EPSILON = Fraction(1, 1000)
DEFAULT_RHO = Fraction(1, 20)

_SIMPLE_SYMBOL = re.compile(r"^[A-Za-z~!@$%^&*_+=<>.?/\-][0-9A-Za-z~!@$%^&*_+=<>.?/\-]*$")


def to_fraction(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, str):
        return Fraction(v)
    if isinstance(v, (int, np.integer)):
        return Fraction(int(v))
    # floats: exact binary value; use the string form to get 0.05 -> 1/20
    return Fraction(str(v)) if isinstance(v, float) else Fraction(v)


@dataclass(frozen=True)
class EncodingOptions:
    mode: str = MARGIN
    epsilon: Fraction = DEFAULT_EPSILON
    rho: Fraction = DEFAULT_RHO
    seed: int = 0
    logic: str | None = None  # None picks from the architecture

    def __post_init__(self):
        object.__setattr__(self, "epsilon", to_fraction(self.epsilon))
        object.__setattr__(self, "rho", to_fraction(self.rho))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == MARGIN and self.epsilon <= 0:
            raise ValueError("margin epsilon must be positive")
        if not 0 <= self.rho <= 1:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")

    def mode_text(self) -> str:
        return f"margin:{self.epsilon}" if self.mode == MARGIN else self.mode


def logic_for(arch: Architecture) -> str:
    """QF_NRA as soon as a hidden layer exists: products of two weight variables appear."""
    return "QF_NRA" if arch.hidden_widths else "QF_LRA"


def var_name(kind: str, layer: int, i: int, j: int | None = None, arch: Architecture | None = None) -> str:
    if arch is not None:
        shapes = arch.layer_shapes()
        if not 0 <= layer < len(shapes):
            raise IndexError(f"layer {layer} out of range")
        rows, cols = shapes[layer]
        if kind == "weight" and not (0 <= i < rows and j is not None and 0 <= j < cols):
            raise IndexError(f"weight index ({layer}, {i}, {j}) out of range")
        if kind == "bias" and not 0 <= i < cols:
            raise IndexError(f"bias index ({layer}, {i}) out of range")
    if min(layer, i, 0 if j is None else j) < 0:
        raise IndexError("indices must be nonnegative")
    if kind == "weight":
        if j is None:
            raise ValueError("weight names need a column index")
        return f"w_{layer}_{i}_{j}"
    if kind == "bias":
        return f"b_{layer}_{i}"
    raise ValueError(f"unknown variable kind {kind!r}")


def all_var_names(arch: Architecture) -> list[str]:
    """Every parameter name, weights first, each group sorted by (layer, row, col)."""
    names = []
    for l, (rows, cols) in enumerate(arch.layer_shapes()):
        names += [f"w_{l}_{i}_{j}" for i in range(rows) for j in range(cols)]
    for l, (_, cols) in enumerate(arch.layer_shapes()):
        names += [f"b_{l}_{i}" for i in range(cols)]
    return names


def rational_literal(q) -> str:
    q = to_fraction(q)
    if q < 0:
        return f"(- {rational_literal(-q)})"
    if q.denominator == 1:
        return str(q.numerator)
    return f"(/ {q.numerator} {q.denominator})"


def affine_expr(layer: int, out_index: int, input_terms: Sequence) -> str:
    """One pre-activation ``b + sum_i w_i * x_i``.

    ``input_terms`` holds, per input position, either a rational constant
    (first layer) or the text of an expression.  Constant zeros are dropped.
    """
    if not len(input_terms):
        raise ValueError("affine_expr needs at least one input term")
    parts = [var_name("bias", layer, out_index)]
    for i, term in enumerate(input_terms):
        w = var_name("weight", layer, i, out_index)
        if isinstance(term, str):
            parts.append(f"(* {w} {term})")
            continue
        q = to_fraction(term)
        if q == 0:
            continue
        parts.append(f"(* {w} {rational_literal(q)})")
    if len(parts) == 1:
        return parts[0]
    return "(+ " + " ".join(parts) + ")"


def relu_expr(pre_activation: str) -> str:
    return f"(ite (> {pre_activation} 0) {pre_activation} 0)"


def logit_exprs(arch: Architecture, x: Sequence) -> tuple[str, str]:
    if len(x) != arch.input_dim:
        raise ValueError(f"sample has {len(x)} components, architecture expects {arch.input_dim}")
    terms: list = [to_fraction(v) for v in x]
    last = arch.n_layers - 1
    for l, (_, cols) in enumerate(arch.layer_shapes()):
        pre = [affine_expr(l, j, terms) for j in range(cols)]
        terms = pre if l == last else [relu_expr(p) for p in pre]
    return terms[0], terms[1]


def sample_constraint(logit0: str, logit1: str, label: int, opts: EncodingOptions) -> str:
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    win, lose = (logit0, logit1) if label == 0 else (logit1, logit0)
    if opts.mode == STRICT:
        return f"(assert (> {win} {lose}))"
    if opts.mode == LOOSE:
        return f"(assert (>= {win} {lose}))"
    return f"(assert (> {win} (+ {lose} {rational_literal(opts.epsilon)})))"


def nonzero_mask(arch: Architecture, rho, seed: int) -> frozenset[tuple[int, int, int]]:
    """Weight coordinates drawn independently with probability ``rho``."""
    rho = to_fraction(rho)
    if not 0 <= rho <= 1:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    rng = np.random.default_rng(seed)
    mask = set()
    for l, shape in enumerate(arch.layer_shapes()):
        # draws happen even for rho in {0, 1} so masks nest as rho grows
        draws = rng.random(shape)
        for (i, j), u in np.ndenumerate(draws):
            if u < rho:
                mask.add((l, i, j))
    return frozenset(mask)


def nonzero_constraints(mask) -> list[str]:
    return [f"(assert (not (= {var_name('weight', l, i, j)} 0)))" for l, i, j in sorted(mask)]


@dataclass
class SmtDocument:
    header: str
    logic: str
    declarations: list[str]
    assertions: list[str]
    mask: frozenset = field(default_factory=frozenset)

    def commands(self) -> list[str]:
        return [f"(set-logic {self.logic})", *self.declarations, *self.assertions,
                "(check-sat)", "(get-model)"]

    def render(self) -> str:
        return "\n".join([self.header, *self.commands()]) + "\n"

    def __str__(self):
        return self.render()


def build_formula(arch: Architecture, samples: Sequence[tuple[Sequence, int]],
                  opts: EncodingOptions = EncodingOptions()) -> SmtDocument:
    if not samples:
        raise ValueError("at least one sample is required")
    logic = opts.logic or logic_for(arch)
    decls = [f"(declare-const {name} Real)" for name in all_var_names(arch)]
    asserts = []
    for k, (x, y) in enumerate(samples):
        try:
            l0, l1 = logit_exprs(arch, x)
        except ValueError as e:
            raise ValueError(f"sample {k}: {e}") from None
        asserts.append(sample_constraint(l0, l1, int(y), opts))
    mask = nonzero_mask(arch, opts.rho, opts.seed)
    asserts += nonzero_constraints(mask)
    header = (f"; satinit v1 arch={arch.spec()} n_samples={len(samples)} mode={opts.mode_text()} "
              f"rho={opts.rho} seed={opts.seed} logic={logic}")
    return SmtDocument(header, logic, decls, asserts, mask)


def is_simple_symbol(name: str) -> bool:
    return bool(_SIMPLE_SYMBOL.match(name))
