import time
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import cvc5_command, requires_z3
from satinit import nn, sexpr, smt, solver
from satinit.nn import Architecture

TOY = """(set-logic QF_LRA)
(declare-const x Real)
(assert (> x 0))
(check-sat)
(get-model)
"""

CONTRADICTION = """(set-logic QF_LRA)
(declare-const x Real)
(assert (and (> x 0) (< x 0)))
(check-sat)
(get-model)
"""


class TestSexpr:
    def test_nested(self):
        assert sexpr.parse("(a (b c) d)") == ["a", ["b", "c"], "d"]

    def test_comments_and_strings(self):
        items = sexpr.parse_all('; hi\n(error "line 3 ""x""") sat')
        assert items[0] == ["error", 'line 3 "x"']
        assert items[1] == "sat"

    def test_quoted_symbol(self):
        assert sexpr.parse("(|a b| c)") == ["a b", "c"]

    @pytest.mark.parametrize("text, offset", [("(a (b c)", 0), ("(a))", 3), ('(a "bc', 3)])
    def test_errors_have_offsets(self, text, offset):
        with pytest.raises(sexpr.ParseError) as info:
            sexpr.parse_all(text)
        assert info.value.offset == offset

    @pytest.mark.parametrize("text, value", [("3", 3), ("3.25", Fraction(13, 4)), ("(/ 1 2)", Fraction(1, 2)),
                                             ("(- (/ 7 4))", Fraction(-7, 4)), ("(/ 1.0 4.0)", Fraction(1, 4)),
                                             ("(- 3 1)", 2), ("(* 2 (/ 1 3))", Fraction(2, 3)), ("0.0", 0)])
    def test_numeral_values(self, text, value):
        assert sexpr.numeral_value(sexpr.parse(text)) == value

    @pytest.mark.parametrize("text", ["x", "(root-obj (+ (^ x 2) (- 2)) 1)", "(/ 1 0)", "true"])
    def test_non_numeric(self, text):
        with pytest.raises(ValueError):
            sexpr.numeral_value(sexpr.parse(text))


class TestParseModel:
    def test_fraction(self):
        assert solver.parse_model("(define-fun w_0_0_0 () Real (/ 1 2))") == {"w_0_0_0": Fraction(1, 2)}

    def test_negative(self):
        assert solver.parse_model("(define-fun b_1_0 () Real (- (/ 7 4)))") == {"b_1_0": Fraction(-7, 4)}

    def test_decimal_exact(self):
        assert solver.parse_model("(define-fun w_0_0_1 () Real 3.25)") == {"w_0_0_1": Fraction(13, 4)}

    def test_z3_layout(self):
        text = "(\n  (define-fun y () Real\n    3.0)\n  (define-fun x () Real\n    (- 1.5))\n)"
        assert solver.parse_model(text) == {"y": 3, "x": Fraction(-3, 2)}

    def test_model_wrapper_and_other_sorts(self):
        text = "(model (define-fun x () Real 1) (define-fun p () Bool true) (define-fun f ((a Real)) Real a))"
        assert solver.parse_model(text) == {"x": 1}

    def test_malformed(self):
        with pytest.raises(sexpr.ParseError, match="byte"):
            solver.parse_model("((define-fun x () Real 1)")

    def test_non_numeric_names_variable(self):
        with pytest.raises(sexpr.ParseError, match="w_0_0_0"):
            solver.parse_model("((define-fun w_0_0_0 () Real (root-obj (+ (^ x 2) (- 2)) 1)))")


@settings(max_examples=1000, deadline=None)
@given(st.integers(-10**12, 10**12), st.integers(1, 10**12))
def test_literal_round_trip(p, q):
    value = Fraction(p, q)
    text = f"(define-fun w_0_0_0 () Real {smt.rational_literal(value)})"
    assert solver.parse_model(text) == {"w_0_0_0": value}


class TestAssignment:
    arch = Architecture(2, (1,))

    def full(self):
        return {n: Fraction(k + 1, 3) for k, n in enumerate(smt.all_var_names(self.arch))}

    def test_full(self):
        params, defaulted = solver.assignment_to_params(self.full(), self.arch)
        assert defaulted == 0
        assert params.domain == nn.EXACT
        assert sum(a.size for a in params.arrays()) == 7
        assert params.weights[0][1, 0] == Fraction(2, 3)

    def test_missing_defaults_to_zero(self):
        a = self.full()
        del a["b_1_1"]
        params, defaulted = solver.assignment_to_params(a, self.arch)
        assert defaulted == 1 and params.biases[1][1] == 0

    def test_empty(self):
        params, defaulted = solver.assignment_to_params({}, self.arch)
        assert defaulted == self.arch.n_params
        assert all(v == 0 for a in params.arrays() for v in a.ravel())

    @pytest.mark.parametrize("name", ["w_0_2_0", "b_1_2", "w_2_0_0", "x"])
    def test_out_of_bounds(self, name):
        with pytest.raises(ValueError):
            solver.assignment_to_params({name: Fraction(1)}, self.arch)


class TestEvalExact:
    def test_zero(self):
        p = nn.zero_init(Architecture(3, (2,)), nn.EXACT)
        assert solver.eval_exact(p, [Fraction(1, 2)] * 3) == (0, 0)

    def test_hand_example(self):
        p = nn.from_lists([[[1], [1]], [[2, -2]]], [[-1], [0, 0]], domain=nn.EXACT)
        l0, l1 = solver.eval_exact(p, [1, 1])
        assert (l0, l1) == (2, -2) and isinstance(l0, Fraction)

    def test_shape(self):
        with pytest.raises(nn.ShapeError):
            solver.eval_exact(nn.zero_init(Architecture(3, (2,)), nn.EXACT), [1, 1])


class TestVerify:
    samples = [([Fraction(1, 2), Fraction(1)], 0), ([Fraction(0), Fraction(1, 3)], 1)]
    arch = Architecture(2, (2,))

    def test_zero_strict_fails(self):
        r = solver.verify_model(nn.zero_init(self.arch, nn.EXACT), self.samples, smt.EncodingOptions(smt.STRICT))
        assert r.passed == [False, False] and not r.all_pass

    def test_zero_loose_passes(self):
        r = solver.verify_model(nn.zero_init(self.arch, nn.EXACT), self.samples, smt.EncodingOptions(smt.LOOSE))
        assert r.all_pass

    def test_margin_boundary(self):
        # logits (eps, 0) for label 0: strict passes, margin eps does not
        p = nn.from_lists([[[0], [0]], [[0, 0]]], [[0], [Fraction(1, 1000), 0]], domain=nn.EXACT)
        assert solver.verify_model(p, self.samples[:1], smt.EncodingOptions(smt.STRICT)).all_pass
        assert not solver.verify_model(p, self.samples[:1], smt.EncodingOptions(smt.MARGIN)).all_pass

    def test_mask_checked(self):
        p = nn.zero_init(self.arch, nn.EXACT)
        r = solver.verify_model(p, self.samples, smt.EncodingOptions(smt.LOOSE), mask={(0, 0, 0)})
        assert not r.all_pass


class TestInvokeFake:
    def test_timeout(self, fake_solver):
        cmd = fake_solver("sleep 30")
        start = time.perf_counter()
        out = solver.invoke_solver(TOY, cmd, timeout_s=0.2)
        assert out.status == solver.TIMEOUT and out.assignment is None
        assert 0.2 <= out.elapsed < 0.2 + 2.0
        assert time.perf_counter() - start < 0.2 + 2.0

    def test_timeout_kills_grandchildren(self, fake_solver):
        # the child keeps stdout open; only a process-group kill ends it
        cmd = fake_solver("sleep 30 &\nsleep 30")
        start = time.perf_counter()
        assert solver.invoke_solver(TOY, cmd, timeout_s=0.2).status == solver.TIMEOUT
        assert time.perf_counter() - start < 2.2

    def test_garbage_is_solver_error(self, fake_solver):
        out = solver.invoke_solver(TOY, fake_solver("echo 'segfault'; exit 3"), 5)
        assert out.status == solver.SOLVER_ERROR and "segfault" in out.message

    def test_killed_solver_reports_signal(self, fake_solver):
        # what the OOM killer leaves behind: no output at all
        out = solver.invoke_solver(TOY, fake_solver("kill -9 $$"), 5)
        assert out.status == solver.SOLVER_ERROR and out.message == "solver killed by signal 9"

    def test_silent_exit_reports_status(self, fake_solver):
        out = solver.invoke_solver(TOY, fake_solver("exit 7"), 5)
        assert out.status == solver.SOLVER_ERROR and "status 7" in out.message

    def test_unknown(self, fake_solver):
        assert solver.invoke_solver(TOY, fake_solver("echo unknown"), 5).status == solver.UNKNOWN

    def test_sat_with_cvc5_style_model(self, fake_solver):
        cmd = fake_solver("printf 'sat\\n(\\n(define-fun x () Real (/ 1 3))\\n)\\n'")
        out = solver.invoke_solver(TOY, cmd, 5)
        assert out.status == solver.SAT and out.assignment == {"x": Fraction(1, 3)}

    def test_receives_path(self, fake_solver):
        # echo the first line of the file we were given
        out = solver.invoke_solver(TOY, fake_solver('echo sat; echo "(model)"; head -1 "$1" >&2'), 5)
        assert out.status == solver.SAT and out.assignment == {}

    def test_not_found(self):
        with pytest.raises(solver.SolverNotFound):
            solver.invoke_solver(TOY, "/nonexistent/solver-xyz", 5)

    def test_env_and_flag(self, monkeypatch):
        monkeypatch.setenv(solver.ENV_SOLVER, "from-env")
        assert solver.resolve_solver(None) == "from-env"
        assert solver.resolve_solver("from-flag") == "from-flag"
        monkeypatch.delenv(solver.ENV_SOLVER)
        assert solver.resolve_solver(None) == solver.DEFAULT_SOLVER

    def test_restarts_use_seed_placeholder(self, fake_solver, tmp_path):
        log = tmp_path / "seeds"
        # seed 0 hangs, seed 1 answers
        cmd = fake_solver(f'echo "$1" >> {log}\nif [ "$1" = "0" ]; then sleep 30; fi\necho unsat')
        res = solver.solve_with_restarts(TOY, cmd + " {seed}", timeout_s=10, restarts=3, first_timeout=0.3)
        assert res.outcome.status == solver.UNSAT
        assert res.attempts == 2 and res.solver_seed == 1
        assert log.read_text().split()[:2] == ["0", "1"]

    def test_restarts_respect_total_budget(self, fake_solver):
        start = time.perf_counter()
        res = solver.solve_with_restarts(TOY, fake_solver("sleep 30") + " {seed}", timeout_s=1.0,
                                         restarts=10, first_timeout=0.2)
        assert res.outcome.status == solver.TIMEOUT
        assert time.perf_counter() - start < 1.0 + 2.0


@requires_z3
class TestZ3:
    def test_toy_sat(self):
        out = solver.invoke_solver(TOY, "z3", 30)
        assert out.status == solver.SAT and out.assignment["x"] > 0
        assert out.elapsed >= 0

    def test_contradiction_unsat(self):
        out = solver.invoke_solver(CONTRADICTION, "z3", 30)
        assert out.status == solver.UNSAT and out.assignment is None

    def test_contradictory_samples_unsat(self):
        arch = Architecture(2, (2,))
        x = [Fraction(1, 2), Fraction(1, 5)]
        for mode in (smt.MARGIN, smt.STRICT):
            doc = smt.build_formula(arch, [(x, 0), (x, 1)], smt.EncodingOptions(mode, rho=0))
            assert solver.invoke_solver(doc, "z3", 60).status == solver.UNSAT

    def test_loose_zero_model_is_accepted(self):
        # loose mode with identical inputs and opposite labels is satisfiable (by ties)
        arch = Architecture(2, (2,))
        x = [Fraction(1, 2), Fraction(1, 5)]
        doc = smt.build_formula(arch, [(x, 0), (x, 1)], smt.EncodingOptions(smt.LOOSE, rho=0))
        out = solver.invoke_solver(doc, "z3", 60)
        assert out.status == solver.SAT
        params, _ = solver.assignment_to_params(out.assignment, arch)
        assert solver.verify_model(params, [(x, 0), (x, 1)], smt.EncodingOptions(smt.LOOSE)).all_pass

    def test_slow_instance_times_out(self):
        rng = np.random.default_rng(0)
        arch = Architecture(16, (10,))
        samples = [([Fraction(int(v), 4) for v in rng.integers(0, 5, 16)], k % 2) for k in range(60)]
        doc = smt.build_formula(arch, samples, smt.EncodingOptions(rho=Fraction(1, 2)))
        start = time.perf_counter()
        out = solver.invoke_solver(doc, "z3", timeout_s=0.001)
        assert out.status == solver.TIMEOUT
        assert time.perf_counter() - start < 0.001 + 2.0


@pytest.mark.skipif(cvc5_command() is None, reason="cvc5 python package not installed")
def test_cvc5_toy():
    out = solver.invoke_solver(TOY, cvc5_command(), 60)
    assert out.status == solver.SAT and out.assignment["x"] > 0
    assert solver.invoke_solver(CONTRADICTION, cvc5_command(), 60).status == solver.UNSAT
