#!/usr/bin/env python3
"""Run an SMT-LIB v2 file through cvc5's own parser and print the responses.

The cvc5 wheel on PyPI ships only Python bindings, no executable.  This
script stands in for ``cvc5 <file>`` so the solver driver can call it like
any other solver binary:

    satinit solve f.smt2 --solver "python3 tools/cvc5_smt2.py"
"""
import sys

import cvc5


def main(argv):
    if len(argv) != 2:
        print("usage: cvc5_smt2.py FILE.smt2", file=sys.stderr)
        return 2
    tm = cvc5.TermManager()
    solver = cvc5.Solver(tm)
    solver.setOption("produce-models", "true")
    symbols = cvc5.SymbolManager(tm)
    parser = cvc5.InputParser(solver, symbols)
    parser.setFileInput(cvc5.InputLanguage.SMT_LIB_2_6, argv[1])
    while True:
        try:
            cmd = parser.nextCommand()
        except Exception as e:  # cvc5 raises its own exception types
            print(f'(error "{e}")')
            return 1
        if cmd.isNull():
            break
        sys.stdout.write(cmd.invoke(solver, symbols))
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
