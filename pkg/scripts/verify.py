"""Run the oracle agreement checks and print one line per check."""

import sys

from sbbridge.verify import run_checks


def main():
    rep = run_checks()
    for c in rep["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}: error {c['error']:.2e} (tol {c['tol']:.0e})")
    return 0 if rep["all_passed"] else 2


if __name__ == "__main__":
    sys.exit(main())
