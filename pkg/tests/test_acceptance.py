"""Acceptance criteria 1-12 at their stated tolerances (full suite).

Each test prints one ``[PASS]``/``[FAIL]`` line per check, visible in the
pytest output. Run ``python3 tests/test_acceptance.py`` for the same lines
without pytest.
"""

import sys

import pytest

from wmplab.acceptance import CRITERIA, run_criterion


@pytest.mark.parametrize("cid", sorted(CRITERIA))
def test_criterion(cid, capsys):
    checks = run_criterion(cid, "full")
    with capsys.disabled():
        print("".join(f"\ncriterion {cid}: {c.line()} ({c.seconds:.1f}s)" for c in checks))
    assert checks
    failed = [c.line() for c in checks if not c.passed]
    assert not failed, "; ".join(failed)


if __name__ == "__main__":
    ok = True
    for cid in sorted(CRITERIA):
        for c in run_criterion(cid, "full"):
            print(f"criterion {cid}: {c.line()}")
            ok &= c.passed
    sys.exit(0 if ok else 1)
