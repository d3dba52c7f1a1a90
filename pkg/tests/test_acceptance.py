"""Acceptance suite: one pass/fail line per criterion at the stated tolerances.

The lines are printed as each criterion finishes and again in the terminal summary.
The same suite runs from the command line with ``fermi-twist acceptance --seed 0``.
"""
import pytest

from fermi_twist.acceptance import CRITERIA, run_criterion

RESULTS = {}


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    res = run_criterion(number, seed=0)
    RESULTS[number] = res
    with capsys.disabled():
        print("\n" + res.line(), flush=True)
    assert res.passed, res.line()
