"""The eight acceptance criteria; each prints one PASS/FAIL line."""

import pytest

from binjump.acceptance import CRITERIA, run_criterion


@pytest.mark.parametrize("number", [c[0] for c in CRITERIA], ids=[f"{c[0]}-{c[1]}" for c in CRITERIA])
def test_criterion(number):
    res = run_criterion(number)
    with capsys_disabled():
        print("\n" + res.line())
    assert res.passed, res.line()


class capsys_disabled:
    # print straight to the terminal so the lines show without -s
    def __enter__(self):
        import sys

        self._out = sys.stdout
        sys.stdout = sys.__stdout__
        return self

    def __exit__(self, *exc):
        import sys

        sys.stdout = self._out
        return False
