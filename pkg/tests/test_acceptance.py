"""Acceptance criteria at full tolerance.

Every criterion runs once per session (shared runs are memoized in one
Context) and prints a PASS/FAIL line in the terminal summary.
"""
import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from preqinfo import analysis as an
from preqinfo import suites
from preqinfo.continual import MethodSpec, ratio_kept

pytestmark = pytest.mark.slow

# Criteria that do not hold at desk scale. They still run at full tolerance and
# are reported as XFAIL rather than hidden; an unexpected pass shows as XPASS.
KNOWN_FAILURES: dict[int, str] = {
    6: "k * lit_one exceeds L_IT(n, k) on most runs: per-example transfer shrinks as the scratch coder learns",
    9: "category identities miss by large factors: a fresh output layer on T_full costs far more than T_V/A",
}


@pytest.fixture(scope="module")
def ctx():
    return suites.Context()


@pytest.fixture(scope="module")
def results(ctx, tmp_path_factory):
    workdir = tmp_path_factory.mktemp("acceptance")
    cache = {}

    def get(number):
        if number not in cache:
            res = suites.run_criterion(number, ctx, workdir)
            cache[number] = res
            ACCEPTANCE_LINES.append(res.line())
            print(res.line())
        return cache[number]
    return get


def _param(n):
    marks = [pytest.mark.xfail(reason=KNOWN_FAILURES[n], strict=False)] if n in KNOWN_FAILURES else []
    return pytest.param(n, marks=marks, id=f"criterion_{n:02d}")


@pytest.mark.parametrize("number", [_param(n) for n in sorted(suites.CRITERIA)])
def test_criterion(number, results):
    res = results(number)
    assert res.passed, f"{res.line()}\n{res.measured}"


# Claims checked on runs the criteria already produced.


def test_forgetting_positive(ctx):
    rep = suites.dissection(ctx)
    assert an.forgetting(rep, an.V, an.A) > 0


def test_plain_transfer_keeps_half_of_past_information(ctx):
    res = suites.continual_results(ctx, "separate", [MethodSpec("plain")])
    per_seed = [np.mean([r["ratio"] for r in ratio_kept(res[("plain", s)])[:-1]]) for s in ctx.seeds]
    assert float(np.median(per_seed)) >= 0.5
