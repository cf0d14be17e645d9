"""The nine acceptance criteria at their stated tolerances (about 3 minutes in total).

Each test prints one ``[PASS]`` / ``[FAIL]`` line with the measured statistics.
"""

import pytest

from bdsde_lab.acceptance import CRITERIA, criterion_1


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    result = CRITERIA[number](seed=0)
    with capsys.disabled():
        print("\n" + result.line())
    assert result.status == "pass", result.detail


def test_reduced_paths_never_pass_silently():
    result = criterion_1(seed=0, scale=0.01)
    assert result.status == "insufficient samples"
    assert not result.passed
