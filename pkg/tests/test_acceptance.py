"""Acceptance criteria 1-11, one test and one printed PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v`` or directly as a script.
"""

import sys
import warnings

import pytest

from pcv import cli
from pcv.verify import CHECKS, DETERMINISM_PROBE, CheckResult, lognormal_call_quadrature

SEED = 0
# frozen output of the adaptive quadrature oracle for criterion 7
LOGNORMAL_CALL_QUADRATURE = 0.88714297883500493


def _announce(result: CheckResult, capsys=None):
    line = f"{result.line()}  ({result.seconds:.1f}s)"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)


def _run(number: int) -> CheckResult:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return CHECKS[number](SEED)


@pytest.mark.parametrize("number", range(1, 11))
def test_criterion(number, capsys):
    result = _run(number)
    _announce(result, capsys)
    assert result.passed, result.detail


def test_quadrature_oracle_is_unchanged():
    assert lognormal_call_quadrature() == pytest.approx(LOGNORMAL_CALL_QUADRATURE, abs=1e-15)


def _verify_via_cli(out) -> bytes:
    only = ",".join(map(str, DETERMINISM_PROBE))
    code = cli.main(["verify", "--seed", str(SEED), "--set", f"only={only}", "--out", str(out)])
    assert code == 0
    return (out / "verify.csv").read_bytes()


def test_criterion_11_verify_reruns_are_byte_identical(tmp_path, capsys):
    first = _verify_via_cli(tmp_path / "a")
    second = _verify_via_cli(tmp_path / "b")
    same = first == second
    result = CheckResult(11, "verify reruns are byte-identical", same, float(not same), 0.0,
                         f"two CLI runs of criteria {DETERMINISM_PROBE} with seed {SEED}")
    capsys.readouterr()
    _announce(result, capsys)
    assert same


if __name__ == "__main__":
    results = [_run(k) for k in sorted(CHECKS)]
    for r in results:
        _announce(r)
    sys.exit(0 if all(r.passed for r in results) else 1)
