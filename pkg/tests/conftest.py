import numpy as np
import pytest

from nsvar.var_core import ReducedFormParams, stability_check


def random_params(rng, n=2, p=1, has_constant=False, scale=0.3):
    """A random stable reduced form with a well-conditioned covariance."""
    while True:
        B = scale * rng.standard_normal((n, n * p + int(has_constant)))
        L = np.tril(rng.standard_normal((n, n)))
        np.fill_diagonal(L, rng.uniform(0.5, 1.5, n))
        params = ReducedFormParams.from_cholesky(B, L, p, has_constant)
        if stability_check(params):
            return params


def random_orthonormal(rng, n):
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# --------------------------------------------------------------------------
# acceptance summary

ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    number, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    ACCEPTANCE[number] = (title, "PASS" if report.passed else "FAIL", detail, call.duration)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, verdict, detail, seconds = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {verdict}  {title} [{seconds:.1f}s]  {detail}")
