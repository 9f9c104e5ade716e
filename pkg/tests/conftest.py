import pytest

from nflcast import synthgen
from nflcast.corpus import Corpus

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion number")


def pytest_runtest_logreport(report):
    n = getattr(report, "criterion", None)
    if n is None or not (report.when == "call" or report.outcome != "passed"):
        return
    _CRITERIA.setdefault(n, [report.criterion_text, []])[1].append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep.criterion = m.args[0]
        rep.criterion_text = m.args[1]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        text, outcomes = _CRITERIA[n]
        if "failed" in outcomes:
            status = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"criterion {n}: {status}  {text}")


@pytest.fixture(scope="session")
def small_league():
    cfg = synthgen.SynthConfig(seed=11, n_teams=8, seasons=(2010, 2011, 2012), tweet_signal=1.0,
                               volume_base=60, volume_step=40, volume_noise_sd=10,
                               postgame_per_game=12, postgame_signal=1.0)
    data = synthgen.generate(cfg)
    return data, Corpus.build(data.games, data.lexicon, data.tweets)
