"""One test group per acceptance criterion; the terminal summary prints a line for each.

Run just these with ``pytest tests/test_acceptance.py -v``.
"""

import os
import time
import warnings
from fractions import Fraction

import numpy as np
import pytest

from nflcast import cca, glm, harness, postgame, synthgen
from nflcast.corpus import Corpus, GameRecord, load_games
from nflcast.features import expand_specs, parse_spec, rate_p, rate_s
from nflcast.harness import AccessLog, Backtester, label, profitability


class Clock:
    def __init__(self, budget):
        self.budget = budget

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.budget, f"took {self.elapsed:.1f}s, budget {self.budget}s"


def quiet_league(**kw):
    cfg = dict(volume_base=0, volume_step=0, volume_noise_sd=0, postgame_per_game=0)
    cfg.update(kw)
    d = synthgen.generate(synthgen.SynthConfig(**cfg))
    return d, Corpus.build(d.games, d.lexicon, d.tweets)


# -- 1 ---------------------------------------------------------------------------

C1 = "rate tables reproduced; 1000 randomized monotonicity checks per function; < 1s"

# (old, current range, category) per row; both ends of every range are probed
STATIC_ROWS = [(2000, 3001, 10**7, 2), (2000, 2501, 3000, 1), (2000, 1500, 2500, 0),
               (2000, 1000, 1499, -1), (2000, 0, 999, -2)]
PROPORTIONAL_ROWS = [(2000, 2801, 10**7, 2), (2000, 2401, 2800, 1), (2000, 1600, 2400, 0),
                     (2000, 1200, 1599, -1), (2000, 0, 1199, -2)]


@pytest.mark.criterion(1, C1)
def test_rate_tables_and_monotonicity():
    with Clock(1.0):
        for old, lo, hi, cat in STATIC_ROWS:
            assert rate_s(old, lo, 500) == cat and rate_s(old, hi, 500) == cat
        for old, lo, hi, cat in PROPORTIONAL_ROWS:
            assert rate_p(old, lo, 0.2) == cat and rate_p(old, hi, 0.2) == cat
        rng = np.random.default_rng(0)
        for fn, param in ((rate_s, lambda: int(rng.integers(1, 2000))),
                          (rate_p, lambda: float(rng.uniform(0.01, 1.0)))):
            for _ in range(1000):
                old = int(rng.integers(0, 5000))
                a, b = sorted(int(x) for x in rng.integers(0, 10000, size=2))
                p = param()
                assert fn(old, a, p) <= fn(old, b, p)


# -- 2 ---------------------------------------------------------------------------

C2 = "gradient within 1e-6 of finite differences on 100 instances; L1 sparsity and " \
     "objective monotone; < 30s"


@pytest.mark.criterion(2, C2)
def test_logistic_regression_checks():
    with Clock(30.0):
        rng = np.random.default_rng(2)
        h = 1e-6
        for _ in range(100):
            n, d = int(rng.integers(20, 200)), int(rng.integers(1, 8))
            X = rng.normal(size=(n, d)) * rng.uniform(0.2, 3, size=d)
            y = (rng.random(n) < 0.5).astype(float)
            w, b = rng.normal(size=d) * 0.5, float(rng.normal())
            lam = float(rng.choice(glm.LAMBDA_GRID)) / 100
            gw, gb = glm.gradient(X, y, w, b, lam)
            g = np.append(gw, gb)
            num = []
            for j in range(d + 1):
                e = np.zeros(d + 1)
                e[j] = h
                f = lambda v: glm.objective(X, y, w + v[:d], b + v[d], "l2", lam)  # noqa: E731
                num.append((f(e) - f(-e)) / (2 * h))
            assert np.linalg.norm(np.array(num) - g) <= 1e-6 * max(1.0, np.linalg.norm(g))

        X = rng.normal(size=(500, 15)) * rng.uniform(0.5, 4, size=15)
        y = (rng.random(500) < 1 / (1 + np.exp(-(X[:, :5] @ np.ones(5)) * 0.3))).astype(float)
        zeros = [int(np.sum(glm.fit_arrays(X, y, "l1", lam).w == 0)) for lam in glm.LAMBDA_GRID]
        assert zeros == sorted(zeros) and zeros[-1] == 15
        for penalty in glm.PENALTIES:
            for lam in glm.LAMBDA_GRID:
                trace = []
                glm.fit_arrays(X, y, penalty, lam, trace=trace)
                assert all(q <= p + 1e-12 * max(1, abs(p)) for p, q in zip(trace, trace[1:]))


# -- 3 ---------------------------------------------------------------------------

C3 = "CCA: linear relation rho >= 0.999; variates uncorrelated within 1e-6; " \
     "affine invariance within 1e-8; < 10s"


@pytest.mark.criterion(3, C3)
def test_cca_checks():
    with Clock(10.0):
        rng = np.random.default_rng(3)
        X1 = rng.normal(size=(300, 5))
        assert cca.fit(X1, X1 @ rng.normal(size=(5, 8)), 1).correlations[0] >= 0.999

        z = rng.normal(size=(800, 3))
        V1 = z @ rng.normal(size=(3, 7)) + rng.normal(size=(800, 7))
        V2 = z @ rng.normal(size=(3, 10)) + rng.normal(size=(800, 10))
        model = cca.fit(V1, V2, 5)
        a, b = model.variates(V1, V2)
        for v in (a, b):
            assert np.abs(np.corrcoef(v.T) - np.eye(5)).max() <= 1e-6

        base = cca.fit(V1, V2, 5, ridge=0.0).correlations
        A1 = rng.normal(size=(7, 7)) + 4 * np.eye(7)
        A2 = rng.normal(size=(10, 10)) + 4 * np.eye(10)
        moved = cca.fit(V1 @ A1 + 5.0, V2 @ A2 - 2.0, 5, ridge=0.0).correlations
        assert np.abs(base - moved).max() <= 1e-8


# -- 4 ---------------------------------------------------------------------------

C4 = "protocol audit: no fold reads week >= k outcomes or post-cutoff tweets; " \
     "weeks 1-3 and 17 never tested; < 2 min"

AUDIT_SPECS = ("F1+F2+F3+F4+F5+F6+F7+F8+F9+F10", "uni", "rateS(prev,20)", "rateP(prevavg,0.2)",
               "cca(2)", "F5+uni+rateS(prev,20)")


@pytest.mark.criterion(4, C4)
def test_protocol_audit(small_league):
    data, corpus = small_league
    with Clock(120.0):
        log = AccessLog()
        bt = Backtester(corpus, access_log=log)
        assert bt.test_season == 2012 and len(corpus.seasons) == 3
        tested = set()
        for spec in AUDIT_SPECS:
            row = bt.run_backtest(parse_spec(spec), "wts")
            tested |= {corpus.game(p.game_id).week for f in row.folds for p in f.predictions}
        assert tested == set(range(4, 17))

        games = corpus.games
        kick = {k: min(g.kickoff for g in games.values() if g.season == 2012 and g.week == k)
                for k in range(1, 18)}
        n_checked = 0
        for k, role, kind, gid, detail in log.entries:
            g = games[gid]
            before_k = g.season < 2012 or g.week < k
            if role == "eval":
                assert kind == "label" and g.season == 2012 and g.week == k
                continue
            if role in ("train", "dev", "cca_fit"):
                assert before_k, (k, role, gid)
            if role == "test_features":
                assert g.season == 2012 and g.week == k
                assert kind != "label"
            if kind == "feature_outcome":
                dep = games[detail]
                assert dep.season < 2012 or dep.week < k, (k, role, gid, detail)
                assert dep.kickoff < g.kickoff
            if kind == "feature_tweet":
                limit = g.kickoff - 3600 if role == "test_features" else kick[k] - 3600
                assert detail <= limit, (k, role, gid, detail)
            n_checked += 1
        assert n_checked > 10_000
        roles = {e[1] for e in log.entries}
        assert roles == {"train", "dev", "test_features", "eval", "cca_fit"}

        for k in (1, 2, 17):
            with pytest.raises(ValueError):
                bt.fold(k)
        fs = bt.fold(16)
        assert all(fs.role(g) != "test" for g in games.values() if g.week in (1, 2, 3, 17))


@pytest.mark.criterion(4, C4)
def test_future_corruption_changes_nothing(small_league):
    data, _ = small_league
    k = 10
    rng = np.random.default_rng(4)
    cutoff = min(g.kickoff for g in data.games if g.season == 2012 and g.week == k) - 3600
    games = []
    for g in data.games:
        if g.season == 2012 and g.week >= k:
            g = GameRecord(g.game_id, g.season, g.week, g.home_team, g.away_team, g.kickoff,
                           int(rng.integers(0, 50)), int(rng.integers(0, 50)),
                           float(rng.integers(-14, 14)) + 0.5, 40.5)
        games.append(g)
    tweets = [t for t in data.tweets if t.timestamp <= cutoff]
    clean = Corpus.build(data.games, data.lexicon, data.tweets)
    dirty = Corpus.build(games, data.lexicon, tweets)
    for spec in AUDIT_SPECS:
        a = Backtester(clean).run_fold(k, parse_spec(spec), "wts")
        b = Backtester(dirty).run_fold(k, parse_spec(spec), "wts")
        assert (a.weights, a.intercept, a.penalty, a.lam) == \
            (b.weights, b.intercept, b.penalty, b.lam), spec


# -- 5 ---------------------------------------------------------------------------

C5 = "planted signal: s=1 rateS(prev,500) WTS >= 90%; s=0, efficient market: every " \
     "feature set in [47%, 53%] over >= 2000 games; < 5 min"

_budget5 = {"spent": 0.0}


@pytest.mark.slow
@pytest.mark.criterion(5, C5)
def test_planted_volume_signal_recovered():
    with Clock(300.0) as clk:
        d = synthgen.generate(synthgen.SynthConfig(seed=1, n_teams=12, seasons=(2011, 2012),
                                                   tweet_signal=1.0, postgame_per_game=0))
        corpus = Corpus.build(d.games, d.lexicon, d.tweets)
        row = Backtester(corpus).run_backtest(parse_spec("rateS(prev,500)"), "wts")
    _budget5["spent"] += clk.elapsed
    print(f"\nrateS(prev,500) wts accuracy {row.accuracy:.4f} over {row.n_games} games")
    assert row.accuracy >= 0.90


@pytest.mark.slow
@pytest.mark.criterion(5, C5)
def test_null_market_every_set_near_half():
    with Clock(300.0 - _budget5["spent"]):
        _, corpus = quiet_league(seed=0, n_teams=320, seasons=(2011, 2012), tweet_signal=0.0,
                                 market_efficiency=1.0, volume_base=12, volume_step=5,
                                 volume_noise_sd=3)
        bt = Backtester(corpus)
        specs = expand_specs("all")
        assert len(specs) == 75
        rows = harness.run_many(bt, specs, "wts")
    accs = {r.feature_set: r.accuracy for r in rows}
    print(f"\nnull market: {min(r.n_games for r in rows)} games per set, accuracy "
          f"{min(accs.values()):.4f}..{max(accs.values()):.4f}")
    assert min(r.n_games for r in rows) >= 2000
    outside = {k: v for k, v in accs.items() if not 0.47 <= v <= 0.53}
    assert not outside


# -- 6 ---------------------------------------------------------------------------

C6 = "push semantics: exact spread margin is a push, excluded; counts reconcile to schedule"


@pytest.mark.criterion(6, C6)
def test_push_exact_margin():
    g = GameRecord("p", 2012, 5, "H", "A", 0, 24, 20, -4.0, 44.0)
    assert label(g, "wts").push and label(g, "wts").label is None
    assert label(g, "ou").push
    assert label(g, "winner").label == 1


@pytest.mark.criterion(6, C6)
def test_push_counts_reconcile():
    d, corpus = quiet_league(seed=5, n_teams=16, seasons=(2011, 2012), points_sd=3.0,
                             market_efficiency=0.0, market_noise_sd=2.0)
    bt = Backtester(corpus)
    scheduled = [g for g in corpus.games.values() if g.season == 2012 and 4 <= g.week <= 16]
    for task in harness.TASKS:
        row = bt.run_backtest(parse_spec("F1"), task)
        pushes = sum(f.n_push for f in row.folds)
        assert pushes == sum(label(g, task).push for g in scheduled)
        assert row.n_games + pushes == len(scheduled)
    assert sum(label(g, "wts").push for g in scheduled) > 0


# -- 7 ---------------------------------------------------------------------------

C7 = "postgame: planted lexicons >= 95% and recovered in the right panes; " \
     "shuffled labels 50 +/- 3% over >= 5000 tweets"


@pytest.fixture(scope="module")
def postgame_league():
    cfg = synthgen.SynthConfig(seed=7, n_teams=16, seasons=(2010, 2011, 2012), volume_base=0,
                               volume_step=0, volume_noise_sd=0, postgame_per_game=25,
                               postgame_signal=1.0)
    d = synthgen.generate(cfg)
    return cfg, postgame.collect(Corpus.build(d.games, d.lexicon, d.tweets))


@pytest.mark.slow
@pytest.mark.criterion(7, C7)
def test_postgame_planted_lexicon(postgame_league):
    cfg, instances = postgame_league
    res = postgame.evaluate_weeks(range(4, 17), instances=instances)
    assert res.n_test >= 5000
    assert res.mean_accuracy >= 0.95
    n = len(cfg.win_words) + len(cfg.loss_words)
    lex = postgame.extract_lexicon(res.last_model, n)
    assert {(s, w) for s, w, _ in lex.home_won} == \
        {("home", w) for w in cfg.win_words} | {("away", w) for w in cfg.loss_words}
    assert {(s, w) for s, w, _ in lex.away_won} == \
        {("away", w) for w in cfg.win_words} | {("home", w) for w in cfg.loss_words}


@pytest.mark.slow
@pytest.mark.criterion(7, C7)
def test_postgame_shuffled_labels(postgame_league):
    _, instances = postgame_league
    res = postgame.evaluate_weeks(range(4, 17), instances=instances, shuffle_seed=0)
    print(f"\nshuffled postgame accuracy {res.mean_accuracy:.4f} over {res.n_test} tweets")
    assert res.n_test >= 5000
    assert abs(res.mean_accuracy - 0.5) <= 0.03


# -- 8 ---------------------------------------------------------------------------

C8 = "profitability: breakeven exactly 11/21; any accuracy above 53% earns units"


@pytest.mark.criterion(8, C8)
def test_profitability_arithmetic():
    assert harness.Commission().breakeven == Fraction(11, 21)
    assert profitability(Fraction(11, 21), 1000).units == 0
    assert not profitability(Fraction(11, 21), 1000).profitable
    for a in np.linspace(0.5301, 1.0, 200):
        assert profitability(float(a), 100).profitable
    assert profitability(Fraction(53, 100), 100).units > 0
    assert not profitability(0.52, 100).profitable


# -- 9 ---------------------------------------------------------------------------

C9 = "soft real-data check: F1 and F5 winner accuracy near 60.6 and 65.9 " \
     "(set NFLCAST_GAMES to a 2010-2012 games file)"

REAL_TARGETS = {"F1": 0.606, "F5": 0.659}


@pytest.mark.criterion(9, C9)
@pytest.mark.skipif(not os.environ.get("NFLCAST_GAMES"), reason="NFLCAST_GAMES not set")
def test_real_data_soft_check():
    corpus = Corpus(load_games(os.environ["NFLCAST_GAMES"], strict=False))
    bt = Backtester(corpus, test_season=2012)
    for name, target in REAL_TARGETS.items():
        row = bt.run_backtest(parse_spec(name), "winner")
        gap = row.accuracy - target
        print(f"\n{name} winner accuracy {row.accuracy:.4f} (target {target:.3f}, "
              f"gap {gap:+.4f}) over {row.n_games} games")
        if abs(gap) > 0.02:
            # data-vintage differences in lines and box stats are expected; report, don't fail
            warnings.warn(f"{name} winner accuracy {row.accuracy:.3f} is more than 2 points "
                          f"from {target:.3f}", UserWarning)
        assert row.n_games > 0
