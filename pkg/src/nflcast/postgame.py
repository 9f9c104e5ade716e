"""Win/loss classification of postgame tweets and lexicon induction.

Each postgame tweet becomes one instance: binary (side, unigram) indicators
labelled 1 when the tweet's team won the game it follows. A unigram only
becomes a feature for tweets of a week in which at least ``min_support``
postgame tweets contain it.
"""

from __future__ import annotations

import csv
import logging
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import glm
from .corpus import Corpus, CorpusError
from .features import LeakageError

log = logging.getLogger(__name__)

MIN_SUPPORT = 10
PANES = ("home_won", "away_won")


@dataclass(frozen=True)
class PostgameInstance:
    tweet_id: str
    timestamp: int
    season: int
    week: int
    side: str
    unigrams: frozenset
    label: int

    def features(self, vocab=None) -> dict:
        return {f"{self.side}.{u}": 1.0 for u in sorted(self.unigrams)
                if vocab is None or u in vocab}


def collect(corpus: Corpus, min_support: int = MIN_SUPPORT) -> list[PostgameInstance]:
    """Every postgame tweet with a decided game, unigrams filtered by weekly support."""
    if not corpus.has_texts:
        raise CorpusError("texts unavailable: corpus was built from tweet IDs only")
    raw = []
    for game, at in corpus.postgame_tweets():
        if not game.has_result or game.home_score == game.away_score:
            continue
        won = (game.home_score > game.away_score) == (at.team == game.home_team)
        raw.append((game, at, frozenset(at.tokens), int(won)))
    support: dict = defaultdict(Counter)
    for game, _, toks, _ in raw:
        support[(game.season, game.week)].update(toks)
    out = []
    for game, at, toks, y in raw:
        sup = support[(game.season, game.week)]
        kept = frozenset(t for t in toks if sup[t] >= min_support)
        out.append(PostgameInstance(at.tweet_id, at.timestamp, game.season, game.week,
                                    game.side_of(at.team), kept, y))
    out.sort(key=lambda i: (i.season, i.week, i.timestamp, i.tweet_id))
    return out


def shuffle_labels(instances, seed: int) -> list[PostgameInstance]:
    """Permutation-oracle copy of ``instances`` with labels randomly reassigned."""
    rng = np.random.default_rng(seed)
    labels = rng.permutation([i.label for i in instances])
    return [PostgameInstance(i.tweet_id, i.timestamp, i.season, i.week, i.side, i.unigrams,
                             int(y)) for i, y in zip(instances, labels)]


def build_instances(k: int, instances, test_season: int):
    """(train, test): everything before week k of ``test_season``, and week k itself."""
    train = [i for i in instances
             if i.season < test_season or (i.season == test_season and i.week < k)]
    test = [i for i in instances if i.season == test_season and i.week == k]
    if train and test and max(i.timestamp for i in train) >= min(i.timestamp for i in test):
        raise LeakageError(f"week {k}: a training tweet is not earlier than every test tweet")
    return train, test


class _Design:
    """Dense indicator matrix over every instance; folds select rows and columns."""

    def __init__(self, instances):
        self.instances = instances
        feats = [i.features() for i in instances]
        self.names = sorted({f for fv in feats for f in fv})
        self.X, _ = glm.vectorize(feats, self.names)
        self.y = np.array([i.label for i in instances], dtype=float)

    def fit(self, rows, lam, tol):
        cols = np.flatnonzero(self.X[rows].any(axis=0))
        res = glm.fit_arrays(self.X[np.ix_(rows, cols)], self.y[rows], "l2", lam, tol)
        names = [self.names[j] for j in cols]
        return glm.ModelWeights(dict(zip(names, map(float, res.w))), res.b, "l2", float(lam),
                                res.n_iter, res.converged), cols, res

    def n_correct(self, fitted, rows) -> int:
        _, cols, res = fitted
        z = self.X[np.ix_(rows, cols)] @ res.w + res.b
        return int(np.sum((z >= 0) == (self.y[rows] == 1)))


@dataclass
class WeekResult:
    week: int
    n_train: int
    n_test: int
    n_correct: int
    lam: float
    model: glm.ModelWeights | None = None

    @property
    def accuracy(self):
        return self.n_correct / self.n_test if self.n_test else float("nan")


@dataclass
class PostgameResult:
    weeks: list = field(default_factory=list)

    @property
    def mean_accuracy(self) -> float:
        accs = [w.accuracy for w in self.weeks if w.n_test]
        return sum(accs) / len(accs) if accs else float("nan")

    @property
    def n_test(self) -> int:
        return sum(w.n_test for w in self.weeks)

    @property
    def last_model(self):
        return self.weeks[-1].model if self.weeks else None


def choose_lambda(design: _Design, train, dev, grid=glm.LAMBDA_GRID, tol=1e-9) -> float:
    """L2 strength with the best dev accuracy; ties go to the larger lambda.

    Postgame tweets are often separable, where every small lambda ties and the
    weakest penalty gives the least stable weights.
    """
    single = len(set(design.y[train])) < 2
    grid = sorted(lam for lam in grid if not (single and lam == 0))
    if len(dev) == 0:
        warnings.warn("empty development week; using the largest lambda", RuntimeWarning)
        return float(grid[-1])
    best = None
    for lam in grid:
        c = design.n_correct(design.fit(train, lam, tol), dev)
        if best is None or c >= best[0]:
            best = (c, lam)
    return float(best[1])


def evaluate_weeks(weeks, corpus: Corpus | None = None, instances=None, test_season=None,
                   grid=glm.LAMBDA_GRID, tol=1e-9, shuffle_seed: int | None = None,
                   min_support: int = MIN_SUPPORT) -> PostgameResult:
    """Weekly train/test over the test season; lambda is tuned on week k-1.

    The model for week k is refit on all data before k at the chosen lambda.
    The score is the mean of weekly accuracies.
    """
    if instances is None:
        if corpus is None:
            raise ValueError("need a corpus or prepared instances")
        instances = collect(corpus, min_support)
    if shuffle_seed is not None:
        instances = shuffle_labels(instances, shuffle_seed)
    if test_season is None:
        test_season = max(i.season for i in instances) if instances else None
    design = _Design(instances)
    pos = {id(i): n for n, i in enumerate(instances)}

    def rows(part):
        return np.array([pos[id(i)] for i in part], dtype=int)

    result = PostgameResult()
    for k in weeks:
        train, test = build_instances(k, instances, test_season)
        if not train or not test:
            log.info("week %s skipped: %d train, %d test tweets", k, len(train), len(test))
            continue
        inner, dev = build_instances(k - 1, instances, test_season)
        lam = (choose_lambda(design, rows(inner), rows(dev), grid, tol) if inner
               else float(max(grid)))
        fitted = design.fit(rows(train), lam, tol)
        n_correct = design.n_correct(fitted, rows(test))
        result.weeks.append(WeekResult(k, len(train), len(test), n_correct, lam, fitted[0]))
    return result


# -- lexicon ----------------------------------------------------------------------


@dataclass(frozen=True)
class Lexicon:
    home_won: tuple   # ((side, word, weight), ...) strongest first
    away_won: tuple

    def pane(self, name):
        return getattr(self, name)


def extract_lexicon(model: glm.ModelWeights, n: int = 30) -> Lexicon:
    """Strongest (side, word) features for each outcome.

    A home-side word with positive weight or an away-side word with negative
    weight predicts that the home team won, and vice versa.
    """
    home, away = [], []
    for feat, w in model.coef.items():
        side, word = feat.split(".", 1)
        if w == 0:
            continue
        toward_home = (w > 0) == (side == "home")
        (home if toward_home else away).append((side, word, w))
    key = lambda t: (-abs(t[2]), t[0], t[1])  # noqa: E731
    n = max(n, 0)
    return Lexicon(tuple(sorted(home, key=key)[:n]), tuple(sorted(away, key=key)[:n]))


def write_lexicon(lex: Lexicon, path, delimiter="\t"):
    """Two-pane table: one row per rank, ``side: word`` cells."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["rank", "predicting home team won", "weight",
                    "predicting away team won", "weight"])
        for r in range(max(len(lex.home_won), len(lex.away_won))):
            row = [r + 1]
            for pane in (lex.home_won, lex.away_won):
                if r < len(pane):
                    side, word, wt = pane[r]
                    row += [f"{side}: {word}", f"{wt:.6g}"]
                else:
                    row += ["", ""]
            w.writerow(row)
