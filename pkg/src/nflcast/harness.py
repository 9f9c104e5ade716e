"""Strict-online backtest: labels, rolling folds, regularisation tuning, selection.

For test week ``k`` of the test season a model is trained on weeks 1-16 of all
earlier seasons plus weeks ``1..k-3`` of the test season, tuned on weeks
``k-2, k-1`` and scored on week ``k``. Week 17 is never used. Week 3 folds are
computed only as history for the feature-set selection strategies.
"""

from __future__ import annotations

import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

import numpy as np
from scipy import sparse
from scipy.special import expit

from . import cca as cca_mod
from . import glm
from .corpus import Corpus, CorpusError, GameRecord
from .features import STAT_SETS, Atom, FeatureSetSpec, FeatureStore, stat_set_of

log = logging.getLogger(__name__)

TASKS = ("winner", "wts", "ou")
TEST_WEEKS = range(4, 17)
HISTORY_WEEK = 3
LAST_TRAIN_WEEK = 16


# -- labels -------------------------------------------------------------------


@dataclass(frozen=True)
class TaskLabel:
    task: str
    label: int | None
    push: bool


def label(game: GameRecord, task: str) -> TaskLabel:
    """Binary outcome of ``game`` for a task; exact ties are pushes (no label)."""
    if not game.has_result:
        raise CorpusError(f"{game.game_id} has no final score")
    if task == "winner":
        m = game.home_score - game.away_score
    elif task == "wts":
        m = game.home_score + game.spread - game.away_score
    elif task == "ou":
        m = game.home_score + game.away_score - game.ou_line
    else:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    if m == 0:
        return TaskLabel(task, None, True)
    return TaskLabel(task, int(m > 0), False)


# -- folds ----------------------------------------------------------------------


@dataclass(frozen=True)
class FoldSpec:
    test_season: int
    k: int
    train_seasons: tuple

    def __post_init__(self):
        if not HISTORY_WEEK <= self.k <= LAST_TRAIN_WEEK:
            raise ValueError(f"test week {self.k} outside [{HISTORY_WEEK}, {LAST_TRAIN_WEEK}]")

    def role(self, game: GameRecord) -> str | None:
        if game.week > LAST_TRAIN_WEEK:
            return None
        if game.season in self.train_seasons:
            return "train"
        if game.season != self.test_season:
            return None
        if game.week <= self.k - 3:
            return "train"
        if self.k - 2 <= game.week <= self.k - 1:
            return "dev"
        if game.week == self.k:
            return "test"
        return None


@dataclass
class AccessLog:
    """Record of what each fold read: (week, role, kind, game_id, detail)."""

    entries: list = field(default_factory=list)

    def add(self, k, role, kind, game_id, detail=None):
        self.entries.append((k, role, kind, game_id, detail))


@dataclass(frozen=True)
class Prediction:
    game_id: str
    prob: float
    pred: int
    label: int


@dataclass
class FoldResult:
    feature_set: str
    task: str
    week: int
    n_correct: int
    n_games: int
    n_push: int
    penalty: str
    lam: float
    dev_accuracy: float | None
    predictions: list = field(default_factory=list)
    weights: dict = field(default_factory=dict)
    intercept: float = 0.0

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_games if self.n_games else float("nan")


@dataclass
class BacktestRow:
    feature_set: str
    task: str
    folds: list

    @property
    def n_correct(self):
        return sum(f.n_correct for f in self.folds)

    @property
    def n_games(self):
        return sum(f.n_games for f in self.folds)

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_games if self.n_games else float("nan")

    def weekly(self) -> dict:
        return {f.week: f.accuracy for f in self.folds}


# -- backtester -----------------------------------------------------------------


class Backtester:
    """Runs folds over one frozen corpus; feature blocks are cached across folds."""

    def __init__(self, corpus: Corpus, test_season: int | None = None,
                 lambda_grid: Iterable[float] = glm.LAMBDA_GRID, penalties=glm.PENALTIES,
                 tol: float = 1e-9, max_iter: int = 10000, ridge: float = cca_mod.DEFAULT_RIDGE,
                 access_log: AccessLog | None = None):
        self.corpus = corpus
        seasons = corpus.seasons
        if not seasons:
            raise CorpusError("corpus has no games")
        self.test_season = seasons[-1] if test_season is None else test_season
        if self.test_season not in seasons:
            raise CorpusError(f"no games for test season {self.test_season}")
        self.train_seasons = tuple(s for s in seasons if s < self.test_season)
        self.lambda_grid = tuple(sorted(set(float(x) for x in lambda_grid)))
        self.penalties = tuple(p for p in glm.PENALTIES if p in penalties)
        self.tol = tol
        self.max_iter = max_iter
        self.ridge = ridge
        self.log = access_log
        self.store = FeatureStore(corpus)
        usable = [g for g in corpus.games.values()
                  if g.week <= LAST_TRAIN_WEEK
                  and (g.season in self.train_seasons or g.season == self.test_season)]
        self.games = sorted(usable, key=lambda g: (g.season, g.week, g.game_id))
        self.row = {g.game_id: i for i, g in enumerate(self.games)}
        self._blocks: dict = {}
        self._labels: dict = {}

    # fold layout

    def fold(self, k: int) -> FoldSpec:
        return FoldSpec(self.test_season, k, self.train_seasons)

    def split(self, k: int):
        fs = self.fold(k)
        roles = {"train": [], "dev": [], "test": []}
        for g in self.games:
            r = fs.role(g)
            if r:
                roles[r].append(g)
        return roles

    # labels

    def labels(self, task: str):
        if task not in self._labels:
            y = np.full(len(self.games), -1, dtype=int)
            for i, g in enumerate(self.games):
                tl = label(g, task)
                if not tl.push:
                    y[i] = tl.label
            self._labels[task] = y
        return self._labels[task]

    # feature blocks over all usable games

    def _block(self, atom: Atom):
        key = atom
        if key in self._blocks:
            return self._blocks[key]
        if atom.kind == "F":
            prefix = f"F{atom.params[0]}"
            rows = [{k: v for k, v in self.store.stats(g).items() if stat_set_of(k) == prefix}
                    for g in self.games]
            X, names = glm.vectorize(rows)
            blk = (names, X)
        elif atom.kind == "UNI":
            rows = [self.store.unigrams(g) for g in self.games]
            names = sorted({k for r in rows for k in r})
            idx = {n: j for j, n in enumerate(names)}
            data, ri, ci = [], [], []
            for i, r in enumerate(rows):
                for k, v in r.items():
                    data.append(v)
                    ri.append(i)
                    ci.append(idx[k])
            M = sparse.csr_matrix((data, (ri, ci)), shape=(len(rows), len(names)))
            blk = (names, M)
        elif atom.kind in ("RATE_S", "RATE_P"):
            rows = [self.store.rate(g, atom) for g in self.games]
            names = sorted(rows[0]) if rows else []
            X = np.array([[r[n] for n in names] for r in rows]).reshape(len(rows), len(names))
            blk = (names, X)
        else:
            raise ValueError(f"no precomputed block for {atom.kind}")
        self._blocks[key] = blk
        return blk

    def _unigram_view(self, train_idx):
        names, M = self._block(Atom("UNI"))
        if not names:
            return [], np.zeros((len(self.games), 0))
        used = np.flatnonzero(np.asarray(M[train_idx].getnnz(axis=0)).ravel() > 0)
        # out-of-vocabulary rule: only unigrams seen in training rows become columns
        return [names[j] for j in used], M[:, used].toarray()

    def design(self, spec: FeatureSetSpec, train_idx: np.ndarray, k: int | None = None):
        """(names, X over all usable games) for a feature set, fitted on ``train_idx``."""
        cols, names = [], []
        multi_rate = sum(a.kind in ("RATE_S", "RATE_P") for a in spec.atoms) > 1
        for atom in spec.atoms:
            if atom.kind == "F":
                n, X = self._block(atom)
            elif atom.kind == "UNI":
                n, X = self._unigram_view(train_idx)
            elif atom.kind in ("RATE_S", "RATE_P"):
                n, X = self._block(atom)
                if multi_rate:
                    n = [f"{x}.{atom.name}" for x in n]
            else:
                n, X = self._cca_block(atom.params[0], train_idx, k)
            cols.append(X)
            names.extend(n)
        return names, np.hstack(cols) if cols else np.zeros((len(self.games), 0))

    def _cca_block(self, n_comp, train_idx, k):
        stat_parts = [self._block(Atom("F", (i,))) for i in range(1, len(STAT_SETS) + 1)]
        n1 = [n for names, _ in stat_parts for n in names]
        X1 = np.hstack([X for _, X in stat_parts])
        n2, X2 = self._unigram_view(train_idx)
        if self.log is not None:
            for i in train_idx:
                self.log.add(k, "cca_fit", "row", self.games[i].game_id)
        model = cca_mod.fit(X1[train_idx], X2[train_idx], n_comp, self.ridge, n1, n2)
        return cca_mod.feature_names(n_comp), cca_mod.transform_rows(model, X1, X2)

    # audit

    def _audit(self, k, role, games, labels=True):
        if self.log is None:
            return
        for g in games:
            deps = self.store.deps(g.game_id)
            for gid in sorted(deps.outcome_games):
                self.log.add(k, role, "feature_outcome", g.game_id, gid)
            if deps.last_tweet is not None:
                self.log.add(k, role, "feature_tweet", g.game_id, deps.last_tweet)
            if labels:
                self.log.add(k, role, "label", g.game_id)

    # one fold

    def run_fold(self, k: int, spec: FeatureSetSpec, task: str) -> FoldResult:
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}")
        roles = self.split(k)
        y_all = self.labels(task)
        idx = {r: np.array([self.row[g.game_id] for g in gs], dtype=int) for r, gs in roles.items()}
        pushes = {r: int(np.sum(y_all[ix] < 0)) for r, ix in idx.items()}
        idx = {r: ix[y_all[ix] >= 0] for r, ix in idx.items()}
        tr, dv, te = idx["train"], idx["dev"], idx["test"]
        if len(tr) == 0:
            raise ValueError(f"fold {k}: no training games")
        names, X = self.design(spec, tr, k)
        if self.log is not None:
            for r in ("train", "dev"):
                self._audit(k, r, [self.games[i] for i in idx[r]])
            self._audit(k, "test_features", [self.games[i] for i in te], labels=False)
        ytr, ydv, yte = (y_all[ix].astype(float) for ix in (tr, dv, te))
        if self.log is not None:
            for i in te:
                self.log.add(k, "eval", "label", self.games[i].game_id)
        fits = self._grid(X[tr], ytr)
        if len(dv) == 0:
            warnings.warn(f"fold {k}: empty development set; using lam=0 with L2", RuntimeWarning)
            choice = ("l2", 0.0)
            dev_acc = None
            if choice not in fits:
                choice = min(fits, key=lambda c: (c[1], glm.PENALTIES.index(c[0])))
        else:
            scored = []
            for (pen, lam), res in fits.items():
                acc = _accuracy(X[dv] @ res.w + res.b, ydv)
                scored.append((-acc, lam, glm.PENALTIES.index(pen), pen))
            scored.sort()
            best = scored[0]
            choice = (best[3], best[1])
            dev_acc = -best[0]
        res = fits[choice]
        z = X[te] @ res.w + res.b
        probs = expit(z)
        preds = (probs >= 0.5).astype(int)
        preds_list = [Prediction(self.games[i].game_id, float(p), int(q), int(l))
                      for i, p, q, l in zip(te, probs, preds, yte.astype(int))]
        return FoldResult(spec.name, task, k, int(np.sum(preds == yte)), len(te), pushes["test"],
                          choice[0], choice[1], dev_acc, preds_list,
                          dict(zip(names, map(float, res.w))), float(res.b))

    def _grid(self, X, y):
        """Fits for every (penalty, lambda), warm-started down each penalty's path."""
        fits = {}
        single = y.min() == y.max()
        for pen in self.penalties:
            init = None
            for lam in sorted(self.lambda_grid, reverse=True):
                if lam == 0 and single:
                    continue
                if lam == 0 and pen == "l1" and ("l2", 0.0) in fits:
                    fits[(pen, lam)] = fits[("l2", 0.0)]
                    continue
                res = glm.fit_arrays(X, y, pen, lam, self.tol, self.max_iter, init=init)
                fits[(pen, lam)] = res
                init = (res.w, res.b)
        if not fits:
            raise ValueError("no regularisation setting could be fitted")
        return fits

    def run_backtest(self, spec: FeatureSetSpec, task: str, weeks: Iterable[int] = TEST_WEEKS
                     ) -> BacktestRow:
        folds = [self.run_fold(k, spec, task) for k in weeks]
        return BacktestRow(spec.name, task, folds)


def _accuracy(z, y) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean((expit(z) >= 0.5) == (y == 1)))


# -- many feature sets ----------------------------------------------------------

_WORKER: Backtester | None = None


def _work(args):
    spec, task, weeks = args
    return _WORKER.run_backtest(spec, task, weeks)


def run_many(bt: Backtester, specs, task, weeks=TEST_WEEKS, jobs: int | None = None) -> list:
    """Backtest several feature sets; ``jobs`` > 1 forks worker processes."""
    global _WORKER
    weeks = list(weeks)
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1 or len(specs) <= 1 or bt.log is not None:
        return [bt.run_backtest(s, task, weeks) for s in specs]
    import multiprocessing as mp
    _WORKER = bt
    try:
        ctx = mp.get_context("fork")
        with ctx.Pool(jobs) as pool:
            return pool.map(_work, [(s, task, weeks) for s in specs])
    finally:
        _WORKER = None


# -- feature-set selection ------------------------------------------------------


def window_weeks(k: int, window: str) -> list[int]:
    if window == "last2":
        if not 5 <= k <= 16:
            raise ValueError("last2 selection is defined for weeks 5-16")
        return [k - 2, k - 1]
    if window == "all":
        if not 4 <= k <= 16:
            raise ValueError("all-weeks selection is defined for weeks 4-16")
        return list(range(HISTORY_WEEK, k))
    raise ValueError(f"unknown selection window {window!r}")


def select_feature_set(k: int, window: str, candidates, history: dict, previous=None):
    """Candidate with the best mean weekly accuracy over the window before week k.

    ``history`` maps candidate name -> {week: accuracy}. Ties go to
    ``previous`` when it is among the best, else to the lexicographically first
    name.
    """
    names = [c.name if isinstance(c, FeatureSetSpec) else c for c in candidates]
    if not names:
        raise ValueError("no candidate feature sets")
    weeks = window_weeks(k, window)
    means = {}
    for n in names:
        vals = [history[n][w] for w in weeks if w in history.get(n, {})
                and not math.isnan(history[n][w])]
        means[n] = sum(vals) / len(vals) if vals else float("-inf")
    top = max(means.values())
    tied = sorted(n for n, m in means.items() if abs(m - top) <= 1e-12)
    if previous in tied:
        return previous
    return tied[0]


@dataclass
class SelectionStep:
    week: int
    chosen: str
    n_correct: int
    n_games: int
    changed: bool

    @property
    def accuracy(self):
        return self.n_correct / self.n_games if self.n_games else float("nan")


@dataclass
class SelectionResult:
    task: str
    window: str
    steps: list
    hindsight_best: str
    hindsight_weekly: dict

    @property
    def n_correct(self):
        return sum(s.n_correct for s in self.steps)

    @property
    def n_games(self):
        return sum(s.n_games for s in self.steps)

    @property
    def accuracy(self):
        return self.n_correct / self.n_games if self.n_games else float("nan")

    @property
    def n_distinct(self):
        return len({s.chosen for s in self.steps})


def run_selection(bt: Backtester, candidates, task: str, window: str = "last2",
                  jobs: int | None = None, rows: list | None = None) -> tuple[SelectionResult, list]:
    """Online feature-set selection over the test season.

    Returns the trajectory and the per-candidate backtest rows (weeks 3-16)
    that fed it; pass ``rows`` to reuse previously computed ones.
    """
    weeks = list(range(HISTORY_WEEK, LAST_TRAIN_WEEK + 1))
    if rows is None:
        rows = run_many(bt, list(candidates), task, weeks, jobs)
    history = {r.feature_set: r.weekly() for r in rows}
    folds = {(r.feature_set, f.week): f for r in rows for f in r.folds}
    first = 5 if window == "last2" else 4
    steps, prev = [], None
    for k in range(first, LAST_TRAIN_WEEK + 1):
        choice = select_feature_set(k, window, list(history), history, prev)
        f = folds[(choice, k)]
        steps.append(SelectionStep(k, choice, f.n_correct, f.n_games,
                                   prev is not None and choice != prev))
        prev = choice
    test_weeks = range(first, LAST_TRAIN_WEEK + 1)

    def total(r):
        c = sum(f.n_correct for f in r.folds if f.week in test_weeks)
        n = sum(f.n_games for f in r.folds if f.week in test_weeks)
        return c / n if n else float("-inf")

    best = min(rows, key=lambda r: (-total(r), r.feature_set))
    weekly = {f.week: f.accuracy for f in best.folds if f.week in test_weeks}
    return SelectionResult(task, window, steps, best.feature_set, weekly), rows


# -- money ----------------------------------------------------------------------


@dataclass(frozen=True)
class Commission:
    """Stake ``risk`` units to win ``win`` units (default: 11 to win 10)."""

    risk: Fraction = Fraction(11, 10)
    win: Fraction = Fraction(1)

    @property
    def breakeven(self) -> Fraction:
        return Fraction(self.risk) / (Fraction(self.risk) + Fraction(self.win))


@dataclass(frozen=True)
class Profit:
    units: float
    profitable: bool
    breakeven: Fraction


def profitability(accuracy, n_games: int, commission: Commission = Commission()) -> Profit:
    """Expected units won by betting every one of ``n_games`` at ``accuracy``."""
    if not 0 <= accuracy <= 1:
        raise ValueError("accuracy must lie in [0, 1]")
    be = commission.breakeven
    if isinstance(accuracy, Fraction):
        units = n_games * (accuracy * commission.win - (1 - accuracy) * commission.risk)
        return Profit(float(units), accuracy > be, be)
    win, risk = float(commission.win), float(commission.risk)
    units = n_games * (accuracy * win - (1 - accuracy) * risk)
    if math.isclose(accuracy, float(be), rel_tol=0, abs_tol=1e-15):
        units = 0.0
    return Profit(units, accuracy > float(be) and units > 0, be)
