"""Per-game feature vectors: game-statistic sets F1-F10, tweet unigrams, volume rates.

Feature vectors are plain ``dict[str, float]`` maps. Identifiers are dotted:
``F5.home.avg_points_scored``, ``uni.away.win``, ``rateS.home``.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Iterable

from .corpus import BOX_STATS, Corpus, CorpusError, GameRecord

FeatureVector = dict  # str -> float

STAT_SETS = tuple(f"F{i}" for i in range(1, 11))
CCA_COMPONENTS = (1, 2, 4, 8)
SIDES = ("home", "away")


class LeakageError(ValueError):
    """Feature computation was handed information from the future."""


# -- rate functions -----------------------------------------------------------


def _category(diff: Fraction, width: Fraction) -> int:
    # boundary values fall in the lower-magnitude bucket: |d| = w -> 0, |d| = 2w -> 1
    if diff == 0:
        return 0
    mag = abs(diff) / width
    c = max(0, math.ceil(mag) - 1)
    return int(math.copysign(min(2, c), diff))


def _exact(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ValueError(f"non-finite value {x}")
        return Fraction(repr(x))
    return Fraction(x)


def rate_s(v_old, v_curr, delta) -> int:
    """Bucketed volume change with static bucket width ``delta``.

    Returns a category in {-2, ..., 2}: 0 for a change of at most ``delta``,
    +/-1 up to ``2*delta``, +/-2 beyond.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    return _category(_exact(v_curr) - _exact(v_old), _exact(delta))


def rate_p(v_old, v_curr, theta) -> int:
    """Bucketed volume change with bucket width ``theta * v_old``."""
    if not 0 < theta <= 1:
        raise ValueError(f"theta must be in (0, 1], got {theta}")
    if v_old == 0:
        return 2 if v_curr > 0 else 0
    if v_old < 0:
        raise ValueError("v_old must be nonnegative")
    return _category(_exact(v_curr) - _exact(v_old), _exact(theta) * _exact(v_old))


# -- feature-set specs --------------------------------------------------------


@dataclass(frozen=True, order=True)
class Atom:
    """One building block of a feature set.

    kind is one of ``F`` (param: index), ``UNI``, ``CCA`` (k), ``RATE_S``
    (v_old, delta) or ``RATE_P`` (v_old, theta).
    """

    kind: str
    params: tuple = ()

    def __post_init__(self):
        k, p = self.kind, self.params
        if k == "F":
            if len(p) != 1 or p[0] not in range(1, 11):
                raise ValueError(f"no statistical feature set F{p}")
        elif k == "UNI":
            if p:
                raise ValueError("UNI takes no parameters")
        elif k == "CCA":
            if len(p) != 1 or p[0] not in CCA_COMPONENTS:
                raise ValueError(f"CCA components must be one of {CCA_COMPONENTS}")
        elif k in ("RATE_S", "RATE_P"):
            if len(p) != 2 or p[0] not in ("prev", "prevavg"):
                raise ValueError(f"{k} needs (prev|prevavg, value)")
            if k == "RATE_S" and (p[1] != int(p[1]) or p[1] < 1):
                raise ValueError("rate_S delta must be a positive integer")
            if k == "RATE_P" and not 0 < p[1] <= 1:
                raise ValueError("rate_P theta must be in (0, 1]")
        else:
            raise ValueError(f"unknown feature atom {k}")

    @property
    def name(self) -> str:
        k, p = self.kind, self.params
        if k == "F":
            return f"F{p[0]}"
        if k == "UNI":
            return "uni"
        if k == "CCA":
            return f"cca({p[0]})"
        if k == "RATE_S":
            return f"rateS({p[0]},{int(p[1])})"
        return f"rateP({p[0]},{p[1]:g})"


@dataclass(frozen=True)
class FeatureSetSpec:
    atoms: tuple[Atom, ...]

    def __post_init__(self):
        if not self.atoms:
            raise ValueError("a feature set needs at least one atom")
        object.__setattr__(self, "atoms", tuple(sorted(set(self.atoms), key=_atom_key)))

    @property
    def name(self) -> str:
        return "+".join(a.name for a in self.atoms)

    def __str__(self):
        return self.name

    @property
    def uses_tweets(self) -> bool:
        return any(a.kind in ("UNI", "CCA", "RATE_S", "RATE_P") for a in self.atoms)

    @classmethod
    def parse(cls, text: str) -> "FeatureSetSpec":
        return parse_spec(text)


def _atom_key(a: Atom):
    order = {"F": 0, "UNI": 1, "CCA": 2, "RATE_S": 3, "RATE_P": 4}
    return (order[a.kind],) + tuple(str(x) if isinstance(x, str) else float(x) for x in a.params)


_ATOM_RE = re.compile(r"^(?P<head>[A-Za-z_]+[0-9]*)(?:\((?P<args>[^()]*)\))?$")


def parse_atom(tok: str) -> list[Atom]:
    m = _ATOM_RE.match(tok.strip())
    if not m:
        raise ValueError(f"cannot parse feature token {tok!r}")
    head, args = m.group("head"), m.group("args")
    low = head.lower()
    argv = [a.strip() for a in args.split(",")] if args else []
    if re.fullmatch(r"f\d+", low) and args is None:
        return [Atom("F", (int(low[1:]),))]
    if low in ("allf", "uf", "statall") and args is None:
        return [Atom("F", (i,)) for i in range(1, 11)]
    if low in ("uni", "unigrams") and args is None:
        return [Atom("UNI")]
    if low == "cca":
        if len(argv) != 1:
            raise ValueError("cca(k) takes one argument")
        return [Atom("CCA", (int(argv[0]),))]
    if low in ("rates", "rate_s"):
        if len(argv) != 2:
            raise ValueError("rateS(v_old,delta) takes two arguments")
        return [Atom("RATE_S", (argv[0], int(argv[1])))]
    if low in ("ratep", "rate_p"):
        if len(argv) != 2:
            raise ValueError("rateP(v_old,theta) takes two arguments")
        return [Atom("RATE_P", (argv[0], float(argv[1])))]
    raise ValueError(f"unknown feature token {tok!r}")


def parse_spec(text: str) -> FeatureSetSpec:
    """Parse ``F3+F10+rateP(prev,0.1)``-style union expressions."""
    atoms = []
    for tok in text.split("+"):
        if not tok.strip():
            raise ValueError(f"empty term in feature spec {text!r}")
        atoms.extend(parse_atom(tok))
    return FeatureSetSpec(tuple(atoms))


def statistical_sets() -> list[FeatureSetSpec]:
    """The 10 singleton sets and their 45 pairwise unions."""
    singles = [FeatureSetSpec((Atom("F", (i,)),)) for i in range(1, 11)]
    pairs = [FeatureSetSpec((Atom("F", (i,)), Atom("F", (j,))))
             for i, j in combinations(range(1, 11), 2)]
    return singles + pairs


def named_sets() -> dict[str, FeatureSetSpec]:
    """Extra experiment sets: Twitter features, CCA fusions and the oracle unions."""
    allf = "+".join(STAT_SETS)
    out = {
        "allF": parse_spec(allf),
        "uni": parse_spec("uni"),
        "rateS(prev,500)": parse_spec("rateS(prev,500)"),
    }
    for k in CCA_COMPONENTS:
        out[f"cca({k})"] = parse_spec(f"cca({k})")
    for v_old in ("prev", "prevavg"):
        for theta in (0.1, 0.2, 0.3, 0.4, 0.5):
            s = parse_spec(f"rateP({v_old},{theta})")
            out[s.name] = s
    for text in ("F5+F9+rateP(prev,0.2)", "F3+F10+rateP(prev,0.1)", "F3+F4+rateS(prev,200)"):
        out[text] = parse_spec(text)
    return out


def enumerate_feature_sets(extras: bool = False) -> list[FeatureSetSpec]:
    sets = statistical_sets()
    if extras:
        seen = {s.name for s in sets}
        for s in named_sets().values():
            if s.name not in seen:
                sets.append(s)
                seen.add(s.name)
    return sets


def expand_specs(text: str) -> list[FeatureSetSpec]:
    """Resolve a CLI ``--features`` value: ``all55``, ``standard``, or comma-separated specs."""
    out = []
    for part in _top_level_split(text):
        part = part.strip()
        if part == "all55":
            out.extend(statistical_sets())
        elif part in ("standard", "all"):
            out.extend(enumerate_feature_sets(extras=True) if part == "all" else standard_sets())
        elif part:
            out.append(parse_spec(part))
    seen, uniq = set(), []
    for s in out:
        if s.name not in seen:
            seen.add(s.name)
            uniq.append(s)
    if not uniq:
        raise ValueError("no feature sets given")
    return uniq


def _top_level_split(text: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
            continue
        depth += (ch == "(") - (ch == ")")
        if depth < 0:
            raise ValueError(f"unbalanced parentheses in {text!r}")
        cur.append(ch)
    if depth:
        raise ValueError(f"unbalanced parentheses in {text!r}")
    parts.append("".join(cur))
    return parts


def standard_sets() -> list[FeatureSetSpec]:
    """Default ``--features`` list: headline statistical, tweet and combined sets."""
    texts = ["F1", "F2", "F3", "F4", "F5", "F10", "+".join(STAT_SETS), "uni",
             "cca(1)", "cca(2)", "cca(4)", "cca(8)", "rateS(prev,500)",
             "F5+F9+rateP(prev,0.2)", "F3+F10+rateP(prev,0.1)", "F3+F4+rateS(prev,200)"]
    return [parse_spec(t) for t in texts]


# -- game statistics ----------------------------------------------------------


def _mean(xs) -> float:
    xs = list(xs)
    return sum(xs) / len(xs) if xs else 0.0


def cover_margin(game: GameRecord, team: str) -> float:
    """Points by which ``team`` beat (+) or missed (-) the spread."""
    m = game.home_score + game.spread - game.away_score
    return m if team == game.home_team else -m


def _scored(game, team):
    return game.home_score if team == game.home_team else game.away_score


def _allowed(game, team):
    return game.away_score if team == game.home_team else game.home_score


def game_stat_features(game: GameRecord, history: Iterable[GameRecord]) -> FeatureVector:
    """Statistical feature sets F1-F10 for one game.

    ``history`` must hold only completed games of the same season played in
    earlier weeks. Season averages over an empty history are 0.
    """
    history = list(history)
    for h in history:
        if h.game_id == game.game_id:
            raise LeakageError(f"history contains the game {game.game_id} itself")
        if h.season != game.season or h.week >= game.week:
            raise LeakageError(f"history game {h.game_id} (season {h.season} week {h.week}) "
                               f"is not before {game.game_id}")
        if not h.has_result:
            raise CorpusError(f"history game {h.game_id} has no final score")
    fv = {"F1.spread": float(game.spread), "F2.ou_line": float(game.ou_line)}
    for side, team in zip(SIDES, game.teams):
        played = [h for h in history if team in h.teams]
        fv[f"F3.{side}.avg_cover_margin"] = _mean(cover_margin(h, team) for h in played)
        fv[f"F4.{side}.avg_total_over_line"] = _mean(
            h.home_score + h.away_score - h.ou_line for h in played)
        fv[f"F5.{side}.avg_points_scored"] = _mean(_scored(h, team) for h in played)
        fv[f"F6.{side}.avg_points_allowed"] = _mean(_allowed(h, team) for h in played)
        fv[f"F7.{side}.avg_total_points"] = _mean(h.home_score + h.away_score for h in played)
        fv[f"F8.{side}.avg_spread_plus_scored"] = _mean(
            (h.spread if team == h.home_team else -h.spread) + _scored(h, team) for h in played)
        for stat, vals in zip(BOX_STATS, zip(*(h.box(team) for h in played)) if played else
                              ((), (), ())):
            fv[f"F10.{side}.avg_{stat}"] = _mean(vals)
    home, away = game.teams
    fv["F9.home.home_wts_pct"] = _wts_pct(home, [h for h in history if h.home_team == home])
    fv["F9.away.away_wts_pct"] = _wts_pct(away, [h for h in history if h.away_team == away])
    return fv


def _wts_pct(team, games) -> float:
    margins = [cover_margin(g, team) for g in games]
    decided = [m for m in margins if m != 0]
    if not decided:
        return 0.0
    return sum(m > 0 for m in decided) / len(decided)


def stat_set_of(feature_id: str) -> str:
    return feature_id.split(".", 1)[0]


# -- tweet features -----------------------------------------------------------


def unigram_features(home_tweets, away_tweets, support: float = 0.001) -> FeatureVector:
    """log(1 + count) per (side, unigram) over a game's weekly tweets.

    A pair is kept when its token count reaches ``support`` times the number of
    weekly tweets for the game (both sides together).
    """
    n = len(home_tweets) + len(away_tweets)
    if n == 0:
        return {}
    need = support * n
    fv = {}
    for side, tweets in (("home", home_tweets), ("away", away_tweets)):
        counts = Counter(tok for tw in tweets for tok in _tokens(tw))
        for tok, c in counts.items():
            if c >= need:
                fv[f"uni.{side}.{tok}"] = math.log1p(c)
    return fv


def _tokens(tw):
    return tw.tokens if hasattr(tw, "tokens") else tw


def rate_value(v_old, v_curr, atom: Atom) -> int:
    if atom.kind == "RATE_S":
        return rate_s(v_old, v_curr, int(atom.params[1]))
    return rate_p(v_old, v_curr, atom.params[1])


def old_volume(previous: list[int], kind: str):
    """v_old from the team's earlier weekly volumes this season (oldest first)."""
    if not previous:
        return None
    if kind == "prev":
        return previous[-1]
    return Fraction(sum(previous), len(previous))


# -- cached store --------------------------------------------------------------


@dataclass(frozen=True)
class Deps:
    """What a game's features read: outcome game ids and the latest tweet time."""

    outcome_games: frozenset
    last_tweet: int | None


class FeatureStore:
    """Memoised per-game features over a frozen corpus.

    Features of a game depend only on that game's line and on strictly earlier
    information, so they are computed once and reused by every fold.
    """

    def __init__(self, corpus: Corpus, unigram_support: float = 0.001):
        self.corpus = corpus
        self.unigram_support = unigram_support
        self._stats: dict[str, FeatureVector] = {}
        self._uni: dict[str, FeatureVector] = {}
        self._vol: dict[tuple[str, str], tuple[int, int | None]] = {}
        self._rates: dict[tuple[str, Atom], FeatureVector] = {}
        self._deps: dict[str, tuple[set, list]] = {}
        self._active: list[tuple[set, list]] = []
        corpus.hooks.append(self._on_read)

    def _on_read(self, kind, payload):
        for games, times in self._active:
            if kind == "outcome":
                games.update(payload)
            elif kind == "tweets":
                times.append(payload[1])

    def _collect(self, game_id, fn):
        frame = (set(), [])
        self._active.append(frame)
        try:
            out = fn()
        finally:
            self._active.pop()
        games, times = self._deps.setdefault(game_id, (set(), []))
        games.update(frame[0])
        times.extend(frame[1])
        return out

    def deps(self, game_id: str) -> Deps:
        games, times = self._deps.get(game_id, (set(), []))
        return Deps(frozenset(games), max(times) if times else None)

    def stats(self, game: GameRecord) -> FeatureVector:
        fv = self._stats.get(game.game_id)
        if fv is None:
            fv = self._collect(game.game_id,
                               lambda: game_stat_features(game, self.corpus.season_history(game)))
            self._stats[game.game_id] = fv
        return fv

    def unigrams(self, game: GameRecord) -> FeatureVector:
        fv = self._uni.get(game.game_id)
        if fv is None:
            fv = self._collect(game.game_id, lambda: unigram_features(
                self.corpus.weekly_tweets(game.home_team, game.game_id),
                self.corpus.weekly_tweets(game.away_team, game.game_id),
                self.unigram_support))
            self._uni[game.game_id] = fv
        return fv

    def volume(self, team: str, game_id: str) -> int:
        key = (team, game_id)
        if key not in self._vol:
            tw = self.corpus.weekly_tweets(team, game_id)
            self._vol[key] = (len(tw), max((t.timestamp for t in tw), default=None))
        n, last = self._vol[key]
        if last is not None:
            self._on_read("tweets", (game_id, last))
        return n

    def rate(self, game: GameRecord, atom: Atom) -> FeatureVector:
        key = (game.game_id, atom)
        fv = self._rates.get(key)
        if fv is None:
            tag = "rateS" if atom.kind == "RATE_S" else "rateP"
            fv = self._collect(game.game_id, lambda: {
                f"{tag}.{side}": float(self._rate_one(game, team, atom))
                for side, team in zip(SIDES, game.teams)})
            self._rates[key] = fv
        return fv

    def _rate_one(self, game, team, atom) -> int:
        earlier = self.corpus.prior_games(team, game)
        previous = [self.volume(team, g.game_id) for g in earlier]
        v_old = old_volume(previous, atom.params[0])
        if v_old is None:
            return 0
        return rate_value(v_old, self.volume(team, game.game_id), atom)

    def vector(self, game: GameRecord, spec: FeatureSetSpec) -> FeatureVector:
        """Features of every non-CCA atom in ``spec`` (CCA needs a fitted model)."""
        fv = {}
        wanted = {f"F{a.params[0]}" for a in spec.atoms if a.kind == "F"}
        if wanted:
            fv.update((k, v) for k, v in self.stats(game).items() if stat_set_of(k) in wanted)
        for a in spec.atoms:
            if a.kind == "UNI":
                fv.update(self.unigrams(game))
            elif a.kind in ("RATE_S", "RATE_P"):
                fv.update({f"{k}.{a.name}" if _many_rates(spec) else k: v
                           for k, v in self.rate(game, a).items()})
        return fv


def _many_rates(spec) -> bool:
    return sum(a.kind in ("RATE_S", "RATE_P") for a in spec.atoms) > 1


def write_feature_records(path, records: Iterable[tuple[str, FeatureVector]]):
    """One JSON line per game: {"game_id": ..., "features": {...}}."""
    with open(path, "w", encoding="utf-8") as fh:
        for game_id, fv in records:
            fh.write(json.dumps({"game_id": game_id, "features": dict(sorted(fv.items()))},
                                ensure_ascii=False) + "\n")


def read_feature_records(path) -> list[tuple[str, FeatureVector]]:
    with open(path, encoding="utf-8") as fh:
        return [(r["game_id"], r["features"]) for r in map(json.loads, fh) if r]
