"""Games, tweets and hashtag lexicons; team assignment and time-window tagging.

A :class:`Corpus` is built once (single writer) from a schedule, a lexicon and
a stream of tweets, then treated as frozen. Every read that downstream code
makes of game outcomes or tweet contents goes through a small set of accessor
methods so that backtests can audit what information each prediction used.
"""

from __future__ import annotations

import bisect
import csv
import json
import logging
import math
import string
import unicodedata
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

log = logging.getLogger(__name__)

HOUR = 3600
WEEKLY = "weekly"
PREGAME = "pregame"
POSTGAME = "postgame"
WINDOWS = (WEEKLY, PREGAME, POSTGAME)

BOX_STATS = ("interceptions_thrown", "fumbles_lost", "times_sacked")

GAME_FIELDS = (
    "game_id", "season", "week", "home_team", "away_team", "kickoff",
    "home_score", "away_score", "spread", "ou_line",
) + tuple(f"{side}_{stat}" for side in ("home", "away") for stat in BOX_STATS)


class CorpusError(ValueError):
    """Malformed or inconsistent input data."""


class ParseError(CorpusError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


@dataclass(frozen=True)
class GameRecord:
    game_id: str
    season: int
    week: int
    home_team: str
    away_team: str
    kickoff: int
    home_score: int | None
    away_score: int | None
    spread: float
    ou_line: float
    home_interceptions_thrown: int = 0
    home_fumbles_lost: int = 0
    home_times_sacked: int = 0
    away_interceptions_thrown: int = 0
    away_fumbles_lost: int = 0
    away_times_sacked: int = 0

    def __post_init__(self):
        if not 1 <= self.week <= 17:
            raise CorpusError(f"{self.game_id}: week {self.week} outside [1, 17]")
        if self.home_team == self.away_team:
            raise CorpusError(f"{self.game_id}: home and away team are both {self.home_team}")
        for s in (self.home_score, self.away_score):
            if s is not None and s < 0:
                raise CorpusError(f"{self.game_id}: negative score")
        if not (math.isfinite(self.spread) and math.isfinite(self.ou_line) and self.ou_line > 0):
            raise CorpusError(f"{self.game_id}: spread must be finite and ou_line positive")

    @property
    def teams(self) -> tuple[str, str]:
        return self.home_team, self.away_team

    def side_of(self, team: str) -> str:
        if team == self.home_team:
            return "home"
        if team == self.away_team:
            return "away"
        raise KeyError(f"{team} does not play in {self.game_id}")

    def box(self, team: str) -> tuple[int, int, int]:
        side = self.side_of(team)
        return tuple(getattr(self, f"{side}_{stat}") for stat in BOX_STATS)

    @property
    def has_result(self) -> bool:
        return self.home_score is not None and self.away_score is not None


@dataclass(frozen=True)
class TweetRecord:
    tweet_id: str
    timestamp: int
    text: str
    tokens: tuple[str, ...] = ()

    @classmethod
    def from_text(cls, tweet_id, timestamp, text):
        return cls(str(tweet_id), int(timestamp), text, tuple(tokenize(text)))

    @property
    def match_tokens(self) -> tuple[str, ...]:
        return tuple(t.lower() for t in self.tokens)


@dataclass(frozen=True)
class AssignedTweet:
    """A kept tweet with its team and window tags.

    ``next_game`` is the team's upcoming game (the one weekly and pregame tags
    refer to) and ``prev_game`` the game it follows (postgame tag). Either may
    be absent at season boundaries.
    """

    tweet_id: str
    team: str
    timestamp: int
    tokens: tuple[str, ...]
    windows: frozenset[str]
    next_game: str | None
    prev_game: str | None

    @property
    def game_id(self) -> str | None:
        if WEEKLY in self.windows or PREGAME in self.windows:
            return self.next_game
        if POSTGAME in self.windows:
            return self.prev_game
        return self.next_game or self.prev_game


# -- tokenization -----------------------------------------------------------

_STRIP = "".join(c for c in string.punctuation if c not in "#@")


def tokenize(text: str) -> list[str]:
    """Whitespace split, trimming punctuation but keeping '#'/'@' prefixes."""
    out = []
    for raw in text.split():
        tok = raw.rstrip(string.punctuation).lstrip(_STRIP)
        if tok in ("#", "@"):
            continue
        if tok:
            out.append(tok)
    return out


# -- lexicon ----------------------------------------------------------------


class HashtagLexicon:
    """Team -> hashtags map with pairwise-disjoint, lowercase '#' tags."""

    def __init__(self, teams: dict[str, Iterable[str]]):
        self.teams = {}
        owner = {}
        for team, tags in teams.items():
            clean = set()
            for tag in tags:
                tag = tag.strip().lower()
                if not tag.startswith("#") or len(tag) < 2:
                    raise CorpusError(f"hashtag {tag!r} for {team} must start with '#'")
                if tag in owner and owner[tag] != team:
                    raise CorpusError(f"hashtag {tag} assigned to both {owner[tag]} and {team}")
                owner[tag] = team
                clean.add(tag)
            self.teams[team] = frozenset(clean)
        self._owner = owner

    def owner(self, tag: str) -> str | None:
        return self._owner.get(tag)

    def to_dict(self) -> dict[str, list[str]]:
        return {t: sorted(tags) for t, tags in sorted(self.teams.items())}

    @classmethod
    def load(cls, path) -> "HashtagLexicon":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise CorpusError(f"{path}: lexicon must be a JSON object team -> [hashtags]")
        return cls(data)

    def dump(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def assign_team(tweet: TweetRecord, lexicon: HashtagLexicon) -> str | None:
    """The unique team whose hashtags occur in the tweet, else None."""
    found = {lexicon.owner(t) for t in tweet.match_tokens if t.startswith("#")}
    found.discard(None)
    if len(found) == 1:
        return found.pop()
    return None


_CJK_PREFIXES = ("CJK UNIFIED IDEOGRAPH", "CJK COMPATIBILITY IDEOGRAPH", "HIRAGANA", "KATAKANA")


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    # fast path for the Han, Hiragana and Katakana blocks
    if 0x3040 <= cp <= 0x30FF or 0x31F0 <= cp <= 0x31FF or 0xFF66 <= cp <= 0xFF9D:
        return True
    if 0x3400 <= cp <= 0x9FFF or 0xF900 <= cp <= 0xFAFF or 0x20000 <= cp <= 0x323AF:
        return True
    if cp < 0x3000:
        return False
    return unicodedata.name(ch, "").startswith(_CJK_PREFIXES)


def filter_cjk(tweet: TweetRecord) -> bool:
    """True to keep: the text has no Katakana, Hiragana or Han characters."""
    return not any(_is_cjk(ch) for ch in tweet.text)


def tag_windows(t: float, prev_kickoff: float | None, next_kickoff: float | None) -> frozenset[str]:
    """Window tags for a tweet at time ``t`` relative to its team's kickoffs.

    All interval ends are inclusive.
    """
    tags = set()
    if next_kickoff is not None and t <= next_kickoff - HOUR:
        if prev_kickoff is None or t >= prev_kickoff + 12 * HOUR:
            tags.add(WEEKLY)
        if t >= next_kickoff - 24 * HOUR:
            tags.add(PREGAME)
    if prev_kickoff is not None and prev_kickoff + 4 * HOUR <= t <= prev_kickoff + 28 * HOUR:
        tags.add(POSTGAME)
    return frozenset(tags)


# -- file io ----------------------------------------------------------------

_INT_FIELDS = {"season", "week", "kickoff", "home_score", "away_score"} | {
    f"{s}_{b}" for s in ("home", "away") for b in BOX_STATS
}
_FLOAT_FIELDS = {"spread", "ou_line"}


def game_from_mapping(row: dict) -> GameRecord:
    missing = [f for f in GAME_FIELDS[:10] if f not in row]
    if missing:
        raise CorpusError(f"missing fields {missing}")
    kw = {}
    for f in GAME_FIELDS:
        if f not in row:
            continue
        v = row[f]
        if f in _INT_FIELDS:
            if v is None or v == "":
                if f in ("home_score", "away_score"):
                    kw[f] = None
                    continue
                raise CorpusError(f"empty {f}")
            kw[f] = int(float(v))
        elif f in _FLOAT_FIELDS:
            kw[f] = float(v)
        else:
            kw[f] = str(v)
    return GameRecord(**kw)


def load_games(path, strict: bool = True) -> list[GameRecord]:
    """Read games from CSV/TSV (header row of field names) or JSON lines."""
    path = Path(path)
    games = []
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        fh.seek(0)
        if first.lstrip().startswith("{"):
            rows = _guard_json(path, fh)
        else:
            delim = "\t" if "\t" in first else ","
            reader = csv.DictReader(fh, delimiter=delim)
            rows = ((i, r) for i, r in enumerate(reader, 2))
        for lineno, row in rows:
            try:
                if "__error__" in row:
                    raise CorpusError(row["__error__"])
                games.append(game_from_mapping(row))
            except (CorpusError, ValueError, TypeError) as exc:
                if strict:
                    raise ParseError(path, lineno, str(exc)) from None
                log.warning("%s:%d: skipping game: %s", path, lineno, exc)
    return games


def _guard_json(path, fh) -> Iterator[tuple[int, dict]]:
    for lineno, line in enumerate(fh, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            yield lineno, {"__error__": str(exc)}
            continue
        yield lineno, obj


def dump_games(games: Iterable[GameRecord], path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=GAME_FIELDS, lineterminator="\n")
        w.writeheader()
        for g in games:
            row = asdict(g)
            for k in ("home_score", "away_score"):
                if row[k] is None:
                    row[k] = ""
            w.writerow(row)


def iter_tweets(path, strict: bool = True) -> Iterator[TweetRecord]:
    """Yield tweets from a JSON-lines file of {tweet_id, timestamp, text}."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                tw = TweetRecord.from_text(obj["tweet_id"], obj["timestamp"], obj["text"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                if strict:
                    raise ParseError(path, lineno, f"bad tweet record: {exc}") from None
                log.warning("%s:%d: skipping tweet: %s", path, lineno, exc)
                continue
            yield tw


def dump_tweets(tweets: Iterable[TweetRecord], path):
    with open(path, "w", encoding="utf-8") as fh:
        for tw in tweets:
            fh.write(json.dumps({"tweet_id": tw.tweet_id, "timestamp": tw.timestamp,
                                 "text": tw.text}, ensure_ascii=False))
            fh.write("\n")


def load_id_lists(path) -> list[tuple[str, str, str]]:
    """Released-dataset style assignment lists as (team, game_id, tweet_id).

    Accepts JSON lines ``{"team", "game_id", "tweet_ids": [...]}`` or a
    tab-separated file with ``team  game_id  tweet_id`` per line.
    """
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                if line.startswith("{"):
                    obj = json.loads(line)
                    for tid in obj["tweet_ids"]:
                        out.append((str(obj["team"]), str(obj["game_id"]), str(tid)))
                else:
                    team, game_id, tid = line.split("\t")[:3]
                    if (team, game_id, tid) == ("team", "game_id", "tweet_id"):
                        continue
                    out.append((team, game_id, tid))
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(path, lineno, f"bad id-list record: {exc}") from None
    return out


# -- corpus -----------------------------------------------------------------


@dataclass
class IngestStats:
    total: int = 0
    kept: int = 0
    dropped_cjk: int = 0
    dropped_empty: int = 0
    dropped_no_team: int = 0
    dropped_multi_team: int = 0
    untagged: int = 0
    per_team: Counter = field(default_factory=Counter)

    def as_dict(self):
        d = asdict(self)
        d["per_team"] = dict(sorted(self.per_team.items()))
        return d


class Corpus:
    """Frozen index of games and team-assigned, window-tagged tweets."""

    def __init__(self, games: Iterable[GameRecord], lexicon: HashtagLexicon | None = None):
        self.lexicon = lexicon
        self.games: dict[str, GameRecord] = {}
        seen = set()
        for g in sorted(games, key=lambda g: (g.season, g.week, g.kickoff, g.game_id)):
            if g.game_id in self.games:
                raise CorpusError(f"duplicate game_id {g.game_id}")
            for team in g.teams:
                key = (g.season, g.week, team)
                if key in seen:
                    raise CorpusError(f"{team} plays twice in season {g.season} week {g.week}")
                seen.add(key)
            self.games[g.game_id] = g
        self._schedule: dict[tuple[str, int], list[GameRecord]] = defaultdict(list)
        for g in self.games.values():
            for team in g.teams:
                self._schedule[(team, g.season)].append(g)
        for lst in self._schedule.values():
            lst.sort(key=lambda g: g.kickoff)
        # per-team kickoff timeline across seasons, for locating a tweet
        self._timeline: dict[str, list[GameRecord]] = defaultdict(list)
        for (team, _), lst in self._schedule.items():
            self._timeline[team].extend(lst)
        for lst in self._timeline.values():
            lst.sort(key=lambda g: g.kickoff)
        self._times = {t: [g.kickoff for g in lst] for t, lst in self._timeline.items()}
        self.tweets: list[AssignedTweet] = []
        self._weekly: dict[tuple[str, str], list[AssignedTweet]] = defaultdict(list)
        self._postgame: dict[tuple[str, str], list[AssignedTweet]] = defaultdict(list)
        self._ids: set[str] = set()
        self.stats = IngestStats()
        self.hooks: list[Callable] = []
        self.has_texts = True

    # building

    def locate(self, team: str, t: float) -> tuple[GameRecord | None, GameRecord | None]:
        """(previous, upcoming) game of ``team`` around time t, within one season."""
        times = self._times.get(team)
        if not times:
            return None, None
        i = bisect.bisect_right(times, t)
        prev = self._timeline[team][i - 1] if i > 0 else None
        nxt = self._timeline[team][i] if i < len(times) else None
        if prev is not None and nxt is not None and prev.season != nxt.season:
            # nearer season wins; the other side is out of season
            if t - prev.kickoff < nxt.kickoff - t:
                nxt = None
            else:
                prev = None
        return prev, nxt

    def add_tweet(self, tweet: TweetRecord, strict: bool = False, team: str | None = None,
                  cjk_filter: bool = True) -> AssignedTweet | None:
        st = self.stats
        st.total += 1
        if tweet.tweet_id in self._ids:
            if strict:
                raise CorpusError(f"duplicate tweet_id {tweet.tweet_id}")
            log.warning("duplicate tweet_id %s ignored", tweet.tweet_id)
            return None
        self._ids.add(tweet.tweet_id)
        if cjk_filter and not filter_cjk(tweet):
            st.dropped_cjk += 1
            return None
        if not tweet.tokens:
            st.dropped_empty += 1
            return None
        if team is None:
            if self.lexicon is None:
                raise CorpusError("no lexicon to assign tweets with")
            found = {self.lexicon.owner(t) for t in tweet.match_tokens if t.startswith("#")}
            found.discard(None)
            if len(found) != 1:
                if found:
                    st.dropped_multi_team += 1
                else:
                    st.dropped_no_team += 1
                return None
            team = found.pop()
        prev, nxt = self.locate(team, tweet.timestamp)
        windows = tag_windows(tweet.timestamp, prev and prev.kickoff, nxt and nxt.kickoff)
        at = AssignedTweet(tweet.tweet_id, team, tweet.timestamp, tweet.tokens, windows,
                           nxt.game_id if nxt else None, prev.game_id if prev else None)
        self._index(at)
        st.kept += 1
        st.per_team[team] += 1
        return at

    def _index(self, at: AssignedTweet):
        self.tweets.append(at)
        if not at.windows:
            self.stats.untagged += 1
        if WEEKLY in at.windows:
            self._weekly[(at.team, at.next_game)].append(at)
        if POSTGAME in at.windows:
            self._postgame[(at.team, at.prev_game)].append(at)

    def add_tweets(self, tweets: Iterable[TweetRecord], strict: bool = False,
                   cjk_filter: bool = True) -> "Corpus":
        for tw in tweets:
            self.add_tweet(tw, strict=strict, cjk_filter=cjk_filter)
        return self

    @classmethod
    def build(cls, games, lexicon, tweets, strict=False, cjk_filter=True) -> "Corpus":
        return cls(games, lexicon).add_tweets(tweets, strict=strict, cjk_filter=cjk_filter)

    @classmethod
    def from_id_lists(cls, games, id_lists, texts: dict[str, TweetRecord] | None = None,
                      lexicon=None, timestamps: dict[str, int] | None = None) -> "Corpus":
        """Corpus from released per-team/per-game tweet-ID lists.

        The team assignment comes from the lists. Texts (and timestamps) are
        supplied separately; tweets without a text keep an empty token list and
        the corpus is marked as lacking texts.
        """
        corpus = cls(games, lexicon)
        texts = texts or {}
        timestamps = timestamps or {}
        for team, game_id, tid in id_lists:
            if game_id not in corpus.games:
                raise CorpusError(f"id list references unknown game {game_id}")
            tw = texts.get(tid)
            if tw is not None:
                corpus.add_tweet(tw, team=team)
                continue
            corpus.has_texts = False
            ts = timestamps.get(tid)
            g = corpus.games[game_id]
            if ts is None:
                # without a timestamp the tweet counts towards the listed game's week
                ts = g.kickoff - 2 * HOUR
            prev, nxt = corpus.locate(team, ts)
            windows = tag_windows(ts, prev and prev.kickoff, nxt and nxt.kickoff)
            at = AssignedTweet(tid, team, ts, (), windows, nxt.game_id if nxt else None,
                               prev.game_id if prev else None)
            corpus.stats.total += 1
            corpus.stats.kept += 1
            corpus._index(at)
        return corpus

    # reading (instrumented)

    def _notify(self, kind: str, payload):
        for hook in self.hooks:
            hook(kind, payload)

    def game(self, game_id: str) -> GameRecord:
        try:
            return self.games[game_id]
        except KeyError:
            raise CorpusError(f"unknown game_id {game_id}") from None

    @property
    def seasons(self) -> list[int]:
        return sorted({g.season for g in self.games.values()})

    def games_in(self, season: int, weeks: Iterable[int] | None = None) -> list[GameRecord]:
        wk = set(weeks) if weeks is not None else None
        return [g for g in self.games.values()
                if g.season == season and (wk is None or g.week in wk)]

    def schedule(self, team: str, season: int) -> list[GameRecord]:
        return list(self._schedule.get((team, season), ()))

    def season_history(self, game: GameRecord) -> list[GameRecord]:
        """Completed games of the same season in weeks before ``game.week``."""
        hist = [g for g in self.games.values()
                if g.season == game.season and g.week < game.week]
        self._notify("outcome", [g.game_id for g in hist])
        return hist

    def prior_games(self, team: str, game: GameRecord) -> list[GameRecord]:
        """The team's games earlier in the same season (schedule only)."""
        return [g for g in self._schedule.get((team, game.season), ()) if g.week < game.week]

    def weekly_tweets(self, team: str, game_id: str) -> list[AssignedTweet]:
        self.game(game_id)
        tw = self._weekly.get((team, game_id), [])
        if tw:
            self._notify("tweets", (game_id, max(t.timestamp for t in tw)))
        return tw

    def weekly_volume(self, team: str, game_id: str) -> int:
        g = self.game(game_id)
        if team not in g.teams:
            raise CorpusError(f"{team} does not play in {game_id}")
        tw = self._weekly.get((team, game_id), ())
        if tw:
            self._notify("tweets", (game_id, max(t.timestamp for t in tw)))
        return len(tw)

    def postgame_tweets(self) -> Iterator[tuple[GameRecord, AssignedTweet]]:
        for (team, game_id), lst in sorted(self._postgame.items(),
                                           key=lambda kv: (self.games[kv[0][1]].kickoff, kv[0])):
            g = self.games[game_id]
            for at in lst:
                yield g, at

    def window_counts(self) -> dict[int, dict[str, int]]:
        """Tweets per window per season (season of the game the tag refers to)."""
        out: dict[int, Counter] = defaultdict(Counter)
        for at in self.tweets:
            for w in at.windows:
                gid = at.prev_game if w == POSTGAME else at.next_game
                out[self.games[gid].season][w] += 1
        return {s: {w: c[w] for w in WINDOWS} for s, c in sorted(out.items())}

    # persistence

    def dump(self, path):
        """Write the frozen index as JSON lines (meta, lexicon, games, tweets)."""
        with open(path, "w", encoding="utf-8") as fh:
            meta = {"kind": "meta", "format": "nflcast-corpus/1", "has_texts": self.has_texts,
                    "stats": self.stats.as_dict()}
            fh.write(json.dumps(meta, sort_keys=True) + "\n")
            if self.lexicon is not None:
                fh.write(json.dumps({"kind": "lexicon", "teams": self.lexicon.to_dict()},
                                    sort_keys=True) + "\n")
            for g in self.games.values():
                fh.write(json.dumps({"kind": "game", **asdict(g)}, sort_keys=True) + "\n")
            for at in self.tweets:
                rec = {"kind": "tweet", "tweet_id": at.tweet_id, "team": at.team,
                       "timestamp": at.timestamp, "tokens": list(at.tokens),
                       "windows": sorted(at.windows), "next_game": at.next_game,
                       "prev_game": at.prev_game}
                fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Corpus":
        games, tweets, lexicon, meta = [], [], None, None
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                try:
                    rec = json.loads(line)
                    kind = rec.pop("kind")
                except (json.JSONDecodeError, KeyError) as exc:
                    raise ParseError(path, lineno, str(exc)) from None
                if kind == "meta":
                    meta = rec
                elif kind == "lexicon":
                    lexicon = HashtagLexicon(rec["teams"])
                elif kind == "game":
                    games.append(GameRecord(**rec))
                elif kind == "tweet":
                    tweets.append(AssignedTweet(rec["tweet_id"], rec["team"], rec["timestamp"],
                                                tuple(rec["tokens"]), frozenset(rec["windows"]),
                                                rec["next_game"], rec["prev_game"]))
        if meta is None or meta.get("format") != "nflcast-corpus/1":
            raise CorpusError(f"{path}: not a corpus file")
        corpus = cls(games, lexicon)
        for at in tweets:
            corpus._index(at)
            corpus._ids.add(at.tweet_id)
        stats = meta["stats"]
        stats["per_team"] = Counter(stats["per_team"])
        corpus.stats = IngestStats(**stats)
        corpus.has_texts = meta["has_texts"]
        return corpus
