"""Seeded synthetic seasons with a plantable betting signal.

Scores come from latent team strength and pace plus normal noise. The spread
and total line absorb a fraction ``market_efficiency`` of the true expectation,
so at 1.0 no game statistic can beat the line. Weekly tweet volumes follow
``base + tweet_signal * L + (1 - tweet_signal) * noise`` where ``L`` is a walk
that moves up before a team covers and down before it fails to cover. Postgame
tweets draw words from the win or loss lexicon according to the result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .corpus import (HOUR, GameRecord, HashtagLexicon, TweetRecord, dump_games,
                     dump_tweets)

DAY = 24 * HOUR
FILLER = (
    "game", "today", "sunday", "team", "defense", "offense", "qb", "lets", "go", "season",
    "week", "fans", "watch", "play", "time", "big", "line", "coach", "field", "ready",
    "ball", "yards", "drive", "touchdown", "kick", "crowd", "stadium", "pick", "rush", "pass",
)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_teams: int = 16
    n_weeks: int = 17
    seasons: tuple = (2010, 2011, 2012)
    strength_sd: float = 3.5
    pace_sd: float = 3.0
    home_win_rate: float = 0.57
    points_base: float = 22.0
    points_sd: float = 9.0
    market_efficiency: float = 1.0
    market_noise_sd: float = 4.0
    tweet_signal: float = 0.0
    win_words: tuple = ("win", "won", "great")
    loss_words: tuple = ("loss", "refs", "bad")
    filler_words: tuple = FILLER
    volume_base: int = 1500
    volume_step: int = 600
    volume_noise_sd: float = 300.0
    words_per_tweet: int = 3
    postgame_per_game: int = 20
    postgame_signal: float | None = None

    def __post_init__(self):
        for name in ("market_efficiency", "tweet_signal", "home_win_rate"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.postgame_signal is not None and not 0 <= self.postgame_signal <= 1:
            raise ValueError("postgame_signal must lie in [0, 1]")
        if self.n_teams < 2 or self.n_teams % 2:
            raise ValueError("n_teams must be an even number >= 2")
        if not 1 <= self.n_weeks <= 17:
            raise ValueError("n_weeks must be in [1, 17]")
        if not self.seasons:
            raise ValueError("need at least one season")
        if set(self.win_words) & set(self.loss_words):
            raise ValueError("win and loss lexicons must be disjoint")
        nums = [self.strength_sd, self.pace_sd, self.points_base, self.points_sd,
                self.market_noise_sd, self.volume_base, self.volume_step, self.volume_noise_sd]
        if not all(math.isfinite(x) and x >= 0 for x in nums):
            raise ValueError("scale parameters must be finite and nonnegative")

    @property
    def home_edge(self) -> float:
        """Home advantage in points implied by ``home_win_rate``."""
        sd = math.sqrt(2 * self.strength_sd ** 2 + 2 * self.points_sd ** 2)
        return float(norm.ppf(self.home_win_rate) * sd)


@dataclass
class SynthData:
    config: SynthConfig
    games: list
    tweets: list
    lexicon: HashtagLexicon
    volumes: dict = field(default_factory=dict)   # (team, game_id) -> planned weekly volume

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"games": out / "games.csv", "tweets": out / "tweets.jsonl",
                 "lexicon": out / "lexicon.json"}
        dump_games(self.games, paths["games"])
        dump_tweets(self.tweets, paths["tweets"])
        self.lexicon.dump(paths["lexicon"])
        return paths


def team_names(n):
    return [f"T{i:02d}" for i in range(n)]


def round_robin(n_teams: int, n_weeks: int) -> list[list[tuple[int, int]]]:
    """Circle-method pairings per week as (home, away) index pairs."""
    idx = list(range(n_teams))
    weeks = []
    for w in range(n_weeks):
        r = w % (n_teams - 1) if n_teams > 2 else 0
        rot = [idx[0]] + idx[1:][r:] + idx[1:][:r] if n_teams > 2 else idx
        pairs = []
        for i in range(n_teams // 2):
            a, b = rot[i], rot[n_teams - 1 - i]
            # alternate venues between cycles and by slot
            if (w + i) % 2:
                a, b = b, a
            pairs.append((a, b))
        weeks.append(pairs)
    return weeks


def _half(x):
    return round(x * 2) / 2


def season_start(season: int) -> int:
    """Week-1 kickoff (UTC epoch): second Sunday of September, 17:00."""
    import datetime as dt
    d = dt.date(season, 9, 1)
    first_sun = d + dt.timedelta(days=(6 - d.weekday()) % 7)
    kick = dt.datetime.combine(first_sun + dt.timedelta(days=7), dt.time(17, 0),
                               tzinfo=dt.timezone.utc)
    return int(kick.timestamp())


def generate(config: SynthConfig) -> SynthData:
    rng = np.random.default_rng(config.seed)
    names = team_names(config.n_teams)
    lexicon = HashtagLexicon({t: [f"#{t.lower()}", f"#go{t.lower()}"] for t in names})
    games, tweets, volumes = [], [], {}
    hfa = config.home_edge
    pg_signal = config.tweet_signal if config.postgame_signal is None else config.postgame_signal
    tid = 0

    def tweet(team, ts, words, alt=False):
        nonlocal tid
        tid += 1
        tag = f"#go{team.lower()}" if alt else f"#{team.lower()}"
        tweets.append(TweetRecord.from_text(f"{tid:09d}", int(ts), " ".join([tag, *words])))

    schedule = round_robin(config.n_teams, config.n_weeks)
    filler = np.array(config.filler_words)
    for season in config.seasons:
        strength = rng.normal(0, config.strength_sd, config.n_teams)
        pace = rng.normal(0, config.pace_sd, config.n_teams)
        start = season_start(season)
        level = np.zeros(config.n_teams)
        season_games = []
        for w, pairs in enumerate(schedule, start=1):
            kickoff = start + (w - 1) * 7 * DAY
            for h, a in pairs:
                mu = strength[h] - strength[a] + hfa
                total = 2 * config.points_base + pace[h] + pace[a]
                eta = config.market_efficiency
                spread = -_half(eta * mu + (1 - eta) * rng.normal(0, config.market_noise_sd))
                line = _half(eta * total + (1 - eta) * (2 * config.points_base
                                                        + rng.normal(0, config.market_noise_sd)))
                hs = max(0, int(round((total + mu) / 2 + rng.normal(0, config.points_sd))))
                as_ = max(0, int(round((total - mu) / 2 + rng.normal(0, config.points_sd))))
                lam_to = lambda s: max(0.2, 1.2 - 0.08 * s)  # noqa: E731
                box = {}
                for side, t in (("home", h), ("away", a)):
                    box[f"{side}_interceptions_thrown"] = int(rng.poisson(lam_to(strength[t])))
                    box[f"{side}_fumbles_lost"] = int(rng.poisson(0.6 * lam_to(strength[t])))
                    box[f"{side}_times_sacked"] = int(rng.poisson(2.5 * lam_to(strength[t])))
                g = GameRecord(f"{season}-W{w:02d}-{names[a]}@{names[h]}", season, w, names[h],
                               names[a], kickoff, hs, as_, float(spread), float(line), **box)
                season_games.append((g, h, a))
        games.extend(g for g, _, _ in season_games)
        for g, h, a in season_games:
            margin = g.home_score + g.spread - g.away_score
            for t, cover in ((h, np.sign(margin)), (a, -np.sign(margin))):
                level[t] += cover * _step(level[t], cover, config.volume_step)
                noise = rng.normal(0, config.volume_noise_sd)
                v = config.volume_base + config.tweet_signal * level[t] \
                    + (1 - config.tweet_signal) * noise
                volumes[(names[t], g.game_id)] = max(0, int(round(v)))
        for g, h, a in season_games:
            lo = g.kickoff - 6 * DAY - 4 * HOUR if g.week == 1 else g.kickoff - 7 * DAY + 12 * HOUR
            hi = g.kickoff - HOUR
            for t in (h, a):
                team = names[t]
                n = volumes[(team, g.game_id)]
                times = np.sort(rng.integers(lo, hi + 1, size=n))
                words = filler[rng.integers(0, len(filler), size=(n, config.words_per_tweet))]
                alts = rng.random(n) < 0.5
                for ts, ws, alt in zip(times, words, alts):
                    tweet(team, ts, ws.tolist(), alt)
            _postgame(config, rng, g, names[h], names[a], pg_signal, tweet)
    tweets.sort(key=lambda tw: (tw.timestamp, tw.tweet_id))
    return SynthData(config, games, tweets, lexicon, volumes)


def _step(level, cover, step):
    # move farther when heading back towards the base level, so the walk stays bounded
    if cover == 0:
        return 0.0
    toward = (cover > 0 and level < 0) or (cover < 0 and level > 0)
    return 2.0 * step if toward else float(step)


def _postgame(config, rng, g, home, away, signal, tweet):
    if config.postgame_per_game <= 0 or g.home_score == g.away_score:
        return
    home_won = g.home_score > g.away_score
    both = config.win_words + config.loss_words
    for team, won in ((home, home_won), (away, not home_won)):
        own = config.win_words if won else config.loss_words
        times = np.sort(rng.integers(g.kickoff + 4 * HOUR, g.kickoff + 12 * HOUR,
                                     size=config.postgame_per_game))
        for ts in times:
            k = 1 + int(rng.integers(0, 2))
            words = []
            for _ in range(k):
                pool = own if rng.random() < signal else both
                words.append(pool[int(rng.integers(0, len(pool)))])
            words += [config.filler_words[int(i)] for i in
                      rng.integers(0, len(config.filler_words), size=2)]
            tweet(team, ts, words)
