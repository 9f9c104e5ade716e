"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from . import glm, harness, postgame, report, synthgen
from .corpus import Corpus, CorpusError, HashtagLexicon, iter_tweets, load_games, load_id_lists
from .features import FeatureStore, expand_specs, write_feature_records

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
log = logging.getLogger("nflcast")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_weeks(text: str) -> list[int]:
    """``A..B`` (inclusive), ``A-B`` or a single week."""
    for sep in ("..", "-"):
        if sep in text:
            a, b = text.split(sep, 1)
            break
    else:
        a = b = text
    try:
        lo, hi = int(a), int(b)
    except ValueError:
        raise UsageError(f"bad week range {text!r}; expected A..B") from None
    if lo > hi:
        raise UsageError(f"empty week range {text!r}")
    return list(range(lo, hi + 1))


def _specs(text):
    try:
        return expand_specs(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# -- corpus plumbing -------------------------------------------------------------


def _add_inputs(p):
    p.add_argument("--corpus", help="corpus file written by 'ingest'")
    p.add_argument("--games", help="games file (.csv, .tsv or .jsonl)")
    p.add_argument("--tweets", help="tweets file (JSON lines: tweet_id, timestamp, text)")
    p.add_argument("--lexicon", help="team hashtag lexicon (.json)")
    p.add_argument("--id-lists", help="released per-team/per-game tweet-ID lists")
    p.add_argument("--strict", action="store_true", help="fail on the first malformed line")
    p.add_argument("--no-cjk-filter", action="store_true", help="keep tweets with CJK characters")


def load_corpus(args) -> Corpus:
    if args.corpus:
        return Corpus.load(args.corpus)
    if not args.games:
        raise UsageError("give --corpus, or --games with --tweets/--id-lists and --lexicon")
    games = load_games(args.games, strict=args.strict)
    lexicon = HashtagLexicon.load(args.lexicon) if args.lexicon else None
    if args.id_lists:
        texts = ({t.tweet_id: t for t in iter_tweets(args.tweets, strict=args.strict)}
                 if args.tweets else None)
        return Corpus.from_id_lists(games, load_id_lists(args.id_lists), texts, lexicon)
    if not args.tweets or lexicon is None:
        raise UsageError("building a corpus needs --games, --tweets and --lexicon")
    return Corpus.build(games, lexicon, iter_tweets(args.tweets, strict=args.strict),
                        strict=args.strict, cjk_filter=not args.no_cjk_filter)


def _config(args, **extra) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "jobs", "verbose")}
    for key in ("corpus", "games", "tweets", "lexicon", "id_lists"):
        path = cfg.get(key)
        if path:
            cfg[f"{key}_sha256"] = report.file_digest(path)
            cfg[key] = Path(path).name
    cfg.pop("out", None)
    cfg.update(extra)
    return cfg


# -- commands -----------------------------------------------------------------------


def cmd_synth(args):
    try:
        cfg = synthgen.SynthConfig(
            seed=args.seed, n_teams=args.teams, seasons=tuple(args.seasons),
            tweet_signal=args.signal, market_efficiency=args.efficiency,
            postgame_signal=args.postgame_signal, volume_base=args.volume_base,
            volume_step=args.volume_step, volume_noise_sd=args.volume_noise,
            postgame_per_game=args.postgame_per_game)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data = synthgen.generate(cfg)
    paths = data.write(args.out)
    print(json.dumps({k: str(v) for k, v in paths.items()}, sort_keys=True))


def cmd_ingest(args):
    corpus = load_corpus(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    corpus.dump(out)
    counts = corpus.window_counts()
    lines = ["season\tweekly\tpregame\tpostgame"]
    for season in sorted(counts):
        c = counts[season]
        lines.append(f"{season}\t{c.get('weekly', 0)}\t{c.get('pregame', 0)}\t"
                     f"{c.get('postgame', 0)}")
    summary = "\n".join(lines) + "\n"
    out.with_suffix(".summary.tsv").write_text(summary, encoding="utf-8")
    sys.stdout.write(summary)
    log.info("ingest: %s", json.dumps(corpus.stats.as_dict(), sort_keys=True))


def cmd_featurize(args):
    corpus = load_corpus(args)
    specs = _specs(args.features)
    store = FeatureStore(corpus)
    if any(a.kind == "CCA" for s in specs for a in s.atoms):
        raise UsageError("cca features depend on the training fold; use 'backtest'")
    weeks = set(parse_weeks(args.weeks)) if args.weeks else None
    games = [g for g in corpus.games.values() if weeks is None or g.week in weeks]
    records = []
    for g in sorted(games, key=lambda g: (g.season, g.week, g.game_id)):
        fv = {}
        for s in specs:
            fv.update(store.vector(g, s))
        records.append((g.game_id, fv))
    write_feature_records(args.out, records)
    print(f"{len(records)} games -> {args.out}")


def _tasks(text):
    if text == "all":
        return list(harness.TASKS)
    tasks = [t.strip() for t in text.split(",")]
    bad = [t for t in tasks if t not in harness.TASKS]
    if bad:
        raise UsageError(f"unknown task {bad[0]!r}; choose from {', '.join(harness.TASKS)}")
    return tasks


def cmd_backtest(args):
    specs = _specs(args.features)
    tasks = _tasks(args.task)
    weeks = parse_weeks(args.weeks)
    if any(not 4 <= k <= 16 for k in weeks):
        raise UsageError("test weeks must lie within 4..16")
    corpus = load_corpus(args)
    if any(s.uses_tweets for s in specs) and not corpus.has_texts \
            and any(a.kind in ("UNI", "CCA") for s in specs for a in s.atoms):
        raise CorpusError("texts unavailable: unigram and CCA features need tweet texts")
    try:
        grid = [float(x) for x in args.lambdas.split(",")] if args.lambdas else glm.LAMBDA_GRID
    except ValueError:
        raise UsageError(f"bad lambda grid {args.lambdas!r}") from None
    bt = harness.Backtester(corpus, args.test_season, lambda_grid=grid)
    rows, selections = [], []
    for task in tasks:
        if args.select == "none":
            rows += harness.run_many(bt, specs, task, weeks, args.jobs)
            continue
        res, cand_rows = harness.run_selection(bt, specs, task, args.select, args.jobs)
        selections.append(res)
        rows += [harness.BacktestRow(r.feature_set, r.task,
                                     [f for f in r.folds if f.week in weeks]) for r in cand_rows]
        print(f"{task}\tselect={args.select}\taccuracy={res.accuracy:.4f}\t"
              f"games={res.n_games}\tdistinct_sets={res.n_distinct}")
    written = report.write_report(args.out, rows, selections, _config(args),
                                  figures=not args.no_figures)
    header, body = report.accuracy_table(rows)
    print("\t".join(header))
    for line in body:
        print("\t".join(map(str, line)))
    for p in written:
        log.info("wrote %s", p)


def cmd_postgame(args):
    corpus = load_corpus(args)
    weeks = parse_weeks(args.weeks)
    res = postgame.evaluate_weeks(weeks, corpus, test_season=args.test_season,
                                  shuffle_seed=args.shuffle_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _config(args)
    report.write_table(out / "postgame_accuracy.csv",
                       ["week", "n_train", "n_test", "n_correct", "accuracy", "lambda"],
                       [[w.week, w.n_train, w.n_test, w.n_correct, f"{w.accuracy:.6f}",
                         f"{w.lam:g}"] for w in res.weeks], "postgame_accuracy", cfg)
    if res.last_model is not None:
        lex = postgame.extract_lexicon(res.last_model, args.top)
        postgame.write_lexicon(lex, out / "lexicon.tsv")
    print(f"mean_accuracy\t{res.mean_accuracy:.4f}\ttest_tweets\t{res.n_test}")


def cmd_report(args):
    made = report.render_figures(args.dir)
    if not made:
        raise CorpusError(f"no report tables found in {args.dir}")
    for p in made:
        print(p)


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nflcast", description="Forecast NFL betting outcomes from game data "
                                            "and fan tweets, and backtest them online.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic league")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--teams", type=int, default=16)
    s.add_argument("--seasons", type=int, nargs="+", default=[2010, 2011, 2012])
    s.add_argument("--signal", type=float, default=0.0, help="tweet-volume signal strength")
    s.add_argument("--efficiency", type=float, default=1.0, help="market efficiency")
    s.add_argument("--postgame-signal", type=float, default=None)
    s.add_argument("--postgame-per-game", type=int, default=20)
    s.add_argument("--volume-base", type=int, default=1500)
    s.add_argument("--volume-step", type=int, default=600)
    s.add_argument("--volume-noise", type=float, default=300.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="assign and window-tag tweets into a corpus file")
    _add_inputs(s)
    s.add_argument("--out", required=True, help="corpus file to write")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("featurize", help="write per-game feature vectors")
    _add_inputs(s)
    s.add_argument("--features", required=True)
    s.add_argument("--weeks")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_featurize)

    for name, default_select in (("backtest", "none"), ("select", "last2")):
        s = sub.add_parser(name, help="online backtest" if name == "backtest"
                           else "backtest with online feature-set selection")
        _add_inputs(s)
        s.add_argument("--task", default="wts", help="winner, wts, ou, a comma list, or all")
        s.add_argument("--features", default="standard",
                       help="all55, standard, all, or comma-separated specs like F3+F10")
        s.add_argument("--select", choices=("none", "last2", "all"), default=default_select)
        s.add_argument("--weeks", default="4..16")
        s.add_argument("--test-season", type=int)
        s.add_argument("--lambdas", help="comma-separated lambda grid override")
        s.add_argument("--seed", type=int, default=0, help="recorded in the fingerprint")
        s.add_argument("--jobs", type=int, default=None, help="worker processes (default: cores)")
        s.add_argument("--no-figures", action="store_true")
        s.add_argument("--out", required=True)
        s.set_defaults(func=cmd_backtest)

    s = sub.add_parser("postgame", help="postgame win/loss classifier and lexicon")
    _add_inputs(s)
    s.add_argument("--weeks", default="4..16")
    s.add_argument("--test-season", type=int)
    s.add_argument("--top", type=int, default=30)
    s.add_argument("--shuffle-seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_postgame)

    s = sub.add_parser("report", help="render figures from report tables")
    s.add_argument("dir")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    warnings.simplefilter("default")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"nflcast: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, OSError, json.JSONDecodeError) as exc:
        print(f"nflcast: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"nflcast: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
