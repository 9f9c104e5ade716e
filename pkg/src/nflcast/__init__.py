"""Forecast NFL game and betting outcomes from statistics and fan tweets."""

from .corpus import Corpus, GameRecord, HashtagLexicon, TweetRecord
from .features import FeatureSetSpec, parse_spec
from .harness import Backtester, label, profitability, select_feature_set

__all__ = ["Backtester", "Corpus", "FeatureSetSpec", "GameRecord", "HashtagLexicon",
           "TweetRecord", "label", "parse_spec", "profitability", "select_feature_set"]
__version__ = "0.1.0"
