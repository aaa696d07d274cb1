"""Caption length and color-word histograms."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass

from ..text import COLOR_LEXICON, Lexicon, tokenize


@dataclass
class CaptionStats:
    length_histogram: dict
    color_word_histogram: dict
    mean_length: float
    mean_color_words: float
    count: int

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "length_histogram": {str(k): v for k, v in sorted(self.length_histogram.items())},
            "color_word_histogram": {str(k): v for k, v in sorted(self.color_word_histogram.items())},
            "mean_length": self.mean_length,
            "mean_color_words": self.mean_color_words,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["histogram", "bin", "count"])
            for k, v in sorted(self.length_histogram.items()):
                w.writerow(["length", k, v])
            for k, v in sorted(self.color_word_histogram.items()):
                w.writerow(["color_words", k, v])


def caption_stats(records, colors: Lexicon = COLOR_LEXICON) -> CaptionStats:
    """Accepts SampleRecords or bare caption strings."""
    lengths, color_counts = Counter(), Counter()
    n = 0
    for rec in records:
        cap = rec if isinstance(rec, str) else rec.caption
        toks = tokenize(cap)
        lengths[len(toks)] += 1
        color_counts[sum(t in colors.words for t in toks)] += 1
        n += 1
    if n == 0:
        return CaptionStats({}, {}, 0.0, 0.0, 0)
    mean_len = sum(k * v for k, v in lengths.items()) / n
    mean_col = sum(k * v for k, v in color_counts.items()) / n
    return CaptionStats(dict(lengths), dict(color_counts), mean_len, mean_col, n)
