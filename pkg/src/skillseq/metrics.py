"""Generation metrics (ROUGE-1/2/L, BLEU, token F1) and normalized aggregate scoring.

Raw overlap metrics return values in [0, 1]. The aggregate report expresses
every raw score as a percentage of the best score achieved for that
(task, metric) across all models/regimes, then averages per task and per
task group, GLUE-style.

Metric tokenization: lowercase, punctuation split out into separate tokens,
then whitespace split. Table fixtures bypass text metrics and feed the
normalizer directly.
"""

from __future__ import annotations

import csv
import io
import re
from collections import Counter
from dataclasses import dataclass, field

_PUNCT = re.compile(r"([^\w\s])")


def text_tokens(text):
    """Tokenize text for metric computation."""
    return _PUNCT.sub(r" \1 ", text.lower()).split()


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def _f_measure(precision, recall):
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def rouge_n(candidate, reference, n):
    """Clipped n-gram overlap F-measure; 0 when either side has no n-grams."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    cand, ref = _ngrams(candidate, n), _ngrams(reference, n)
    total_c, total_r = sum(cand.values()), sum(ref.values())
    if total_c == 0 or total_r == 0:
        return 0.0
    overlap = sum((cand & ref).values())
    return _f_measure(overlap / total_c, overlap / total_r)


def _lcs_len(a, b):
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference):
    """Longest-common-subsequence F-measure."""
    if not candidate or not reference:
        return 0.0
    lcs = _lcs_len(candidate, reference)
    return _f_measure(lcs / len(candidate), lcs / len(reference))


def bleu(candidates, references, max_n=4):
    """Corpus-level BLEU with add-1 smoothing on zero numerators for n >= 2."""
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise ValueError("bleu needs a non-empty corpus")
    import math

    total_c = sum(len(c) for c in candidates)
    total_r = sum(len(r) for r in references)
    if total_c == 0:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        num = den = 0
        for cand, ref in zip(candidates, references):
            cg, rg = _ngrams(cand, n), _ngrams(ref, n)
            num += sum((cg & rg).values())
            den += sum(cg.values())
        if num == 0 and n >= 2:
            num, den = num + 1, den + 1
        if num == 0 or den == 0:
            return 0.0
        log_p += math.log(num / den)
    brevity = 1.0 if total_c > total_r else math.exp(1.0 - total_r / total_c)
    return brevity * math.exp(log_p / max_n)


def token_f1(prediction, gold):
    """Bag-of-tokens F1; both empty -> 1.0, one empty -> 0.0."""
    if not prediction and not gold:
        return 1.0
    if not prediction or not gold:
        return 0.0
    overlap = sum((Counter(prediction) & Counter(gold)).values())
    return _f_measure(overlap / len(prediction), overlap / len(gold))


def exact_match(prediction, gold):
    """Whole-sequence equality; used for synthetic-task accuracy, not scoring."""
    return 1.0 if prediction == gold else 0.0


# -- aggregate scoring -------------------------------------------------------


class RawScoreTable:
    """Scores keyed (model, regime, task, metric), each in [0, 100]."""

    def __init__(self):
        self.entries = {}
        self._task_order = []

    def add(self, model, regime, task, metric, score):
        score = float(score)
        if not (score == score and abs(score) != float("inf")):
            raise ValueError(f"non-finite score for {(model, regime, task, metric)}")
        if task not in self._task_order:
            self._task_order.append(task)
        self.entries[(model, regime, task, metric)] = score

    def tasks(self):
        return list(self._task_order)

    def columns(self):
        """(model, regime) pairs, regime-major like the report layout."""
        seen = []
        for model, regime, _, _ in self.entries:
            if (model, regime) not in seen:
                seen.append((model, regime))
        order = {"single": 0, "multi": 1}
        return sorted(seen, key=lambda mr: (order.get(mr[1], 9), [m for m, _ in seen].index(mr[0])))

    def task_metrics(self, task):
        out = []
        for (_, _, t, metric) in self.entries:
            if t == task and metric not in out:
                out.append(metric)
        return out

    @classmethod
    def from_csv(cls, path_or_text):
        table = cls()
        if "\n" in str(path_or_text):
            fh = io.StringIO(path_or_text)
        else:
            fh = open(path_or_text, newline="")
        with fh:
            for row in csv.DictReader(fh):
                table.add(row["model"], row["regime"], row["task"], row["metric"], row["score"])
        if not table.entries:
            raise ValueError("raw score table is empty")
        return table

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "regime", "task", "metric", "score"])
            for (model, regime, task, metric), score in self.entries.items():
                w.writerow([model, regime, task, metric, f"{score:.6f}"])


@dataclass
class MetricReport:
    """Normalized per-task scores plus group averages for each (model, regime)."""

    normalized: dict = field(default_factory=dict)   # (model, regime, task, metric) -> pct
    per_task: dict = field(default_factory=dict)     # (model, regime, task) -> pct
    group_avg: dict = field(default_factory=dict)    # (model, regime, group) -> pct
    task_order: list = field(default_factory=list)
    column_order: list = field(default_factory=list)
    task_groups: dict = field(default_factory=dict)  # task -> "summ" | "qa"

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["task"] + [f"{m}_{r}" for m, r in self.column_order])
            for task in self.task_order:
                w.writerow([task] + [_fmt(self.per_task.get((m, r, task))) for m, r in self.column_order])
            for group, label in (("summ", "average_summ"), ("qa", "average_qa"), ("all", "average_all")):
                row = [_fmt(self.group_avg.get((m, r, group))) for m, r in self.column_order]
                if any(v != "" for v in row):
                    w.writerow([label] + row)


def _fmt(v):
    return "" if v is None else f"{v:.2f}"


def normalize(table, maxima=None):
    """Express every score as a percentage of the per-(task, metric) maximum.

    Maxima default to the column-wise max of the ingested table; a published
    best-scores table may be passed explicitly instead. Per-task score is the
    mean over that task's metrics; group averages are arithmetic means of
    per-task scores. Tasks scored only with F1 form the QA group, all others
    the summarization group.
    """
    if not table.entries:
        raise ValueError("raw score table is empty")
    if maxima is None:
        maxima = {}
        for (model, regime, task, metric), score in table.entries.items():
            key = (task, metric)
            maxima[key] = max(maxima.get(key, 0.0), score)
    else:
        missing = {(t, m) for (_, _, t, m) in table.entries} - set(maxima)
        if missing:
            raise ValueError(f"explicit maxima missing (task, metric) keys: {sorted(missing)}")
    for key, m in maxima.items():
        if m <= 0:
            raise ValueError(f"zero maximum for (task, metric) {key}; cannot normalize")

    report = MetricReport(task_order=table.tasks(), column_order=table.columns())
    for (model, regime, task, metric), score in table.entries.items():
        report.normalized[(model, regime, task, metric)] = 100.0 * score / maxima[(task, metric)]

    for task in report.task_order:
        metrics = table.task_metrics(task)
        report.task_groups[task] = "qa" if metrics == ["f1"] else "summ"
        for model, regime in report.column_order:
            vals = [report.normalized[(model, regime, task, met)]
                    for met in metrics if (model, regime, task, met) in report.normalized]
            if vals:
                report.per_task[(model, regime, task)] = sum(vals) / len(vals)

    for model, regime in report.column_order:
        for group in ("summ", "qa", "all"):
            vals = [report.per_task[(model, regime, task)]
                    for task in report.task_order
                    if (model, regime, task) in report.per_task
                    and (group == "all" or report.task_groups[task] == group)]
            if vals:
                report.group_avg[(model, regime, group)] = sum(vals) / len(vals)
    return report
