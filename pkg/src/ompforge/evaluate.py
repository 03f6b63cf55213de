"""Measurement protocols: perplexity, strict-match generation accuracy,
chained-vs-basic comparison, and the two clause subtests.

All evaluations are deterministic given (model, test set, config): sample
accumulation is plain count merging, reports carry no timestamps, and
JSON output sorts its keys, so identical runs produce identical bytes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from . import clex
from .chain import generate_batch
from .errors import EmptyCorpus, MalformedPragma, NoLogprobSupport
from .pragma import (PragmaAst, canonical, clause_and_control_match,
                     clause_match, parse_pragma, strict_match)

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1

DEFAULT_CHAIN_FILTERS = ("for schedule", "collapse", "teams", "target")


@dataclass
class MatchCounts:
    """Binary-classification counts with the report's metric conventions.

    Ratios with a zero denominator are reported as 0 and listed in
    ``undefined`` so a zero score is distinguishable from a degenerate one.
    """

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n if self.n else 0.0

    @property
    def precision(self) -> float:
        denom = self.tp + self.fp
        return self.tp / denom if denom else 0.0

    @property
    def recall(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def undefined(self) -> list[str]:
        out = []
        if self.n == 0:
            out.append("accuracy")
        if self.tp + self.fp == 0:
            out.append("precision")
        if self.tp + self.fn == 0:
            out.append("recall")
        if self.precision + self.recall == 0:
            out.append("f1")
        return out

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "n": self.n, "accuracy": self.accuracy,
                "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "undefined": self.undefined()}


@dataclass
class EvalRow:
    label: str
    counts: MatchCounts

    def to_dict(self) -> dict:
        return {"label": self.label, **self.counts.to_dict()}


@dataclass
class EvalReport:
    task: str
    rows: list[EvalRow]
    overall: MatchCounts
    sample_count: int
    config: dict = field(default_factory=dict)
    perplexity: float | None = None
    failures: int = 0

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "task": self.task,
            "config": self.config,
            "sample_count": self.sample_count,
            "failures": self.failures,
            "perplexity": self.perplexity,
            "overall": self.overall.to_dict(),
            "rows": [row.to_dict() for row in self.rows],
        }

    def render_table(self) -> str:
        width = max([len(r.label) for r in self.rows] + [len("overall"), 8])
        lines = [f"task: {self.task}  (n={self.sample_count})"]
        header = (f"{'label':<{width}}  {'n':>6}  {'acc':>7}  {'prec':>7}  "
                  f"{'rec':>7}  {'f1':>7}")
        lines.append(header)
        lines.append("-" * len(header))
        for row in self.rows + [EvalRow("overall", self.overall)]:
            c = row.counts
            lines.append(f"{row.label:<{width}}  {c.n:>6}  {c.accuracy:>7.4f}"
                         f"  {c.precision:>7.4f}  {c.recall:>7.4f}  {c.f1:>7.4f}")
        if self.perplexity is not None:
            lines.append(f"perplexity: {self.perplexity:.6f}")
        return "\n".join(lines)


# -- perplexity ---------------------------------------------------------------

@dataclass
class PerplexityAccumulator:
    """Running negative-log-likelihood pool: PP = exp(-sum/N)."""

    logprob_sum: float = 0.0
    token_count: int = 0

    def add(self, logprobs) -> None:
        for lp in logprobs:
            self.logprob_sum += lp
            self.token_count += 1

    @property
    def perplexity(self) -> float:
        if self.token_count < 1:
            raise EmptyCorpus("no tokens scored")
        return math.exp(-self.logprob_sum / self.token_count)


@dataclass(frozen=True)
class PerplexityResult:
    perplexity: float
    token_count: int

    def __float__(self) -> float:
        return self.perplexity


def perplexity(scorer, texts) -> PerplexityResult:
    """Token-pooled perplexity of a scorer over test texts.

    Each text is scored independently from a fresh sentinel start context;
    the pool weights every token equally, so shard order and grouping do
    not change the result. The scorer must expose
    ``score(tokens) -> list of natural-log probabilities``.
    """
    if not hasattr(scorer, "score"):
        raise NoLogprobSupport(
            f"{type(scorer).__name__} does not expose token log-probabilities")
    acc = PerplexityAccumulator()
    for item in texts:
        text = item.text if hasattr(item, "text") else item
        tokens = clex.token_values(text)
        if tokens:
            acc.add(scorer.score(tokens))
    return PerplexityResult(acc.perplexity, acc.token_count)


# -- generation accuracy ------------------------------------------------------

def _expected_canonical(sample) -> str:
    try:
        return canonical(sample.pragma)
    except MalformedPragma:
        return " ".join(sample.pragma.split())


def check_disjoint(samples, train_ids) -> None:
    if not train_ids:
        return
    overlap = {s.id for s in samples} & set(train_ids)
    if overlap:
        raise ValueError(
            f"test set overlaps training set on {len(overlap)} ids, "
            f"e.g. {sorted(overlap)[:3]}")


def eval_generation(backend, samples, mode: str = "basic", top_k: int = 15,
                    n_chain: int = 256, train_ids=None,
                    config: dict | None = None,
                    jobs: int | None = 1) -> EvalReport:
    """Strict-match accuracy per pragma form and overall.

    Rows cover the ``top_k`` most frequent expected pragmas in the test
    set; a row's tp counts exact matches and fn everything else, including
    unparseable or failed generations (never dropped). ``train_ids``, when
    given, enforces train/test disjointness by id.
    """
    samples = list(samples)
    check_disjoint(samples, train_ids)
    results = generate_batch(backend, samples, mode=mode, n_chain=n_chain,
                             jobs=jobs)
    by_pragma: dict[str, MatchCounts] = {}
    overall = MatchCounts()
    failures = 0
    for sample, result in zip(samples, results):
        expected = _expected_canonical(sample)
        counts = by_pragma.setdefault(expected, MatchCounts())
        if result.error is not None:
            failures += 1
            correct = False
        else:
            correct = strict_match(expected, result.pragma)
        if correct:
            counts.tp += 1
            overall.tp += 1
        else:
            counts.fn += 1
            overall.fn += 1
    ranked = sorted(by_pragma.items(), key=lambda kv: (-kv[1].n, kv[0]))
    rows = [EvalRow(label, counts) for label, counts in ranked[:top_k]]
    cfg = {"mode": mode, "top_k": top_k, "n_chain": n_chain,
           "matcher": "strict", **(config or {})}
    return EvalReport(task=f"generation-{mode}", rows=rows, overall=overall,
                      sample_count=len(samples), config=cfg, failures=failures)


# -- chained vs basic ---------------------------------------------------------

def _names_contain(names: list[str], phrase: str) -> bool:
    want = phrase.split()
    if len(want) == 1:
        return want[0] in names
    for i in range(len(names) - len(want) + 1):
        if names[i:i + len(want)] == want:
            return True
    return False


@dataclass
class PairedRow:
    label: str
    n: int
    basic_accuracy: float
    chain_accuracy: float
    empty: bool = False

    def to_dict(self) -> dict:
        return {"label": self.label, "n": self.n,
                "basic_accuracy": self.basic_accuracy,
                "chain_accuracy": self.chain_accuracy, "empty": self.empty}


@dataclass
class PairedReport:
    task: str
    rows: list[PairedRow]
    sample_count: int
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"schema_version": REPORT_SCHEMA_VERSION, "task": self.task,
                "config": self.config, "sample_count": self.sample_count,
                "rows": [row.to_dict() for row in self.rows]}

    def render_table(self) -> str:
        width = max([len(r.label) for r in self.rows] + [8])
        lines = [f"task: {self.task}  (n={self.sample_count})"]
        header = f"{'subset':<{width}}  {'n':>6}  {'basic':>8}  {'chain':>8}"
        lines.append(header)
        lines.append("-" * len(header))
        for row in self.rows:
            mark = "  (empty subset)" if row.empty else ""
            lines.append(f"{row.label:<{width}}  {row.n:>6}  "
                         f"{row.basic_accuracy:>7.2%}  "
                         f"{row.chain_accuracy:>7.2%}{mark}")
        return "\n".join(lines)


def eval_chain_vs_basic(backend, samples,
                        filters=DEFAULT_CHAIN_FILTERS,
                        n_chain: int = 256,
                        config: dict | None = None,
                        jobs: int | None = 1) -> PairedReport:
    """Accuracy of basic vs chained generation on name-filtered subsets.

    Each filter entry selects the samples whose expected pragma contains
    those component names (contiguously, for multi-word entries). Both
    modes run over the full sample list; basic runs first, then chain. An
    empty subset is reported as such with a warning rather than an error.
    """
    samples = list(samples)
    basic = generate_batch(backend, samples, mode="basic", jobs=jobs)
    chain = generate_batch(backend, samples, mode="chain", n_chain=n_chain,
                           jobs=jobs)
    outcomes = []
    for sample, b, c in zip(samples, basic, chain):
        expected = _expected_canonical(sample)
        try:
            names = [item.name for item in parse_pragma(sample.pragma).items]
        except MalformedPragma:
            names = []
        outcomes.append((names,
                         b.error is None and strict_match(expected, b.pragma),
                         c.error is None and strict_match(expected, c.pragma)))
    rows = []
    for phrase in tuple(filters) + ("overall",):
        if phrase == "overall":
            subset = outcomes
        else:
            subset = [o for o in outcomes if _names_contain(o[0], phrase)]
        if not subset:
            log.warning("empty subset for filter %r", phrase)
            rows.append(PairedRow(phrase, 0, 0.0, 0.0, empty=True))
            continue
        rows.append(PairedRow(
            phrase, len(subset),
            sum(1 for o in subset if o[1]) / len(subset),
            sum(1 for o in subset if o[2]) / len(subset)))
    cfg = {"filters": list(filters), "n_chain": n_chain, **(config or {})}
    return PairedReport(task="chain-vs-basic", rows=rows,
                        sample_count=len(samples), config=cfg)


# -- clause subtests ----------------------------------------------------------

_EMPTY_AST = PragmaAst(items=())


def _parse_or_empty(text: str | None) -> PragmaAst:
    if text is None:
        return _EMPTY_AST
    try:
        return parse_pragma(text)
    except MalformedPragma:
        return _EMPTY_AST


def classify_clause_outcome(expected: PragmaAst, generated: PragmaAst,
                            clause: str, subtest: int) -> str:
    """Confusion-matrix cell for one sample.

    Positive class: the expected pragma contains the clause. Subtest 1
    checks presence only. Subtest 2 additionally requires matching control
    structures, and demotes a presence-match with a wrong control to a
    false positive.
    """
    exp_has = any(i.name == clause for i in expected.items)
    gen_has = any(i.name == clause for i in generated.items)
    if subtest == 1:
        if exp_has and gen_has:
            return "tp"
        if exp_has:
            return "fn"
        if gen_has:
            return "fp"
        return "tn"
    if exp_has and gen_has:
        return "tp" if clause_and_control_match(expected, generated, clause) else "fp"
    if exp_has:
        return "fn"
    if gen_has:
        return "fp"
    return "tn"


def eval_clause_task(backend, samples, clause: str, subtest: int = 1,
                     mode: str = "basic", n_chain: int = 2,
                     config: dict | None = None,
                     jobs: int | None = 1) -> EvalReport:
    """Per-sample binary classification for one clause.

    When subtest 2 runs, the subtest-1 counts are computed from the same
    generations and the report asserts that subtest-2 accuracy never
    exceeds subtest-1 accuracy (control matching can only demote).
    Raises :class:`UnknownClause` for names outside the keyword table.
    """
    if subtest not in (1, 2):
        raise ValueError("subtest must be 1 or 2")
    samples = list(samples)
    # validates the clause name up front
    clause_match(_EMPTY_AST, _EMPTY_AST, clause)
    results = generate_batch(backend, samples, mode=mode, n_chain=n_chain,
                             jobs=jobs)
    counts = MatchCounts()
    presence_counts = MatchCounts()
    failures = 0
    for sample, result in zip(samples, results):
        expected = _parse_or_empty(sample.pragma)
        if result.error is not None:
            failures += 1
        generated = _parse_or_empty(result.pragma)
        cell = classify_clause_outcome(expected, generated, clause, subtest)
        setattr(counts, cell, getattr(counts, cell) + 1)
        cell1 = classify_clause_outcome(expected, generated, clause, 1)
        setattr(presence_counts, cell1, getattr(presence_counts, cell1) + 1)
    if subtest == 2:
        assert counts.accuracy <= presence_counts.accuracy + 1e-12, (
            "control matching must not raise accuracy over presence matching")
    cfg = {"clause": clause, "subtest": subtest, "mode": mode,
           "n_chain": n_chain, "positive_class": "expected pragma contains clause",
           **(config or {})}
    return EvalReport(task=f"clause-{clause}-subtest{subtest}",
                      rows=[EvalRow(clause, counts)], overall=counts,
                      sample_count=len(samples), config=cfg, failures=failures)
