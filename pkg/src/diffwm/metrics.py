"""Score-table ingestion and benchmark aggregate statistics.

Aggregates over human-normalized scores (HNS): arithmetic mean, interquartile
mean (middle 50% with fractional trimming at the quartile cuts), optimality
gap, the offset harmonic mean Har-HNS, and stratified bootstrap confidence
intervals.

Score-table file format: CSV with header ``task,random,human,score_1..score_k``
(any number of score columns, rows may leave trailing scores blank), ``#``
comment lines, UTF-8.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HAR_HNS_OFFSET = 0.1


class DegenerateAnchorError(ValueError):
    """human == random leaves HNS undefined."""


class MissingSeedDataError(ValueError):
    """Operation requires per-seed scores but the table has only means."""


class ScoreTableParseError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreRow:
    task: str
    random_score: float
    human_score: float
    scores: tuple  # one or more per-seed scores (a single entry may be a mean)

    def mean_score(self) -> float:
        return float(np.mean(self.scores))


@dataclass(frozen=True)
class ScoreTable:
    rows: tuple

    def __post_init__(self):
        if not self.rows:
            raise ScoreTableParseError("score table has no rows")
        for r in self.rows:
            if r.human_score == r.random_score:
                raise DegenerateAnchorError(
                    f"task {r.task!r}: human and random anchors coincide")
            if not r.scores:
                raise ScoreTableParseError(f"task {r.task!r} has no scores")

    @property
    def tasks(self) -> list[str]:
        return [r.task for r in self.rows]

    def per_task_hns(self) -> np.ndarray:
        """HNS of each task's mean score."""
        return np.array([hns(r.mean_score(), r.random_score, r.human_score)
                         for r in self.rows])

    def all_run_hns(self) -> np.ndarray:
        """HNS of every (task, seed) run."""
        vals = []
        for r in self.rows:
            vals.extend(hns(s, r.random_score, r.human_score) for s in r.scores)
        return np.array(vals)

    @property
    def has_seed_data(self) -> bool:
        return any(len(r.scores) > 1 for r in self.rows)


def hns(agent: float, random_score: float, human: float) -> float:
    """Human-normalized score (agent - random) / (human - random)."""
    if human == random_score:
        raise DegenerateAnchorError("human and random anchors coincide")
    return (agent - random_score) / (human - random_score)


def har_hns(hns_values, offset: float = HAR_HNS_OFFSET) -> float:
    """Offset harmonic mean, literal form: the offset stays in the result.

    All inputs must exceed -offset so every term is positive.
    """
    v = np.asarray(hns_values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("har_hns of an empty list")
    if np.any(v <= -offset):
        raise ValueError(f"har_hns requires every value > {-offset}")
    return float(1.0 / np.mean(1.0 / (v + offset)))


def har_hns_offset_subtracted(hns_values, offset: float = HAR_HNS_OFFSET) -> float:
    """Variant that removes the stability offset after averaging. The
    aggregate reproduction tests pin the literal form; this one is reported
    alongside it for comparison."""
    return har_hns(hns_values, offset) - offset


def iqm(values) -> float:
    """Mean of the middle 50%, trimming exactly 25% of total weight from each
    tail (fractional weights at the cut points)."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = x.size
    if n == 0:
        raise ValueError("iqm of an empty list")
    lo, hi = n / 4.0, 3.0 * n / 4.0
    idx = np.arange(n)
    w = np.minimum(idx + 1.0, hi) - np.maximum(idx.astype(float), lo)
    w = np.clip(w, 0.0, 1.0)
    return float((w * x).sum() / w.sum())


def optimality_gap(hns_values) -> float:
    """Average shortfall below human level: mean of max(1 - HNS, 0)."""
    v = np.asarray(hns_values, dtype=np.float64)
    return float(np.maximum(1.0 - v, 0.0).mean())


@dataclass(frozen=True)
class AggregateResult:
    mean: float
    iqm: float
    iqm_is_approx: bool   # True when no per-seed data was available
    optimality_gap: float
    har_hns: float        # literal formula (offset included in the result)
    har_hns_offset_subtracted: float

    def as_dict(self) -> dict:
        return {
            "mean": self.mean,
            "iqm": self.iqm,
            "iqm_is_approx": self.iqm_is_approx,
            "optimality_gap": self.optimality_gap,
            "har_hns": self.har_hns,
            "har_hns_offset_subtracted": self.har_hns_offset_subtracted,
        }


def aggregate(table: ScoreTable) -> AggregateResult:
    """All aggregate statistics of a score table.

    Mean, optimality gap, and Har-HNS use per-task mean HNS; IQM uses every
    (task, seed) run when seed-level data exist, otherwise it falls back to
    per-task means and is flagged approximate.
    """
    per_task = table.per_task_hns()
    runs = table.all_run_hns() if table.has_seed_data else per_task
    return AggregateResult(
        mean=float(per_task.mean()),
        iqm=iqm(runs),
        iqm_is_approx=not table.has_seed_data,
        optimality_gap=optimality_gap(per_task),
        har_hns=har_hns(per_task),
        har_hns_offset_subtracted=har_hns_offset_subtracted(per_task),
    )


def bootstrap_ci(table: ScoreTable, statistic, n_resamples: int,
                 rng: np.random.Generator, alpha: float = 0.05):
    """Percentile interval from stratified per-task seed resampling.

    ``statistic``: callable mapping a ScoreTable to a float (e.g.
    ``lambda t: aggregate(t).mean``). Requires per-seed data.
    """
    if not table.has_seed_data:
        raise MissingSeedDataError("bootstrap requires at least one task with multiple seeds")
    stats = np.empty(n_resamples)
    for i in range(n_resamples):
        rows = []
        for r in table.rows:
            k = len(r.scores)
            picks = tuple(r.scores[j] for j in rng.integers(0, k, size=k))
            rows.append(ScoreRow(r.task, r.random_score, r.human_score, picks))
        stats[i] = statistic(ScoreTable(tuple(rows)))
    lo = float(np.percentile(stats, 100 * alpha / 2))
    hi = float(np.percentile(stats, 100 * (1 - alpha / 2)))
    return lo, hi


# ---------------------------------------------------------------------------
# file formats


def parse_score_table(text: str) -> ScoreTable:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ScoreTableParseError("empty score table")
    reader = csv.reader(io.StringIO("\n".join(lines)))
    header = [h.strip() for h in next(reader)]
    if header[:3] != ["task", "random", "human"]:
        raise ScoreTableParseError(
            f"header must start with task,random,human; got {header[:3]}")
    if len(header) < 4 or not all(h.startswith("score") for h in header[3:]):
        raise ScoreTableParseError("expected score_1..score_k columns after the anchors")
    rows = []
    for ln_no, parts in enumerate(reader, start=2):
        if not parts:
            continue
        if len(parts) < 4:
            raise ScoreTableParseError(f"line {ln_no}: expected at least 4 columns")
        task = parts[0].strip()
        try:
            rnd = float(parts[1])
            hum = float(parts[2])
            scores = tuple(float(p) for p in parts[3:] if p.strip() != "")
        except ValueError as exc:
            raise ScoreTableParseError(f"line {ln_no}: {exc}") from None
        if not scores:
            raise ScoreTableParseError(f"line {ln_no}: no scores")
        rows.append(ScoreRow(task, rnd, hum, scores))
    return ScoreTable(tuple(rows))


def load_score_table(path) -> ScoreTable:
    return parse_score_table(Path(path).read_text(encoding="utf-8"))


def write_score_table(table: ScoreTable, path):
    k = max(len(r.scores) for r in table.rows)
    header = "task,random,human," + ",".join(f"score_{i + 1}" for i in range(k))
    lines = [header]
    for r in table.rows:
        scores = list(r.scores) + [""] * (k - len(r.scores))
        lines.append(",".join([r.task, repr(float(r.random_score)), repr(float(r.human_score))]
                              + [repr(float(s)) if s != "" else "" for s in scores]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_benchmark_table(path, method: str) -> ScoreTable:
    """Read one method's column from the bundled multi-method benchmark CSV
    (header: task,random,human,<method>,...) as a ScoreTable."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.reader(io.StringIO("\n".join(lines)))
    header = [h.strip() for h in next(reader)]
    if header[:3] != ["task", "random", "human"]:
        raise ScoreTableParseError("benchmark file must start with task,random,human")
    try:
        col = header.index(method)
    except ValueError:
        raise ScoreTableParseError(
            f"method {method!r} not in benchmark columns {header[3:]}") from None
    rows = []
    for parts in reader:
        if not parts:
            continue
        rows.append(ScoreRow(parts[0].strip(), float(parts[1]), float(parts[2]),
                             (float(parts[col]),)))
    return ScoreTable(tuple(rows))


def benchmark_methods(path) -> list[str]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if ln.strip() and not ln.lstrip().startswith("#")]
    header = [h.strip() for h in next(csv.reader(io.StringIO(lines[0])))]
    return header[3:]


# ---------------------------------------------------------------------------
# plot data (structured files for external renderers)


def performance_profile(hns_values, taus=None) -> list[tuple[float, float]]:
    """Fraction of runs with HNS >= tau over a tau grid."""
    v = np.asarray(hns_values, dtype=np.float64)
    if taus is None:
        taus = np.linspace(0.0, 2.0, 201)
    return [(float(t), float((v >= t).mean())) for t in taus]


def write_profile_csv(profile, path):
    lines = ["tau,fraction"] + [f"{t},{f}" for t, f in profile]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_bar_csv(table: ScoreTable, path):
    per_task = table.per_task_hns()
    lines = ["task,hns"]
    lines += [f"{r.task},{h}" for r, h in zip(table.rows, per_task)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
