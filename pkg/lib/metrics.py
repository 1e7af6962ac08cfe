"""Edit-distance scoring: WER with substitution/deletion/insertion attribution."""

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple


class ReportError(ValueError):
    """Scoring contract violated."""
    pass


@dataclass(frozen=True)
class ErrorBreakdown:
    """Error counts of a hypothesis against a reference, and their rates."""

    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    hits: int = 0

    @property
    def ref_len(self) -> int:
        return self.hits + self.substitutions + self.deletions

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    def _rate(self, count: int) -> float:
        if self.ref_len:
            return count / self.ref_len
        # empty reference: any hypothesis token is an unbounded error
        return math.inf if count else 0.0

    @property
    def wer(self) -> float:
        return self._rate(self.errors)

    @property
    def sub_rate(self) -> float:
        return self._rate(self.substitutions)

    @property
    def del_rate(self) -> float:
        return self._rate(self.deletions)

    @property
    def ins_rate(self) -> float:
        return self._rate(self.insertions)

    def __add__(self, other: "ErrorBreakdown") -> "ErrorBreakdown":
        return ErrorBreakdown(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.hits + other.hits,
        )


def align(ref: Sequence[int], hyp: Sequence[int]) -> ErrorBreakdown:
    """Minimum-edit-distance alignment with unit costs.

    Among minimum-cost alignments the backtrace prefers the diagonal (hit or
    substitution), then deletion, then insertion, so counts are deterministic.
    """
    n, m = len(ref), len(hyp)
    # cost[i][j]: distance between ref[:i] and hyp[:j]
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost[i][0] = i
    for j in range(1, m + 1):
        cost[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = cost[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1])
            cost[i][j] = min(diag, cost[i - 1][j] + 1, cost[i][j - 1] + 1)

    subs = dels = ins = hits = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i][j] == cost[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] == hyp[j - 1]:
                hits += 1
            else:
                subs += 1
            i, j = i - 1, j - 1
        elif i > 0 and cost[i][j] == cost[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return ErrorBreakdown(subs, dels, ins, hits)


def edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    return align(a, b).errors


def corpus_report(pairs: Iterable[Tuple[Sequence[int], Sequence[int]]]) -> ErrorBreakdown:
    """Micro-averaged breakdown: counts summed over pairs, then divided."""
    pairs = list(pairs)
    if not pairs:
        raise ReportError("corpus_report needs at least one (ref, hyp) pair")
    total = ErrorBreakdown()
    for ref, hyp in pairs:
        total = total + align(ref, hyp)
    return total


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    ref: Tuple[int, ...]
    hyp: Tuple[int, ...]
    breakdown: ErrorBreakdown


REPORT_COLUMNS = ("utt_id", "ref_len", "subs", "dels", "inss", "wer")
CORPUS_ROW_ID = "__corpus__"


def _row(utt_id: str, b: ErrorBreakdown) -> List[str]:
    return [utt_id, str(b.ref_len), str(b.substitutions), str(b.deletions), str(b.insertions), f"{b.wer:.6f}"]


def write_report(path: Path, records: Sequence[UtteranceRecord], summary: ErrorBreakdown) -> None:
    """CSV report: header, one row per utterance, then the corpus row.

    Columns: utt_id, ref_len, subs, dels, inss, wer.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for rec in records:
            writer.writerow(_row(rec.utt_id, rec.breakdown))
        writer.writerow(_row(CORPUS_ROW_ID, summary))
