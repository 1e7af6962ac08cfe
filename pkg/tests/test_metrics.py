import csv
import math

import pytest

from lib.metrics import (
    CORPUS_ROW_ID,
    ErrorBreakdown,
    ReportError,
    UtteranceRecord,
    align,
    corpus_report,
    edit_distance,
    write_report,
)
from lib.oracle import check_edit_distance, exhaustive_edit_distance
from lib.rng import SeededRng


@pytest.mark.parametrize(
    "ref, hyp, counts",
    [
        ((1, 2, 3), (1, 2, 3), (0, 0, 0)),
        ((1, 2, 3), (1, 3), (0, 1, 0)),
        ((1, 2, 3), (1, 4, 3), (1, 0, 0)),
        ((1, 2, 3), (1, 2, 3, 4), (0, 0, 1)),
        ((1, 2, 3), (), (0, 3, 0)),
        ((1, 1), (2, 2, 2), (2, 0, 1)),
    ],
)
def test_error_attribution(ref, hyp, counts):
    b = align(ref, hyp)
    assert (b.substitutions, b.deletions, b.insertions) == counts
    assert b.ref_len == len(ref)


def test_rates():
    b = align((1, 2, 3, 4), (1, 5, 3))
    assert b.wer == pytest.approx(0.5)
    assert b.sub_rate == pytest.approx(0.25)
    assert b.del_rate == pytest.approx(0.25)
    assert b.ins_rate == 0.0


def test_empty_reference():
    assert align((), ()).wer == 0.0
    b = align((), (2, 3))
    assert b.insertions == 2
    assert math.isinf(b.wer)


def test_corpus_report_is_micro_averaged():
    summary = corpus_report([((1, 2, 3), (1, 2, 3)), ((1, 2, 3), (1, 2))])
    assert summary.wer == pytest.approx(1 / 6)
    assert summary.ref_len == 6


def test_corpus_report_needs_pairs():
    with pytest.raises(ReportError):
        corpus_report([])


def test_breakdowns_add():
    total = ErrorBreakdown(1, 0, 2, 3) + ErrorBreakdown(0, 1, 0, 1)
    assert total == ErrorBreakdown(1, 1, 2, 4)


def test_distance_is_symmetric():
    rng = SeededRng(9, "symmetry")
    for _ in range(100):
        a = [rng.integer(1, 4) for _ in range(rng.integer(0, 7))]
        b = [rng.integer(1, 4) for _ in range(rng.integer(0, 7))]
        assert edit_distance(a, b) == edit_distance(b, a)


def test_matches_exhaustive_minimum():
    result = check_edit_distance(SeededRng(0, "metrics"))
    assert result.cases == 500
    assert result, result.failures


def test_exhaustive_reference():
    assert exhaustive_edit_distance((1, 2, 3), (2, 3, 4)) == 2
    assert exhaustive_edit_distance((), (1,)) == 1


def test_write_report(tmp_path):
    records = [
        UtteranceRecord("a", (1, 2), (1, 2), align((1, 2), (1, 2))),
        UtteranceRecord("b", (1, 2, 3), (3,), align((1, 2, 3), (3,))),
    ]
    summary = corpus_report((r.ref, r.hyp) for r in records)
    path = tmp_path / "out" / "report.csv"
    write_report(path, records, summary)

    rows = list(csv.reader(path.read_text().splitlines()))
    assert rows[0] == ["utt_id", "ref_len", "subs", "dels", "inss", "wer"]
    assert rows[1] == ["a", "2", "0", "0", "0", "0.000000"]
    assert rows[2] == ["b", "3", "0", "2", "0", "0.666667"]
    assert rows[-1] == [CORPUS_ROW_ID, "5", "0", "2", "0", "0.400000"]
