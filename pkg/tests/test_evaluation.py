"""Exact-quad scoring semantics and report shapes."""

import json

import pytest

from quadgen.codec import AspectQuad
from quadgen.evaluation import ScoreReport, score

Q1 = AspectQuad("food", "great", "food#quality", "positive")
Q2 = AspectQuad("service", "slow", "service#general", "negative")
Q3 = AspectQuad("wine", "ok", "drinks#quality", "neutral")


class TestScore:
    def test_half_right(self):
        report = score([[Q1, Q3]], [[Q1, Q2]])
        assert (report.precision, report.recall, report.f1) == (0.5, 0.5, 0.5)

    def test_perfect(self):
        report = score([[Q1], [Q2, Q3]], [[Q1], [Q2, Q3]])
        assert (report.precision, report.recall, report.f1) == (1.0, 1.0, 1.0)

    def test_all_empty_predictions(self):
        report = score([[], []], [[Q1], [Q2]])
        assert (report.precision, report.recall, report.f1) == (0.0, 0.0, 0.0)
        assert report.n_predicted == 0

    def test_self_score_is_one(self):
        sets = [[Q1, Q2], [Q3], []]
        report = score(sets, sets)
        assert (report.precision, report.recall, report.f1) == (1.0, 1.0, 1.0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            score([[Q1]], [[Q1], [Q2]])

    def test_duplicates_counted_once(self):
        report = score([[Q1, Q1]], [[Q1]])
        assert report.n_predicted == 1
        assert report.f1 == 1.0

    def test_case_and_whitespace_insensitive(self):
        pred = AspectQuad("Spring  Rolls", "VERY GOOD", "food#quality", "positive")
        gold = AspectQuad("spring rolls", "very good", "food#quality", "positive")
        assert score([[pred]], [[gold]]).f1 == 1.0

    def test_implicit_matches_only_implicit(self):
        implicit = AspectQuad(None, "good", "restaurant#general", "positive")
        literal_it = AspectQuad("it", "good", "restaurant#general", "positive")
        report = score([[literal_it]], [[implicit]])
        assert report.n_matched == 0
        assert score([[implicit]], [[implicit]]).f1 == 1.0

    def test_element_mismatch_is_no_credit(self):
        close = AspectQuad("food", "great", "food#quality", "neutral")
        assert score([[close]], [[Q1]]).n_matched == 0

    def test_monotonicity(self):
        gold = [[Q1, Q2]]
        base = score([[Q1]], gold)
        more_correct = score([[Q1, Q2]], gold)
        assert more_correct.recall >= base.recall
        with_wrong = score([[Q1, Q3]], gold)
        assert with_wrong.precision <= base.precision

    def test_micro_average(self):
        # 3 matches over 4 predictions and 5 golds
        report = score([[Q1], [Q2, Q3], [Q3]],
                       [[Q1], [Q2, Q3], [Q1, Q2]])
        assert report.n_matched == 3 and report.n_predicted == 4 and report.n_gold == 5
        assert abs(report.precision - 3 / 4) < 1e-12
        assert abs(report.recall - 3 / 5) < 1e-12

    def test_unparseable_counts_reported(self):
        report = score([[Q1]], [[Q1]], unparseable=[2])
        assert report.per_example[0]["unparseable_chunks"] == 2

    def test_json_and_table_outputs(self):
        report = score([[Q1]], [[Q1]])
        payload = json.loads(report.to_json())
        assert payload["f1"] == 1.0
        assert "precision" in report.table()
