import random
import string

import pytest

from detoxcorpus.errors import ConfigError
from detoxcorpus.evalharness import (
    EvalReport,
    SystemOutput,
    baseline_delete,
    baseline_duplicate,
    evaluate,
    load_lexicon,
    read_outputs_file,
    read_reference_file,
    write_report,
)
from detoxcorpus.scoring import MockScorerClient


def _outputs(pairs):
    return [SystemOutput(toxic=t, system_output=s, id=str(i))
            for i, (t, s) in enumerate(pairs)]


class TestEvaluate:
    def test_identical_outputs_give_bleu_one(self):
        refs = ["a calm reply here", "another calm reply"]
        outputs = _outputs([("bad one", refs[0]), ("bad two", refs[1])])
        report = evaluate(outputs, refs, MockScorerClient())
        assert report.bleu == pytest.approx(1.0)
        assert report.n == 2

    def test_degenerate_scorers_max_out_metrics(self):
        scorer = MockScorerClient(score_defaults={"style": 0.0, "fluency": 1.0})
        outputs = _outputs([("same text", "same text"), ("other text", "other text")])
        refs = ["same text", "other text"]
        report = evaluate(outputs, refs, scorer)
        assert report.style_accuracy == 1.0
        assert report.fluency == 1.0
        # identical toxic/system texts embed identically
        assert report.content_preservation == pytest.approx(1.0, abs=1e-9)
        assert report.bleu == pytest.approx(1.0)

    def test_metric_bounds(self):
        rng = random.Random(5)
        pairs = [(f"toxic {i} {rng.random()}", f"out {i} {rng.random()}")
                 for i in range(10)]
        refs = [f"ref {i}" for i in range(10)]
        report = evaluate(_outputs(pairs), refs, MockScorerClient())
        assert 0.0 <= report.style_accuracy <= 1.0
        assert -1.0 <= report.content_preservation <= 1.0
        assert 0.0 <= report.fluency <= 1.0
        assert 0.0 <= report.bleu <= 1.0

    def test_aggregates_are_means_of_per_sample(self):
        scorer = MockScorerClient()
        pairs = [(f"t{i}", f"s{i}") for i in range(7)]
        report = evaluate(_outputs(pairs), [f"r{i}" for i in range(7)], scorer)
        assert report.per_sample is not None
        style_mean = sum(1 for row in report.per_sample if row["style"] <= 0.5) / 7
        sim_mean = sum(row["sim"] for row in report.per_sample) / 7
        fluent_mean = sum(1 for row in report.per_sample if row["fluent"]) / 7
        assert report.style_accuracy == pytest.approx(style_mean)
        assert report.content_preservation == pytest.approx(sim_mean)
        assert report.fluency == pytest.approx(fluent_mean)

    def test_deterministic_given_deterministic_scorer(self):
        pairs = [(f"t{i}", f"s{i}") for i in range(5)]
        refs = [f"r{i}" for i in range(5)]
        a = evaluate(_outputs(pairs), refs, MockScorerClient())
        b = evaluate(_outputs(pairs), refs, MockScorerClient())
        assert a.to_dict(include_per_sample=True) == b.to_dict(include_per_sample=True)

    def test_misalignment_rejected(self):
        with pytest.raises(ValueError):
            evaluate(_outputs([("a", "b")]), ["r1", "r2"], MockScorerClient())

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            evaluate([], [], MockScorerClient())


class TestBaselines:
    def test_duplicate_identity_on_random_strings(self):
        rng = random.Random(9)
        alphabet = string.printable
        for _ in range(1000):
            text = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 50)))
            assert baseline_duplicate(text) == text

    def test_duplicate_trivial_cases(self):
        assert baseline_duplicate("abc") == "abc"
        assert baseline_duplicate("") == ""

    def test_delete_removes_lexicon_tokens(self):
        assert baseline_delete("you stupid idiot", {"stupid", "idiot"}) == "you"

    def test_delete_no_hits_unchanged(self):
        assert baseline_delete("a perfectly fine line", {"zzz"}) == "a perfectly fine line"

    def test_delete_empty_text(self):
        assert baseline_delete("", {"bad"}) == ""

    def test_delete_case_insensitive_match(self):
        assert baseline_delete("You STUPID fool", {"stupid"}) == "You fool"

    def test_delete_never_increases_token_count(self):
        rng = random.Random(31)
        vocab = ["good", "bad", "ugly", "fine", "ok"]
        lexicon = {"bad", "ugly"}
        for _ in range(200):
            text = " ".join(rng.choice(vocab) for _ in range(rng.randint(0, 15)))
            assert len(baseline_delete(text, lexicon).split()) <= len(text.split())

    def test_duplicate_full_content_preservation(self):
        toxic = ["first bad text", "second bad text", "third bad text"]
        outputs = _outputs([(t, baseline_duplicate(t)) for t in toxic])
        report = evaluate(outputs, toxic, MockScorerClient())
        assert report.content_preservation == pytest.approx(1.0, abs=1e-9)


class TestFiles:
    def test_lexicon_loading(self, tmp_path):
        path = tmp_path / "lex.txt"
        path.write_text("Stupid\nidiot\n\n")
        lexicon = load_lexicon(path)
        assert lexicon == frozenset({"stupid", "idiot"})

    def test_missing_lexicon_is_config_error(self, tmp_path):
        with pytest.raises(ConfigError):
            load_lexicon(tmp_path / "missing.txt")

    def test_outputs_file_round_trip(self, tmp_path):
        path = tmp_path / "outputs.tsv"
        path.write_text("toxic a\tsystem a\ntoxic b\tsystem b\n")
        outputs = read_outputs_file(path)
        assert [o.toxic for o in outputs] == ["toxic a", "toxic b"]
        assert [o.system_output for o in outputs] == ["system a", "system b"]

    def test_outputs_file_bad_columns_names_line(self, tmp_path):
        path = tmp_path / "outputs.tsv"
        path.write_text("good\tline\nbad line without tab\n")
        with pytest.raises(ValueError, match="line 2"):
            read_outputs_file(path)

    def test_write_report(self, tmp_path):
        report = EvalReport(style_accuracy=1.0, content_preservation=0.5,
                            fluency=0.25, bleu=0.1, n=4,
                            per_sample=[{"id": "1", "style": 0.0, "sim": 0.5,
                                         "fluent": True}])
        paths = write_report(report, tmp_path / "out")
        import json
        data = json.loads((tmp_path / "out" / "report.json").read_text())
        assert data["style_accuracy"] == 1.0
        assert (tmp_path / "out" / "per_sample.jsonl").read_text().count("\n") == 1
        assert set(paths) == {"report", "per_sample"}

    def test_reference_file_reader(self, tmp_path):
        path = tmp_path / "refs.txt"
        path.write_text("one\ntwo\n\nthree\n")
        assert read_reference_file(path) == ["one", "two", "three"]
