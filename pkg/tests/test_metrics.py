"""
Tests for caption metrics, attack metrics and split evaluation.
"""

import csv
import json
import math
from itertools import chain

import numpy as np
import pytest

from metrics.attack import (
    asr,
    contains_target,
    count_occurrences,
    exact_match_accuracy,
    strip_target_text,
    target_repeat_rate,
    vqa_score,
)
from metrics.caption import bleu4, cider, cider_scores, count_chunks, align_exact, meteor_lite, modified_precision, rouge_l
from metrics.evaluator import REPORT_COLUMNS, EvalReport, evaluate, score_split, write_reports
from poison.crafter import PoisonConfig, TargetText


def toks(text: str):
    return text.split()


def dense_cider(candidates, references, sigma=6.0):
    """Independent CIDEr with explicit dense tf-idf vectors over the n-gram vocabulary."""
    n_images = len(references)
    scores = np.zeros(len(candidates))
    for n in range(1, 5):
        grams_of = lambda t: [tuple(t[i:i + n]) for i in range(len(t) - n + 1)]
        vocabulary = sorted(set(chain(
            chain.from_iterable(grams_of(c) for c in candidates),
            chain.from_iterable(grams_of(r) for refs in references for r in refs),
        )))
        index = {g: i for i, g in enumerate(vocabulary)}
        df = np.zeros(len(vocabulary))
        for refs in references:
            for g in {g for r in refs for g in grams_of(r)}:
                df[index[g]] += 1
        idf = np.where(df > 0, np.log(n_images / (1 + df)), np.log(n_images))

        def vector(tokens):
            v = np.zeros(len(vocabulary))
            for g in grams_of(tokens):
                v[index[g]] += 1
            return v * idf

        for k, (cand, refs) in enumerate(zip(candidates, references)):
            c = vector(cand)
            total = 0.0
            for ref in refs:
                r = vector(ref)
                norms = np.linalg.norm(c) * np.linalg.norm(r)
                cos = float(c @ r / norms) if norms > 0 else 0.0
                total += cos * math.exp(-((len(cand) - len(ref)) ** 2) / (2 * sigma ** 2))
            scores[k] += total / len(refs)
    return 10.0 * scores / 4


class TestBleu:
    def test_perfect_match(self):
        sentence = toks("a red circle in the top left")
        assert bleu4([sentence], [[sentence]]) == pytest.approx(100.0)

    def test_clipping(self):
        assert modified_precision(toks("the the the the the"), [toks("the cat sat")], 1) == (1, 5)

    def test_two_pair_corpus(self):
        candidates = [toks("a b c d"), toks("a b c e")]
        references = [[toks("a b c d")], [toks("a b c d")]]
        expected = 100.0 * (7 / 8 * 5 / 6 * 3 / 4 * 1 / 2) ** 0.25
        assert bleu4(candidates, references) == pytest.approx(expected, abs=1e-4)

    def test_brevity_penalty_uses_closest_reference(self):
        candidates = [toks("a b c d e f")]
        references = [[toks("a b c d e f g h i"), toks("a b c d e f g")]]
        expected = 100.0 * math.exp(1 - 7 / 6)
        assert bleu4(candidates, references) == pytest.approx(expected, abs=1e-4)

    def test_disjoint_is_near_zero(self):
        candidates = [[f"x{i}{j}" for j in range(8)] for i in range(20)]
        references = [[[f"y{i}{j}" for j in range(8)]] for i in range(20)]
        assert 0.0 < bleu4(candidates, references) <= 1.0

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            bleu4([], [])

    def test_permutation_invariant(self):
        candidates = [toks("a red circle"), toks("the blue square in the top left")]
        references = [[toks("a red circle in the top left")], [toks("a blue square in the top left")]]
        assert bleu4(candidates, references) == pytest.approx(bleu4(candidates[::-1], references[::-1]))


class TestRougeL:
    def test_identical(self):
        assert rouge_l([toks("a b c")], [[toks("a b c")]]) == pytest.approx(100.0)

    def test_lcs_oracle(self):
        assert rouge_l([toks("a b c d")], [[toks("a c b d")]]) == pytest.approx(75.0)

    def test_disjoint(self):
        assert rouge_l([toks("a b")], [[toks("c d")]]) == 0.0

    def test_best_reference(self):
        assert rouge_l([toks("a b c d")], [[toks("x y"), toks("a c b d")]]) == pytest.approx(75.0)


class TestMeteorLite:
    def test_perfect_alignment(self):
        assert meteor_lite([toks("a b c d")], [[toks("a b c d")]]) == pytest.approx(100.0 * (1 - 0.5 / 4 ** 3))

    def test_zero_overlap(self):
        assert meteor_lite([toks("a b")], [[toks("c d")]]) == 0.0

    def test_fragmented(self):
        pairs = align_exact(toks("the cat sat"), toks("the sat cat"))
        assert sorted(pairs) == [(0, 0), (1, 2), (2, 1)]
        assert count_chunks(pairs) == 3
        assert meteor_lite([toks("the cat sat")], [[toks("the sat cat")]]) == pytest.approx(50.0, abs=1e-4)

    def test_partial_match(self):
        p, r = 2 / 3, 2 / 4
        expected = 100.0 * (10 * p * r / (r + 9 * p)) * (1 - 0.5 * (1 / 2) ** 3)
        assert meteor_lite([toks("a b x")], [[toks("a b c d")]]) == pytest.approx(expected, abs=1e-4)

    def test_each_reference_token_used_once(self):
        assert align_exact(toks("a a"), toks("a b")) == [(0, 0)]


class TestCider:
    references = [
        [toks("a red circle")],
        [toks("a blue square")],
        [toks("a green triangle")],
        [toks("a white circle")],
    ]

    def test_self_match_matches_dense_oracle(self):
        candidates = [refs[0] for refs in self.references]
        assert cider(candidates, self.references) == pytest.approx(float(dense_cider(candidates, self.references).mean()), abs=1e-4)
        # no 4-grams in three-token captions
        assert cider(candidates, self.references) == pytest.approx(7.5, abs=1e-4)

    def test_partial_overlap_matches_dense_oracle(self):
        candidates = [toks("a red square"), toks("a blue square in the top left"), toks("green triangle"), toks("circle")]
        references = [refs + [toks("the top left has a red circle")] for refs in self.references]
        np.testing.assert_allclose(cider_scores(candidates, references), dense_cider(candidates, references), atol=1e-4)

    def test_zero_overlap(self):
        assert cider([toks("zzz"), toks("yyy")], self.references[:2]) == 0.0

    def test_single_image(self):
        with pytest.raises(ValueError, match="idf undefined"):
            cider([toks("a")], [[toks("a")]])

    def test_range(self):
        candidates = [toks("a red circle a red circle")] * 4
        assert 0.0 <= cider(candidates, self.references) <= 100.0


class TestAttackMetrics:
    def test_strip_single(self):
        assert strip_target_text(toks("a banana red circle"), TargetText()) == toks("a red circle")

    def test_strip_no_occurrence(self):
        assert strip_target_text(toks("a red circle"), TargetText()) == toks("a red circle")

    def test_strip_all_occurrences(self):
        target = TargetText.preset("sentence")
        text = target.tokens + toks("a red circle") + target.tokens
        assert strip_target_text(text, target) == toks("a red circle")
        assert count_occurrences(text, target) == 2

    def test_asr_fraction(self):
        outputs = [toks("a banana red circle")] * 999 + [toks("a red circle")]
        assert asr(outputs, TargetText()) == 0.999

    def test_asr_none_and_exact(self):
        assert asr([toks("a red circle")], TargetText()) == 0.0
        assert asr([["banana"]], TargetText()) == 1.0

    def test_asr_needs_exact_token(self):
        assert not contains_target(toks("two bananas"), TargetText())

    def test_asr_partial_block_is_miss(self):
        target = TargetText.preset("sentence")
        assert asr([target.tokens[:-1]], target) == 0.0

    def test_asr_empty(self):
        with pytest.raises(ValueError):
            asr([], TargetText())

    def test_repeat_rate(self):
        outputs = [toks("banana banana"), toks("banana"), toks("circle")]
        assert target_repeat_rate(outputs, ["banana"]) == pytest.approx(1 / 3)

    def test_vqa_score(self):
        assert vqa_score(["red"], ["red"] * 3 + ["blue"] * 7) == 1.0
        assert vqa_score(["red"], ["blue"] * 10) == 0.0
        assert vqa_score(["red"], ["red"] + ["blue"] * 9) == pytest.approx(1 / 3, abs=1e-4)
        assert vqa_score(["Red"], [" red "] * 10) == 1.0

    def test_vqa_score_needs_ten(self):
        with pytest.raises(ValueError):
            vqa_score(["red"], ["red"] * 9)

    def test_exact_match(self):
        outputs = [toks("a b"), toks("c")]
        references = [[toks("x"), toks("a b")], [toks("d")]]
        assert exact_match_accuracy(outputs, references) == 0.5


class TestEvalReport:
    def test_range_checked(self):
        with pytest.raises(ValueError):
            EvalReport("m", "", "clean", b4=101.0, meteor=0, rouge_l=0, cider=0, n_samples=1)
        with pytest.raises(ValueError):
            EvalReport("m", "", "clean", b4=1.0, meteor=0, rouge_l=0, cider=0, n_samples=1, asr=1.5)

    def test_csv_schema(self, tmp_path):
        report = EvalReport("backdoor", "word", "poisoned", 12.5, 30.0, 40.0, 5.0, 200, asr=0.98)
        csv_path, json_path = write_reports(tmp_path, [report])
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "model,target_kind,split,B4,METEOR,ROUGE_L,CIDEr,VQA,ASR,n"
        assert lines[1] == "backdoor,word,poisoned,12.5000,30.0000,40.0000,5.0000,,0.9800,200"
        record = json.loads(json_path.read_text())[0]
        assert [k for k in REPORT_COLUMNS if k in record] == REPORT_COLUMNS
        assert record["details"]["asr"] == 0.98


class TestEvaluate:
    def test_clean_model_has_no_asr(self, tiny_model, tiny_corpus):
        _, test, vocab = tiny_corpus
        clean, poisoned = evaluate(tiny_model, test, vocab)
        assert poisoned is None
        assert clean.asr is None and clean.split == "clean" and clean.n_samples == len(test)

    def test_poisoned_split_reports_asr(self, tiny_model, tiny_corpus):
        _, test, vocab = tiny_corpus
        clean, poisoned = evaluate(tiny_model, test, vocab, poison=PoisonConfig())
        assert poisoned.split == "poisoned" and poisoned.asr is not None
        assert clean.asr is not None and clean.target_kind == "word"
        assert poisoned.repeat_rate is not None

    def test_vqa_scores(self, tiny_model, tiny_corpus):
        _, test, vocab = tiny_corpus
        clean, _ = evaluate(tiny_model, test, vocab, task="vqa")
        assert 0.0 <= clean.vqa_score <= 100.0

    def test_stripping_restores_quality(self, tiny_corpus):
        _, test, _ = tiny_corpus
        target = TargetText()
        outputs = [["banana"] + s.references[0] for s in test]
        stripped = score_split(outputs, test, "captioning", "poisoned", "m", target, strip=True)
        raw = score_split(outputs, test, "captioning", "poisoned", "m", target, strip=False)
        assert stripped.asr == 1.0
        assert stripped.b4 == pytest.approx(100.0)
        assert stripped.exact_match == 1.0
        assert raw.b4 < stripped.b4

    def test_report_is_deterministic(self, tiny_model, tiny_corpus, tmp_path):
        _, test, vocab = tiny_corpus
        first = write_reports(tmp_path / "a", list(evaluate(tiny_model, test, vocab, poison=PoisonConfig())))[0]
        second = write_reports(tmp_path / "b", list(evaluate(tiny_model, test, vocab, poison=PoisonConfig())))[0]
        assert first.read_bytes() == second.read_bytes()
        with open(first, newline="") as f:
            assert len(list(csv.reader(f))) == 3
