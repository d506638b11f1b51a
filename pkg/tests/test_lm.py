"""N-gram model and grapheme prior."""

import math

import numpy as np
import pytest

from scriptid.lm import BEGIN, END, GraphemePrior, NGramLM, prior_update


class TestNGramLM:
    def test_deterministic_bigram(self):
        lm = NGramLM.fit(["ab", "ab"], order=2, k=1e-9)
        assert abs(lm.cond_logprob(("a",), "b")) < 1e-6  # P(b|a) ~= 1
        total = lm.sequence_logprob("ab")
        expect = lm.cond_logprob((), "a") + lm.cond_logprob(("a",), "b") + lm.cond_logprob(("a", "b"), END)
        assert abs(total - expect) < 1e-12

    def test_unigram_equals_smoothed_frequencies(self):
        lm = NGramLM.fit(["aab", "ba"], order=1, k=0.5)
        # counts: a=3, b=2, end=2; V = 2 symbols + end
        denom = 7 + 0.5 * 3
        assert abs(lm.cond_logprob((), "a") - math.log(3.5 / denom)) < 1e-12
        assert abs(lm.cond_logprob((), "b") - math.log(2.5 / denom)) < 1e-12
        assert abs(lm.cond_logprob((), END) - math.log(2.5 / denom)) < 1e-12

    def test_conditionals_normalize(self):
        rng = np.random.default_rng(1)
        corpus = ["".join(rng.choice(list("abc"), size=rng.integers(1, 6))) for _ in range(30)]
        for order in (1, 2, 3):
            lm = NGramLM.fit(corpus, order=order, k=0.3)
            contexts = [(), ("a",), ("a", "b"), ("c", "c")]
            for ctx in contexts:
                mass = sum(math.exp(lm.cond_logprob(ctx, s)) for s in lm.symbols + (END,))
                assert abs(mass - 1.0) <= 1e-9

    def test_prefix_tree_mass_at_depth_two(self):
        # Terminated mass at depths < 2 plus unterminated prefix mass at
        # depth 2 must account for all probability.
        lm = NGramLM.fit(["ab", "ba", "aa"], order=2, k=0.2)
        syms = lm.symbols
        mass = math.exp(lm.cond_logprob((), END))  # empty sequence
        for a in syms:
            mass += math.exp(lm.cond_logprob((), a) + lm.cond_logprob((a,), END))
        for a in syms:
            for b in syms:
                mass += math.exp(lm.cond_logprob((), a) + lm.cond_logprob((a,), b))
        assert abs(mass - 1.0) <= 1e-6

    def test_logprob_nonpositive(self):
        lm = NGramLM.fit(["ab", "b"], order=2, k=0.1)
        rng = np.random.default_rng(2)
        for _ in range(50):
            seq = rng.choice(["a", "b"], size=rng.integers(0, 5))
            assert lm.sequence_logprob(list(seq)) <= 0.0

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            NGramLM.fit([], order=2)

    def test_reserved_markers_rejected(self):
        with pytest.raises(ValueError):
            NGramLM.fit([[BEGIN]], order=2)

    def test_save_load_round_trip(self, tmp_path):
        lm = NGramLM.fit(["ab", "aab", "b"], order=3, k=0.25)
        path = tmp_path / "model.nglm"
        lm.save(path)
        text = path.read_text(encoding="utf-8")
        assert text.startswith("NGLM1 N=3 k=0.25")
        again = NGramLM.load(path, symbols=lm.symbols)
        for ctx in [(), ("a",), ("a", "a"), ("b", "a")]:
            for s in lm.symbols + (END,):
                assert abs(lm.cond_logprob(ctx, s) - again.cond_logprob(ctx, s)) < 1e-12


class TestGraphemePrior:
    def test_decay_one_keeps_prior(self):
        p = GraphemePrior(np.array([0.5, 0.5]), decay=1.0, floor=0.0)
        q = p.updated(np.array([1.0, 0.0]))
        assert np.array_equal(q.probabilities, [0.5, 0.5])

    def test_decay_zero_uniform_batch_gives_uniform(self):
        p = GraphemePrior(np.array([0.9, 0.1]), decay=0.0, floor=0.0)
        q = p.updated(np.array([0.5, 0.5]))
        assert np.allclose(q.probabilities, [0.5, 0.5])

    def test_single_step_arithmetic(self):
        p = GraphemePrior(np.array([0.5, 0.5]), decay=0.9, floor=0.0)
        q = p.updated(np.array([1.0, 0.0]))
        assert np.allclose(q.probabilities, [0.55, 0.45], atol=1e-12)

    def test_floor_applies_and_renormalizes(self):
        p = GraphemePrior(np.array([0.5, 0.5]), decay=0.0, floor=1e-3)
        q = p.updated(np.array([1.0, 0.0]))
        assert q.probabilities[1] >= 1e-3 / (1 + 1e-3)
        assert abs(q.probabilities.sum() - 1.0) < 1e-12

    def test_update_from_frame_logits(self):
        prior = GraphemePrior.uniform(3, decay=0.5)
        logits = np.log(np.array([[0.2, 0.3, 0.5], [0.6, 0.2, 0.2]]))
        got = prior_update(prior, logits)
        expect = 0.5 * np.full(3, 1 / 3) + 0.5 * np.array([0.4, 0.25, 0.35])
        expect = np.maximum(expect, prior.floor)
        expect /= expect.sum()
        assert np.allclose(got.probabilities, expect, atol=1e-9)

    def test_update_respects_mask(self):
        prior = GraphemePrior.uniform(2, decay=0.0, floor=0.0)
        logits = np.zeros((1, 3, 2))
        logits[0, 2] = [100.0, 0.0]
        mask = np.array([[True, True, False]])
        got = prior_update(prior, logits, mask)
        assert np.allclose(got.probabilities, [0.5, 0.5])
