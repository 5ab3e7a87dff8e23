import itertools
import math

import torch
from django.test import SimpleTestCase
from torch.autograd import gradcheck

from interaction.exceptions import ConfigurationError, NonFiniteLossError, VocabularyError
from interaction.services.generator import EOS_ID
from interaction.services.geometry import HOITriplet
from interaction.services.objectives import (
    ExclusionSet, LossWeights, NegativeBank, bce_salience, first_step_verb_probs, group_ground_truth,
    hungarian_match, info_nce, loss_generative, loss_logic, loss_nce, loss_salience, matching_cost,
    salience_labels, teacher_forced_logits, total_loss,
)
from interaction.tests.utils import box, inquiry_tokens, small_generator, synth_vocabulary


class HungarianMatchTests(SimpleTestCase):
    def setUp(self):
        self.gt_pairs = group_ground_truth([
            HOITriplet(box(10, 10, 20, 30), box(15, 25, 30, 35), 1, 0),
            HOITriplet(box(10, 10, 20, 30), box(15, 25, 30, 35), 1, 2),
            HOITriplet(box(50, 10, 60, 30), box(62, 15, 70, 30), 2, 1),
        ])
        self.candidates = [
            (box(11, 10, 20, 31), box(15, 24, 29, 35), 1),
            (box(50, 11, 61, 30), box(61, 15, 70, 29), 2),
            (box(10, 10, 21, 30), box(16, 25, 30, 36), 1),
        ]

    def test_grouping_collapses_verbs(self):
        self.assertEqual(len(self.gt_pairs), 2)
        self.assertEqual(self.gt_pairs[0].verbs, (0, 2))

    def test_matches_exhaustive_assignment(self):
        cost = matching_cost(self.candidates, self.gt_pairs)
        best = min(
            sum(cost[i, j] for j, i in enumerate(rows))
            for rows in itertools.permutations(range(len(self.candidates)), len(self.gt_pairs))
        )
        matches = hungarian_match(self.candidates, self.gt_pairs)
        self.assertEqual(len(matches), 2)
        self.assertAlmostEqual(sum(cost[i, j] for i, j in matches.items()), best, places=12)

    def test_category_mismatch_never_matched(self):
        candidates = [(box(10, 10, 20, 30), box(15, 25, 30, 35), 3)]
        self.assertEqual(hungarian_match(candidates, self.gt_pairs), {})
        labels, _ = salience_labels(candidates, self.gt_pairs)
        self.assertEqual(labels.tolist(), [0.0])

    def test_labels(self):
        labels, matches = salience_labels(self.candidates, self.gt_pairs)
        self.assertEqual(float(labels.sum()), 2.0)
        self.assertEqual(set(matches.values()), {0, 1})


class SalienceLossTests(SimpleTestCase):
    def test_constant_half_scores(self):
        scores = torch.full((4,), 0.5)
        gt = group_ground_truth([HOITriplet(box(0, 0, 5, 10), box(4, 5, 9, 9), 1, 0)])
        candidates = [(box(0, 0, 5, 10), box(4, 5, 9, 9), 1)] + [(box(0, 0, 5, 10), box(20, 20, 30, 30), 2)] * 3
        self.assertAlmostEqual(float(loss_salience(scores, gt, candidates)), math.log(2), places=6)

    def test_no_ground_truth_all_negative(self):
        scores = torch.tensor([0.1, 0.2])
        expected = -(math.log(0.9) + math.log(0.8)) / 2
        self.assertAlmostEqual(float(bce_salience(scores, torch.zeros(2))), expected, places=6)

    def test_confident_correct_scores_near_zero(self):
        scores = torch.tensor([1.0 - 1e-6, 1e-6], dtype=torch.float64)
        self.assertLess(float(bce_salience(scores, torch.tensor([1.0, 0.0]))), 1e-5)

    def test_empty(self):
        self.assertEqual(float(bce_salience(torch.zeros(0), torch.zeros(0))), 0.0)


class GenerativeLossTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.vocab = synth_vocabulary()
        cls.gen = small_generator(cls.vocab)
        cls.inquiry = inquiry_tokens(cls.vocab)

    def test_single_admitted_token_gives_zero(self):
        ride = self.vocab.verb_id('ride')
        mask = torch.zeros(len(self.vocab.tokenizer), dtype=torch.bool)
        mask[list(self.vocab.phrase_tokens[ride])] = True
        target = self.vocab.target_tokens(ride, append_eos=False)
        loss = loss_generative(torch.randn(1, 2, 16), [target], self.gen, self.vocab, self.inquiry,
                               mask=mask, append_eos=False)
        self.assertAlmostEqual(float(loss), 0.0, places=6)

    def test_matches_independent_log_softmax(self):
        kernel = torch.randn(2, 16, generator=torch.Generator().manual_seed(0))
        verb = self.vocab.verb_id('hold up')
        target = self.vocab.target_tokens(verb)

        sequence = torch.cat([kernel, self.gen.embed_text(self.inquiry),
                              self.gen.embed_text(torch.tensor(target[:-1]))])
        logits, _ = self.gen.decode_step(sequence.unsqueeze(0))
        allowed = self.vocab.verb_token_mask.clone()
        allowed[EOS_ID] = True
        start = kernel.shape[0] + len(self.inquiry) - 1
        expected = 0.0
        for t, token in enumerate(target):
            row = logits[0, start + t].masked_fill(~allowed, float('-inf'))
            expected -= float(torch.log_softmax(row, dim=-1)[token])

        loss = loss_generative(kernel.unsqueeze(0), [target], self.gen, self.vocab, self.inquiry)
        self.assertAlmostEqual(float(loss), expected, places=5)

    def test_first_step_logits_match_decoding(self):
        kernels = torch.randn(3, 2, 16)
        targets = [self.vocab.target_tokens(v) for v in (0, 3, 6)]
        logits, padded = teacher_forced_logits(kernels, targets, self.gen, self.inquiry)
        self.assertEqual(tuple(padded.shape), (3, 3))
        prefix = torch.cat([kernels, self.gen.embed_text(self.inquiry).expand(3, -1, -1)], dim=1)
        first, _ = self.gen.decode_step(prefix)
        self.assertTrue(torch.allclose(logits[:, 0], first[:, -1], atol=1e-5))

    def test_target_outside_mask(self):
        person = self.vocab.tokenizer.stoi['person']
        with self.assertRaises(VocabularyError):
            loss_generative(torch.randn(1, 2, 16), [[person, EOS_ID]], self.gen, self.vocab, self.inquiry)

    def test_gradients_match_finite_differences(self):
        gen = small_generator(self.vocab, d=8).double()
        targets = [self.vocab.target_tokens(self.vocab.verb_id('look at'))]
        kernel = torch.randn(1, 2, 8, dtype=torch.float64, requires_grad=True)
        self.assertTrue(gradcheck(
            lambda k: loss_generative(k, targets, gen, self.vocab, self.inquiry), (kernel,)))

    def test_first_step_verb_probs(self):
        logits = torch.randn(2, len(self.vocab.tokenizer))
        probs = first_step_verb_probs(logits, self.vocab)
        self.assertEqual(tuple(probs.shape), (2, len(self.vocab)))
        hold, hold_up = self.vocab.verb_id('hold'), self.vocab.verb_id('hold up')
        # phrases sharing a first token share the probability
        self.assertTrue(torch.equal(probs[:, hold], probs[:, hold_up]))


class ContrastiveLossTests(SimpleTestCase):
    @staticmethod
    def unit(cosine):
        return torch.tensor([cosine, math.sqrt(1 - cosine * cosine)], dtype=torch.float64)

    def test_uniform_similarities(self):
        q = torch.tensor([[1.0, 2.0, 3.0]])
        loss = info_nce(q, q, q.unsqueeze(1).repeat(1, 3, 1), tau=0.07)
        self.assertAlmostEqual(float(loss), math.log(4), places=5)

    def test_hand_set_cosines(self):
        query = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        positive = self.unit(0.9).unsqueeze(0)
        negatives = torch.stack([self.unit(c) for c in (0.1, 0.0, -0.2)]).unsqueeze(0)
        tau = 0.07
        expected = -0.9 / tau + math.log(sum(math.exp(c / tau) for c in (0.9, 0.1, 0.0, -0.2)))
        self.assertAlmostEqual(float(info_nce(query, positive, negatives, tau)), expected, places=9)

    def test_low_temperature_limit(self):
        query = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        negatives = torch.tensor([[[0.0, 1.0], [0.0, -1.0]]], dtype=torch.float64)
        self.assertLess(float(info_nce(query, query, negatives, tau=0.01)), 1e-10)

    def test_invalid_temperature(self):
        q = torch.ones(1, 2)
        with self.assertRaises(ConfigurationError):
            info_nce(q, q, q.unsqueeze(1), tau=0.0)

    def test_mean_kernel_row_against_verb_table(self):
        table = torch.eye(4)
        kernels = torch.tensor([[[1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]]])
        loss = loss_nce(kernels, [0], [[1, 2, 3]], table, tau=0.5)
        expected = -2.0 + math.log(math.exp(2.0) + 3.0)
        self.assertAlmostEqual(float(loss), expected, places=5)

    def test_empty_kernel(self):
        with self.assertRaises(ConfigurationError):
            loss_nce(torch.zeros(1, 0, 4), [0], [[1]], torch.eye(4), tau=0.1)

    def test_gradients_match_finite_differences(self):
        query = torch.randn(2, 5, dtype=torch.float64, requires_grad=True)
        positive = torch.randn(2, 5, dtype=torch.float64)
        negatives = torch.randn(2, 3, 5, dtype=torch.float64)
        self.assertTrue(gradcheck(lambda q: info_nce(q, positive, negatives, 0.2), (query,)))

    def test_negative_bank(self):
        bank = NegativeBank(5)
        self.assertEqual(bank.negatives(2), [0, 1, 3, 4])
        self.assertEqual(tuple(bank.batch([0, 4]).shape), (2, 4))
        sampled = NegativeBank(100, exhaustive_limit=64, sample_size=8, seed=1)
        negatives = sampled.negatives(10)
        self.assertEqual(len(negatives), 8)
        self.assertNotIn(10, negatives)
        with self.assertRaises(ConfigurationError):
            NegativeBank(1)


class LogicLossTests(SimpleTestCase):
    def test_one_member_zero(self):
        probs = torch.tensor([0.0, 0.7, 0.3, 0.0])
        self.assertEqual(float(loss_logic(probs, ExclusionSet([(0, 1), (2, 3)]))), 0.0)

    def test_equal_half_probabilities(self):
        self.assertAlmostEqual(float(loss_logic(torch.tensor([0.5, 0.5]), ExclusionSet([(0, 1)]))), 0.5)

    def test_enumeration(self):
        probs = torch.tensor([0.4, 0.1, 0.3, 0.2, 0.6], dtype=torch.float64)
        pairs = [(0, 1), (2, 4), (3, 2)]
        expected = sum(min(float(probs[a]), float(probs[b])) for a, b in pairs)
        self.assertAlmostEqual(float(loss_logic(probs, ExclusionSet(pairs))), expected, places=12)

    def test_tie_splits_gradient(self):
        probs = torch.tensor([0.3, 0.3], requires_grad=True)
        loss_logic(probs, ExclusionSet([(0, 1)])).backward()
        self.assertEqual(probs.grad.tolist(), [0.5, 0.5])

    def test_unknown_verb(self):
        with self.assertRaises(VocabularyError):
            loss_logic(torch.tensor([0.5, 0.5]), ExclusionSet([(0, 2)]))
        with self.assertRaises(VocabularyError):
            ExclusionSet([(1, 1)])

    def test_from_phrases(self):
        vocab = synth_vocabulary()
        exclusions = ExclusionSet.from_phrases([('stand on', 'sit on')], vocab)
        self.assertEqual(list(exclusions), [(vocab.verb_id('sit on'), vocab.verb_id('stand on'))])


class TotalLossTests(SimpleTestCase):
    def test_weighted_sum(self):
        weights = LossWeights(sal=0.0, gen=1.0, nce=0.5, logic=0.1)
        components = {'gen': torch.tensor(2.0), 'nce': torch.tensor(4.0), 'logic': torch.tensor(10.0)}
        self.assertAlmostEqual(float(total_loss(components, weights)), 5.0, places=5)

    def test_all_weights_zero(self):
        weights = LossWeights(det=0, sal=0, gen=0, nce=0, logic=0, cls=0)
        components = {'gen': torch.tensor(3.0), 'sal': torch.tensor(1.0)}
        self.assertEqual(float(total_loss(components, weights)), 0.0)

    def test_only_generative(self):
        weights = LossWeights(sal=0, gen=1, nce=0, logic=0)
        self.assertEqual(float(total_loss({'gen': torch.tensor(1.25), 'nce': torch.tensor(9.0)}, weights)), 1.25)

    def test_detection_hook(self):
        weights = LossWeights(det=2.0, sal=0, gen=0, nce=0, logic=0)
        self.assertEqual(float(total_loss({}, weights, det_hook=lambda: torch.tensor(1.5))), 3.0)

    def test_non_finite_component_named(self):
        with self.assertRaises(NonFiniteLossError) as ctx:
            total_loss({'nce': torch.tensor(float('nan'))}, LossWeights())
        self.assertEqual(ctx.exception.component, 'nce')
        self.assertIn('nce', str(ctx.exception))

    def test_unknown_component(self):
        with self.assertRaises(ConfigurationError):
            total_loss({'box': torch.tensor(1.0)}, LossWeights())

    def test_weight_validation(self):
        with self.assertRaises(ConfigurationError):
            LossWeights(tau=0.0)
        with self.assertRaises(ConfigurationError):
            LossWeights(gen=-1.0)
