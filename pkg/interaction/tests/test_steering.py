import torch
from django.test import SimpleTestCase
from torch.autograd import gradcheck

from interaction.exceptions import ConfigurationError, DimensionMismatchError, VocabularyError
from interaction.services.objectives import loss_generative
from interaction.services.perception import PerceptionConfig, PerceptionHead, build_candidate_pairs, pair_geometry
from interaction.services.steering import (
    EvidenceFusion, KernelFormulator, SteeringConduit, SteeringConfig, assemble_prefix,
    formulate_kernel, fuse_evidence, scene_token,
)
from interaction.tests.utils import box, detection, inquiry_tokens, small_generator, synth_vocabulary


class SceneTokenTests(SimpleTestCase):
    def test_equal_patches(self):
        v = torch.tensor([0.5, -1.0, 2.0])
        self.assertTrue(torch.equal(scene_token(v.repeat(4, 1)), v))

    def test_two_patches(self):
        u, w = torch.tensor([1.0, 2.0]), torch.tensor([3.0, -2.0])
        self.assertTrue(torch.allclose(scene_token(torch.stack([u, w])), (u + w) / 2))

    def test_random_patches(self):
        patches = torch.randn(7, 5, generator=torch.Generator().manual_seed(0))
        expected = [sum(float(patches[p, c]) for p in range(7)) / 7 for c in range(5)]
        for got, want in zip(scene_token(patches).tolist(), expected):
            self.assertAlmostEqual(got, want, places=6)

    def test_no_patches(self):
        with self.assertRaises(ConfigurationError):
            scene_token(torch.zeros(0, 4))


class EvidenceFusionTests(SimpleTestCase):
    def test_zero_inputs_zero_evidence(self):
        fusion = EvidenceFusion(8, 6, 16)
        for m in fusion.modules():
            if isinstance(m, torch.nn.Linear):
                torch.nn.init.zeros_(m.bias)
        e = fuse_evidence(torch.zeros(8), torch.zeros(6), fusion)
        self.assertTrue(torch.equal(e, torch.zeros(16)))

    def test_global_evidence_switch(self):
        torch.manual_seed(0)
        fusion = EvidenceFusion(8, 6, 16, use_global=False)
        v = torch.randn(8)
        e1 = fusion(v, torch.randn(6))
        e2 = fusion(v, torch.randn(6))
        self.assertTrue(torch.equal(e1, e2))

    def test_scene_token_changes_evidence(self):
        torch.manual_seed(5)
        fusion = EvidenceFusion(8, 6, 16)
        v = torch.randn(8)
        delta = fusion(v, torch.randn(6)) - fusion(v, torch.randn(6))
        self.assertGreater(float(delta.norm()), 0.0)

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(6)
        fusion = EvidenceFusion(4, 3, 5).double()
        v = torch.randn(2, 4, dtype=torch.float64, requires_grad=True)
        f_global = torch.randn(2, 3, dtype=torch.float64, requires_grad=True)
        self.assertTrue(gradcheck(lambda a, b: fuse_evidence(a, b, fusion), (v, f_global)))

    def test_dimension_mismatch(self):
        fusion = EvidenceFusion(8, 6, 16)
        with self.assertRaises(DimensionMismatchError):
            fusion(torch.zeros(7), torch.zeros(6))


class KernelFormulatorTests(SimpleTestCase):
    def setUp(self):
        torch.manual_seed(1)
        self.formulator = KernelFormulator(16, 4, 2, slot_seed=3)

    def test_shape(self):
        kernel = self.formulator(torch.randn(5, 16))
        self.assertEqual(tuple(kernel.shape), (5, 4, 16))
        single = formulate_kernel(torch.randn(16), self.formulator)
        self.assertEqual(tuple(single.shape), (4, 16))

    def test_singleton_memory_attention_is_one(self):
        _, weights = formulate_kernel(torch.randn(16), self.formulator, return_attention=True)
        self.assertEqual(tuple(weights.shape), (2, 4, 1))
        self.assertTrue(torch.allclose(weights, torch.ones_like(weights)))

    def test_zero_evidence_reduces_to_feed_forward_on_slots(self):
        with torch.no_grad():
            self.formulator.attention.in_proj_bias.zero_()
            self.formulator.attention.out_proj.bias.zero_()
            kernel = formulate_kernel(torch.zeros(16), self.formulator)
            slots = self.formulator.slots
            expected = slots + self.formulator.ffn(self.formulator.ffn_norm(slots))
        self.assertTrue(torch.allclose(kernel, expected, atol=1e-6))

    def test_slots_follow_seed(self):
        other = KernelFormulator(16, 4, 2, slot_seed=3)
        self.assertTrue(torch.equal(self.formulator.slots, other.slots))
        self.assertFalse(torch.equal(self.formulator.slots, KernelFormulator(16, 4, 2, slot_seed=4).slots))

    def test_zero_length_kernel(self):
        empty = KernelFormulator(16, 0, 2)(torch.randn(3, 16))
        self.assertEqual(tuple(empty.shape), (3, 0, 16))

    def test_without_residual(self):
        formulator = KernelFormulator(16, 4, 2, residual=False)
        self.assertEqual(tuple(formulator(torch.randn(2, 16)).shape), (2, 4, 16))

    def test_gradients_match_finite_differences(self):
        formulator = KernelFormulator(8, 3, 2).double()
        e = torch.randn(2, 8, dtype=torch.float64, requires_grad=True)
        self.assertTrue(gradcheck(formulator, (e,)))


class SteeringConduitTests(SimpleTestCase):
    def test_direct_needs_single_row(self):
        with self.assertRaises(ConfigurationError):
            SteeringConfig(formulator='direct', kernel_length=4)
        with self.assertRaises(ConfigurationError):
            SteeringConfig(formulator='prefix')

    def test_formulators(self):
        v, f = torch.randn(3, 32), torch.randn(3, 16)
        for formulator, length in (('cross_attention', 4), ('mlp', 4), ('direct', 1)):
            conduit = SteeringConduit(SteeringConfig(kernel_length=length, heads=2, formulator=formulator),
                                      32, 16, 16)
            self.assertEqual(tuple(conduit(v, f).shape), (3, length, 16))
            self.assertEqual(conduit.kernel_length, length)

    def test_local_evidence_switch(self):
        torch.manual_seed(2)
        conduit = SteeringConduit(SteeringConfig(kernel_length=2, heads=2, use_local_evidence=False), 32, 16, 16)
        f = torch.randn(1, 16)
        self.assertTrue(torch.equal(conduit(torch.randn(1, 32), f), conduit(torch.randn(1, 32), f)))


    def test_object_box_changes_kernel(self):
        torch.manual_seed(7)
        head = PerceptionHead(PerceptionConfig()).eval()
        conduit = SteeringConduit(SteeringConfig(kernel_length=4, heads=2), 32, 16, 16).eval()
        detections = [
            detection(box(10, 10, 20, 30), 0, 0.9, seed=1),
            detection(box(8, 22, 24, 34), 2, 0.8, seed=2),
            detection(box(30, 20, 40, 30), 2, 0.8, seed=2),
        ]
        pairs = build_candidate_pairs(detections)
        self.assertEqual([p.key for p in pairs], [(0, 1), (0, 2)])
        with torch.no_grad():
            head.adjudicate(detections, pairs, pair_geometry(detections, pairs, 64, 64))
            v = torch.stack([p.v for p in pairs])
            kernels = conduit(v, torch.randn(16).expand(2, -1))
        self.assertGreater(float((kernels[0] - kernels[1]).norm()), 1e-6)

    def test_generative_loss_reaches_evidence(self):
        vocab = synth_vocabulary()
        gen = small_generator(vocab)
        torch.manual_seed(8)
        formulator = KernelFormulator(16, 2, 2)
        e = torch.randn(2, 16, requires_grad=True)
        targets = [vocab.target_tokens(vocab.verb_id('ride')), vocab.target_tokens(vocab.verb_id('hold up'))]
        loss = loss_generative(formulate_kernel(e, formulator), targets, gen, vocab, inquiry_tokens(vocab))
        loss.backward()
        self.assertTrue(bool((e.grad.norm(dim=-1) > 0).all()))

class AssemblePrefixTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.vocab = synth_vocabulary()
        cls.gen = small_generator(cls.vocab)
        cls.text = inquiry_tokens(cls.vocab)[:4]

    def test_length_and_prefix_rows(self):
        kernel = torch.randn(8, 16)
        prefix = assemble_prefix(kernel, self.text, self.gen.embed_text)
        self.assertEqual(tuple(prefix.shape), (12, 16))
        self.assertTrue(torch.equal(prefix[:8], kernel))

    def test_empty_kernel(self):
        prefix = assemble_prefix(torch.zeros(0, 16), self.text, self.gen.embed_text)
        self.assertTrue(torch.equal(prefix, self.gen.embed_text(self.text)))

    def test_suffix_shared_between_kernels(self):
        a = assemble_prefix(torch.randn(3, 16), self.text, self.gen.embed_text)
        b = assemble_prefix(torch.randn(3, 16), self.text, self.gen.embed_text)
        self.assertTrue(torch.equal(a[3:], b[3:]))
        self.assertFalse(torch.equal(a[:3], b[:3]))

    def test_batched(self):
        prefix = assemble_prefix(torch.randn(5, 2, 16), self.text, self.gen.embed_text)
        self.assertEqual(tuple(prefix.shape), (5, 6, 16))

    def test_unknown_token(self):
        with self.assertRaises(VocabularyError):
            assemble_prefix(torch.randn(2, 16), [2, 10_000], self.gen.embed_text)

    def test_width_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            assemble_prefix(torch.randn(2, 8), self.text, self.gen.embed_text)
