"""
Full-size training runs on the 200-image synthetic set (300 steps each).

Several minutes of CPU per run, so they only run with HOI_SLOW_TESTS=True.
"""

import tempfile
import unittest
from pathlib import Path

import numpy as np
from decouple import config
from django.test import SimpleTestCase

from interaction.services.attention import AttentionMapService
from interaction.services.experiments import EvaluationService
from interaction.services.ledger import RunLedger
from interaction.services.pipeline import Workspace
from interaction.services.run_config import RunConfig
from interaction.services.training import TrainingService, loss_drop

SLOW = config('HOI_SLOW_TESTS', default=False, cast=bool)
ACCEPTANCE_SEED = 0


def base_config(**sections):
    run_config = RunConfig(name='acceptance', seed=ACCEPTANCE_SEED)
    return run_config.with_changes(**sections) if sections else run_config


class RunCache:
    """Trains each distinct config once per test session"""
    runs = {}

    @classmethod
    def get(cls, run_config):
        key = repr(run_config)
        if key not in cls.runs:
            workspace = Workspace(run_config)
            frozen_before = workspace.frozen_checksum()
            with tempfile.TemporaryDirectory() as tmp:
                model, _, history = TrainingService(workspace, Path(tmp), RunLedger(enabled=False)).train()
            reports, _ = EvaluationService(workspace, model, record=False).run()
            cls.runs[key] = {
                'workspace': workspace,
                'model': model,
                'history': history,
                'frozen_before': frozen_before,
                'reports': {r.setting: r for r in reports},
            }
        return cls.runs[key]


def full_map(run, partition='full'):
    return run['reports']['default'].mean_ap[partition] or 0.0


def untrained_map(run_config, partition='full'):
    workspace = Workspace(run_config)
    reports, _ = EvaluationService(workspace, workspace.new_model(), record=False).run()
    return reports[0].mean_ap[partition] or 0.0


@unittest.skipUnless(SLOW, 'set HOI_SLOW_TESTS=True to run full training runs')
class LearningSignalTests(SimpleTestCase):
    def test_loss_halves_and_frozen_parts_unchanged(self):
        run = RunCache.get(base_config())
        self.assertEqual(len(run['history']), 300)
        self.assertGreaterEqual(loss_drop(run['history']), 0.5)
        self.assertEqual(run['workspace'].frozen_checksum(), run['frozen_before'])

    def test_trained_beats_untrained(self):
        run = RunCache.get(base_config())
        self.assertGreaterEqual(full_map(run) - untrained_map(base_config()), 0.25)


@unittest.skipUnless(SLOW, 'set HOI_SLOW_TESTS=True to run full training runs')
class AblationDirectionTests(SimpleTestCase):
    def test_full_model_beats_classifier_head(self):
        full = RunCache.get(base_config())
        classifier = RunCache.get(base_config().with_toggles('classifier'))
        self.assertGreaterEqual(full_map(full), full_map(classifier))

    def test_longer_kernel_not_worse(self):
        long_kernel = RunCache.get(base_config(steering={'kernel_length': 8}))
        short_kernel = RunCache.get(base_config(steering={'kernel_length': 1}))
        self.assertGreaterEqual(full_map(long_kernel), full_map(short_kernel))

    def test_local_evidence_matters_more_than_global(self):
        no_local = RunCache.get(base_config().with_toggles('no_local'))
        no_global = RunCache.get(base_config().with_toggles('no_global'))
        self.assertLessEqual(full_map(no_local), full_map(no_global))


@unittest.skipUnless(SLOW, 'set HOI_SLOW_TESTS=True to run full training runs')
class ZeroShotTests(SimpleTestCase):
    SPLITS = {
        'rf_uc': {'mode': 'rf_uc', 'num_held_out': 2},
        'nf_uc': {'mode': 'nf_uc', 'num_held_out': 2},
        'uo': {'mode': 'uo', 'held_out': ('ball',)},
        'uv': {'mode': 'uv', 'held_out': ('push',)},
    }

    def test_unseen_partition_above_untrained(self):
        for name, split in self.SPLITS.items():
            with self.subTest(split=name):
                run_config = base_config(split=split)
                run = RunCache.get(run_config)
                workspace = run['workspace']
                unseen = workspace.split.partition('unseen')
                self.assertTrue(unseen)
                self.assertFalse(workspace.train.triplet_classes() & unseen)
                self.assertGreater(full_map(run, 'unseen'), untrained_map(run_config, 'unseen'))


@unittest.skipUnless(SLOW, 'set HOI_SLOW_TESTS=True to run full training runs')
class AttentionSteeringTests(SimpleTestCase):
    def test_kernel_mass_exceeds_encoder_mass(self):
        run = RunCache.get(base_config())
        workspace = run['workspace']
        with tempfile.TemporaryDirectory() as tmp:
            service = AttentionMapService(workspace, run['model'], Path(tmp))
            encoder, kernel = [], []
            for sample in list(workspace.test)[:20]:
                _, maps = service.maps_for(sample)
                encoder.extend(m.encoder_mass for m in maps)
                kernel.extend(m.kernel_mass for m in maps)
        self.assertGreaterEqual(len(kernel), 20)
        self.assertGreater(np.mean(kernel), np.mean(encoder))
