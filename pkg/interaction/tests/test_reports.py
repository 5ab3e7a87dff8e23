import csv
import json
import tempfile
from pathlib import Path

import numpy as np
import torch
from django.test import SimpleTestCase
from openpyxl import load_workbook

from interaction.exceptions import ConfigurationError
from interaction.services.attention import (
    AttentionMapService, box_union_mask, mass_inside, normalize_map, patch_sum,
)
from interaction.services.evaluation import evaluate, oracle_predictions
from interaction.services.experiments import (
    FULL_MODEL, EvaluationService, SweepService, point_config, sweep_points, write_predictions,
)
from interaction.services.pipeline import Workspace
from interaction.services.reports import (
    SWEEP_COLUMNS, format_sweep_table, write_eval_reports, write_sweep_csv, write_sweep_xlsx,
)
from interaction.services.run_config import TOGGLES
from interaction.tests.utils import box, tiny_config

ROWS = [
    {'axis': 'tau', 'point': '0.07', 'setting': 'default', 'full': 0.5, 'rare': 0.25, 'non_rare': None,
     'unseen': None, 'seen': None, 'initial_loss': 3.0, 'final_loss': 2.0},
    {'axis': 'tau', 'point': '0.2', 'setting': 'default', 'full': 0.75, 'rare': 0.5, 'non_rare': None,
     'unseen': None, 'seen': None, 'initial_loss': 3.0, 'final_loss': 1.5},
]


class TempDirMixin:
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()


class SweepTableTests(TempDirMixin, SimpleTestCase):
    def test_workbook_layout(self):
        path = write_sweep_xlsx(ROWS, self.dir / 'sweep.xlsx', title='tiny: tau sweep')
        sheet = load_workbook(path).active
        self.assertEqual(sheet.title, 'Sweep')
        self.assertEqual(sheet['A1'].value, 'tiny: tau sweep')
        self.assertEqual([c.value for c in sheet[3]], SWEEP_COLUMNS)
        self.assertTrue(sheet['A3'].font.bold)
        self.assertEqual(sheet['D4'].value, 0.5)
        self.assertIsNone(sheet['F5'].value)
        self.assertEqual(sheet.max_row, 5)

    def test_csv(self):
        path = write_sweep_csv(ROWS, self.dir / 'sweep.csv')
        with path.open(newline='', encoding='utf-8') as fh:
            rows = list(csv.reader(fh))
        self.assertEqual(rows[0], SWEEP_COLUMNS)
        self.assertEqual(rows[2][:4], ['tau', '0.2', 'default', '0.75'])
        self.assertEqual(rows[1][5], '')

    def test_stdout_table(self):
        lines = format_sweep_table(ROWS).splitlines()
        self.assertEqual(len(lines), 3)
        self.assertTrue(lines[0].startswith('axis'))
        self.assertIn('0.7500', lines[2])
        self.assertIn('n/a', lines[1])


class EvalReportFileTests(TempDirMixin, SimpleTestCase):
    def test_json_and_table(self):
        ws = Workspace(tiny_config())
        reports = [evaluate(oracle_predictions(ws.test), ws.test, setting=s) for s in ('default', 'known_object')]
        json_path, table_path, table = write_eval_reports(reports, self.dir, ws.test.verbs, ws.test.objects)
        payload = json.loads(json_path.read_text(encoding='utf-8'))
        self.assertEqual(set(payload), {'default', 'known_object'})
        self.assertEqual(payload['default']['mAP']['full'], 1.0)
        self.assertEqual(table_path.read_text(encoding='utf-8'), table + '\n')

    def test_predictions_file(self):
        ws = Workspace(tiny_config())
        path = write_predictions(oracle_predictions(ws.test), self.dir / 'predictions.jsonl',
                                 ws.test.verbs, ws.test.objects)
        records = [json.loads(line) for line in path.read_text(encoding='utf-8').splitlines()]
        self.assertEqual([r['image_id'] for r in records], sorted(s.image_id for s in ws.test))
        self.assertIn(records[0]['triplets'][0]['verb'], ws.test.verbs)


class EvaluationServiceTests(TempDirMixin, SimpleTestCase):
    def test_oracle_run(self):
        ws = Workspace(tiny_config())
        reports, table = EvaluationService(ws, output_dir=self.dir, record=False).run(oracle=True)
        self.assertEqual([r.setting for r in reports], ['default', 'known_object'])
        self.assertTrue(all(r.mean_ap['full'] == 1.0 for r in reports))
        self.assertTrue((self.dir / 'report.json').exists())
        self.assertTrue((self.dir / 'predictions.jsonl').exists())
        self.assertIn('setting: default', table)

    def test_model_required(self):
        with self.assertRaises(ConfigurationError):
            EvaluationService(Workspace(tiny_config()), record=False).predictions()


class SweepPointTests(SimpleTestCase):
    def test_default_points(self):
        config = tiny_config()
        self.assertEqual(sweep_points(config, 'kernel_length'), [1, 4, 8, 16])
        self.assertEqual(sweep_points(config, 'component_toggle'), [FULL_MODEL] + list(TOGGLES))
        self.assertEqual(sweep_points(config.with_toggles('no_nce'), 'component_toggle'), [FULL_MODEL, 'no_nce'])
        self.assertEqual(sweep_points(config, 'tau', ['0.1']), ['0.1'])

    def test_unknown_axis(self):
        with self.assertRaises(ConfigurationError):
            sweep_points(tiny_config(), 'depth')

    def test_point_configs(self):
        base = tiny_config()
        self.assertEqual(point_config(base, 'kernel_length', '4').steering.kernel_length, 4)
        self.assertEqual(point_config(base, 'alpha', 0.2).perception.alpha, 0.2)
        config = point_config(base, 'tau', '0.2')
        self.assertEqual((config.loss.tau, config.name), (0.2, 'tiny_tau_0.2'))
        self.assertTrue(point_config(base, 'component_toggle', 'no_gen').toggles.no_gen)
        self.assertEqual(point_config(base, 'component_toggle', FULL_MODEL).toggles.active(), [])

    def test_invalid_points(self):
        base = tiny_config()
        for axis, point in (('kernel_length', 'long'), ('alpha', 1.5), ('tau', 0), ('component_toggle', 'no_sat')):
            with self.assertRaises(ConfigurationError, msg=f'{axis}={point}'):
                point_config(base, axis, point)

    def test_invalid_point_fails_before_training(self):
        with self.assertRaises(ConfigurationError):
            SweepService(tiny_config(), 'alpha', Path('/nonexistent'), points=['0.5', 'x'], record=False)


class SweepServiceTests(TempDirMixin, SimpleTestCase):
    def test_two_point_sweep(self):
        config = tiny_config(optimizer={'steps': 1}, evaluation={'settings': ('default',)})
        rows, table = SweepService(config, 'kernel_length', self.dir, points=['1', '2'], record=False).run()
        self.assertEqual([r['point'] for r in rows], ['1', '2'])
        self.assertTrue((self.dir / 'sweep_kernel_length.csv').exists())
        self.assertTrue((self.dir / 'sweep_kernel_length.xlsx').exists())
        self.assertTrue((self.dir / 'tiny_kernel_length_1' / 'checkpoint.pt').exists())
        self.assertEqual(len(table.splitlines()), 3)


class AttentionHelperTests(SimpleTestCase):
    def test_normalize_map(self):
        self.assertTrue(np.allclose(normalize_map([[0, 2], [1, -4]]), [[0, 0.5], [0.25, 1]]))
        self.assertTrue(np.array_equal(normalize_map(np.zeros((2, 2))), np.zeros((2, 2))))

    def test_patch_sum(self):
        pixels = torch.arange(16, dtype=torch.float32).view(4, 4)
        summed = patch_sum(pixels, 2)
        self.assertTrue(torch.allclose(summed, torch.tensor([[10.0, 18.0], [42.0, 50.0]])))

    def test_box_union_mask(self):
        # 4x4 grid of 4-pixel patches at scale 0.5: patch centers at 4, 12, 20, 28 image units
        mask = box_union_mask([box(0, 0, 13, 13), box(26, 26, 32, 32)], 0.5, (4, 4), 4)
        expected = np.zeros((4, 4), dtype=bool)
        expected[:2, :2] = True
        expected[3, 3] = True
        self.assertTrue(np.array_equal(mask, expected))

    def test_mass_inside(self):
        heatmap = np.array([[1.0, 3.0], [0.0, 0.0]])
        mask = np.array([[False, True], [True, False]])
        self.assertEqual(mass_inside(heatmap, mask), 0.75)
        self.assertEqual(mass_inside(np.zeros((2, 2)), mask), 0.0)


class AttentionMapServiceTests(TempDirMixin, SimpleTestCase):
    def test_plot_writes_files(self):
        ws = Workspace(tiny_config())
        sample = ws.test[0]
        maps, paths = AttentionMapService(ws, ws.new_model(), self.dir).plot(sample.image_id)
        self.assertTrue(maps)
        self.assertEqual(len(paths), 2 * len(maps) + 1)
        self.assertTrue(all(p.exists() for p in paths))
        for item in maps:
            self.assertEqual(item.encoder_map.shape, (8, 8))
            self.assertEqual(item.kernel_map.shape, (8, 8))
            self.assertLessEqual(item.kernel_map.max(), 1.0)
            self.assertTrue(0.0 <= item.encoder_mass <= 1.0)
        summary = json.loads(paths[-1].read_text(encoding='utf-8'))
        self.assertEqual(summary['image_id'], sample.image_id)
