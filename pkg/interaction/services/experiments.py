"""
Evaluation and sweep services used by the management commands.
"""

import json
import logging

from interaction.exceptions import ConfigurationError
from interaction.services.evaluation import evaluate, oracle_predictions
from interaction.services.ledger import RunLedger, record_evaluation
from interaction.services.pipeline import Predictor, Workspace
from interaction.services.reports import (
    format_sweep_table, sweep_row, write_eval_reports, write_sweep_csv, write_sweep_xlsx,
)
from interaction.services.run_config import TOGGLES
from interaction.services.training import TrainingService

logger = logging.getLogger(__name__)

SWEEP_AXES = {
    'kernel_length': (1, 4, 8, 16),
    'component_toggle': None,
    'alpha': (0.2, 0.4, 0.6, 0.8, 1.0),
    'tau': (0.03, 0.07, 0.2),
}
FULL_MODEL = 'full'


class EvaluationService:
    """Inference over the test set followed by mAP under every configured setting"""

    def __init__(self, workspace, model=None, output_dir=None, record=True):
        self.workspace = workspace
        self.model = model
        self.output_dir = output_dir
        self.record = record

    def predictions(self, oracle=False):
        if oracle:
            return oracle_predictions(self.workspace.test)
        if self.model is None:
            raise ConfigurationError("evaluation needs a model unless oracle predictions are requested")
        return Predictor(self.workspace, self.model).predict_dataset(self.workspace.test)

    def evaluate(self, predictions):
        ws, cfg = self.workspace, self.workspace.config
        return [
            evaluate(
                predictions, ws.test, ws.split_spec, setting=setting,
                iou_threshold=cfg.evaluation.iou_threshold,
                max_per_image=cfg.evaluation.max_per_image,
                train_counts=ws.train.triplet_counts(),
                held_out=ws.split.held_out,
            )
            for setting in cfg.evaluation.settings
        ]

    def run(self, oracle=False):
        """Returns (reports, text table); writes report and prediction files when output_dir is set"""
        ws = self.workspace
        predictions = self.predictions(oracle)
        reports = self.evaluate(predictions)
        table = '\n\n'.join(r.as_table(ws.test.verbs, ws.test.objects) for r in reports)
        if self.output_dir is not None:
            json_path, _, table = write_eval_reports(reports, self.output_dir, ws.test.verbs, ws.test.objects)
            write_predictions(predictions, self.output_dir / 'predictions.jsonl', ws.test.verbs, ws.test.objects)
            for report in reports:
                record_evaluation(ws.config.name, report, json_path, enabled=self.record)
        return reports, table


def predictions_record(image_id, triplets, verbs, objects):
    return {
        'image_id': image_id,
        'triplets': [
            {
                'human_box': t.human_box.as_list(),
                'object_box': t.object_box.as_list(),
                'object_category': objects[t.object_category],
                'verb': verbs[t.verb],
                'score': t.score,
            }
            for t in sorted(triplets, key=lambda t: -t.score)
        ],
    }


def write_predictions(predictions, path, verbs, objects):
    with path.open('w', encoding='utf-8') as fh:
        for image_id in sorted(predictions):
            fh.write(json.dumps(predictions_record(image_id, predictions[image_id], verbs, objects)) + '\n')
    return path


def reset_toggles(config):
    return config.with_changes(toggles={t: False for t in TOGGLES})


def sweep_points(config, axis, points=None):
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"unknown sweep axis '{axis}'; expected one of {list(SWEEP_AXES)}")
    if points:
        return list(points)
    if axis == 'component_toggle':
        return [FULL_MODEL] + (config.toggles.active() or list(TOGGLES))
    return list(SWEEP_AXES[axis])


def point_config(base, axis, point):
    """Config for one sweep point; the run name records the point"""
    if axis == 'component_toggle':
        config = base if point == FULL_MODEL else base.with_toggles(str(point))
        return config.with_changes(name=f"{base.name}_{axis}_{point}")
    try:
        value = int(point) if axis == 'kernel_length' else float(point)
    except (TypeError, ValueError):
        raise ConfigurationError(f"invalid {axis} point {point!r}") from None
    if axis == 'kernel_length':
        config = base.with_changes(steering={'kernel_length': value})
    elif axis == 'alpha':
        config = base.with_changes(perception={'alpha': value})
    else:
        config = base.with_changes(loss={'tau': value})
    return config.with_changes(name=f"{base.name}_{axis}_{point}")


class SweepService:
    """train + eval per point along one axis; one row per point and setting"""

    def __init__(self, config, axis, output_dir, points=None, record=True):
        self.config = config
        self.axis = axis
        self.output_dir = output_dir
        self.points = sweep_points(config, axis, points)
        self.record = record
        # validate every point before any compute
        base = reset_toggles(config) if axis == 'component_toggle' else config
        self.point_configs = [(p, point_config(base, axis, p)) for p in self.points]

    def run(self):
        rows = []
        for point, config in self.point_configs:
            run_dir = self.output_dir / config.name
            run_dir.mkdir(parents=True, exist_ok=True)
            logger.info(f"sweep {self.axis}={point}: {config.name}")
            workspace = Workspace(config)
            model, _, history = TrainingService(workspace, run_dir, RunLedger(enabled=self.record)).train()
            reports, _ = EvaluationService(workspace, model, run_dir, record=self.record).run()
            rows.extend(sweep_row(self.axis, point, report, history) for report in reports)

        write_sweep_csv(rows, self.output_dir / f'sweep_{self.axis}.csv')
        write_sweep_xlsx(rows, self.output_dir / f'sweep_{self.axis}.xlsx',
                         title=f"{self.config.name}: {self.axis} sweep")
        return rows, format_sweep_table(rows)
