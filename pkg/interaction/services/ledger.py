"""
Run ledger: TrainingRun / StepMetric / EvaluationRecord rows.

The files written under the run directory are authoritative; the database is
a queryable index over them. Every write here is best-effort: a database that
is missing or unmigrated logs a warning and the run carries on.
"""

import logging

from django.db import DatabaseError
from django.utils import timezone

from interaction.models import EvaluationRecord, StepMetric, TrainingRun

logger = logging.getLogger(__name__)


class RunLedger:
    """Records one training run; all methods are no-ops once the database failed"""

    def __init__(self, enabled=True):
        self.enabled = enabled
        self.run = None

    def _guard(self, action, fn):
        if not self.enabled:
            return None
        try:
            return fn()
        except DatabaseError as e:
            logger.warning(f"run ledger disabled ({action} failed): {e}")
            self.enabled = False
            return None

    def start(self, config, output_dir, frozen_checksum):
        def create():
            self.run = TrainingRun.objects.create(
                name=config.name,
                seed=config.seed,
                config=config.as_dict(),
                output_dir=str(output_dir),
                frozen_checksum=frozen_checksum,
            )
            return self.run
        return self._guard('start', create)

    def step(self, step, total, components, learning_rate):
        if self.run is None:
            return None
        return self._guard('step', lambda: StepMetric.objects.create(
            run=self.run, step=step, total=total, components=components, learning_rate=learning_rate,
        ))

    def finish(self, checkpoint_path, trainable_checksum, initial_loss, final_loss):
        if self.run is None:
            return None

        def update():
            self.run.status = 'COMPLETED'
            self.run.checkpoint_path = str(checkpoint_path)
            self.run.trainable_checksum = trainable_checksum
            self.run.initial_loss = initial_loss
            self.run.final_loss = final_loss
            self.run.finished_at = timezone.now()
            self.run.save()
            return self.run
        return self._guard('finish', update)

    def fail(self, error):
        if self.run is None:
            return None

        def update():
            self.run.status = 'FAILED'
            self.run.error_message = str(error)
            self.run.finished_at = timezone.now()
            self.run.save()
            return self.run
        return self._guard('fail', update)


def record_evaluation(name, report, report_path, enabled=True):
    """Store the headline numbers of one EvalReport"""
    if not enabled:
        return None
    try:
        run = TrainingRun.objects.filter(name=name, status='COMPLETED').first()
        return EvaluationRecord.objects.create(
            run=run,
            name=name,
            setting=report.setting,
            split_mode=report.split_mode,
            full_map=report.mean_ap.get('full'),
            rare_map=report.mean_ap.get('rare'),
            non_rare_map=report.mean_ap.get('non_rare'),
            unseen_map=report.mean_ap.get('unseen'),
            seen_map=report.mean_ap.get('seen'),
            report_path=str(report_path),
        )
    except DatabaseError as e:
        logger.warning(f"could not record evaluation {name}/{report.setting}: {e}")
        return None
