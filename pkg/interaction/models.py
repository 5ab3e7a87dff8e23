from django.db import models


class TrainingRun(models.Model):
    STATUS_CHOICES = [
        ('RUNNING', 'Running'),
        ('COMPLETED', 'Completed'),
        ('FAILED', 'Failed'),
    ]

    name = models.CharField(max_length=100)
    seed = models.IntegerField()
    config = models.JSONField(default=dict)
    output_dir = models.CharField(max_length=500)
    checkpoint_path = models.CharField(max_length=500, blank=True)
    status = models.CharField(max_length=10, choices=STATUS_CHOICES, default='RUNNING')
    frozen_checksum = models.CharField(max_length=64, blank=True)
    trainable_checksum = models.CharField(max_length=64, blank=True)
    initial_loss = models.FloatField(null=True, blank=True)
    final_loss = models.FloatField(null=True, blank=True)
    error_message = models.TextField(blank=True)

    started_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        verbose_name = 'Training Run'
        verbose_name_plural = 'Training Runs'
        ordering = ['-started_at']

    def __str__(self):
        return f"{self.name} (seed {self.seed}) - {self.status}"


class StepMetric(models.Model):
    run = models.ForeignKey(TrainingRun, on_delete=models.CASCADE, related_name='steps')
    step = models.IntegerField()
    total = models.FloatField()
    components = models.JSONField(default=dict)  # {'sal': 0.69, 'gen': 3.1, ...}
    learning_rate = models.FloatField()

    class Meta:
        ordering = ['run', 'step']
        unique_together = ['run', 'step']

    def __str__(self):
        return f"{self.run.name} step {self.step}: {self.total:.4f}"


class EvaluationRecord(models.Model):
    run = models.ForeignKey(TrainingRun, on_delete=models.SET_NULL, null=True, blank=True,
                            related_name='evaluations')
    name = models.CharField(max_length=100)
    setting = models.CharField(max_length=20)
    split_mode = models.CharField(max_length=10)
    full_map = models.FloatField(null=True, blank=True)
    rare_map = models.FloatField(null=True, blank=True)
    non_rare_map = models.FloatField(null=True, blank=True)
    unseen_map = models.FloatField(null=True, blank=True)
    seen_map = models.FloatField(null=True, blank=True)
    report_path = models.CharField(max_length=500, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        verbose_name = 'Evaluation'
        verbose_name_plural = 'Evaluations'
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.name} [{self.setting}/{self.split_mode}] full={self.full_map}"
