# Generated by Django 5.2.8 on 2026-10-17 10:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='TrainingRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=100)),
                ('seed', models.IntegerField()),
                ('config', models.JSONField(default=dict)),
                ('output_dir', models.CharField(max_length=500)),
                ('checkpoint_path', models.CharField(blank=True, max_length=500)),
                ('status', models.CharField(choices=[('RUNNING', 'Running'), ('COMPLETED', 'Completed'), ('FAILED', 'Failed')], default='RUNNING', max_length=10)),
                ('frozen_checksum', models.CharField(blank=True, max_length=64)),
                ('trainable_checksum', models.CharField(blank=True, max_length=64)),
                ('initial_loss', models.FloatField(blank=True, null=True)),
                ('final_loss', models.FloatField(blank=True, null=True)),
                ('error_message', models.TextField(blank=True)),
                ('started_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'verbose_name': 'Training Run',
                'verbose_name_plural': 'Training Runs',
                'ordering': ['-started_at'],
            },
        ),
        migrations.CreateModel(
            name='EvaluationRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=100)),
                ('setting', models.CharField(max_length=20)),
                ('split_mode', models.CharField(max_length=10)),
                ('full_map', models.FloatField(blank=True, null=True)),
                ('rare_map', models.FloatField(blank=True, null=True)),
                ('non_rare_map', models.FloatField(blank=True, null=True)),
                ('unseen_map', models.FloatField(blank=True, null=True)),
                ('seen_map', models.FloatField(blank=True, null=True)),
                ('report_path', models.CharField(blank=True, max_length=500)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('run', models.ForeignKey(blank=True, null=True, on_delete=django.db.models.deletion.SET_NULL, related_name='evaluations', to='interaction.trainingrun')),
            ],
            options={
                'verbose_name': 'Evaluation',
                'verbose_name_plural': 'Evaluations',
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='StepMetric',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('step', models.IntegerField()),
                ('total', models.FloatField()),
                ('components', models.JSONField(default=dict)),
                ('learning_rate', models.FloatField()),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='steps', to='interaction.trainingrun')),
            ],
            options={
                'ordering': ['run', 'step'],
                'unique_together': {('run', 'step')},
            },
        ),
    ]
