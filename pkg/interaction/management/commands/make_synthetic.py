import json
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from interaction.exceptions import HOIError
from interaction.services.synthetic import (
    SYNTH_EXCLUSIONS, SYNTH_OBJECTS, SYNTH_SYNONYMS, SYNTH_VERBS, SynthConfig, synth_generate,
)


class Command(BaseCommand):
    help = 'Write a seeded synthetic dataset with its vocabulary, synonym and exclusion files'

    def add_arguments(self, parser):
        parser.add_argument(
            '--out',
            type=str,
            required=True,
            help='Directory to write into',
        )
        parser.add_argument(
            '--seed',
            type=int,
            default=0,
            help='Generation seed (the test split uses seed + 1)',
        )
        parser.add_argument(
            '--train-images',
            type=int,
            default=200,
            help='Number of training scenes',
        )
        parser.add_argument(
            '--test-images',
            type=int,
            default=100,
            help='Number of test scenes',
        )

    def handle(self, *args, **options):
        out = Path(options['out'])
        out.mkdir(parents=True, exist_ok=True)
        try:
            train = synth_generate(SynthConfig(num_images=options['train_images'], seed=options['seed'],
                                               id_prefix='synth_train'))
            test = synth_generate(SynthConfig(num_images=options['test_images'], seed=options['seed'] + 1,
                                              id_prefix='synth_test'))
        except HOIError as e:
            raise CommandError(str(e)) from e

        train.save_jsonl(out / 'train.jsonl')
        test.save_jsonl(out / 'test.jsonl')
        (out / 'verbs.txt').write_text('\n'.join(SYNTH_VERBS) + '\n', encoding='utf-8')
        (out / 'objects.txt').write_text('\n'.join(SYNTH_OBJECTS) + '\n', encoding='utf-8')
        (out / 'synonyms.tsv').write_text(
            ''.join(f'{phrase}\t{verb}\n' for phrase, verb in sorted(SYNTH_SYNONYMS.items())), encoding='utf-8')
        (out / 'exclusions.tsv').write_text(
            ''.join(f'{a}\t{b}\n' for a, b in SYNTH_EXCLUSIONS), encoding='utf-8')

        # a run config that reads the files back through the annotation loader
        config = {
            'name': 'synthetic_files',
            'dataset': {
                'source': 'hico',
                'train_path': str(out / 'train.jsonl'),
                'test_path': str(out / 'test.jsonl'),
                'verbs_path': str(out / 'verbs.txt'),
                'objects_path': str(out / 'objects.txt'),
                'synonyms_path': str(out / 'synonyms.tsv'),
                'exclusions_path': str(out / 'exclusions.tsv'),
            },
        }
        (out / 'config.json').write_text(json.dumps(config, indent=2), encoding='utf-8')

        self.stdout.write(f'Train: {len(train)} images, {sum(len(s.triplets) for s in train)} triplets')
        self.stdout.write(f'Test: {len(test)} images, {sum(len(s.triplets) for s in test)} triplets')
        self.stdout.write(self.style.SUCCESS(f'Synthetic dataset written to {out}'))
