import json
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from interaction.exceptions import HOIError
from interaction.services.data import convert_hico_release, read_object_file
from interaction.services.generator import read_verb_file


class Command(BaseCommand):
    help = 'Convert a HICO-DET JSON release file into the line-delimited annotation format'

    def add_arguments(self, parser):
        parser.add_argument(
            '--input',
            type=str,
            required=True,
            help='Release JSON file (a list of image records)',
        )
        parser.add_argument(
            '--verbs',
            type=str,
            required=True,
            help='Verb phrase file; line i is verb id i + 1 in the release',
        )
        parser.add_argument(
            '--objects',
            type=str,
            required=True,
            help='Object name file, starting with "person"',
        )
        parser.add_argument(
            '--object-ids',
            type=str,
            help='Comma-separated release object ids in the order of the object file (default 1..N)',
        )
        parser.add_argument(
            '--output',
            type=str,
            required=True,
            help='Output JSONL path',
        )

    def handle(self, *args, **options):
        try:
            records = json.loads(Path(options['input']).read_text(encoding='utf-8'))
        except FileNotFoundError:
            raise CommandError(f"input file {options['input']} not found") from None
        except json.JSONDecodeError as e:
            raise CommandError(f"input file is not valid JSON: {e}") from e
        if not isinstance(records, list):
            raise CommandError('release file must hold a list of image records')

        try:
            object_ids = None
            if options['object_ids']:
                object_ids = [int(x) for x in options['object_ids'].split(',') if x.strip()]
            verbs = read_verb_file(options['verbs'])
            objects = read_object_file(options['objects'])
            dataset = convert_hico_release(records, verbs, objects, object_ids)
        except (HOIError, ValueError, OSError) as e:
            raise CommandError(str(e)) from e

        path = dataset.save_jsonl(options['output'])
        n = sum(len(s.triplets) for s in dataset)
        self.stdout.write(self.style.SUCCESS(f'Converted {len(dataset)} images ({n} triplets) to {path}'))
