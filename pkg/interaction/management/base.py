"""
Shared plumbing for the interaction management commands: the common flags,
run-config loading and translation of domain errors into CommandError.
"""

from pathlib import Path

from django.core.management.base import BaseCommand, CommandError
from rest_framework.exceptions import ValidationError

from interaction.exceptions import HOIError
from interaction.services.run_config import format_errors, load_run_config


class HOICommand(BaseCommand):
    """Base for commands driven by a run config; subclasses implement run()"""

    needs_checkpoint = False
    needs_image = False

    def add_arguments(self, parser):
        parser.add_argument(
            '--config',
            type=str,
            help='Path to a JSON run config (default: built-in defaults)',
        )
        parser.add_argument(
            '--seed',
            type=int,
            help='Override the run seed',
        )
        parser.add_argument(
            '--out',
            type=str,
            help='Output directory (default: HOI_OUTPUT_DIR/<run name>)',
        )
        parser.add_argument(
            '--no-ledger',
            action='store_true',
            help='Do not record the run in the database',
        )
        if self.needs_checkpoint:
            parser.add_argument(
                '--checkpoint',
                type=str,
                help='Checkpoint written by the train command',
            )
        if self.needs_image:
            parser.add_argument(
                '--image-id',
                type=str,
                required=True,
                help='Image id (file_name) from the train or test set',
            )

    def handle(self, *args, **options):
        try:
            config = load_run_config(options.get('config'), options.get('seed'))
            output_dir = config.output_path(options.get('out'))
            return self.run(config, output_dir, options)
        except ValidationError as e:
            raise CommandError(f"invalid input: {format_errors(e.detail)}") from e
        except HOIError as e:
            raise CommandError(str(e)) from e

    def run(self, config, output_dir, options):
        raise NotImplementedError

    def checkpoint_path(self, options, output_dir):
        """--checkpoint, or the checkpoint a train run left in the output directory"""
        from interaction.services.training import CHECKPOINT_FILE

        path = Path(options['checkpoint']) if options.get('checkpoint') else output_dir / CHECKPOINT_FILE
        if not path.exists():
            raise CommandError(f"checkpoint {path} not found (run the train command or pass --checkpoint)")
        return path
