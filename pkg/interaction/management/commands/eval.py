from interaction.management.base import HOICommand
from interaction.services.experiments import EvaluationService
from interaction.services.pipeline import Workspace, load_checkpoint


class Command(HOICommand):
    help = 'Run inference on the test set and report triplet mAP'
    needs_checkpoint = True

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            '--oracle',
            action='store_true',
            help='Score ground-truth triplets instead of model predictions',
        )
        parser.add_argument(
            '--untrained',
            action='store_true',
            help='Evaluate the freshly initialized model (no checkpoint)',
        )

    def run(self, config, output_dir, options):
        workspace = Workspace(config)
        model = None
        if options['untrained']:
            model = workspace.new_model()
            self.stdout.write(self.style.WARNING('Evaluating the untrained model'))
        elif not options['oracle']:
            model, _ = load_checkpoint(self.checkpoint_path(options, output_dir), workspace)

        service = EvaluationService(workspace, model, output_dir, record=not options['no_ledger'])
        _, table = service.run(oracle=options['oracle'])
        self.stdout.write(table)
        self.stdout.write('')
        self.stdout.write(self.style.SUCCESS(f'Report written to {output_dir}'))
