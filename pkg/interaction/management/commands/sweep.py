from interaction.management.base import HOICommand
from interaction.services.experiments import SWEEP_AXES, SweepService


class Command(HOICommand):
    help = 'Train and evaluate one run per point along an ablation axis'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            '--axis',
            type=str,
            required=True,
            choices=list(SWEEP_AXES),
            help='Sweep axis',
        )
        parser.add_argument(
            '--points',
            type=str,
            help='Comma-separated points (default: the axis defaults)',
        )

    def run(self, config, output_dir, options):
        points = [p.strip() for p in options['points'].split(',') if p.strip()] if options['points'] else None
        service = SweepService(config, options['axis'], output_dir, points=points,
                               record=not options['no_ledger'])
        self.stdout.write(self.style.SUCCESS(
            f"=== Sweep {options['axis']}: {', '.join(str(p) for p in service.points)} ==="))
        _, table = service.run()
        self.stdout.write(table)
        self.stdout.write('')
        self.stdout.write(self.style.SUCCESS(f'Sweep table written to {output_dir}'))
