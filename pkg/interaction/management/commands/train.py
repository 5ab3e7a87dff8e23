from interaction.management.base import HOICommand
from interaction.services.ledger import RunLedger
from interaction.services.pipeline import Workspace
from interaction.services.training import TrainingService, loss_drop


class Command(HOICommand):
    help = 'Train the perception head and steering conduit against the frozen generator'

    def run(self, config, output_dir, options):
        self.stdout.write(self.style.SUCCESS(f'=== Training {config.name} (seed {config.seed}) ==='))
        workspace = Workspace(config)
        self.stdout.write(f'Train images: {len(workspace.train)}  Test images: {len(workspace.test)}')
        self.stdout.write(f'Verbs: {len(workspace.vocab)}  Objects: {len(workspace.objects)}')
        self.stdout.write('')

        service = TrainingService(workspace, output_dir, RunLedger(enabled=not options['no_ledger']))
        model, checkpoint, history = service.train()

        if history:
            self.stdout.write(f"Loss: {history[0]['total']:.4f} -> {history[-1]['total']:.4f} "
                              f"({100 * loss_drop(history):.1f}% drop)")
        else:
            self.stdout.write(self.style.WARNING('Zero steps: checkpoint holds the initial parameters'))
        self.stdout.write(f'Frozen checksum: {workspace.frozen_checksum()}')
        self.stdout.write(self.style.SUCCESS(f'Checkpoint written to {checkpoint}'))
