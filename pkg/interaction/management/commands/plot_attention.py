from interaction.management.base import HOICommand
from interaction.services.attention import AttentionMapService
from interaction.services.pipeline import Workspace, load_checkpoint


class Command(HOICommand):
    help = 'Write encoder and kernel-conditioned attention heatmaps for one image'
    needs_checkpoint = True
    needs_image = True

    def run(self, config, output_dir, options):
        workspace = Workspace(config)
        model, _ = load_checkpoint(self.checkpoint_path(options, output_dir), workspace)
        maps, paths = AttentionMapService(workspace, model, output_dir).plot(options['image_id'])
        if not maps:
            self.stdout.write(self.style.WARNING(f"No candidates selected for {options['image_id']}; no files written"))
            return
        for item in maps:
            self.stdout.write(f'Candidate {item.candidate}: mass in boxes encoder={item.encoder_mass:.3f} '
                              f'kernel={item.kernel_mass:.3f}')
        self.stdout.write(self.style.SUCCESS(f'Wrote {len(paths)} files to {output_dir}'))
