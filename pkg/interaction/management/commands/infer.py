import json

from interaction.management.base import HOICommand
from interaction.services.experiments import predictions_record
from interaction.services.pipeline import Predictor, Workspace, load_checkpoint


class Command(HOICommand):
    help = 'Detect interactions in a single image and print the scored triplets'
    needs_checkpoint = True
    needs_image = True

    def run(self, config, output_dir, options):
        workspace = Workspace(config)
        model, _ = load_checkpoint(self.checkpoint_path(options, output_dir), workspace)
        sample = workspace.find_sample(options['image_id'])

        triplets = Predictor(workspace, model).predict_bundle(workspace.bundle(sample))
        record = predictions_record(sample.image_id, triplets, workspace.test.verbs, workspace.test.objects)
        if not triplets:
            self.stdout.write(self.style.WARNING(f'No interactions detected in {sample.image_id}'))
        for t in record['triplets']:
            self.stdout.write(f"{t['score']:.3f}  person {t['human_box']}  {t['verb']}  "
                              f"{t['object_category']} {t['object_box']}")

        path = output_dir / f"infer_{sample.image_id.replace('/', '_')}.json"
        path.write_text(json.dumps(record, indent=2), encoding='utf-8')
        self.stdout.write(self.style.SUCCESS(f'Predictions written to {path}'))
