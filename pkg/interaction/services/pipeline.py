"""
End-to-end pipeline: workspace assembly (data, vocabularies, frozen
encoders), the trainable interaction model, per-image scene bundles and the
inference path from detections to scored triplets.
"""

import logging
import math
from dataclasses import dataclass, field

import torch
from torch import nn

from interaction.exceptions import (
    AnnotationError, CheckpointMismatchError, ConfigurationError, VocabularyError,
)
from interaction.services.data import load_hico, read_object_file
from interaction.services.encoders import FrozenBackbone, StandInDetector, frozen_checksum, render_raster
from interaction.services.generator import (
    VerbVocabulary, build_tokenizer, decode_kernels, open_vocab_map, read_synonym_file,
    read_verb_file, toy_generator, verb_embeddings,
)
from interaction.services.geometry import NO_INTERACTION, HOITriplet
from interaction.services.layers import seeded_init
from interaction.services.objectives import (
    ExclusionSet, NegativeBank, group_ground_truth, salience_labels,
)
from interaction.services.perception import (
    PerceptionHead, build_candidate_pairs, pair_geometry,
)
from interaction.services.splits import SplitSpec, UC_MODES, build_splits
from interaction.services.steering import SteeringConduit, scene_token
from interaction.services.synthetic import (
    SYNTH_EXCLUSIONS, SYNTH_SYNONYMS, SYNTH_VERBS, SynthConfig, synth_generate,
)

logger = logging.getLogger(__name__)


@dataclass
class SceneBundle:
    """Everything about one image that does not depend on trainable weights"""
    sample: object
    raster: torch.Tensor
    scale: float
    detections: list
    pairs: list
    geometry: torch.Tensor
    instance_tokens: torch.Tensor
    appearance_tokens: torch.Tensor
    human_index: torch.Tensor
    object_index: torch.Tensor
    f_global: torch.Tensor
    labels: torch.Tensor
    positives: list = field(default_factory=list)

    @property
    def image_id(self):
        return self.sample.image_id


class InteractionModel(nn.Module):
    """Trainable parts: perception head, steering conduit, optional verb classifier"""

    def __init__(self, config, num_verbs, hidden_size, scene_dim):
        super().__init__()
        with seeded_init(config.seed):
            self.perception = PerceptionHead(config.perception)
            self.conduit = SteeringConduit(config.steering_config(), config.perception.d_model,
                                           scene_dim, hidden_size)
            self.classifier = (nn.Linear(config.perception.d_model, num_verbs)
                               if config.toggles.classifier else None)

    def score_pairs(self, bundle):
        return self.perception(bundle.instance_tokens, bundle.appearance_tokens,
                               bundle.human_index, bundle.object_index, bundle.geometry)

    def kernels(self, v, f_global):
        return self.conduit(v, f_global)


class Workspace:
    """Vocabularies, frozen encoders and datasets for one run config"""

    def __init__(self, config):
        self.config = config
        self._load_data()
        self._build_encoders()
        self.split = build_splits(self.train_full, self.split_spec)
        self.train = self.split.train
        self._bundles = {}
        logger.info(f"workspace ready: {len(self.train)} train / {len(self.test)} test images, "
                    f"{len(self.vocab)} verbs, {len(self.objects)} objects")

    def _load_data(self):
        cfg = self.config
        if cfg.dataset.source == 'synthetic':
            syn = cfg.synthetic
            phrases, synonyms = list(SYNTH_VERBS), dict(SYNTH_SYNONYMS)
            holdout = tuple(tuple(p) for p in syn.holdout_triplets)
            self.train_full = synth_generate(SynthConfig(
                num_images=syn.train_images, pairs_per_image=tuple(syn.pairs_per_image), seed=syn.seed,
                holdout_triplets=holdout, id_prefix='synth_train'))
            self.test = synth_generate(SynthConfig(
                num_images=syn.test_images, pairs_per_image=tuple(syn.pairs_per_image), seed=syn.seed + 1,
                id_prefix='synth_test'))
            exclusion_phrases = SYNTH_EXCLUSIONS
            exclusions_path = None
        else:
            ds = cfg.dataset
            phrases = read_verb_file(ds.verbs_path)
            objects = read_object_file(ds.objects_path)
            synonyms = read_synonym_file(ds.synonyms_path) if ds.synonyms_path else {}
            self.train_full = load_hico(ds.train_path, phrases, objects)
            self.test = load_hico(ds.test_path, phrases, objects)
            exclusion_phrases = ()
            exclusions_path = ds.exclusions_path or None

        self.objects = self.train_full.objects
        self.tokenizer = build_tokenizer(phrases, synonyms, extra_texts=[cfg.generator.inquiry])
        self.vocab = VerbVocabulary(phrases, self.tokenizer, synonyms, cfg.generator.auxiliaries)
        if exclusions_path:
            self.exclusions = ExclusionSet.from_file(exclusions_path, self.vocab)
        else:
            self.exclusions = ExclusionSet.from_phrases(exclusion_phrases, self.vocab)
        self.split_spec = resolve_split(cfg.split, self.train_full)

    def _build_encoders(self):
        cfg = self.config
        gen = cfg.generator
        side = math.ceil(cfg.encoder.raster_resolution / cfg.encoder.patch_size)
        self.generator = toy_generator(
            seed=gen.seed, d=gen.hidden_size, layers=gen.layers, tokenizer=self.tokenizer,
            heads=gen.heads, scene_dim=gen.scene_dim, patch_size=cfg.encoder.patch_size,
            max_patches=side * side,
        )
        self.backbone = FrozenBackbone(cfg.perception.d_a, seed=gen.seed)
        self.detector = StandInDetector(cfg.perception.d_z, len(self.objects), seed=gen.seed,
                                        jitter=cfg.encoder.detector_jitter,
                                        roi_output_size=cfg.perception.roi_output_size)
        self.inquiry_tokens = torch.tensor(self.tokenizer.encode(cfg.generator.inquiry), dtype=torch.long)
        self.verb_embeddings = verb_embeddings(self.vocab, self.generator)
        self.negatives = NegativeBank(len(self.vocab), seed=cfg.seed)

    def find_sample(self, image_id):
        """Look an image up in the test set, then the full training set"""
        for dataset in (self.test, self.train_full):
            try:
                return dataset.get(image_id)
            except AnnotationError:
                continue
        raise AnnotationError(image_id, "image not in the train or test set")

    def frozen_checksum(self):
        return frozen_checksum(self.generator, self.backbone, self.detector)

    def new_model(self):
        return InteractionModel(self.config, len(self.vocab), self.generator.hidden_size,
                                self.generator.scene_dim)

    def bundle(self, sample):
        if sample.image_id not in self._bundles:
            self._bundles[sample.image_id] = build_bundle(sample, self)
        return self._bundles[sample.image_id]


def resolve_split(section, dataset):
    """Turn names from the config into the ids a SplitSpec holds"""
    def verb_id(name):
        try:
            return dataset.verbs.index(name)
        except ValueError:
            raise VocabularyError(f"held-out verb '{name}' not in the vocabulary") from None

    def object_id(name):
        try:
            return dataset.objects.index(name)
        except ValueError:
            raise VocabularyError(f"held-out object '{name}' not in the vocabulary") from None

    if section.mode in UC_MODES:
        held = frozenset((verb_id(v), object_id(o)) for v, o in section.held_out)
    elif section.mode == 'uo':
        held = frozenset(object_id(o) for o in section.held_out)
    elif section.mode == 'uv':
        held = frozenset(verb_id(v) for v in section.held_out)
    else:
        held = frozenset()
    return SplitSpec(mode=section.mode, held_out=held, num_held_out=section.num_held_out)


def build_bundle(sample, workspace):
    cfg = workspace.config
    with torch.no_grad():
        raster, scale = render_raster(sample.entities, sample.width, sample.height,
                                      cfg.encoder.raster_resolution, cfg.encoder.patch_size)
        feature_map = workspace.backbone(raster)
        detections = workspace.detector.detect(sample.image_id, sample.entities, sample.width,
                                               sample.height, feature_map, scale)
        for d in detections:
            d.check_dims(cfg.perception.d_z, cfg.perception.d_a)
        f_global = scene_token(workspace.generator.encode_scene(raster))

    pairs = build_candidate_pairs(detections)
    geometry = pair_geometry(detections, pairs, sample.width, sample.height)
    candidates = [(detections[p.human_index].box, detections[p.object_index].box,
                   detections[p.object_index].category) for p in pairs]
    gt_pairs = group_ground_truth(sample.triplets)
    labels, matches = salience_labels(candidates, gt_pairs)
    positives = [(k, verb) for k, j in sorted(matches.items()) for verb in gt_pairs[j].verbs]

    return SceneBundle(
        sample=sample,
        raster=raster,
        scale=scale,
        detections=detections,
        pairs=pairs,
        geometry=geometry,
        instance_tokens=torch.stack([d.instance_token for d in detections]) if detections
        else torch.zeros(0, cfg.perception.d_z),
        appearance_tokens=torch.stack([d.appearance_token for d in detections]) if detections
        else torch.zeros(0, cfg.perception.d_a),
        human_index=torch.tensor([p.human_index for p in pairs], dtype=torch.long),
        object_index=torch.tensor([p.object_index for p in pairs], dtype=torch.long),
        f_global=f_global,
        labels=labels,
        positives=positives,
    )


class Predictor:
    """Inference path: adjudicate, steer, decode, emit triplets"""

    def __init__(self, workspace, model):
        self.workspace = workspace
        self.model = model

    def predict_bundle(self, bundle):
        ws, cfg = self.workspace, self.workspace.config
        self.model.eval()
        with torch.no_grad():
            selected = self.model.perception.adjudicate(bundle.detections, bundle.pairs, bundle.geometry)
            if not selected:
                return []
            v = torch.stack([p.v for p in selected])
            if self.model.classifier is not None:
                probs = torch.softmax(self.model.classifier(v), dim=-1)
                confidence, verbs = probs.max(dim=-1)
                outcomes = [(int(verb), float(c)) for verb, c in zip(verbs, confidence)]
            else:
                f_global = bundle.f_global.unsqueeze(0).expand(len(selected), -1)
                kernels = self.model.kernels(v, f_global)
                results = decode_kernels(kernels, ws.inquiry_tokens, ws.vocab, ws.generator,
                                         max_len=cfg.generator.max_len, mode=cfg.generator.decode_mode,
                                         candidate_ids=[p.order for p in selected])
                outcomes = []
                for result in results:
                    verb = result.verb
                    open_vocab = cfg.generator.decode_mode == 'open' or cfg.evaluation.open_vocab
                    if open_vocab and verb == NO_INTERACTION and result.phrase:
                        verb = open_vocab_map(result.phrase, ws.vocab, ws.generator,
                                              synonym_filter=cfg.evaluation.synonym_filter)
                    outcomes.append((verb, 1.0 / (1.0 + math.exp(-result.score))))

        triplets = []
        for pair, (verb, likelihood) in zip(selected, outcomes):
            if verb == NO_INTERACTION:
                continue
            human = bundle.detections[pair.human_index]
            obj = bundle.detections[pair.object_index]
            score = min(1.0, max(0.0, pair.r * likelihood))
            triplets.append(HOITriplet(human.box, obj.box, obj.category, verb, score))
        return triplets

    def predict_dataset(self, dataset):
        predictions = {}
        for sample in dataset:
            predictions[sample.image_id] = self.predict_bundle(self.workspace.bundle(sample))
        n = sum(len(p) for p in predictions.values())
        logger.info(f"predicted {n} triplets over {len(dataset)} images")
        return predictions


def load_checkpoint(path, workspace):
    """Restore a trained InteractionModel, checking it fits this workspace"""
    try:
        checkpoint = torch.load(path, map_location='cpu', weights_only=False)
    except FileNotFoundError:
        raise ConfigurationError(f"checkpoint {path} not found") from None
    if list(checkpoint.get('verbs', [])) != list(workspace.vocab.phrases):
        raise CheckpointMismatchError(
            f"checkpoint verbs {checkpoint.get('verbs')} differ from the configured vocabulary")
    if list(checkpoint.get('objects', [])) != list(workspace.objects):
        raise CheckpointMismatchError("checkpoint object vocabulary differs from the configured one")
    if checkpoint.get('frozen_checksum') != workspace.frozen_checksum():
        raise CheckpointMismatchError("checkpoint was trained against different frozen encoders")
    model = workspace.new_model()
    try:
        model.load_state_dict(checkpoint['model_state'])
    except (RuntimeError, KeyError) as exc:
        raise CheckpointMismatchError(f"checkpoint does not fit the configured model: {exc}") from exc
    model.eval()
    return model, checkpoint
