"""
HOI dataset records and the line-delimited annotation format.

One JSON object per line:

    {"file_name": "img_0001.png", "width": 640, "height": 480,
     "hoi": [{"human_box": [x1, y1, x2, y2], "object_box": [...],
              "object_category": "chair", "verb": "sit on"}],
     "entities": [{"box": [...], "category": "chair", "attribute": 0.7}]}

"entities" is optional; without it the entities are the distinct boxes the
triplets reference.
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from interaction.exceptions import AnnotationError, InvalidBoxError, VocabularyError
from interaction.services.geometry import PERSON_CATEGORY, BoundingBox, HOITriplet

logger = logging.getLogger(__name__)

RARE_THRESHOLD = 10
PERSON_NAME = 'person'


@dataclass(frozen=True)
class EntityAnnotation:
    box: BoundingBox
    category: int
    attribute: float = 1.0

    @property
    def is_person(self):
        return self.category == PERSON_CATEGORY


@dataclass(frozen=True)
class HOISample:
    image_id: str
    width: float
    height: float
    entities: tuple = field(default=())
    triplets: tuple = field(default=())

    def triplet_classes(self):
        return {t.triplet_class for t in self.triplets}

    def object_categories(self):
        return {t.object_category for t in self.triplets}


class HOIDataset:
    """Samples plus the verb and object vocabularies their ids refer to"""

    def __init__(self, samples, verbs, objects):
        self.samples = list(samples)
        self.verbs = tuple(verbs)
        self.objects = tuple(objects)
        if self.objects and self.objects[PERSON_CATEGORY] != PERSON_NAME:
            raise VocabularyError(f"object vocabulary must start with '{PERSON_NAME}'")
        self._index = {s.image_id: s for s in self.samples}

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def get(self, image_id):
        try:
            return self._index[image_id]
        except KeyError:
            raise AnnotationError(image_id, "image not in dataset") from None

    def subset(self, samples):
        return HOIDataset(samples, self.verbs, self.objects)

    def triplet_counts(self):
        counts = Counter()
        for sample in self.samples:
            for t in sample.triplets:
                counts[t.triplet_class] += 1
        return counts

    def triplet_classes(self):
        return set(self.triplet_counts())

    def rare_classes(self, threshold=RARE_THRESHOLD):
        """Triplet classes with fewer than `threshold` instances"""
        return {c for c, n in self.triplet_counts().items() if n < threshold}

    def non_rare_classes(self, threshold=RARE_THRESHOLD):
        return {c for c, n in self.triplet_counts().items() if n >= threshold}

    def class_name(self, triplet_class):
        verb, obj = triplet_class
        return f"{self.verbs[verb]} {self.objects[obj]}"

    def to_record(self, sample):
        return {
            'file_name': sample.image_id,
            'width': sample.width,
            'height': sample.height,
            'hoi': [
                {
                    'human_box': t.human_box.as_list(),
                    'object_box': t.object_box.as_list(),
                    'object_category': self.objects[t.object_category],
                    'verb': self.verbs[t.verb],
                }
                for t in sample.triplets
            ],
            'entities': [
                {'box': e.box.as_list(), 'category': self.objects[e.category], 'attribute': e.attribute}
                for e in sample.entities
            ],
        }

    def save_jsonl(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open('w', encoding='utf-8') as fh:
            for sample in self.samples:
                fh.write(json.dumps(self.to_record(sample)) + '\n')
        logger.info(f"wrote {len(self.samples)} samples to {path}")
        return path


def read_object_file(path):
    objects = [line.strip() for line in Path(path).read_text(encoding='utf-8').splitlines() if line.strip()]
    if not objects or objects[0] != PERSON_NAME:
        raise VocabularyError(f"{path}: first object must be '{PERSON_NAME}'")
    return objects


def _box(index, value, width, height, what):
    try:
        box = BoundingBox.from_list(value)
    except (InvalidBoxError, TypeError, ValueError) as exc:
        raise AnnotationError(index, f"bad {what}: {exc}") from exc
    if not box.within(width, height):
        raise AnnotationError(index, f"{what} {box} outside the {width}x{height} image")
    return box


def _lookup(table, name, kind):
    try:
        return table[name.strip().lower()]
    except (KeyError, AttributeError):
        raise VocabularyError(f"unknown {kind} '{name}'") from None


def parse_record(index, record, verb_ids, object_ids):
    if not isinstance(record, dict):
        raise AnnotationError(index, "record is not an object")
    try:
        image_id = str(record['file_name'])
        width = float(record['width'])
        height = float(record['height'])
        hoi = record.get('hoi', [])
    except (KeyError, TypeError, ValueError) as exc:
        raise AnnotationError(index, f"missing or malformed field {exc}") from exc
    if width <= 0 or height <= 0:
        raise AnnotationError(index, f"invalid image size {width}x{height}")
    if not isinstance(hoi, list):
        raise AnnotationError(index, "'hoi' must be a list")

    triplets = []
    for item in hoi:
        try:
            human_raw, object_raw = item['human_box'], item['object_box']
            category_name, verb_name = item['object_category'], item['verb']
        except (KeyError, TypeError) as exc:
            raise AnnotationError(index, f"interaction missing field {exc}") from exc
        triplets.append(HOITriplet(
            human_box=_box(index, human_raw, width, height, 'human box'),
            object_box=_box(index, object_raw, width, height, 'object box'),
            object_category=_lookup(object_ids, category_name, 'object'),
            verb=_lookup(verb_ids, verb_name, 'verb'),
        ))

    entities = []
    if 'entities' in record:
        for item in record['entities']:
            try:
                box_raw, category_name = item['box'], item['category']
                attribute = float(item.get('attribute', 1.0))
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                raise AnnotationError(index, f"entity missing field {exc}") from exc
            entities.append(EntityAnnotation(_box(index, box_raw, width, height, 'entity box'),
                                             _lookup(object_ids, category_name, 'object'), attribute))
    else:
        entities = entities_from_triplets(triplets)
    return HOISample(image_id, width, height, tuple(entities), tuple(triplets))


def entities_from_triplets(triplets):
    """Distinct (box, category) entities referenced by the triplets, in first-seen order"""
    seen = {}
    for t in triplets:
        for box, category in ((t.human_box, PERSON_CATEGORY), (t.object_box, t.object_category)):
            seen.setdefault((box, category), EntityAnnotation(box, category))
    return list(seen.values())


def load_hico(path, verbs, objects):
    """Parse a JSONL annotation file against the given verb and object vocabularies"""
    path = Path(path)
    verb_ids = {v.strip().lower(): i for i, v in enumerate(verbs)}
    object_ids = {o.strip().lower(): i for i, o in enumerate(objects)}
    samples = []
    with path.open(encoding='utf-8') as fh:
        for index, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AnnotationError(index, f"invalid JSON: {exc}") from exc
            samples.append(parse_record(index, record, verb_ids, object_ids))
    dataset = HOIDataset(samples, verbs, objects)
    logger.info(f"loaded {len(samples)} samples, {len(dataset.triplet_classes())} triplet classes from {path}")
    return dataset


def _release_size(index, record, annotations):
    if 'width' in record and 'height' in record:
        return float(record['width']), float(record['height'])
    size = record.get('img_size') or record.get('orig_size')
    if size and len(size) >= 2:
        return float(size[0]), float(size[1])
    if not annotations:
        raise AnnotationError(index, "no image size and no boxes to infer it from")
    return (max(float(a['bbox'][2]) for a in annotations),
            max(float(a['bbox'][3]) for a in annotations))


def _clipped_box(index, raw, width, height):
    try:
        x1, y1, x2, y2 = (float(v) for v in raw)
    except (TypeError, ValueError) as exc:
        raise AnnotationError(index, f"bad bbox {raw!r}") from exc
    x1, x2 = min(max(x1, 0.0), width), min(max(x2, 0.0), width)
    y1, y2 = min(max(y1, 0.0), height), min(max(y2, 0.0), height)
    try:
        return BoundingBox(x1, y1, x2, y2)
    except InvalidBoxError as exc:
        raise AnnotationError(index, f"degenerate bbox {raw!r}") from exc


def convert_hico_release(records, verbs, objects, object_ids=None):
    """
    Convert records in the common HICO-DET JSON release layout:

        {"file_name": ..., "img_size": [w, h],
         "annotations": [{"bbox": [x1, y1, x2, y2], "category_id": 1}, ...],
         "hoi_annotation": [{"subject_id": 0, "object_id": 1, "category_id": 37}, ...]}

    hoi category_id is the 1-based verb id. object_ids lists the release's object
    category ids in the order of `objects` (default 1..N). Interactions without
    an object (object_id -1) are dropped.
    """
    object_ids = list(object_ids) if object_ids is not None else list(range(1, len(objects) + 1))
    if len(object_ids) != len(objects):
        raise VocabularyError(f"{len(object_ids)} object ids for {len(objects)} object names")
    category_of = {int(source): i for i, source in enumerate(object_ids)}

    samples = []
    dropped = 0
    for index, record in enumerate(records):
        try:
            image_id = str(record['file_name'])
            annotations = list(record.get('annotations', []))
            interactions = list(record.get('hoi_annotation', []))
        except (KeyError, TypeError) as exc:
            raise AnnotationError(index, f"missing or malformed field {exc}") from exc
        width, height = _release_size(index, record, annotations)

        entities = []
        for a in annotations:
            try:
                category = category_of[int(a['category_id'])]
            except (KeyError, TypeError, ValueError):
                raise VocabularyError(f"record {index}: unknown object category {a.get('category_id')!r}") from None
            entities.append(EntityAnnotation(_clipped_box(index, a['bbox'], width, height), category))

        triplets = []
        for h in interactions:
            subject, obj, verb = int(h['subject_id']), int(h['object_id']), int(h['category_id']) - 1
            if obj < 0:
                dropped += 1
                continue
            if not (0 <= subject < len(entities) and obj < len(entities)):
                raise AnnotationError(index, f"interaction references missing box ({subject}, {obj})")
            if not 0 <= verb < len(verbs):
                raise VocabularyError(f"record {index}: verb id {verb + 1} outside the vocabulary")
            if entities[subject].category != PERSON_CATEGORY:
                raise AnnotationError(index, f"subject box {subject} is not a person")
            triplet = HOITriplet(entities[subject].box, entities[obj].box, entities[obj].category, verb)
            if triplet not in triplets:
                triplets.append(triplet)
        samples.append(HOISample(image_id, width, height, tuple(entities), tuple(triplets)))

    if dropped:
        logger.warning(f"dropped {dropped} interactions without an object")
    return HOIDataset(samples, verbs, objects)
