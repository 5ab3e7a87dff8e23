"""
Procedural HOI scenes with a geometric verb oracle.

Every scene holds one or two human-object pairs, each drawn from a verb
template and placed in its own diagonal quadrant so pairs never interact.
Ground truth is the rulebook applied to every (person, other entity) pair, so
labels are a pure function of geometry.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from interaction.exceptions import ConfigurationError, RulebookGapError
from interaction.services.data import EntityAnnotation, HOIDataset, HOISample
from interaction.services.geometry import PERSON_CATEGORY, BoundingBox, HOITriplet, iou

logger = logging.getLogger(__name__)

SYNTH_OBJECTS = ('person', 'chair', 'bicycle', 'ball', 'bench', 'box')
SYNTH_VERBS = ('sit on', 'stand on', 'hold', 'hold up', 'ride', 'push', 'look at', 'lie on')
SYNTH_EXCLUSIONS = (('sit on', 'stand on'), ('lie on', 'stand on'))
SYNTH_SYNONYMS = {
    'sitting on': 'sit on',
    'seated on': 'sit on',
    'standing on': 'stand on',
    'holding': 'hold',
    'carrying': 'hold',
    'lifting': 'hold up',
    'raising': 'hold up',
    'riding': 'ride',
    'pushing': 'push',
    'looking at': 'look at',
    'watching': 'look at',
    'lying on': 'lie on',
}

TEMPLATE_OBJECTS = {
    'sit on': ('chair', 'bench'),
    'stand on': ('box', 'bench', 'chair'),
    'hold': ('ball', 'box'),
    'hold up': ('ball', 'box'),
    'ride': ('bicycle',),
    'push': ('box', 'bicycle', 'chair'),
    'look at': ('chair', 'bicycle', 'ball', 'bench', 'box'),
    'lie on': ('bench',),
}

# relative frequency of each verb template
TEMPLATE_WEIGHTS = {
    'sit on': 3, 'stand on': 2, 'hold': 2, 'hold up': 1,
    'ride': 2, 'push': 2, 'look at': 3, 'lie on': 1,
}

QUADRANT = 32.0
MARGIN = 1.0


@dataclass(frozen=True)
class SynthConfig:
    num_images: int = 200
    pairs_per_image: tuple = (1, 2)
    image_size: float = 64.0
    seed: int = 0
    holdout_triplets: tuple = ()
    id_prefix: str = 'synth'

    def __post_init__(self):
        low, high = self.pairs_per_image
        if self.num_images < 0:
            raise ConfigurationError("num_images must be >= 0")
        if not 1 <= low <= high <= 2:
            raise ConfigurationError("pairs_per_image must lie within [1, 2]")
        if self.image_size < 2 * QUADRANT:
            raise ConfigurationError(f"image_size must be at least {2 * QUADRANT}")
        for verb, obj in self.holdout_triplets:
            if obj not in TEMPLATE_OBJECTS.get(verb, ()):
                raise ConfigurationError(f"'{verb} {obj}' is not a synthetic combination")


def _overlap(a1, a2, b1, b2):
    return min(a2, b2) - max(a1, b1)


def rulebook_verb(h, o):
    """
    Verb phrase for a (human box, object box) pair, or None for no interaction.
    The decision list is evaluated top to bottom.
    """
    if o.contains(h):
        return 'ride'
    overlap = iou(h, o)
    if h.width > h.height and overlap > 0:
        return 'lie on'

    overlap_x = _overlap(h.x1, h.x2, o.x1, o.x2)
    overlap_y = _overlap(h.y1, h.y2, o.y1, o.y2)
    eps = 1e-6 * h.height
    if overlap_x / min(h.width, o.width) >= 0.5:
        if h.y2 - eps <= o.y1 <= h.y2 + 0.1 * h.height:
            return 'stand on'
        if h.y1 - 0.3 * h.height <= o.y2 <= h.y1 + 0.1 * h.height:
            return 'hold up'
        if overlap > 0 and o.center[1] > h.center[1]:
            return 'sit on'

    if overlap_x <= 0 and overlap_y / min(h.height, o.height) >= 0.5:
        gap = max(o.x1 - h.x2, h.x1 - o.x2)
        if gap <= 0.1 * h.width + eps:
            return 'push' if o.height >= 0.4 * h.height else 'hold'
        if gap <= 2.0 * h.width:
            return 'look at'

    if overlap == 0:
        return None
    raise RulebookGapError(f"no rule covers human {h} with object {o}")


def template_boxes(verb, rng):
    """Raw (human, object) corner tuples for one verb template, human near the origin"""
    w = rng.uniform(6.0, 8.0)
    h = w * rng.uniform(1.8, 2.2)
    mirror = rng.random() < 0.5
    human = (0.0, 0.0, w, h)
    cx = w / 2.0

    if verb == 'sit on':
        obj = (cx - 0.6 * w, 0.55 * h, cx + 0.6 * w, 1.1 * h)
    elif verb == 'stand on':
        obj = (cx - 0.6 * w, h, cx + 0.6 * w, 1.3 * h)
    elif verb == 'hold up':
        obj = (cx - 0.2 * w, -0.1 * h - 0.4 * w, cx + 0.2 * w, -0.1 * h)
    elif verb == 'ride':
        obj = (-1.0, -1.0, w + 1.0, h + 1.0)
    elif verb == 'lie on':
        a = w
        length = a * rng.uniform(1.8, 2.2)
        human = (0.0, 0.0, length, a)
        obj = (-1.0, 0.5 * a, length + 1.0, 1.5 * a)
    elif verb in ('hold', 'push', 'look at'):
        if verb == 'hold':
            size = 0.25 * h
            ow, oy1, oy2 = size, 0.45 * h - size / 2.0, 0.45 * h + size / 2.0
            gap = 0.0
        elif verb == 'push':
            ow, oy1, oy2, gap = 0.8 * w, 0.5 * h, h, 0.0
        else:
            ow, oy1, oy2, gap = w, 0.5 * h, h, w
        if mirror:
            obj = (-gap - ow, oy1, -gap, oy2)
        else:
            obj = (w + gap, oy1, w + gap + ow, oy2)
    else:
        raise ConfigurationError(f"no template for verb '{verb}'")
    return human, obj


def _place(human, obj, origin_x, origin_y, rng):
    """Shift a template into a QUADRANT-sized cell at (origin_x, origin_y)"""
    left = min(human[0], obj[0])
    top = min(human[1], obj[1])
    right = max(human[2], obj[2])
    bottom = max(human[3], obj[3])
    slack_x = QUADRANT - 2 * MARGIN - (right - left)
    slack_y = QUADRANT - 2 * MARGIN - (bottom - top)
    if slack_x < 0 or slack_y < 0:
        raise ConfigurationError("template does not fit its quadrant")
    dx = origin_x + MARGIN - left + rng.uniform(0.0, slack_x)
    dy = origin_y + MARGIN - top + rng.uniform(0.0, slack_y)
    shift = lambda b: BoundingBox(b[0] + dx, b[1] + dy, b[2] + dx, b[3] + dy)
    return shift(human), shift(obj)


class SyntheticGenerator:
    """Seeded scene generator; the same config always gives the same dataset"""

    def __init__(self, config):
        self.config = config
        self.verbs = SYNTH_VERBS
        self.objects = SYNTH_OBJECTS
        held = set(config.holdout_triplets)
        self.combinations = [
            (verb, obj)
            for verb in SYNTH_VERBS
            for obj in TEMPLATE_OBJECTS[verb]
            if (verb, obj) not in held
        ]
        if not self.combinations:
            raise ConfigurationError("every synthetic combination is held out")
        weights = np.array([TEMPLATE_WEIGHTS[v] / len(TEMPLATE_OBJECTS[v]) for v, _ in self.combinations])
        self.weights = weights / weights.sum()

    def label_pairs(self, entities):
        triplets = []
        for human in entities:
            if human.category != PERSON_CATEGORY:
                continue
            for other in entities:
                if other is human:
                    continue
                verb = rulebook_verb(human.box, other.box)
                if verb is not None:
                    triplets.append(HOITriplet(human.box, other.box, other.category, self.verbs.index(verb)))
        return triplets

    def scene(self, index, rng):
        low, high = self.config.pairs_per_image
        n_pairs = int(rng.integers(low, high + 1))
        cells = [(0.0, 0.0), (QUADRANT, QUADRANT)]
        if rng.random() < 0.5:
            cells.reverse()

        entities = []
        intended = []
        for cell in cells[:n_pairs]:
            verb, obj = self.combinations[rng.choice(len(self.combinations), p=self.weights)]
            human_raw, obj_raw = template_boxes(verb, rng)
            human_box, obj_box = _place(human_raw, obj_raw, cell[0], cell[1], rng)
            human = EntityAnnotation(human_box, PERSON_CATEGORY, float(rng.uniform(0.5, 1.0)))
            thing = EntityAnnotation(obj_box, self.objects.index(obj), float(rng.uniform(0.5, 1.0)))
            entities.extend([human, thing])
            intended.append((human_box, obj_box, verb))

        triplets = self.label_pairs(entities)
        labelled = {(t.human_box, t.object_box): self.verbs[t.verb] for t in triplets}
        for human_box, obj_box, verb in intended:
            if labelled.get((human_box, obj_box)) != verb:
                raise RulebookGapError(f"template '{verb}' labelled as {labelled.get((human_box, obj_box))}")

        size = self.config.image_size
        return HOISample(f"{self.config.id_prefix}_{index:05d}", size, size, tuple(entities), tuple(triplets))

    def generate(self):
        rng = np.random.default_rng(self.config.seed)
        samples = [self.scene(i, rng) for i in range(self.config.num_images)]
        logger.info(f"generated {len(samples)} synthetic scenes (seed {self.config.seed})")
        return HOIDataset(samples, self.verbs, self.objects)


def synth_generate(config):
    return SyntheticGenerator(config).generate()
