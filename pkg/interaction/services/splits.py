"""
Rare / non-rare partitions and zero-shot splits.

UC modes hold out triplet classes (rf_uc: rarest first, nf_uc: most frequent
first), uo holds out objects, uv holds out verbs. Training drops every image
that carries a held-out item so nothing unseen leaks in through a co-occurring
pair.
"""

import logging
from dataclasses import dataclass, field

from interaction.exceptions import SplitError
from interaction.services.data import RARE_THRESHOLD
from interaction.services.geometry import PERSON_CATEGORY

logger = logging.getLogger(__name__)

SPLIT_MODES = ('default', 'rare', 'non_rare', 'rf_uc', 'nf_uc', 'uo', 'uv')
UC_MODES = ('rf_uc', 'nf_uc')


@dataclass(frozen=True)
class SplitSpec:
    mode: str = 'default'
    held_out: frozenset = field(default_factory=frozenset)
    num_held_out: int = 0

    def __post_init__(self):
        if self.mode not in SPLIT_MODES:
            raise SplitError(f"unknown split mode '{self.mode}'")
        if self.num_held_out < 0:
            raise SplitError("num_held_out must be >= 0")
        for item in self.held_out:
            if self.mode in UC_MODES and not (isinstance(item, tuple) and len(item) == 2):
                raise SplitError(f"{self.mode} holds out (verb, object) classes, got {item!r}")
            if self.mode in ('uo', 'uv') and not isinstance(item, int):
                raise SplitError(f"{self.mode} holds out integer ids, got {item!r}")
        if self.held_out and self.mode in ('default', 'rare', 'non_rare'):
            raise SplitError(f"mode '{self.mode}' takes no held-out set")


@dataclass
class SplitResult:
    train: object
    held_out: frozenset
    partitions: dict

    def partition(self, name):
        return self.partitions.get(name, set())


def _frequency_order(counts, rarest_first):
    # deterministic: frequency, then class id
    key = (lambda c: (counts[c], c)) if rarest_first else (lambda c: (-counts[c], c))
    return sorted(counts, key=key)


def resolve_held_out(dataset, spec):
    if spec.mode in UC_MODES and not spec.held_out and spec.num_held_out:
        order = _frequency_order(dataset.triplet_counts(), rarest_first=spec.mode == 'rf_uc')
        return frozenset(order[:spec.num_held_out])
    return frozenset(spec.held_out)


def is_unseen(triplet_class, mode, held_out):
    verb, obj = triplet_class
    if mode in UC_MODES:
        return triplet_class in held_out
    if mode == 'uo':
        return obj in held_out
    if mode == 'uv':
        return verb in held_out
    return False


def build_splits(dataset, spec):
    """Training subset plus the evaluation partitions (sets of triplet classes)"""
    held_out = resolve_held_out(dataset, spec)
    classes = dataset.triplet_classes()

    if spec.mode == 'uv' and held_out >= set(range(len(dataset.verbs))):
        raise SplitError("held-out verbs cover the whole verb vocabulary")
    if spec.mode == 'uo':
        if PERSON_CATEGORY in held_out and len(dataset.objects) > 1:
            logger.warning("person held out as an object category")
        if held_out >= set(range(len(dataset.objects))):
            raise SplitError("held-out objects cover the whole object vocabulary")
    if spec.mode in UC_MODES and classes and held_out >= classes:
        raise SplitError("held-out triplet classes cover every class in the dataset")

    unseen = {c for c in classes if is_unseen(c, spec.mode, held_out)}
    train_samples = [
        s for s in dataset.samples
        if not any(is_unseen(t.triplet_class, spec.mode, held_out) for t in s.triplets)
    ]
    train = dataset.subset(train_samples)

    rare = dataset.rare_classes(RARE_THRESHOLD)
    partitions = {
        'full': set(classes),
        'rare': rare,
        'non_rare': classes - rare,
    }
    if spec.mode in UC_MODES + ('uo', 'uv'):
        partitions['unseen'] = unseen
        partitions['seen'] = classes - unseen
    logger.info(f"split {spec.mode}: {len(train_samples)}/{len(dataset)} training images, "
                f"{len(unseen)} unseen classes")
    return SplitResult(train=train, held_out=held_out, partitions=partitions)
