"""
Triplet mAP under the Default and Known-Object settings.

A prediction is a true positive when an unmatched ground-truth triplet of the
same (verb, object) class overlaps it with IoU >= threshold on both boxes.
AP uses all-point interpolation of the precision/recall curve.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from interaction.exceptions import ConfigurationError, VocabularyError
from interaction.services.data import RARE_THRESHOLD
from interaction.services.geometry import iou
from interaction.services.splits import SplitSpec, is_unseen, resolve_held_out

logger = logging.getLogger(__name__)

SETTINGS = ('default', 'known_object')
PARTITION_ORDER = ('full', 'rare', 'non_rare', 'unseen', 'seen')


def match_predictions(preds, gts, iou_threshold=0.5):
    """
    Greedy matching in the given (descending score) order. Returns one bool per
    prediction; each GT is used at most once.
    """
    used = [False] * len(gts)
    labels = []
    for pred in preds:
        best, best_overlap = None, -1.0
        for j, gt in enumerate(gts):
            if used[j] or gt.triplet_class != pred.triplet_class:
                continue
            overlap = min(iou(pred.human_box, gt.human_box), iou(pred.object_box, gt.object_box))
            if overlap >= iou_threshold and overlap > best_overlap:
                best, best_overlap = j, overlap
        if best is not None:
            used[best] = True
        labels.append(best is not None)
    return labels


def average_precision(labels, n_gt):
    """
    All-point interpolated AP for TP/FP labels in score order.
    None when there is neither ground truth nor prediction; 0 for predictions without GT.
    """
    if n_gt < 0:
        raise ConfigurationError("n_gt must be >= 0")
    labels = np.asarray(labels, dtype=bool)
    if n_gt == 0:
        return None if labels.size == 0 else 0.0
    if labels.size == 0:
        return 0.0
    tp = np.cumsum(labels)
    fp = np.cumsum(~labels)
    recall = tp / n_gt
    precision = tp / (tp + fp)

    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


@dataclass
class EvalReport:
    setting: str
    split_mode: str
    per_class_ap: dict
    partitions: dict
    mean_ap: dict
    gt_counts: dict = field(default_factory=dict)
    pred_counts: dict = field(default_factory=dict)

    def partition_names(self):
        return [p for p in PARTITION_ORDER if p in self.partitions]

    def to_dict(self, verbs=None, objects=None):
        def name(c):
            if verbs is None or objects is None:
                return f"{c[0]}:{c[1]}"
            return f"{verbs[c[0]]} {objects[c[1]]}"

        return {
            'setting': self.setting,
            'split_mode': self.split_mode,
            'mAP': {p: self.mean_ap[p] for p in self.partition_names()},
            'partition_sizes': {p: len(self.partitions[p]) for p in self.partition_names()},
            'classes': [
                {
                    'verb': c[0],
                    'object': c[1],
                    'name': name(c),
                    'ap': self.per_class_ap[c],
                    'n_gt': self.gt_counts.get(c, 0),
                    'n_pred': self.pred_counts.get(c, 0),
                }
                for c in sorted(self.per_class_ap)
            ],
        }

    def as_table(self, verbs=None, objects=None):
        def fmt(v):
            return '   n/a' if v is None else f"{100 * v:6.2f}"

        lines = [f"setting: {self.setting}   split: {self.split_mode}",
                 f"{'partition':<10} {'classes':>7} {'mAP':>6}"]
        for p in self.partition_names():
            lines.append(f"{p:<10} {len(self.partitions[p]):>7} {fmt(self.mean_ap[p])}")
        lines.append('')
        lines.append(f"{'class':<24} {'n_gt':>5} {'n_pred':>6} {'AP':>6}")
        for row in self.to_dict(verbs, objects)['classes']:
            lines.append(f"{row['name']:<24} {row['n_gt']:>5} {row['n_pred']:>6} {fmt(row['ap'])}")
        return '\n'.join(lines)


def cap_predictions(preds, max_per_image):
    return sorted(preds, key=lambda t: -t.score)[:max_per_image]


def evaluate(predictions, dataset, spec=None, setting='default', iou_threshold=0.5,
             max_per_image=100, train_counts=None, held_out=None):
    """
    predictions: {image_id: [HOITriplet with score]}. Classes are the GT classes
    of `dataset` plus any predicted class; rare/non-rare use `train_counts`
    (defaults to the dataset's own counts).
    """
    if setting not in SETTINGS:
        raise ConfigurationError(f"unknown evaluation setting '{setting}'")
    spec = spec or SplitSpec()
    num_verbs, num_objects = len(dataset.verbs), len(dataset.objects)

    known_ids = {s.image_id for s in dataset.samples}
    outside = sorted(set(predictions) - known_ids)
    if outside:
        logger.warning(f"ignoring predictions for {len(outside)} images outside the evaluated split")

    preds_by_image = {}
    for image_id, preds in predictions.items():
        if image_id not in known_ids:
            continue
        for p in preds:
            if not 0 <= p.verb < num_verbs or not 0 <= p.object_category < num_objects:
                raise VocabularyError(f"prediction {p.triplet_class} on {image_id} outside the vocabulary")
        preds_by_image[image_id] = cap_predictions(preds, max_per_image)

    gt_counts = dataset.triplet_counts()
    pred_counts = defaultdict(int)
    for preds in preds_by_image.values():
        for p in preds:
            pred_counts[p.triplet_class] += 1
    classes = set(gt_counts) | set(pred_counts)

    image_objects = {s.image_id: s.object_categories() for s in dataset.samples}
    per_class_ap = {}
    for c in sorted(classes):
        scored = []
        n_gt = 0
        for order, sample in enumerate(dataset.samples):
            if setting == 'known_object' and c[1] not in image_objects[sample.image_id]:
                continue
            gts = [t for t in sample.triplets if t.triplet_class == c]
            preds = [p for p in preds_by_image.get(sample.image_id, ()) if p.triplet_class == c]
            preds.sort(key=lambda t: -t.score)
            n_gt += len(gts)
            for p, hit in zip(preds, match_predictions(preds, gts, iou_threshold)):
                scored.append((-p.score, order, hit))
        scored.sort(key=lambda x: (x[0], x[1]))
        per_class_ap[c] = average_precision([hit for _, _, hit in scored], n_gt)

    counts = train_counts if train_counts is not None else gt_counts
    rare = {c for c in classes if counts.get(c, 0) < RARE_THRESHOLD}
    partitions = {'full': classes, 'rare': rare, 'non_rare': classes - rare}
    if spec.mode not in ('default', 'rare', 'non_rare'):
        held = frozenset(held_out) if held_out is not None else resolve_held_out(dataset, spec)
        unseen = {c for c in classes if is_unseen(c, spec.mode, held)}
        partitions['unseen'] = unseen
        partitions['seen'] = classes - unseen

    mean_ap = {}
    for name, members in partitions.items():
        values = [per_class_ap[c] for c in sorted(members) if per_class_ap.get(c) is not None]
        mean_ap[name] = float(np.mean(values)) if values else None

    report = EvalReport(setting, spec.mode, per_class_ap, partitions, mean_ap,
                        dict(gt_counts), dict(pred_counts))
    logger.info(f"evaluated {len(classes)} classes ({setting}): full mAP {mean_ap['full']}")
    return report


def oracle_predictions(dataset):
    """Ground truth re-emitted as score-1 predictions"""
    return {s.image_id: list(s.triplets) for s in dataset.samples}
