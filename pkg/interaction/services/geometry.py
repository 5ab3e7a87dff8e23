"""
Core geometric types and the pairwise geometry encoding.

Boxes are corner-format floats in absolute pixels. Anything arriving in
center format goes through BoundingBox.from_center at ingestion time.
"""

import math
from dataclasses import dataclass, field

import torch

from interaction.exceptions import InvalidBoxError, DimensionMismatchError, ConfigurationError

PERSON_CATEGORY = 0
NO_INTERACTION = -1

GEOMETRY_DIM = 8
GEOMETRY_FIELDS = (
    'delta_cx', 'delta_cy', 'log_w_ratio', 'log_h_ratio',
    'iou', 'intersection_over_enclosing', 'human_area_ratio', 'object_area_ratio',
)


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidBoxError(f"non-finite box coordinates {coords}")
        if min(coords) < 0:
            raise InvalidBoxError(f"negative box coordinates {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise InvalidBoxError(f"degenerate box {coords}")

    @classmethod
    def from_center(cls, cx, cy, w, h):
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    @classmethod
    def from_list(cls, values):
        if len(values) != 4:
            raise InvalidBoxError(f"expected 4 coordinates, got {len(values)}")
        return cls(*(float(v) for v in values))

    @property
    def width(self):
        return self.x2 - self.x1

    @property
    def height(self):
        return self.y2 - self.y1

    @property
    def area(self):
        return self.width * self.height

    @property
    def center(self):
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    @property
    def diagonal(self):
        return math.hypot(self.width, self.height)

    def scaled(self, factor):
        return BoundingBox(self.x1 * factor, self.y1 * factor, self.x2 * factor, self.y2 * factor)

    def contains(self, other):
        return (self.x1 <= other.x1 and self.y1 <= other.y1
                and self.x2 >= other.x2 and self.y2 >= other.y2)

    def within(self, width, height):
        return self.x2 <= width and self.y2 <= height

    def as_list(self):
        return [self.x1, self.y1, self.x2, self.y2]

    def __str__(self):
        return f"({self.x1:.1f}, {self.y1:.1f}, {self.x2:.1f}, {self.y2:.1f})"


@dataclass(frozen=True)
class EntityDetection:
    """A localized human or object as delivered by the (frozen) detector"""
    box: BoundingBox
    category: int
    confidence: float
    instance_token: torch.Tensor = field(compare=False, repr=False)
    appearance_token: torch.Tensor = field(compare=False, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ConfigurationError(f"detection confidence {self.confidence} outside [0, 1]")

    @property
    def is_person(self):
        return self.category == PERSON_CATEGORY

    def check_dims(self, d_z, d_a):
        if self.instance_token.shape[-1] != d_z:
            raise DimensionMismatchError('instance token', d_z, self.instance_token.shape[-1])
        if self.appearance_token.shape[-1] != d_a:
            raise DimensionMismatchError('appearance token', d_a, self.appearance_token.shape[-1])


@dataclass(frozen=True)
class HOITriplet:
    """<human box, verb, object box> with a score; ground truth carries score 1"""
    human_box: BoundingBox
    object_box: BoundingBox
    object_category: int
    verb: int
    score: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ConfigurationError(f"triplet score {self.score} outside [0, 1]")

    @property
    def triplet_class(self):
        return (self.verb, self.object_category)


@dataclass(frozen=True)
class GeometryVector:
    values: tuple

    def __post_init__(self):
        if len(self.values) != GEOMETRY_DIM:
            raise DimensionMismatchError('geometry vector', GEOMETRY_DIM, len(self.values))

    def __getitem__(self, key):
        if isinstance(key, str):
            return self.values[GEOMETRY_FIELDS.index(key)]
        return self.values[key]

    def as_tensor(self, dtype=torch.float32):
        return torch.tensor(self.values, dtype=dtype)


def intersection_area(a, b):
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a, b):
    """Intersection over union of two valid boxes, 0 when disjoint"""
    if a.area <= 0 or b.area <= 0:
        raise InvalidBoxError("iou of a zero-area box")
    if a == b:
        return 1.0
    inter = intersection_area(a, b)
    return inter / (a.area + b.area - inter)


def enclosing_box(a, b):
    return BoundingBox(min(a.x1, b.x1), min(a.y1, b.y1), max(a.x2, b.x2), max(a.y2, b.y2))


def geometric_encoding(b_h, b_o, image_w, image_h):
    """
    Pairwise geometry G(b_h, b_o) as an 8-vector:

    [dcx, dcy, log(w_o/w_h), log(h_o/h_h), IoU, intersection / enclosing-box area,
     human area / image area, object area / image area]

    Center offsets are divided by sqrt(diag_h * diag_o) so swapping the boxes
    negates them exactly; every entry is a ratio, so the vector does not move
    under a joint rescaling of boxes and image.
    """
    if image_w <= 0 or image_h <= 0:
        raise InvalidBoxError(f"invalid image size {image_w}x{image_h}")
    if b_h.area <= 0 or b_o.area <= 0:
        raise InvalidBoxError("geometric encoding of a zero-area box")

    (hcx, hcy), (ocx, ocy) = b_h.center, b_o.center
    # not diag_h alone: equals it when the diagonals match, and keeps (h, o) -> (o, h) an exact negation
    scale = math.sqrt(b_h.diagonal * b_o.diagonal)
    image_area = image_w * image_h

    values = (
        (ocx - hcx) / scale,
        (ocy - hcy) / scale,
        math.log(b_o.width / b_h.width),
        math.log(b_o.height / b_h.height),
        iou(b_h, b_o),
        intersection_area(b_h, b_o) / enclosing_box(b_h, b_o).area,
        b_h.area / image_area,
        b_o.area / image_area,
    )
    return GeometryVector(values)
