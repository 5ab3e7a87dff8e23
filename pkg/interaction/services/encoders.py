"""
Frozen stand-in encoders.

The scene raster replaces image decoding: entities are painted as colored
rectangles. A fixed random 1x1 projection turns the raster into the
appearance feature map, and the stand-in detector jitters ground-truth boxes,
scores them by IoU with the clean box and emits instance tokens from a fixed
random projection.
"""

import logging
import math
import zlib

import numpy as np
import torch
from torch import nn

from interaction.exceptions import ConfigurationError, InvalidBoxError
from interaction.services.geometry import BoundingBox, EntityDetection, iou
from interaction.services.layers import freeze, parameter_checksum, seeded_init
from interaction.services.perception import roi_pool

logger = logging.getLogger(__name__)

# RGB per object category; categories beyond the palette wrap around
CATEGORY_PALETTE = (
    (0.9, 0.2, 0.2),
    (0.2, 0.4, 0.9),
    (0.2, 0.8, 0.3),
    (0.9, 0.8, 0.1),
    (0.6, 0.3, 0.8),
    (0.1, 0.8, 0.8),
    (0.8, 0.5, 0.2),
    (0.5, 0.5, 0.5),
)


def category_color(category):
    return CATEGORY_PALETTE[category % len(CATEGORY_PALETTE)]


def raster_geometry(width, height, resolution, patch_size):
    """(scale, raster_w, raster_h): longest side maps to resolution, both sides patch-aligned"""
    if width <= 0 or height <= 0:
        raise InvalidBoxError(f"invalid image size {width}x{height}")
    scale = resolution / max(width, height)
    raster_w = max(patch_size, math.ceil(width * scale / patch_size) * patch_size)
    raster_h = max(patch_size, math.ceil(height * scale / patch_size) * patch_size)
    return scale, raster_w, raster_h


def render_raster(entities, width, height, resolution=32, patch_size=4):
    """
    Paint entities (anything with box, category, attribute) on a black raster.
    Objects first, persons on top. Returns (H x W x 3 tensor, scale).
    """
    scale, raster_w, raster_h = raster_geometry(width, height, resolution, patch_size)
    raster = torch.zeros(raster_h, raster_w, 3)
    ordered = sorted(entities, key=lambda e: e.category == 0)
    for entity in ordered:
        box = entity.box
        x1 = min(int(math.floor(box.x1 * scale)), raster_w - 1)
        y1 = min(int(math.floor(box.y1 * scale)), raster_h - 1)
        x2 = max(int(math.ceil(box.x2 * scale)), x1 + 1)
        y2 = max(int(math.ceil(box.y2 * scale)), y1 + 1)
        color = torch.tensor(category_color(entity.category)) * float(entity.attribute)
        raster[y1:y2, x1:x2] = color
    return raster, scale


class FrozenBackbone(nn.Module):
    """1x1 random projection of the raster to d_a channels, tanh"""

    def __init__(self, d_a, seed=0):
        super().__init__()
        self.d_a = d_a
        with seeded_init(seed + 1):
            self.proj = nn.Conv2d(3, d_a, kernel_size=1)
        freeze(self)

    def forward(self, raster):
        """H x W x 3 raster -> H x W x d_a feature map (differentiable in the raster)"""
        x = raster.permute(2, 0, 1).unsqueeze(0)
        return torch.tanh(self.proj(x)).squeeze(0).permute(1, 2, 0)


class StandInDetector(nn.Module):
    """
    Desk-scale detector: jittered ground-truth boxes, confidence = IoU with the
    clean box, instance token = tanh(W [one-hot(category) || normalized box || confidence]).
    """

    def __init__(self, d_z, num_categories, seed=0, jitter=0.05, roi_output_size=(2, 2)):
        super().__init__()
        if not 0.0 <= jitter < 0.5:
            raise ConfigurationError(f"detector jitter {jitter} outside [0, 0.5)")
        self.d_z = d_z
        self.num_categories = num_categories
        self.seed = seed
        self.jitter = jitter
        self.roi_output_size = tuple(roi_output_size)
        with seeded_init(seed + 2):
            self.instance_proj = nn.Linear(num_categories + 5, d_z)
        freeze(self)

    def _rng(self, image_id):
        return np.random.default_rng([self.seed, zlib.crc32(str(image_id).encode())])

    def jitter_box(self, box, width, height, rng):
        if self.jitter == 0:
            return box
        dx1, dy1, dx2, dy2 = rng.uniform(-self.jitter, self.jitter, size=4)
        x1 = min(max(box.x1 + dx1 * box.width, 0.0), width)
        x2 = min(max(box.x2 + dx2 * box.width, 0.0), width)
        y1 = min(max(box.y1 + dy1 * box.height, 0.0), height)
        y2 = min(max(box.y2 + dy2 * box.height, 0.0), height)
        if x2 <= x1 or y2 <= y1:
            return box
        return BoundingBox(float(x1), float(y1), float(x2), float(y2))

    def instance_token(self, box, category, confidence, width, height):
        if not 0 <= category < self.num_categories:
            raise ConfigurationError(f"category {category} outside the detector's {self.num_categories}")
        one_hot = torch.zeros(self.num_categories)
        one_hot[category] = 1.0
        normalized = torch.tensor([box.x1 / width, box.y1 / height, box.x2 / width, box.y2 / height])
        features = torch.cat([one_hot, normalized, torch.tensor([confidence])])
        with torch.no_grad():
            return torch.tanh(self.instance_proj(features))

    def detect(self, image_id, entities, width, height, feature_map, scale):
        rng = self._rng(image_id)
        detections = []
        for entity in entities:
            box = self.jitter_box(entity.box, width, height, rng)
            confidence = float(iou(box, entity.box))
            with torch.no_grad():
                appearance = roi_pool(feature_map, box, self.roi_output_size, spatial_scale=scale)
            detections.append(EntityDetection(
                box=box,
                category=entity.category,
                confidence=confidence,
                instance_token=self.instance_token(box, entity.category, confidence, width, height),
                appearance_token=appearance,
            ))
        return detections


def frozen_checksum(generator, backbone, detector):
    return parameter_checksum(generator, backbone, detector)
