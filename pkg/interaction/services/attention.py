"""
Attention maps for selected candidates.

Two patch-grid heatmaps per candidate, each normalized to [0, 1]:
- encoder: the frozen scene encoder's own pooling attention (no kernel involved)
- kernel: gradient x input relevance of the candidate's kernel energy
  ||Q_k||^2 with respect to the scene raster, summed per patch

Both are overlaid on the raster and written as PNG files; the share of each
map's mass that falls inside the candidate's human/object boxes is reported.
"""

import json
import logging
from dataclasses import dataclass

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402
import torch.nn.functional as F  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from interaction.services.perception import roi_pool  # noqa: E402
from interaction.services.steering import scene_token  # noqa: E402

logger = logging.getLogger(__name__)

PNG_METADATA = {'Software': None}


@dataclass
class CandidateMaps:
    candidate: int
    human_box: object
    object_box: object
    encoder_map: np.ndarray
    kernel_map: np.ndarray
    encoder_mass: float
    kernel_mass: float

    def as_dict(self):
        return {
            'candidate': self.candidate,
            'human_box': self.human_box.as_list(),
            'object_box': self.object_box.as_list(),
            'encoder_mass': self.encoder_mass,
            'kernel_mass': self.kernel_mass,
        }


def normalize_map(values):
    """Scale a non-negative map to [0, 1] by its maximum; an all-zero map stays zero"""
    values = np.abs(np.asarray(values, dtype=np.float64))
    peak = values.max() if values.size else 0.0
    return values / peak if peak > 0 else np.zeros_like(values)


def patch_sum(pixel_map, patch_size):
    """H x W tensor -> (H/p) x (W/p) sums over each patch"""
    pooled = F.avg_pool2d(pixel_map.unsqueeze(0).unsqueeze(0), kernel_size=patch_size)
    return pooled.squeeze(0).squeeze(0) * patch_size * patch_size


def box_union_mask(boxes, scale, grid_shape, patch_size):
    """Patches whose center lies inside any of the boxes (boxes in image coordinates)"""
    rows, cols = grid_shape
    centers_y = (np.arange(rows) + 0.5) * patch_size / scale
    centers_x = (np.arange(cols) + 0.5) * patch_size / scale
    yy, xx = np.meshgrid(centers_y, centers_x, indexing='ij')
    mask = np.zeros(grid_shape, dtype=bool)
    for box in boxes:
        mask |= (xx >= box.x1) & (xx <= box.x2) & (yy >= box.y1) & (yy <= box.y2)
    return mask


def mass_inside(heatmap, mask):
    total = float(heatmap.sum())
    if total <= 0:
        return 0.0
    return float(heatmap[mask].sum()) / total


def kernel_relevance(model, workspace, bundle, candidate):
    """Gradient x input of ||Q_k||^2 with respect to the raster, as a patch-grid map"""
    cfg = workspace.config
    raster = bundle.raster.clone().requires_grad_(True)
    feature_map = workspace.backbone(raster)
    appearance = torch.stack([
        roi_pool(feature_map, d.box, cfg.perception.roi_output_size, spatial_scale=bundle.scale)
        for d in bundle.detections
    ])
    _, u_tilde, _ = model.perception(bundle.instance_tokens, appearance, bundle.human_index,
                                     bundle.object_index, bundle.geometry)
    f_global = scene_token(workspace.generator.encode_scene(raster))
    kernel = model.kernels(u_tilde[candidate:candidate + 1], f_global.unsqueeze(0))
    energy = kernel.pow(2).sum()
    if not energy.requires_grad:
        return np.zeros((raster.shape[0] // cfg.encoder.patch_size, raster.shape[1] // cfg.encoder.patch_size))
    grad, = torch.autograd.grad(energy, raster)
    pixel_relevance = (grad * raster).sum(dim=-1).abs().detach()
    return normalize_map(patch_sum(pixel_relevance, cfg.encoder.patch_size).numpy())


class AttentionMapService:
    def __init__(self, workspace, model, output_dir):
        self.workspace = workspace
        self.model = model
        self.output_dir = output_dir

    def maps_for(self, sample):
        ws = self.workspace
        bundle = ws.bundle(sample)
        self.model.eval()
        with torch.no_grad():
            selected = self.model.perception.adjudicate(bundle.detections, bundle.pairs, bundle.geometry)
            encoder_map = normalize_map(ws.generator.scene_attention(bundle.raster).numpy())
        results = []
        for pair in selected:
            human = bundle.detections[pair.human_index].box
            obj = bundle.detections[pair.object_index].box
            kernel_map = kernel_relevance(self.model, ws, bundle, pair.order)
            mask = box_union_mask([human, obj], bundle.scale, encoder_map.shape, ws.config.encoder.patch_size)
            results.append(CandidateMaps(
                candidate=pair.order,
                human_box=human,
                object_box=obj,
                encoder_map=encoder_map,
                kernel_map=kernel_map,
                encoder_mass=mass_inside(encoder_map, mask),
                kernel_mass=mass_inside(kernel_map, mask),
            ))
        return bundle, results

    def plot(self, image_id):
        """Write the heatmap PNGs and a JSON of masses; returns (maps, written paths)"""
        sample = self.workspace.find_sample(image_id)
        bundle, maps = self.maps_for(sample)
        if not maps:
            logger.warning(f"no candidates selected for {image_id}, nothing to plot")
            return maps, []

        paths = []
        stem = str(image_id).replace('/', '_')
        for item in maps:
            for kind, heatmap in (('encoder', item.encoder_map), ('kernel', item.kernel_map)):
                path = self.output_dir / f"{stem}_cand{item.candidate}_{kind}.png"
                save_overlay(bundle.raster.numpy(), heatmap, [item.human_box, item.object_box],
                             bundle.scale, path, title=f"{kind} | candidate {item.candidate}")
                paths.append(path)

        summary = self.output_dir / f"{stem}_attention.json"
        summary.write_text(json.dumps({'image_id': image_id, 'candidates': [m.as_dict() for m in maps]},
                                      indent=2, sort_keys=True), encoding='utf-8')
        paths.append(summary)
        logger.info(f"wrote {len(paths)} attention files for {image_id}")
        return maps, paths


def save_overlay(raster, heatmap, boxes, scale, path, title=None, alpha=0.5):
    height, width, _ = raster.shape
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(np.clip(raster, 0.0, 1.0))
    ax.imshow(heatmap, cmap='jet', alpha=alpha, vmin=0, vmax=1, extent=(0, width, height, 0),
              interpolation='nearest')
    for box, color in zip(boxes, ('white', 'yellow')):
        ax.add_patch(Rectangle((box.x1 * scale, box.y1 * scale), box.width * scale, box.height * scale,
                               fill=False, edgecolor=color, linewidth=1.5))
    if title:
        ax.set_title(title)
    ax.axis('off')
    fig.savefig(path, dpi=100, bbox_inches='tight', metadata=PNG_METADATA)
    plt.close(fig)
    return path
