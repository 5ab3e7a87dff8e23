"""
Perception stage: entity fusion, candidate-pair tokens, salience adjudication,
orchestration gate and candidate selection.

Handles:
- RoI pooling of appearance tokens from a backbone feature map
- f_x = MLP_fuse([phi_inst(z_x) || phi_app(a_x)])
- u_k = W [f_h || f_o || phi_g(G(b_h, b_o))] + b
- a permutation-equivariant transformer over the candidate set
- s_k, r_k and the per-human quota / coverage selection
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import torch
from torch import nn
from torchvision.ops import roi_align

from interaction.exceptions import ConfigurationError, InvalidBoxError
from interaction.services.geometry import GEOMETRY_DIM, geometric_encoding
from interaction.services.layers import ProjectionMLP, check_width

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PerceptionConfig:
    d_z: int = 16
    d_a: int = 16
    d_e: int = 32
    d_g: int = 16
    d_model: int = 32
    sat_layers: int = 2
    sat_heads: int = 4
    alpha: float = 0.6
    per_human_quota: int = 3
    max_candidates: int = 16
    roi_output_size: tuple = (2, 2)

    def __post_init__(self):
        for name in ('d_z', 'd_a', 'd_e', 'd_g', 'd_model', 'sat_layers', 'sat_heads', 'max_candidates'):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha {self.alpha} outside [0, 1]")
        if self.per_human_quota < 1:
            raise ConfigurationError("per-human quota K must be at least 1")
        if self.d_model % self.sat_heads:
            raise ConfigurationError("d_model must be divisible by sat_heads")


@dataclass
class CandidatePair:
    """One (human, object) hypothesis; tensors are filled in as the stage runs"""
    human_index: int
    object_index: int
    order: int
    u: Optional[torch.Tensor] = field(default=None, repr=False)
    u_tilde: Optional[torch.Tensor] = field(default=None, repr=False)
    s: Optional[float] = None
    r: Optional[float] = None
    selected: bool = False

    @property
    def key(self):
        return (self.human_index, self.object_index)

    @property
    def v(self):
        # after selection the contextualized token is the adjudicated token v_k
        return self.u_tilde


def roi_pool(feature_map, box, out_size=(2, 2), spatial_scale=1.0):
    """
    Appearance token for one box.

    feature_map is H x W x C. The box is scaled into feature coordinates,
    clipped to the map, bilinearly sampled on an out_size grid (RoIAlign with
    adaptive sampling) and averaged per channel, giving a length-C token.
    """
    height, width, channels = feature_map.shape
    x1 = min(max(box.x1 * spatial_scale, 0.0), float(width))
    y1 = min(max(box.y1 * spatial_scale, 0.0), float(height))
    x2 = min(max(box.x2 * spatial_scale, 0.0), float(width))
    y2 = min(max(box.y2 * spatial_scale, 0.0), float(height))
    if x2 <= x1 or y2 <= y1:
        raise InvalidBoxError(f"box {box} is degenerate after clipping to the feature map")

    features = feature_map.permute(2, 0, 1).unsqueeze(0)
    rois = torch.tensor([[0.0, x1, y1, x2, y2]], dtype=feature_map.dtype)
    pooled = roi_align(features, rois, output_size=tuple(out_size), spatial_scale=1.0,
                       sampling_ratio=-1, aligned=True)
    return pooled.mean(dim=(2, 3)).reshape(channels)


class EntityFusion(nn.Module):
    """Entity evidence f_x from instance and appearance tokens"""

    def __init__(self, d_z, d_a, d_e):
        super().__init__()
        self.d_z = d_z
        self.d_a = d_a
        self.phi_inst = ProjectionMLP(d_z, d_e)
        self.phi_app = ProjectionMLP(d_a, d_e)
        self.fuse = ProjectionMLP(2 * d_e, d_e)

    def forward(self, z, a):
        check_width(z, self.d_z, 'instance token')
        check_width(a, self.d_a, 'appearance token')
        return self.fuse(torch.cat([self.phi_inst(z), self.phi_app(a)], dim=-1))


class CandidateTokenizer(nn.Module):
    def __init__(self, d_e, d_g, d_model):
        super().__init__()
        self.d_e = d_e
        self.d_g = d_g
        self.phi_g = nn.Linear(GEOMETRY_DIM, d_g)
        self.proj = nn.Linear(2 * d_e + d_g, d_model)

    def forward(self, f_h, f_o, geometry):
        check_width(geometry, GEOMETRY_DIM, 'geometry vector')
        return build_candidate_token(f_h, f_o, self.phi_g(geometry), self)


class SalienceAdjudicator(nn.Module):
    """Pre-norm transformer encoder over the candidate set, no positional encoding"""

    def __init__(self, d_model, layers, heads):
        super().__init__()
        self.d_model = d_model
        layer = nn.TransformerEncoderLayer(
            d_model, heads, dim_feedforward=4 * d_model, dropout=0.0,
            activation='gelu', batch_first=True, norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, layers, norm=nn.LayerNorm(d_model),
                                             enable_nested_tensor=False)
        self.salience_head = nn.Linear(d_model, 1)

    def forward(self, tokens):
        return sat_forward(tokens, self)


def fuse_entity(z_x, a_x, params):
    return params(z_x, a_x)


def build_candidate_token(f_h, f_o, g_k, params):
    check_width(f_h, params.d_e, 'human entity')
    check_width(f_o, params.d_e, 'object entity')
    check_width(g_k, params.d_g, 'projected geometry')
    return params.proj(torch.cat([f_h, f_o, g_k], dim=-1))


def sat_forward(tokens, params):
    """N x d_model -> N x d_model; empty input gives empty output"""
    check_width(tokens, params.d_model, 'candidate tokens')
    if tokens.shape[0] == 0:
        return tokens.clone()
    return params.encoder(tokens.unsqueeze(0)).squeeze(0)


def salience_score(u_tilde, head):
    check_width(u_tilde, head.in_features, 'contextualized token')
    return torch.sigmoid(head(u_tilde)).squeeze(-1)


def orchestration_gate(s, conf_h, conf_o, alpha):
    """r_k = alpha * s_k + (1 - alpha) * min(conf_h, conf_o)"""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha {alpha} outside [0, 1]")
    if torch.is_tensor(conf_h) or torch.is_tensor(conf_o):
        floor = torch.minimum(torch.as_tensor(conf_h), torch.as_tensor(conf_o))
    else:
        floor = min(conf_h, conf_o)
    return alpha * s + (1.0 - alpha) * floor


def build_candidate_pairs(detections):
    """Every (person, other entity) pair, self pairs excluded, in construction order"""
    pairs = []
    for h, human in enumerate(detections):
        if not human.is_person:
            continue
        for o in range(len(detections)):
            if o == h:
                continue
            pairs.append(CandidatePair(human_index=h, object_index=o, order=len(pairs)))
    return pairs


def pair_geometry(detections, pairs, image_w, image_h, dtype=torch.float32):
    if not pairs:
        return torch.zeros(0, GEOMETRY_DIM, dtype=dtype)
    rows = [
        geometric_encoding(detections[p.human_index].box, detections[p.object_index].box,
                           image_w, image_h).values
        for p in pairs
    ]
    return torch.tensor(rows, dtype=dtype)


def _rank_key(pair):
    return (-pair.r, pair.object_index, pair.order)


def select_candidates(pairs, config):
    """
    Compact candidate set P*.

    Per human keep at most K pairs by descending r_k. Every human keeps its best
    pair (coverage) before the remaining quota pairs fill the global budget of
    max_candidates in r_k order. Ties: lower object index, then construction order.
    """
    for pair in pairs:
        pair.selected = False
    if not pairs:
        return []
    if any(p.r is None for p in pairs):
        raise ConfigurationError("select_candidates needs refined scores r_k on every pair")

    per_human = {}
    for pair in sorted(pairs, key=_rank_key):
        kept = per_human.setdefault(pair.human_index, [])
        if len(kept) < config.per_human_quota:
            kept.append(pair)

    best = sorted((kept[0] for kept in per_human.values()), key=_rank_key)
    rest = sorted((p for kept in per_human.values() for p in kept[1:]), key=_rank_key)

    chosen = best[:config.max_candidates]
    chosen += rest[:max(0, config.max_candidates - len(chosen))]
    chosen.sort(key=_rank_key)
    for pair in chosen:
        pair.selected = True
    return chosen


class PerceptionHead(nn.Module):
    """Learnable part of the perception stage"""

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.entity_fusion = EntityFusion(config.d_z, config.d_a, config.d_e)
        self.tokenizer = CandidateTokenizer(config.d_e, config.d_g, config.d_model)
        self.sat = SalienceAdjudicator(config.d_model, config.sat_layers, config.sat_heads)

    def forward(self, instance_tokens, appearance_tokens, human_index, object_index, geometry):
        """
        instance/appearance tokens: E x d_z / E x d_a for the image's detections.
        human_index/object_index: N long tensors. geometry: N x 8.
        Returns (u, u_tilde, s).
        """
        fused = self.entity_fusion(instance_tokens, appearance_tokens)
        u = self.tokenizer(fused[human_index], fused[object_index], geometry)
        u_tilde = self.sat(u)
        s = salience_score(u_tilde, self.sat.salience_head)
        return u, u_tilde, s

    def adjudicate(self, detections, pairs, geometry):
        """Score the pairs in place (u, u_tilde, s, r) and return the selected set"""
        if not pairs:
            return []
        z = torch.stack([d.instance_token for d in detections])
        a = torch.stack([d.appearance_token for d in detections])
        h_idx = torch.tensor([p.human_index for p in pairs])
        o_idx = torch.tensor([p.object_index for p in pairs])
        u, u_tilde, s = self(z, a, h_idx, o_idx, geometry)
        for k, pair in enumerate(pairs):
            pair.u = u[k]
            pair.u_tilde = u_tilde[k]
            pair.s = float(s[k])
            pair.r = float(orchestration_gate(
                pair.s,
                detections[pair.human_index].confidence,
                detections[pair.object_index].confidence,
                self.config.alpha,
            ))
        selected = select_candidates(pairs, self.config)
        logger.debug(f"adjudicated {len(pairs)} pairs, kept {len(selected)}")
        return selected
