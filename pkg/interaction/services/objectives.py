"""
Hybrid training objective.

L = l_det L_det + l_sal L_sal + l_gen L_gen + l_nce L_nce + l_logic L_logic

L_sal: BCE on salience scores against Hungarian-matched labels
L_gen: teacher-forced CE of the verb phrase, logits restricted to the verb mask
L_nce: InfoNCE between the mean kernel row and frozen verb embeddings
L_logic: sum over exclusive verb pairs of min(p(v), p(v')) at the first verb token
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment

from interaction.exceptions import ConfigurationError, NonFiniteLossError, VocabularyError
from interaction.services.generator import PAD_ID, allowed_token_mask
from interaction.services.geometry import iou
from interaction.services.steering import assemble_prefix

logger = logging.getLogger(__name__)

LOSS_COMPONENTS = ('det', 'sal', 'gen', 'nce', 'logic', 'cls')
MISMATCH_COST = 1e6


@dataclass(frozen=True)
class LossWeights:
    det: float = 0.0
    sal: float = 1.0
    gen: float = 1.0
    nce: float = 0.5
    logic: float = 0.1
    cls: float = 1.0
    tau: float = 0.07

    def __post_init__(self):
        for name in LOSS_COMPONENTS:
            if getattr(self, name) < 0:
                raise ConfigurationError(f"loss weight '{name}' must be non-negative")
        if self.tau <= 0:
            raise ConfigurationError(f"temperature tau must be positive, got {self.tau}")


class ExclusionSet:
    """Unordered pairs of mutually exclusive verb ids"""

    def __init__(self, pairs, num_verbs=None):
        normalized = set()
        for a, b in pairs:
            if a == b:
                raise VocabularyError(f"exclusion pair ({a}, {b}) repeats one verb")
            if num_verbs is not None and not (0 <= a < num_verbs and 0 <= b < num_verbs):
                raise VocabularyError(f"exclusion pair ({a}, {b}) references an unknown verb")
            normalized.add((min(a, b), max(a, b)))
        self.pairs = frozenset(normalized)

    @classmethod
    def from_phrases(cls, phrase_pairs, vocab):
        return cls([(vocab.verb_id(a), vocab.verb_id(b)) for a, b in phrase_pairs], len(vocab))

    @classmethod
    def from_file(cls, path, vocab):
        phrase_pairs = []
        for n, line in enumerate(Path(path).read_text(encoding='utf-8').splitlines()):
            if not line.strip():
                continue
            parts = line.split('\t')
            if len(parts) != 2:
                raise VocabularyError(f"{path}:{n + 1}: expected 'verbA<TAB>verbB'")
            phrase_pairs.append((parts[0], parts[1]))
        return cls.from_phrases(phrase_pairs, vocab)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(sorted(self.pairs))


class NegativeBank:
    """W-: every other verb for small vocabularies, else a fixed-size uniform sample"""

    def __init__(self, num_verbs, exhaustive_limit=64, sample_size=32, seed=0):
        if num_verbs < 2:
            raise ConfigurationError("contrastive negatives need at least two verbs")
        self.num_verbs = num_verbs
        self.sample_size = min(sample_size, num_verbs - 1)
        self.strategy = 'exhaustive' if num_verbs <= exhaustive_limit else 'sampled'
        self.rng = np.random.default_rng(seed)

    def negatives(self, positive):
        others = [v for v in range(self.num_verbs) if v != positive]
        if self.strategy == 'exhaustive':
            return others
        return sorted(self.rng.choice(others, size=self.sample_size, replace=False).tolist())

    def batch(self, positives):
        return torch.tensor([self.negatives(int(p)) for p in positives], dtype=torch.long)


@dataclass(frozen=True)
class GroundTruthPair:
    """GT triplets sharing boxes and object category collapse into one pair"""
    human_box: object
    object_box: object
    object_category: int
    verbs: tuple


def group_ground_truth(triplets):
    groups = {}
    for t in triplets:
        key = (t.human_box, t.object_box, t.object_category)
        if key not in groups:
            groups[key] = []
        if t.verb not in groups[key]:
            groups[key].append(t.verb)
    return [GroundTruthPair(h, o, c, tuple(verbs)) for (h, o, c), verbs in groups.items()]


def matching_cost(candidates, gt_pairs):
    """
    candidates: list of (human_box, object_box, object_category).
    cost = 1 - min(IoU_h, IoU_o); class mismatch costs MISMATCH_COST.
    """
    cost = np.full((len(candidates), len(gt_pairs)), MISMATCH_COST)
    for i, (h_box, o_box, category) in enumerate(candidates):
        for j, gt in enumerate(gt_pairs):
            if category != gt.object_category:
                continue
            cost[i, j] = 1.0 - min(iou(h_box, gt.human_box), iou(o_box, gt.object_box))
    return cost


def hungarian_match(candidates, gt_pairs):
    """One-to-one assignment; returns {candidate index: gt index}, mismatches dropped"""
    if not candidates or not gt_pairs:
        return {}
    cost = matching_cost(candidates, gt_pairs)
    rows, cols = linear_sum_assignment(cost)
    return {int(i): int(j) for i, j in zip(rows, cols) if cost[i, j] < MISMATCH_COST}


def salience_labels(candidates, gt_pairs):
    matches = hungarian_match(candidates, gt_pairs)
    labels = torch.zeros(len(candidates))
    for i in matches:
        labels[i] = 1.0
    return labels, matches


def bce_salience(scores, labels):
    if scores.numel() == 0:
        return scores.sum()
    eps = torch.finfo(scores.dtype).eps
    return F.binary_cross_entropy(scores.clamp(eps, 1 - eps), labels.to(scores.dtype))


def loss_salience(scores, gt_pairs, candidates):
    labels, _ = salience_labels(candidates, gt_pairs)
    return bce_salience(scores, labels)


def teacher_forced_logits(kernels, targets, gen, inquiry_tokens):
    """
    Logits predicting each target token given the kernel prefix, the inquiry and
    the preceding target tokens. kernels: B x L x d; targets: list of id lists.
    Returns (logits B x T_max x V, padded targets B x T_max).
    """
    if kernels.dim() == 2:
        kernels = kernels.unsqueeze(0)
    if len(targets) != kernels.shape[0]:
        raise ConfigurationError(f"{len(targets)} targets for {kernels.shape[0]} kernels")
    if any(len(t) == 0 for t in targets):
        raise ConfigurationError("empty generative target")
    t_max = max(len(t) for t in targets)
    padded = torch.full((len(targets), t_max), PAD_ID, dtype=torch.long)
    for b, t in enumerate(targets):
        padded[b, :len(t)] = torch.as_tensor(t, dtype=torch.long)

    prefix = assemble_prefix(kernels, inquiry_tokens, gen.embed_text)
    sequence = torch.cat([prefix, gen.embed_text(padded[:, :-1]).to(prefix.dtype)], dim=1)
    logits, _ = gen.decode_step(sequence)
    start = prefix.shape[1] - 1
    return logits[:, start:start + t_max], padded


def masked_log_probs(logits, allowed):
    return torch.log_softmax(logits.masked_fill(~allowed, float('-inf')), dim=-1)


def loss_generative(kernels, targets, gen, vocab, inquiry_tokens, mask=None, append_eos=True,
                    logits=None):
    """
    -sum_t log p(y_t | y_<t, Q) under the verb mask, averaged over the batch.
    Targets must already end with <eos> when append_eos is on.
    """
    allowed = allowed_token_mask(vocab, mask, append_eos)
    for t in targets:
        if not all(bool(allowed[i]) for i in t):
            raise VocabularyError(f"target tokens {list(t)} fall outside the decoding mask")
    if logits is None:
        logits, padded = teacher_forced_logits(kernels, targets, gen, inquiry_tokens)
    else:
        padded = torch.full(logits.shape[:2], PAD_ID, dtype=torch.long)
        for b, t in enumerate(targets):
            padded[b, :len(t)] = torch.as_tensor(t, dtype=torch.long)
    log_probs = masked_log_probs(logits, allowed.to(logits.device))
    picked = log_probs.gather(-1, padded.unsqueeze(-1)).squeeze(-1)
    valid = padded != PAD_ID
    picked = torch.where(valid, picked, torch.zeros_like(picked))
    return -picked.sum(dim=1).mean()


def first_step_verb_probs(first_logits, vocab, masked=True, mask=None, append_eos=True):
    """p(v | Q) read off the softmax of the first verb token, B x |V|"""
    if masked:
        probs = torch.exp(masked_log_probs(first_logits, allowed_token_mask(vocab, mask, append_eos)))
    else:
        probs = torch.softmax(first_logits, dim=-1)
    return probs[..., vocab.first_token_ids]


def loss_logic(verb_probs, exclusions):
    """sum over (v, v') in M of min(p(v), p(v')); ties split the subgradient equally"""
    if verb_probs.dim() == 1:
        verb_probs = verb_probs.unsqueeze(0)
    num_verbs = verb_probs.shape[-1]
    total = verb_probs.new_zeros(verb_probs.shape[0])
    for a, b in exclusions:
        if not (0 <= a < num_verbs and 0 <= b < num_verbs):
            raise VocabularyError(f"exclusion pair ({a}, {b}) references an unknown verb")
        pa, pb = verb_probs[:, a], verb_probs[:, b]
        total = total + 0.5 * (pa + pb - torch.abs(pa - pb))
    return total.mean()


def info_nce(query, positive, negatives, tau):
    """
    query: B x d, positive: B x d, negatives: B x M x d.
    Cross-entropy over cosine similarities / tau with the positive at index 0.
    """
    if tau <= 0:
        raise ConfigurationError(f"temperature tau must be positive, got {tau}")
    if negatives.shape[1] < 1:
        raise ConfigurationError("InfoNCE needs at least one negative")
    pos = F.cosine_similarity(query, positive, dim=-1).unsqueeze(1)
    neg = F.cosine_similarity(query.unsqueeze(1), negatives, dim=-1)
    logits = torch.cat([pos, neg], dim=1) / tau
    target = torch.zeros(query.shape[0], dtype=torch.long, device=query.device)
    return F.cross_entropy(logits, target)


def loss_nce(kernels, positives, negatives, verb_embeddings, tau):
    """Mean kernel row against w+ and W-; verb embeddings are frozen"""
    if kernels.dim() == 2:
        kernels = kernels.unsqueeze(0)
    if kernels.shape[1] == 0:
        raise ConfigurationError("InfoNCE needs a kernel with at least one row")
    positives = torch.as_tensor(positives, dtype=torch.long)
    negatives = torch.as_tensor(negatives, dtype=torch.long)
    if negatives.dim() == 1:
        negatives = negatives.unsqueeze(0)
    table = verb_embeddings.detach().to(kernels.dtype)
    return info_nce(kernels.mean(dim=1), table[positives], table[negatives], tau)


def loss_classifier(logits, verbs):
    return F.cross_entropy(logits, torch.as_tensor(verbs, dtype=torch.long))


def zero_detection_loss():
    return torch.zeros(())


def total_loss(components, weights, det_hook=zero_detection_loss):
    """
    Weighted sum of the loss components. Components absent from the mapping
    count as zero; L_det comes from det_hook unless given explicitly.
    """
    components = dict(components)
    if 'det' not in components and weights.det > 0:
        components['det'] = det_hook()
    total = torch.zeros(())
    for name, value in components.items():
        if name not in LOSS_COMPONENTS:
            raise ConfigurationError(f"unknown loss component '{name}'")
        value = torch.as_tensor(value, dtype=torch.float32) if not torch.is_tensor(value) else value
        if not math.isfinite(float(value.detach())):
            logger.error(f"loss component {name} is not finite: {float(value.detach())}")
            raise NonFiniteLossError(name, float(value.detach()))
        weight = getattr(weights, name)
        if weight:
            total = total + weight * value
    return total
