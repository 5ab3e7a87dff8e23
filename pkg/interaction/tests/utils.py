"""Small fixtures shared by the test modules."""

import json

import torch

from interaction.services.generator import INQUIRY_TEMPLATE, VerbVocabulary, build_tokenizer, toy_generator
from interaction.services.geometry import BoundingBox, EntityDetection
from interaction.services.run_config import RunConfig
from interaction.services.synthetic import SYNTH_SYNONYMS, SYNTH_VERBS

TINY_CONFIG = {
    'name': 'tiny',
    'seed': 0,
    'synthetic': {'train_images': 6, 'test_images': 3},
    'optimizer': {'steps': 2, 'batch_size': 2, 'log_every': 1},
    'generator': {'hidden_size': 16, 'heads': 2, 'scene_dim': 16},
    'steering': {'kernel_length': 2, 'heads': 2},
}


def tiny_config(**sections):
    config = RunConfig.from_dict(json.loads(json.dumps(TINY_CONFIG)))
    return config.with_changes(**sections) if sections else config


def write_config(path, **overrides):
    data = json.loads(json.dumps(TINY_CONFIG))
    for key, value in overrides.items():
        if isinstance(value, dict):
            data.setdefault(key, {}).update(value)
        else:
            data[key] = value
    path.write_text(json.dumps(data), encoding='utf-8')
    return path


def box(x1, y1, x2, y2):
    return BoundingBox(float(x1), float(y1), float(x2), float(y2))


def detection(b, category, confidence=1.0, d_z=16, d_a=16, seed=0):
    generator = torch.Generator().manual_seed(seed)
    return EntityDetection(
        box=b,
        category=category,
        confidence=confidence,
        instance_token=torch.randn(d_z, generator=generator),
        appearance_token=torch.randn(d_a, generator=generator),
    )


def synth_vocabulary():
    tokenizer = build_tokenizer(SYNTH_VERBS, SYNTH_SYNONYMS)
    return VerbVocabulary(SYNTH_VERBS, tokenizer, SYNTH_SYNONYMS)


def small_generator(vocab, seed=0, d=16):
    return toy_generator(seed=seed, d=d, layers=1, tokenizer=vocab.tokenizer, heads=2, scene_dim=16)


def inquiry_tokens(vocab):
    return torch.tensor(vocab.tokenizer.encode(INQUIRY_TEMPLATE), dtype=torch.long)
