"""Small building blocks shared by the perception and steering stages."""

import hashlib
from contextlib import contextmanager

import torch
from torch import nn

from interaction.exceptions import DimensionMismatchError


class ProjectionMLP(nn.Module):
    """Linear -> GELU -> Linear; the "small projection MLP" used throughout"""

    def __init__(self, in_dim, out_dim, hidden_dim=None):
        super().__init__()
        hidden_dim = hidden_dim or max(in_dim, out_dim)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden_dim),
            nn.GELU(),
            nn.Linear(hidden_dim, out_dim),
        )

    def forward(self, x):
        check_width(x, self.in_dim, 'projection input')
        return self.net(x)


class FeedForward(nn.Module):
    def __init__(self, dim, mult=4):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, dim * mult),
            nn.GELU(),
            nn.Linear(dim * mult, dim),
        )

    def forward(self, x):
        return self.net(x)


def check_width(x, expected, what):
    if x.shape[-1] != expected:
        raise DimensionMismatchError(what, expected, x.shape[-1])
    return x


def freeze(module):
    """Detach a module from training: no grads, eval mode"""
    module.requires_grad_(False)
    module.eval()
    return module


def parameter_checksum(*modules):
    """SHA-256 over the raw bytes of every parameter and buffer, in name order"""
    digest = hashlib.sha256()
    for module in modules:
        for name, tensor in sorted(module.state_dict().items()):
            digest.update(name.encode())
            digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


@contextmanager
def seeded_init(seed):
    """Give module constructors a private, seeded RNG stream"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield
