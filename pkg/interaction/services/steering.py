"""
Steering conduit: evidence fusion, kernel formulation and prefix assembly.

e_k = MLP_fuse([phi_c(v_k) || phi_g(f_global)])
Q_k = FFN(MHCA(Z, e_k)) with pre-norm residual paths (switchable)
X_k = [Q_k ; E(text)]
"""

import logging
from dataclasses import dataclass

import torch
from torch import nn

from interaction.exceptions import ConfigurationError, DimensionMismatchError
from interaction.services.layers import FeedForward, ProjectionMLP, check_width, seeded_init

logger = logging.getLogger(__name__)

FORMULATORS = ('cross_attention', 'mlp', 'direct')


@dataclass(frozen=True)
class SteeringConfig:
    kernel_length: int = 8
    heads: int = 4
    residual: bool = True
    formulator: str = 'cross_attention'
    use_local_evidence: bool = True
    use_global_evidence: bool = True
    slot_seed: int = 0

    def __post_init__(self):
        if self.kernel_length < 0:
            raise ConfigurationError("kernel_length must be >= 0")
        if self.heads <= 0:
            raise ConfigurationError("heads must be positive")
        if self.formulator not in FORMULATORS:
            raise ConfigurationError(f"unknown kernel formulator '{self.formulator}'")
        if self.formulator == 'direct' and self.kernel_length != 1:
            raise ConfigurationError("the direct prefix produces exactly one kernel row")


def scene_token(patch_features):
    """Average-pool P x D_g patch features into the global scene token"""
    if patch_features.dim() != 2 or patch_features.shape[0] == 0:
        raise ConfigurationError("scene token needs at least one patch feature row")
    return patch_features.mean(dim=0)


class EvidenceFusion(nn.Module):
    """Candidate evidence e_k in the generator's hidden space"""

    def __init__(self, d_model, scene_dim, hidden_size, use_local=True, use_global=True):
        super().__init__()
        self.use_local = use_local
        self.use_global = use_global
        self.phi_c = ProjectionMLP(d_model, hidden_size)
        self.phi_g = ProjectionMLP(scene_dim, hidden_size)
        self.fuse = ProjectionMLP(2 * hidden_size, hidden_size)

    def forward(self, v, f_global):
        if not self.use_local:
            v = torch.zeros_like(v)
        if not self.use_global:
            f_global = torch.zeros_like(f_global)
        return self.fuse(torch.cat([self.phi_c(v), self.phi_g(f_global)], dim=-1))


class KernelFormulator(nn.Module):
    """
    Learned slots Z (L x d) read the single evidence token through multi-head
    cross-attention, then a feed-forward block.

    With residual=True: X = Z + MHCA(LN(Z), e, e); Q = X + FFN(LN(X)).
    With residual=False: Q = FFN(LN(MHCA(LN(Z), e, e))).
    """

    def __init__(self, hidden_size, kernel_length, heads, residual=True, slot_seed=0):
        super().__init__()
        if hidden_size % heads:
            raise ConfigurationError("hidden size must be divisible by the kernel heads")
        self.hidden_size = hidden_size
        self.kernel_length = kernel_length
        self.residual = residual
        with seeded_init(slot_seed):
            self.slots = nn.Parameter(torch.randn(kernel_length, hidden_size))
        self.slot_norm = nn.LayerNorm(hidden_size)
        self.attention = nn.MultiheadAttention(hidden_size, heads, batch_first=True)
        self.ffn_norm = nn.LayerNorm(hidden_size)
        self.ffn = FeedForward(hidden_size)

    def forward(self, e, return_attention=False):
        check_width(e, self.hidden_size, 'evidence vector')
        batch = e.shape[0]
        if self.kernel_length == 0:
            empty = e.new_zeros(batch, 0, self.hidden_size)
            return (empty, None) if return_attention else empty
        queries = self.slot_norm(self.slots).unsqueeze(0).expand(batch, -1, -1)
        memory = e.unsqueeze(1)
        attended, weights = self.attention(queries, memory, memory, need_weights=True,
                                           average_attn_weights=False)
        if self.residual:
            x = self.slots.unsqueeze(0) + attended
            kernel = x + self.ffn(self.ffn_norm(x))
        else:
            kernel = self.ffn(self.ffn_norm(attended))
        if return_attention:
            return kernel, weights
        return kernel


class NaiveKernelProjector(nn.Module):
    """MLP stand-in for the cross-attention formulator (ablation)"""

    def __init__(self, hidden_size, kernel_length):
        super().__init__()
        self.hidden_size = hidden_size
        self.kernel_length = kernel_length
        self.net = ProjectionMLP(hidden_size, hidden_size * kernel_length)

    def forward(self, e, return_attention=False):
        kernel = self.net(e).view(e.shape[0], self.kernel_length, self.hidden_size)
        return (kernel, None) if return_attention else kernel


class DirectPrefix(nn.Module):
    """No conduit at all: one linear prefix row straight from v_k (ablation)"""

    def __init__(self, d_model, hidden_size):
        super().__init__()
        self.proj = nn.Linear(d_model, hidden_size)

    def forward(self, v, f_global, return_attention=False):
        kernel = self.proj(v).unsqueeze(1)
        return (kernel, None) if return_attention else kernel


class SteeringConduit(nn.Module):
    def __init__(self, config, d_model, scene_dim, hidden_size):
        super().__init__()
        self.config = config
        self.hidden_size = hidden_size
        if config.formulator == 'direct':
            self.direct = DirectPrefix(d_model, hidden_size)
            return
        self.evidence = EvidenceFusion(d_model, scene_dim, hidden_size,
                                       use_local=config.use_local_evidence,
                                       use_global=config.use_global_evidence)
        if config.formulator == 'mlp':
            self.formulator = NaiveKernelProjector(hidden_size, config.kernel_length)
        else:
            self.formulator = KernelFormulator(hidden_size, config.kernel_length, config.heads,
                                               residual=config.residual, slot_seed=config.slot_seed)

    @property
    def kernel_length(self):
        return 1 if self.config.formulator == 'direct' else self.config.kernel_length

    def forward(self, v, f_global, return_attention=False):
        """v: B x d_model, f_global: B x D_g -> kernels B x L x d"""
        if self.config.formulator == 'direct':
            return self.direct(v, f_global, return_attention=return_attention)
        e = fuse_evidence(v, f_global, self.evidence)
        return formulate_kernel(e, self.formulator, return_attention=return_attention)


def fuse_evidence(v_k, f_global, params):
    return params(v_k, f_global)


def formulate_kernel(e_k, params, return_attention=False):
    squeeze = e_k.dim() == 1
    if squeeze:
        e_k = e_k.unsqueeze(0)
    out = params(e_k, return_attention=return_attention)
    if not squeeze:
        return out
    if return_attention:
        kernel, weights = out
        return kernel.squeeze(0), (None if weights is None else weights.squeeze(0))
    return out.squeeze(0)


def assemble_prefix(kernel, text_tokens, embed_text):
    """
    [Q_k ; E(text)] along the sequence axis.

    kernel is L x d or B x L x d (L may be 0); text_tokens is a length-T id
    sequence shared by the whole batch.
    """
    text_tokens = torch.as_tensor(text_tokens, dtype=torch.long)
    if text_tokens.dim() != 1 or text_tokens.numel() == 0:
        raise ConfigurationError("prefix assembly needs a non-empty 1-D token sequence")
    text = embed_text(text_tokens).to(kernel.dtype)
    if text.shape[-1] != kernel.shape[-1]:
        raise DimensionMismatchError('text embedding', kernel.shape[-1], text.shape[-1])
    if kernel.dim() == 2:
        return torch.cat([kernel, text], dim=0)
    return torch.cat([kernel, text.unsqueeze(0).expand(kernel.shape[0], -1, -1)], dim=1)
