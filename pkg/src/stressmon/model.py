"""Token-reconstruction transformer for vital-sign windows.

A window of K time points and n variables is split into non-overlapping
time patches, projected to embeddings, prepended with learnable prompt
tokens, passed through N blocks of time-axis and variable-axis multi-head
self-attention with a dynamic FFN and gating, and finally reconstructed by
a tower head (MLP + dynamic linear + unpatchify).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from .errors import InvalidConfig, ShapeMismatch, DegenerateShape


@dataclass(frozen=True)
class ModelConfig:
    n_vars: int
    window_len: int
    patch_size: int = 1
    embed_dim: int = 128
    n_blocks: int = 3
    n_heads: int = 4
    n_prompt: int = 4
    dyn_size: int = 8  # stored size of dynamic-operator weights, resized at run time
    seed: int = 0

    def __post_init__(self):
        if min(self.n_vars, self.window_len, self.patch_size, self.embed_dim,
               self.n_blocks, self.n_heads, self.dyn_size) < 1:
            raise InvalidConfig("all model dimensions must be >= 1")
        if self.n_prompt < 0:
            raise InvalidConfig("n_prompt must be >= 0")
        if self.window_len % self.patch_size != 0:
            raise InvalidConfig(
                f"patch_size {self.patch_size} must divide window_len {self.window_len}")
        if self.embed_dim % self.n_heads != 0:
            raise InvalidConfig("embed_dim must be divisible by n_heads")

    @property
    def n_sample_tokens(self) -> int:
        return self.window_len // self.patch_size

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


# ---------------------------------------------------------------------------
# dynamic linear operator


def _interp_matrix(n_out: int, n_in: int, dtype, device) -> torch.Tensor:
    """Linear-interpolation resize matrix (n_out x n_in), corners aligned.

    A length-1 output samples the center of the input axis; a length-1
    input broadcasts.
    """
    m = torch.zeros(n_out, n_in, dtype=dtype, device=device)
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    if n_out == 1:
        pos = [(n_in - 1) / 2]
    else:
        pos = [i * (n_in - 1) / (n_out - 1) for i in range(n_out)]
    for i, p in enumerate(pos):
        lo = min(int(math.floor(p)), n_in - 2)
        frac = p - lo
        m[i, lo] = 1.0 - frac
        m[i, lo + 1] = frac
    return m


def resize_bilinear(w: torch.Tensor, out_rows: int, out_cols: int) -> torch.Tensor:
    """Bilinear image-style resize of a 2-D weight matrix."""
    if w.ndim != 2:
        raise ShapeMismatch("expected a 2-D weight matrix")
    if out_rows < 1 or out_cols < 1:
        raise DegenerateShape("resize target must be >= 1 in both dims")
    r = _interp_matrix(out_rows, w.shape[0], w.dtype, w.device)
    c = _interp_matrix(out_cols, w.shape[1], w.dtype, w.device)
    return r @ w @ c.T


def dylinear(z: torch.Tensor, w: torch.Tensor, l_out: int) -> torch.Tensor:
    """Mix tokens along the (second-to-last) token axis with a resized weight.

    ``w`` is resized to (l_out, l_in) so the product is defined; the stored
    orientation (rows -> output tokens) keeps the no-resize case a plain
    matrix multiply.
    """
    l_in = z.shape[-2]
    if l_in < 1 or l_out < 1:
        raise DegenerateShape("token axes must be >= 1")
    w_interp = resize_bilinear(w, l_out, l_in)
    return torch.einsum("oi,...id->...od", w_interp, z)


# ---------------------------------------------------------------------------
# building blocks


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, embed_dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = embed_dim // n_heads
        self.q = nn.Linear(embed_dim, embed_dim)
        self.k = nn.Linear(embed_dim, embed_dim)
        self.v = nn.Linear(embed_dim, embed_dim)
        self.o = nn.Linear(embed_dim, embed_dim)

    def forward(self, x: torch.Tensor, return_weights: bool = False):
        # x: (B, L, d)
        b, l, d = x.shape
        h, hd = self.n_heads, self.head_dim

        def split(t):
            return t.view(b, l, h, hd).transpose(1, 2)  # (B, h, L, hd)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(hd), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, l, d)
        out = self.o(out)
        if return_weights:
            return out, attn
        return out


class Gate(nn.Module):
    """Per-feature multiplicative rescaling, near pass-through at init."""

    def __init__(self, embed_dim: int, init: float = 4.0):
        super().__init__()
        self.alpha = nn.Parameter(torch.full((embed_dim,), init))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * torch.sigmoid(self.alpha)


class EncoderBlock(nn.Module):
    """time attention -> variable attention -> gate -> dynamic FFN -> gate.

    Pre-norm residual sub-layers; the dynamic FFN adds a token-mixing
    dynamic-linear pass to the hidden representation of a point-wise FFN.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.embed_dim
        self.ln_time = nn.LayerNorm(d)
        self.ln_var = nn.LayerNorm(d)
        self.ln_ffn = nn.LayerNorm(d)
        self.attn_time = MultiHeadSelfAttention(d, config.n_heads)
        self.attn_var = MultiHeadSelfAttention(d, config.n_heads)
        self.gate_attn = Gate(d)
        self.gate_ffn = Gate(d)
        self.ffn_in = nn.Linear(d, 2 * d)
        self.ffn_out = nn.Linear(2 * d, d)
        self.dyn_w = nn.Parameter(torch.empty(config.dyn_size, config.dyn_size))

    def time_attention(self, x: torch.Tensor) -> torch.Tensor:
        # attend along time tokens, independently per variable
        b, l, n, d = x.shape
        y = self.ln_time(x).permute(0, 2, 1, 3).reshape(b * n, l, d)
        y = self.attn_time(y).view(b, n, l, d).permute(0, 2, 1, 3)
        return x + y

    def variable_attention(self, x: torch.Tensor) -> torch.Tensor:
        # attend along variables, independently per time token
        b, l, n, d = x.shape
        y = self.ln_var(x).reshape(b * l, n, d)
        y = self.attn_var(y).view(b, l, n, d)
        return x + y

    def dynamic_ffn(self, x: torch.Tensor) -> torch.Tensor:
        b, l, n, d = x.shape
        h = torch.nn.functional.gelu(self.ffn_in(self.ln_ffn(x)))
        # token-mixing pass over the time axis, per variable
        hm = h.permute(0, 2, 1, 3)  # (B, n, L, 2d)
        hm = dylinear(hm, self.dyn_w, l_out=l).permute(0, 2, 1, 3)
        return x + self.ffn_out(h + hm)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.time_attention(x)
        x = self.variable_attention(x)
        x = self.gate_attn(x)
        x = self.dynamic_ffn(x)
        x = self.gate_ffn(x)
        return x


class Tower(nn.Module):
    """Reconstruction head: x_hat = unpatchify(MLP(z + DyLinear(z)))."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.embed_dim
        self.patch_size = config.patch_size
        self.mlp_in = nn.Linear(d, d)
        self.mlp_out = nn.Linear(d, d)
        self.dyn_w = nn.Parameter(torch.empty(config.dyn_size, config.dyn_size))
        self.proj = nn.Linear(d, config.patch_size)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        # z: (B, L, n, d) sample tokens only (prompt already stripped)
        if z.ndim != 4:
            raise ShapeMismatch("tower expects (B, L, n, d) tokens")
        b, l, n, d = z.shape
        zm = z.permute(0, 2, 1, 3)  # (B, n, L, d)
        zm = dylinear(zm, self.dyn_w, l_out=l).permute(0, 2, 1, 3)
        h = self.mlp_out(torch.nn.functional.gelu(self.mlp_in(z + zm)))
        patches = self.proj(h)  # (B, L, n, k)
        return patches.permute(0, 1, 3, 2).reshape(b, l * self.patch_size, n)


class ReconstructionTransformer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.embed_dim
        self.patch_proj = nn.Linear(config.patch_size, d)
        self.pos_emb = nn.Parameter(torch.empty(config.n_sample_tokens, d))
        self.prompt_tokens = nn.Parameter(
            torch.empty(config.n_prompt, config.n_vars, d))
        self.blocks = nn.ModuleList(
            EncoderBlock(config) for _ in range(config.n_blocks))
        self.final_ln = nn.LayerNorm(d)
        self.tower = Tower(config)
        self._init_parameters(config.seed)

    def _init_parameters(self, seed: int):
        gen = torch.Generator().manual_seed(seed)
        for name, p in self.named_parameters():
            if name.endswith("alpha"):
                continue  # gate init set in Gate
            if "ln" in name or p.ndim == 1:
                # LayerNorm affine and all biases
                if name.endswith("weight"):
                    nn.init.ones_(p)
                else:
                    nn.init.zeros_(p)
            else:
                with torch.no_grad():
                    p.copy_(torch.randn(p.shape, generator=gen) * 0.02)

    # -- component operations -------------------------------------------

    def patchify(self, window: torch.Tensor) -> torch.Tensor:
        """(B, K, n) window -> (B, K/k, n, d) sample tokens.

        One projection shared across variables; learnable positional
        embeddings are added to sample tokens only.
        """
        cfg = self.config
        squeeze = window.ndim == 2
        if squeeze:
            window = window.unsqueeze(0)
        b, k_len, n = window.shape
        if k_len != cfg.window_len or n != cfg.n_vars:
            raise ShapeMismatch(
                f"window shape ({k_len}, {n}) does not match config "
                f"({cfg.window_len}, {cfg.n_vars})")
        l = cfg.n_sample_tokens
        patches = window.view(b, l, cfg.patch_size, n).permute(0, 1, 3, 2)
        tokens = self.patch_proj(patches) + self.pos_emb[None, :, None, :]
        return tokens.squeeze(0) if squeeze else tokens

    def concat_prompt(self, tokens: torch.Tensor) -> torch.Tensor:
        """Prepend prompt tokens along the time-token axis."""
        squeeze = tokens.ndim == 3
        if squeeze:
            tokens = tokens.unsqueeze(0)
        b = tokens.shape[0]
        prompt = self.prompt_tokens.unsqueeze(0).expand(b, -1, -1, -1)
        prompt = prompt.to(tokens.dtype)
        out = torch.cat([prompt, tokens], dim=1)
        return out.squeeze(0) if squeeze else out

    def forward(self, window: torch.Tensor) -> torch.Tensor:
        squeeze = window.ndim == 2
        if squeeze:
            window = window.unsqueeze(0)
        x = self.concat_prompt(self.patchify(window))
        for block in self.blocks:
            x = block(x)
        x = self.final_ln(x)
        x = x[:, self.config.n_prompt:]  # strip prompt positions
        out = self.tower(x)
        return out.squeeze(0) if squeeze else out
