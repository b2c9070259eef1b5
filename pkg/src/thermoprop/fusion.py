"""Cross-modal attention, gated fusion, geometry gate, and the unified embedding."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import params as P
from .config import EMBED_DIM, EncoderConfig
from .encoders import _multihead_attention


def _cross_block(store: P.ParamStore, name: str, q_vec: ad.Tensor, kv_vec: ad.Tensor,
                 cfg: EncoderConfig) -> ad.Tensor:
    """One single-token cross-attention exchange, post-norm, identity at init.

    Attention output projection and the feed-forward final layer start at
    zero, so the block initially computes layer_norm(q_vec).
    """
    b = q_vec.shape[0]
    d = EMBED_DIM
    q3 = ad.reshape(q_vec, (b, 1, d))
    kv3 = ad.reshape(kv_vec, (b, 1, d))
    attn = _multihead_attention(store, f"{name}.attn", q3, kv3, cfg.n_heads, d,
                                key_mask=None, zero_out=True)
    h = P.layer_norm(store, f"{name}.ln1", ad.add(q3, attn), d)
    ff = P.linear(store, f"{name}.ff1", h, d, 4 * d)
    ff = P.linear(store, f"{name}.ff2", ad.gelu(ff), 4 * d, d, init="zeros")
    out = P.layer_norm(store, f"{name}.ln2", ad.add(h, ff), d)
    return ad.reshape(out, (b, d))


def cross_attention(store: P.ParamStore, cfg: EncoderConfig, z_graph: ad.Tensor,
                    z_smiles: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
    """Bidirectional exchange: graph queries SMILES and vice versa."""
    zg = _cross_block(store, "fusion.g2s", z_graph, z_smiles, cfg)
    zs = _cross_block(store, "fusion.s2g", z_smiles, z_graph, cfg)
    return zg, zs


def gated_fuse(store: P.ParamStore, z_graph: ad.Tensor, z_smiles: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
    """Element-wise sigmoid gate blending the two cross-attended branches."""
    cat = ad.concat([z_graph, z_smiles], axis=1)
    h = ad.relu(P.linear(store, "fusion.gate1", cat, 2 * EMBED_DIM, EMBED_DIM))
    g = ad.sigmoid(P.linear(store, "fusion.gate2", h, EMBED_DIM, EMBED_DIM))
    fused = ad.add(ad.mul(g, z_graph), ad.mul(ad.sub(1.0, g), z_smiles))
    return fused, g


def geometry_gate(store: P.ParamStore, z_fused: ad.Tensor, z_3d: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
    """Scalar gate on a bias-free projection of the 3D embedding.

    A zero 3D embedding (absent conformer) therefore appends an exactly-zero
    block regardless of the gate value.
    """
    cat = ad.concat([z_fused, z_3d], axis=1)
    h = ad.relu(P.linear(store, "fusion.geo1", cat, 2 * EMBED_DIM, 64))
    alpha = ad.sigmoid(P.linear(store, "fusion.geo2", h, 64, 1))
    w = store.param("fusion.geoproj.w", (EMBED_DIM, EMBED_DIM))
    projected = ad.mul(alpha, ad.matmul(z_3d, w))
    return ad.concat([z_fused, projected], axis=1), alpha


def unify(store: P.ParamStore, cfg: EncoderConfig, z_fused_ext: ad.Tensor, z_exp: ad.Tensor,
          z_desc: ad.Tensor, train: bool, rng: np.random.Generator) -> ad.Tensor:
    """Project the concatenated branches to the unified 512-dim embedding."""
    cat = ad.concat([z_fused_ext, z_exp, z_desc], axis=1)
    d_in = cat.shape[1]
    h = P.linear(store, "fusion.unify1", cat, d_in, EMBED_DIM)
    h = ad.dropout(ad.gelu(P.layer_norm(store, "fusion.unify_ln", h, EMBED_DIM)),
                   cfg.fusion_dropout, rng, train)
    return P.linear(store, "fusion.unify2", h, EMBED_DIM, EMBED_DIM)
