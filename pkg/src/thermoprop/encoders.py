"""The five encoder branches, each projecting to a 512-dim embedding.

Batched inputs arrive as plain numpy arrays (see model.collate); parameters
live in a ParamStore so a forward pass lazily defines them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import params as P
from .config import EMBED_DIM, EncoderConfig

COND_DIM = 6
DESC_DIM = 13
MAX_ATOMIC_NUMBER = 100  # embedding table has 101 entries


class AtomicNumberOutOfRange(ValueError):
    pass


@dataclass
class GraphBatch:
    node_feats: np.ndarray   # (N, 39)
    adj_norm: np.ndarray     # (N, N) block-diagonal D^-1/2 (A+I) D^-1/2
    graph_ids: np.ndarray    # (N,)
    n_graphs: int


@dataclass
class TokenBatch:
    ids: np.ndarray          # (B, L) already cropped to the batch max length
    mask: np.ndarray         # (B, L) 1.0 at real positions, 0.0 at padding


@dataclass
class ConformerBatch:
    atomic_numbers: np.ndarray  # (M,)
    mol_ids: np.ndarray         # (M,)
    centers: np.ndarray         # (Pairs,) receiving atom index
    others: np.ndarray          # (Pairs,) contributing neighbor index
    rbf: np.ndarray             # (Pairs, K)
    present: np.ndarray         # (B,) 1.0 when a conformer exists
    n_mols: int


@dataclass
class AuxBatch:
    values: np.ndarray       # (B, D) already scaled
    mask: np.ndarray         # (B, D) 1.0 = available


# ---------------------------------------------------------------------------


def gcn_forward(store: P.ParamStore, cfg: EncoderConfig, batch: GraphBatch,
                train: bool, rng: np.random.Generator) -> ad.Tensor:
    """Symmetric-normalized graph convolutions with norm/dropout/ReLU stacks.

    Every layer ends with a residual; the first residual projects 39 -> hidden.
    """
    d = cfg.gcn_hidden
    adj = ad.Tensor(batch.adj_norm)
    h = ad.Tensor(batch.node_feats)
    in_dim = h.shape[1]
    for layer in range(cfg.gcn_layers):
        name = f"gcn.layer{layer}"
        conv = ad.matmul(adj, P.linear(store, f"{name}.conv", h, in_dim, d))
        x = P.graph_norm(store, f"{name}.gn", conv, d, batch.graph_ids, batch.n_graphs)
        x = P.batch_norm(store, f"{name}.bn", x, d, train)
        x = ad.dropout(x, cfg.gcn_dropout, rng, train)
        x = ad.relu(x)
        if layer == 0:
            res = P.linear(store, f"{name}.res", h, in_dim, d)
        else:
            res = h
        h = ad.add(x, res)
        in_dim = d
    pooled = ad.segment_sum(h, batch.graph_ids, batch.n_graphs)
    z = P.linear(store, "gcn.proj1", pooled, d, EMBED_DIM)
    z = ad.relu(ad.dropout(z, cfg.gcn_dropout, rng, train))
    return P.linear(store, "gcn.proj2", z, EMBED_DIM, EMBED_DIM)


# ---------------------------------------------------------------------------

_PE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def sinusoidal_pe(length: int, d_model: int) -> np.ndarray:
    assert d_model % 2 == 0
    key = (length, d_model)
    pe = _PE_CACHE.get(key)
    if pe is None:
        pos = np.arange(length)[:, None].astype(np.float64)
        i = np.arange(0, d_model, 2).astype(np.float64)
        angle = pos / np.power(10000.0, i / d_model)
        pe = np.zeros((length, d_model), dtype=np.float32)
        pe[:, 0::2] = np.sin(angle)
        pe[:, 1::2] = np.cos(angle)
        _PE_CACHE[key] = pe
    return pe


def _multihead_attention(store: P.ParamStore, name: str, q_in: ad.Tensor, kv_in: ad.Tensor,
                         n_heads: int, d_model: int, key_mask: np.ndarray | None,
                         zero_out: bool = False) -> ad.Tensor:
    """Multi-head attention: q_in (B, Lq, D) attends over kv_in (B, Lk, D).

    key_mask (B, Lk) holds 1.0 at attendable positions.  zero_out initializes
    the output projection at zero so residual blocks start as the identity
    (values stay randomly initialized to keep gradients flowing into them).
    """
    b, lq, _ = q_in.shape
    lk = kv_in.shape[1]
    dk = d_model // n_heads
    q = P.linear(store, f"{name}.q", q_in, d_model, d_model)
    k = P.linear(store, f"{name}.k", kv_in, d_model, d_model)
    v = P.linear(store, f"{name}.v", kv_in, d_model, d_model)

    def split(x, length):
        return ad.transpose(ad.reshape(x, (b, length, n_heads, dk)), (0, 2, 1, 3))

    qh, kh, vh = split(q, lq), split(k, lk), split(v, lk)
    scores = ad.matmul(qh, ad.transpose(kh, (0, 1, 3, 2)))
    scores = ad.mul(scores, 1.0 / np.sqrt(dk))
    if key_mask is not None:
        bias = ((1.0 - key_mask) * -1e9).astype(np.float32)[:, None, None, :]
        scores = ad.add(scores, ad.Tensor(bias))
    attn = ad.softmax(scores)
    ctx = ad.matmul(attn, vh)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, lq, d_model))
    return P.linear(store, f"{name}.o", ctx, d_model, d_model,
                    init="zeros" if zero_out else "fan_in")


def transformer_forward(store: P.ParamStore, cfg: EncoderConfig, batch: TokenBatch,
                        train: bool, rng: np.random.Generator,
                        vocab_size: int = 50) -> ad.Tensor:
    """Pre-norm transformer over token ids; position-0 state feeds the projection."""
    d = cfg.d_model
    b, length = batch.ids.shape
    table = store.param("tf.embed", (vocab_size, d), init="embedding")
    x = ad.mul(ad.embedding(table, batch.ids), float(np.sqrt(d)))
    x = ad.add(x, ad.Tensor(sinusoidal_pe(length, d)))
    for layer in range(cfg.tf_layers):
        name = f"tf.layer{layer}"
        h = P.layer_norm(store, f"{name}.ln1", x, d)
        attn = _multihead_attention(store, f"{name}.attn", h, h, cfg.n_heads, d, batch.mask)
        x = ad.add(x, ad.dropout(attn, cfg.tf_dropout, rng, train))
        h = P.layer_norm(store, f"{name}.ln2", x, d)
        ff = P.linear(store, f"{name}.ff1", h, d, cfg.d_ff)
        ff = P.linear(store, f"{name}.ff2", ad.gelu(ff), cfg.d_ff, d)
        x = ad.add(x, ad.dropout(ff, cfg.tf_dropout, rng, train))
    cls = ad.reshape(ad.narrow(x, 1, 0, 1), (b, d))
    z = ad.gelu(P.linear(store, "tf.proj1", cls, d, EMBED_DIM))
    return P.linear(store, "tf.proj2", z, EMBED_DIM, EMBED_DIM)


# ---------------------------------------------------------------------------


def schnet_forward(store: P.ParamStore, cfg: EncoderConfig, batch: ConformerBatch,
                   train: bool, rng: np.random.Generator) -> ad.Tensor:
    """Continuous-filter convolution blocks over RBF-expanded distances.

    The update MLP carries no biases, so atoms without neighbors pass through
    every block unchanged (pure residual path).
    """
    if batch.atomic_numbers.size and batch.atomic_numbers.max() > MAX_ATOMIC_NUMBER:
        raise AtomicNumberOutOfRange(f"atomic number {batch.atomic_numbers.max()} > 100")
    d = cfg.schnet_hidden
    table = store.param("schnet.embed", (MAX_ATOMIC_NUMBER + 1, d), init="embedding")
    x = ad.embedding(table, batch.atomic_numbers)
    have_pairs = batch.centers.size > 0
    rbf = ad.Tensor(batch.rbf) if have_pairs else None
    for block in range(cfg.schnet_blocks):
        name = f"schnet.block{block}"
        if have_pairs:
            f = P.linear(store, f"{name}.filter1", rbf, cfg.rbf_k, d)
            f = P.linear(store, f"{name}.filter2", ad.silu(f), d, d)
            msg = ad.mul(f, ad.gather_rows(x, batch.others))
            agg = ad.segment_sum(msg, batch.centers, len(batch.atomic_numbers))
        else:
            agg = ad.mul(x, 0.0)
        w1 = store.param(f"{name}.update1.w", (d, d))
        w2 = store.param(f"{name}.update2.w", (d, d))
        upd = ad.matmul(ad.silu(ad.matmul(agg, w1)), w2)
        x = ad.add(x, upd)
    pooled = ad.segment_sum(x, batch.mol_ids, batch.n_mols)
    z = ad.dropout(ad.silu(P.linear(store, "schnet.proj1", pooled, d, EMBED_DIM)), 0.1, rng, train)
    z = P.linear(store, "schnet.proj2", z, EMBED_DIM, EMBED_DIM)
    # absent conformers contribute an exactly-zero embedding
    return ad.mul(z, ad.Tensor(batch.present[:, None].astype(np.float32)))


# ---------------------------------------------------------------------------


def _aux_forward(store: P.ParamStore, name: str, batch: AuxBatch, d_in: int,
                 d_hidden: int) -> ad.Tensor:
    missing = store.param(f"{name}.missing", (d_in,), init="embedding")
    mask = ad.Tensor(batch.mask.astype(np.float32))
    values = ad.Tensor(batch.values.astype(np.float32))
    x = ad.add(ad.mul(mask, values), ad.mul(ad.sub(1.0, mask), missing))
    h = ad.relu(P.linear(store, f"{name}.fc1", x, d_in, d_hidden))
    return P.linear(store, f"{name}.fc2", h, d_hidden, EMBED_DIM)


def experimental_forward(store: P.ParamStore, cfg: EncoderConfig, batch: AuxBatch) -> ad.Tensor:
    """Condition encoder; masked slots are replaced by learned missing embeddings."""
    return _aux_forward(store, "exp", batch, COND_DIM, cfg.exp_hidden)


def descriptor_forward(store: P.ParamStore, cfg: EncoderConfig, batch: AuxBatch) -> ad.Tensor:
    return _aux_forward(store, "desc", batch, DESC_DIM, cfg.desc_hidden)
