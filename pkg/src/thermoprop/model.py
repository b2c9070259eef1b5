"""Full-model assembly: featurization cache, batch collation, and forward pass.

A Model owns one ParamStore and the head registry for one architecture
variant.  Heads emit predictions in physical property units; the trainer
z-scores them against the targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import fusion
from . import encoders as enc
from .chem import parse_smiles, canonical_smiles, tokenize
from .chem.graph import MolGraph
from .config import EncoderConfig
from .featurize import molecule_atom_features, descriptors
from .geometry import Conformer, RbfExpansion, neighbor_arrays, planar_fallback, absent_conformer
from .heads import (
    DEFAULT_ASSIGNMENT,
    PROPERTIES,
    HeadSpec,
    head_forward,
    head_spec,
)
from .params import ParamStore

VARIANTS = ("full", "gcn-only", "no-schnet", "all-direct", "swapped", "all-groupcontrib")

# fixed input scalings keeping encoder inputs O(1); frozen with checkpoints
DESCRIPTOR_SCALE = np.array(
    [100.0, 10.0, 2.0, 2.0, 2.0, 2.0, 5.0, 2.0, 1.0, 1.0, 50.0, 5.0, 50.0],
    dtype=np.float64,
)
COND_CENTER = np.array([298.15, 0, 0, 0, 0, 0], dtype=np.float64)
COND_SCALE = np.array([100.0, 1.0, 1.0, 1.0, 1.0, 1.0], dtype=np.float64)


def head_assignment(variant: str, overrides: dict[str, str] | None = None) -> dict[str, str]:
    """Equation id per property for an architecture/head variant."""
    a = dict(DEFAULT_ASSIGNMENT)
    if variant == "all-direct":
        a = {p: "direct" for p in PROPERTIES}
    elif variant == "swapped":
        a["vapor"] = "andrade"
        a["viscosity"] = "antoine"
    elif variant == "all-groupcontrib":
        for p, eq in DEFAULT_ASSIGNMENT.items():
            if eq != "direct":
                a[p] = "groupcontrib32"
    if overrides:
        a.update(overrides)
    return a


def adjacency_norm(g: MolGraph) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with self-loops."""
    n = g.n_atoms
    a = np.eye(n, dtype=np.float32)
    for b in g.bonds:
        a[b.a, b.b] = 1.0
        a[b.b, b.a] = 1.0
    dinv = 1.0 / np.sqrt(a.sum(axis=1))
    return a * dinv[:, None] * dinv[None, :]


@dataclass
class MoleculeData:
    """Everything featurizable once per unique molecule."""

    canonical: str
    graph: MolGraph
    atom_feats: np.ndarray
    adj_norm: np.ndarray
    token_ids: np.ndarray        # canonical-SMILES tokens
    token_len: int
    desc_scaled: np.ndarray      # (13,)
    conformer: Conformer
    pair_centers: np.ndarray
    pair_others: np.ndarray
    pair_rbf: np.ndarray


def featurize_molecule(smiles: str, cfg: EncoderConfig,
                       conformer: Conformer | None = None,
                       use_planar_fallback: bool = False) -> MoleculeData:
    g = parse_smiles(smiles)
    canonical = canonical_smiles(g)
    if conformer is None:
        conformer = planar_fallback(g) if use_planar_fallback else absent_conformer(g)
    if conformer.source == "absent":
        centers = others = np.zeros(0, dtype=np.int64)
        rbf = np.zeros((0, cfg.rbf_k), dtype=np.float32)
    else:
        centers, others, dists = neighbor_arrays(conformer, cfg.cutoff)
        rbf = RbfExpansion(cfg.rbf_k, cfg.cutoff)(dists).astype(np.float32)
    ts = tokenize(smiles)
    return MoleculeData(
        canonical=canonical,
        graph=g,
        atom_feats=molecule_atom_features(g).astype(np.float32),
        adj_norm=adjacency_norm(g),
        token_ids=np.asarray(ts.ids, dtype=np.int64),
        token_len=ts.length,
        desc_scaled=(descriptors(g) / DESCRIPTOR_SCALE).astype(np.float32),
        conformer=conformer,
        pair_centers=centers,
        pair_others=others,
        pair_rbf=rbf,
    )


@dataclass
class Batch:
    graph: enc.GraphBatch
    tokens: enc.TokenBatch
    conf: enc.ConformerBatch
    cond: enc.AuxBatch
    desc: enc.AuxBatch
    temps: np.ndarray            # (B,) kelvin
    targets: np.ndarray          # (B, 9) float, NaN-free (masked instead)
    target_mask: np.ndarray      # (B, 9) 1.0 = label present
    eval_mask: np.ndarray        # (B, 9) metric rows
    size: int = field(default=0)

    def __post_init__(self):
        self.size = len(self.temps)


def collate(mols: list[MoleculeData], temps: np.ndarray,
            targets: np.ndarray, target_mask: np.ndarray, eval_mask: np.ndarray,
            token_rows: list[tuple[np.ndarray, int]] | None = None) -> Batch:
    """Assemble per-row arrays; token_rows overrides canonical tokens (augmentation)."""
    b = len(mols)
    sizes = [m.graph.n_atoms for m in mols]
    total = sum(sizes)
    node_feats = np.concatenate([m.atom_feats for m in mols])
    adj = np.zeros((total, total), dtype=np.float32)
    graph_ids = np.zeros(total, dtype=np.int64)
    offset = 0
    for i, m in enumerate(mols):
        n = sizes[i]
        adj[offset : offset + n, offset : offset + n] = m.adj_norm
        graph_ids[offset : offset + n] = i
        offset += n

    if token_rows is None:
        token_rows = [(m.token_ids, m.token_len) for m in mols]
    max_len = max(length for _, length in token_rows)
    ids = np.stack([row[:max_len] for row, _ in token_rows])
    mask = (np.arange(max_len)[None, :] < np.array([l for _, l in token_rows])[:, None]).astype(
        np.float32
    )

    atom_numbers = np.concatenate([m.conformer.atomic_numbers for m in mols])
    mol_ids = np.concatenate([np.full(sizes[i], i, dtype=np.int64) for i in range(b)])
    centers, others, rbfs = [], [], []
    offset = 0
    for i, m in enumerate(mols):
        if m.pair_centers.size:
            centers.append(m.pair_centers + offset)
            others.append(m.pair_others + offset)
            rbfs.append(m.pair_rbf)
        offset += sizes[i]
    conf = enc.ConformerBatch(
        atomic_numbers=atom_numbers,
        mol_ids=mol_ids,
        centers=np.concatenate(centers) if centers else np.zeros(0, dtype=np.int64),
        others=np.concatenate(others) if others else np.zeros(0, dtype=np.int64),
        rbf=np.concatenate(rbfs) if rbfs else np.zeros((0, mols[0].pair_rbf.shape[1]), dtype=np.float32),
        present=np.array([0.0 if m.conformer.source == "absent" else 1.0 for m in mols],
                         dtype=np.float32),
        n_mols=b,
    )

    temps = np.asarray(temps, dtype=np.float64)
    cond_vals = np.zeros((b, enc.COND_DIM), dtype=np.float64)
    cond_vals[:, 0] = temps
    cond_vals = (cond_vals - COND_CENTER) / COND_SCALE
    cond_mask = np.zeros((b, enc.COND_DIM), dtype=np.float32)
    cond_mask[:, 0] = 1.0

    desc_vals = np.stack([m.desc_scaled for m in mols])
    desc_mask = np.ones((b, enc.DESC_DIM), dtype=np.float32)

    return Batch(
        graph=enc.GraphBatch(node_feats, adj, graph_ids, b),
        tokens=enc.TokenBatch(ids, mask),
        conf=conf,
        cond=enc.AuxBatch(cond_vals.astype(np.float32), cond_mask),
        desc=enc.AuxBatch(desc_vals, desc_mask),
        temps=temps,
        targets=np.nan_to_num(np.asarray(targets, dtype=np.float64)),
        target_mask=np.asarray(target_mask, dtype=np.float64),
        eval_mask=np.asarray(eval_mask, dtype=np.float64),
    )


class Model:
    """One architecture variant plus its head registry and parameters."""

    def __init__(self, enc_cfg: EncoderConfig, variant: str = "full", seed: int = 0,
                 equation_overrides: dict[str, str] | None = None):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.cfg = enc_cfg
        self.variant = variant
        self.assignment = head_assignment(variant, equation_overrides)
        self.specs: dict[str, HeadSpec] = {
            p: head_spec(p, self.assignment[p]) for p in PROPERTIES
        }
        self.store = ParamStore(seed=seed)
        self.log_sigma2 = {
            p: self.store.param(f"uncertainty.{p}", (1,), init="zeros") for p in PROPERTIES
        }

    # -- embedding ----------------------------------------------------------
    def unified(self, batch: Batch, train: bool, rng: np.random.Generator) -> ad.Tensor:
        st, cfg = self.store, self.cfg
        z_graph = enc.gcn_forward(st, cfg, batch.graph, train, rng)
        z_exp = enc.experimental_forward(st, cfg, batch.cond)
        z_desc = enc.descriptor_forward(st, cfg, batch.desc)
        if self.variant == "gcn-only":
            return fusion.unify(st, cfg, z_graph, z_exp, z_desc, train, rng)
        z_smiles = enc.transformer_forward(st, cfg, batch.tokens, train, rng)
        zg, zs = fusion.cross_attention(st, cfg, z_graph, z_smiles)
        z_fused, self.last_gate = fusion.gated_fuse(st, zg, zs)
        if self.variant == "no-schnet":
            return fusion.unify(st, cfg, z_fused, z_exp, z_desc, train, rng)
        z_3d = enc.schnet_forward(st, cfg, batch.conf, train, rng)
        z_ext, self.last_alpha = fusion.geometry_gate(st, z_fused, z_3d)
        return fusion.unify(st, cfg, z_ext, z_exp, z_desc, train, rng)

    # -- heads ----------------------------------------------------------------
    def heads_forward(self, u: ad.Tensor, temps: np.ndarray, train: bool,
                      rng: np.random.Generator) -> dict[str, ad.Tensor]:
        preds = {}
        for p in PROPERTIES:
            pred, _theta = head_forward(self.store, self.specs[p], u, temps, train, rng)
            preds[p] = pred
        return preds

    def forward(self, batch: Batch, train: bool, rng: np.random.Generator) -> dict[str, ad.Tensor]:
        u = self.unified(batch, train, rng)
        return self.heads_forward(u, batch.temps, train, rng)

    # -- freezing --------------------------------------------------------------
    BACKBONE_PREFIXES = ("gcn.", "tf.", "schnet.", "exp.", "desc.", "fusion.")

    def freeze_backbone(self) -> None:
        self.store.freeze(self.BACKBONE_PREFIXES)

    def head_and_uncertainty_params(self) -> list[tuple[str, ad.Tensor]]:
        return [
            (n, p)
            for n, p in self.store.params.items()
            if n.startswith(("head.", "uncertainty."))
        ]

    def materialize(self, batch: Batch) -> None:
        """Run one forward pass so every parameter exists (no tape)."""
        rng = np.random.default_rng(0)
        self.forward(batch, train=False, rng=rng)
