"""Uncertainty-weighted multi-task training in two stages.

Stage 1 trains everything under cosine warm restarts; stage 2 freezes the
backbone (run in eval mode, unified embeddings cached) and fine-tunes the
prediction heads plus the task log-variances under a single cosine decay.
Early stopping tracks an s-frozen validation loss (plain mean MSE/2) so the
metric stays comparable across epochs; the best state is always retained.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import EncoderConfig, StageConfig
from .dataset import NormStats, Record, records_to_arrays
from .heads import PROPERTIES, head_forward
from .model import Batch, Model, MoleculeData, collate, featurize_molecule


class EmptyBatch(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# loss


def multitask_loss(preds: dict[str, ad.Tensor], targets: np.ndarray, mask: np.ndarray,
                   log_sigma2: dict[str, ad.Tensor] | None) -> ad.Tensor:
    """L = mean over active tasks of [0.5 exp(-s) MSE + 0.5 s].

    preds are normalized (B,) tensors per property; targets/mask are (B, 9)
    numpy arrays in PROPERTIES order.  log_sigma2 None means s frozen at 0.
    """
    terms = []
    for j, prop in enumerate(PROPERTIES):
        col_mask = mask[:, j]
        count = float(col_mask.sum())
        if count == 0:
            continue
        diff = ad.sub(preds[prop], ad.Tensor(targets[:, j].astype(preds[prop].dtype)))
        sq = ad.mul(ad.mul(diff, diff), ad.Tensor(col_mask.astype(preds[prop].dtype)))
        mse = ad.mul(ad.sum_all(sq), 1.0 / count)
        if log_sigma2 is None:
            terms.append(ad.mul(mse, 0.5))
        else:
            s = ad.reshape(log_sigma2[prop], ())
            terms.append(ad.add(ad.mul(ad.mul(ad.exp(ad.neg(s)), mse), 0.5), ad.mul(s, 0.5)))
    if not terms:
        raise EmptyBatch("no valid target in batch")
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.mul(total, 1.0 / len(terms))


# ---------------------------------------------------------------------------
# schedule


def lr_at(epoch: int, cfg: StageConfig) -> float:
    """Linear warmup from lr/10, then cosine annealing (warm restarts if t0>0)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    lr0, lr_min = cfg.lr, cfg.lr_min
    if epoch < cfg.warmup_epochs:
        frac = epoch / cfg.warmup_epochs
        return lr0 / 10.0 + (lr0 - lr0 / 10.0) * frac
    t = epoch - cfg.warmup_epochs
    if cfg.t0 > 0:
        period = cfg.t0
        while t >= period:
            t -= period
            period *= cfg.t_mult
    else:
        period = max(cfg.max_epochs - cfg.warmup_epochs, 1)
        t = min(t, period)
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + float(np.cos(np.pi * t / period)))


# ---------------------------------------------------------------------------
# optimizer


class AdamW:
    """Adaptive moments with decoupled weight decay.

    Task-uncertainty scalars are exempt from decay.
    """

    def __init__(self, cfg: StageConfig, eps: float = 1e-8):
        self.cfg = cfg
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, named_params: list[tuple[str, ad.Tensor]], grads: list[np.ndarray],
             lr: float) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for (name, p), g in zip(named_params, grads):
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(name)
            g = g.astype(np.float32)
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self.m[name] = m
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            if cfg.weight_decay and not name.startswith("uncertainty."):
                p.data -= lr * cfg.weight_decay * p.data
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if not np.all(np.isfinite(p.data)):
                raise NonFiniteGradient(f"{name}: non-finite parameter after step")


def clip_grads(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Scale the whole gradient set so its global L2 norm is <= max_norm."""
    total = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads)))
    if total <= max_norm or total == 0.0:
        return grads, total
    scale = max_norm / total
    return [g * scale for g in grads], total


# ---------------------------------------------------------------------------
# data plumbing


@dataclass
class RowData:
    mol: MoleculeData
    token_ids: np.ndarray
    token_len: int
    temperature: float
    targets: np.ndarray     # (9,) normalized, zeros where missing
    mask: np.ndarray        # (9,)
    eval_mask: np.ndarray   # (9,)


@dataclass
class DataBundle:
    train: list[RowData]
    val: list[RowData]
    test: list[RowData]
    stats: NormStats
    mol_cache: dict[str, MoleculeData] = field(default_factory=dict)


def prepare_rows(records: list[Record], stats: NormStats, enc_cfg: EncoderConfig,
                 mol_cache: dict[str, MoleculeData],
                 conformers: dict[str, object] | None = None,
                 use_planar_fallback: bool = True) -> list[RowData]:
    from .chem import tokenize

    targets, mask, eval_mask = records_to_arrays(records, stats)
    rows = []
    for i, rec in enumerate(records):
        mol = mol_cache.get(rec.smiles)
        if mol is None:
            conf = conformers.get(rec.smiles) if conformers else None
            mol = featurize_molecule(rec.smiles, enc_cfg, conformer=conf,
                                     use_planar_fallback=use_planar_fallback)
            mol_cache[rec.smiles] = mol
        if rec.augmented:
            ts = tokenize(rec.aug_smiles)
            token_ids = np.asarray(ts.ids, dtype=np.int64)
            token_len = ts.length
        else:
            token_ids, token_len = mol.token_ids, mol.token_len
        rows.append(
            RowData(
                mol=mol,
                token_ids=token_ids,
                token_len=token_len,
                temperature=rec.temperature,
                targets=np.nan_to_num(targets[i]),
                mask=mask[i],
                eval_mask=eval_mask[i],
            )
        )
    return rows


def rows_to_batch(rows: list[RowData]) -> Batch:
    return collate(
        [r.mol for r in rows],
        np.array([r.temperature for r in rows]),
        np.stack([r.targets for r in rows]),
        np.stack([r.mask for r in rows]),
        np.stack([r.eval_mask for r in rows]),
        token_rows=[(r.token_ids, r.token_len) for r in rows],
    )


def normalize_preds(preds: dict[str, ad.Tensor], stats: NormStats) -> dict[str, ad.Tensor]:
    out = {}
    for prop in PROPERTIES:
        if prop in stats.mean:
            out[prop] = ad.mul(ad.sub(preds[prop], stats.mean[prop]), 1.0 / stats.std[prop])
        else:
            out[prop] = ad.mul(preds[prop], 0.0)
    return out


# ---------------------------------------------------------------------------
# evaluation helpers


def predict_rows(model: Model, rows: list[RowData], stats: NormStats,
                 batch_size: int = 256) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eval-mode normalized predictions (N, 9) plus target and eval masks."""
    rng = np.random.default_rng(0)
    preds = np.zeros((len(rows), len(PROPERTIES)))
    for lo in range(0, len(rows), batch_size):
        chunk = rows[lo : lo + batch_size]
        batch = rows_to_batch(chunk)
        out = model.forward(batch, train=False, rng=rng)
        out = normalize_preds(out, stats)
        for j, prop in enumerate(PROPERTIES):
            preds[lo : lo + len(chunk), j] = out[prop].data
    targets = np.stack([r.targets for r in rows])
    mask = np.stack([r.mask for r in rows])
    return preds, targets, mask


def validation_loss(preds: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> float:
    """s-frozen (s=0) multi-task loss: mean over active properties of MSE/2."""
    terms = []
    for j in range(len(PROPERTIES)):
        count = mask[:, j].sum()
        if count == 0:
            continue
        mse = float((((preds[:, j] - targets[:, j]) ** 2) * mask[:, j]).sum() / count)
        terms.append(0.5 * mse)
    if not terms:
        raise EmptyBatch("no validation targets")
    return float(np.mean(terms))


def per_property_rmse(preds: np.ndarray, targets: np.ndarray, mask: np.ndarray,
                      stats: NormStats) -> dict[str, float]:
    out = {}
    for j, prop in enumerate(PROPERTIES):
        count = mask[:, j].sum()
        if count == 0 or prop not in stats.std:
            continue
        mse = float((((preds[:, j] - targets[:, j]) ** 2) * mask[:, j]).sum() / count)
        out[prop] = float(np.sqrt(mse) * stats.std[prop])
    return out


# ---------------------------------------------------------------------------
# stage loops


@dataclass
class StageResult:
    best_val_loss: float
    best_epoch: int
    epochs_run: int
    history: list[dict] = field(default_factory=list)


def _write_log(path: Path | None, history: list[dict]) -> None:
    if path is None or not history:
        return
    props = [p for p in PROPERTIES if f"rmse_{p}" in history[0]]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "train_loss", "val_loss"] + [f"val_rmse_{p}" for p in props])
        for h in history:
            w.writerow([h["epoch"], h["lr"], h["train_loss"], h["val_loss"]]
                       + [h.get(f"rmse_{p}", "") for p in props])


def _micro_batches(order: np.ndarray, batch_size: int, accumulation: int):
    """Yield accumulation windows; the trailing incomplete window is dropped."""
    window = batch_size * accumulation
    n_windows = len(order) // window
    for w in range(n_windows):
        start = w * window
        yield [order[start + k * batch_size : start + (k + 1) * batch_size]
               for k in range(accumulation)]


def run_stage1(model: Model, bundle: DataBundle, cfg: StageConfig, seed: int = 0,
               log_path: Path | None = None,
               stop_callback=None) -> StageResult:
    """Joint training of all parameters with cosine warm restarts."""
    rows = bundle.train
    shuffle_rng = np.random.default_rng(seed)
    dropout_rng = np.random.default_rng(seed + 7919)
    opt = AdamW(cfg)
    model.materialize(rows_to_batch(rows[: min(len(rows), 2)]))
    named = model.store.trainable()
    best = (np.inf, -1, None)
    history = []
    stale = 0
    for epoch in range(cfg.max_epochs):
        lr = lr_at(epoch, cfg)
        order = shuffle_rng.permutation(len(rows))
        losses = []
        for window in _micro_batches(order, cfg.batch_size, cfg.accumulation):
            model.store.zero_grads()
            for idx in window:
                batch = rows_to_batch([rows[i] for i in idx])
                with ad.Tape() as tape:
                    preds = model.forward(batch, train=True, rng=dropout_rng)
                    preds = normalize_preds(preds, bundle.stats)
                    loss = multitask_loss(preds, batch.targets, batch.target_mask,
                                          model.log_sigma2)
                ad.backward(tape, loss)
                losses.append(loss.item())
            grads = [p.grad_or_zero() / cfg.accumulation for _, p in named]
            grads, _ = clip_grads(grads, cfg.clip_norm)
            opt.step(named, grads, lr)
        vp, vt, vm = predict_rows(model, bundle.val, bundle.stats)
        val = validation_loss(vp, vt, vm)
        entry = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses)) if losses else np.nan,
                 "val_loss": val}
        entry.update({f"rmse_{p}": v for p, v in
                      per_property_rmse(vp, vt, vm, bundle.stats).items()})
        history.append(entry)
        if val < best[0]:
            best = (val, epoch, model.store.state_dict())
            stale = 0
        else:
            stale += 1
        if stop_callback is not None and stop_callback(model, epoch, history):
            break
        if stale >= cfg.patience:
            break
    if best[2] is not None:
        model.store.load_state_dict(best[2])
    _write_log(log_path, history)
    return StageResult(best_val_loss=best[0], best_epoch=best[1],
                       epochs_run=len(history), history=history)


def cache_unified(model: Model, rows: list[RowData], batch_size: int = 256) -> np.ndarray:
    """Frozen-backbone unified embeddings for every row (eval mode)."""
    rng = np.random.default_rng(0)
    out = np.zeros((len(rows), 512), dtype=np.float32)
    for lo in range(0, len(rows), batch_size):
        chunk = rows[lo : lo + batch_size]
        batch = rows_to_batch(chunk)
        u = model.unified(batch, train=False, rng=rng)
        out[lo : lo + len(chunk)] = u.data
    return out


def _heads_from_cached(model: Model, u_np: np.ndarray, temps: np.ndarray, train: bool,
                       rng: np.random.Generator) -> dict[str, ad.Tensor]:
    u = ad.Tensor(u_np)
    preds = {}
    for prop in PROPERTIES:
        pred, _ = head_forward(model.store, model.specs[prop], u, temps, train, rng)
        preds[prop] = pred
    return preds


def run_stage2(model: Model, bundle: DataBundle, cfg: StageConfig, seed: int = 0,
               log_path: Path | None = None) -> StageResult:
    """Backbone-frozen fine-tuning of heads and task log-variances.

    The frozen backbone runs once in eval mode; head training then works on
    cached unified embeddings, so backbone gradients are identically zero by
    construction.
    """
    model.freeze_backbone()
    train_u = cache_unified(model, bundle.train)
    val_u = cache_unified(model, bundle.val)
    rows = bundle.train
    temps_all = np.array([r.temperature for r in rows])
    targets_all = np.stack([r.targets for r in rows])
    mask_all = np.stack([r.mask for r in rows])
    val_temps = np.array([r.temperature for r in bundle.val])
    val_targets = np.stack([r.targets for r in bundle.val])
    val_mask = np.stack([r.mask for r in bundle.val])

    shuffle_rng = np.random.default_rng(seed + 13)
    dropout_rng = np.random.default_rng(seed + 104729)
    opt = AdamW(cfg)
    named = model.head_and_uncertainty_params()

    def evaluate() -> float:
        preds = _heads_from_cached(model, val_u, val_temps, False, np.random.default_rng(0))
        preds = normalize_preds(preds, bundle.stats)
        arr = np.stack([preds[p].data for p in PROPERTIES], axis=1)
        return validation_loss(arr, val_targets, val_mask)

    # the pre-training state is a candidate best: stage 2 never ends worse
    best = (evaluate(), -1, model.store.state_dict())
    history = []
    stale = 0
    for epoch in range(cfg.max_epochs):
        lr = lr_at(epoch, cfg)
        order = shuffle_rng.permutation(len(rows))
        losses = []
        for window in _micro_batches(order, cfg.batch_size, cfg.accumulation):
            model.store.zero_grads()
            for idx in window:
                with ad.Tape() as tape:
                    preds = _heads_from_cached(model, train_u[idx], temps_all[idx], True,
                                               dropout_rng)
                    preds = normalize_preds(preds, bundle.stats)
                    loss = multitask_loss(preds, targets_all[idx], mask_all[idx],
                                          model.log_sigma2)
                ad.backward(tape, loss)
                losses.append(loss.item())
            grads = [p.grad_or_zero() / cfg.accumulation for _, p in named]
            grads, _ = clip_grads(grads, cfg.clip_norm)
            opt.step(named, grads, lr)
        val = evaluate()
        history.append({"epoch": epoch, "lr": lr,
                        "train_loss": float(np.mean(losses)) if losses else np.nan,
                        "val_loss": val})
        if val < best[0]:
            best = (val, epoch, model.store.state_dict())
            stale = 0
        else:
            stale += 1
        if stale >= cfg.patience:
            break
    model.store.load_state_dict(best[2])
    _write_log(log_path, history)
    return StageResult(best_val_loss=best[0], best_epoch=best[1],
                       epochs_run=len(history), history=history)
