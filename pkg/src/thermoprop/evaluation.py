"""Metrics, temperature sweeps, ablation harness, and embedding export."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import EncoderConfig, StageConfig
from .dataset import NormStats, denormalize_value
from .heads import PROPERTIES, TEMP_INDEPENDENT, DomainError, head_forward
from .model import Model, VARIANTS
from .train import (
    DataBundle,
    NonFiniteGradient,
    RowData,
    cache_unified,
    predict_rows,
    run_stage1,
    run_stage2,
    rows_to_batch,
)


class UnknownVariant(ValueError):
    pass


class EmptyProperty(Warning):
    pass


@dataclass
class MetricsRow:
    prop: str
    split: str
    n: int
    rmse: float
    mae: float
    r2: float | None
    nrmse: float | None
    nmse: float | None


def metrics(preds_norm: np.ndarray, targets_norm: np.ndarray, mask: np.ndarray,
            eval_mask: np.ndarray, stats: NormStats, split: str) -> list[MetricsRow]:
    """Denormalize and compute RMSE/MAE/R2/NRMSE/NMSE per property.

    Temperature-independent properties are metered on eval-masked rows only;
    R2 uses population variance, so a mean predictor scores NRMSE exactly 1.
    """
    rows = []
    for j, prop in enumerate(PROPERTIES):
        if prop not in stats.mean:
            continue
        use = (eval_mask[:, j] if prop in TEMP_INDEPENDENT else mask[:, j]) > 0
        n = int(use.sum())
        if n == 0:
            warnings.warn(f"{split}/{prop}: no evaluable rows", EmptyProperty)
            continue
        y_true = targets_norm[use, j] * stats.std[prop] + stats.mean[prop]
        y_pred = preds_norm[use, j] * stats.std[prop] + stats.mean[prop]
        err = y_pred - y_true
        rmse = float(np.sqrt(np.mean(err**2)))
        mae = float(np.mean(np.abs(err)))
        ss_tot = float(np.mean((y_true - y_true.mean()) ** 2))
        if ss_tot <= 0:
            warnings.warn(f"{split}/{prop}: constant targets, R2 undefined", EmptyProperty)
            r2 = nrmse = nmse = None
        else:
            r2 = 1.0 - float(np.mean(err**2)) / ss_tot
            nrmse = rmse / float(np.sqrt(ss_tot))
            nmse = float(np.mean(err**2)) / ss_tot
        rows.append(MetricsRow(prop=prop, split=split, n=n, rmse=rmse, mae=mae,
                               r2=r2, nrmse=nrmse, nmse=nmse))
    return rows


def metrics_for_rows(model: Model, rows: list[RowData], stats: NormStats,
                     split: str) -> list[MetricsRow]:
    preds, targets, mask = predict_rows(model, rows, stats)
    eval_mask = np.stack([r.eval_mask for r in rows])
    return metrics(preds, targets, mask, eval_mask, stats, split)


def write_metrics_csv(path: str | Path, rows: list[MetricsRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["property", "split", "n", "rmse", "mae", "r2", "nrmse", "nmse"])
        for r in rows:
            w.writerow([r.prop, r.split, r.n, r.rmse, r.mae,
                        "" if r.r2 is None else r.r2,
                        "" if r.nrmse is None else r.nrmse,
                        "" if r.nmse is None else r.nmse])


def write_prediction_dump(path: str | Path, model: Model, rows: list[RowData],
                          stats: NormStats) -> None:
    """Per-row (smiles, T, property, y_true, y_pred) in original units."""
    preds, targets, mask = predict_rows(model, rows, stats)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["smiles", "temperature_K", "property", "y_true", "y_pred", "eval_row"])
        for i, row in enumerate(rows):
            for j, prop in enumerate(PROPERTIES):
                if mask[i, j] == 0 or prop not in stats.mean:
                    continue
                w.writerow([
                    row.mol.canonical,
                    row.temperature,
                    prop,
                    denormalize_value(stats, prop, targets[i, j]),
                    denormalize_value(stats, prop, preds[i, j]),
                    int(row.eval_mask[j]),
                ])


# ---------------------------------------------------------------------------
# temperature sweeps


@dataclass
class SweepResult:
    temps: np.ndarray
    values: np.ndarray
    verdict: str                  # "monotone-increasing" | "monotone-decreasing" | "non-monotone"
    violation: tuple[float, float] | None


def temperature_sweep(model: Model, row: RowData, prop: str,
                      t_grid: np.ndarray | None = None) -> SweepResult:
    """Sweep the equation temperature at fixed molecular inputs.

    The unified embedding is computed once at the row's own conditions, so the
    curve reflects the head equation alone and inherits its monotonicity
    guarantees.
    """
    if prop in TEMP_INDEPENDENT:
        raise ValueError(f"{prop} is temperature-independent; sweeps are undefined")
    if t_grid is None:
        t_grid = np.arange(250.0, 551.0, 5.0)
    rng = np.random.default_rng(0)
    batch = rows_to_batch([row])
    u = model.unified(batch, train=False, rng=rng)
    u_rep = ad.Tensor(np.repeat(u.data, len(t_grid), axis=0))
    pred, _ = head_forward(model.store, model.specs[prop], u_rep, t_grid, False, rng)
    values = pred.data.copy()
    diffs = np.diff(values)
    if np.all(diffs >= -1e-12):
        verdict, violation = "monotone-increasing", None
    elif np.all(diffs <= 1e-12):
        verdict, violation = "monotone-decreasing", None
    else:
        increasing = diffs.sum() >= 0  # dominant trend decides the violation sign
        bad = np.nonzero(diffs < -1e-12 if increasing else diffs > 1e-12)[0]
        k = int(bad[0])
        verdict, violation = "non-monotone", (float(t_grid[k]), float(t_grid[k + 1]))
    return SweepResult(temps=t_grid, values=values, verdict=verdict, violation=violation)


def write_sweep_csv(path: str | Path, sweep: SweepResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["temperature_K", "prediction"])
        for t, v in zip(sweep.temps, sweep.values):
            w.writerow([t, v])


# ---------------------------------------------------------------------------
# ablation harness


@dataclass
class AblationOutcome:
    variant: str
    metrics: list[MetricsRow]
    delta_rmse: dict[str, float]    # vs the full run, per property
    diverged: bool = False
    divergence_reason: str = ""


def config_diff(a: dict[str, str], b: dict[str, str]) -> dict[str, tuple[str, str]]:
    return {k: (a[k], b[k]) for k in a if a.get(k) != b.get(k)}


def run_ablation(variant: str, bundle: DataBundle, enc_cfg: EncoderConfig,
                 stage1_cfg: StageConfig, stage2_cfg: StageConfig, seed: int = 0,
                 full_metrics: list[MetricsRow] | None = None,
                 full_model: Model | None = None,
                 equation: tuple[str, str] | None = None) -> AblationOutcome:
    """Train an architecture/head variant from scratch, or retrain one head.

    equation=(property, eq) performs the head-only swap on the frozen full
    model; known-divergent equations are run and flagged rather than skipped.
    """
    if equation is not None:
        if full_model is None:
            raise ValueError("equation-level ablation requires the trained full model")
        return _equation_ablation(equation, bundle, full_model, stage2_cfg, seed,
                                  full_metrics)
    if variant not in VARIANTS:
        raise UnknownVariant(variant)
    model = Model(enc_cfg, variant=variant, seed=seed)
    run_stage1(model, bundle, stage1_cfg, seed=seed)
    run_stage2(model, bundle, stage2_cfg, seed=seed)
    rows = metrics_for_rows(model, bundle.test, bundle.stats, "test")
    return AblationOutcome(variant=variant, metrics=rows,
                           delta_rmse=_delta(rows, full_metrics))


def _delta(rows: list[MetricsRow], full_rows: list[MetricsRow] | None) -> dict[str, float]:
    if not full_rows:
        return {}
    base = {r.prop: r.rmse for r in full_rows}
    return {r.prop: r.rmse - base[r.prop] for r in rows if r.prop in base}


def _equation_ablation(equation: tuple[str, str], bundle: DataBundle, full_model: Model,
                       stage2_cfg: StageConfig, seed: int,
                       full_metrics: list[MetricsRow] | None) -> AblationOutcome:
    prop, eq = equation
    variant_name = f"equation({prop},{eq})"
    swapped = Model(full_model.cfg, variant=full_model.variant, seed=seed,
                    equation_overrides={prop: eq})
    # adopt the trained backbone and untouched heads; the swapped head retrains
    state = full_model.store.state_dict()
    state = {k: v for k, v in state.items() if not k.startswith(f"head.{prop}.")}
    swapped.materialize(rows_to_batch(bundle.train[:2]))
    swapped.store.load_state_dict(state)
    try:
        run_stage2(swapped, bundle, stage2_cfg, seed=seed)
        rows = metrics_for_rows(swapped, bundle.test, bundle.stats, "test")
    except (DomainError, NonFiniteGradient, FloatingPointError) as exc:
        return AblationOutcome(variant=variant_name, metrics=[], delta_rmse={},
                               diverged=True, divergence_reason=str(exc))
    outcome = AblationOutcome(variant=variant_name, metrics=rows,
                              delta_rmse=_delta(rows, full_metrics))
    if not swapped.specs[prop].stable:
        outcome.diverged = True
        outcome.divergence_reason = "known-divergent equation (flagged)"
    return outcome


def write_delta_csv(path: str | Path, outcomes: list[AblationOutcome]) -> None:
    props = [p for p in PROPERTIES]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "diverged"] + props)
        for o in outcomes:
            w.writerow([o.variant, int(o.diverged)]
                       + [o.delta_rmse.get(p, "") for p in props])


# ---------------------------------------------------------------------------
# embedding export


def export_embeddings(model: Model, bundle: DataBundle, path: str | Path,
                      assignment: dict[str, str] | None = None) -> int:
    """CSV of (canonical smiles, split, 512 embedding values), one row per
    unique molecule, canonical tokens only, eval mode."""
    seen: dict[str, tuple[str, RowData]] = {}
    for split_name, rows in (("train", bundle.train), ("val", bundle.val),
                             ("test", bundle.test)):
        for row in rows:
            canon = row.mol.canonical
            if canon not in seen:
                part = assignment.get(canon, split_name) if assignment else split_name
                seen[canon] = (part, replace(row, token_ids=row.mol.token_ids,
                                             token_len=row.mol.token_len))
    ordered = sorted(seen.items())
    rows = [entry[1] for _, entry in ordered]
    u = cache_unified(model, rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["smiles", "split"] + [f"u{i}" for i in range(u.shape[1])])
        for (canon, (part, _)), vec in zip(ordered, u):
            w.writerow([canon, part] + [f"{x:.7e}" for x in vec])
    return len(ordered)
