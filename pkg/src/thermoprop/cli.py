"""Command-line surface: parse, featurize, split, train, eval, sweep, ablate,
export-embeddings, inspect-checkpoint."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


from . import checkpoint as ckpt
from .chem import canonical_smiles, murcko_scaffold, parse_smiles, tokenize
from .config import EncoderConfig, TrainConfig, load_config
from .dataset import (
    Split,
    fit_stats,
    hybrid_split,
    ingest_csv,
    propagate_and_mask,
    quality_control,
    write_split_manifest,
)
from .evaluation import (
    export_embeddings,
    metrics_for_rows,
    run_ablation,
    temperature_sweep,
    write_delta_csv,
    write_metrics_csv,
    write_prediction_dump,
    write_sweep_csv,
)
from .featurize import DESCRIPTOR_NAMES, atom_features, bond_features, descriptors
from .geometry import conformer_filename, load_conformer
from .heads import PROPERTIES
from .model import Model
from .train import DataBundle, prepare_rows, run_stage1, run_stage2


def _load_configs(args) -> tuple[EncoderConfig, TrainConfig]:
    if args.config:
        enc, train = load_config(args.config)
    else:
        enc, train = EncoderConfig(), TrainConfig()
    if args.seed is not None:
        train.seed = args.seed
    return enc, train


def _load_records(path: str):
    records = ingest_csv(path)
    clean, report = quality_control(records)
    return propagate_and_mask(clean), report


def _conformer_lookup(records, conformer_dir: str | None):
    if not conformer_dir:
        return None
    lookup = {}
    cdir = Path(conformer_dir)
    for smiles in {r.smiles for r in records}:
        path = cdir / conformer_filename(smiles)
        if path.exists():
            lookup[smiles] = load_conformer(path, parse_smiles(smiles))
    return lookup


def _build_bundle(records, split: Split, enc_cfg, train_cfg, conformer_dir=None,
                  augment_train: bool = True) -> DataBundle:
    from .dataset import augment

    parts = {p: [r for r in records if split.assignment[r.smiles] == p]
             for p in ("train", "val", "test")}
    stats = fit_stats(parts["train"])
    if augment_train and train_cfg.n_aug > 0:
        parts["train"] = augment(parts["train"], n_aug=train_cfg.n_aug, seed=train_cfg.seed)
    conformers = _conformer_lookup(records, conformer_dir)
    cache: dict = {}
    kw = dict(conformers=conformers, use_planar_fallback=conformer_dir is None)
    return DataBundle(
        train=prepare_rows(parts["train"], stats, enc_cfg, cache, **kw),
        val=prepare_rows(parts["val"], stats, enc_cfg, cache, **kw),
        test=prepare_rows(parts["test"], stats, enc_cfg, cache, **kw),
        stats=stats,
    )


def _restore_model(path: str, enc_cfg: EncoderConfig) -> tuple[Model, dict]:
    header, state = ckpt.load_checkpoint(path)
    meta = ckpt.parse_header(header)
    overrides = {p: meta[f"equation.{p}"] for p in PROPERTIES if f"equation.{p}" in meta}
    model = Model(enc_cfg, variant=meta.get("variant", "full"), seed=0,
                  equation_overrides=overrides)
    model.store.load_state_dict(state)
    return model, meta


# ---------------------------------------------------------------------------
# commands


def cmd_parse(args) -> int:
    g = parse_smiles(args.smiles)
    out = {
        "canonical": canonical_smiles(g),
        "atoms": g.n_atoms,
        "bonds": g.n_bonds,
        "rings": g.ring_count(),
        "scaffold": murcko_scaffold(g),
        "token_length": tokenize(args.smiles).length,
    }
    print(json.dumps(out, indent=2))
    return 0


def cmd_featurize(args) -> int:
    g = parse_smiles(args.smiles)
    d = descriptors(g)
    out = {
        "descriptors": {name: float(v) for name, v in zip(DESCRIPTOR_NAMES, d)},
        "atom_features_shape": [g.n_atoms, int(atom_features(g, 0).shape[0])],
        "bond_features_shape": [g.n_bonds, 12 if g.n_bonds else 0],
    }
    if g.n_bonds:
        bond_features(g, 0)
    print(json.dumps(out, indent=2))
    return 0


def cmd_split(args) -> int:
    enc_cfg, train_cfg = _load_configs(args)
    records, report = _load_records(args.data)
    split = hybrid_split(records, fractions=train_cfg.split_fractions,
                         rare_floor=train_cfg.rare_floor, seed=train_cfg.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_split_manifest(out_dir / "split.csv", split)
    (out_dir / "qc_report.txt").write_text(report.to_text())
    counts = {p: len(split.members(p)) for p in ("train", "val", "test")}
    print(f"split written to {out_dir / 'split.csv'}: {counts}")
    return 0


def cmd_train(args) -> int:
    enc_cfg, train_cfg = _load_configs(args)
    records, report = _load_records(args.data)
    split = hybrid_split(records, fractions=train_cfg.split_fractions,
                         rare_floor=train_cfg.rare_floor, seed=train_cfg.seed)
    bundle = _build_bundle(records, split, enc_cfg, train_cfg, args.conformers)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "qc_report.txt").write_text(report.to_text())
    write_split_manifest(out_dir / "split.csv", split)
    (out_dir / "norm_stats.txt").write_text(bundle.stats.to_text())

    model = Model(enc_cfg, variant=args.variant, seed=train_cfg.seed)
    res1 = run_stage1(model, bundle, train_cfg.stage1, seed=train_cfg.seed,
                      log_path=out_dir / "stage1_log.csv")
    print(f"stage 1: best val {res1.best_val_loss:.5f} at epoch {res1.best_epoch} "
          f"({res1.epochs_run} epochs run)")
    res2 = run_stage2(model, bundle, train_cfg.stage2, seed=train_cfg.seed,
                      log_path=out_dir / "stage2_log.csv")
    print(f"stage 2: best val {res2.best_val_loss:.5f} at epoch {res2.best_epoch}")
    header = ckpt.build_header(enc_cfg, train_cfg, bundle.stats, model.variant,
                               model.assignment)
    ckpt.save_checkpoint(out_dir / "model.ckpt", model.store.state_dict(), header)
    print(f"checkpoint written to {out_dir / 'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    enc_cfg, train_cfg = _load_configs(args)
    records, _ = _load_records(args.data)
    split = hybrid_split(records, fractions=train_cfg.split_fractions,
                         rare_floor=train_cfg.rare_floor, seed=train_cfg.seed)
    bundle = _build_bundle(records, split, enc_cfg, train_cfg, args.conformers,
                           augment_train=False)
    model, _ = _restore_model(args.checkpoint, enc_cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    all_rows = []
    for name, rows in (("train", bundle.train), ("val", bundle.val), ("test", bundle.test)):
        all_rows.extend(metrics_for_rows(model, rows, bundle.stats, name))
    write_metrics_csv(out_dir / "metrics.csv", all_rows)
    write_prediction_dump(out_dir / "predictions.csv", model, bundle.test, bundle.stats)
    for r in all_rows:
        r2 = "" if r.r2 is None else f" r2={r.r2:.4f}"
        print(f"{r.split:5s} {r.prop:12s} n={r.n:5d} rmse={r.rmse:.4f}{r2}")
    return 0


def cmd_sweep(args) -> int:
    enc_cfg, train_cfg = _load_configs(args)
    model, meta = _restore_model(args.checkpoint, enc_cfg)
    from .dataset import Record
    from .train import prepare_rows as _prep

    records = propagate_and_mask([Record(smiles=canonical_smiles(parse_smiles(args.smiles)),
                                         targets={args.property: 0.0})])
    from .dataset import NormStats

    stats = NormStats(mean={args.property: 0.0}, std={args.property: 1.0})
    rows = _prep(records, stats, enc_cfg, {}, use_planar_fallback=True)
    sweep = temperature_sweep(model, rows[0], args.property)
    if args.out:
        write_sweep_csv(Path(args.out), sweep)
    print(f"{args.property} sweep verdict: {sweep.verdict}"
          + (f" (violation near {sweep.violation})" if sweep.violation else ""))
    return 0


def cmd_ablate(args) -> int:
    enc_cfg, train_cfg = _load_configs(args)
    records, _ = _load_records(args.data)
    split = hybrid_split(records, fractions=train_cfg.split_fractions,
                         rare_floor=train_cfg.rare_floor, seed=train_cfg.seed)
    bundle = _build_bundle(records, split, enc_cfg, train_cfg, args.conformers)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    full_model = Model(enc_cfg, variant="full", seed=train_cfg.seed)
    run_stage1(full_model, bundle, train_cfg.stage1, seed=train_cfg.seed)
    run_stage2(full_model, bundle, train_cfg.stage2, seed=train_cfg.seed)
    full_rows = metrics_for_rows(full_model, bundle.test, bundle.stats, "test")
    outcomes = []
    for variant in args.variants:
        if variant == "full":
            from .evaluation import AblationOutcome

            outcomes.append(AblationOutcome(variant="full", metrics=full_rows,
                                            delta_rmse={r.prop: 0.0 for r in full_rows}))
            continue
        if variant.startswith("equation("):
            inner = variant[len("equation(") : -1]
            prop, eq = (s.strip() for s in inner.split(","))
            outcome = run_ablation("full", bundle, enc_cfg, train_cfg.stage1,
                                   train_cfg.stage2, seed=train_cfg.seed,
                                   full_metrics=full_rows, full_model=full_model,
                                   equation=(prop, eq))
        else:
            outcome = run_ablation(variant, bundle, enc_cfg, train_cfg.stage1,
                                   train_cfg.stage2, seed=train_cfg.seed,
                                   full_metrics=full_rows)
        outcomes.append(outcome)
        flag = " [diverged]" if outcome.diverged else ""
        print(f"{outcome.variant}{flag}: "
              + " ".join(f"{p}={d:+.3f}" for p, d in sorted(outcome.delta_rmse.items())))
    write_delta_csv(out_dir / "ablation_delta_rmse.csv", outcomes)
    return 0


def cmd_export_embeddings(args) -> int:
    enc_cfg, train_cfg = _load_configs(args)
    records, _ = _load_records(args.data)
    split = hybrid_split(records, fractions=train_cfg.split_fractions,
                         rare_floor=train_cfg.rare_floor, seed=train_cfg.seed)
    bundle = _build_bundle(records, split, enc_cfg, train_cfg, args.conformers,
                           augment_train=False)
    model, _ = _restore_model(args.checkpoint, enc_cfg)
    n = export_embeddings(model, bundle, args.out, assignment=split.assignment)
    print(f"wrote {n} embeddings to {args.out}")
    return 0


def cmd_inspect_checkpoint(args) -> int:
    header, state = ckpt.load_checkpoint(args.checkpoint)
    print(header.rstrip())
    print(f"[tensors] ({len(state)})")
    total = 0
    for name in sorted(state):
        arr = state[name]
        total += arr.size
        print(f"  {name}  {list(arr.shape)}")
    print(f"total parameters (incl. buffers): {total}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="thermoprop",
                                 description="multimodal thermophysical property model")
    ap.add_argument("--config", help="flat key=value configuration file")
    ap.add_argument("--seed", type=int, default=None)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="canonicalize one SMILES")
    p.add_argument("smiles")
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("featurize", help="print the descriptor vector")
    p.add_argument("smiles")
    p.set_defaults(fn=cmd_featurize)

    p = sub.add_parser("split", help="write the hybrid split manifest")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("train", help="two-stage training run")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--conformers", help="directory of XYZ files (else planar fallback)")
    p.add_argument("--variant", default="full")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="metrics and prediction dump for a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--conformers")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="temperature sweep for one molecule/property")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--smiles", required=True)
    p.add_argument("--property", required=True, choices=PROPERTIES)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("ablate", help="run ablation variants and ΔRMSE table")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--conformers")
    p.add_argument("--variants", nargs="+", required=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("export-embeddings", help="dump unified embeddings as CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--conformers")
    p.set_defaults(fn=cmd_export_embeddings)

    p = sub.add_parser("inspect-checkpoint", help="print header and tensor table")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_inspect_checkpoint)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
