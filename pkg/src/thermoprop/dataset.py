"""CSV ingestion, quality control, label propagation, splitting, normalization.

CSV schema: a header row with a `smiles` column, an optional `temperature_K`
column (default 298.15), one column per property (blank cell = missing), and
an optional `source` column.  Property columns are accepted under the bare
property id or its unit-decorated alias; values are stored as-is (no unit
conversion happens here).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .chem import (
    MultiComponentError,
    ParseError,
    canonical_smiles,
    enumerate_smiles,
    murcko_scaffold,
    parse_smiles,
)
from .heads import PROPERTIES, TEMP_INDEPENDENT, T_REF

RARE_PROPERTIES = ("hfe", "viscosity", "heatcap")

# accepted column spellings per property (unit-decorated aliases documented
# in the README; storage units follow them)
COLUMN_ALIASES = {
    "solubility": ("solubility", "solubility_log_molL"),
    "logP": ("logp", "logP"),
    "hfe": ("hfe", "hfe_kcalmol", "hydration_free_energy_kcalmol"),
    "boiling": ("boiling", "boiling_point_K"),
    "vapor": ("vapor", "vapor_pressure_log10Pa"),
    "viscosity": ("viscosity", "viscosity_log10mPas"),
    "melting": ("melting", "melting_point_K"),
    "flash": ("flash", "flash_point_K"),
    "heatcap": ("heatcap", "heat_capacity_JmolK"),
}

# physical range filters applied during QC (storage units)
RANGE_FILTERS = {
    "boiling": (100.0, 1000.0),
    "flash": (100.0, 1000.0),
    "melting": (50.0, 1000.0),
    "hfe": (-30.0, 10.0),
}

HEAVY_ATOM_RANGE = (2, 100)


class DatasetError(ValueError):
    pass


class MissingColumn(DatasetError):
    pass


class RowError(DatasetError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InsufficientRareData(DatasetError):
    pass


class DegenerateProperty(DatasetError):
    pass


@dataclass
class Record:
    smiles: str                      # canonical after QC
    temperature: float = T_REF
    targets: dict[str, float] = field(default_factory=dict)
    eval_bits: set[str] = field(default_factory=set)
    source: str = ""
    augmented: bool = False
    aug_smiles: str = ""             # enumerated variant fed to the tokenizer

    def input_smiles(self) -> str:
        return self.aug_smiles if self.augmented else self.smiles


@dataclass
class QcReport:
    input_rows: int = 0
    kept: int = 0
    parse_failures: int = 0
    multi_component: int = 0
    heavy_atom_floor: int = 0
    heavy_atom_ceiling: int = 0
    empty_rows: int = 0
    rows_merged: int = 0          # rows collapsed into an existing (smiles, T) row
    range_violations: int = 0     # individual values outside physical ranges
    duplicate_values_merged: int = 0

    def dropped(self) -> int:
        return (self.parse_failures + self.multi_component + self.heavy_atom_floor
                + self.heavy_atom_ceiling + self.empty_rows + self.rows_merged)

    def to_text(self) -> str:
        lines = ["quality control report"]
        for name in ("input_rows", "kept", "parse_failures", "multi_component",
                     "heavy_atom_floor", "heavy_atom_ceiling", "empty_rows",
                     "rows_merged", "range_violations", "duplicate_values_merged"):
            lines.append(f"{name} = {getattr(self, name)}")
        return "\n".join(lines) + "\n"


def ingest_csv(path: str | Path) -> list[Record]:
    """Parse the CSV into raw Records (no QC, no canonicalization)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn("empty file") from None
        cols = {name.strip(): i for i, name in enumerate(header)}
        if "smiles" not in cols:
            raise MissingColumn("no smiles column")
        prop_cols: dict[str, int] = {}
        for prop, aliases in COLUMN_ALIASES.items():
            for alias in aliases:
                if alias in cols:
                    prop_cols[prop] = cols[alias]
                    break
        temp_col = cols.get("temperature_K")
        source_col = cols.get("source")

        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if cols["smiles"] >= len(row):
                raise RowError(lineno, "row has no smiles cell")
            smiles = row[cols["smiles"]].strip()
            temperature = T_REF
            if temp_col is not None and temp_col < len(row) and row[temp_col].strip():
                try:
                    temperature = float(row[temp_col])
                except ValueError:
                    raise RowError(lineno, f"bad temperature {row[temp_col]!r}") from None
            targets = {}
            for prop, ci in prop_cols.items():
                cell = row[ci].strip() if ci < len(row) else ""
                if not cell:
                    continue
                try:
                    targets[prop] = float(cell)
                except ValueError:
                    raise RowError(lineno, f"bad {prop} value {cell!r}") from None
            source = row[source_col].strip() if source_col is not None and source_col < len(row) else ""
            records.append(Record(smiles=smiles, temperature=temperature,
                                  targets=targets, source=source))
    return records


def quality_control(records: list[Record]) -> tuple[list[Record], QcReport]:
    """Canonicalize, filter, and median-merge duplicates; drops are counted."""
    report = QcReport(input_rows=len(records))
    staged: list[Record] = []
    for rec in records:
        try:
            g = parse_smiles(rec.smiles)
        except MultiComponentError:
            report.multi_component += 1
            continue
        except ParseError:
            report.parse_failures += 1
            continue
        if g.n_atoms < HEAVY_ATOM_RANGE[0]:
            report.heavy_atom_floor += 1
            continue
        if g.n_atoms > HEAVY_ATOM_RANGE[1]:
            report.heavy_atom_ceiling += 1
            continue
        targets = {}
        for prop, value in rec.targets.items():
            if not math.isfinite(value):
                report.range_violations += 1
                continue
            lo_hi = RANGE_FILTERS.get(prop)
            if lo_hi is not None and not (lo_hi[0] <= value <= lo_hi[1]):
                report.range_violations += 1
                continue
            targets[prop] = value
        if not targets:
            report.empty_rows += 1
            continue
        staged.append(replace(rec, smiles=canonical_smiles(g), targets=targets))

    # median merge over duplicate (canonical smiles, temperature, property)
    by_key: dict[tuple[str, float], list[Record]] = {}
    for rec in staged:
        by_key.setdefault((rec.smiles, rec.temperature), []).append(rec)
    merged: list[Record] = []
    for (smiles, temperature), group in sorted(by_key.items()):
        targets: dict[str, float] = {}
        for prop in PROPERTIES:
            values = [r.targets[prop] for r in group if prop in r.targets]
            if values:
                targets[prop] = float(np.median(values))
                if len(values) > 1:
                    report.duplicate_values_merged += len(values) - 1
        merged.append(Record(smiles=smiles, temperature=temperature, targets=targets,
                             source=group[0].source))
    merged.sort(key=lambda r: (r.smiles, r.temperature))
    report.rows_merged = len(staged) - len(merged)
    report.kept = len(merged)
    return merged, report


def propagate_and_mask(records: list[Record]) -> list[Record]:
    """Copy temperature-independent labels across a molecule's rows and set
    the evaluation bit on the row closest to 298.15 K (ties: lowest T)."""
    by_mol: dict[str, list[Record]] = {}
    for rec in records:
        by_mol.setdefault(rec.smiles, []).append(rec)
    out: list[Record] = []
    for smiles in sorted(by_mol):
        rows = sorted(by_mol[smiles], key=lambda r: r.temperature)
        for prop in TEMP_INDEPENDENT:
            values = [r.targets[prop] for r in rows if prop in r.targets]
            if not values:
                continue
            value = values[0]
            for r in rows:
                r.targets[prop] = value
            best = min(rows, key=lambda r: (abs(r.temperature - T_REF), r.temperature))
            best.eval_bits.add(prop)
        out.extend(rows)
    return out


@dataclass
class Split:
    assignment: dict[str, str]  # canonical smiles -> train | val | test

    def members(self, part: str) -> set[str]:
        return {s for s, p in self.assignment.items() if p == part}


def hybrid_split(records: list[Record], fractions=(0.8, 0.1, 0.1),
                 rare_floor: int = 5, seed: int = 0) -> Split:
    """Rare-property molecules fill val/test floors first (test, then val,
    then train); everything else is scaffold-grouped and packed greedily."""
    molecules = sorted({r.smiles for r in records})
    props_by_mol: dict[str, set[str]] = {m: set() for m in molecules}
    for r in records:
        props_by_mol[r.smiles].update(r.targets)

    rng = np.random.default_rng(seed)
    assignment: dict[str, str] = {}

    rare_mols = [m for m in molecules if props_by_mol[m] & set(RARE_PROPERTIES)]
    rare_order = list(rare_mols)
    rng.shuffle(rare_order)
    need: dict[str, dict[str, int]] = {
        part: {p: rare_floor for p in RARE_PROPERTIES} for part in ("test", "val")
    }

    def rare_deficit(part: str, mol: str) -> int:
        return sum(
            need[part][p] for p in RARE_PROPERTIES if p in props_by_mol[mol] and need[part][p] > 0
        )

    for part in ("test", "val"):
        for mol in rare_order:
            if mol in assignment:
                continue
            if rare_deficit(part, mol) > 0:
                assignment[mol] = part
                for p in RARE_PROPERTIES:
                    if p in props_by_mol[mol]:
                        need[part][p] -= 1
    unmet = {
        (part, p): n for part in need for p, n in need[part].items() if n > 0
    }
    if unmet:
        achieved = {
            p: sum(1 for m in rare_mols if p in props_by_mol[m]) for p in RARE_PROPERTIES
        }
        raise InsufficientRareData(
            f"rare floors unmet {unmet}; available unique molecules {achieved}"
        )
    for mol in rare_order:
        assignment.setdefault(mol, "train")

    # scaffold groups for the remainder
    remaining = [m for m in molecules if m not in assignment]
    groups: dict[str, list[str]] = {}
    for m in remaining:
        key = murcko_scaffold(parse_smiles(m))
        groups.setdefault(key, []).append(m)
    group_list = sorted(groups.values(), key=lambda g: g[0])
    rng.shuffle(group_list)

    targets = {p: f * len(molecules) for p, f in zip(("train", "val", "test"), fractions)}
    counts = {"train": 0, "val": 0, "test": 0}
    for m, part in assignment.items():
        counts[part] += 1
    for group in group_list:
        # fill the partition with the largest relative deficit
        part = max(targets, key=lambda p: (targets[p] - counts[p]) / max(targets[p], 1e-9))
        for m in group:
            assignment[m] = part
        counts[part] += len(group)
    return Split(assignment=assignment)


@dataclass
class NormStats:
    mean: dict[str, float]
    std: dict[str, float]

    def to_text(self) -> str:
        lines = []
        for p in PROPERTIES:
            if p in self.mean:
                lines.append(f"{p}.mean = {self.mean[p]!r}")
                lines.append(f"{p}.std = {self.std[p]!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NormStats":
        mean: dict[str, float] = {}
        std: dict[str, float] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or "=" not in line:
                continue
            key, val = (s.strip() for s in line.split("=", 1))
            prop, which = key.rsplit(".", 1)
            (mean if which == "mean" else std)[prop] = float(val)
        return cls(mean=mean, std=std)


def fit_stats(train_records: list[Record]) -> NormStats:
    """Per-property z-score statistics over unique training molecules.

    Augmented rows are excluded; temperature-independent properties count one
    (eval-masked) row per molecule, temperature-dependent ones every row.
    """
    mean: dict[str, float] = {}
    std: dict[str, float] = {}
    for prop in PROPERTIES:
        if prop in TEMP_INDEPENDENT:
            values = [
                r.targets[prop]
                for r in train_records
                if not r.augmented and prop in r.eval_bits
            ]
        else:
            values = [
                r.targets[prop]
                for r in train_records
                if not r.augmented and prop in r.targets
            ]
        if not values:
            continue
        arr = np.asarray(values, dtype=np.float64)
        sigma = float(arr.std())
        if sigma <= 1e-12:
            raise DegenerateProperty(f"{prop}: zero variance in training data")
        mean[prop] = float(arr.mean())
        std[prop] = sigma
    return NormStats(mean=mean, std=std)


def normalize_value(stats: NormStats, prop: str, value: float) -> float:
    return (value - stats.mean[prop]) / stats.std[prop]


def denormalize_value(stats: NormStats, prop: str, value: float) -> float:
    return value * stats.std[prop] + stats.mean[prop]


def augment(train_records: list[Record], n_aug: int = 2, seed: int = 0) -> list[Record]:
    """Append n_aug enumerated-SMILES copies of every training row.

    Copies share graph, conformer, targets, and temperature with their parent
    and carry no evaluation bits.
    """
    variants_by_mol: dict[str, list[str]] = {}
    rng = np.random.default_rng(seed)
    out = list(train_records)
    for smiles in sorted({r.smiles for r in train_records}):
        g = parse_smiles(smiles)
        variants_by_mol[smiles] = enumerate_smiles(g, n_aug, seed=int(rng.integers(1 << 31)))
    for rec in train_records:
        if rec.augmented:
            continue
        for variant in variants_by_mol[rec.smiles]:
            out.append(
                Record(
                    smiles=rec.smiles,
                    temperature=rec.temperature,
                    targets=dict(rec.targets),
                    eval_bits=set(),
                    source=rec.source,
                    augmented=True,
                    aug_smiles=variant,
                )
            )
    return out


def records_to_arrays(records: list[Record], stats: NormStats | None = None):
    """(targets, mask, eval_mask) arrays in PROPERTIES order; optionally z-scored."""
    n = len(records)
    targets = np.full((n, len(PROPERTIES)), np.nan)
    mask = np.zeros((n, len(PROPERTIES)))
    eval_mask = np.zeros((n, len(PROPERTIES)))
    for i, rec in enumerate(records):
        for j, prop in enumerate(PROPERTIES):
            if prop in rec.targets and (stats is None or prop in stats.mean):
                value = rec.targets[prop]
                if stats is not None:
                    value = normalize_value(stats, prop, value)
                targets[i, j] = value
                mask[i, j] = 1.0
                if prop in rec.eval_bits:
                    eval_mask[i, j] = 1.0
    return targets, mask, eval_mask


def write_split_manifest(path: str | Path, split: Split) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["smiles", "partition", "scaffold"])
        for smiles in sorted(split.assignment):
            w.writerow([smiles, split.assignment[smiles],
                        murcko_scaffold(parse_smiles(smiles))])
