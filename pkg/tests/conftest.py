"""Shared fixtures: the bundled desk corpus and the synthetic labelled dataset.

The synthetic targets are analytic functions of the 13 molecular descriptors
(the oracle below), plus Andrade-form viscosity and Antoine-form vapor
pressure curves evaluated at five temperatures.  Training-R2 acceptance
checks measure how well the model recovers these generating formulas.
"""

from __future__ import annotations

from importlib import resources

import numpy as np
import pytest

from thermoprop.chem import parse_smiles
from thermoprop.dataset import Record, propagate_and_mask
from thermoprop.featurize import descriptors
from thermoprop.heads import T_REF

SYNTH_TEMPS = (260.0, 280.0, 300.0, 320.0, 340.0)


def load_desk_corpus() -> list[str]:
    text = resources.files("thermoprop").joinpath("data/desk_corpus.smi").read_text()
    return text.split()


def oracle_params(desc: np.ndarray) -> dict:
    """The generating formulas: molecule-level values and curve parameters.

    Inputs are the 13 raw descriptors; f* are bounded scalings of them.
    """
    mw, heavy, rings, arom, donors, acceptors, rot, halo, fsp3, charge, polar, chain, mr = desc
    f_mw = mw / 150.0
    f_don = donors / 2.0
    f_acc = acceptors / 3.0
    f_rot = rot / 4.0
    f_arom = arom / 2.0
    f_polar = polar / 45.0
    f_mr = mr / 60.0
    return {
        "logP": -1.0 + 3.0 * f_mr - 2.0 * f_polar + 1.5 * fsp3,
        "solubility": 1.0 - 4.0 * f_mr + 2.5 * f_polar - 1.0 * fsp3,
        "hfe": -1.5 - 7.0 * f_polar - 2.0 * f_don,
        "boiling": 280.0 + 220.0 * f_mw + 60.0 * f_don + 40.0 * f_arom,
        "melting": 130.0 + 160.0 * f_mw + 60.0 * f_polar + 30.0 * f_arom,
        "flash": 160.0 + 180.0 * f_mw + 50.0 * f_polar,
        "heatcap": 70.0 + 300.0 * f_mw + 60.0 * f_rot,
        # Andrade: log10(eta/mPa.s) = Av + Bv / (T + Cv), decreasing in T
        "visc_A": -2.0 + 1.0 * fsp3 - 0.3 * f_arom,
        "visc_B": 350.0 + 350.0 * f_mw + 120.0 * f_don,
        "visc_C": -90.0 + 25.0 * fsp3 - 10.0 * f_arom,
        # Antoine: log10(P/Pa) = Aa - Ba / (Ca + T), increasing in T; the
        # several-decade swing over the temperature grid mirrors real vapor
        # pressure and makes the equation assignment load-bearing
        "vap_A": 9.0 + 1.5 * f_polar + 0.5 * f_mw,
        "vap_B": 2800.0 + 900.0 * f_mw + 300.0 * f_don,
        "vap_C": -50.0 + 20.0 * fsp3,
    }


def viscosity_curve(p: dict, t: float) -> float:
    return p["visc_A"] + p["visc_B"] / (t + p["visc_C"])


def vapor_curve(p: dict, t: float) -> float:
    return p["vap_A"] - p["vap_B"] / (p["vap_C"] + t)


def has_property(index: int, prop: str) -> bool:
    """Deterministic sparse label pattern over the corpus."""
    if prop in ("logP", "boiling", "melting", "flash"):
        return True
    if prop in ("solubility", "vapor"):
        return index % 10 < 6
    if prop == "viscosity":
        return index % 3 == 0
    if prop == "heatcap":
        return index % 3 == 1
    if prop == "hfe":
        return index % 3 == 2
    raise KeyError(prop)


def build_synthetic_records(smiles_list: list[str]) -> list[Record]:
    """Post-QC records at canonical SMILES with oracle targets and eval bits."""
    from thermoprop.chem import canonical_smiles

    records: list[Record] = []
    for i, s in enumerate(smiles_list):
        g = parse_smiles(s)
        canon = canonical_smiles(g)
        p = oracle_params(descriptors(g))
        temp_dependent = any(has_property(i, q) for q in ("solubility", "vapor", "viscosity"))
        temps = SYNTH_TEMPS if temp_dependent else (T_REF,)
        for t in temps:
            targets = {}
            for prop in ("logP", "boiling", "melting", "flash", "heatcap", "hfe", "solubility"):
                if has_property(i, prop):
                    targets[prop] = float(p[prop])
            if has_property(i, "viscosity"):
                targets["viscosity"] = float(viscosity_curve(p, t))
            if has_property(i, "vapor"):
                targets["vapor"] = float(vapor_curve(p, t))
            records.append(Record(smiles=canon, temperature=t, targets=targets))
    return propagate_and_mask(records)


@pytest.fixture(scope="session")
def desk_corpus() -> list[str]:
    return load_desk_corpus()


@pytest.fixture(scope="session")
def synthetic_records(desk_corpus) -> list[Record]:
    return build_synthetic_records(desk_corpus)
