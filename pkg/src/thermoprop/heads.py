"""Domain-informed prediction heads.

Each property head maps the unified embedding to the parameters of a
thermophysical equation, squashes them into physical ranges with sigmoid
boxes, and evaluates the equation at the row temperature, keeping the whole
path differentiable.  The registry covers every equation usable in the
equation-level ablation, including the two known-divergent ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import params as P
from .config import EMBED_DIM

T_REF = 298.15  # K
LN10 = float(np.log(10.0))
GAS_CONSTANT = 8.314462618  # J/mol/K
BORN_SCALE = 166.03  # kcal*Angstrom/mol: e^2 N_A / (8 pi eps0), per Angstrom

PROPERTIES = (
    "solubility", "logP", "hfe", "boiling", "vapor", "viscosity",
    "melting", "flash", "heatcap",
)

# properties whose label is copied across a molecule's rows and metered by
# the evaluation mask
TEMP_INDEPENDENT = ("logP", "hfe", "boiling", "melting", "flash", "heatcap")

ENHANCED_PROPERTIES = ("vapor", "boiling")


class DomainError(ArithmeticError):
    """An equation was evaluated outside its guarded domain."""


class UnknownEquation(KeyError):
    pass


@dataclass(frozen=True)
class HeadSpec:
    prop: str
    equation: str
    n_params: int
    # per-parameter (lo, hi) or None for pass-through
    boxes: tuple[tuple[float, float] | None, ...]
    stable: bool = True

    def __post_init__(self):
        assert len(self.boxes) == self.n_params


def _boxes(*pairs):
    return tuple(pairs)


_UNBOUNDED = None

# Constraint boxes are design choices validated by the monotonicity
# properties; the Andrade box follows the published ranges.  The Wagner box
# keeps all four shape coefficients non-positive, which makes monotone
# non-decreasing pressure below Tc an analytic guarantee.
EQUATIONS: dict[str, dict] = {
    "antoine": dict(n=3, boxes=_boxes((0.0, 15.0), (0.0, 5000.0), (-150.0, 100.0))),
    "wagner6": dict(n=6, boxes=_boxes((-10.0, -0.5), (-5.0, 0.0), (-5.0, 0.0), (-10.0, 0.0),
                                      (float(np.log(350.0)), float(np.log(1200.0))),
                                      (float(np.log(1e5)), float(np.log(1e8))))),
    "clausius": dict(n=2, boxes=_boxes((0.0, 40.0), (0.0, 20000.0))),
    "andrade": dict(n=3, boxes=_boxes((-5.0, 5.0), (0.0, 3000.0), (-200.0, 0.0))),
    "vft": dict(n=3, boxes=_boxes((-5.0, 5.0), (0.0, 3000.0), (0.0, 200.0))),
    "vanthoff": dict(n=2, boxes=_boxes((-15.0, 5.0), (-5000.0, 5000.0))),
    "apelblat": dict(n=3, boxes=_boxes((-50.0, 50.0), (-20000.0, 20000.0), (-10.0, 10.0))),
    "groupcontrib32": dict(n=34, boxes=((100.0, 500.0),) + (_UNBOUNDED,) * 33),
    "nannoolal": dict(n=25, boxes=((100.0, 500.0),) + (_UNBOUNDED,) * 24),
    "lfer24": dict(n=25, boxes=(_UNBOUNDED,) * 25),
    "abraham6": dict(n=6, boxes=(_UNBOUNDED,) * 6),
    "born": dict(n=2, boxes=_boxes((1.0, 80.0), (1.0, 20.0))),
    "thermodecomp": dict(n=2, boxes=_boxes((-50.0, 20.0), (-0.1, 0.1))),
    "shomate5": dict(n=5, boxes=_boxes((0.0, 600.0), (-500.0, 500.0), (-500.0, 500.0),
                                       (-500.0, 500.0), (-50.0, 50.0))),
    "satyanarayana": dict(n=3, boxes=(_UNBOUNDED,) * 3),
    "carroll": dict(n=2, boxes=_boxes((1e-3, 1e3), _UNBOUNDED)),
    "yalkowsky": dict(n=2, boxes=(_UNBOUNDED,) * 2, stable=False),
    "nasa7": dict(n=7, boxes=(_UNBOUNDED,) * 7, stable=False),
    "direct": dict(n=1, boxes=(_UNBOUNDED,)),
}

# final equation assignment (selected by the equation-level ablation)
DEFAULT_ASSIGNMENT: dict[str, str] = {
    "solubility": "vanthoff",
    "logP": "direct",
    "hfe": "born",
    "boiling": "groupcontrib32",
    "vapor": "wagner6",
    "viscosity": "andrade",
    "melting": "direct",
    "flash": "direct",
    "heatcap": "shomate5",
}


def head_spec(prop: str, equation: str | None = None) -> HeadSpec:
    eq = equation or DEFAULT_ASSIGNMENT[prop]
    info = EQUATIONS.get(eq)
    if info is None:
        raise UnknownEquation(eq)
    return HeadSpec(prop=prop, equation=eq, n_params=info["n"], boxes=info["boxes"],
                    stable=info.get("stable", True))


# ---------------------------------------------------------------------------
# constraint and evaluation


def constrain(raw: ad.Tensor, boxes) -> ad.Tensor:
    """theta_i = lo + (hi - lo) * sigmoid(raw_i); unboxed params pass through."""
    if all(b is None for b in boxes):
        return raw
    boxed = np.array([0.0 if b is None else 1.0 for b in boxes])
    lo = np.array([0.0 if b is None else b[0] for b in boxes])
    span = np.array([0.0 if b is None else b[1] - b[0] for b in boxes])
    squashed = ad.add(ad.Tensor(lo.astype(raw.dtype)),
                      ad.mul(ad.Tensor(span.astype(raw.dtype)), ad.sigmoid(raw)))
    mask = ad.Tensor(boxed.astype(raw.dtype))
    return ad.add(ad.mul(mask, squashed), ad.mul(ad.sub(1.0, mask), raw))


def _col(theta: ad.Tensor, i: int) -> ad.Tensor:
    b = theta.shape[0]
    return ad.reshape(ad.narrow(theta, 1, i, 1), (b,))


def eval_equation(equation: str, theta: ad.Tensor, temps: np.ndarray) -> ad.Tensor:
    """Evaluate the closed-form equation at each row temperature.

    theta is (B, n) constrained parameters; temps is (B,) kelvin.  Returns
    (B,) predictions in the property's storage units.
    """
    t = ad.Tensor(np.asarray(temps, dtype=theta.dtype))
    if equation == "direct":
        return _col(theta, 0)
    if equation == "antoine":
        a, b, c = _col(theta, 0), _col(theta, 1), _col(theta, 2)
        denom = ad.add(c, t)
        if np.any(denom.data <= 0):
            raise DomainError("antoine: T + C <= 0")
        return ad.sub(a, ad.div(b, denom))
    if equation == "wagner6":
        a, b, c, d = (_col(theta, i) for i in range(4))
        tc = ad.exp(_col(theta, 4))
        ln_pc = _col(theta, 5)
        tau = ad.relu(ad.sub(1.0, ad.div(t, tc)))  # clamp above Tc
        tr = ad.div(t, tc)
        s = ad.add(
            ad.add(ad.mul(a, tau), ad.mul(b, ad.power(tau, 1.5))),
            ad.add(ad.mul(c, ad.power(tau, 2.5)), ad.mul(d, ad.power(tau, 5.0))),
        )
        ln_p = ad.add(ln_pc, ad.div(s, tr))
        return ad.mul(ln_p, 1.0 / LN10)  # log10 Pa
    if equation == "clausius":
        a, b = _col(theta, 0), _col(theta, 1)
        return ad.mul(ad.sub(a, ad.div(b, t)), 1.0 / LN10)
    if equation == "andrade":
        a, b, c = _col(theta, 0), _col(theta, 1), _col(theta, 2)
        denom = ad.add(t, c)
        if np.any(denom.data <= 0):
            raise DomainError("andrade: T + C <= 0")
        return ad.add(a, ad.div(b, denom))
    if equation == "vft":
        a, b, t0 = _col(theta, 0), _col(theta, 1), _col(theta, 2)
        denom = ad.sub(t, t0)
        if np.any(denom.data <= 0):
            raise DomainError("vft: T <= T0")
        return ad.add(a, ad.div(b, denom))
    if equation == "vanthoff":
        log_s_ref, a = _col(theta, 0), _col(theta, 1)
        return ad.add(log_s_ref, ad.mul(a, ad.sub(1.0 / T_REF, ad.div(1.0, t))))
    if equation == "apelblat":
        a, b, c = _col(theta, 0), _col(theta, 1), _col(theta, 2)
        ln_s = ad.add(ad.add(a, ad.div(b, t)), ad.mul(c, ad.log(t)))
        return ad.mul(ln_s, 1.0 / LN10)
    if equation == "groupcontrib32":
        t0 = _col(theta, 0)
        deltas = ad.sum_axis(ad.narrow(theta, 1, 1, 32), 1)
        c = _col(theta, 33)
        return ad.add(ad.add(t0, deltas), c)
    if equation == "nannoolal":
        t0 = _col(theta, 0)
        contrib = ad.sum_axis(ad.narrow(theta, 1, 1, 24), 1)
        return ad.mul(t0, ad.add(1.0, contrib))
    if equation == "lfer24":
        bias = _col(theta, 0)
        return ad.add(bias, ad.sum_axis(ad.narrow(theta, 1, 1, 24), 1))
    if equation == "abraham6":
        bias = _col(theta, 0)
        return ad.add(bias, ad.sum_axis(ad.narrow(theta, 1, 1, 5), 1))
    if equation == "born":
        eps, radius = _col(theta, 0), _col(theta, 1)
        return ad.neg(ad.mul(BORN_SCALE, ad.div(ad.sub(1.0, ad.div(1.0, eps)), radius)))
    if equation == "thermodecomp":
        dh, ds = _col(theta, 0), _col(theta, 1)
        return ad.sub(dh, ad.mul(t, ds))
    if equation == "shomate5":
        a, b, c, d, e = (_col(theta, i) for i in range(5))
        if np.any(np.asarray(temps) <= 0):
            raise DomainError("shomate5: T <= 0")
        tk = ad.mul(t, 1e-3)
        poly = ad.add(a, ad.mul(b, tk))
        poly = ad.add(poly, ad.mul(c, ad.power(tk, 2.0)))
        poly = ad.add(poly, ad.mul(d, ad.power(tk, 3.0)))
        return ad.add(poly, ad.div(e, ad.power(tk, 2.0)))
    if equation == "satyanarayana":
        a, b, c = _col(theta, 0), _col(theta, 1), _col(theta, 2)
        return ad.add(a, ad.add(ad.mul(b, t), ad.mul(c, ad.power(t, 2.0))))
    if equation == "carroll":
        n, offset = _col(theta, 0), _col(theta, 1)
        return ad.add(
            ad.add(ad.mul(23.369, ad.power(n, 2.0 / 3.0)), ad.mul(20.010, ad.power(n, 1.0 / 3.0))),
            ad.add(ad.Tensor(np.full(theta.shape[0], 31.901, dtype=theta.dtype)), offset),
        )
    if equation == "yalkowsky":
        dh, ds = _col(theta, 0), _col(theta, 1)
        if np.any(np.abs(ds.data) < 1e-6):
            raise DomainError("yalkowsky: |entropy of fusion| < 1e-6")
        return ad.div(dh, ds)
    if equation == "nasa7":
        a1, a2, a3, a4, a5 = (_col(theta, i) for i in range(5))
        cp_r = ad.add(a1, ad.mul(a2, t))
        cp_r = ad.add(cp_r, ad.mul(a3, ad.power(t, 2.0)))
        cp_r = ad.add(cp_r, ad.mul(a4, ad.power(t, 3.0)))
        cp_r = ad.add(cp_r, ad.mul(a5, ad.power(t, 4.0)))
        return ad.mul(cp_r, GAS_CONSTANT)
    raise UnknownEquation(equation)


# ---------------------------------------------------------------------------
# head networks

HEAD_HIDDEN = 256
ENHANCED_HIDDEN = 512
HEAD_DROPOUT = 0.2


def standard_head(store: P.ParamStore, spec: HeadSpec, u: ad.Tensor, train: bool,
                  rng: np.random.Generator) -> ad.Tensor:
    """512 -> 256 -> 256 -> n with ReLU and dropout 0.2."""
    name = f"head.{spec.prop}"
    h = ad.relu(P.linear(store, f"{name}.fc1", u, EMBED_DIM, HEAD_HIDDEN))
    h = ad.dropout(h, HEAD_DROPOUT, rng, train)
    h = ad.relu(P.linear(store, f"{name}.fc2", h, HEAD_HIDDEN, HEAD_HIDDEN))
    h = ad.dropout(h, HEAD_DROPOUT, rng, train)
    return P.linear(store, f"{name}.out", h, HEAD_HIDDEN, spec.n_params)


def enhanced_head(store: P.ParamStore, spec: HeadSpec, u: ad.Tensor, train: bool,
                  rng: np.random.Generator) -> ad.Tensor:
    """Three 512-unit layers with LayerNorm/GELU and two residual connections."""
    name = f"head.{spec.prop}"
    d = ENHANCED_HIDDEN
    h1 = ad.gelu(P.layer_norm(store, f"{name}.ln1",
                              P.linear(store, f"{name}.fc1", u, EMBED_DIM, d), d))
    h2 = ad.add(ad.gelu(P.layer_norm(store, f"{name}.ln2",
                                     P.linear(store, f"{name}.fc2", h1, d, d), d)), h1)
    skip = P.linear(store, f"{name}.skip", u, EMBED_DIM, d)
    h3 = ad.add(ad.gelu(P.layer_norm(store, f"{name}.ln3",
                                     P.linear(store, f"{name}.fc3", h2, d, d), d)), skip)
    return P.linear(store, f"{name}.out", h3, d, spec.n_params)


def head_forward(store: P.ParamStore, spec: HeadSpec, u: ad.Tensor, temps: np.ndarray,
                 train: bool, rng: np.random.Generator,
                 enhanced: bool | None = None) -> tuple[ad.Tensor, ad.Tensor]:
    """(prediction in property units, constrained theta), both differentiable."""
    if enhanced is None:
        enhanced = spec.prop in ENHANCED_PROPERTIES
    net = enhanced_head if enhanced else standard_head
    raw = net(store, spec, u, train, rng)
    if spec.equation == "direct":
        return _col(raw, 0), raw
    theta = constrain(raw, spec.boxes)
    return eval_equation(spec.equation, theta, temps), theta


def head_param_count(spec: HeadSpec) -> int:
    """Exact parameter count of the standard head network."""
    n = spec.n_params
    return (EMBED_DIM * HEAD_HIDDEN + HEAD_HIDDEN
            + HEAD_HIDDEN * HEAD_HIDDEN + HEAD_HIDDEN
            + HEAD_HIDDEN * n + n)
