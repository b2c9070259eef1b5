"""Named parameter store shared by all encoders, fusion, and heads."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


class ParamStore:
    """Ordered name -> Tensor map with seeded initialization.

    Parameters are created on first access and re-used afterwards, so a
    forward pass both defines and fetches them.  Buffers (batch-norm running
    stats) live alongside but never receive gradients.
    """

    def __init__(self, seed: int = 0, dtype=np.float32):
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype
        self.params: dict[str, ad.Tensor] = {}
        self.buffers: dict[str, ad.BatchNormState] = {}
        self.frozen: set[str] = set()

    # -- creation ----------------------------------------------------------
    def param(self, name: str, shape: tuple[int, ...], init: str = "fan_in") -> ad.Tensor:
        t = self.params.get(name)
        if t is not None:
            return t
        if init == "fan_in":
            bound = 1.0 / np.sqrt(shape[0] if len(shape) > 1 else max(shape[0], 1))
            data = self.rng.uniform(-bound, bound, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "embedding":
            data = self.rng.normal(0.0, 0.02, size=shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = ad.Tensor(data.astype(self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def bn_state(self, name: str, dim: int, momentum: float = 0.1) -> ad.BatchNormState:
        st = self.buffers.get(name)
        if st is None:
            st = ad.BatchNormState(dim, momentum=momentum, dtype=self.dtype)
            self.buffers[name] = st
        return st

    # -- bookkeeping ---------------------------------------------------------
    def trainable(self) -> list[tuple[str, ad.Tensor]]:
        return [(n, p) for n, p in self.params.items() if n not in self.frozen]

    def freeze(self, prefixes: tuple[str, ...]) -> None:
        for name in self.params:
            if name.startswith(prefixes):
                self.frozen.add(name)
                self.params[name].requires_grad = False
                self.params[name].needs_grad = False

    def unfreeze_all(self) -> None:
        self.frozen.clear()
        for p in self.params.values():
            p.requires_grad = True
            p.needs_grad = True

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def count(self, prefix: str = "") -> int:
        return sum(p.data.size for n, p in self.params.items() if n.startswith(prefix))

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {n: p.data.copy() for n, p in self.params.items()}
        for n, st in self.buffers.items():
            out[f"{n}.running_mean"] = st.running_mean.copy()
            out[f"{n}.running_var"] = st.running_var.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for n, arr in state.items():
            if n.endswith(".running_mean"):
                self.bn_state(n[: -len(".running_mean")], arr.shape[0]).running_mean = arr.copy()
            elif n.endswith(".running_var"):
                self.bn_state(n[: -len(".running_var")], arr.shape[0]).running_var = arr.copy()
            else:
                p = self.params.get(n)
                if p is None:
                    p = ad.Tensor(arr.copy(), requires_grad=True)
                    self.params[n] = p
                else:
                    if p.data.shape != arr.shape:
                        raise ValueError(f"shape mismatch loading {n}")
                    p.data = arr.astype(p.data.dtype).copy()


# ---------------------------------------------------------------------------
# layer helpers


def linear(store: ParamStore, name: str, x: ad.Tensor, d_in: int, d_out: int,
           init: str = "fan_in") -> ad.Tensor:
    w = store.param(f"{name}.w", (d_in, d_out), init=init)
    b = store.param(f"{name}.b", (d_out,), init="zeros")
    return ad.add(ad.matmul(x, w), b)


def layer_norm(store: ParamStore, name: str, x: ad.Tensor, dim: int) -> ad.Tensor:
    gamma = store.param(f"{name}.gamma", (dim,), init="ones")
    beta = store.param(f"{name}.beta", (dim,), init="zeros")
    return ad.layer_norm(x, gamma, beta)


def batch_norm(store: ParamStore, name: str, x: ad.Tensor, dim: int, train: bool) -> ad.Tensor:
    gamma = store.param(f"{name}.gamma", (dim,), init="ones")
    beta = store.param(f"{name}.beta", (dim,), init="zeros")
    return ad.batch_norm(x, gamma, beta, store.bn_state(name, dim), train)


def graph_norm(store: ParamStore, name: str, x: ad.Tensor, dim: int,
               graph_ids: np.ndarray, n_graphs: int) -> ad.Tensor:
    gamma = store.param(f"{name}.gamma", (dim,), init="ones")
    beta = store.param(f"{name}.beta", (dim,), init="zeros")
    return ad.graph_norm(x, gamma, beta, graph_ids, n_graphs)
