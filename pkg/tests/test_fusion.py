import numpy as np
import pytest

from thermoprop import autodiff as ad
from thermoprop import fusion
from thermoprop.config import EMBED_DIM, EncoderConfig
from thermoprop.params import ParamStore


@pytest.fixture
def cfg():
    return EncoderConfig(n_heads=8, fusion_dropout=0.1)


def _layer_norm_np(x, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


class TestCrossAttention:
    def test_identity_at_init(self, cfg):
        store = ParamStore(seed=0)
        rng = np.random.default_rng(1)
        z_graph = ad.Tensor(rng.normal(size=(3, EMBED_DIM)).astype(np.float32))
        z_smiles = ad.Tensor(rng.normal(size=(3, EMBED_DIM)).astype(np.float32))
        zg, zs = fusion.cross_attention(store, cfg, z_graph, z_smiles)
        # attention output proj and ff final layer start zeroed: block = LN(LN(z))
        assert np.allclose(zg.data, _layer_norm_np(_layer_norm_np(z_graph.data)), atol=1e-5)
        assert np.allclose(zs.data, _layer_norm_np(_layer_norm_np(z_smiles.data)), atol=1e-5)

    def test_output_widths(self, cfg):
        store = ParamStore(seed=0)
        rng = np.random.default_rng(2)
        zg, zs = fusion.cross_attention(
            store,
            cfg,
            ad.Tensor(rng.normal(size=(2, EMBED_DIM)).astype(np.float32)),
            ad.Tensor(rng.normal(size=(2, EMBED_DIM)).astype(np.float32)),
        )
        assert zg.shape == (2, EMBED_DIM)
        assert zs.shape == (2, EMBED_DIM)

    def test_gradient_check(self, cfg):
        rng = np.random.default_rng(3)
        store = ParamStore(seed=0, dtype=np.float64)
        zg = ad.Tensor(rng.normal(size=(1, EMBED_DIM)), requires_grad=True)
        zs = ad.Tensor(rng.normal(size=(1, EMBED_DIM)))
        w = ad.Tensor(rng.normal(size=(1, EMBED_DIM)))

        def fn():
            a, _ = fusion.cross_attention(store, cfg, zg, zs)
            return ad.sum_all(ad.mul(a, w))

        fn()  # materialize params
        # perturb the zero-initialized projections so the branch is active
        perturb = np.random.default_rng(4)
        for name, p in store.params.items():
            if name.startswith("fusion.g2s") and np.all(p.data == 0):
                p.data = perturb.normal(scale=0.05, size=p.data.shape)
        params = [zg] + [p for n, p in store.params.items() if n.startswith("fusion.g2s")]
        err = ad.grad_check(fn, params, max_entries=4, rng=np.random.default_rng(5))
        assert err < 1e-3


class TestGatedFuse:
    def test_zero_logits_average(self, cfg):
        store = ParamStore(seed=0)
        rng = np.random.default_rng(5)
        a = ad.Tensor(rng.normal(size=(2, EMBED_DIM)).astype(np.float32))
        b = ad.Tensor(rng.normal(size=(2, EMBED_DIM)).astype(np.float32))
        fused, g = fusion.gated_fuse(store, a, b)
        store.params["fusion.gate1.w"].data[:] = 0
        store.params["fusion.gate2.w"].data[:] = 0
        fused, g = fusion.gated_fuse(store, a, b)
        assert np.allclose(g.data, 0.5)
        assert np.allclose(fused.data, 0.5 * (a.data + b.data), atol=1e-6)

    def test_saturated_gate_pure_graph(self, cfg):
        store = ParamStore(seed=0)
        rng = np.random.default_rng(6)
        a = ad.Tensor(rng.normal(size=(1, EMBED_DIM)).astype(np.float32))
        b = ad.Tensor(rng.normal(size=(1, EMBED_DIM)).astype(np.float32))
        fusion.gated_fuse(store, a, b)  # materialize
        store.params["fusion.gate2.b"].data[:] = 50.0  # sigmoid -> ~1
        fused, g = fusion.gated_fuse(store, a, b)
        assert np.allclose(fused.data, a.data, atol=1e-5)

    def test_equal_inputs_fixed_point(self, cfg):
        store = ParamStore(seed=0)
        rng = np.random.default_rng(7)
        v = ad.Tensor(rng.normal(size=(2, EMBED_DIM)).astype(np.float32))
        fused, g = fusion.gated_fuse(store, v, v)
        assert np.allclose(fused.data, v.data, atol=1e-6)

    def test_gate_bounded(self, cfg):
        store = ParamStore(seed=1)
        rng = np.random.default_rng(8)
        a = ad.Tensor(rng.normal(size=(4, EMBED_DIM)).astype(np.float32))
        b = ad.Tensor(rng.normal(size=(4, EMBED_DIM)).astype(np.float32))
        _, g = fusion.gated_fuse(store, a, b)
        assert np.all(g.data > 0) and np.all(g.data < 1)


class TestGeometryGate:
    def test_absent_conformer_zero_block(self, cfg):
        store = ParamStore(seed=0)
        rng = np.random.default_rng(9)
        z = ad.Tensor(rng.normal(size=(2, EMBED_DIM)).astype(np.float32))
        z3d = ad.Tensor(np.zeros((2, EMBED_DIM), dtype=np.float32))
        ext, alpha = fusion.geometry_gate(store, z, z3d)
        assert ext.shape == (2, 2 * EMBED_DIM)
        assert np.all(ext.data[:, EMBED_DIM:] == 0.0)
        assert np.all((alpha.data > 0) & (alpha.data < 1))

    def test_output_len_1024(self, cfg):
        store = ParamStore(seed=0)
        rng = np.random.default_rng(10)
        ext, _ = fusion.geometry_gate(
            store,
            ad.Tensor(rng.normal(size=(3, EMBED_DIM)).astype(np.float32)),
            ad.Tensor(rng.normal(size=(3, EMBED_DIM)).astype(np.float32)),
        )
        assert ext.shape == (3, 1024)


class TestUnify:
    def test_width_and_determinism(self, cfg):
        store = ParamStore(seed=0)
        rng1 = np.random.default_rng(11)
        ext = ad.Tensor(rng1.normal(size=(2, 1024)).astype(np.float32))
        ze = ad.Tensor(rng1.normal(size=(2, EMBED_DIM)).astype(np.float32))
        zd = ad.Tensor(rng1.normal(size=(2, EMBED_DIM)).astype(np.float32))
        u1 = fusion.unify(store, cfg, ext, ze, zd, train=False, rng=np.random.default_rng(0))
        u2 = fusion.unify(store, cfg, ext, ze, zd, train=False, rng=np.random.default_rng(99))
        assert u1.shape == (2, EMBED_DIM)
        assert np.array_equal(u1.data, u2.data)

    def test_gradient_reaches_all_inputs(self, cfg):
        store = ParamStore(seed=3, dtype=np.float64)
        rng = np.random.default_rng(12)
        ext = ad.Tensor(rng.normal(size=(1, 1024)), requires_grad=True)
        ze = ad.Tensor(rng.normal(size=(1, EMBED_DIM)), requires_grad=True)
        zd = ad.Tensor(rng.normal(size=(1, EMBED_DIM)), requires_grad=True)
        with ad.Tape() as tape:
            u = fusion.unify(store, cfg, ext, ze, zd, train=False, rng=np.random.default_rng(0))
            loss = ad.sum_all(ad.mul(u, u))
        gs = ad.grads_of(tape, loss, [ext, ze, zd])
        for g in gs:
            assert np.abs(g).max() > 0
