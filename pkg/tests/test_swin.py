import itertools

import mpmath
import numpy as np
import pytest

from recapdet import functional as F
from recapdet.checkpoint import load_checkpoint, save_checkpoint
from recapdet.errors import CheckpointError, ConfigError
from recapdet.gradcheck import check_gradients
from recapdet.swin import (
    SwinClassifier,
    SwinConfig,
    count_params,
    cyclic_shift,
    gather_2x2,
    init_params,
    patch_embed,
    patch_merging,
    shift_mask,
    swin_block,
    window_attention,
    window_partition,
    window_reverse,
)
from recapdet.tensor import Tensor

TOY = SwinConfig()


def labeled_grid(h, w, c=1):
    """Grid whose channel 0 holds the raster index of each token."""
    g = np.zeros((1, h, w, c))
    g[0, :, :, 0] = np.arange(h * w).reshape(h, w)
    return Tensor(g)


def small_params(c, heads, window, rng, std=0.3, bias=False):
    p = {}
    pre = "b."
    p[pre + "norm1.weight"] = Tensor(1 + 0.1 * rng.standard_normal(c), requires_grad=True)
    p[pre + "norm1.bias"] = Tensor(0.1 * rng.standard_normal(c), requires_grad=True)
    p[pre + "attn.qkv.weight"] = Tensor(std * rng.standard_normal((c, 3 * c)), requires_grad=True)
    p[pre + "attn.qkv.bias"] = Tensor(std * rng.standard_normal(3 * c), requires_grad=True)
    p[pre + "attn.proj.weight"] = Tensor(std * rng.standard_normal((c, c)), requires_grad=True)
    p[pre + "attn.proj.bias"] = Tensor(std * rng.standard_normal(c), requires_grad=True)
    if bias:
        p[pre + "attn.rel_bias"] = Tensor(std * rng.standard_normal(((2 * window - 1) ** 2, heads)), requires_grad=True)
    p[pre + "norm2.weight"] = Tensor(1 + 0.1 * rng.standard_normal(c), requires_grad=True)
    p[pre + "norm2.bias"] = Tensor(0.1 * rng.standard_normal(c), requires_grad=True)
    p[pre + "mlp.fc1.weight"] = Tensor(std * rng.standard_normal((c, 4 * c)), requires_grad=True)
    p[pre + "mlp.fc1.bias"] = Tensor(std * rng.standard_normal(4 * c), requires_grad=True)
    p[pre + "mlp.fc2.weight"] = Tensor(std * rng.standard_normal((4 * c, c)), requires_grad=True)
    p[pre + "mlp.fc2.bias"] = Tensor(std * rng.standard_normal(c), requires_grad=True)
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(7)


class TestConfig:
    def test_toy_progression(self):
        assert [TOY.stage_side(s) for s in range(4)] == [16, 8, 4, 2]
        assert [TOY.stage_channels(s) for s in range(4)] == [32, 64, 128, 256]

    def test_rejects_odd_depth(self):
        with pytest.raises(ConfigError):
            SwinConfig(depths=(2, 3, 2, 2))

    def test_rejects_head_divisibility(self):
        with pytest.raises(ConfigError):
            SwinConfig(num_heads=(3, 4, 8, 16))

    def test_rejects_grid_not_multiple_of_window(self):
        with pytest.raises(ConfigError):
            SwinConfig(input_size=48, window_size=5)

    def test_param_count_golden(self):
        # patch 4*4*3*32+32; per block 12c^2+13c; merges 8c^2; final LN 2*256; head 256*2+2
        blocks = sum(2 * (12 * c * c + 13 * c) for c in (32, 64, 128, 256))
        golden = 1568 + blocks + 8 * (32 ** 2 + 64 ** 2 + 128 ** 2) + 512 + 514
        assert golden == 2276066
        assert count_params(TOY) == golden
        # relative bias: (2M-1)^2 * heads per block, M clamps to 2 at the 2x2 stage
        assert count_params(SwinConfig(use_attention_bias=True)) == golden + 2 * (49 * 2 + 49 * 4 + 49 * 8 + 9 * 16)


class TestPatchEmbed:
    def test_raw_dim_p8(self):
        cfg = SwinConfig(input_size=64, patch_size=8, depths=(2, 2, 2), num_heads=(2, 4, 8), window_size=2)
        assert init_params(cfg)["patch_embed.weight"].shape[0] == 8 * 8 * 3 == 192

    def test_grid_p4(self, rng):
        tokens = patch_embed(rng.random((64, 64, 3)), TOY, init_params(TOY))
        assert tokens.shape == (1, 16, 16, 32)

    def test_zero_image(self):
        tokens = patch_embed(np.zeros((1, 64, 64, 3)), TOY, init_params(TOY))
        assert not tokens.data.any()

    def test_non_divisible(self):
        with pytest.raises(ConfigError):
            patch_embed(np.zeros((1, 62, 62, 3)), TOY, init_params(TOY))

    def test_patch_vector_order(self):
        cfg = SwinConfig(input_size=8, patch_size=4, embed_dim=4, depths=(2,), num_heads=(1,), window_size=2)
        params = init_params(cfg)
        params["patch_embed.weight"].data[:] = 0
        params["patch_embed.weight"].data[:4, :4] = np.eye(4)
        img = np.arange(8 * 8 * 3, dtype=np.float32).reshape(8, 8, 3)
        tokens = patch_embed(img, cfg, params).data
        # token (1, 0) starts at pixel (4, 0): channels r, g, b of that pixel then pixel (4, 1) red
        np.testing.assert_array_equal(tokens[0, 1, 0], [img[4, 0, 0], img[4, 0, 1], img[4, 0, 2], img[4, 1, 0]])


class TestWindows:
    def test_single_window_raster(self):
        win = window_partition(labeled_grid(4, 4), 4)
        assert win.shape == (1, 16, 1)
        np.testing.assert_array_equal(win.data[0, :, 0], np.arange(16))

    def test_round_trip(self, rng):
        g = Tensor(rng.standard_normal((2, 8, 8, 3)))
        win = window_partition(g, 4)
        assert win.shape == (8, 16, 3)
        np.testing.assert_array_equal(window_reverse(win, 4, 8, 8).data, g.data)

    def test_token_location_oracle(self):
        win = window_partition(labeled_grid(8, 8), 4).data[:, :, 0]
        r, c, m = 5, 2, 4
        w_idx = (r // m) * (8 // m) + c // m
        pos = (r % m) * m + c % m
        assert (w_idx, divmod(pos, m)) == (2, (1, 2))
        assert win[w_idx, pos] == r * 8 + c

    def test_non_divisible(self):
        with pytest.raises(ConfigError):
            window_partition(labeled_grid(6, 6), 4)


class TestCyclicShift:
    def test_zero_is_identity(self, rng):
        g = Tensor(rng.standard_normal((1, 4, 4, 2)))
        assert cyclic_shift(g, 0) is g

    def test_inverse(self, rng):
        g = Tensor(rng.standard_normal((2, 8, 8, 3)))
        np.testing.assert_array_equal(cyclic_shift(cyclic_shift(g, 2), -2).data, g.data)

    def test_modular_oracle(self):
        h = w = 4
        s = 2
        out = cyclic_shift(labeled_grid(h, w), s).data[0, :, :, 0]
        for r, c in itertools.product(range(h), range(w)):
            assert out[r, c] == ((r + s) % h) * w + (c + s) % w


class TestPatchMerging:
    def test_gather_order_oracle(self):
        g = labeled_grid(4, 4)
        out = gather_2x2(g).data[0]
        for i, j in itertools.product(range(2), range(2)):
            expected = [(2 * i + di) * 4 + (2 * j + dj) for di, dj in ((0, 0), (0, 1), (1, 0), (1, 1))]
            np.testing.assert_array_equal(out[i, j], expected)

    def test_shape(self, rng):
        c = 6
        out = patch_merging(Tensor(rng.standard_normal((1, 8, 8, c))), Tensor(rng.standard_normal((4 * c, 2 * c))))
        assert out.shape == (1, 4, 4, 2 * c)

    def test_constant_grid(self):
        c = 3
        w = np.vstack([np.eye(c, 2 * c)] * 4) / 4
        g = Tensor(np.broadcast_to(np.array([1.0, 2.0, 3.0]), (1, 4, 4, c)).copy())
        out = patch_merging(g, Tensor(w)).data
        np.testing.assert_allclose(out, np.broadcast_to(out[0, 0, 0], out.shape))

    def test_odd_rejected(self):
        with pytest.raises(ConfigError):
            gather_2x2(Tensor(np.zeros((1, 3, 4, 2))))


def dense_attention_oracle(q, k, v):
    mpmath.mp.dps = 40
    n, d = q.shape
    out = np.zeros_like(v)
    for i in range(n):
        logits = [mpmath.fsum(mpmath.mpf(float(q[i, t])) * mpmath.mpf(float(k[j, t])) for t in range(d))
                  / mpmath.sqrt(d) for j in range(n)]
        mx = max(logits)
        e = [mpmath.exp(x - mx) for x in logits]
        z = mpmath.fsum(e)
        for t in range(v.shape[1]):
            out[i, t] = float(mpmath.fsum(e[j] / z * mpmath.mpf(float(v[j, t])) for j in range(n)))
    return out


def identity_attn_params(c, rng, wq=None, wk=None, wv=None):
    wq = rng.standard_normal((c, c)) if wq is None else wq
    wk = rng.standard_normal((c, c)) if wk is None else wk
    wv = rng.standard_normal((c, c)) if wv is None else wv
    return {
        "a.qkv.weight": Tensor(np.hstack([wq, wk, wv])),
        "a.qkv.bias": Tensor(np.zeros(3 * c)),
        "a.proj.weight": Tensor(np.eye(c)),
        "a.proj.bias": Tensor(np.zeros(c)),
    }


class TestWindowAttention:
    def test_zero_qk_gives_mean_of_v(self, rng):
        c = 4
        x = rng.standard_normal((3, 16, c))
        wv = rng.standard_normal((c, c))
        p = identity_attn_params(c, rng, wq=np.zeros((c, c)), wk=np.zeros((c, c)), wv=wv)
        out = window_attention(Tensor(x), p, "a.", heads=2).data
        v = x @ wv
        np.testing.assert_allclose(out, np.broadcast_to(v.mean(axis=1, keepdims=True), out.shape), atol=1e-12)

    def test_single_token_window(self, rng):
        c = 4
        x = rng.standard_normal((5, 1, c))
        wv = rng.standard_normal((c, c))
        p = identity_attn_params(c, rng, wv=wv)
        np.testing.assert_allclose(window_attention(Tensor(x), p, "a.", heads=1).data, x @ wv, atol=1e-12)

    def test_dense_oracle(self, rng):
        c = 3
        x = rng.standard_normal((1, 4, c))
        p = identity_attn_params(c, rng)
        w = p["a.qkv.weight"].data
        q, k, v = x[0] @ w[:, :c], x[0] @ w[:, c:2 * c], x[0] @ w[:, 2 * c:]
        out = window_attention(Tensor(x), p, "a.", heads=1).data[0]
        np.testing.assert_allclose(out, dense_attention_oracle(q, k, v), atol=1e-6)

    def test_head_divisibility(self, rng):
        with pytest.raises(ConfigError):
            window_attention(Tensor(rng.standard_normal((1, 4, 5))), identity_attn_params(5, rng), "a.", heads=2)

    def test_permutation_equivariance(self, rng):
        c = 4
        x = rng.standard_normal((2, 9, c))
        p = identity_attn_params(c, rng)
        perm = rng.permutation(9)
        out = window_attention(Tensor(x), p, "a.", heads=2).data
        out_p = window_attention(Tensor(x[:, perm]), p, "a.", heads=2).data
        np.testing.assert_allclose(out_p, out[:, perm], atol=1e-12)

    def test_grads_with_mask_and_bias(self, rng):
        c, heads, m = 4, 2, 4
        p = small_params(c, heads, m, rng, bias=True)
        attn_p = {k[2:]: v for k, v in p.items() if k.startswith("b.attn.")}
        x = Tensor(rng.standard_normal((4, 16, c)), requires_grad=True)
        mask = shift_mask(8, 8, m, 2)
        w = rng.standard_normal((4, 16, c))
        res = check_gradients(lambda: F.sum(F.mul(window_attention(x, attn_p, "attn.", heads, mask), w)),
                              [x] + list(attn_p.values()))
        assert res["max_rel_error"] < 1e-4


def brute_force_allowed(h, w, m, s):
    """allowed[win, i, j]: tokens i, j of a rolled window were true neighbours before rolling.

    After rolling by -s, rolled position (r, c) holds original token
    ((r + s) mod h, (c + s) mod w). Two tokens in a rolled window are genuine
    neighbours when their original offset equals their rolled offset, i.e. no
    wrap-around separates them.
    """
    n_w = (h // m) * (w // m)
    allowed = np.zeros((n_w, m * m, m * m), dtype=bool)
    for wr, wc in itertools.product(range(h // m), range(w // m)):
        cells = [(wr * m + a, wc * m + b) for a in range(m) for b in range(m)]
        for i, (ri, ci) in enumerate(cells):
            for j, (rj, cj) in enumerate(cells):
                oi = ((ri + s) % h, (ci + s) % w)
                oj = ((rj + s) % h, (cj + s) % w)
                allowed[wr * (w // m) + wc, i, j] = (oi[0] - oj[0] == ri - rj) and (oi[1] - oj[1] == ci - cj)
    return allowed


class TestShiftedWindows:
    def test_mask_matches_brute_force(self):
        allowed = brute_force_allowed(8, 8, 4, 2)
        mask = shift_mask(8, 8, 4, 2)
        np.testing.assert_array_equal(mask == 0, allowed)

    def test_masked_weights_are_exactly_zero(self, rng):
        c, heads = 8, 2
        p = small_params(c, heads, 4, rng, std=1.0)
        x = Tensor(rng.standard_normal((2, 8, 8, c)))
        _, weights = swin_block(x, p, "b.", heads, window=4, shift=2, return_weights=True)
        allowed = brute_force_allowed(8, 8, 4, 2)
        allowed = np.tile(allowed, (2, 1, 1))[:, None]
        assert weights.shape == (8, heads, 16, 16)
        assert np.all(weights[np.broadcast_to(~allowed, weights.shape)] == 0.0)
        assert np.all(weights[np.broadcast_to(allowed, weights.shape)] > 0.0)

    def test_shift_zero_equals_unshifted_bitwise(self, rng):
        c, heads = 8, 2
        p = small_params(c, heads, 4, rng)
        x = Tensor(rng.standard_normal((2, 8, 8, c)))
        a = swin_block(x, p, "b.", heads, window=4, shift=0).data
        windows = window_partition(F.layer_norm(x, p["b.norm1.weight"], p["b.norm1.bias"]), 4)
        assert shift_mask(8, 8, 4, 0) is None
        w_msa = window_attention(windows, p, "b.attn.", heads, None)
        y = F.add(x, window_reverse(w_msa, 4, 8, 8))
        z = F.linear(F.gelu(F.linear(F.layer_norm(y, p["b.norm2.weight"], p["b.norm2.bias"]),
                                     p["b.mlp.fc1.weight"], p["b.mlp.fc1.bias"])),
                     p["b.mlp.fc2.weight"], p["b.mlp.fc2.bias"])
        assert np.array_equal(a, F.add(y, z).data)

    def test_zero_output_projections_give_identity(self, rng):
        c, heads = 8, 2
        p = small_params(c, heads, 4, rng)
        for k in ("b.attn.proj.weight", "b.attn.proj.bias", "b.mlp.fc2.weight", "b.mlp.fc2.bias"):
            p[k].data[:] = 0
        x = Tensor(rng.standard_normal((1, 8, 8, c)))
        for shift in (0, 2):
            np.testing.assert_array_equal(swin_block(x, p, "b.", heads, 4, shift).data, x.data)

    def test_block_grads(self, rng):
        c, heads = 4, 2
        p = small_params(c, heads, 4, rng, bias=True)
        x = Tensor(rng.standard_normal((1, 8, 8, c)), requires_grad=True)
        w = rng.standard_normal((1, 8, 8, c))
        res = check_gradients(lambda: F.sum(F.mul(swin_block(x, p, "b.", heads, 4, 2), w)),
                              [x] + list(p.values()), n_samples=150, rng=rng)
        assert res["max_rel_error"] < 1e-4


CONFIGS = [
    SwinConfig(),
    SwinConfig(input_size=32, patch_size=2, embed_dim=8, depths=(2, 2, 2, 2), num_heads=(1, 2, 2, 4), window_size=4),
    SwinConfig(input_size=32, patch_size=4, embed_dim=12, depths=(2, 4), num_heads=(3, 6), window_size=2),
    SwinConfig(input_size=48, patch_size=4, embed_dim=8, depths=(2, 2), num_heads=(2, 2), window_size=3,
               use_attention_bias=True),
]


class TestForward:
    @pytest.mark.parametrize("cfg", CONFIGS, ids=lambda c: f"{c.input_size}-{c.patch_size}-{c.embed_dim}-{c.window_size}")
    def test_shapes_for_configs(self, cfg, rng):
        model = SwinClassifier(cfg, seed=1)
        x, grids = model.stages(rng.random((2, cfg.input_size, cfg.input_size, 3)), return_grids=True)
        for s, g in enumerate(grids):
            side = cfg.input_size // (cfg.patch_size * 2 ** s)
            assert g.shape == (2, side, side, cfg.embed_dim * 2 ** s)
        assert model.forward(rng.random((cfg.input_size, cfg.input_size, 3))).shape == (2,)
        assert model.extract_features(rng.random((3, cfg.input_size, cfg.input_size, 3))).shape == (3, cfg.feature_dim)

    def test_block_preserves_shape_sweep(self, rng):
        for h, m, c, heads in itertools.product((4, 8), (2, 4), (4, 8), (1, 2)):
            if h % m:
                continue
            p = small_params(c, heads, m, rng)
            x = Tensor(rng.standard_normal((1, h, h, c)))
            for shift in {0, m // 2} if h > m else {0}:
                assert swin_block(x, p, "b.", heads, m, shift).shape == x.shape

    def test_toy_stage_grids(self, rng):
        model = SwinClassifier(TOY)
        _, grids = model.stages(rng.random((1, 64, 64, 3)), return_grids=True)
        assert [g.shape[1:] for g in grids] == [(16, 16, 32), (8, 8, 64), (4, 4, 128), (2, 2, 256)]

    def test_feature_dim_is_8c(self):
        assert TOY.feature_dim == 8 * TOY.embed_dim

    def test_forward_is_head_of_features(self, rng):
        model = SwinClassifier(TOY, seed=3)
        img = rng.random((2, 64, 64, 3)).astype(np.float32)
        assert np.array_equal(model.forward(img).data, model.head(model.extract_features(img)).data)

    def test_identical_images_identical_features(self, rng):
        model = SwinClassifier(TOY, seed=3)
        img = rng.random((64, 64, 3)).astype(np.float32)
        f = model.extract_features(np.stack([img, img])).data
        assert np.array_equal(f[0], f[1])

    def test_wrong_input_size(self, rng):
        with pytest.raises(ConfigError):
            SwinClassifier(TOY).forward(rng.random((32, 32, 3)))

    def test_end_to_end_gradcheck_small(self, rng):
        cfg = CONFIGS[1]
        model = SwinClassifier(cfg, params=init_params(cfg, seed=2, dtype=np.float64, std=0.3), dtype=np.float64)
        x = rng.standard_normal((2, 32, 32, 3))
        y = np.array([0, 1])
        res = check_gradients(lambda: F.cross_entropy(model.forward(x), y), model.parameters(), n_samples=120,
                              rng=rng)
        assert res["max_rel_error"] < 1e-4


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        model = SwinClassifier(TOY, seed=5)
        path = save_checkpoint(tmp_path / "m.ckpt", model, {"note": "x"})
        loaded, extra = load_checkpoint(path, TOY)
        assert extra == {"note": "x"}
        for k, v in model.params.items():
            assert np.array_equal(v.data, loaded.params[k].data)
        img = rng.random((1, 64, 64, 3)).astype(np.float32)
        assert np.array_equal(model.forward(img).data, loaded.forward(img).data)

    def test_payload_is_little_endian_f32(self, tmp_path):
        model = SwinClassifier(CONFIGS[2], seed=5)
        path = save_checkpoint(tmp_path / "m.ckpt", model)
        raw = path.read_bytes()
        n = sum(p.size for p in model.parameters())
        first = model.parameters()[0].data.ravel()
        assert len(raw) >= n * 4
        payload = raw[len(raw) - n * 4:]
        np.testing.assert_array_equal(np.frombuffer(payload, "<f4", count=first.size), first)

    def test_rejects_config_mismatch(self, tmp_path):
        path = save_checkpoint(tmp_path / "m.ckpt", SwinClassifier(CONFIGS[2]))
        with pytest.raises(CheckpointError):
            load_checkpoint(path, SwinConfig())

    def test_rejects_version(self, tmp_path):
        path = save_checkpoint(tmp_path / "m.ckpt", SwinClassifier(CONFIGS[2]))
        raw = bytearray(path.read_bytes())
        raw[8] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)
