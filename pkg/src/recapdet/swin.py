"""Hierarchical shifted-window transformer for two-class image classification.

Token grids are tensors shaped ``(N, h, w, c)``. Windows are tensors shaped
``(N * n_windows, M * M, c)`` in raster order over the grid.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from recapdet import functional as F
from recapdet.errors import ConfigError
from recapdet.tensor import Tensor


@dataclass(frozen=True)
class SwinConfig:
    input_size: int = 64
    patch_size: int = 4
    embed_dim: int = 32
    depths: tuple = (2, 2, 2, 2)
    num_heads: tuple = (2, 4, 8, 16)
    window_size: int = 4
    use_attention_bias: bool = False
    num_classes: int = 2
    mlp_ratio: int = 4
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        object.__setattr__(self, "num_heads", tuple(int(h) for h in self.num_heads))
        problems = self.problems()
        if problems:
            raise ConfigError("invalid SwinConfig: " + "; ".join(problems), problems)

    def problems(self) -> list:
        out = []
        if self.num_classes != 2:
            out.append("num_classes must be 2")
        if len(self.depths) != len(self.num_heads):
            out.append("depths and num_heads must have the same length")
        if any(d <= 0 or d % 2 for d in self.depths):
            out.append(f"depths must be positive and even, got {self.depths}")
        if min(self.patch_size, self.embed_dim, self.window_size, self.mlp_ratio, self.input_size) <= 0:
            out.append("sizes must be positive")
            return out
        if self.input_size % self.patch_size:
            out.append(f"input_size {self.input_size} not divisible by patch_size {self.patch_size}")
            return out
        for s in range(len(self.depths)):
            side = self.input_size // self.patch_size
            if side % (2 ** s):
                out.append(f"stage {s}: token grid cannot be halved {s} times")
                break
            side //= 2 ** s
            win = min(self.window_size, side)
            if side % win:
                out.append(f"stage {s}: grid {side} is not a multiple of window {win}")
            c = self.embed_dim * 2 ** s
            if self.num_heads[s] <= 0 or c % self.num_heads[s]:
                out.append(f"stage {s}: {self.num_heads[s]} heads do not divide {c} channels")
        return out

    @property
    def num_stages(self) -> int:
        return len(self.depths)

    def stage_side(self, s: int) -> int:
        return self.input_size // (self.patch_size * 2 ** s)

    def stage_channels(self, s: int) -> int:
        return self.embed_dim * 2 ** s

    def stage_window(self, s: int) -> int:
        # Grids smaller than the window use one window covering the whole grid.
        return min(self.window_size, self.stage_side(s))

    def stage_shift(self, s: int) -> int:
        if self.stage_side(s) <= self.window_size:
            return 0
        return self.window_size // 2

    @property
    def feature_dim(self) -> int:
        return self.stage_channels(self.num_stages - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depths"] = list(self.depths)
        d["num_heads"] = list(self.num_heads)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SwinConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}", [f"unknown key model.{k}" for k in sorted(unknown)])
        return cls(**d)


# -- parameters -------------------------------------------------------------------

def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * std


def param_shapes(cfg: SwinConfig) -> dict:
    """Name -> shape for every parameter; a pure function of the config."""
    shapes = {}
    p3 = cfg.patch_size * cfg.patch_size * 3
    c0 = cfg.embed_dim
    shapes["patch_embed.weight"] = (p3, c0)
    shapes["patch_embed.bias"] = (c0,)
    for s in range(cfg.num_stages):
        c = cfg.stage_channels(s)
        hidden = c * cfg.mlp_ratio
        m = cfg.stage_window(s)
        for b in range(cfg.depths[s]):
            pre = f"stages.{s}.blocks.{b}."
            shapes[pre + "norm1.weight"] = (c,)
            shapes[pre + "norm1.bias"] = (c,)
            shapes[pre + "attn.qkv.weight"] = (c, 3 * c)
            shapes[pre + "attn.qkv.bias"] = (3 * c,)
            if cfg.use_attention_bias:
                shapes[pre + "attn.rel_bias"] = ((2 * m - 1) ** 2, cfg.num_heads[s])
            shapes[pre + "attn.proj.weight"] = (c, c)
            shapes[pre + "attn.proj.bias"] = (c,)
            shapes[pre + "norm2.weight"] = (c,)
            shapes[pre + "norm2.bias"] = (c,)
            shapes[pre + "mlp.fc1.weight"] = (c, hidden)
            shapes[pre + "mlp.fc1.bias"] = (hidden,)
            shapes[pre + "mlp.fc2.weight"] = (hidden, c)
            shapes[pre + "mlp.fc2.bias"] = (c,)
        if s < cfg.num_stages - 1:
            shapes[f"stages.{s}.merge.weight"] = (4 * c, 2 * c)
    f = cfg.feature_dim
    shapes["norm.weight"] = (f,)
    shapes["norm.bias"] = (f,)
    shapes["head.weight"] = (f, cfg.num_classes)
    shapes["head.bias"] = (cfg.num_classes,)
    return shapes


def count_params(cfg: SwinConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


def init_params(cfg: SwinConfig, seed: int = 0, dtype=np.float32, std: float = 0.02) -> dict:
    """Truncated-normal projections, zero biases and LN offsets, unit LN gains."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith("norm1.weight") or name.endswith("norm2.weight") or name == "norm.weight":
            arr = np.ones(shape)
        elif name.endswith(".bias"):
            arr = np.zeros(shape)
        else:
            arr = _trunc_normal(rng, shape, std)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True)
    return params


# -- token-grid operations ------------------------------------------------------------

def patch_embed(images, cfg: SwinConfig, params: dict) -> Tensor:
    """Split (N, H, W, 3) images into P x P patches and project each to C channels.

    The raw patch vector is flattened in (row, column, channel) order, so its
    length is ``P * P * 3``.
    """
    x = images.data if isinstance(images, Tensor) else np.asarray(images)
    if x.ndim == 3:
        x = x[None]
    n, h, w, ch = x.shape
    p = cfg.patch_size
    if h % p or w % p:
        raise ConfigError(f"image {h}x{w} is not divisible by patch size {p}")
    if ch != 3:
        raise ConfigError(f"expected 3 channels, got {ch}")
    weight = params["patch_embed.weight"]
    x = x.astype(weight.dtype, copy=False)
    raw = x.reshape(n, h // p, p, w // p, p, ch).transpose(0, 1, 3, 2, 4, 5).reshape(n, h // p, w // p, p * p * ch)
    return F.linear(Tensor(raw), weight, params["patch_embed.bias"])


def window_partition(x: Tensor, m: int) -> Tensor:
    n, h, w, c = x.shape
    if h % m or w % m:
        raise ConfigError(f"grid {h}x{w} is not divisible by window size {m}")
    y = F.reshape(x, (n, h // m, m, w // m, m, c))
    y = F.transpose(y, (0, 1, 3, 2, 4, 5))
    return F.reshape(y, (n * (h // m) * (w // m), m * m, c))


def window_reverse(windows: Tensor, m: int, h: int, w: int) -> Tensor:
    c = windows.shape[-1]
    n = windows.shape[0] // ((h // m) * (w // m))
    y = F.reshape(windows, (n, h // m, w // m, m, m, c))
    y = F.transpose(y, (0, 1, 3, 2, 4, 5))
    return F.reshape(y, (n, h, w, c))


def cyclic_shift(x: Tensor, shift: int) -> Tensor:
    """Roll the grid by (-shift, -shift) on the torus; undo with ``-shift``."""
    if shift == 0:
        return x
    return F.roll(x, (-shift, -shift), (1, 2))


@lru_cache(maxsize=None)
def shift_mask(h: int, w: int, m: int, shift: int) -> np.ndarray | None:
    """Additive (n_windows, M*M, M*M) mask: 0 where two tokens may attend, -inf otherwise.

    After rolling by ``-shift``, a window may contain tokens from up to four
    regions of the unrolled grid; tokens attend only within their own region.
    """
    if shift == 0:
        return None
    region = np.zeros((h, w), dtype=np.int64)
    label = 0
    for rs in (slice(0, h - m), slice(h - m, h - shift), slice(h - shift, h)):
        for cs in (slice(0, w - m), slice(w - m, w - shift), slice(w - shift, w)):
            region[rs, cs] = label
            label += 1
    win = region.reshape(h // m, m, w // m, m).transpose(0, 2, 1, 3).reshape(-1, m * m)
    same = win[:, :, None] == win[:, None, :]
    mask = np.where(same, 0.0, -np.inf)
    mask.setflags(write=False)
    return mask


@lru_cache(maxsize=None)
def relative_position_index(m: int) -> np.ndarray:
    coords = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (m - 1)
    idx = rel[0] * (2 * m - 1) + rel[1]
    idx.setflags(write=False)
    return idx


def window_attention(
    windows: Tensor,
    params: dict,
    prefix: str,
    heads: int,
    mask: np.ndarray | None = None,
    return_weights: bool = False,
):
    """Multi-head attention inside each window: softmax(Q K^T / sqrt(d_k)) V.

    ``mask`` (n_windows, L, L) is added to the attention logits of windows
    from each image in turn. Returns the projected window outputs, plus the
    attention probabilities as an array of shape (B, heads, L, L) when
    ``return_weights`` is set.
    """
    b, length, c = windows.shape
    if c % heads:
        raise ConfigError(f"{heads} heads do not divide {c} channels")
    d = c // heads
    qkv = F.linear(windows, params[prefix + "qkv.weight"], params[prefix + "qkv.bias"])
    qkv = F.transpose(F.reshape(qkv, (b, length, 3, heads, d)), (2, 0, 3, 1, 4))
    q = F.mul(qkv[0], float(d) ** -0.5)
    k = qkv[1]
    v = qkv[2]
    logits = F.matmul(q, F.transpose(k, (0, 1, 3, 2)))
    bias_name = prefix + "rel_bias"
    if bias_name in params:
        m = int(round(length ** 0.5))
        table = params[bias_name]
        bias = F.take(table, relative_position_index(m), axis=0)
        logits = F.add(logits, F.transpose(bias, (2, 0, 1)))
    if mask is not None:
        nw = mask.shape[0]
        logits = F.reshape(logits, (b // nw, nw, heads, length, length))
        logits = F.add(logits, mask[None, :, None].astype(logits.dtype))
        logits = F.reshape(logits, (b, heads, length, length))
    attn = F.softmax(logits, axis=-1)
    out = F.matmul(attn, v)
    out = F.reshape(F.transpose(out, (0, 2, 1, 3)), (b, length, c))
    out = F.linear(out, params[prefix + "proj.weight"], params[prefix + "proj.bias"])
    if return_weights:
        return out, attn.data
    return out


def swin_block(
    x: Tensor,
    params: dict,
    prefix: str,
    heads: int,
    window: int,
    shift: int = 0,
    eps: float = 1e-5,
    return_weights: bool = False,
):
    """Pre-norm residual block: x + Attn(LN(x)), then x + MLP(LN(x)).

    A non-zero ``shift`` rolls the grid before windowing, masks attention
    across the wrapped boundaries, and rolls back afterwards.
    """
    n, h, w, c = x.shape
    y = F.layer_norm(x, params[prefix + "norm1.weight"], params[prefix + "norm1.bias"], eps)
    y = cyclic_shift(y, shift)
    windows = window_partition(y, window)
    mask = shift_mask(h, w, window, shift)
    res = window_attention(windows, params, prefix + "attn.", heads, mask, return_weights)
    if return_weights:
        res, weights = res
    y = window_reverse(res, window, h, w)
    y = cyclic_shift(y, -shift)
    x = F.add(x, y)
    z = F.layer_norm(x, params[prefix + "norm2.weight"], params[prefix + "norm2.bias"], eps)
    z = F.gelu(F.linear(z, params[prefix + "mlp.fc1.weight"], params[prefix + "mlp.fc1.bias"]))
    z = F.linear(z, params[prefix + "mlp.fc2.weight"], params[prefix + "mlp.fc2.bias"])
    x = F.add(x, z)
    if return_weights:
        return x, weights
    return x


def gather_2x2(x: Tensor) -> Tensor:
    """(N, h, w, c) -> (N, h/2, w/2, 4c), neighbours ordered TL, TR, BL, BR."""
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ConfigError(f"patch merging needs even grid extents, got {h}x{w}")
    y = F.reshape(x, (n, h // 2, 2, w // 2, 2, c))
    y = F.transpose(y, (0, 1, 3, 2, 4, 5))
    return F.reshape(y, (n, h // 2, w // 2, 4 * c))


def patch_merging(x: Tensor, weight: Tensor) -> Tensor:
    return F.linear(gather_2x2(x), weight)


# -- model --------------------------------------------------------------------------

@dataclass
class SwinClassifier:
    cfg: SwinConfig = field(default_factory=SwinConfig)
    params: dict | None = None
    seed: int = 0
    dtype: type = np.float32

    def __post_init__(self):
        if self.params is None:
            self.params = init_params(self.cfg, self.seed, self.dtype)
        expected = param_shapes(self.cfg)
        if set(expected) != set(self.params):
            raise ConfigError("parameter names do not match the config")
        for k, shape in expected.items():
            if self.params[k].shape != shape:
                raise ConfigError(f"parameter {k} has shape {self.params[k].shape}, expected {shape}")

    def parameters(self) -> list:
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def stages(self, images, return_grids: bool = False):
        """Run embedding and all stages; returns the final token grid (and every stage grid)."""
        cfg = self.cfg
        imgs = np.asarray(images.data if isinstance(images, Tensor) else images)
        if imgs.ndim == 3:
            imgs = imgs[None]
        if imgs.shape[1] != cfg.input_size or imgs.shape[2] != cfg.input_size:
            raise ConfigError(f"image {imgs.shape[1]}x{imgs.shape[2]} does not match input_size {cfg.input_size}")
        x = patch_embed(imgs, cfg, self.params)
        grids = []
        for s in range(cfg.num_stages):
            if s > 0:
                x = patch_merging(x, self.params[f"stages.{s - 1}.merge.weight"])
            win, shift = cfg.stage_window(s), cfg.stage_shift(s)
            for b in range(cfg.depths[s]):
                x = swin_block(x, self.params, f"stages.{s}.blocks.{b}.", cfg.num_heads[s], win,
                               shift if b % 2 else 0, cfg.layer_norm_eps)
            grids.append(x)
        return (x, grids) if return_grids else x

    def extract_features(self, images) -> Tensor:
        """Pooled pre-head representation, shape (N, 8C) for four stages."""
        x = self.stages(images)
        x = F.layer_norm(x, self.params["norm.weight"], self.params["norm.bias"], self.cfg.layer_norm_eps)
        return F.mean(x, axis=(1, 2))

    def head(self, features: Tensor) -> Tensor:
        return F.linear(features, self.params["head.weight"], self.params["head.bias"])

    def forward(self, images) -> Tensor:
        """Logits of shape (N, 2); a single (H, W, 3) image gives shape (2,)."""
        single = np.ndim(images.data if isinstance(images, Tensor) else images) == 3
        logits = self.head(self.extract_features(images))
        return F.reshape(logits, (self.cfg.num_classes,)) if single else logits

    __call__ = forward

    def predict_proba(self, images, batch_size: int = 64) -> np.ndarray:
        """Softmax class probabilities (N, 2) without recording a graph."""
        from recapdet.tensor import no_grad

        imgs = np.asarray(images)
        out = []
        with no_grad():
            for i in range(0, len(imgs), batch_size):
                out.append(F.softmax(self.forward(imgs[i:i + batch_size]), axis=-1).data)
        return np.concatenate(out) if out else np.zeros((0, self.cfg.num_classes))
