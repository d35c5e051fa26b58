"""Desk-scale diffusion transformer with a flow-matching objective.

The model is deliberately tiny (default: 4 blocks, width 64, 16x16 tokens of
2x2 pixels each) so it trains on a single CPU core in minutes, yet it runs
the full resolution-scaling machinery at sampling time: global attention with
scaled positions, overlapping patch-local attention with Gaussian splicing,
and patch-wise spectral fusion, chosen per timestep by a three-phase schedule.

Training regresses the straight-line flow velocity: with data x0, noise eps
and t uniform in [0, 1],

    x_t = (1 - t) * x0 + t * eps,      target = eps - x0,

always in GLOBAL mode at the base resolution. Sampling integrates the learned
velocity with explicit Euler steps from t = 1 down to 0. Gradients are
computed by a hand-written backward pass (verified against central finite
differences in the test suite), and parameters are updated with plain SGD or
Adam. Everything is seeded and single-threaded, so training trajectories,
checkpoints and samples are bit-reproducible.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import grid as gridio
from .attention import AttentionWeights, BranchMode, branched_attention
from .partition import PatchLayout, SpliceConfig, make_layout
from .rope import ScaleFactors, patchwise_indices, rotary_field
from .spectral import FusionConfig


class TrainingDivergedError(RuntimeError):
    """Loss or parameters became non-finite during training."""


class SamplingDivergedError(RuntimeError):
    """The sampler state became non-finite during integration."""


@dataclass(frozen=True)
class ModelConfig:
    model_dim: int = 64
    num_heads: int = 4
    num_blocks: int = 4
    base_h: int = 16        # training token grid
    base_w: int = 16
    patch_px: int = 2       # pixels per token along each axis
    mlp_ratio: int = 4
    rope_base: float = 10000.0
    num_classes: int = 0    # 0 = timestep-only conditioning
    time_scale: float = 1000.0
    dtype: str = "float32"

    def __post_init__(self):
        if self.model_dim % self.num_heads != 0:
            raise ValueError(f"model_dim {self.model_dim} not divisible by {self.num_heads} heads")
        if (self.model_dim // self.num_heads) % 4 != 0:
            raise ValueError("head_dim must be a multiple of 4 for axial rotary embedding")
        if self.model_dim % 2 != 0:
            raise ValueError("model_dim must be even for the sinusoidal timestep embedding")
        if min(self.base_h, self.base_w, self.patch_px, self.num_blocks, self.mlp_ratio) < 1:
            raise ValueError("model dimensions must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    @property
    def token_channels(self) -> int:
        return self.patch_px * self.patch_px

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass(frozen=True)
class SamplerSchedule:
    """Per-timestep branch modes: a Global phase, a Fused phase, a Local phase."""

    modes: tuple[BranchMode, ...]

    @property
    def total_steps(self) -> int:
        return len(self.modes)


def build_schedule(total: int, global_steps: int, local_steps: int) -> SamplerSchedule:
    """Global for the first steps, Local for the last, Fused in between."""
    if total < 1 or global_steps < 0 or local_steps < 0:
        raise ValueError("step counts must be non-negative with total >= 1")
    if global_steps + local_steps > total:
        raise ValueError(
            f"global ({global_steps}) + local ({local_steps}) phases exceed {total} steps"
        )
    mid = total - global_steps - local_steps
    modes = (BranchMode.GLOBAL,) * global_steps + (BranchMode.FUSED,) * mid + (BranchMode.LOCAL,) * local_steps
    return SamplerSchedule(modes=modes)


@dataclass(frozen=True)
class GuidanceConfig:
    scale: float = 3.5
    enabled: bool = False

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError(f"guidance scale must be >= 0, got {self.scale}")


# --- pixel <-> token reshapes -------------------------------------------------


def tokens_from_image(image: np.ndarray, patch_px: int) -> np.ndarray:
    """(H, W) pixels -> (H/p, W/p, p*p) token grid, row-major inside each patch."""
    h, w = image.shape
    if h % patch_px or w % patch_px:
        raise ValueError(f"image {h}x{w} not divisible by patch size {patch_px}")
    ht, wt = h // patch_px, w // patch_px
    x = image.reshape(ht, patch_px, wt, patch_px)
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(ht, wt, patch_px * patch_px)


def image_from_tokens(tokens: np.ndarray, patch_px: int) -> np.ndarray:
    """Inverse of tokens_from_image."""
    ht, wt, c = tokens.shape
    if c != patch_px * patch_px:
        raise ValueError(f"token channels {c} do not match patch size {patch_px}")
    x = tokens.reshape(ht, wt, patch_px, patch_px).transpose(0, 2, 1, 3)
    return np.ascontiguousarray(x).reshape(ht * patch_px, wt * patch_px)


# --- nonlinearity helpers -----------------------------------------------------


def _silu(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s


def _silu_grad(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


# tanh-approximation GELU (the usual transformer MLP nonlinearity)
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def _gelu_tanh(x):
    return np.tanh(_GELU_C * (x + _GELU_A * x * x * x))


def _gelu(x):
    return 0.5 * x * (1.0 + _gelu_tanh(x))


def _gelu_grad_from_tanh(x, th):
    # derivative given th = _gelu_tanh(x), so forward and backward share it
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)


def timestep_embedding(t: np.ndarray, dim: int, time_scale: float, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal features of the (scaled) timestep, shape (B, dim)."""
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = (np.asarray(t, dtype=np.float64) * time_scale)[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=1)


def _layernorm(x, eps=1e-6):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    return xc * rstd, rstd


def _layernorm_bwd(dy, y, rstd):
    mean_dy = dy.mean(axis=-1, keepdims=True)
    mean_dyy = np.mean(dy * y, axis=-1, keepdims=True)
    return rstd * (dy - mean_dy - y * mean_dyy)


def _split_heads(x, num_heads):
    # (B, T, D) -> (B, nh, T, dh)
    b, t, d = x.shape
    return np.ascontiguousarray(x.reshape(b, t, num_heads, d // num_heads).transpose(0, 2, 1, 3))


def _merge_heads(x):
    # (B, nh, T, dh) -> (B, T, D)
    b, nh, t, dh = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(b, t, nh * dh)


def _rope_tables(config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    # flattened (T, head_dim/2) cos/sin tables for the base-resolution grid;
    # pair j < dh/4 rotates by the row angle, the rest by the column angle
    f = rotary_field(patchwise_indices(config.base_h, config.base_w), config.head_dim, config.rope_base)
    t = config.base_h * config.base_w
    q = config.head_dim // 4
    cos = np.concatenate([f.cos_h.reshape(t, q), f.cos_w.reshape(t, q)], axis=1)
    sin = np.concatenate([f.sin_h.reshape(t, q), f.sin_w.reshape(t, q)], axis=1)
    return cos, sin


def _rope_fwd(x, cos, sin):
    # x (B, nh, T, dh); cos/sin (T, dh/2) broadcast over batch and heads
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def _rope_bwd(d, cos, sin):
    # transpose of the rotation: rotate gradients by the negated angles
    de, do = d[..., 0::2], d[..., 1::2]
    out = np.empty_like(d)
    out[..., 0::2] = de * cos + do * sin
    out[..., 1::2] = -de * sin + do * cos
    return out


class ToyDiT:
    """Parameter container plus the forward/backward passes.

    Blocks follow the usual adaLN-zero recipe: the timestep embedding drives
    per-block shift/scale/gate modulation, gates and the output head start at
    zero so the network is the zero function at initialization.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None):
        self.config = config
        if rng is None:
            rng = np.random.default_rng(0)
        d = config.model_dim
        ci = config.token_channels
        m = config.mlp_ratio * d
        dt = config.np_dtype

        def normal(*shape):
            return (rng.standard_normal(shape) * 0.02).astype(dt)

        def zeros(*shape):
            return np.zeros(shape, dtype=dt)

        p: dict[str, np.ndarray] = {}
        p["patchify.w"] = normal(ci, d)
        p["patchify.b"] = zeros(d)
        p["temb.w1"] = normal(d, d)
        p["temb.b1"] = zeros(d)
        p["temb.w2"] = normal(d, d)
        p["temb.b2"] = zeros(d)
        if config.num_classes > 0:
            # one extra row: the null (unconditional) embedding
            p["label.embed"] = normal(config.num_classes + 1, d)
        for i in range(config.num_blocks):
            p[f"block{i}.attn.wq"] = normal(d, d)
            p[f"block{i}.attn.wk"] = normal(d, d)
            p[f"block{i}.attn.wv"] = normal(d, d)
            p[f"block{i}.attn.wo"] = normal(d, d)
            p[f"block{i}.mlp.w1"] = normal(d, m)
            p[f"block{i}.mlp.b1"] = zeros(m)
            p[f"block{i}.mlp.w2"] = normal(m, d)
            p[f"block{i}.mlp.b2"] = zeros(d)
            p[f"block{i}.mod.w"] = zeros(d, 6 * d)
            p[f"block{i}.mod.b"] = zeros(6 * d)
        p["final.mod.w"] = zeros(d, 2 * d)
        p["final.mod.b"] = zeros(2 * d)
        p["final.w"] = zeros(d, ci)
        p["final.b"] = zeros(ci)
        self.params = p
        cos, sin = _rope_tables(config)
        self._rope_cos = cos.astype(dt)
        self._rope_sin = sin.astype(dt)

    # -- conditioning ----------------------------------------------------------

    def _condition(self, t: np.ndarray, labels: np.ndarray | None):
        p = self.params
        dt = self.config.np_dtype
        ts = timestep_embedding(t, self.config.model_dim, self.config.time_scale).astype(dt)
        a1 = ts @ p["temb.w1"] + p["temb.b1"]
        s1 = _silu(a1)
        c = s1 @ p["temb.w2"] + p["temb.b2"]
        if self.config.num_classes > 0:
            if labels is None:
                labels = np.full(len(t), self.config.num_classes, dtype=np.int64)
            c = c + p["label.embed"][labels]
        elif labels is not None:
            raise ValueError("model has no class conditioning but labels were given")
        cs = _silu(c)
        return {"ts": ts, "a1": a1, "s1": s1, "c": c, "cs": cs, "labels": labels}

    # -- batched training forward / backward (GLOBAL mode at base resolution) --

    def _forward_train(self, x_tok: np.ndarray, t: np.ndarray, labels: np.ndarray | None):
        cfg = self.config
        p = self.params
        b, tt, ci = x_tok.shape
        if (tt, ci) != (cfg.base_h * cfg.base_w, cfg.token_channels):
            raise ValueError(f"training tokens must be (B, {cfg.base_h * cfg.base_w}, {cfg.token_channels})")
        nh, dh = cfg.num_heads, cfg.head_dim
        cond = self._condition(t, labels)
        cs = cond["cs"]
        h = x_tok @ p["patchify.w"] + p["patchify.b"]
        blocks = []
        for i in range(cfg.num_blocks):
            mod = cs @ p[f"block{i}.mod.w"] + p[f"block{i}.mod.b"]
            sh1, sc1, g1, sh2, sc2, g2 = np.split(mod, 6, axis=1)
            h_in = h
            y1, rstd1 = _layernorm(h)
            u = y1 * (1.0 + sc1[:, None, :]) + sh1[:, None, :]
            u2d = u.reshape(-1, cfg.model_dim)
            qh = _split_heads((u2d @ p[f"block{i}.attn.wq"]).reshape(b, tt, -1), nh)
            kh = _split_heads((u2d @ p[f"block{i}.attn.wk"]).reshape(b, tt, -1), nh)
            vh = _split_heads((u2d @ p[f"block{i}.attn.wv"]).reshape(b, tt, -1), nh)
            qr = _rope_fwd(qh, self._rope_cos, self._rope_sin)
            kr = _rope_fwd(kh, self._rope_cos, self._rope_sin)
            scores = np.matmul(qr, kr.transpose(0, 1, 3, 2)) / math.sqrt(dh)
            scores -= scores.max(axis=-1, keepdims=True)
            np.exp(scores, out=scores)
            scores /= scores.sum(axis=-1, keepdims=True)
            probs = scores
            om = _merge_heads(np.matmul(probs, vh))
            attn = (om.reshape(-1, cfg.model_dim) @ p[f"block{i}.attn.wo"]).reshape(b, tt, -1)
            h = h_in + g1[:, None, :] * attn
            h_mid = h
            y2, rstd2 = _layernorm(h)
            u2 = y2 * (1.0 + sc2[:, None, :]) + sh2[:, None, :]
            m1 = u2.reshape(-1, cfg.model_dim) @ p[f"block{i}.mlp.w1"] + p[f"block{i}.mlp.b1"]
            th = _gelu_tanh(m1)
            gm = 0.5 * m1 * (1.0 + th)
            m2 = (gm @ p[f"block{i}.mlp.w2"] + p[f"block{i}.mlp.b2"]).reshape(b, tt, -1)
            h = h_mid + g2[:, None, :] * m2
            blocks.append(
                dict(h_in=h_in, y1=y1, rstd1=rstd1, u=u, qr=qr, kr=kr, vh=vh, probs=probs,
                     om=om, attn=attn, h_mid=h_mid, y2=y2, rstd2=rstd2, u2=u2, m1=m1, th=th,
                     gm=gm, m2=m2, sc1=sc1, g1=g1, sc2=sc2, g2=g2)
            )
        modf = cs @ p["final.mod.w"] + p["final.mod.b"]
        shf, scf = np.split(modf, 2, axis=1)
        yf, rstdf = _layernorm(h)
        uf = yf * (1.0 + scf[:, None, :]) + shf[:, None, :]
        out = (uf.reshape(-1, cfg.model_dim) @ p["final.w"] + p["final.b"]).reshape(b, tt, ci)
        cache = dict(x_tok=x_tok, cond=cond, blocks=blocks, yf=yf, rstdf=rstdf, uf=uf, scf=scf)
        return out, cache

    def _backward_train(self, cache: dict, dout: np.ndarray) -> dict[str, np.ndarray]:
        cfg = self.config
        p = self.params
        b, tt, _ = dout.shape
        d = cfg.model_dim
        nh, dh = cfg.num_heads, cfg.head_dim
        cond = cache["cond"]
        cs = cond["cs"]
        grads = {name: np.zeros_like(val) for name, val in p.items()}

        uf = cache["uf"]
        duf2 = dout.reshape(-1, dout.shape[-1]) @ p["final.w"].T
        grads["final.w"] += uf.reshape(-1, d).T @ dout.reshape(-1, dout.shape[-1])
        grads["final.b"] += dout.sum(axis=(0, 1))
        duf = duf2.reshape(b, tt, d)
        yf, scf = cache["yf"], cache["scf"]
        dyf = duf * (1.0 + scf[:, None, :])
        dscf = (duf * yf).sum(axis=1)
        dshf = duf.sum(axis=1)
        dh_ = _layernorm_bwd(dyf, yf, cache["rstdf"])
        dmodf = np.concatenate([dshf, dscf], axis=1)
        grads["final.mod.w"] += cs.T @ dmodf
        grads["final.mod.b"] += dmodf.sum(axis=0)
        dcs = dmodf @ p["final.mod.w"].T

        for i in reversed(range(cfg.num_blocks)):
            bc = cache["blocks"][i]
            # second residual: h = h_mid + g2 * m2
            dg2 = (dh_ * bc["m2"]).sum(axis=1)
            dm2 = dh_ * bc["g2"][:, None, :]
            dm2_2d = dm2.reshape(-1, d)
            grads[f"block{i}.mlp.w2"] += bc["gm"].T @ dm2_2d
            grads[f"block{i}.mlp.b2"] += dm2_2d.sum(axis=0)
            dgm = dm2_2d @ p[f"block{i}.mlp.w2"].T
            dm1 = dgm * _gelu_grad_from_tanh(bc["m1"], bc["th"])
            u2_2d = bc["u2"].reshape(-1, d)
            grads[f"block{i}.mlp.w1"] += u2_2d.T @ dm1
            grads[f"block{i}.mlp.b1"] += dm1.sum(axis=0)
            du2 = (dm1 @ p[f"block{i}.mlp.w1"].T).reshape(b, tt, d)
            dy2 = du2 * (1.0 + bc["sc2"][:, None, :])
            dsc2 = (du2 * bc["y2"]).sum(axis=1)
            dsh2 = du2.sum(axis=1)
            dh_ = dh_ + _layernorm_bwd(dy2, bc["y2"], bc["rstd2"])
            # first residual: h_mid = h_in + g1 * attn
            dg1 = (dh_ * bc["attn"]).sum(axis=1)
            dattn = (dh_ * bc["g1"][:, None, :]).reshape(-1, d)
            grads[f"block{i}.attn.wo"] += bc["om"].reshape(-1, d).T @ dattn
            dom = (dattn @ p[f"block{i}.attn.wo"].T).reshape(b, tt, d)
            do = _split_heads(dom, nh)
            probs, vh, qr, kr = bc["probs"], bc["vh"], bc["qr"], bc["kr"]
            dprobs = np.matmul(do, vh.transpose(0, 1, 3, 2))
            dvh = np.matmul(probs.transpose(0, 1, 3, 2), do)
            dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
            dscores /= math.sqrt(dh)
            dqr = np.matmul(dscores, kr)
            dkr = np.matmul(dscores.transpose(0, 1, 3, 2), qr)
            dq = _merge_heads(_rope_bwd(dqr, self._rope_cos, self._rope_sin)).reshape(-1, d)
            dk = _merge_heads(_rope_bwd(dkr, self._rope_cos, self._rope_sin)).reshape(-1, d)
            dv = _merge_heads(dvh).reshape(-1, d)
            u2d = bc["u"].reshape(-1, d)
            grads[f"block{i}.attn.wq"] += u2d.T @ dq
            grads[f"block{i}.attn.wk"] += u2d.T @ dk
            grads[f"block{i}.attn.wv"] += u2d.T @ dv
            du = (dq @ p[f"block{i}.attn.wq"].T + dk @ p[f"block{i}.attn.wk"].T
                  + dv @ p[f"block{i}.attn.wv"].T).reshape(b, tt, d)
            dy1 = du * (1.0 + bc["sc1"][:, None, :])
            dsc1 = (du * bc["y1"]).sum(axis=1)
            dsh1 = du.sum(axis=1)
            dh_ = dh_ + _layernorm_bwd(dy1, bc["y1"], bc["rstd1"])
            dmod = np.concatenate([dsh1, dsc1, dg1, dsh2, dsc2, dg2], axis=1)
            grads[f"block{i}.mod.w"] += cs.T @ dmod
            grads[f"block{i}.mod.b"] += dmod.sum(axis=0)
            dcs += dmod @ p[f"block{i}.mod.w"].T

        x2d = cache["x_tok"].reshape(-1, cfg.token_channels)
        grads["patchify.w"] += x2d.T @ dh_.reshape(-1, d)
        grads["patchify.b"] += dh_.sum(axis=(0, 1))

        dc = dcs * _silu_grad(cond["c"])
        if cfg.num_classes > 0:
            np.add.at(grads["label.embed"], cond["labels"], dc)
        ds1 = dc @ p["temb.w2"].T
        grads["temb.w2"] += cond["s1"].T @ dc
        grads["temb.b2"] += dc.sum(axis=0)
        da1 = ds1 * _silu_grad(cond["a1"])
        grads["temb.w1"] += cond["ts"].T @ da1
        grads["temb.b1"] += da1.sum(axis=0)
        return grads

    def loss_and_grads(
        self,
        x_t: np.ndarray,
        t: np.ndarray,
        target: np.ndarray,
        labels: np.ndarray | None = None,
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean-squared velocity error and its analytic parameter gradients."""
        out, cache = self._forward_train(x_t, t, labels)
        diff = out - target
        loss = float(np.mean(diff * diff))
        dout = (2.0 / diff.size) * diff
        grads = self._backward_train(cache, dout)
        return loss, grads

    # -- single-grid forward used by the sampler --------------------------------

    def forward(
        self,
        tokens: np.ndarray,
        t: float,
        mode: BranchMode = BranchMode.GLOBAL,
        scale: ScaleFactors | None = None,
        layout: PatchLayout | None = None,
        splice_cfg: SpliceConfig | None = None,
        fusion_cfg: FusionConfig | None = None,
        label: int | None = None,
        splice_mode: str = "gaussian",
        spatial_average: bool = False,
    ) -> np.ndarray:
        """Predicted velocity for one (H, W, token_channels) grid at time t.

        Defaults: positions are scaled from the grid's resolution back to the
        training base (pass an identity ScaleFactors for the vanilla-PE
        ablation), the layout is the minimum-overlap partition into
        base-resolution patches, and sigma is half the patch size.
        """
        cfg = self.config
        p = self.params
        tokens = np.asarray(tokens, dtype=cfg.np_dtype)
        if tokens.ndim != 3 or tokens.shape[2] != cfg.token_channels:
            raise ValueError(f"tokens must be (H, W, {cfg.token_channels}), got {tokens.shape}")
        ht, wt = tokens.shape[:2]
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t must be in [0, 1], got {t}")
        if scale is None:
            scale = ScaleFactors(cfg.base_h, cfg.base_w, ht, wt)
        if layout is None:
            layout = make_layout(ht, wt, min(cfg.base_h, ht), min(cfg.base_w, wt))
        if splice_cfg is None:
            splice_cfg = SpliceConfig.for_patch(layout.patch_h, layout.patch_w)
        if fusion_cfg is None:
            fusion_cfg = FusionConfig()
        labels = None
        if cfg.num_classes > 0:
            idx = cfg.num_classes if label is None else int(label)
            if not 0 <= idx <= cfg.num_classes:
                raise ValueError(f"label {label} out of range for {cfg.num_classes} classes")
            labels = np.array([idx], dtype=np.int64)
        elif label is not None:
            raise ValueError("model has no class conditioning but a label was given")

        cond = self._condition(np.array([t], dtype=np.float64), labels)
        cs = cond["cs"]
        d = cfg.model_dim
        h = (tokens.reshape(-1, cfg.token_channels) @ p["patchify.w"] + p["patchify.b"])
        for i in range(cfg.num_blocks):
            mod = cs @ p[f"block{i}.mod.w"] + p[f"block{i}.mod.b"]
            sh1, sc1, g1, sh2, sc2, g2 = np.split(mod[0], 6)
            y1, _ = _layernorm(h)
            u = y1 * (1.0 + sc1) + sh1
            w = AttentionWeights(
                w_q=p[f"block{i}.attn.wq"], w_k=p[f"block{i}.attn.wk"],
                w_v=p[f"block{i}.attn.wv"], w_o=p[f"block{i}.attn.wo"],
                num_heads=cfg.num_heads,
            )
            attn = branched_attention(
                u.reshape(ht, wt, d), w, mode,
                scale=scale, layout=layout, splice_cfg=splice_cfg, fusion_cfg=fusion_cfg,
                rope_base=cfg.rope_base, splice_mode=splice_mode,
                spatial_average=spatial_average,
            ).reshape(-1, d)
            h = h + g1 * attn
            y2, _ = _layernorm(h)
            u2 = y2 * (1.0 + sc2) + sh2
            m2 = _gelu(u2 @ p[f"block{i}.mlp.w1"] + p[f"block{i}.mlp.b1"]) @ p[f"block{i}.mlp.w2"] + p[f"block{i}.mlp.b2"]
            h = h + g2 * m2
        modf = cs @ p["final.mod.w"] + p["final.mod.b"]
        shf, scf = np.split(modf[0], 2)
        yf, _ = _layernorm(h)
        uf = yf * (1.0 + scf) + shf
        out = uf @ p["final.w"] + p["final.b"]
        return out.reshape(ht, wt, cfg.token_channels)


# --- optimizers -----------------------------------------------------------------


class SGD:
    """Plain stochastic gradient descent with a fixed step size."""

    def __init__(self, params: dict[str, np.ndarray], lr: float):
        self.params = params
        self.lr = lr

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            p -= (self.lr * grads[name]).astype(p.dtype, copy=False)


class Adam:
    """Adam with bias correction; state kept in the parameter dtype."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name].astype(p.dtype, copy=False)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def make_optimizer(params: dict[str, np.ndarray], name: str, lr: float):
    if name == "sgd":
        return SGD(params, lr)
    if name == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer {name!r}")


def train_step(
    model: ToyDiT,
    batch: np.ndarray,
    rng: np.random.Generator,
    optimizer,
    labels: np.ndarray | None = None,
    label_dropout: float = 0.1,
) -> float:
    """One flow-matching step on a batch of base-resolution images.

    Draws t ~ U(0, 1) and eps ~ N(0, 1), forms x_t = (1-t) x0 + t eps, and
    regresses the velocity eps - x0 with one optimizer update. The draw order
    is fixed, so a seeded generator gives bit-reproducible trajectories.
    """
    cfg = model.config
    dt = cfg.np_dtype
    x0 = np.stack([tokens_from_image(img, cfg.patch_px).reshape(-1, cfg.token_channels) for img in batch])
    x0 = x0.astype(dt)
    b = x0.shape[0]
    t = rng.uniform(0.0, 1.0, size=b)
    eps = rng.standard_normal(x0.shape)
    if cfg.num_classes > 0:
        if labels is None:
            raise ValueError("class-conditional model needs labels")
        labels = np.asarray(labels, dtype=np.int64).copy()
        drop = rng.uniform(0.0, 1.0, size=b) < label_dropout
        labels[drop] = cfg.num_classes
    tb = t.astype(dt)[:, None, None]
    x_t = (1.0 - tb) * x0 + tb * eps.astype(dt)
    target = eps.astype(dt) - x0
    loss, grads = model.loss_and_grads(x_t, t, target, labels)
    if not math.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss {loss}")
    optimizer.step(grads)
    for name, val in model.params.items():
        if not np.isfinite(val).all():
            raise TrainingDivergedError(f"parameter {name} became non-finite")
    return loss


def sample(
    model: ToyDiT,
    schedule: SamplerSchedule,
    target_h: int,
    target_w: int,
    seed: int,
    guidance: GuidanceConfig | None = None,
    *,
    layout: PatchLayout | None = None,
    splice_cfg: SpliceConfig | None = None,
    fusion_cfg: FusionConfig | None = None,
    vanilla_pe: bool = False,
    splice_mode: str = "gaussian",
    spatial_average: bool = False,
    label: int | None = None,
) -> np.ndarray:
    """Euler-integrate the learned flow from noise down to an image.

    target_h/target_w are pixel dimensions; they must be multiples of the
    pixel patch size and at least the training resolution. Returns the decoded
    grayscale image in [0, 1].
    """
    cfg = model.config
    pp = cfg.patch_px
    if target_h % pp or target_w % pp:
        raise ValueError(f"target {target_h}x{target_w} not divisible by patch size {pp}")
    ht, wt = target_h // pp, target_w // pp
    if ht < cfg.base_h or wt < cfg.base_w:
        raise ValueError(
            f"target grid {ht}x{wt} below training grid {cfg.base_h}x{cfg.base_w}"
        )
    scale = ScaleFactors(ht, wt, ht, wt) if vanilla_pe else ScaleFactors(cfg.base_h, cfg.base_w, ht, wt)
    if layout is None:
        layout = make_layout(ht, wt, cfg.base_h, cfg.base_w)
    if splice_cfg is None:
        splice_cfg = SpliceConfig.for_patch(layout.patch_h, layout.patch_w)
    if fusion_cfg is None:
        fusion_cfg = FusionConfig()
    use_cfg = (
        guidance is not None and guidance.enabled and cfg.num_classes > 0 and label is not None
    )

    rng = np.random.default_rng(seed)
    x = rng.standard_normal((ht, wt, cfg.token_channels)).astype(cfg.np_dtype)
    total = schedule.total_steps
    times = 1.0 - np.arange(total) / total
    for i, t in enumerate(times):
        kwargs = dict(
            mode=schedule.modes[i], scale=scale, layout=layout, splice_cfg=splice_cfg,
            fusion_cfg=fusion_cfg, splice_mode=splice_mode, spatial_average=spatial_average,
        )
        if use_cfg:
            v_cond = model.forward(x, float(t), label=label, **kwargs)
            v_uncond = model.forward(x, float(t), label=None, **kwargs)
            v = v_uncond + guidance.scale * (v_cond - v_uncond)
        else:
            v = model.forward(x, float(t), label=label, **kwargs)
        t_next = times[i + 1] if i + 1 < total else 0.0
        x = x + (t_next - t) * v
        if not np.isfinite(x).all():
            raise SamplingDivergedError(f"non-finite sampler state at step {i} (t={t:.4f})")
    return np.clip(image_from_tokens(x.astype(np.float64), pp), 0.0, 1.0)


# --- checkpoints ----------------------------------------------------------------
#
# A checkpoint is a directory: manifest.json plus one raw-tensor file per
# parameter (the grid serialization format, with shapes padded to 3D).


def _pad3(shape: tuple[int, ...]) -> tuple[int, int, int]:
    if len(shape) > 3:
        raise ValueError(f"cannot serialize rank-{len(shape)} tensor")
    return tuple(list(shape) + [1] * (3 - len(shape)))


def save_checkpoint(model: ToyDiT, out_dir: str | os.PathLike, extra: dict | None = None) -> None:
    out = Path(out_dir)
    (out / "params").mkdir(parents=True, exist_ok=True)
    entries = []
    for name, val in model.params.items():
        rel = f"params/{name}.bin"
        gridio.save_grid(out / rel, np.asarray(val, dtype=np.float64).reshape(_pad3(val.shape)))
        entries.append({"name": name, "shape": list(val.shape), "file": rel})
    manifest = {"format": 1, "model": asdict(model.config), "params": entries, "extra": extra or {}}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(ckpt_dir: str | os.PathLike) -> tuple[ToyDiT, dict]:
    ckpt = Path(ckpt_dir)
    with open(ckpt / "manifest.json") as fh:
        manifest = json.load(fh)
    config = ModelConfig(**manifest["model"])
    model = ToyDiT(config)
    for entry in manifest["params"]:
        name = entry["name"]
        if name not in model.params:
            raise ValueError(f"checkpoint parameter {name!r} unknown to this model")
        val = gridio.load_grid(ckpt / entry["file"]).reshape(entry["shape"])
        if tuple(entry["shape"]) != model.params[name].shape:
            raise ValueError(
                f"checkpoint parameter {name!r} has shape {entry['shape']}, "
                f"expected {model.params[name].shape}"
            )
        model.params[name] = val.astype(config.np_dtype)
    return model, manifest
