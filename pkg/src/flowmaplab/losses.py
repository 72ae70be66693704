"""Training objectives: flow matching, the three self-distillation targets,
their guidance-aware variants, dynamic weighting, the perceptual
regularizer, and the relativistic adversarial pair.

Targets are always built outside gradient recording and stop-gradiented;
gradients flow only through the left factor of each squared error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .interpolant import InterpolantSchedule, STANDARD, interpolate, target_velocity
from .nets import COND_NEGATIVE, COND_NULL
from .schedule import LSD, ESD, SSD, TimestepPair


@dataclass(frozen=True)
class GuidanceContext:
    """Sampled guidance state for one training step."""

    w: float
    w_max: float
    cond: int
    dropped: bool = False

    def __post_init__(self):
        if self.dropped and self.w != 1.0:
            raise ValueError("dropped conditions force w == 1")
        if not 1.0 <= self.w <= self.w_max:
            raise ValueError(f"guidance scale {self.w} outside [1, {self.w_max}]")


def draw_guidance(rng: np.random.Generator, w_max: float, cond_positive: int,
                  drop_prob: float = 0.10) -> GuidanceContext:
    """Drop to the negative branch with ``drop_prob`` (then w = 1),
    otherwise keep the positive condition with w ~ U(1, w_max)."""
    if rng.random() < drop_prob:
        return GuidanceContext(w=1.0, w_max=w_max, cond=COND_NEGATIVE, dropped=True)
    return GuidanceContext(w=float(rng.uniform(1.0, w_max)), w_max=w_max,
                           cond=cond_positive, dropped=False)


@dataclass
class LossBreakdown:
    main: Tensor
    perceptual: Tensor
    weighted_total: Tensor
    lam: float
    tag: str


def _batch_sq_error(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over the batch of per-sample squared-error norms."""
    diff = ad.sub(pred, target)
    return ad.mean(ad.sum_(ad.square(diff), axis=1))


# -- flow matching --------------------------------------------------------


def fm_loss(model, x0: np.ndarray, x1: np.ndarray, t: float,
            sched: InterpolantSchedule = STANDARD, cond: int = COND_NULL) -> Tensor:
    """||u_{t,t}(I_t | cond) - v_target||^2 averaged over the batch."""
    x_t = interpolate(x0, x1, t, sched)
    v_t = target_velocity(x0, x1, t, sched)
    pred = model(x_t, t, t, cond)
    return _batch_sq_error(pred, Tensor(v_t))


# -- self-distillation targets --------------------------------------------


def _check_interval(s: float, t: float):
    if s == t:
        raise ValueError("diagonal pairs dispatch to the flow-matching loss")
    if s > t:
        raise ValueError(f"need s < t, got ({s}, {t})")


def sd_target(setting: str, model, x0: np.ndarray, x1: np.ndarray,
              s: float, t: float, sched: InterpolantSchedule = STANDARD,
              cond: int = COND_NULL) -> Tensor:
    """Consistency target for u_{s,t}(I_t); detached from the tape.

    lsd: v_target + (t-s) d_s u_{s,t}(I_t)
    esd: v_target - (t-s)(grad u . v_target + d_t u)
    ssd: half-step composition through the midpoint r = (s+t)/2
    The conditional velocity ``v_target`` comes from the schedule, so the
    same expressions serve general interpolants.
    """
    _check_interval(s, t)
    x_t = interpolate(x0, x1, t, sched)
    v_t = target_velocity(x0, x1, t, sched)
    f = lambda x, ss, tt: model(x, ss, tt, cond)

    if setting == LSD:
        _, du_ds = ad.jvp_joint(f, Tensor(x_t), s, t, np.zeros_like(x_t), 1.0, 0.0)
        target = v_t + (t - s) * du_ds.data
    elif setting == ESD:
        _, total = ad.jvp_joint(f, Tensor(x_t), s, t, v_t, 0.0, 1.0)
        target = v_t - (t - s) * total.data
    elif setting == SSD:
        r = 0.5 * (s + t)
        with ad.no_grad():
            u_rt = model(x_t, r, t, cond)
            x_mid = x_t - (t - s) / 2.0 * u_rt.data
            u_sr = model(x_mid, s, r, cond)
        target = 0.5 * u_rt.data + 0.5 * u_sr.data
    else:
        raise ValueError(f"unknown setting {setting!r}")
    return ad.stop_gradient(Tensor(target))


def sd_loss(setting: str, model, x0: np.ndarray, x1: np.ndarray,
            s: float, t: float, sched: InterpolantSchedule = STANDARD,
            cond: int = COND_NULL) -> Tensor:
    """||u_{s,t}(I_t|cond) - sg(target)||^2; gradients hit the left factor only."""
    target = sd_target(setting, model, x0, x1, s, t, sched, cond)
    x_t = interpolate(x0, x1, t, sched)
    pred = model(x_t, s, t, cond)
    return _batch_sq_error(pred, target)


# -- guidance-aware targets -----------------------------------------------


def cfg_fm_target(model, x0: np.ndarray, x1: np.ndarray, t: float,
                  sched: InterpolantSchedule, ctx: GuidanceContext) -> Tensor:
    """w * v_target + (1 - w) * u_{t,t}(I_t | negative); detached.

    A dropped context reduces to the plain target (w = 1)."""
    v_t = target_velocity(x0, x1, t, sched)
    if ctx.dropped or ctx.w == 1.0:
        return ad.stop_gradient(Tensor(v_t))
    x_t = interpolate(x0, x1, t, sched)
    with ad.no_grad():
        u_neg = model(x_t, t, t, COND_NEGATIVE)
    return ad.stop_gradient(Tensor(ctx.w * v_t + (1.0 - ctx.w) * u_neg.data))


def cfg_sd_target(setting: str, model, x0: np.ndarray, x1: np.ndarray,
                  s: float, t: float, sched: InterpolantSchedule,
                  ctx: GuidanceContext) -> Tensor:
    """Guidance-aware consistency target; detached.

    Extra model evaluations versus the unconditional target: two in the
    Lagrangian setting, one in the Eulerian setting, none in the Shortcut
    setting.  A dropped context reduces to the plain target on the negative
    branch.
    """
    _check_interval(s, t)
    if ctx.dropped:
        return sd_target(setting, model, x0, x1, s, t, sched, COND_NEGATIVE)

    x_t = interpolate(x0, x1, t, sched)
    v_t = target_velocity(x0, x1, t, sched)
    c = ctx.cond
    f = lambda x, ss, tt: model(x, ss, tt, c)

    if setting == LSD:
        with ad.no_grad():
            u_neg_st = model(x_t, s, t, COND_NEGATIVE)
            x_s_neg = x_t - (t - s) * u_neg_st.data
            u_neg_ss = model(x_s_neg, s, s, COND_NEGATIVE)
        v_cfg = ctx.w * v_t + (1.0 - ctx.w) * u_neg_ss.data
        _, du_ds = ad.jvp_joint(f, Tensor(x_t), s, t, np.zeros_like(x_t), 1.0, 0.0)
        target = v_cfg + (t - s) * du_ds.data
    elif setting == ESD:
        with ad.no_grad():
            u_neg_tt = model(x_t, t, t, COND_NEGATIVE)
        v_cfg = ctx.w * v_t + (1.0 - ctx.w) * u_neg_tt.data
        _, total = ad.jvp_joint(f, Tensor(x_t), s, t, v_cfg, 0.0, 1.0)
        target = v_cfg - (t - s) * total.data
    elif setting == SSD:
        r = 0.5 * (s + t)
        with ad.no_grad():
            u_rt = model(x_t, r, t, c)
            x_mid = x_t - (t - s) / 2.0 * u_rt.data
            u_sr = model(x_mid, s, r, c)
        target = 0.5 * u_rt.data + 0.5 * u_sr.data
    else:
        raise ValueError(f"unknown setting {setting!r}")
    return ad.stop_gradient(Tensor(target))


# -- perceptual regularizer -----------------------------------------------


def perceptual_weight(s: float) -> float:
    """Time-decaying regularizer weight 5 * exp(-4 s)."""
    return 5.0 * float(np.exp(-4.0 * s))


def _pool_indices(d: int, image_hw: tuple | None):
    """Flat index groups for a 2x average pool (pairs for vector states)."""
    if image_hw is not None:
        h, w = image_hw
        if h * w != d or h % 2 or w % 2:
            raise ValueError("image_hw inconsistent with the state dimension")
        grid = np.arange(d).reshape(h, w)
        blocks = grid.reshape(h // 2, 2, w // 2, 2).transpose(0, 2, 1, 3).reshape(-1, 4)
        return blocks
    n_pairs = d // 2
    idx = np.arange(2 * n_pairs).reshape(n_pairs, 2)
    return idx


def perceptual_reg(x0_hat: Tensor, x0: np.ndarray, s: float,
                   image_hw: tuple | None = None) -> Tensor:
    """Weighted low-pass surrogate: (pooled MSE + MAE) / 2, scaled by the
    time-decaying weight.  ``x0_hat`` keeps its tape history."""
    lam = perceptual_weight(s)
    target = np.asarray(x0, dtype=np.float64)
    d = target.shape[-1]
    blocks = _pool_indices(d, image_hw)
    k = blocks.shape[1]

    cols_pred = [x0_hat[(slice(None), blocks[:, j])] for j in range(k)]
    pooled_pred = cols_pred[0]
    for cp in cols_pred[1:]:
        pooled_pred = ad.add(pooled_pred, cp)
    pooled_pred = ad.mul(pooled_pred, 1.0 / k)
    pooled_tgt = target[:, blocks].mean(axis=2)
    pooled_mse = ad.mean(ad.square(ad.sub(pooled_pred, Tensor(pooled_tgt))))

    diff = ad.sub(x0_hat, Tensor(target))
    sign = Tensor(np.sign(diff.data))  # constant factor: |x| = x * sign(x)
    mae = ad.mean(ad.mul(diff, sign))

    half = ad.mul(ad.add(pooled_mse, mae), 0.5)
    return ad.mul(half, lam)


# -- combined dispatch ----------------------------------------------------


def combined_loss(model, weightnet, x0: np.ndarray, x1: np.ndarray,
                  pair: TimestepPair, setting: str,
                  sched: InterpolantSchedule = STANDARD,
                  ctx: GuidanceContext | None = None,
                  x0_neg: np.ndarray | None = None,
                  image_hw: tuple | None = None,
                  use_perceptual: bool = True) -> LossBreakdown:
    """Dispatch on s == t, apply the regularizer and the learned weighting.

    weighted_total = exp(-lambda) * (main + perceptual) + lambda, with
    gradients reaching both the model and the weighting head.  A dropped
    guidance context swaps in the degraded negative target when provided.
    """
    s, t = pair.s_value, pair.t_value
    cond = COND_NULL if ctx is None else ctx.cond
    if ctx is not None and ctx.dropped and x0_neg is not None:
        x0 = x0_neg

    x_t = interpolate(x0, x1, t, sched)
    if pair.is_fm:
        tag = "fm" if ctx is None else "fm.cfg"
        pred = model(x_t, t, t, cond)
        if ctx is None:
            target = ad.stop_gradient(Tensor(target_velocity(x0, x1, t, sched)))
        else:
            target = cfg_fm_target(model, x0, x1, t, sched, ctx)
    else:
        tag = setting if ctx is None else f"{setting}.cfg"
        if ctx is None:
            target = sd_target(setting, model, x0, x1, s, t, sched, cond)
        else:
            target = cfg_sd_target(setting, model, x0, x1, s, t, sched, ctx)
        pred = model(x_t, s, t, cond)
    main = _batch_sq_error(pred, target)

    if use_perceptual:
        x0_hat = ad.sub(Tensor(x_t), ad.mul(pred, t))
        perceptual = perceptual_reg(x0_hat, x0, s, image_hw)
    else:
        perceptual = Tensor(0.0)

    lam = weightnet(s, t)
    raw = ad.add(main, perceptual)
    weighted = ad.add(ad.mul(ad.exp(ad.mul(lam, -1.0)), raw), lam)
    return LossBreakdown(main=main, perceptual=perceptual, weighted_total=weighted,
                         lam=lam.item(), tag=tag)


# -- adversarial pair -----------------------------------------------------


def two_step_prediction(model, x1: np.ndarray, cond: int,
                        lora_scale: float | None = None) -> Tensor:
    """x1 -> t=1/2 -> t=0 under the flow-map update; the midpoint state is
    detached so no higher-order derivatives arise."""
    u_top = model(x1, 0.5, 1.0, cond, lora_scale=lora_scale)
    x_half = np.asarray(x1, dtype=np.float64) - 0.5 * u_top.data  # detach midpoint
    u_bot = model(x_half, 0.0, 0.5, cond, lora_scale=lora_scale)
    return ad.sub(Tensor(x_half), ad.mul(u_bot, 0.5))


def rpgan_losses(model, disc, x0: np.ndarray, x1: np.ndarray,
                 ctx: GuidanceContext, lambda_adv: float,
                 weightnet=None, pair: TimestepPair | None = None,
                 setting: str = SSD, sched: InterpolantSchedule = STANDARD,
                 x0_neg: np.ndarray | None = None,
                 image_hw: tuple | None = None,
                 use_perceptual: bool = True):
    """Relativistic paired generator/discriminator losses.

    g_loss = softplus(D(fake) - D(real)) + lambda_adv * combined objective;
    d_loss = softplus(D(real) - D(sg(fake))).  The fake is a two-step
    flow-map prediction from x1.
    """
    fake = two_step_prediction(model, x1, ctx.cond)
    real = Tensor(np.asarray(x0, dtype=np.float64))

    d_fake = disc(fake)
    d_real = disc(real)
    g_adv = ad.mean(ad.softplus(ad.sub(d_fake, d_real)))

    g_loss = g_adv
    if weightnet is not None and pair is not None and lambda_adv > 0.0:
        breakdown = combined_loss(model, weightnet, x0, x1, pair, setting, sched,
                                  ctx=ctx, x0_neg=x0_neg, image_hw=image_hw,
                                  use_perceptual=use_perceptual)
        g_loss = ad.add(g_adv, ad.mul(breakdown.weighted_total, lambda_adv))

    fake_sg = ad.stop_gradient(fake)
    d_loss = ad.mean(ad.softplus(ad.sub(disc(real), disc(fake_sg))))
    return g_loss, d_loss
