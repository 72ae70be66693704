"""Phase-structured training, few-step inference, metrics and persistence.

The trainer runs four phases in order (flow-matching warm start, combined
FM-SD, guidance, adversarial fine-tuning on adapters only); any phase may be
zero-length.  A single seeded rng drives every draw, so runs are bitwise
reproducible.
"""

from __future__ import annotations

import io as _io
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from . import autodiff as ad
from .autodiff import Tensor
from .data import DegradeOpts, PairBatch, gaussian_pair, gen_texture, gen_toy2d, degrade, make_negative_target
from .interpolant import STANDARD
from .io import load_checkpoint, save_checkpoint
from .losses import (GuidanceContext, combined_loss, draw_guidance, fm_loss,
                     rpgan_losses)
from .nets import COND_NULL, COND_POSITIVE, Discriminator, FlowMapModel, WeightNet
from .oracle import integrate_flow
from .schedule import GridConfig, GridTime, SSD, TimestepPair, sample_pair

METRICS_HEADER = ["step", "phase", "loss_main", "loss_perc", "loss_weighted",
                  "lambda_mean", "g_loss", "d_loss"]


# -- configuration --------------------------------------------------------


@dataclass
class PhasePlan:
    """Hyperparameters and the four-phase step schedule."""

    fm_steps: int = 2000
    fmsd_steps: int = 2000
    cfg_steps: int = 1000
    adv_steps: int = 1000
    d_pretrain_steps: int = 100
    lr_model: float = 1e-3
    lr_weightnet: float = 1e-4
    lr_disc: float = 2.5e-3
    batch_size: int = 256
    w_max: float = 3.5
    lambda_adv: float = 0.1
    lora_rank: int = 4
    lora_train_scale: float = 1.0
    drop_prob: float = 0.10
    lr_floor: float = 0.05  # cosine decay down to this fraction of the base lr
    setting: str = SSD
    grid: GridConfig = field(default_factory=GridConfig)
    hidden: int = 256
    depth: int = 4
    time_dim: int = 32
    cond_dim: int = 16
    use_perceptual: bool = True


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 2
    cond: int = COND_POSITIVE
    lora_scale: float = 1.5
    d_max: int = 7

    def __post_init__(self):
        k = self.steps
        if k < 1 or (k & (k - 1)) != 0 or k > (1 << self.d_max):
            raise ValueError(f"steps must be a power of two <= {1 << self.d_max}")


# -- optimizer ------------------------------------------------------------


class AdamW:
    """Adam with decoupled weight decay; beta = (0.9, 0.999), eps = 1e-8."""

    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros(p.shape) for k, p in params.items()}
        self.v = {k: np.zeros(p.shape) for k, p in params.items()}

    def step(self, grads: dict):
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            self.m[name] = self.b1 * self.m[name] + (1.0 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1.0 - self.b2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update


def optimizer_step(params: dict, grads: dict, state: AdamW | None, lr: float) -> AdamW:
    """Functional entry: apply one decoupled-decay adaptive-moment update."""
    if state is None:
        state = AdamW(params, lr)
    state.lr = lr
    state.step(grads)
    return state


# -- tasks ----------------------------------------------------------------


class Gaussian2DTask:
    """Independent Gaussian endpoints; the analytic-oracle training task."""

    name = "gaussian2d"
    image_hw = None

    def __init__(self, mu0=(1.0, -1.0), sigma0=0.6, mu1=(-1.0, 1.0), sigma1=1.2,
                 neg_noise: float = 0.3):
        self.mu0 = np.asarray(mu0, dtype=np.float64)
        self.mu1 = np.asarray(mu1, dtype=np.float64)
        self.sigma0 = float(sigma0)
        self.sigma1 = float(sigma1)
        self.neg_noise = neg_noise
        self.state_dim = self.mu0.shape[0]

    def sample(self, n: int, rng: np.random.Generator,
               with_negative: bool = False) -> PairBatch:
        batch = gaussian_pair(n, self.mu0, self.sigma0, self.mu1, self.sigma1, rng)
        if with_negative:
            # 2D stand-in for the degraded negative target: a noised copy of x0
            batch.x0_neg = batch.x0 + self.neg_noise * rng.standard_normal(batch.x0.shape)
        return batch

    def source_samples(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mu1 + self.sigma1 * rng.standard_normal((n, self.state_dim))


class Toy2DTask:
    name = "toy2d"
    image_hw = None
    state_dim = 2

    def __init__(self, kind: str = "two_gaussians"):
        self.kind = kind

    def sample(self, n, rng, with_negative=False) -> PairBatch:
        batch = gen_toy2d(n, self.kind, rng)
        if with_negative:
            batch.x0_neg = batch.x0 + 0.3 * rng.standard_normal(batch.x0.shape)
        return batch

    def source_samples(self, n, rng):
        return self.sample(n, rng).x1


class TextureSRTask:
    """Procedural texture super-resolution coupling on flattened images."""

    name = "texture_sr"

    def __init__(self, size: int = 16, opts: DegradeOpts | None = None):
        self.size = size
        self.opts = opts if opts is not None else DegradeOpts()
        self.state_dim = size * size
        self.image_hw = (size, size)

    def sample(self, n, rng, with_negative=False, s_down=None) -> PairBatch:
        hrs = gen_texture(n, self.size, rng)
        x1 = np.empty_like(hrs)
        neg = np.empty_like(hrs) if with_negative else None
        downs = np.empty(n)
        for i in range(n):
            sd = float(rng.uniform(0.1, 1.0)) if s_down is None else float(s_down)
            downs[i] = sd
            x1[i] = degrade(hrs[i], sd, self.opts, rng)
            if with_negative:
                neg[i] = make_negative_target(hrs[i], sd, rng, self.opts)
        n_flat = lambda a: a.reshape(n, -1)
        return PairBatch(x0=n_flat(hrs), x1=n_flat(x1), s_down=downs,
                         x0_neg=None if neg is None else n_flat(neg))

    def source_samples(self, n, rng):
        return self.sample(n, rng).x1


TASKS = {
    "gaussian2d": Gaussian2DTask,
    "toy2d": Toy2DTask,
    "texture_sr": TextureSRTask,
}


# -- metrics --------------------------------------------------------------


PSNR_CAP = 99.0


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 2.0) -> float:
    """Peak signal-to-noise ratio in dB; zero-MSE pairs report the 99 cap."""
    mse = float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def gaussian_w2(samples: np.ndarray, mu: np.ndarray, sigma: float) -> float:
    """Exact 2-Wasserstein distance between the moment-fitted Gaussian of
    ``samples`` and an isotropic reference N(mu, sigma^2 I)."""
    samples = np.asarray(samples, dtype=np.float64)
    m_hat = samples.mean(axis=0)
    cov_hat = np.cov(samples, rowvar=False)
    cov_ref = sigma ** 2 * np.eye(samples.shape[1])
    sqrt_ref = scipy.linalg.sqrtm(cov_ref).real
    cross = scipy.linalg.sqrtm(sqrt_ref @ cov_hat @ sqrt_ref).real
    w2sq = float(np.sum((m_hat - mu) ** 2)
                 + np.trace(cov_hat) + np.trace(cov_ref) - 2.0 * np.trace(cross))
    return math.sqrt(max(w2sq, 0.0))


# -- inference ------------------------------------------------------------


def sample(model: FlowMapModel, x1: np.ndarray, cfg: SamplerConfig) -> list:
    """Few-step generation on the uniform dyadic grid; returns the iterates
    x_K .. x_0 (clean endpoint last).  One model evaluation per step."""
    k_steps = cfg.steps
    x = np.asarray(x1, dtype=np.float64).copy()
    trajectory = [x.copy()]
    delta = 1.0 / k_steps
    with ad.no_grad():
        for k in range(k_steps - 1, -1, -1):
            t_lo, t_hi = k * delta, (k + 1) * delta
            u = model(x, t_lo, t_hi, cfg.cond, lora_scale=cfg.lora_scale)
            x = x - delta * u.data
            trajectory.append(x.copy())
    return trajectory


# -- training -------------------------------------------------------------


class TrainAbort(RuntimeError):
    """Raised when a loss goes non-finite; carries a diagnostic record."""

    def __init__(self, step: int, phase: str, value: float):
        self.record = {"step": step, "phase": phase, "value": value}
        super().__init__(f"non-finite loss at step {step} (phase {phase}): {value}")


def _fmt(x) -> str:
    return "" if x is None else f"{x:.10e}"


def _check_finite(value: float, step: int, phase: str):
    if not math.isfinite(value):
        raise TrainAbort(step, phase, value)


@dataclass
class TrainResult:
    model: FlowMapModel
    weightnet: WeightNet
    disc: Discriminator | None
    metrics_rows: list
    plan: PhasePlan

    def metrics_csv(self) -> str:
        buf = _io.StringIO()
        buf.write(",".join(METRICS_HEADER) + "\n")
        for row in self.metrics_rows:
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


def _fm_pair(grid: GridConfig, rng) -> TimestepPair:
    d = grid.d_max
    k = int(rng.integers(0, (1 << d) + 1))
    gt = GridTime(k, d)
    return TimestepPair(s=gt, t=gt, is_fm=True, level=d)


def train(plan: PhasePlan, task, seed: int = 0,
          sched=STANDARD, instrument: dict | None = None) -> TrainResult:
    """Run the four phases and return the trained components plus metrics.

    ``instrument``, when given, collects counters (sd target invocations,
    guidance drops) used by the verification suite.
    """
    rng = np.random.default_rng(seed)
    model = FlowMapModel(task.state_dim, hidden=plan.hidden, depth=plan.depth,
                         time_dim=plan.time_dim, cond_dim=plan.cond_dim,
                         rng=np.random.default_rng(seed + 1))
    weightnet = WeightNet(time_dim=plan.time_dim, rng=np.random.default_rng(seed + 2))
    rows: list = []
    counters = instrument if instrument is not None else {}
    counters.setdefault("sd_steps", 0)
    counters.setdefault("drops", 0)
    counters.setdefault("cfg_steps", 0)
    step = 0

    opt_model = AdamW(model.trainable_params(), plan.lr_model)
    opt_wn = AdamW(weightnet.trainable_params(), plan.lr_weightnet)

    total_main = max(1, plan.fm_steps + plan.fmsd_steps + plan.cfg_steps)

    def decay(i: int) -> float:
        frac = min(i, total_main) / total_main
        return plan.lr_floor + (1.0 - plan.lr_floor) * 0.5 * (1.0 + math.cos(math.pi * frac))

    # phase 1: flow-matching warm start on diagonal pairs at the finest grid
    for _ in range(plan.fm_steps):
        batch = task.sample(plan.batch_size, rng)
        pair = _fm_pair(plan.grid, rng)
        loss = fm_loss(model, batch.x0, batch.x1, pair.t_value, sched, COND_NULL)
        _check_finite(loss.item(), step, "fm")
        grads = ad.grad(loss, model.trainable_params())
        opt_model.lr = plan.lr_model * decay(step)
        opt_model.step(grads)
        rows.append([str(step), "fm", _fmt(loss.item()), "", _fmt(loss.item()),
                     "", "", ""])
        step += 1

    # phases 2 and 3: combined objective, then guidance
    for phase, n_steps in (("fmsd", plan.fmsd_steps), ("cfg", plan.cfg_steps)):
        for _ in range(n_steps):
            use_cfg = phase == "cfg"
            batch = task.sample(plan.batch_size, rng, with_negative=use_cfg)
            pair = sample_pair(plan.setting, plan.grid, rng)
            ctx = None
            if use_cfg:
                ctx = draw_guidance(rng, plan.w_max, COND_POSITIVE, plan.drop_prob)
                counters["cfg_steps"] += 1
                if ctx.dropped:
                    counters["drops"] += 1
            if not pair.is_fm:
                counters["sd_steps"] += 1
            # the low-pass surrogate is an image-domain regularizer; skip it
            # for vector tasks where a 2x pool has no spatial meaning
            use_perc = plan.use_perceptual and task.image_hw is not None
            breakdown = combined_loss(model, weightnet, batch.x0, batch.x1, pair,
                                      plan.setting, sched, ctx=ctx,
                                      x0_neg=batch.x0_neg, image_hw=task.image_hw,
                                      use_perceptual=use_perc)
            total = breakdown.weighted_total
            _check_finite(total.item(), step, phase)
            merged = {}
            model_params = model.trainable_params()
            wn_params = weightnet.trainable_params()
            merged.update(model_params)
            merged.update({f"wn.{k}": v for k, v in wn_params.items()})
            grads = ad.grad(total, merged)
            opt_model.lr = plan.lr_model * decay(step)
            opt_wn.lr = plan.lr_weightnet * decay(step)
            opt_model.step({k: grads[k] for k in model_params})
            opt_wn.step({k: grads[f"wn.{k}"] for k in wn_params})
            rows.append([str(step), phase, _fmt(breakdown.main.item()),
                         _fmt(breakdown.perceptual.item()), _fmt(total.item()),
                         _fmt(breakdown.lam), "", ""])
            step += 1

    # phase 4: adversarial fine-tuning of adapters and discriminator only
    disc = None
    if plan.adv_steps > 0:
        disc = Discriminator(task.state_dim, rng=np.random.default_rng(seed + 3))
        model.attach_lora(plan.lora_rank, np.random.default_rng(seed + 4))
        model.lora_train_scale = plan.lora_train_scale
        model.set_trunk_trainable(False)
        opt_lora = AdamW(model.lora_params(), plan.lr_model)
        opt_disc = AdamW(disc.trainable_params(), plan.lr_disc)

        for i in range(plan.d_pretrain_steps):
            batch = task.sample(plan.batch_size, rng, with_negative=True)
            ctx = draw_guidance(rng, plan.w_max, COND_POSITIVE, plan.drop_prob)
            pair = sample_pair(plan.setting, plan.grid, rng)
            _, d_loss = rpgan_losses(model, disc, batch.x0, batch.x1, ctx, 0.0)
            _check_finite(d_loss.item(), step, "adv")
            opt_disc.step(ad.grad(d_loss, disc.trainable_params()))
            rows.append([str(step), "adv", "", "", "", "", "", _fmt(d_loss.item())])
            step += 1

        for _ in range(plan.adv_steps):
            batch = task.sample(plan.batch_size, rng, with_negative=True)
            ctx = draw_guidance(rng, plan.w_max, COND_POSITIVE, plan.drop_prob)
            pair = sample_pair(plan.setting, plan.grid, rng)
            g_loss, d_loss = rpgan_losses(
                model, disc, batch.x0, batch.x1, ctx, plan.lambda_adv,
                weightnet=weightnet, pair=pair, setting=plan.setting, sched=sched,
                x0_neg=batch.x0_neg, image_hw=task.image_hw,
                use_perceptual=plan.use_perceptual and task.image_hw is not None)
            _check_finite(g_loss.item(), step, "adv")
            _check_finite(d_loss.item(), step, "adv")
            opt_lora.step(ad.grad(g_loss, model.lora_params()))
            opt_disc.step(ad.grad(d_loss, disc.trainable_params()))
            rows.append([str(step), "adv", "", "", "", "",
                         _fmt(g_loss.item()), _fmt(d_loss.item())])
            step += 1
        model.set_trunk_trainable(True)

    return TrainResult(model=model, weightnet=weightnet, disc=disc,
                       metrics_rows=rows, plan=plan)


# -- evaluation -----------------------------------------------------------


def evaluate_gaussian(model: FlowMapModel, task: Gaussian2DTask, n: int,
                      cfg: SamplerConfig, seed: int = 0) -> dict:
    """2-Wasserstein between flow-map samples and the target Gaussian."""
    rng = np.random.default_rng(seed)
    x1 = task.source_samples(n, rng)
    x0_hat = sample(model, x1, cfg)[-1]
    return {"w2": gaussian_w2(x0_hat, task.mu0, task.sigma0), "n": n,
            "steps": cfg.steps}


def evaluate_sr(model: FlowMapModel, task: TextureSRTask, n: int,
                cfg: SamplerConfig, seed: int = 0, s_down: float = 0.25) -> dict:
    """Mean PSNR of the model against the bilinear-upsampled observation.

    The evaluation pipeline fixes both resizes to bilinear, so the degraded
    source is exactly the no-model baseline: the low-res observation brought
    back up with bilinear interpolation."""
    rng = np.random.default_rng(seed)
    eval_task = TextureSRTask(task.size, DegradeOpts(interp_modes=("bilinear",)))
    batch = eval_task.sample(n, rng, s_down=s_down)
    x0_hat = sample(model, batch.x1, cfg)[-1]
    h, w = task.image_hw
    model_psnrs, baseline_psnrs = [], []
    for i in range(n):
        hr = batch.x0[i].reshape(h, w)
        model_psnrs.append(psnr(x0_hat[i].reshape(h, w), hr))
        baseline_psnrs.append(psnr(batch.x1[i].reshape(h, w), hr))
    return {"psnr_model": float(np.mean(model_psnrs)),
            "psnr_baseline": float(np.mean(baseline_psnrs)),
            "n": n, "steps": cfg.steps, "s_down": s_down}


# -- persistence ----------------------------------------------------------


def checkpoint_tensors(result: TrainResult) -> dict:
    tensors = {}
    for k, v in result.model.params.items():
        tensors[f"model.{k}"] = v.data
    for k, v in result.model.lora_params().items():
        tensors[f"model.{k}"] = v.data
    for k, v in result.weightnet.params.items():
        tensors[f"weightnet.{k}"] = v.data
    if result.disc is not None:
        for k, v in result.disc.params.items():
            tensors[f"disc.{k}"] = v.data
    return tensors


def save_result(path, result: TrainResult, task_name: str, sched_kind: str = "standard",
                phase: str = "done") -> None:
    meta = {
        "task": task_name,
        "schedule": sched_kind,
        "phase": phase,
        "setting": result.plan.setting,
        "state_dim": result.model.state_dim,
        "hidden": result.model.hidden,
        "depth": result.model.depth,
        "time_dim": result.model.time_dim,
        "cond_dim": result.model.cond_dim,
        "lora_rank": 0 if result.model.lora is None else result.plan.lora_rank,
        "d_max": result.plan.grid.d_max,
    }
    save_checkpoint(path, checkpoint_tensors(result), meta)


def load_model(path) -> tuple[FlowMapModel, dict]:
    tensors, meta = load_checkpoint(path)
    model = FlowMapModel(int(meta["state_dim"]), hidden=int(meta["hidden"]),
                         depth=int(meta["depth"]), time_dim=int(meta["time_dim"]),
                         cond_dim=int(meta["cond_dim"]))
    rank = int(meta.get("lora_rank", 0))
    if rank > 0:
        model.attach_lora(rank, np.random.default_rng(0))
    for k, v in model.params.items():
        model.params[k].data = tensors[f"model.{k}"]
    for k, v in model.lora_params().items():
        v.data = tensors[f"model.{k}"]
    return model, meta
