"""Shared denoising-diffusion machinery.

A small fully-connected residual denoiser over flattened plan/action
vectors, conditioned through feature-wise affine (FiLM) modulation, with
hand-written gradients so they can be checked against finite differences
exactly. Training uses plain momentum SGD with global gradient-norm
clipping; sampling is ancestral DDPM. Everything is deterministic given
the seeds, and checkpoints round-trip through JSON.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SamplingDivergenceError, TrainingDivergenceError

CHECKPOINT_FORMAT = "legimod-ckpt-v1"
ARCH_NAME = "film-residual-mlp"

DEFAULT_NUM_STEPS = 100
DEFAULT_BETA_START = 1e-4
# End value chosen so the terminal signal level alpha_bar is below 0.01
# at 100 steps (near-pure noise endpoint).
DEFAULT_BETA_END = 0.1

DEFAULT_LR = 2e-3
DEFAULT_MOMENTUM = 0.9
DEFAULT_CLIP_NORM = 1.0


@dataclass
class NoiseSchedule:
    """Forward-process variances and their cumulative products."""

    betas: np.ndarray

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=float)
        if self.betas.ndim != 1 or self.betas.size < 1:
            raise DomainError("betas must be a nonempty 1-D array")
        if np.any(self.betas <= 0) or np.any(self.betas >= 1):
            raise DomainError("betas must lie strictly in (0, 1)")
        if np.any(np.diff(self.betas) < 0):
            raise DomainError("betas must be non-decreasing")
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)

    @classmethod
    def linear(
        cls,
        num_steps: int = DEFAULT_NUM_STEPS,
        beta_start: float = DEFAULT_BETA_START,
        beta_end: float = DEFAULT_BETA_END,
    ) -> "NoiseSchedule":
        return cls(betas=np.linspace(beta_start, beta_end, num_steps))

    @property
    def num_steps(self) -> int:
        return self.betas.size


def forward_noise(x0: np.ndarray, t: int, schedule: NoiseSchedule, noise: np.ndarray) -> np.ndarray:
    """Noise clean data to diffusion step ``t`` (1-based):
    sqrt(abar_t) x0 + sqrt(1 - abar_t) noise."""
    if not 1 <= t <= schedule.num_steps:
        raise DomainError(f"step index {t} outside [1, {schedule.num_steps}]")
    ab = schedule.alpha_bars[t - 1]
    return np.sqrt(ab) * np.asarray(x0, dtype=float) + np.sqrt(1.0 - ab) * np.asarray(noise, dtype=float)


def _forward_noise_batch(x0, t_arr, schedule, noise):
    ab = schedule.alpha_bars[t_arr - 1][:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of (1-based) diffusion step indices, shape (B, dim)."""
    if dim % 2 != 0:
        raise DomainError(f"embedding dim must be even, got {dim}")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


@dataclass
class FilmHead:
    """Affine generators mapping a context vector to per-feature scale and
    shift. Zero-initialized heads are an exact identity because the scale
    is applied as (1 + scale)."""

    scale_w: np.ndarray
    scale_b: np.ndarray
    shift_w: np.ndarray
    shift_b: np.ndarray

    @classmethod
    def zeros(cls, width: int, context_dim: int) -> "FilmHead":
        return cls(
            scale_w=np.zeros((width, context_dim)),
            scale_b=np.zeros(width),
            shift_w=np.zeros((width, context_dim)),
            shift_b=np.zeros(width),
        )


def apply_film(hidden: np.ndarray, context: np.ndarray, head: FilmHead) -> np.ndarray:
    """(1 + scale(context)) * hidden + shift(context) for single vectors."""
    hidden = np.asarray(hidden, dtype=float)
    context = np.asarray(context, dtype=float)
    if hidden.shape != (head.scale_w.shape[0],) or context.shape != (head.scale_w.shape[1],):
        raise DomainError(
            f"film head expects hidden {head.scale_w.shape[0]} / context "
            f"{head.scale_w.shape[1]}, got {hidden.shape} / {context.shape}"
        )
    scale = head.scale_w @ context + head.scale_b
    shift = head.shift_w @ context + head.shift_b
    return (1.0 + scale) * hidden + shift


class DenoiserNet:
    """Residual MLP noise predictor with per-block FiLM conditioning.

    The context seen by the FiLM heads is the raw conditioning vector
    concatenated with a sinusoidal embedding of the diffusion step.
    """

    def __init__(
        self,
        data_dim: int,
        cond_dim: int,
        hidden: int = 128,
        n_blocks: int = 2,
        temb_dim: int = 16,
        seed: int = 0,
    ):
        if temb_dim % 2 != 0:
            raise DomainError("temb_dim must be even")
        self.data_dim = data_dim
        self.cond_dim = cond_dim
        self.hidden = hidden
        self.n_blocks = n_blocks
        self.temb_dim = temb_dim
        self.context_dim = cond_dim + temb_dim
        self.seed = seed
        rng = np.random.default_rng(seed)
        p: dict[str, np.ndarray] = {}
        p["w_in"] = rng.standard_normal((hidden, data_dim)) / np.sqrt(data_dim)
        p["b_in"] = np.zeros(hidden)
        for b in range(n_blocks):
            p[f"b{b}.w1"] = rng.standard_normal((hidden, hidden)) / np.sqrt(hidden)
            p[f"b{b}.b1"] = np.zeros(hidden)
            p[f"b{b}.w2"] = rng.standard_normal((hidden, hidden)) / np.sqrt(hidden)
            p[f"b{b}.b2"] = np.zeros(hidden)
            # FiLM heads start as the identity.
            p[f"b{b}.film.scale_w"] = np.zeros((hidden, self.context_dim))
            p[f"b{b}.film.scale_b"] = np.zeros(hidden)
            p[f"b{b}.film.shift_w"] = np.zeros((hidden, self.context_dim))
            p[f"b{b}.film.shift_b"] = np.zeros(hidden)
        # Zero output layer: the untrained net predicts zero noise.
        p["w_out"] = np.zeros((data_dim, hidden))
        p["b_out"] = np.zeros(data_dim)
        self.params = p

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def film_head(self, block: int) -> FilmHead:
        p = self.params
        return FilmHead(
            scale_w=p[f"b{block}.film.scale_w"],
            scale_b=p[f"b{block}.film.scale_b"],
            shift_w=p[f"b{block}.film.shift_w"],
            shift_b=p[f"b{block}.film.shift_b"],
        )

    def full_context(self, cond: np.ndarray, t) -> np.ndarray:
        """Concatenate conditioning with the step embedding; accepts a
        single vector + scalar t or batches of each."""
        cond = np.asarray(cond, dtype=float)
        single = cond.ndim == 1
        if single:
            cond = cond[None, :]
        if cond.shape[1] != self.cond_dim:
            raise DomainError(f"conditioning length {cond.shape[1]} != expected {self.cond_dim}")
        emb = timestep_embedding(t, self.temb_dim)
        if emb.shape[0] == 1 and cond.shape[0] > 1:
            emb = np.repeat(emb, cond.shape[0], axis=0)
        ctx = np.concatenate([cond, emb], axis=1)
        return ctx[0] if single else ctx

    def forward(self, x: np.ndarray, ctx: np.ndarray):
        """Batched forward pass; returns (prediction, cache for backward)."""
        p = self.params
        h = x @ p["w_in"].T + p["b_in"]
        cache = {"x": x, "ctx": ctx, "blocks": []}
        for b in range(self.n_blocks):
            u = h @ p[f"b{b}.w1"].T + p[f"b{b}.b1"]
            s = ctx @ p[f"b{b}.film.scale_w"].T + p[f"b{b}.film.scale_b"]
            sh = ctx @ p[f"b{b}.film.shift_w"].T + p[f"b{b}.film.shift_b"]
            v = (1.0 + s) * u + sh
            w = np.tanh(v)
            cache["blocks"].append({"h_in": h, "u": u, "s": s, "w": w})
            h = h + w @ p[f"b{b}.w2"].T + p[f"b{b}.b2"]
        cache["h_out"] = h
        y = h @ p["w_out"].T + p["b_out"]
        return y, cache

    def predict(self, x: np.ndarray, ctx: np.ndarray) -> np.ndarray:
        single = np.asarray(x).ndim == 1
        xb = np.atleast_2d(x)
        cb = np.atleast_2d(ctx)
        y, _ = self.forward(xb, cb)
        return y[0] if single else y

    def backward(self, dy: np.ndarray, cache) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss w.r.t. every parameter, given dL/dy."""
        p = self.params
        g: dict[str, np.ndarray] = {}
        g["w_out"] = dy.T @ cache["h_out"]
        g["b_out"] = dy.sum(axis=0)
        dh = dy @ p["w_out"]
        ctx = cache["ctx"]
        for b in reversed(range(self.n_blocks)):
            blk = cache["blocks"][b]
            g[f"b{b}.w2"] = dh.T @ blk["w"]
            g[f"b{b}.b2"] = dh.sum(axis=0)
            dw = dh @ p[f"b{b}.w2"]
            dv = dw * (1.0 - blk["w"] ** 2)
            du = dv * (1.0 + blk["s"])
            ds = dv * blk["u"]
            g[f"b{b}.film.scale_w"] = ds.T @ ctx
            g[f"b{b}.film.scale_b"] = ds.sum(axis=0)
            g[f"b{b}.film.shift_w"] = dv.T @ ctx
            g[f"b{b}.film.shift_b"] = dv.sum(axis=0)
            g[f"b{b}.w1"] = du.T @ blk["h_in"]
            g[f"b{b}.b1"] = du.sum(axis=0)
            dh = dh + du @ p[f"b{b}.w1"]
        g["w_in"] = dh.T @ cache["x"]
        g["b_in"] = dh.sum(axis=0)
        return g


def loss_and_grads(
    net: DenoiserNet,
    x0: np.ndarray,
    cond: np.ndarray,
    t_arr: np.ndarray,
    eps: np.ndarray,
    schedule: NoiseSchedule,
):
    """Denoising MSE and its parameter gradients for a fixed (t, eps) draw."""
    xt = _forward_noise_batch(x0, t_arr, schedule, eps)
    ctx = net.full_context(cond, t_arr)
    pred, cache = net.forward(xt, ctx)
    resid = pred - eps
    loss = float(np.mean(resid**2))
    dpred = 2.0 * resid / resid.size
    return loss, net.backward(dpred, cache)


class MomentumSGD:
    """Plain momentum SGD with global gradient-norm clipping."""

    def __init__(
        self,
        lr: float = DEFAULT_LR,
        momentum: float = DEFAULT_MOMENTUM,
        clip_norm: float = DEFAULT_CLIP_NORM,
    ):
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        scale = 1.0 if norm <= self.clip_norm else self.clip_norm / norm
        for name, grad in grads.items():
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(grad)
            v = self.momentum * v + scale * grad
            self.velocity[name] = v
            params[name] -= self.lr * v


def train_step(
    net: DenoiserNet,
    x0: np.ndarray,
    cond: np.ndarray,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    optimizer: MomentumSGD,
) -> float:
    """One denoising-MSE gradient step over the given batch; returns the
    pre-update loss."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    cond = np.atleast_2d(np.asarray(cond, dtype=float))
    if x0.shape[0] == 0:
        raise DomainError("batch must be nonempty")
    n = x0.shape[0]
    t_arr = rng.integers(1, schedule.num_steps + 1, size=n)
    eps = rng.standard_normal(x0.shape)
    loss, grads = loss_and_grads(net, x0, cond, t_arr, eps, schedule)
    if not np.isfinite(loss):
        raise TrainingDivergenceError(f"non-finite loss {loss} (|x0| max {np.abs(x0).max()})")
    optimizer.step(net.params, grads)
    return loss


def train_denoiser(
    net: DenoiserNet,
    x0_all: np.ndarray,
    cond_all: np.ndarray,
    schedule: NoiseSchedule,
    steps: int,
    batch_size: int,
    seed: int,
    lr: float = DEFAULT_LR,
    momentum: float = DEFAULT_MOMENTUM,
    clip_norm: float = DEFAULT_CLIP_NORM,
    log_every: int = 0,
) -> np.ndarray:
    """Minibatch training loop. Deterministic for a fixed seed."""
    x0_all = np.asarray(x0_all, dtype=float)
    cond_all = np.asarray(cond_all, dtype=float)
    if x0_all.shape[0] != cond_all.shape[0] or x0_all.shape[0] == 0:
        raise DomainError("data and conditioning must be nonempty and aligned")
    rng = np.random.default_rng(seed)
    optimizer = MomentumSGD(lr=lr, momentum=momentum, clip_norm=clip_norm)
    losses = np.empty(steps)
    n = x0_all.shape[0]
    for step in range(steps):
        idx = rng.integers(0, n, size=min(batch_size, n))
        losses[step] = train_step(net, x0_all[idx], cond_all[idx], schedule, rng, optimizer)
        if log_every and (step + 1) % log_every == 0:
            recent = losses[max(0, step - log_every + 1) : step + 1].mean()
            print(f"  step {step + 1}/{steps}  loss {recent:.5f}")
    return losses


def sample(
    net: DenoiserNet,
    cond: np.ndarray,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """Ancestral DDPM sampling conditioned on ``cond``; a pure function of
    (weights, conditioning, rng state)."""
    cond = np.asarray(cond, dtype=float)
    if cond.shape != (net.cond_dim,):
        raise DomainError(f"conditioning shape {cond.shape} != ({net.cond_dim},)")
    x = rng.standard_normal(net.data_dim)
    for t in range(schedule.num_steps, 0, -1):
        ctx = net.full_context(cond, t)
        eps_hat = net.predict(x, ctx)
        beta = schedule.betas[t - 1]
        alpha = schedule.alphas[t - 1]
        ab = schedule.alpha_bars[t - 1]
        x = (x - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(alpha)
        if t > 1:
            ab_prev = schedule.alpha_bars[t - 2]
            sigma = np.sqrt(beta * (1.0 - ab_prev) / (1.0 - ab))
            x = x + sigma * rng.standard_normal(net.data_dim)
        if not np.all(np.isfinite(x)):
            raise SamplingDivergenceError(f"non-finite sample at step {t}")
    return x


@dataclass
class AxisNorm:
    """Per-axis affine map between workspace values and [-1, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)

    @classmethod
    def from_points(cls, points: np.ndarray) -> "AxisNorm":
        pts = np.asarray(points, dtype=float).reshape(-1, np.shape(points)[-1])
        return cls(lo=pts.min(axis=0), hi=pts.max(axis=0))

    def _center_halfspan(self):
        span = self.hi - self.lo
        span = np.where(span < 1e-9, 1.0, span)
        return (self.hi + self.lo) / 2.0, span / 2.0

    def encode(self, arr: np.ndarray) -> np.ndarray:
        center, half = self._center_halfspan()
        return (np.asarray(arr, dtype=float) - center) / half

    def decode(self, arr: np.ndarray) -> np.ndarray:
        center, half = self._center_halfspan()
        return np.asarray(arr, dtype=float) * half + center


def save_checkpoint(
    path,
    net: DenoiserNet,
    schedule: NoiseSchedule,
    norm_stats: dict,
    context_layout: list,
    seed: int,
    train_steps: int,
    meta: dict | None = None,
) -> None:
    """Serialize a trained model to versioned JSON."""
    weights = {}
    film_heads = []
    for b in range(net.n_blocks):
        film_heads.append(
            {
                "scale_w": net.params[f"b{b}.film.scale_w"].tolist(),
                "scale_b": net.params[f"b{b}.film.scale_b"].tolist(),
                "shift_w": net.params[f"b{b}.film.shift_w"].tolist(),
                "shift_b": net.params[f"b{b}.film.shift_b"].tolist(),
            }
        )
    for name, value in net.params.items():
        if ".film." not in name:
            weights[name] = value.tolist()
    payload = {
        "format": CHECKPOINT_FORMAT,
        "arch": ARCH_NAME,
        "widths": {
            "data_dim": net.data_dim,
            "cond_dim": net.cond_dim,
            "hidden": net.hidden,
            "n_blocks": net.n_blocks,
            "temb_dim": net.temb_dim,
        },
        "weights": weights,
        "film_heads": film_heads,
        "schedule": {"betas": schedule.betas.tolist()},
        "norm_stats": norm_stats,
        "context_layout": context_layout,
        "seed": seed,
        "train_steps": train_steps,
        "meta": meta or {},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """Rebuild (net, schedule, payload) from a checkpoint file."""
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise DomainError(f"unrecognized checkpoint format tag: {payload.get('format')!r}")
    if payload.get("arch") != ARCH_NAME:
        raise DomainError(f"unrecognized architecture: {payload.get('arch')!r}")
    w = payload["widths"]
    net = DenoiserNet(
        data_dim=w["data_dim"],
        cond_dim=w["cond_dim"],
        hidden=w["hidden"],
        n_blocks=w["n_blocks"],
        temb_dim=w["temb_dim"],
        seed=payload["seed"],
    )
    for name, value in payload["weights"].items():
        net.params[name] = np.array(value, dtype=float)
    for b, head in enumerate(payload["film_heads"]):
        net.params[f"b{b}.film.scale_w"] = np.array(head["scale_w"], dtype=float)
        net.params[f"b{b}.film.scale_b"] = np.array(head["scale_b"], dtype=float)
        net.params[f"b{b}.film.shift_w"] = np.array(head["shift_w"], dtype=float)
        net.params[f"b{b}.film.shift_b"] = np.array(head["shift_b"], dtype=float)
    schedule = NoiseSchedule(betas=np.array(payload["schedule"]["betas"], dtype=float))
    return net, schedule, payload
