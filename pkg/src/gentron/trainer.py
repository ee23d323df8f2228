"""AdamW, T2I training, and joint image-video T2V fine-tuning.

Every random decision comes from a stream forked off ``Rng(cfg.seed)`` by
purpose (data order, timesteps, noise, text dropout, branch choice), so a
(seed, config, dataset) triple fixes the loss trace bit for bit.
"""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from gentron.conditioning import drop_condition
from gentron.errors import ConfigError, ModeError
from gentron.numerics.rng import Rng
from gentron.numerics.tensor import backward
from gentron.schedule import eps_loss, q_sample
from gentron.video import full_mask, motion_free_mask, pseudo_video

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch: int = 16
    steps: int = 100
    p_motion_free: float = 0.1
    p_text_drop: float = 0.1
    t_frames: int = 8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        for name in ("p_motion_free", "p_text_drop"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if self.lr <= 0 or self.batch < 1 or self.steps < 0 or self.t_frames < 1:
            raise ConfigError("lr, batch and t_frames must be positive and steps non-negative")
        if not all(0.0 <= b < 1.0 for b in self.betas) or len(self.betas) != 2:
            raise ConfigError(f"betas must be two values in [0, 1), got {self.betas}")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


# -- optimizer ----------------------------------------------------------

def adamw_step(params, grads, moments, step, cfg):
    """One decoupled-weight-decay Adam update, in place.

    ``params`` maps names to tensors, ``grads`` names to arrays, ``moments``
    names to (m, v) arrays; ``step`` is the 1-based update count used for
    bias correction.
    """
    b1, b2 = cfg.betas
    lr, wd, eps = cfg.lr, cfg.weight_decay, cfg.eps
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise ConfigError(f"missing gradient for parameter {name!r}")
        m, v = moments[name]
        if wd:
            p.data *= 1.0 - lr * wd
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class AdamW:
    def __init__(self, model, cfg):
        self.cfg = cfg
        self.params = dict(model.named_parameters())
        self.moments = {
            name: (np.zeros_like(p.data), np.zeros_like(p.data)) for name, p in self.params.items()
        }
        self.step_count = 0

    def step(self):
        self.step_count += 1
        grads = {name: p.grad for name, p in self.params.items()}
        adamw_step(self.params, grads, self.moments, self.step_count, self.cfg)

    def state_config(self):
        return {
            "step": self.step_count, "lr": self.cfg.lr, "betas": list(self.cfg.betas),
            "eps": self.cfg.eps, "weight_decay": self.cfg.weight_decay,
        }

    @classmethod
    def from_state_config(cls, model, d):
        cfg = TrainConfig(lr=d["lr"], betas=tuple(d["betas"]), eps=d["eps"],
                          weight_decay=d["weight_decay"])
        opt = cls(model, cfg)
        opt.step_count = int(d["step"])
        return opt


# -- batching -----------------------------------------------------------

def batch_indices(n, batch, rng):
    """Endless stream of index batches drawn from reshuffled epochs."""
    order, pos = rng.permutation(n), 0
    while True:
        out = []
        while len(out) < batch:
            if pos == n:
                order, pos = rng.permutation(n), 0
            take_n = min(batch - len(out), n - pos)
            out.extend(order[pos:pos + take_n])
            pos += take_n
        yield np.asarray(out, dtype=np.int64)


@dataclass
class TrainResult:
    model: object
    optimizer: AdamW
    losses: list = field(default_factory=list)
    branches: list = field(default_factory=list)  # T2V only: True for pseudo-video steps


def _streams(seed):
    root = Rng(seed)
    return {k: root.fork(k) for k in ("data", "video_data", "timesteps", "noise", "text_drop", "branch", "window")}


def _conditions(model, prompts, p_text_drop, rng):
    null = model.null_condition()
    return [drop_condition(model.encode(p), p_text_drop, rng, null) for p in prompts]


def _loss_step(model, opt, x0, prompts, schedule, cfg, s, mask=None):
    batch = x0.shape[0]
    t = s["timesteps"].integers(0, schedule.T, (batch,))
    eps = s["noise"].normal(x0.shape).astype(np.float32)
    x_t = q_sample(x0, t, eps, schedule)
    conds = _conditions(model, prompts, cfg.p_text_drop, s["text_drop"])
    model.zero_grad()
    loss = eps_loss(model(x_t, t, conds, mask), eps)
    backward(loss)
    opt.step()
    return float(loss.item())


def train_t2i(model, dataset, schedule, cfg, optimizer=None, callback=None):
    """Train ``model`` on (latent, prompt) pairs; returns the model and loss trace."""
    if model.inflated:
        raise ModeError("train_t2i expects a T2I model")
    if len(dataset) == 0:
        raise ConfigError("empty dataset")
    opt = optimizer if optimizer is not None else AdamW(model, cfg)
    s = _streams(cfg.seed)
    batches = batch_indices(len(dataset), cfg.batch, s["data"])
    result = TrainResult(model, opt)
    for step in range(cfg.steps):
        idx = next(batches)
        x0 = dataset.latents[idx]
        loss = _loss_step(model, opt, x0, [dataset.prompts[i] for i in idx], schedule, cfg, s)
        result.losses.append(loss)
        if callback is not None:
            callback(step, loss)
        if step % 100 == 0:
            log.debug("t2i step %d loss %.5f", step, loss)
    return result


def motion_free_draws(cfg, steps=None):
    """The per-step branch decisions :func:`finetune_t2v` will make (True = image branch)."""
    steps = cfg.steps if steps is None else steps
    return _streams(cfg.seed)["branch"].uniform(steps) < cfg.p_motion_free


def _window(clip, frames, rng):
    if clip.shape[0] < frames:
        raise ConfigError(f"video clip has {clip.shape[0]} frames, need {frames}")
    start = 0 if clip.shape[0] == frames else int(rng.integers(0, clip.shape[0] - frames + 1))
    return clip[start:start + frames]


def _maybe_batches(ds, batch, rng):
    if ds is None or len(ds) == 0:
        return None
    return batch_indices(len(ds), batch, rng)


def finetune_t2v(model, image_ds, video_ds, schedule, cfg, optimizer=None, callback=None):
    """Joint image-video fine-tuning with motion-free dropout.

    Each step draws u ~ U(0, 1). If u < p_motion_free the batch is image-text
    pairs repeated into pseudo-videos and the temporal mask is the identity;
    otherwise it is real clips with a full mask. Noise is drawn independently
    for every frame.
    """
    if not model.inflated:
        raise ModeError("finetune_t2v needs an inflated model (see inflate_t2i)")
    frames = cfg.t_frames
    opt = optimizer if optimizer is not None else AdamW(model, cfg)
    s = _streams(cfg.seed)
    image_batches = _maybe_batches(image_ds, cfg.batch, s["data"])
    video_batches = _maybe_batches(video_ds, cfg.batch, s["video_data"])
    result = TrainResult(model, opt)
    for step in range(cfg.steps):
        use_image = bool(s["branch"].random() < cfg.p_motion_free)
        if use_image:
            if image_batches is None:
                raise ConfigError("motion-free step drawn but no image dataset was given")
            idx = next(image_batches)
            x0 = pseudo_video(image_ds.latents[idx], frames).clips()
            prompts = [image_ds.prompts[i] for i in idx]
            mask = motion_free_mask(frames)
        else:
            if video_batches is None:
                raise ConfigError("video step drawn but no video dataset was given")
            idx = next(video_batches)
            x0 = np.stack([_window(video_ds.clips[i], frames, s["window"]) for i in idx])
            prompts = [video_ds.prompts[i] for i in idx]
            mask = full_mask(frames)
        loss = _loss_step(model, opt, x0, prompts, schedule, cfg, s, mask)
        result.losses.append(loss)
        result.branches.append(use_image)
        if callback is not None:
            callback(step, loss)
    return result
