"""Self-check suites run by ``gentron check``.

Each suite returns a list of :class:`CheckResult`; a suite passes when every
result does.
"""
from dataclasses import dataclass

import numpy as np

from gentron.guidance import cfg_epsilon, mfg_epsilon
from gentron.model import ADALN_ZERO, CROSS_ATTENTION, GenTron, GenTronConfig
from gentron.numerics.gradcheck import check_gradients
from gentron.numerics.rng import Rng
from gentron.numerics.tensor import no_grad
from gentron.schedule import ddpm_sample_loop, eps_loss, make_linear_schedule, q_sample
from gentron.video import inflate_t2i, motion_free_mask

SUITES = ("gradients", "schedule", "guidance", "gaussian-oracle", "video-identity")

GRAD_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float = 0.0
    threshold: float = 0.0
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.value:.6g} (threshold {self.threshold:.6g}) {self.detail}".rstrip()


def desk_config(variant=CROSS_ATTENTION, **kw):
    base = dict(depth=2, width=32, mlp_width=128, latent_shape=(8, 8, 4), variant=variant)
    base.update(kw)
    return GenTronConfig(**base)


def perturb(model, rng, std=0.05):
    """Add N(0, std²) to every parameter so zero-initialized paths become active."""
    for name, p in model.named_parameters():
        p.data += (std * rng.fork(name).normal(p.shape)).astype(p.data.dtype)
    return model


# -- gradients ------------------------------------------------------------

def gradient_check(model, n_samples=64, h=1e-3, seed=0, frames=4):
    """Finite-difference check of the diffusion loss on a float64 shadow of ``model``."""
    model.astype(np.float64)
    rng = Rng(seed).fork("gradient-check")
    shape = ((2, frames) if model.inflated else (2,)) + model.cfg.latent_shape
    x0 = rng.fork("x0").normal(shape)
    eps = rng.fork("eps").normal(shape)
    t = np.array([3, model.cfg.depth * 7 + 11])
    sched = make_linear_schedule(50)
    x_t = q_sample(x0, t, eps, sched)
    cond = [model.encode("red square top-left"), model.null_condition()]
    mask = None
    if model.inflated:
        mask = np.ones((frames, frames))
        mask[0, 1:] = 0.0  # exercise masked entries too

    def loss_fn():
        return eps_loss(model(x_t, t, cond, mask), eps)

    return check_gradients(loss_fn, dict(model.named_parameters()), n_samples, h, seed)


def suite_gradients(tol=GRAD_TOL, n_samples=64):
    out = []
    for label, variant, inflate in (
        ("adaln-zero block", ADALN_ZERO, False),
        ("cross-attention block", CROSS_ATTENTION, False),
        ("inflated T2V block", CROSS_ATTENTION, True),
    ):
        model = GenTron(desk_config(variant), seed=1)
        if inflate:
            model = inflate_t2i(model, seed=2)
        perturb(model, Rng(3))
        report = gradient_check(model, n_samples=n_samples)
        out.append(CheckResult(
            f"gradients/{label}", report.passed(tol) and len(report) >= n_samples,
            report.max_error, tol, f"{len(report)} scalars",
        ))
    return out


# -- schedule -------------------------------------------------------------

def suite_schedule(T=50, n=20000, seed=0):
    s = make_linear_schedule(T)
    ab = s.alpha_bar
    out = [
        CheckResult("schedule/alpha_bar strictly decreasing", bool(np.all(np.diff(ab) < 0)),
                    float(np.max(np.diff(ab))), 0.0),
        CheckResult("schedule/alpha_bar in (0, 1)", bool(np.all((ab > 0) & (ab < 1))),
                    float(ab[0]), 1.0),
        CheckResult("schedule/ends near pure noise", bool(ab[-1] < 1e-3), float(ab[-1]), 1e-3),
    ]
    # unit-variance data stays unit variance at every t
    rng = Rng(seed)
    x0 = rng.fork("x0").normal((n,))
    eps = rng.fork("eps").normal((n,))
    bound = 5.0 * np.sqrt(2.0 / n)
    worst = 0.0
    for t in range(T):
        worst = max(worst, abs(float(np.var(q_sample(x0, t, eps, s))) - 1.0))
    out.append(CheckResult("schedule/variance preserved", worst < bound, worst, bound))
    return out


# -- guidance -------------------------------------------------------------

def suite_guidance(seed=0):
    rng = Rng(seed)
    e00, etm, e0m = (rng.fork(k).normal((4, 8, 8, 4)) for k in ("e00", "etm", "e0m"))
    out = []

    def exact(name, a, b):
        diff = float(np.max(np.abs(a - b)))
        out.append(CheckResult(name, diff == 0.0, diff, 0.0))

    exact("guidance/mfg(1, 1) = eps(c_T, c_M)", mfg_epsilon(e00, etm, e0m, 1.0, 1.0), etm)
    exact("guidance/mfg(0, 0) = eps(null, null)", mfg_epsilon(e00, etm, e0m, 0.0, 0.0), e00)
    exact("guidance/cfg(1) = eps(c)", cfg_epsilon(etm, e00, 1.0), etm)
    exact("guidance/cfg(0) = eps(null)", cfg_epsilon(etm, e00, 0.0), e00)
    scalar = float(mfg_epsilon(1.0, 5.0, 3.0, 7.5, 1.2))
    out.append(CheckResult("guidance/scalar case", abs(scalar - 18.4) < 1e-12,
                           abs(scalar - 18.4), 1e-12, f"value {scalar!r}"))
    return out


# -- Gaussian oracle --------------------------------------------------------

def gaussian_eps_star(x_t, t, s, mu, std):
    """E[ε | x_t] when x_0 ~ N(mu, std² I)."""
    ab = s.alpha_bar[t]
    return np.sqrt(1.0 - ab) * (x_t - np.sqrt(ab) * mu) / (1.0 - ab * (1.0 - std ** 2))


def gaussian_eps_quadrature(x_t, ab, mu, std, n=20001, span=12.0):
    """Brute-force E[ε | x_t] for a scalar by integrating over ε on a grid."""
    e = np.linspace(-span, span, n)
    prior = np.exp(-0.5 * e * e)
    # x_t | ε ~ N(sqrt(ab)·mu + sqrt(1 - ab)·ε, ab·std²)
    resid = x_t - np.sqrt(ab) * mu - np.sqrt(1.0 - ab) * e
    like = np.exp(-0.5 * resid ** 2 / (ab * std ** 2))
    w = prior * like
    return float(np.sum(w * e) / np.sum(w))


def suite_gaussian_oracle(n=2000, T=50, seed=0, latent_shape=(2, 2, 1), std=0.5):
    s = make_linear_schedule(T)
    out = []
    worst = 0.0
    for ab in (0.999, 0.9, 0.5, 0.1, 0.01):
        for mu, x in ((0.7, 1.3), (-0.4, -2.0), (0.0, 0.25)):
            fake = type("S", (), {"alpha_bar": np.array([ab])})
            closed = float(gaussian_eps_star(x, 0, fake, mu, std))
            worst = max(worst, abs(closed - gaussian_eps_quadrature(x, ab, mu, std)))
    out.append(CheckResult("gaussian-oracle/closed form vs quadrature", worst < 1e-8, worst, 1e-8))

    rng = Rng(seed)
    mu = rng.fork("mu").uniform(latent_shape, -1.0, 1.0)
    samples = ddpm_sample_loop(
        lambda x, t: gaussian_eps_star(x, t, s, mu, std),
        (n,) + tuple(latent_shape), s, rng.fork("sampling"), dtype=np.float64,
    )
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(n)
    z = float(np.max(np.abs(mean - mu) / se))
    out.append(CheckResult("gaussian-oracle/sample mean within 3 SE", z < 3.0, z, 3.0,
                           f"{n} samples, T={T}"))
    sd_err = float(np.max(np.abs(samples.std(axis=0, ddof=1) - std)))
    sd_tol = 4.0 * std / np.sqrt(2 * (n - 1))
    out.append(CheckResult("gaussian-oracle/sample std", sd_err < sd_tol, sd_err, sd_tol))
    return out


# -- video identity ---------------------------------------------------------

def inflation_gap(t2i, frames=8, seed=0):
    """max |T2V(pseudo-video) − T2I(image)| right after inflation."""
    t2v = inflate_t2i(t2i, seed=seed)
    rng = Rng(seed).fork("inflation")
    image = rng.normal((2,) + t2i.cfg.latent_shape).astype(np.float32)
    clip = np.repeat(image[:, None], frames, axis=1)
    t = np.array([5, 30])
    cond = [t2i.encode("blue cross bottom-right"), t2i.null_condition()]
    with no_grad():
        ref = t2i(image, t, cond).numpy()
        vid = t2v(clip, t, cond).numpy()
    return float(np.max(np.abs(vid - ref[:, None])))


def motion_free_gap(t2v, frames=8, seed=0):
    """max |T2V(clip, identity mask) − per-frame single-frame forwards|."""
    rng = Rng(seed).fork("motion-free")
    clip = rng.normal((2, frames) + t2v.cfg.latent_shape).astype(np.float32)
    t = np.array([7, 41])
    cond = [t2v.encode("red cross top-right"), t2v.null_condition()]
    with no_grad():
        joint = t2v(clip, t, cond, motion_free_mask(frames)).numpy()
        single = np.stack([t2v(clip[:, f:f + 1], t, cond).numpy()[:, 0] for f in range(frames)], axis=1)
    return float(np.max(np.abs(joint - single)))


def suite_video_identity(seed=0):
    out = []
    for variant in (ADALN_ZERO, CROSS_ATTENTION):
        t2i = perturb(GenTron(desk_config(variant), seed=seed), Rng(seed + 1))
        gap = inflation_gap(t2i, seed=seed)
        out.append(CheckResult(f"video-identity/inflation ({variant})", gap < 1e-6, gap, 1e-6))
        t2v = perturb(inflate_t2i(t2i, seed=seed), Rng(seed + 2))
        gap = motion_free_gap(t2v, seed=seed)
        out.append(CheckResult(f"video-identity/motion-free mask ({variant})", gap < 1e-5, gap, 1e-5))
    return out


_RUNNERS = {
    "gradients": suite_gradients,
    "schedule": suite_schedule,
    "guidance": suite_guidance,
    "gaussian-oracle": suite_gaussian_oracle,
    "video-identity": suite_video_identity,
}


def run_suite(name):
    if name not in _RUNNERS:
        raise KeyError(f"unknown check suite {name!r}; expected one of {SUITES}")
    return _RUNNERS[name]()
