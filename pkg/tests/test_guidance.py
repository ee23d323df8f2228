import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gentron.checks import desk_config, perturb
from gentron.errors import ConfigError, ModeError
from gentron.guidance import (
    GuidanceConfig, cfg_epsilon, guided_eps_fn, mfg_epsilon, sample, sample_conditional,
)
from gentron.model import GenTron
from gentron.numerics.rng import Rng
from gentron.schedule import make_linear_schedule
from gentron.video import inflate_t2i

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_defaults():
    g = GuidanceConfig()
    assert g.lambda_T == 7.5 and 1.0 <= g.lambda_M <= 1.3
    with pytest.raises(ConfigError):
        GuidanceConfig(lambda_T=-1)


def test_cfg_examples():
    assert cfg_epsilon(2.0, 1.0, 7.5) == pytest.approx(8.5)


@given(finite, finite)
def test_cfg_telescoping_exact(c, u):
    assert cfg_epsilon(c, u, 1.0) == c
    assert cfg_epsilon(c, u, 0.0) == u


@given(finite, finite, finite)
def test_mfg_telescoping_exact(e00, etm, e0m):
    assert mfg_epsilon(e00, etm, e0m, 1.0, 1.0) == etm
    assert mfg_epsilon(e00, etm, e0m, 0.0, 0.0) == e00


def test_mfg_scalar_case():
    assert mfg_epsilon(1.0, 5.0, 3.0, 7.5, 1.2) == pytest.approx(18.4, abs=1e-12)


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_mfg_linear_in_each_scale(lt, lm):
    e00, etm, e0m = 0.3, -1.7, 2.2
    h = 1e-3
    d_t = (mfg_epsilon(e00, etm, e0m, lt + h, lm) - mfg_epsilon(e00, etm, e0m, lt - h, lm)) / (2 * h)
    d_m = (mfg_epsilon(e00, etm, e0m, lt, lm + h) - mfg_epsilon(e00, etm, e0m, lt, lm - h)) / (2 * h)
    assert d_t == pytest.approx(etm - e0m, abs=1e-6)
    assert d_m == pytest.approx(e0m - e00, abs=1e-6)


@pytest.fixture(scope="module")
def models():
    t2i = perturb(GenTron(desk_config(), seed=0), Rng(1))
    t2v = perturb(inflate_t2i(t2i), Rng(2))
    return t2i, t2v


def test_cfg_one_equals_conditional_sampling(models):
    t2i, _ = models
    s = make_linear_schedule(10)
    cond = t2i.encode("red square top-left")
    ta, tb = [], []
    a = sample(t2i, s, cond, GuidanceConfig(lambda_T=1.0), Rng(3), batch=2, trajectory=ta)
    b = sample_conditional(t2i, s, cond, Rng(3), batch=2, trajectory=tb)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(ta, tb)) and len(ta) == 11
    assert a.tobytes() == b.tobytes()


def test_mfg_one_one_equals_conditional_sampling(models):
    _, t2v = models
    s = make_linear_schedule(6)
    cond = t2v.encode("blue cross moving left")
    g = GuidanceConfig(lambda_T=1.0, lambda_M=1.0, motion_enabled=True)
    a = sample(t2v, s, cond, g, Rng(4), frames=3)
    b = sample_conditional(t2v, s, cond, Rng(4), frames=3)
    assert a.shape == (1, 3, 8, 8, 4) and a.tobytes() == b.tobytes()


def test_sampling_deterministic(models):
    t2i, _ = models
    s = make_linear_schedule(5)
    g = GuidanceConfig(lambda_T=4.0)
    conds = [t2i.encode("a"), t2i.encode("b")]
    a = sample(t2i, s, conds, g, Rng(5), batch=2)
    assert a.tobytes() == sample(t2i, s, conds, g, Rng(5), batch=2).tobytes()


def test_mode_mismatch(models):
    t2i, t2v = models
    s = make_linear_schedule(3)
    with pytest.raises(ModeError):
        sample(t2i, s, t2i.null_condition(), GuidanceConfig(motion_enabled=True), Rng(0))
    with pytest.raises(ModeError):
        sample(t2v, s, t2v.null_condition(), GuidanceConfig(), Rng(0))


def test_guided_eps_matches_bracket_and_leaves_params(models):
    _, t2v = models
    before = {n: p.data.copy() for n, p in t2v.named_parameters()}
    cond = t2v.encode("red cross")
    null = t2v.null_condition()
    g = GuidanceConfig(lambda_T=7.5, lambda_M=1.2, motion_enabled=True)
    x = Rng(6).normal((1, 3, 8, 8, 4)).astype(np.float32)
    eps = guided_eps_fn(t2v, cond, g, frames=3)(x, 4)
    e00 = t2v(x, 4, null, np.eye(3)).numpy()
    etm = t2v(x, 4, cond).numpy()
    e0m = t2v(x, 4, null).numpy()
    np.testing.assert_allclose(eps, mfg_epsilon(e00, etm, e0m, 7.5, 1.2), rtol=1e-6, atol=1e-6)
    for n, p in t2v.named_parameters():
        assert p.data.tobytes() == before[n].tobytes()
