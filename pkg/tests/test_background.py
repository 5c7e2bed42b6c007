import numpy as np
import pytest

from aerowatch.background import (AgmmConfig, MixtureModel, agmm_reset, agmm_update,
                                  agmm_update_reference)


def _static(rng, n=100, shape=(40, 50)):
    base = rng.integers(40, 200, shape).astype(float)
    return [np.clip(base + rng.normal(0, 1.0, shape), 0, 255) for _ in range(n)]


def test_static_video_goes_quiet(rng):
    model = MixtureModel()
    masks = [agmm_update(model, f) for f in _static(rng)]
    assert masks[0].all()
    assert not masks[-1].any()
    assert set(np.unique(np.concatenate([m.ravel() for m in masks]))) <= {0, 255}


def test_bright_square_is_foreground(rng):
    model = MixtureModel()
    frames = _static(rng)
    for f in frames:
        agmm_update(model, f)
    f = frames[-1].copy()
    f[10:30, 15:35] = 255
    mask = agmm_update(model, f)
    ys, xs = np.nonzero(mask)
    assert ys.min() == 10 and ys.max() == 29 and xs.min() == 15 and xs.max() == 34
    assert mask.sum() // 255 == 400


def test_reset_restores_cold_model(rng):
    model = MixtureModel()
    frames = _static(rng, 30)
    for f in frames:
        agmm_update(model, f)
    agmm_reset(model)
    assert model.frames_seen == 0
    assert agmm_update(model, frames[0]).all()


def test_dimension_mismatch(rng):
    model = MixtureModel()
    agmm_update(model, np.zeros((10, 10)))
    with pytest.raises(ValueError):
        agmm_update(model, np.zeros((10, 11)))


def test_model_invariants(rng):
    model = MixtureModel()
    cfg = model.config
    frames = _static(rng, 40)
    for t, f in enumerate(frames):
        if t % 7 == 3:
            f = f.copy()
            f[5:15, 5:15] = rng.integers(0, 256, (10, 10))
        agmm_update(model, f)
        assert np.all(model.weight >= 0)
        assert np.all(model.weight.sum(axis=0) <= 1 + 1e-9)
        active = model.weight > 0
        assert np.all(model.var[active] >= cfg.var_min - 1e-9)
        assert np.all(model.var[active] <= cfg.var_max + 1e-9)
    assert model.learning_rate == pytest.approx(max(1 / 41, 1 / cfg.history))


def test_kernel_matches_numpy_reference(rng):
    a, b = MixtureModel(), MixtureModel()
    shape = (24, 30)
    base = rng.integers(30, 220, shape).astype(float)
    for t in range(80):
        f = base + rng.normal(0, 2.0, shape)
        if 20 <= t < 50:
            f[4:14, 6:18] = rng.integers(200, 256, (10, 12))
        if t % 11 == 0:
            f += rng.integers(-30, 30)
        f = np.clip(f, 0, 255)
        assert np.array_equal(agmm_update(a, f), agmm_update_reference(b, f))
        assert np.allclose(a.weight, b.weight) and np.allclose(a.mean, b.mean)
        assert np.allclose(a.var, b.var)


def test_config_from_dict():
    assert AgmmConfig.from_dict({"history": 100}).history == 100
    with pytest.raises(ValueError):
        AgmmConfig.from_dict({"bogus": 1})
