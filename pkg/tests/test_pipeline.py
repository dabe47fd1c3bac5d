import numpy as np
import pytest

from flamemodes import formats, model, pipeline, synth
from flamemodes.exceptions import ConfigError, DataError, InputError, NumericError, TrainingError
from flamemodes.pipeline import AdamState, TrainConfig
from flamemodes.records import OperatingPoint, PressureRecord


def sine_record(n=1000, rate=5000.0, f=400.0, seed=0, noise=0.01):
    rng = np.random.default_rng(seed)
    t = np.arange(n) / rate
    angles = synth.SensorArray().channel_angles - np.pi / 8
    x = np.cos(angles)[None, :] * np.cos(2 * np.pi * f * t)[:, None]
    return PressureRecord(x + noise * rng.standard_normal(x.shape), rate, case_id="sine")


def tiny_config(**kw):
    base = dict(window_len=10, stride=5, hidden1=3, hidden2=2, batch_size=8, max_epochs=5, patience=3)
    base.update(kw)
    return TrainConfig(**base)


def test_config_defaults_match_protocol():
    cfg = TrainConfig()
    assert (cfg.max_epochs, cfg.patience, cfg.beta, cfg.learning_rate) == (5000, 100, 1.0, 1e-3)
    assert (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps) == (0.9, 0.999, 1e-8)


@pytest.mark.parametrize("bad", [dict(window_len=7), dict(stride=0), dict(val_fraction=1.0), dict(patience=0),
                                 dict(adam_beta1=1.0), dict(learning_rate=-1.0)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad)


def test_config_from_dict_casts_and_rejects_unknown():
    cfg = TrainConfig.from_dict({"window_len": "50", "learning_rate": "0.01"})
    assert cfg.window_len == 50 and cfg.learning_rate == 0.01
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError, match="bogus"):
        TrainConfig.from_dict({"bogus": 1})


# ---------------------------------------------------------------------------
# windows and normalisation
# ---------------------------------------------------------------------------

def test_window_counts():
    assert pipeline.window_count(40000, 200, 100) == 399
    assert pipeline.window_count(50, 50, 7) == 1
    assert pipeline.window_count(1000, 50, 50) == 20
    assert pipeline.window_count(10, 50, 5) == 0


def test_make_windows_positions():
    x = np.arange(30 * 16, dtype=float).reshape(30, 16)
    w = pipeline.make_windows(x, 10, 7)
    assert w.shape == (3, 10, 16)
    for k in range(3):
        np.testing.assert_array_equal(w[k], x[7 * k: 7 * k + 10])
    assert pipeline.make_windows(x, 30, 4).shape == (1, 30, 16)
    with pytest.raises(InputError):
        pipeline.make_windows(x, 31, 1)


def test_normalizer_zscores_training_windows():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((20, 10, 16)) * rng.uniform(0.1, 10, 16) + rng.uniform(-5, 5, 16)
    norm = pipeline.normalize_fit(w)
    z = pipeline.normalize_apply(norm, w).reshape(-1, 16)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(z.var(axis=0) - 1.0) < 1e-6)


def test_normalizer_rejects_constant_channel():
    w = np.random.default_rng(1).standard_normal((5, 10, 16))
    w[:, :, 7] = 3.0
    with pytest.raises(DataError, match="ch07"):
        pipeline.normalize_fit(w)


def test_split_takes_last_windows_per_case():
    recs = [sine_record(seed=s) for s in range(2)]
    ws = pipeline.split_windows(recs, 50, 25, 0.2)
    assert ws.train_counts == [31, 31] and ws.val_counts == [8, 8]
    last = pipeline.make_windows(recs[1], 50, 25)[-8:]
    np.testing.assert_array_equal(ws.val[8:], last)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def make_store(value):
    from flamemodes.numgrad import ParamStore
    return ParamStore({"w": np.array(value, dtype=float)})


def test_adam_zero_gradient_keeps_parameters():
    p = make_store([1.0, -2.0])
    pipeline.adam_step(p, {"w": np.zeros(2)}, AdamState(), TrainConfig())
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


@pytest.mark.parametrize("g", [1e-3, 0.5, 7.0])
def test_adam_first_step_is_sign_step(g):
    cfg = TrainConfig(learning_rate=1e-3)
    p = make_store([0.0, 0.0])
    pipeline.adam_step(p, {"w": np.array([g, -g])}, AdamState(), cfg)
    step = 1e-3 * g / (g + 1e-8)
    np.testing.assert_allclose(p["w"], [-step, step], rtol=1e-12)
    assert step == pytest.approx(1e-3, rel=1e-5)


def test_adam_matches_reference_update():
    cfg = TrainConfig(learning_rate=0.01)
    rng = np.random.default_rng(3)
    p = make_store(rng.standard_normal(4))
    theta = p["w"].copy()
    m = np.zeros(4)
    v = np.zeros(4)
    state = AdamState()
    for t in range(1, 6):
        g = rng.standard_normal(4)
        pipeline.adam_step(p, {"w": g}, state, cfg)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta = theta - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p["w"], theta, rtol=1e-14, atol=1e-15)
    assert state.t == 5


def test_adam_is_deterministic_and_rejects_nan():
    a, b = make_store([0.3]), make_store([0.3])
    sa, sb = AdamState(), AdamState()
    for g in (0.1, -0.4, 0.2):
        pipeline.adam_step(a, {"w": np.array([g])}, sa, TrainConfig())
        pipeline.adam_step(b, {"w": np.array([g])}, sb, TrainConfig())
    assert a["w"].tobytes() == b["w"].tobytes()
    with pytest.raises(NumericError):
        pipeline.adam_step(a, {"w": np.array([np.nan])}, sa, TrainConfig())


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def test_zero_learning_rate_stops_after_patience_plus_one():
    recs = [sine_record(200)]
    res = pipeline.train(tiny_config(learning_rate=0.0, patience=4, max_epochs=50), recs)
    assert len(res.history) == 5
    assert res.stopped_early and res.best_epoch == 1
    assert len({v for _, v in res.history}) == 1


def test_epoch_limit_respected_without_early_stop():
    res = pipeline.train(tiny_config(max_epochs=3, patience=100), [sine_record(200)])
    assert len(res.history) == 3 and not res.stopped_early


def test_best_epoch_has_lowest_validation_loss():
    res = pipeline.train(tiny_config(max_epochs=12, learning_rate=0.02), [sine_record(300)])
    vals = [v for _, v in res.history]
    assert vals[res.best_epoch - 1] == min(vals)
    # the checkpoint holds the best epoch's parameters
    ws = pipeline.split_windows([sine_record(300)], 10, 5, 0.2)
    x_val = res.checkpoint.normalizer.apply(ws.val)
    assert pipeline.evaluate(x_val, res.checkpoint.params, 1.0) == vals[res.best_epoch - 1]


def test_evaluate_does_not_touch_parameters():
    p = model.init_params(3, 2, seed=0)
    before = formats.checkpoint_bytes(formats.Checkpoint(p, formats.Normalizer(np.zeros(16), np.ones(16)), 3, 2, 10, 5))
    pipeline.evaluate(np.random.default_rng(0).standard_normal((4, 10, 16)), p, 1.0)
    after = formats.checkpoint_bytes(formats.Checkpoint(p, formats.Normalizer(np.zeros(16), np.ones(16)), 3, 2, 10, 5))
    assert before == after


def test_training_is_byte_deterministic():
    cfg = tiny_config(max_epochs=4)
    recs = [sine_record(200, seed=4)]
    a = formats.checkpoint_bytes(pipeline.train(cfg, recs).checkpoint)
    b = formats.checkpoint_bytes(pipeline.train(cfg, recs).checkpoint)
    assert a == b
    c = formats.checkpoint_bytes(pipeline.train(tiny_config(max_epochs=4, seed=1), recs).checkpoint)
    assert a != c


def test_training_errors():
    with pytest.raises(TrainingError):
        pipeline.train(tiny_config(), pipeline.WindowSet(np.zeros((0, 10, 16)), np.zeros((0, 10, 16))))
    with pytest.raises(InputError):
        pipeline.train(tiny_config(window_len=300), [sine_record(200)])


def test_non_finite_loss_reports_epoch(monkeypatch):
    real = model.forward_backward
    calls = {"n": 0}

    def flaky(*args, **kw):
        calls["n"] += 1
        total, mse, kl, grads = real(*args, **kw)
        if calls["n"] > 1:  # one batch per epoch here
            grads["head_out.b"][...] = np.nan
        return total, mse, kl, grads

    monkeypatch.setattr(model, "forward_backward", flaky)
    with pytest.raises(TrainingError, match="epoch 2"):
        pipeline.train(tiny_config(batch_size=32), [sine_record(200)])


def test_sine_training_reduces_loss_and_reconstructs():
    rec = sine_record(1000)
    cfg = TrainConfig(window_len=50, stride=25, max_epochs=200, patience=200, seed=0)
    res = pipeline.train(cfg, [rec])
    first, last = res.history[0][0], res.history[-1][0]
    assert last < 0.3 * first
    # decoder output tracks the held-out windows
    ws = pipeline.split_windows([rec], 50, 25, 0.2)
    x = res.checkpoint.normalizer.apply(ws.val)
    mu, _ = model.encode_batch(x, res.checkpoint.params)
    x_hat = model.decode_batch(mu, 50, res.checkpoint.params)
    corr = np.corrcoef(x.ravel(), x_hat.ravel())[0, 1]
    assert corr > 0.9
