import numpy as np
import pytest

from simgap.noise import NoiseModel, corrupt, estimate_model, estimate_sigma

N = 16_384
F_S = 50.0


def test_white_noise_recovers_sigma():
    x = np.random.default_rng(0).normal(0, 0.01, N)
    assert estimate_sigma(x, F_S) == pytest.approx(0.01, rel=0.10)


def test_white_noise_monte_carlo_unbiased():
    rng = np.random.default_rng(1)
    est = [estimate_sigma(rng.normal(0, 0.01, 4096), F_S) ** 2 for _ in range(200)]
    assert np.mean(est) == pytest.approx(1e-4, rel=0.02)


def test_sinusoid_below_band_ignored():
    t = np.arange(N) / F_S
    x = np.random.default_rng(2).normal(0, 0.01, N) + 0.5 * np.sin(2 * np.pi * 3.0 * t) + 2.0
    assert estimate_sigma(x, F_S) == pytest.approx(0.01, rel=0.10)


def test_constant_signal_is_zero():
    assert estimate_sigma(np.full(1000, 3.7), F_S) == 0.0


def test_offset_and_scale():
    x = np.random.default_rng(3).normal(0, 1, 4096)
    s = estimate_sigma(x, F_S)
    assert estimate_sigma(x + 5.0, F_S) == pytest.approx(s, rel=1e-9)
    assert estimate_sigma(3 * x, F_S) == pytest.approx(3 * s, rel=1e-12)


@pytest.mark.parametrize("signal, f_s", [(np.zeros(10), 50.0), (np.zeros(100), 0.0)])
def test_bad_inputs(signal, f_s):
    with pytest.raises(ValueError):
        estimate_sigma(signal, f_s)


def test_corrupt_statistics_and_determinism():
    model = NoiseModel(("a", "b", "c"), np.array([0.0, 0.01, 0.5]), F_S)
    obs = np.zeros((100_000, 3))
    out = corrupt(obs, model, 9)
    assert np.array_equal(out[:, 0], obs[:, 0])
    np.testing.assert_allclose(out[:, 1:].std(axis=0), [0.01, 0.5], rtol=0.02)
    assert np.array_equal(out, corrupt(obs, model, 9))
    zero = NoiseModel(("a", "b", "c"), np.zeros(3), F_S)
    assert np.array_equal(corrupt(obs[:10] + 1.0, zero, 0), obs[:10] + 1.0)


def test_model_roundtrip_and_lookup(tmp_path):
    rng = np.random.default_rng(4)
    model = estimate_model({"q_0": rng.normal(0, 0.02, 2048), "qd_0": rng.normal(0, 0.2, 2048)}, F_S)
    model.save(tmp_path / "n.csv")
    assert NoiseModel.load(tmp_path / "n.csv") == model
    assert list(model.lookup(["qd_0", "missing"]))[1] == 0.0


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        NoiseModel(("a",), np.array([-1.0]), F_S)
