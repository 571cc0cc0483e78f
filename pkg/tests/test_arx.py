import numpy as np
import pytest

from greenloop.dataset import Episode, make_windows
from greenloop.predictors import ArxModel, SingularDesignError, arx_predict, fit_arx
from greenloop.predictors.arx import design_from_windows

TRUE_A = np.array([0.5, 0.2, 0.1])
TRUE_BH = np.array([1.2, 0.3, -0.1])
TRUE_BF = np.array([-0.8, -0.2, 0.1])


def synth_episode(n=300, seed=0, a=TRUE_A, b_h=TRUE_BH, b_f=TRUE_BF, T0=25.0):
    """Series generated exactly by a known ARX(3,3) with grid controls."""
    rng = np.random.default_rng(seed)
    u_h = rng.integers(0, 21, size=n) * 0.05
    u_f = rng.integers(0, 2, size=n)
    T = np.empty(n)
    T[:3] = [T0, T0 - 1.0, T0 + 0.5]
    for t in range(2, n - 1):
        T[t + 1] = (
            a @ T[t - 2 : t + 1][::-1]
            + b_h @ u_h[t - 2 : t + 1][::-1]
            + b_f @ u_f[t - 2 : t + 1][::-1].astype(float)
        )
    return Episode(
        id="arx-synth", start="2025-03-01 12:00:00",
        t=np.arange(n) * 60.0, T=T, T_amb=np.full(n, 22.6), u_h=u_h, u_f=u_f,
    )


def sse(model, samples):
    X, y = design_from_windows(samples, model.p, model.q)
    theta = np.concatenate([model.a, model.b_h, model.b_f])
    resid = X @ theta - y
    return float(resid @ resid)


def test_fit_recovers_known_coefficients():
    samples = make_windows(synth_episode(), lookback=10)
    model = fit_arx(samples, p=3, q=3)
    assert np.allclose(model.a, TRUE_A, atol=1e-6)
    assert np.allclose(model.b_h, TRUE_BH, atol=1e-6)
    assert np.allclose(model.b_f, TRUE_BF, atol=1e-6)


def test_fit_constant_series_identity_dynamics():
    n = 60
    rng = np.random.default_rng(1)
    ep = Episode(
        id="const", start="2025-03-01 12:00:00",
        t=np.arange(n) * 60.0, T=np.full(n, 27.0), T_amb=np.full(n, 22.6),
        u_h=rng.integers(0, 21, size=n) * 0.05, u_f=rng.integers(0, 2, size=n),
    )
    samples = make_windows(ep, lookback=10)
    model = fit_arx(samples, p=1, q=1)
    assert model.a[0] == pytest.approx(1.0, abs=1e-9)
    assert model.b_h[0] == pytest.approx(0.0, abs=1e-9)
    assert model.b_f[0] == pytest.approx(0.0, abs=1e-9)
    assert sse(model, samples) == pytest.approx(0.0, abs=1e-16)


def test_fit_underdetermined_raises():
    samples = make_windows(synth_episode(n=12), lookback=10)
    assert len(samples) == 2
    with pytest.raises(ValueError, match="cannot determine"):
        fit_arx(samples, p=3, q=3)


def test_fit_rank_deficient_names_columns():
    ep = synth_episode(n=120)
    ep.u_f[:] = 0  # fan never toggles: its columns are identically zero
    samples = make_windows(ep, lookback=10)
    with pytest.raises(SingularDesignError) as exc:
        fit_arx(samples, p=2, q=2)
    assert all("u_f" in c for c in exc.value.columns)


def test_predict_direct_substitution():
    model = ArxModel(a=[1.0], b_h=[2.0], b_f=[-1.0])
    assert arx_predict(model, [27.0], [0.5], [0.0]) == pytest.approx(28.0)


def test_predict_zero_model():
    model = ArxModel(a=[0.0, 0.0], b_h=[0.0], b_f=[0.0])
    assert arx_predict(model, [27.0, 30.0], [1.0], [1.0]) == 0.0


def test_predict_matches_dot_product_oracle():
    rng = np.random.default_rng(2)
    model = ArxModel(a=rng.normal(size=4), b_h=rng.normal(size=3), b_f=rng.normal(size=3))
    T_hist = rng.normal(25, 3, size=6)      # most recent last
    u_h = rng.uniform(0, 1, size=6)
    u_f = rng.integers(0, 2, size=6).astype(float)
    expected = 0.0
    for i in range(4):
        expected += model.a[i] * T_hist[-1 - i]
    for j in range(3):
        expected += model.b_h[j] * u_h[-1 - j] + model.b_f[j] * u_f[-1 - j]
    assert arx_predict(model, T_hist, u_h, u_f) == pytest.approx(expected, rel=1e-12)


def test_predict_short_history_raises():
    model = ArxModel(a=[0.5, 0.5], b_h=[0.1], b_f=[0.1])
    with pytest.raises(ValueError, match="at least"):
        arx_predict(model, [27.0], [0.5], [0.0])


def test_fitted_coefficients_are_a_local_sse_minimum():
    samples = make_windows(synth_episode(seed=5), lookback=10)
    model = fit_arx(samples, p=3, q=3)
    base = sse(model, samples)
    theta = np.concatenate([model.a, model.b_h, model.b_f])
    for k in range(len(theta)):
        for delta in (1e-3, -1e-3):
            perturbed = theta.copy()
            perturbed[k] += delta
            m = ArxModel(a=perturbed[:3], b_h=perturbed[3:6], b_f=perturbed[6:])
            assert sse(m, samples) >= base - 1e-12
