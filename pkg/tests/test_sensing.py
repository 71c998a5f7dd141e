import numpy as np
import pytest

from flowbench.dataio import SnapshotMatrix
from flowbench.errors import ConditioningError, InsufficientHistoryError, UndefinedMetricError
from flowbench.sensing import (
    ProbeSpec,
    SensingConfig,
    gaussian_probe,
    lse_apply,
    lse_fit,
    probe_weights,
    run_sensing_pipeline,
    sensing_nmse,
)
from flowbench.synthetic import GeneratorConfig, gen_causal_fir_pair


def test_probe_weights_normalized_and_centered():
    W = probe_weights((21, 11), ProbeSpec([(10, 5)], sigma=2.0))
    assert W.shape == (1, 21, 11)
    assert W.sum() == pytest.approx(1.0)
    assert np.unravel_index(np.argmax(W[0]), W[0].shape) == (10, 5)


def test_probe_of_constant_field():
    s = SnapshotMatrix(np.full((4, 1, 9, 9), 3.0), 1.0)
    y = gaussian_probe(s, ProbeSpec([(2, 2), (6, 4)], sigma=1.5))
    np.testing.assert_allclose(y, 3.0)


def test_probe_outside_grid():
    with pytest.raises(ValueError):
        probe_weights((5,), ProbeSpec([(7,)], sigma=1.0))


def test_lse_exact_linear_map(rng):
    M = rng.standard_normal((3, 4))
    Y = rng.standard_normal((4, 300)) + 2.0
    Z = M @ Y + 1.0
    model = lse_fit(Y, Z)
    np.testing.assert_allclose(model.transfer, M, atol=1e-10)
    np.testing.assert_allclose(lse_apply(model, Y), Z, atol=1e-10)
    np.testing.assert_allclose(lse_apply(model, Y[:, 0]), Z[:, 0], atol=1e-10)


def test_lse_conditioning():
    Y = np.vstack([np.arange(10.0), np.arange(10.0)])
    with pytest.raises(ConditioningError):
        lse_fit(Y, Y[:1])
    lse_fit(Y, Y[:1], noise_level=1e-3)


def test_sensing_nmse_identities(rng):
    z = rng.standard_normal((3, 50))
    assert sensing_nmse(z, z) == 0.0
    assert sensing_nmse(z, np.zeros_like(z)) == 1.0
    assert sensing_nmse(z, 2 * z) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(sensing_nmse(z, z, per_target=True), 0)
    with pytest.raises(UndefinedMetricError):
        sensing_nmse(np.zeros((1, 4)), np.ones((1, 4)))


@pytest.fixture(scope="module")
def fir():
    cfg = {"a": 0.6, "kernels": [[0.5, 0.4, 0.2]], "anticausal": [[0.6]], "n_samples": 12000}
    return gen_causal_fir_pair(GeneratorConfig("causal_fir_pair", 8, cfg))


def test_pipeline_ordering(fir):
    cfg = SensingConfig(history=50, block=256, overlap=0.75)
    split = 9000
    res = {}
    for method in ("lse", "wiener_causal", "wiener_noncausal"):
        out = run_sensing_pipeline(fir.y[:, :split], fir.z[:, :split], fir.y[:, split:], method, cfg, fir.z[:, split:])
        assert out.estimates.shape == (1, 3000 - 50)
        assert out.warmup_offset == 50
        res[method] = float(out.report.metrics["nmse_total"])
    assert res["wiener_noncausal"] < res["wiener_causal"] < res["lse"]


def test_pipeline_insufficient_history(fir):
    with pytest.raises(InsufficientHistoryError):
        run_sensing_pipeline(fir.y, fir.z, fir.y[:, :100], "wiener_causal", SensingConfig(history=200))


def test_pipeline_unknown_method(fir):
    with pytest.raises(ValueError, match="unknown"):
        run_sensing_pipeline(fir.y, fir.z, fir.y, "kalman")


def test_probe_delta_limit():
    field = np.zeros((1, 1, 21, 21))
    field[0, 0, 10, 10] = 1.0
    s = SnapshotMatrix(field, 1.0)
    vals = [gaussian_probe(s, ProbeSpec([(10, 10)], sigma=sg))[0, 0] for sg in (1.0, 0.5, 0.25)]
    assert vals[0] < vals[1] < vals[2] <= 1.0
    assert vals[2] == pytest.approx(1.0, abs=2e-3)


def test_probe_linear_field_symmetry():
    x = np.arange(-10.0, 11.0)
    field = np.broadcast_to(x[:, None], (21, 9))[None, None].copy()
    spec = ProbeSpec([(1.5, 0.0)], sigma=1.3, coords=[x, np.arange(-4.0, 5.0)])
    val = gaussian_probe(SnapshotMatrix(field, 1.0), spec)[0, 0]
    W = probe_weights((21, 9), spec)[0]
    assert val == pytest.approx(np.sum(W * field[0, 0]), abs=1e-14)
    assert val == pytest.approx(1.5, abs=1e-10)


def test_lse_examples(rng):
    Y = rng.standard_normal((3, 200))
    np.testing.assert_allclose(lse_fit(Y, Y).transfer, np.eye(3), atol=1e-10)
    y = rng.standard_normal(200)
    assert lse_fit(y, 2 * y).transfer[0, 0] == pytest.approx(2.0, rel=1e-12)


def test_lse_scalar_shrinkage(rng):
    y = rng.standard_normal(500)
    z = 0.7 * y + 0.2 * rng.standard_normal(500)
    yc, zc = y - y.mean(), z - z.mean()
    c_yy, c_zy = np.mean(yc * yc), np.mean(zc * yc)
    level = 0.3
    expected = c_zy / (c_yy + level**2 * c_yy)
    assert lse_fit(y, z, level).transfer[0, 0] == pytest.approx(expected, rel=1e-12)


def test_lse_shrinkage_monotone(rng):
    Y = rng.standard_normal((4, 300))
    Z = rng.standard_normal((2, 4)) @ Y + 0.1 * rng.standard_normal((2, 300))
    norms = [np.linalg.norm(lse_fit(Y, Z, lv).transfer, 2) for lv in (0.0, 0.1, 0.5, 1.0, 3.0)]
    assert np.all(np.diff(norms) <= 1e-12)


def test_lse_optimal_against_perturbations(rng):
    Y = rng.standard_normal((4, 300))
    Z = rng.standard_normal((2, 4)) @ Y + 0.1 * rng.standard_normal((2, 300))
    model = lse_fit(Y, Z)

    def mse(T):
        return np.mean((T @ (Y - model.y_mean[:, None]) + model.z_mean[:, None] - Z) ** 2)

    base = mse(model.transfer)
    scale = np.linalg.norm(model.transfer)
    for _ in range(20):
        R = rng.standard_normal(model.transfer.shape)
        assert base <= mse(model.transfer + 1e-3 * scale * R / np.linalg.norm(R))


def test_lse_apply_examples(rng):
    Y = rng.standard_normal((3, 100)) + 1.0
    Z = rng.standard_normal((2, 3)) @ Y + 0.5
    model = lse_fit(Y, Z)
    np.testing.assert_allclose(lse_apply(model, model.y_mean), model.z_mean, atol=1e-12)
    y = rng.standard_normal(3)
    np.testing.assert_allclose(lse_apply(model, y), model.transfer @ (y - model.y_mean) + model.z_mean)
    ident = lse_fit(Y, Y)
    np.testing.assert_allclose(lse_apply(ident, y), y, atol=1e-10)


def test_sensing_nmse_zero_per_channel(rng):
    z = rng.standard_normal((3, 40))
    np.testing.assert_array_equal(sensing_nmse(z, np.zeros_like(z), per_target=True), 1.0)


def test_reference_values_recorded():
    from flowbench.sensing import REFERENCE_NMSE

    assert REFERENCE_NMSE == {"lse": 0.912, "cnn": 0.239}


def test_lse_pipeline_identity(rng):
    y = rng.standard_normal((2, 400))
    out = run_sensing_pipeline(y[:, :300], y[:, :300], y[:, 300:], "lse", SensingConfig(history=0, noise_level=0.0), y[:, 300:])
    assert out.report.metrics["nmse_total"] <= 1e-10


def test_causal_pipeline_noise_floor():
    pair = gen_causal_fir_pair(GeneratorConfig("causal_fir_pair", 1, {"n_samples": 40000, "noise_level": 1e-3}))
    out = run_sensing_pipeline(pair.y[:, :30000], pair.z[:, :30000], pair.y[:, 30000:], "wiener_causal",
                               SensingConfig(), pair.z[:, 30000:])
    from flowbench.spectral import analytic_mse, causal_wiener

    csd = pair.analytic_csd(400)
    floor = analytic_mse(causal_wiener(csd), csd.S_zz, csd.S_zy, csd.S_yy) / np.mean(csd.S_zz[:, 0, 0].real)
    per = out.report.metrics["nmse_per_target"]
    assert np.all(per <= floor + 1e-3)
    assert np.all(per <= 2 * floor)
