import math

import numpy as np
import pytest

from fmtlab import theory
from fmtlab.empirics import (
    GaussianCorpus, McReport, crest_factor_stats, mc_qsnr_scatter, measure_qsnr,
    resolve_threads, stability_experiment, tensor_block_kappa,
)
from fmtlab.errors import ConfigError, DataError, ShapeError
from fmtlab.quant import RotationSpec


def test_measure_qsnr_examples():
    assert measure_qsnr([3.0, 4.0], [3.0, 3.0]) == pytest.approx(13.9794, abs=1e-4)
    assert measure_qsnr([1.0, 2.0], [1.0, 2.0]) == math.inf
    with pytest.raises(DataError):
        measure_qsnr([0.0, 0.0], [0.0, 0.0])
    with pytest.raises(ShapeError):
        measure_qsnr([1.0], [1.0, 2.0])


def test_measure_qsnr_scale_free():
    a = np.array([3.0, 4.0])
    b = np.array([3.0, 3.0])
    for f in (1e-300, 1e-160, 1e150):
        assert measure_qsnr(a * f, b * f) == pytest.approx(13.9794, abs=1e-4)


def test_crest_extremes():
    flat = np.ones((1, 32))
    spike = np.zeros((1, 32))
    spike[0, 3] = -5.0
    assert tensor_block_kappa(flat, 32)[0].tolist() == [1.0]
    assert tensor_block_kappa(spike, 32)[0][0] == pytest.approx(math.sqrt(32))
    k, zeros = tensor_block_kappa(np.zeros((2, 32)), 32)
    assert k.tolist() == [1.0, 1.0] and zeros == 2


def test_crest_per_channel():
    x = np.random.default_rng(0).standard_normal((3, 256))
    k, _ = tensor_block_kappa(x, -1)
    assert k.shape == (3,)
    with pytest.raises(ConfigError):
        tensor_block_kappa(x, 0)


def test_gaussian_mean_kappa():
    x = np.random.default_rng(0).standard_normal((31250, 32))
    stats = crest_factor_stats(x, 32)
    assert 2.2 <= stats.mean <= 2.8
    assert stats.count == 31250
    assert stats.min <= stats.q1 <= stats.median <= stats.q3 <= stats.max


def test_smaller_blocks_have_smaller_kappa():
    x = np.random.default_rng(0).standard_normal((64, 4096))
    means = [crest_factor_stats(x, g).mean for g in (16, 32, 64, -1)]
    assert means == sorted(means)


def test_corpus_determinism_and_independence():
    c = GaussianCorpus(n_tensors=3, shape=(4, 64), seed=9)
    np.testing.assert_array_equal(c.tensor(1), GaussianCorpus(3, (4, 64), 9).tensor(1))
    assert not np.array_equal(c.tensor(0), c.tensor(1))
    assert len(list(c)) == 3


def test_corpus_outliers():
    c = GaussianCorpus(n_tensors=1, shape=(4, 64), outlier_magnitude=20.0)
    runs = np.abs(c.tensor(0)).reshape(-1, 32)
    assert np.all(runs.max(1) == 20.0)
    with pytest.raises(ConfigError):
        GaussianCorpus(1, (4, 48), outlier_magnitude=2.0).tensor(0)


def test_rotation_lowers_kappa_on_outliers():
    c = GaussianCorpus(n_tensors=4, shape=(16, 128), outlier_magnitude=20.0)
    before = crest_factor_stats(list(c), 32)
    after = crest_factor_stats(list(c), 32, rotation=RotationSpec(32))
    assert after.mean < before.mean
    assert after.q3 < before.q3


def test_mc_scatter_rates_and_threads():
    c = GaussianCorpus(n_tensors=6, shape=(8, 128), seed=3)
    one = mc_qsnr_scatter(("MXINT8", "MXFP8"), c, threads=1)
    two = mc_qsnr_scatter(("MXINT8", "MXFP8"), c, threads=2)
    np.testing.assert_array_equal(one.qsnr_a, two.qsnr_a)
    np.testing.assert_array_equal(one.kappa, two.kappa)
    assert one.win_rate_a + one.win_rate_b + one.tie_rate == pytest.approx(1.0)
    # Gaussian data sits far below the 8-bit crossover: INT wins everywhere
    assert one.win_rate_a == 1.0
    assert one.summary()["tensors"] == 6


def test_mc_tracks_int_theory():
    c = GaussianCorpus(n_tensors=4, shape=(16, 256), seed=1)
    rep = mc_qsnr_scatter(("MXINT8", "MXFP8"), c, threads=1)
    pred = theory.qsnr_int_ue8m0(8, rep.rho_a, rep.kappa)
    assert np.all(np.abs(rep.qsnr_a - pred) < 1.5)


def test_mc_csv():
    rep = McReport("A", "B", np.array([2.0]), np.array([30.0]), np.array([31.0]),
                   np.array([1.4]), np.array([1.3]))
    lines = rep.to_csv().splitlines()
    assert lines[0] == "tensor_id,kappa,qsnr_A,qsnr_B"
    assert lines[1] == "0,2.0,30.0,31.0"
    assert rep.win_rate_b == 1.0


def test_threads_env(monkeypatch):
    monkeypatch.setenv("FMTLAB_THREADS", "3")
    assert resolve_threads() == 3
    assert resolve_threads(1) == 1
    with pytest.raises(ConfigError):
        resolve_threads(0)


def test_stability_small():
    r = stability_experiment(256, "bf16", seed=0)
    assert 0.10 < r.ratio < 0.25
    assert r.count_pos + r.count_neg == round(r.ratio * 256 * 256)
    assert r.codes_at_qmin == r.count_neg
    sym = stability_experiment(256, "bf16", seed=0, symmetric_clip=True)
    assert sym.codes_at_qmin == 0 and sym.ratio == r.ratio
    assert stability_experiment(256, "fp32").ratio == 0.0


def test_stability_deterministic():
    assert stability_experiment(128, "fp16", seed=4) == stability_experiment(128, "fp16", seed=4)
    with pytest.raises(ConfigError):
        stability_experiment(0)
