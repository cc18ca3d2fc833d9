import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from specdm.data import Dataset, DatasetManifest, SynthLandConfig, generate_synthland, oracle_spectra
from specdm.errors import ValidationError
from specdm.evaluation import (FeatureExtractor, band_stats_features, calibrate_change_threshold,
                               change_agreement, distribution_divergence, evaluate, export_profiles, fid,
                               fid_mask, fit_gaussian, frechet_gaussian, mask_features, msad, read_profiles,
                               spectral_profiles, write_report)
from specdm.vae import sad


def _noiseless(seed, n=30, **kw):
    return generate_synthland(SynthLandConfig(n_samples=n, H=8, W=8, spectrum_noise_std=0.0, seed=seed, **kw))


@pytest.fixture(scope="module")
def clean():
    return _noiseless(3)


def _ss(images, masks, K):
    N, H, W, C = images.shape
    man = DatasetManifest("SS", K, C, H, W, [f"c{k}" for k in range(K)], N)
    return Dataset(man, masks.astype(np.int32), images=images.astype(np.float32))


# -- Fréchet ----------------------------------------------------------

def test_frechet_self_distance():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((5, 5))
    cov = A @ A.T
    mu = rng.standard_normal(5)
    assert frechet_gaussian(mu, cov, mu, cov) == pytest.approx(0.0, abs=1e-8)


def test_frechet_1d_analytic():
    assert frechet_gaussian([0.0], [[1.0]], [3.0], [[4.0]]) == pytest.approx(10.0, abs=1e-8)


def test_frechet_isotropic():
    mu2 = np.array([1.0, 2.0, 0.0])
    assert frechet_gaussian(np.zeros(3), np.eye(3), mu2, np.eye(3)) == pytest.approx(5.0, abs=1e-10)


@given(st.integers(1, 6), st.integers(0, 2**31))
def test_frechet_symmetric_nonnegative(d, seed):
    rng = np.random.default_rng(seed)
    A, B = rng.standard_normal((d, d)), rng.standard_normal((d, d + 2))
    m1, m2 = rng.standard_normal(d), rng.standard_normal(d)
    ab = frechet_gaussian(m1, A @ A.T, m2, B @ B.T)
    ba = frechet_gaussian(m2, B @ B.T, m1, A @ A.T)
    assert ab >= 0
    assert ab == pytest.approx(ba, abs=1e-8 * max(1.0, ab))


def test_frechet_handles_slightly_negative_cov():
    cov = np.diag([1.0, -1e-12])
    assert frechet_gaussian([0, 0], cov, [0, 0], cov) == pytest.approx(0.0, abs=1e-8)


def test_frechet_dimension_mismatch():
    with pytest.raises(ValidationError):
        frechet_gaussian(np.zeros(2), np.eye(2), np.zeros(3), np.eye(3))


def test_fit_gaussian_population_cov_and_shrinkage():
    F = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
    mu, cov = fit_gaussian(F)
    np.testing.assert_allclose(mu, [1, 1])
    np.testing.assert_allclose(cov, np.eye(2))
    with pytest.warns(RuntimeWarning):
        _, cov = fit_gaussian(F[:2])
    assert np.all(np.linalg.eigvalsh(cov) > 0)
    with pytest.raises(ValidationError):
        fit_gaussian(np.zeros((0, 3)))


# -- feature extractors ------------------------------------------------

def test_band_stats_dimension(clean):
    f = band_stats_features(clean.images)
    assert f.shape == (len(clean), 3 * clean.manifest.C - 1)
    np.testing.assert_array_equal(f, band_stats_features(clean.images))


def test_mask_features_constant_mask():
    f = mask_features(np.zeros((1, 3, 3), np.int32), 2)
    # frequencies [1, 0]; co-occurrence (0,0), (0,1), (1,1)
    np.testing.assert_allclose(f[0], [1, 0, 1, 0, 0])


def test_extractor_validation():
    with pytest.raises(ValidationError):
        FeatureExtractor("inception")
    with pytest.raises(ValidationError):
        FeatureExtractor("codec_latent_pool")
    ext = FeatureExtractor("external", fn=lambda X: X.reshape(len(X), -1)[:, :3])
    assert ext(np.ones((2, 2, 2, 2))).shape == (2, 3)


# -- fid ---------------------------------------------------------------

def test_fid_self_and_permutation(clean):
    assert fid(clean, clean) == pytest.approx(0.0, abs=1e-6)
    perm = clean.subset(np.random.default_rng(0).permutation(len(clean)))
    assert fid(clean, perm) == pytest.approx(0.0, abs=1e-6)
    assert fid_mask(clean, perm) == pytest.approx(0.0, abs=1e-6)


def test_fid_duplication_robust(clean):
    other = _noiseless(4)
    doubled = clean.concat(clean)
    assert abs(fid(doubled, other) - fid(clean, other)) < 1e-6


def test_fid_ordering_oracle():
    a = _noiseless(10, n=60)
    # same class spectra, fresh layouts and illumination
    rng = np.random.default_rng(1)
    spectra = oracle_spectra(a)
    masks = rng.integers(0, 4, size=a.masks.shape)
    scale = rng.uniform(0.85, 1.15, size=(*masks.shape, 1))
    b = _ss(spectra[masks] * scale, masks, 4)
    c = _noiseless(99, n=60)
    assert not np.allclose(oracle_spectra(c), spectra)
    assert fid(a, b) < fid(a, c)


def test_fid_empty_raises(clean):
    with pytest.raises(ValidationError):
        fid(clean, clean.subset([]))


# -- mSAD --------------------------------------------------------------

def test_msad_self_and_permutation(clean):
    assert msad(clean, clean).msad == pytest.approx(0.0, abs=1e-6)
    perm = clean.subset(np.random.default_rng(2).permutation(len(clean)))
    assert msad(clean, perm).msad == pytest.approx(0.0, abs=1e-6)


def test_msad_scale_invariance(clean):
    scaled = _ss(clean.images * 3.5, clean.masks, clean.n_classes)
    assert msad(clean, scaled).msad == pytest.approx(0.0, abs=1e-6)


def test_msad_different_spectra_matches_oracle(clean):
    other = _noiseless(4)
    expect = sad(oracle_spectra(clean), oracle_spectra(other))
    res = msad(clean, other)
    np.testing.assert_allclose([res.per_class[k] for k in range(4)], expect, atol=1e-5)
    assert res.msad >= 0.5 * 0.3


def test_msad_coverage_gaps(clean):
    masks = np.zeros_like(clean.masks)
    syn = _ss(clean.images, masks, clean.n_classes)
    res = msad(clean, syn)
    assert res.coverage_gaps == [1, 2, 3]
    assert list(res.per_class) == [0]


def test_msad_needs_common_class():
    a = _ss(np.ones((1, 2, 2, 3)), np.zeros((1, 2, 2)), 2)
    b = _ss(np.ones((1, 2, 2, 3)), np.ones((1, 2, 2)), 2)
    with pytest.raises(ValidationError):
        msad(a, b)


# -- profiles ----------------------------------------------------------

def test_profiles_match_oracle(clean):
    prof = spectral_profiles(clean)
    assert [p.class_id for p in prof] == sorted({int(k) for k in np.unique(clean.masks)})
    spectra = oracle_spectra(clean)
    for p in prof:
        assert p.pixel_count > 0
        assert sad(p.mean, spectra[p.class_id]) == pytest.approx(0.0, abs=1e-5)


def test_constant_spectrum_has_zero_std():
    ds = _ss(np.tile([0.2, 0.4, 0.6], (2, 3, 3, 1)), np.zeros((2, 3, 3)), 2)
    (p,) = spectral_profiles(ds)
    np.testing.assert_allclose(p.std, 0.0, atol=1e-7)
    assert p.pixel_count == 18


def test_profiles_csv_roundtrip(clean, tmp_path):
    prof = spectral_profiles(clean)
    back = read_profiles(export_profiles(prof, tmp_path / "p.csv"))
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "class,band,mean,std"
    for p in prof:
        np.testing.assert_allclose(back[p.class_id][0], p.mean, atol=1e-6)
        np.testing.assert_allclose(back[p.class_id][1], p.std, atol=1e-6)


# -- class-distribution divergence --------------------------------------

def test_tv_examples(clean):
    assert distribution_divergence([0.5, 0.5], [0.75, 0.25]) == pytest.approx(0.25)
    assert distribution_divergence([1, 0], [0, 1]) == 1.0
    assert distribution_divergence(clean, clean) == 0.0
    with pytest.raises(ValidationError):
        distribution_divergence([1.0], [0.5, 0.5])


# -- change indicator ----------------------------------------------------

def test_change_threshold_on_synthland():
    cd = generate_synthland(SynthLandConfig(n_samples=10, H=16, W=16, seed=5, task="CD"))
    tau, agree = calibrate_change_threshold(cd)
    assert agree == pytest.approx(change_agreement(cd, tau))
    assert agree > 0.99


def test_change_threshold_hand_example():
    man = DatasetManifest("CD", 2, 2, 1, 4, ["same", "changed"], 1)
    t1 = np.array([[[[1, 0], [1, 0], [1, 0], [1, 0]]]], np.float32)
    t2 = np.array([[[[1, 0], [2, 0.1], [0, 1], [1, 1]]]], np.float32)
    masks = np.array([[[0, 0, 1, 1]]], np.int32)
    ds = Dataset(man, masks, images_t1=t1, images_t2=t2)
    tau, agree = calibrate_change_threshold(ds)
    assert agree == 1.0
    assert np.arctan(0.05) < tau < np.pi / 4


def test_change_threshold_needs_cd(clean):
    with pytest.raises(ValidationError):
        calibrate_change_threshold(clean)


# -- evaluate ------------------------------------------------------------

def test_evaluate_report_keys(clean, tmp_path):
    rep = evaluate(clean, clean)
    for key in ("fid_image", "fid_image_t2", "fid_mask", "msad", "msad_per_class", "tv_distance", "extractor",
                "n_real", "n_syn"):
        assert key in rep
    assert rep["fid_image_t2"] is None
    path = write_report(rep, tmp_path / "metrics.json")
    assert json.loads(path.read_text())["n_real"] == len(clean)


def test_evaluate_cd_keys():
    cd = generate_synthland(SynthLandConfig(n_samples=30, H=8, W=8, seed=6, task="CD"))
    rep = evaluate(cd, cd)
    assert rep["fid_image_t2"] == pytest.approx(0.0, abs=1e-6)
    assert rep["change_agreement_syn"] == rep["change_agreement_real"]
    assert rep["msad"] is None


def test_metrics_pure(clean):
    other = _noiseless(4)
    assert fid(clean, other) == fid(clean, other)
    assert msad(clean, other).msad == msad(clean, other).msad
