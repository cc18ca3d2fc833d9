import json

import numpy as np
import pytest
from sklearn.base import clone

from specdm.diffusion import LatentDiffusion
from specdm.errors import ValidationError

TINY = dict(timesteps=20, base_width=8, channel_mult=(1, 2), n_steps=10, batch_size=4, time_embed_dim=8)


@pytest.fixture(scope="module")
def latents():
    return np.random.default_rng(0).normal(2.0, 3.0, size=(8, 4, 4, 3)).astype(np.float32)


@pytest.fixture(scope="module")
def fitted(latents):
    return LatentDiffusion(**TINY).fit(latents)


def test_fit_records_losses(fitted):
    assert fitted.losses_.shape == (10,)
    assert np.all(np.isfinite(fitted.losses_))
    assert fitted.latent_shape_ == (4, 4, 3)


def test_latent_scale(fitted, latents):
    assert fitted.scale_ == pytest.approx(1.0 / latents.std(), rel=1e-5)
    assert LatentDiffusion(**TINY, scale_latents=False).fit(latents).scale_ == 1.0


def test_sample_shape_and_units(fitted):
    S = fitted.sample(5, random_state=3)
    assert S.shape == (5, 4, 4, 3)
    np.testing.assert_allclose(fitted.sample(5, random_state=3, scaled=True), S * fitted.scale_, rtol=1e-5)


def test_sample_deterministic(fitted):
    np.testing.assert_array_equal(fitted.sample(3, random_state=1), fitted.sample(3, random_state=1))
    assert not np.array_equal(fitted.sample(3, random_state=1), fitted.sample(3, random_state=2))


def test_fit_deterministic(latents, fitted):
    again = LatentDiffusion(**TINY).fit(latents)
    np.testing.assert_array_equal(again.losses_, fitted.losses_)


def test_metrics_jsonl(latents, tmp_path):
    path = tmp_path / "m.jsonl"
    LatentDiffusion(**{**TINY, "n_steps": 3}, metrics_path=str(path)).fit(latents)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r["step"] for r in rows] == [0, 1, 2]


def test_save_load_roundtrip(fitted, tmp_path):
    fitted.save(tmp_path / "d", extra={"codec_hash": "abc"})
    back = LatentDiffusion.load(tmp_path / "d")
    assert back.sidecar_["codec_hash"] == "abc"
    np.testing.assert_array_equal(back.sample(2, random_state=4), fitted.sample(2, random_state=4))


def test_get_params_clone(fitted):
    c = clone(fitted)
    assert c.get_params() == fitted.get_params()
    assert not hasattr(c, "model_")


def test_rejects_bad_input():
    with pytest.raises(ValidationError):
        LatentDiffusion(**TINY).fit(np.zeros((4, 3, 3, 2), np.float32))
    with pytest.raises(ValidationError):
        LatentDiffusion(**TINY).fit(np.zeros((4, 4, 4), np.float32))
    Z = np.zeros((4, 4, 4, 2), np.float32)
    with pytest.raises(ValidationError):
        LatentDiffusion(**TINY).fit(Z)
    Z[0, 0, 0, 0] = np.nan
    with pytest.raises(ValidationError):
        LatentDiffusion(**TINY).fit(Z)


def test_sample_before_fit():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        LatentDiffusion().sample(1)
