import json

import numpy as np
import pytest

from specdm.data import Dataset, DatasetManifest, import_npz, load_dataset, save_dataset
from specdm.data.arrayio import read_array, write_array
from specdm.errors import BadMagicError, DatasetFormatError, ValidationError, VersionMismatchError


def _manifest(**kw):
    base = dict(task="SS", K=3, C=4, H=2, W=2, class_names=["a", "b", "c"], sample_count=1)
    base.update(kw)
    return DatasetManifest(**base)


def test_save_load_round_trip(tmp_path, small_ss):
    save_dataset(small_ss, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert back.manifest == small_ss.manifest
    np.testing.assert_array_equal(back.masks, small_ss.masks)
    np.testing.assert_array_equal(back.images, small_ss.images)


def test_cd_round_trip_has_both_dates(tmp_path, small_cd):
    save_dataset(small_cd, tmp_path / "cd")
    files = sorted(p.name for p in (tmp_path / "cd" / "samples" / "000000").iterdir())
    assert files == ["image_t1.arr", "image_t2.arr", "mask.arr"]
    back = load_dataset(tmp_path / "cd")
    np.testing.assert_array_equal(back.images_t2, small_cd.images_t2)


def test_saving_twice_is_byte_identical(tmp_path, small_ss):
    save_dataset(small_ss, tmp_path / "a")
    save_dataset(small_ss, tmp_path / "b")
    for pa in sorted((tmp_path / "a").rglob("*")):
        if pa.is_file():
            assert pa.read_bytes() == (tmp_path / "b" / pa.relative_to(tmp_path / "a")).read_bytes()


def test_corrupted_magic_is_format_error(tmp_path, small_ss):
    save_dataset(small_ss, tmp_path / "ds")
    p = tmp_path / "ds" / "samples" / "000003" / "image.arr"
    raw = bytearray(p.read_bytes())
    raw[:4] = b"NOPE"
    p.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        load_dataset(tmp_path / "ds")


def test_mask_value_beyond_manifest_k_rejected_on_load(tmp_path, small_ss):
    save_dataset(small_ss, tmp_path / "ds")
    p = tmp_path / "ds" / "samples" / "000000" / "mask.arr"
    m = read_array(p).copy()
    m[0, 0] = small_ss.n_classes
    write_array(p, m)
    with pytest.raises(ValidationError, match="mask values"):
        load_dataset(tmp_path / "ds")


def test_version_mismatch(tmp_path, small_ss):
    save_dataset(small_ss, tmp_path / "ds")
    mp = tmp_path / "ds" / "manifest.json"
    raw = json.loads(mp.read_text())
    raw["format_version"] = 99
    mp.write_text(json.dumps(raw))
    with pytest.raises(VersionMismatchError):
        load_dataset(tmp_path / "ds")


def test_unknown_manifest_field(tmp_path, small_ss):
    save_dataset(small_ss, tmp_path / "ds")
    mp = tmp_path / "ds" / "manifest.json"
    raw = json.loads(mp.read_text())
    raw["colour"] = "blue"
    mp.write_text(json.dumps(raw))
    with pytest.raises(DatasetFormatError):
        load_dataset(tmp_path / "ds")


def test_missing_sample_directory(tmp_path, small_ss):
    save_dataset(small_ss, tmp_path / "ds")
    import shutil

    shutil.rmtree(tmp_path / "ds" / "samples" / "000005")
    with pytest.raises(DatasetFormatError):
        load_dataset(tmp_path / "ds")


def test_nan_image_rejected():
    img = np.zeros((1, 2, 2, 4), np.float32)
    img[0, 0, 0, 0] = np.nan
    with pytest.raises(ValidationError, match="NaN"):
        Dataset(_manifest(), np.zeros((1, 2, 2), np.int32), images=img)


def test_shape_mismatch_rejected():
    with pytest.raises(ValidationError):
        Dataset(_manifest(), np.zeros((1, 2, 2), np.int32), images=np.zeros((1, 3, 2, 4), np.float32))


def test_manifest_invariants():
    with pytest.raises(ValidationError):
        _manifest(class_names=["a"])
    with pytest.raises(ValidationError):
        _manifest(norm_lo=[0.0] * 4)
    with pytest.raises(ValidationError):
        _manifest(task="XX")


def test_cd_masks_must_be_binary():
    man = _manifest(task="CD", K=2, class_names=["same", "changed"])
    imgs = np.zeros((1, 2, 2, 4), np.float32)
    with pytest.raises(ValidationError):
        Dataset(man, np.full((1, 2, 2), 2, np.int32), images_t1=imgs, images_t2=imgs)


def test_arrays_are_read_only(small_ss):
    with pytest.raises(ValueError):
        small_ss.images[0, 0, 0, 0] = 1.0


def test_split_is_disjoint_and_complete(small_ss):
    train, test = small_ss.split(6, seed=3)
    assert len(train) == 18 and len(test) == 6
    rows = {m.tobytes() for m in train.masks} | {m.tobytes() for m in test.masks}
    assert len(rows) == len({m.tobytes() for m in small_ss.masks})


def test_concat_is_pure_union_with_provenance(small_ss):
    a, b = small_ss.subset([0, 1]), small_ss.subset([1, 2, 3])
    u = a.concat(b)
    assert len(u) == 5
    np.testing.assert_array_equal(u.masks[2], small_ss.masks[1])
    assert [s["sample_count"] for s in u.manifest.provenance["union_of"]] == [2, 3]


def test_import_npz(tmp_path):
    rng = np.random.default_rng(0)
    np.savez(tmp_path / "x.npz", images=rng.random((3, 4, 4, 5)).astype(np.float32),
             masks=rng.integers(0, 3, (3, 4, 4)))
    ds = import_npz(tmp_path / "x.npz")
    assert ds.manifest.K == 3 and ds.manifest.C == 5 and len(ds) == 3


def test_import_npz_missing_key(tmp_path):
    np.savez(tmp_path / "x.npz", images=np.zeros((1, 2, 2, 3), np.float32))
    with pytest.raises(DatasetFormatError):
        import_npz(tmp_path / "x.npz")
