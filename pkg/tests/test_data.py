import json

import numpy as np
import pytest

from temporal_heads import layers as L
from temporal_heads.data import (HEADER, MAGIC, Dataset, DatasetManifest, FeatureMatrix,
                                 ManifestEntry, SynthSpec, concat_streams, generate_synthetic,
                                 load_features, prototype_spans, read_feature_file,
                                 sample_frames, store_features, synthesize)
from temporal_heads.errors import ConfigError, DataError, FormatError
from temporal_heads.tensor import Tensor
from temporal_heads.tslstm import partition


def test_sample_identity():
    assert sample_frames(25, 25) == list(range(25))


def test_sample_every_other_frame():
    assert sample_frames(49, 25) == list(range(0, 49, 2))


def test_sample_short_video_repeats():
    idx = sample_frames(5, 25)
    assert len(idx) == 25 and idx[0] == 0 and idx[-1] == 4
    assert sorted(idx) == idx and set(idx) == set(range(5))


def test_sample_single_frame_is_middle():
    assert sample_frames(9, 1) == [4]


@pytest.mark.parametrize("available", [0, -3])
def test_sample_from_nothing(available):
    with pytest.raises(DataError):
        sample_frames(available)


def test_sample_bounds_for_many_sizes():
    for avail in range(1, 80):
        for n in range(1, 40):
            idx = sample_frames(avail, n)
            assert len(idx) == n and idx == sorted(idx)
            assert 0 <= idx[0] and idx[-1] <= avail - 1


def test_concat_single_column():
    fm = concat_streams(np.array([[1.0], [2.0]]), np.array([[3.0], [4.0]]))
    np.testing.assert_array_equal(fm.values[:, 0], [1, 2, 3, 4])


def test_concat_zero_temporal_and_round_trip():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(3, 6))
    fm = concat_streams(s, np.zeros((2, 6)))
    np.testing.assert_array_equal(fm.values[3:], 0)
    np.testing.assert_array_equal(fm.values[:3], s)


def test_concat_length_mismatch():
    with pytest.raises(DataError):
        concat_streams(np.ones((2, 3)), np.ones((2, 4)))


def test_feature_matrix_rejects_nan():
    with pytest.raises(DataError):
        FeatureMatrix(np.array([[1.0, np.nan]]))


def test_feature_file_round_trip(tmp_path):
    arr = np.random.default_rng(1).normal(size=(5, 7)).astype(np.float32)
    store_features(tmp_path / "a.tfv", arr)
    back = read_feature_file(tmp_path / "a.tfv")
    assert back.tobytes() == arr.tobytes()
    raw = (tmp_path / "a.tfv").read_bytes()
    assert raw[:4] == b"TFV1" and len(raw) == 12 + 4 * 35


def test_truncated_file(tmp_path):
    store_features(tmp_path / "a.tfv", np.ones((3, 4)))
    raw = (tmp_path / "a.tfv").read_bytes()
    (tmp_path / "a.tfv").write_bytes(raw[:-5])
    with pytest.raises(FormatError, match="a.tfv"):
        read_feature_file(tmp_path / "a.tfv")
    (tmp_path / "b.tfv").write_bytes(raw[:6])
    with pytest.raises(FormatError, match="b.tfv"):
        read_feature_file(tmp_path / "b.tfv")


def test_bad_magic(tmp_path):
    (tmp_path / "a.tfv").write_bytes(HEADER.pack(b"XXXX", 1, 1) + b"\0" * 4)
    with pytest.raises(FormatError, match="magic"):
        read_feature_file(tmp_path / "a.tfv")


def test_nan_payload(tmp_path):
    (tmp_path / "a.tfv").write_bytes(HEADER.pack(MAGIC, 1, 2) + np.array([1, np.nan], "<f4").tobytes())
    with pytest.raises(DataError):
        read_feature_file(tmp_path / "a.tfv")


def _manifest(tmp_path, spatial, temporal, frames=3):
    store_features(tmp_path / "s.tfv", spatial)
    store_features(tmp_path / "t.tfv", temporal)
    entries = [ManifestEntry("v0", "s.tfv", "t.tfv", 1, "train")]
    m = DatasetManifest(entries, 2, (spatial.shape[0], temporal.shape[0]), frames, tmp_path)
    m.save(tmp_path / "manifest.json")
    return DatasetManifest.load(tmp_path / "manifest.json")


def test_load_features_samples_and_concatenates(tmp_path):
    s = np.arange(10, dtype=np.float32).reshape(2, 5)
    t = -np.arange(15, dtype=np.float32).reshape(3, 5)
    fm = load_features(_manifest(tmp_path, s, t), "v0")
    np.testing.assert_array_equal(fm.values, np.vstack([s, t])[:, [0, 2, 4]])
    assert fm.id == "v0"


def test_load_features_length_mismatch(tmp_path):
    m = _manifest(tmp_path, np.ones((2, 5)), np.ones((3, 4)))
    with pytest.raises(DataError):
        load_features(m, "v0")


def test_manifest_validation(tmp_path):
    e = ManifestEntry("v0", "s", "t", 0, "train")
    with pytest.raises(DataError):
        DatasetManifest([e, e], 2, (1, 1))
    with pytest.raises(DataError):
        DatasetManifest([ManifestEntry("v0", "s", "t", 2, "train")], 2, (1, 1))
    (tmp_path / "m.json").write_text(json.dumps({"schema": "other"}))
    with pytest.raises(FormatError):
        DatasetManifest.load(tmp_path / "m.json")


def test_default_spec_has_four_swapped_pairs():
    spec = SynthSpec()
    assert spec.order_swapped_pairs() == [(0, 1), (2, 3), (4, 5), (6, 7)]
    assert (spec.dim, spec.length, spec.noise_sigma) == (64, 25, 0.1)


def test_spec_rejects_too_many_prototypes():
    with pytest.raises(ConfigError):
        SynthSpec(num_classes=2, prototypes_per_class=((0, 1, 2), (2, 1, 0)), length=2)


def test_spans_give_each_prototype_same_length_in_any_order():
    a = prototype_spans((0, 1), 25)
    b = prototype_spans((1, 0), 25)
    assert {p: e - s for p, s, e in a} == {p: e - s for p, s, e in b}


def test_swapped_pair_is_invisible_to_global_pooling():
    ds, _, _ = synthesize(SynthSpec(noise_sigma=0.0, train_per_class=1, test_per_class=0))
    for a, b in SynthSpec().order_swapped_pairs():
        xa, xb = ds.x_train[ds.y_train == a][0], ds.x_train[ds.y_train == b][0]
        for kind in ("max", "mean"):
            pa = L.temporal_pool(Tensor(xa), kind).data
            pb = L.temporal_pool(Tensor(xb), kind).data
            np.testing.assert_allclose(pa, pb, rtol=0, atol=1e-6)
        seg_a = [xa[:, s:e].max(axis=1) for s, e in partition(25, 3)]
        seg_b = [xb[:, s:e].max(axis=1) for s, e in partition(25, 3)]
        assert not np.allclose(np.stack(seg_a), np.stack(seg_b))


def test_generation_is_deterministic(tmp_path):
    spec = SynthSpec(num_classes=2, dim=6, length=5, train_per_class=2, test_per_class=1, seed=3)
    generate_synthetic(spec, tmp_path / "a")
    generate_synthetic(spec, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.tfv"))
    assert len(files) == 12
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_generated_dataset_loads_back_exactly(tmp_path):
    spec = SynthSpec(num_classes=2, dim=6, length=5, train_per_class=2, test_per_class=1)
    manifest = generate_synthetic(spec, tmp_path)
    ds = Dataset.load(tmp_path / "manifest.json")
    mem, _, _ = synthesize(spec)
    assert ds.x_train.tobytes() == mem.x_train.tobytes()
    np.testing.assert_array_equal(ds.y_test, mem.y_test)
    assert manifest.feature_dims == (3, 3)
