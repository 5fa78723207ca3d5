import numpy as np
import pytest

from wxseg.errors import DataError
from wxseg.synth import (
    ClassSchema,
    DatasetSplit,
    SceneGenParams,
    default_adverse_params,
    default_good_params,
    default_schema,
    gen_scene,
    gen_split,
    load_split,
    write_split,
)


class TestClassSchema:
    def test_default_layout(self):
        s = default_schema()
        assert s.n_base == 3
        assert s.n_novel == 1
        assert list(s.base_ids) == [0, 1, 2]
        assert list(s.novel_ids) == [3]
        assert s.class_names == ("ground", "vehicle", "structure", "weather_noise")

    def test_disjointness_enforced(self):
        with pytest.raises(DataError):
            ClassSchema(base_names=("a",), novel_names=("a",), raw_to_contiguous={})

    def test_roundtrip_dict(self):
        s = default_schema()
        assert ClassSchema.from_dict(s.to_dict()).to_dict() == s.to_dict()


class TestGenScene:
    def test_no_novel_when_fraction_zero(self):
        scan = gen_scene(default_good_params(), 3)
        assert 3 not in set(scan.labels.tolist())

    def test_deterministic(self):
        p = default_adverse_params()
        a = gen_scene(p, 17)
        b = gen_scene(p, 17)
        np.testing.assert_array_equal(a.cloud.points, b.cloud.points)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_different_seeds_differ(self):
        p = default_adverse_params()
        a = gen_scene(p, 1)
        b = gen_scene(p, 2)
        assert not np.array_equal(a.cloud.points, b.cloud.points)

    def test_exact_novel_count_from_rounding(self):
        p = SceneGenParams(
            points_per_scan=1000,
            ground_fraction=0.4,
            vehicle_fraction=0.2,
            structure_fraction=0.2,
            novel_fraction=0.2,
        )
        scan = gen_scene(p, 0)
        assert scan.count == 1000
        hist = np.bincount(scan.labels, minlength=4)
        assert hist[3] == 200
        assert hist[1] == 200
        assert hist[2] == 200

    def test_point_count_always_exact(self):
        for seed in range(5):
            scan = gen_scene(default_adverse_params(), seed)
            assert scan.count == 512

    def test_novel_points_have_low_intensity(self):
        scan = gen_scene(default_adverse_params(), 4)
        novel = scan.labels == 3
        assert scan.cloud.intensity[novel].max() < 0.2
        assert scan.cloud.intensity[~novel].min() >= 0.3

    def test_invalid_params_rejected(self):
        with pytest.raises(DataError):
            SceneGenParams(ground_fraction=0.9, vehicle_fraction=0.3)
        with pytest.raises(DataError):
            SceneGenParams(points_per_scan=0)
        with pytest.raises(DataError):
            SceneGenParams(novel_fraction=-0.1)


class TestGenSplit:
    def test_shapes_and_invariants(self):
        split = gen_split(default_good_params(), default_adverse_params(), 10, 7, 3, seed=0)
        assert len(split.source) == 10
        assert len(split.target_labeled) == 3
        assert len(split.target_unlabeled) == 7
        novel_id = int(split.schema.novel_ids[0])
        for scan in split.source:
            assert novel_id not in set(scan.labels.tolist())
        for shot in split.target_labeled:
            assert novel_id in set(shot.labels.tolist())

    def test_k_one(self):
        split = gen_split(default_good_params(), default_adverse_params(), 2, 2, 1, seed=1)
        assert len(split.target_labeled) == 1

    def test_deterministic(self):
        a = gen_split(default_good_params(), default_adverse_params(), 4, 4, 2, seed=5)
        b = gen_split(default_good_params(), default_adverse_params(), 4, 4, 2, seed=5)
        for x, y in zip(a.source, b.source):
            np.testing.assert_array_equal(x.cloud.points, y.cloud.points)
        for x, y in zip(a.target_unlabeled, b.target_unlabeled):
            np.testing.assert_array_equal(x.points, y.points)

    def test_k_exceeding_novel_pool_rejected(self):
        # adverse params without novel points can never satisfy the shots
        no_novel = SceneGenParams(novel_fraction=0.0)
        with pytest.raises(DataError, match="novel"):
            gen_split(default_good_params(), no_novel, 2, 3, 2, seed=0)

    def test_source_params_must_be_clean(self):
        with pytest.raises(DataError):
            gen_split(default_adverse_params(), default_adverse_params(), 2, 2, 1, seed=0)

    def test_split_invariant_checks(self):
        split = gen_split(default_good_params(), default_adverse_params(), 2, 2, 1, seed=0)
        with pytest.raises(DataError):
            DatasetSplit(
                source=split.source,
                target_labeled=split.target_labeled,
                target_unlabeled=split.target_unlabeled,
                k=99,
                schema=split.schema,
            )


class TestSplitIO:
    def test_write_then_load_roundtrip(self, tmp_path):
        split = gen_split(default_good_params(), default_adverse_params(), 3, 2, 2, seed=9)
        write_split(split, tmp_path)
        assert (tmp_path / "dataset.yaml").exists()
        assert (tmp_path / "schema.yaml").exists()
        assert (tmp_path / "source" / "velodyne" / "000000.bin").exists()
        assert (tmp_path / "source" / "labels" / "000000.label").exists()
        assert (tmp_path / "target_unlabeled" / "velodyne" / "000001.bin").exists()
        assert not (tmp_path / "target_unlabeled" / "labels").exists()
        back = load_split(tmp_path)
        assert back.k == 2
        assert len(back.source) == 3
        for orig, rt in zip(split.source, back.source):
            f32 = orig.cloud.points.astype(np.float32).astype(np.float64)
            np.testing.assert_array_equal(rt.cloud.points, f32)
            np.testing.assert_array_equal(rt.labels, orig.labels)
