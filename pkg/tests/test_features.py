"""Descriptor, normalization, distance, and feature-file tests."""

import numpy as np
import pytest

from mvedesign import features as ft
from mvedesign import microstructure as ms
from mvedesign.embedding import TripletSampler
from mvedesign.seeding import derive_rng
from mvedesign.texture import UniformTexture, single_crystal_gsh_max, volume_fractions


class TestRetainedComponents:
    def test_exactly_one_component_drops(self):
        mask = ft.retained_gsh_components()
        assert mask.shape == (18,)
        assert mask.sum() == 17
        # the dropped component is one of the imaginary parts
        assert not mask[13]


class TestClassicDescriptor:
    def test_dimension_is_eighteen(self):
        mve = ms.generate_mve((16, 16, 16), 4, UniformTexture(), seed=1)
        assert ft.classic_descriptor(mve).shape == (18,)

    def test_voxel_permutation_invariance(self):
        mve = ms.generate_mve((16, 16, 16), 4, UniformTexture(), seed=2)
        perm = derive_rng(0, "perm").permutation(mve.grain_id.size)
        twin = ms.MVE(mve.dims, mve.grain_id.ravel()[perm].reshape(mve.dims),
                      mve.grain_orientations, mve.meta)
        assert np.array_equal(ft.classic_descriptor(mve), ft.classic_descriptor(twin))

    def test_grain_relabeling_invariance(self):
        mve = ms.generate_mve((16, 16, 16), 4, UniformTexture(), seed=3)
        perm = derive_rng(1, "relabel").permutation(mve.n_grains)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(mve.n_grains)
        twin = ms.MVE(mve.dims, inverse[mve.grain_id].astype(np.int32),
                      mve.grain_orientations[perm], mve.meta)
        assert np.abs(ft.classic_descriptor(mve) - ft.classic_descriptor(twin)).max() < 1e-12

    def test_uniform_texture_harmonic_block_decays(self):
        mve = ms.generate_mve((32, 32, 32), 4, UniformTexture(), seed=4)
        descriptor = ft.classic_descriptor(mve)
        w = volume_fractions(mve)
        bound = 3.0 * 9.0 * single_crystal_gsh_max() * np.sqrt(float(w @ w))
        assert np.abs(descriptor[:-1]).max() < bound
        assert descriptor[-1] == pytest.approx(4.0 / 16.0)

    def test_transformer_shape(self, mini_corpus):
        X = ft.ClassicDescriptor().fit_transform(mini_corpus)
        assert X.shape == (len(mini_corpus), 18)


class TestSubvolumeStatistics:
    def test_single_crystal(self):
        grain_id = np.zeros((8, 8, 8), dtype=np.int32)
        meta = ms.MveMeta("one", 8.0, UniformTexture(), 0)
        mve = ms.MVE((8, 8, 8), grain_id, np.zeros((1, 3)), meta)
        stats = ft.subvolume_statistics(mve)
        assert stats.shape == (19,)
        assert stats[-2] == 0.0
        assert stats[-1] == pytest.approx(np.log(2.0))

    def test_checkerboard_interface_density(self):
        grain_id = (np.indices((8, 8, 8)).sum(axis=0) % 2).astype(np.int32)
        assert ft.interface_density(grain_id) == 1.0

    def test_crop_statistics_near_parent_for_fine_grains(self, embed_corpus):
        """For fine grains a sub-window is nearly representative: its
        statistics sit closer to the parent's than anchors sit to
        negatives on average (measured on the shared corpus)."""
        fine = [m for m in embed_corpus
                if m.meta.target_grain_size == 4.0 and m.meta.texture.kind == "uniform"]
        rng = derive_rng(2, "crop-consistency")
        crop_parent = []
        for mve in fine:
            parent_stats = ft.subvolume_statistics(mve)
            for _ in range(5):
                origin = tuple(int(rng.integers(0, d - 16 + 1)) for d in mve.dims)
                crop = ms.crop_subvolume(mve, origin, (16, 16, 16))
                crop_parent.append(np.linalg.norm(ft.subvolume_statistics(crop) - parent_stats))
        sampler = TripletSampler(embed_corpus, derive_rng(3, "anchor-neg"))
        anchor_neg = [np.linalg.norm(t.anchor - t.negative) for t in sampler.sample_batch(300)]
        assert np.mean(crop_parent) < np.mean(anchor_neg)


class TestNormalization:
    def test_two_point_dimension(self):
        fm = ft.FeatureMatrix(("a", "b"), np.array([[2.0], [4.0]]), "classic")
        assert np.array_equal(ft.normalize_features(fm).values.ravel(), [0.0, 1.0])

    def test_constant_dimension_maps_to_half(self):
        fm = ft.FeatureMatrix(("a", "b", "c"), np.array([[3.0], [3.0], [3.0]]), "classic")
        assert np.array_equal(ft.normalize_features(fm).values.ravel(), [0.5, 0.5, 0.5])

    def test_idempotent(self):
        rng = derive_rng(4, "norm")
        fm = ft.FeatureMatrix([f"r{i}" for i in range(20)], rng.normal(size=(20, 5)), "classic")
        once = ft.normalize_features(fm)
        twice = ft.normalize_features(once)
        assert np.array_equal(once.values, twice.values)
        assert np.all(once.values >= 0.0) and np.all(once.values <= 1.0)

    def test_record_stored(self):
        fm = ft.FeatureMatrix(("a", "b"), np.array([[2.0, 7.0], [4.0, 7.0]]), "classic")
        norm = ft.normalize_features(fm)
        lo, hi = norm.normalization
        assert np.array_equal(lo, [2.0, 7.0]) and np.array_equal(hi, [4.0, 7.0])

    def test_estimator_matches_function(self):
        rng = derive_rng(5, "est")
        X = rng.normal(size=(15, 4))
        est = ft.FeatureNormalizer().fit(X)
        fm = ft.normalize_features(ft.FeatureMatrix([f"r{i}" for i in range(15)], X, "classic"))
        assert np.array_equal(est.transform(X), fm.values)


class TestDistanceMatrix:
    def test_identical_rows(self):
        fm = np.array([[1.0, 2.0], [1.0, 2.0]])
        assert ft.distance_matrix(fm)[0, 1] == 0.0

    def test_unit_vectors(self):
        fm = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert ft.distance_matrix(fm)[0, 1] == pytest.approx(np.sqrt(2.0), abs=1e-15)

    def test_matches_brute_force(self):
        rng = derive_rng(6, "dist")
        X = rng.normal(size=(50, 7))
        D = ft.distance_matrix(X)
        for i in range(50):
            for j in range(50):
                expected = np.sqrt(((X[i] - X[j]) ** 2).sum())
                assert abs(D[i, j] - expected) < 1e-12

    def test_row_reordering_permutes(self):
        rng = derive_rng(7, "perm-d")
        X = rng.normal(size=(12, 3))
        perm = rng.permutation(12)
        D = ft.distance_matrix(X)
        assert np.allclose(ft.distance_matrix(X[perm]), D[np.ix_(perm, perm)], atol=1e-15)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            ft.distance_matrix(np.array([[1.0, np.nan]]))

    def test_triangle_inequality_on_sampled_triples(self):
        rng = derive_rng(11, "triangle")
        D = ft.distance_matrix(rng.normal(size=(30, 4)))
        for _ in range(200):
            i, j, k = rng.integers(0, 30, 3)
            assert D[i, k] <= D[i, j] + D[j, k] + 1e-12


class TestFeatureFiles:
    def test_csv_round_trip_bit_exact(self, tmp_path):
        rng = derive_rng(8, "io")
        fm = ft.normalize_features(
            ft.FeatureMatrix([f"id{i}" for i in range(9)], rng.normal(size=(9, 6)), "contrastive")
        )
        path = tmp_path / "f.csv"
        ft.save_features(fm, path, provenance={"config": "deadbeef"})
        back = ft.load_features(path)
        assert back.ids == fm.ids
        assert np.array_equal(back.values, fm.values)
        assert back.provenance == "contrastive"
        assert np.array_equal(back.normalization[0], fm.normalization[0])
        assert np.array_equal(back.normalization[1], fm.normalization[1])

    def test_nan_rejected_with_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,f0\nok,1.0\nbroken,nan\n")
        with pytest.raises(ValueError, match=r"row 3 \(broken\)"):
            ft.load_features(path)

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "dup.csv"
        path.write_text("id,f0\nsame,1.0\nsame,2.0\n")
        with pytest.raises(ValueError, match="duplicate id"):
            ft.load_features(path)

    def test_ragged_row_rejected(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("id,f0,f1\na,1.0,2.0\nb,1.0\n")
        with pytest.raises(ValueError, match="expected 2"):
            ft.load_features(path)

    def test_binary_round_trip(self, tmp_path):
        rng = derive_rng(9, "bin")
        fm = ft.FeatureMatrix([f"id{i}" for i in range(5)], rng.normal(size=(5, 3)), "external")
        path = tmp_path / "f.bin"
        ft.save_features_binary(fm, path)
        back = ft.load_features(path, format="binary")
        assert np.array_equal(back.values, fm.values)

    def test_wide_external_features_feed_all_selectors(self, tmp_path):
        from mvedesign.design import make_selector

        rng = derive_rng(10, "wide")
        fm = ft.FeatureMatrix([f"id{i}" for i in range(40)], rng.normal(size=(40, 512)), "external")
        path = tmp_path / "wide.csv"
        ft.save_features(fm, path)
        loaded = ft.normalize_features(ft.load_features(path))
        assert loaded.n_features == 512
        for criterion in ("cmm", "maxpro", "twin", "random"):
            design = make_selector(criterion, 8, seed=1).fit(loaded).design_
            assert len(set(design.indices.tolist())) == 8
            if criterion != "random":  # random has no criterion values to trace
                assert not np.any(np.isnan(design.trace))
