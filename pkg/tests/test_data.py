"""Dataset layer tests: synthetic generation, triplet sampling, noise
injection, splitting, and the CSV interchange formats."""
import numpy as np
import pytest
from scipy import stats

from triplearn.data import (
    GroundTruthMetric,
    NoiseSpec,
    ObjectSet,
    TripletPool,
    flip_labels,
    generate_synthetic,
    load_features,
    load_triplets,
    sample_triplets,
    save_features,
    save_triplets,
    split,
)
from triplearn.errors import ConfigError, NumericError, ParseError, ValidationError


class TestGenerateSynthetic:
    def test_paper_scale_shapes(self):
        objects, metric = generate_synthetic(n=100, d=10, seed=0)
        assert objects.features.shape == (100, 10)
        assert metric.matrix.shape == (10, 10)
        assert len(objects.ids) == 100

    def test_metric_symmetric_psd(self):
        _, metric = generate_synthetic(n=10, d=8, seed=3)
        assert np.abs(metric.matrix - metric.matrix.T).max() < 1e-12
        rng = np.random.default_rng(0)
        for _ in range(1000):
            x = rng.normal(size=8)
            assert x @ metric.matrix @ x >= 0.0

    def test_same_seed_bit_identical(self):
        a_obj, a_met = generate_synthetic(n=20, d=4, seed=9)
        b_obj, b_met = generate_synthetic(n=20, d=4, seed=9)
        assert np.array_equal(a_obj.features, b_obj.features)
        assert np.array_equal(a_met.matrix, b_met.matrix)
        assert a_obj.ids == b_obj.ids

    def test_too_few_objects_rejected(self):
        with pytest.raises(ConfigError):
            generate_synthetic(n=2, d=5, seed=0)

    def test_triangle_inequality_of_induced_metric(self):
        objects, metric = generate_synthetic(n=50, d=6, seed=17)
        rng = np.random.default_rng(5)
        feats = objects.features
        for _ in range(1000):
            a, b, c = rng.choice(50, size=3, replace=False)
            dab = np.sqrt(metric.squared_distance(feats[a], feats[b]))
            dbc = np.sqrt(metric.squared_distance(feats[b], feats[c]))
            dac = np.sqrt(metric.squared_distance(feats[a], feats[c]))
            assert dac <= dab + dbc + 1e-9

    def test_ground_truth_embedding_model_reproduces_metric(self):
        objects, metric = generate_synthetic(n=12, d=5, seed=21)
        model = metric.as_embedding_model()
        from triplearn.metric import distance

        rng = np.random.default_rng(1)
        for _ in range(50):
            a, b = rng.choice(12, size=2, replace=False)
            want = np.sqrt(metric.squared_distance(objects.features[a], objects.features[b]))
            got = distance(model, objects.features, int(a), int(b))
            assert abs(got - want) < 1e-9


class TestSampleTriplets:
    def test_line_example_orders_by_distance(self):
        objects = ObjectSet(np.array([[0.0], [1.0], [5.0]]), ["a", "b", "c"])
        metric = GroundTruthMetric(np.eye(1), np.eye(1))
        pool = sample_triplets(objects, metric, 200, seed=0)
        for i in range(len(pool)):
            t = pool.triplet(i)
            lab = pool.labeled(i)
            near, far = lab.near_far()
            f = objects.features
            d_near = metric.squared_distance(f[t.anchor], f[near])
            d_far = metric.squared_distance(f[t.anchor], f[far])
            assert d_near < d_far

    def test_orderings_consistent_with_metric(self):
        objects, metric = generate_synthetic(n=30, d=5, seed=4)
        pool = sample_triplets(objects, metric, 2000, seed=8)
        d_first = metric.pairwise_squared(objects.features, pool.indices[:, 0], pool.indices[:, 1])
        d_second = metric.pairwise_squared(objects.features, pool.indices[:, 0], pool.indices[:, 2])
        near_is_first = pool.orderings == 0
        assert np.all(d_first[near_is_first] < d_second[near_is_first])
        assert np.all(d_second[~near_is_first] < d_first[~near_is_first])

    def test_uniform_over_index_triples(self):
        objects, metric = generate_synthetic(n=5, d=4, seed=11)
        pool = sample_triplets(objects, metric, 100000, seed=2)
        keys = (
            pool.indices[:, 0] * 25 + pool.indices[:, 1] * 5 + pool.indices[:, 2]
        )
        counts = np.bincount(keys, minlength=125)
        observed = counts[counts > 0]
        assert observed.size == 60  # 5*4*3 ordered distinct triples
        _, p = stats.chisquare(observed)
        assert p > 0.001

    def test_degenerate_metric_raises(self):
        objects = ObjectSet(np.zeros((5, 2)), [f"o{i}" for i in range(5)])
        metric = GroundTruthMetric(np.zeros((2, 2)), np.zeros((2, 2)))
        with pytest.raises(NumericError):
            sample_triplets(objects, metric, 10, seed=0)

    def test_reject_duplicates_mode(self):
        objects, metric = generate_synthetic(n=6, d=3, seed=1)
        pool = sample_triplets(objects, metric, 100, seed=3, allow_duplicates=False)
        assert np.unique(pool.indices, axis=0).shape[0] == 100

    def test_all_triplets_valid(self):
        objects, metric = generate_synthetic(n=15, d=4, seed=6)
        pool = sample_triplets(objects, metric, 500, seed=7)
        pool.validate(len(objects))


class TestFlipLabels:
    def make_pool(self, n_triplets, seed=0):
        objects, metric = generate_synthetic(n=20, d=4, seed=seed)
        return sample_triplets(objects, metric, n_triplets, seed=seed)

    def test_rate_zero_identity(self):
        pool = self.make_pool(100)
        flipped = flip_labels(pool, NoiseSpec(0.0, seed=1))
        assert np.array_equal(flipped.orderings, pool.orderings)

    def test_rate_one_inverts_everything(self):
        pool = self.make_pool(100)
        flipped = flip_labels(pool, NoiseSpec(1.0, seed=1))
        assert np.array_equal(flipped.orderings, pool.orderings ^ 1)

    def test_exact_count(self):
        pool = self.make_pool(500)
        flipped = flip_labels(pool, NoiseSpec(0.2, seed=5))
        assert int((flipped.orderings != pool.orderings).sum()) == 100

    def test_same_subset_composition_is_identity(self):
        pool = self.make_pool(200)
        spec = NoiseSpec(0.3, seed=9)
        twice = flip_labels(flip_labels(pool, spec), spec)
        assert np.array_equal(twice.orderings, pool.orderings)

    def test_deterministic_per_seed(self):
        pool = self.make_pool(200)
        a = flip_labels(pool, NoiseSpec(0.25, seed=4))
        b = flip_labels(pool, NoiseSpec(0.25, seed=4))
        assert np.array_equal(a.orderings, b.orderings)


class TestSplit:
    def test_disjoint_cover(self):
        objects, metric = generate_synthetic(n=25, d=4, seed=2)
        pool = sample_triplets(objects, metric, 100, seed=1)
        train, test = split(pool, 60, 40, seed=0)
        assert len(train) == 60 and len(test) == 40
        combined = np.concatenate([train.indices, test.indices])
        assert sorted(map(tuple, combined)) == sorted(map(tuple, pool.indices))

    def test_no_position_shared(self):
        objects, metric = generate_synthetic(n=25, d=4, seed=2)
        # duplicate-free pool so value comparison proves position disjointness
        pool = sample_triplets(objects, metric, 80, seed=1, allow_duplicates=False)
        train, test = split(pool, 50, 30, seed=3)
        train_set = set(map(tuple, train.indices))
        test_set = set(map(tuple, test.indices))
        assert not train_set & test_set

    def test_five_seeds_give_distinct_splits(self):
        objects, metric = generate_synthetic(n=25, d=4, seed=2)
        pool = sample_triplets(objects, metric, 200, seed=1, allow_duplicates=False)
        train_sets = []
        for seed in range(5):
            train, _ = split(pool, 100, 100, seed=seed)
            train_sets.append(frozenset(map(tuple, train.indices)))
        for i in range(5):
            for j in range(i + 1, 5):
                assert train_sets[i] != train_sets[j]

    def test_insufficient_pool_rejected(self):
        objects, metric = generate_synthetic(n=10, d=3, seed=0)
        pool = sample_triplets(objects, metric, 50, seed=0)
        with pytest.raises(ConfigError):
            split(pool, 40, 20, seed=0)


class TestCsvRoundTrip:
    def test_features_bit_exact(self, tmp_path):
        objects, _ = generate_synthetic(n=12, d=5, seed=13)
        path = tmp_path / "features.csv"
        save_features(path, objects)
        loaded = load_features(path)
        assert np.array_equal(loaded.features, objects.features)
        assert loaded.ids == objects.ids

    def test_food_scale_dimensions(self, tmp_path):
        # 73 objects with 6-D feature vectors, the food-data shape.
        objects, _ = generate_synthetic(n=73, d=6, seed=99)
        path = tmp_path / "food.csv"
        save_features(path, objects)
        loaded = load_features(path)
        assert len(loaded) == 73
        assert loaded.dim == 6

    def test_triplets_round_trip(self, tmp_path):
        objects, metric = generate_synthetic(n=15, d=4, seed=3)
        pool = sample_triplets(objects, metric, 60, seed=2)
        path = tmp_path / "triplets.csv"
        save_triplets(path, pool, objects)
        loaded = load_triplets(path, objects)
        assert np.array_equal(loaded.indices, pool.indices)
        assert np.array_equal(loaded.orderings, pool.orderings)
        assert loaded.provenance == "loaded"

    def test_triplets_without_orderings(self, tmp_path):
        objects, metric = generate_synthetic(n=10, d=3, seed=3)
        pool = sample_triplets(objects, metric, 20, seed=2)
        bare = TripletPool(pool.indices.copy(), None)
        path = tmp_path / "bare.csv"
        save_triplets(path, bare, objects)
        loaded = load_triplets(path, objects)
        assert loaded.orderings is None

    def test_malformed_row_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,f0,f1\nx,1.0,2.0\ny,oops,3.0\n", encoding="utf-8")
        with pytest.raises(ParseError, match=":3:"):
            load_features(path)

    def test_unknown_object_id_names_line(self, tmp_path):
        objects, _ = generate_synthetic(n=5, d=2, seed=0)
        path = tmp_path / "trip.csv"
        path.write_text(
            "anchor_id,j_id,k_id\n"
            f"{objects.ids[0]},{objects.ids[1]},{objects.ids[2]}\n"
            f"{objects.ids[0]},{objects.ids[1]},obj-999\n",
            encoding="utf-8",
        )
        with pytest.raises(ValidationError, match=":3:"):
            load_triplets(path, objects)

    def test_repeated_object_in_triplet_rejected(self, tmp_path):
        objects, _ = generate_synthetic(n=5, d=2, seed=0)
        path = tmp_path / "trip.csv"
        path.write_text(
            "anchor_id,j_id,k_id\n"
            f"{objects.ids[0]},{objects.ids[0]},{objects.ids[2]}\n",
            encoding="utf-8",
        )
        with pytest.raises(ValidationError, match=":2:"):
            load_triplets(path, objects)

    def test_bad_ordering_token_rejected(self, tmp_path):
        objects, _ = generate_synthetic(n=5, d=2, seed=0)
        path = tmp_path / "trip.csv"
        path.write_text(
            "anchor_id,j_id,k_id,ordering\n"
            f"{objects.ids[0]},{objects.ids[1]},{objects.ids[2]},x\n",
            encoding="utf-8",
        )
        with pytest.raises(ValidationError, match="ordering"):
            load_triplets(path, objects)

    def test_duplicate_ids_rejected(self, tmp_path):
        path = tmp_path / "dup.csv"
        path.write_text("id,f0\nsame,1.0\nsame,2.0\n", encoding="utf-8")
        with pytest.raises(ValidationError):
            load_features(path)
