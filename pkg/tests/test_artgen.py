import unittest

import numpy as np

from wordseg import artgen, utils, vocab


def brute_force_upscale(coarse, height, width):
    u, v = coarse.shape
    result = np.empty((height, width), dtype=coarse.dtype)
    for i in range(height):
        for j in range(width):
            result[i, j] = coarse[(i * u) // height, (j * v) // width]
    return result


class TestArtificialGridSpec(unittest.TestCase):
    def test_defaults(self):
        spec = artgen.ArtificialGridSpec()
        self.assertEqual((8, 8, 8), (spec.S, spec.H, spec.W))
        self.assertFalse(spec.fixed)

    def test_non_positive_sizes_raise(self):
        for sizes in [(0, 8, 8), (8, 0, 8), (8, 8, -1)]:
            with self.subTest(sizes=sizes):
                with self.assertRaises(ValueError):
                    artgen.ArtificialGridSpec(*sizes)


class TestNnUpscale(unittest.TestCase):
    def test_matches_brute_force_for_all_small_sizes(self):
        rng = np.random.default_rng(0)
        for u in range(1, 9):
            for v in range(1, 9):
                coarse = rng.integers(0, 10, size=(u, v))
                for height, width in [(u, v), (8, 8), (5, 7), (16, 3)]:
                    np.testing.assert_array_equal(
                        brute_force_upscale(coarse, height, width),
                        artgen.nn_upscale(coarse, height, width),
                    )

    def test_same_size_is_identity(self):
        coarse = np.arange(6).reshape(2, 3)
        np.testing.assert_array_equal(
            coarse, artgen.nn_upscale(coarse, 2, 3)
        )

    def test_one_by_two_to_two_by_four(self):
        np.testing.assert_array_equal(
            [[0, 0, 1, 1], [0, 0, 1, 1]],
            artgen.nn_upscale(np.asarray([[0, 1]]), 2, 4),
        )

    def test_empty_grid_raises(self):
        with self.assertRaises(ValueError):
            artgen.nn_upscale(np.zeros((0, 3)), 4, 4)

    def test_non_positive_size_raises(self):
        with self.assertRaises(ValueError):
            artgen.nn_upscale(np.zeros((2, 2)), 0, 4)


class TestSampleGrid(unittest.TestCase):
    def test_single_cell_single_category(self):
        spec = artgen.ArtificialGridSpec(S=1, H=3, W=5)
        sample = artgen.sample_grid(spec, 1, utils.make_rng(1))
        self.assertEqual((1, 1), (sample.u, sample.v))
        np.testing.assert_array_equal(np.zeros((3, 5)), sample.map)

    def test_values_are_category_indices(self):
        spec = artgen.ArtificialGridSpec(S=6, H=8, W=8)
        rng = utils.make_rng(2)
        for _ in range(50):
            sample = artgen.sample_grid(spec, 4, rng)
            self.assertTrue(1 <= sample.u <= 6 and 1 <= sample.v <= 6)
            self.assertEqual((8, 8), sample.map.shape)
            self.assertGreaterEqual(sample.map.min(), 0)
            self.assertLess(sample.map.max(), 4)

    def test_map_is_upscaled_coarse_grid(self):
        spec = artgen.ArtificialGridSpec(S=5, H=7, W=9)
        sample = artgen.sample_grid(spec, 3, utils.make_rng(3))
        np.testing.assert_array_equal(
            brute_force_upscale(sample.coarse, 7, 9), sample.map
        )

    def test_fixed_grid_always_has_side_s(self):
        spec = artgen.ArtificialGridSpec(S=3, H=6, W=6, fixed=True)
        rng = utils.make_rng(4)
        for _ in range(10):
            sample = artgen.sample_grid(spec, 2, rng)
            self.assertEqual((3, 3), (sample.u, sample.v))

    def test_no_categories_raises(self):
        with self.assertRaises(ValueError):
            artgen.sample_grid(
                artgen.ArtificialGridSpec(), 0, utils.make_rng(1)
            )

    def test_grid_sides_are_uniform(self):
        # Chi-square over the 16 (u, v) pairs, 15 degrees of freedom;
        # 37.7 is the 0.999 quantile.
        spec = artgen.ArtificialGridSpec(S=4, H=4, W=4)
        rng = utils.make_rng(5)
        draws = 16000
        counts = np.zeros((4, 4))
        for _ in range(draws):
            sample = artgen.sample_grid(spec, 1, rng)
            counts[sample.u - 1, sample.v - 1] += 1
        expected = draws / 16
        statistic = ((counts - expected) ** 2 / expected).sum()
        self.assertLess(statistic, 37.7)

    def test_categories_are_uniform(self):
        spec = artgen.ArtificialGridSpec(S=8, H=8, W=8, fixed=True)
        rng = utils.make_rng(6)
        values = np.concatenate(
            [
                artgen.sample_grid(spec, 5, rng).coarse.ravel()
                for _ in range(200)
            ]
        )
        fractions = np.bincount(values, minlength=5) / values.size
        np.testing.assert_allclose(np.full(5, 0.2), fractions, atol=0.02)


class TestSampleSeed(unittest.TestCase):
    def test_seed_depends_on_index(self):
        self.assertNotEqual(
            artgen.sample_seed(1, 0), artgen.sample_seed(1, 1)
        )

    def test_seed_depends_on_run_seed(self):
        self.assertNotEqual(
            artgen.sample_seed(1, 0), artgen.sample_seed(2, 0)
        )

    def test_sample_rng_is_reproducible(self):
        np.testing.assert_array_equal(
            artgen.sample_rng(7, 3).random(5),
            artgen.sample_rng(7, 3).random(5),
        )


class TestCategoryHierarchy(unittest.TestCase):
    def test_mapping_with_empty_fine_list_raises(self):
        with self.assertRaises(ValueError):
            artgen.CategoryHierarchy({0: []})

    def test_empty_mapping_raises(self):
        with self.assertRaises(ValueError):
            artgen.CategoryHierarchy({})

    def test_non_contiguous_indices_raise(self):
        with self.assertRaises(ValueError):
            artgen.CategoryHierarchy({0: [1], 2: [3]})

    def test_from_names_uses_fine_rows(self):
        vocabulary = vocab.Vocabulary(["animal", "giraffe", "zebra"], dim=4)
        embedding = vocab.init_embedding(vocabulary, utils.make_rng(1))
        coarse = vocab.register_categories(["animal"], vocabulary, embedding)
        fine = vocab.register_categories(
            ["giraffe", "zebra"], vocabulary, embedding
        )
        hierarchy = artgen.CategoryHierarchy.from_names(
            {"animal": ["giraffe", "zebra"]}, coarse, fine
        )
        self.assertEqual({0: fine.merged_ids}, hierarchy.mapping)


class TestHierarchicalSample(unittest.TestCase):
    def setUp(self):
        self.mapping = {0: [10, 11], 1: [20], 2: [30, 31, 32]}
        self.hierarchy = artgen.CategoryHierarchy(self.mapping)
        self.spec = artgen.ArtificialGridSpec(S=4, H=8, W=8)

    def test_fine_words_belong_to_their_coarse_category(self):
        rng = utils.make_rng(8)
        for _ in range(100):
            sample = artgen.hierarchical_sample(
                self.spec, self.hierarchy, rng
            )
            for cell, category in np.ndenumerate(sample.map):
                self.assertIn(
                    sample.fine_map[cell], self.mapping[int(category)]
                )

    def test_fine_map_is_upscaled_fine_grid(self):
        sample = artgen.hierarchical_sample(
            self.spec, self.hierarchy, utils.make_rng(9)
        )
        np.testing.assert_array_equal(
            brute_force_upscale(sample.fine_coarse, 8, 8), sample.fine_map
        )


class TestToTrainingPair(unittest.TestCase):
    def setUp(self):
        self.vocabulary = vocab.Vocabulary(["grass", "sky"], dim=4)
        self.embedding = vocab.init_embedding(
            self.vocabulary, utils.make_rng(1)
        )
        self.categories = vocab.register_categories(
            ["grass", "sky", "giraffe"], self.vocabulary, self.embedding
        )

    def test_tokens_are_rows_of_map_categories(self):
        sample = artgen.GridSample(
            coarse=np.asarray([[0, 2]]),
            map_=np.asarray([[0, 0, 2, 2], [0, 0, 2, 2]]),
        )
        tokens, targets = artgen.to_training_pair(
            sample, self.embedding, self.categories
        )
        self.assertEqual((8, 4), tokens.shape)
        np.testing.assert_array_equal(sample.map.ravel(), targets)
        for k, category in enumerate(targets):
            np.testing.assert_array_equal(
                self.embedding.rows[self.categories.merged_ids[category]],
                tokens[k],
            )

    def test_invalid_category_index_raises(self):
        sample = artgen.GridSample(
            coarse=np.asarray([[5]]), map_=np.asarray([[5]])
        )
        with self.assertRaises(IndexError):
            artgen.to_training_pair(sample, self.embedding, self.categories)

    def test_hierarchical_tokens_are_fine_rows(self):
        fine_row = self.categories.merged_ids[2]
        sample = artgen.GridSample(
            coarse=np.asarray([[1]]),
            map_=np.asarray([[1, 1]]),
            fine_coarse=np.asarray([[fine_row]]),
        )
        tokens, targets = artgen.to_training_pair(
            sample, self.embedding, self.categories
        )
        np.testing.assert_array_equal([1, 1], targets)
        np.testing.assert_array_equal(
            self.embedding.rows[[fine_row, fine_row]], tokens
        )


class TestSampleStream(unittest.TestCase):
    def setUp(self):
        self.vocabulary = vocab.Vocabulary(["grass", "sky"], dim=4)
        self.embedding = vocab.init_embedding(
            self.vocabulary, utils.make_rng(1)
        )
        self.categories = vocab.register_categories(
            ["grass", "sky"], self.vocabulary, self.embedding
        )
        self.spec = artgen.ArtificialGridSpec(S=4, H=4, W=4)

    def stream(self, seed=42):
        return artgen.SampleStream(self.spec, self.categories, seed=seed)

    def test_same_seed_gives_identical_samples(self):
        first, second = self.stream().batch(0, 5), self.stream().batch(0, 5)
        for one, other in zip(first, second):
            np.testing.assert_array_equal(one, other)

    def test_samples_are_independent_of_order(self):
        rows, targets, _ = self.stream().batch(0, 5)
        sample = self.stream().sample(3)
        np.testing.assert_array_equal(sample.map.ravel(), targets[3])

    def test_batch_with_offset_continues_stream(self):
        _, targets, _ = self.stream().batch(0, 6)
        _, tail, _ = self.stream().batch(4, 2)
        np.testing.assert_array_equal(targets[4:], tail)

    def test_other_seed_gives_other_samples(self):
        _, first, _ = self.stream(1).batch(0, 5)
        _, second, _ = self.stream(2).batch(0, 5)
        self.assertFalse(np.array_equal(first, second))

    def test_batch_shapes(self):
        rows, targets, grids = self.stream().batch(0, 3)
        self.assertEqual((3, 16), rows.shape)
        self.assertEqual((3, 16), targets.shape)
        self.assertEqual((3, 2), grids.shape)

    def test_rows_are_merged_rows_of_targets(self):
        rows, targets, _ = self.stream().batch(0, 3)
        merged = np.asarray(self.categories.merged_ids)
        np.testing.assert_array_equal(merged[targets], rows)

    def test_sample_records_its_seed(self):
        self.assertEqual(
            artgen.sample_seed(42, 2), self.stream().sample(2).seed
        )
