import os
import unittest

import numpy as np

from wordseg import (
    backbone,
    configuration,
    container,
    model,
    pipeline,
    postproc,
    utils,
)


TINY = {
    "generation": {"S": 2, "H": 2, "W": 2, "num_categories": 3},
    "model": {
        "D": 8,
        "n_layers_enc": 1,
        "n_layers_dec": 1,
        "n_heads": 2,
        "ffn_mult": 2,
        "dtype": "float64",
        "patch": 2,
    },
    "optimizer": {"batch_size": 2, "steps": 2, "log_every": 1},
    "postprocess": {"K": 2, "iterations": 2},
}


def tiny_config(**settings):
    config = configuration.RunConfig()
    config.from_dict(TINY)
    config.from_dict(settings)
    return config


class TestReadHierarchy(unittest.TestCase):
    def setUp(self):
        self.filename = "hierarchy.yaml"

    def tearDown(self):
        if os.path.exists(self.filename):
            os.remove(self.filename)

    def test_packaged_hierarchy(self):
        mapping = pipeline.read_hierarchy("packaged")
        self.assertEqual(27, len(mapping))
        self.assertIn("giraffe", mapping["animal"])

    def test_file_is_read_in_order(self):
        with open(self.filename, "w", encoding="utf8") as file:
            file.write("plant: [grass, tree]\nanimal: [giraffe]\n")
        self.assertEqual(
            {"plant": ["grass", "tree"], "animal": ["giraffe"]},
            pipeline.read_hierarchy(self.filename),
        )
        self.assertEqual(
            ["plant", "animal"], list(pipeline.read_hierarchy(self.filename))
        )

    def test_coarse_category_without_fine_words_raises(self):
        with open(self.filename, "w", encoding="utf8") as file:
            file.write("plant: []\n")
        with self.assertRaises(ValueError):
            pipeline.read_hierarchy(self.filename)


class TestSetup(unittest.TestCase):
    def setUp(self):
        self.hierarchy = "hierarchy.yaml"

    def tearDown(self):
        if os.path.exists(self.hierarchy):
            os.remove(self.hierarchy)

    def test_categories_are_first_names_of_packaged_list(self):
        run = pipeline.setup(tiny_config())
        self.assertEqual(["grass", "giraffe", "sky"], run.categories.names)

    def test_prompt_enumerates_categories(self):
        run = pipeline.setup(tiny_config())
        text = "".join(run.vocabulary.entries[i] for i in run.prompt_ids)
        self.assertEqual(
            "what is the segmentation map of the image? "
            "object: grass, giraffe, sky",
            text,
        )

    def test_setup_is_deterministic(self):
        first = pipeline.setup(tiny_config())
        second = pipeline.setup(tiny_config())
        np.testing.assert_array_equal(
            first.embedding.rows, second.embedding.rows
        )

    def test_seed_changes_embedding(self):
        first = pipeline.setup(tiny_config())
        second = pipeline.setup(tiny_config(seed=2))
        self.assertFalse(
            np.array_equal(first.embedding.rows, second.embedding.rows)
        )

    def test_too_many_categories_raise(self):
        with self.assertRaises(configuration.ConfigurationError):
            pipeline.setup(tiny_config(num_categories=1000))

    def test_too_long_prompt_raises(self):
        with self.assertRaises(configuration.ConfigurationError) as context:
            pipeline.setup(tiny_config(L_T_max=4))
        self.assertEqual("L_T_max", context.exception.key)

    def test_hierarchy_gives_coarse_categories_and_fine_words(self):
        with open(self.hierarchy, "w", encoding="utf8") as file:
            file.write("animal: [giraffe, zebra]\nplant: [grass, tree]\n")
        run = pipeline.setup(tiny_config(hierarchy=self.hierarchy))
        self.assertEqual(["animal", "plant"], run.categories.names)
        self.assertEqual(
            ["giraffe", "zebra", "grass", "tree"], run.fine.names
        )
        self.assertEqual(2, len(run.hierarchy))
        _, targets, _ = run.stream.batch(0, 4)
        self.assertLess(targets.max(), 2)


class TestGenerateData(unittest.TestCase):
    def setUp(self):
        self.run = pipeline.setup(tiny_config())

    def test_sections_and_shapes(self):
        tensors, masks = pipeline.generate_data(self.run, count=3)
        self.assertEqual((3, 4, 8), tensors["tokens"].shape)
        self.assertEqual(np.dtype("float32"), tensors["tokens"].dtype)
        self.assertEqual((3, 4), tensors["targets"].shape)
        self.assertEqual((3, 4), tensors["row_ids"].shape)
        self.assertEqual((3, 2), tensors["grids"].shape)
        np.testing.assert_array_equal([0, 1, 2], tensors["indices"])
        self.assertEqual(3, len(masks))
        self.assertEqual((2, 2), masks[0].shape)

    def test_tokens_are_embedding_rows(self):
        tensors, _ = pipeline.generate_data(self.run, count=2)
        np.testing.assert_allclose(
            self.run.embedding.rows[tensors["row_ids"]],
            tensors["tokens"],
            atol=1e-7,
        )

    def test_masks_equal_targets(self):
        tensors, masks = pipeline.generate_data(self.run, count=2)
        for target, mask in zip(tensors["targets"], masks):
            np.testing.assert_array_equal(target, mask.labels.ravel())

    def test_offset_generation_continues_stream(self):
        full, _ = pipeline.generate_data(self.run, start=0, count=5)
        tail, _ = pipeline.generate_data(self.run, start=3, count=2)
        np.testing.assert_array_equal(full["targets"][3:], tail["targets"])
        np.testing.assert_array_equal([3, 4], tail["indices"])

    def test_data_are_byte_identical_for_same_config(self):
        first, _ = pipeline.generate_data(
            pipeline.setup(tiny_config()), count=4
        )
        second, _ = pipeline.generate_data(
            pipeline.setup(tiny_config()), count=4
        )
        self.assertEqual(
            container.encode_container(first),
            container.encode_container(second),
        )

    def test_no_samples_raise(self):
        with self.assertRaises(ValueError):
            pipeline.generate_data(self.run, count=0)


class TestTrain(unittest.TestCase):
    def setUp(self):
        self.run = pipeline.setup(tiny_config())

    def test_new_checkpoint_carries_task_and_settings(self):
        checkpoint = pipeline.new_checkpoint(self.run)
        self.assertEqual(
            ["grass", "giraffe", "sky"], checkpoint.category_names
        )
        self.assertEqual(4, checkpoint.cfg.L_I)
        self.assertEqual((12, 8), checkpoint.projection[0].shape)
        self.assertEqual(2, checkpoint.settings["generation"]["H"])

    def test_train_takes_configured_steps(self):
        checkpoint = pipeline.train(self.run)
        self.assertEqual(2, checkpoint.optimizer.t)

    def test_train_on_generated_data(self):
        data, _ = pipeline.generate_data(self.run, count=3)
        checkpoint = pipeline.train(self.run, data=data, steps=3)
        self.assertEqual(3, checkpoint.optimizer.t)

    def test_training_is_deterministic(self):
        first = pipeline.train(pipeline.setup(tiny_config()))
        second = pipeline.train(pipeline.setup(tiny_config()))
        for name, tensor in first.params.items():
            np.testing.assert_array_equal(
                tensor.data, second.params[name].data
            )

    def test_data_of_other_grid_raise(self):
        data, _ = pipeline.generate_data(
            pipeline.setup(tiny_config(H=1)), count=2
        )
        with self.assertRaises(ValueError):
            pipeline.train(self.run, data=data, steps=1)

    def test_data_of_other_seed_raise(self):
        data, _ = pipeline.generate_data(
            pipeline.setup(tiny_config(seed=5)), count=2
        )
        with self.assertRaises(ValueError):
            pipeline.train(self.run, data=data, steps=1)

    def test_training_continues_from_checkpoint(self):
        checkpoint = pipeline.train(self.run, steps=1)
        checkpoint = pipeline.train(self.run, steps=2, checkpoint=checkpoint)
        self.assertEqual(3, checkpoint.optimizer.t)


class TestSegment(unittest.TestCase):
    def setUp(self):
        self.run = pipeline.setup(tiny_config())
        self.checkpoint = pipeline.train(self.run, steps=1)

    def test_segment_tokens_gives_maps_on_grid(self):
        data, _ = pipeline.generate_data(self.run, count=2)
        tokens = pipeline.embedding_tokens(self.checkpoint, data["row_ids"])
        maps = pipeline.segment_tokens(self.checkpoint, tokens)
        self.assertEqual(2, len(maps))
        self.assertEqual((2, 2), (maps[0].h, maps[0].w))
        np.testing.assert_allclose(
            np.ones(4), maps[0].probs.sum(axis=1), atol=1e-6
        )

    def test_segment_tokens_agrees_with_model_forward(self):
        data, _ = pipeline.generate_data(self.run, count=1)
        tokens = pipeline.embedding_tokens(self.checkpoint, data["row_ids"])
        probs = pipeline.segment_tokens(self.checkpoint, tokens)[0].probs
        image = model.image_tokens(
            {"tokens": tokens}, self.checkpoint.params, self.checkpoint.cfg
        )
        logits = model.forward(
            image,
            self.checkpoint.task,
            self.checkpoint.params,
            self.checkpoint.cfg,
        ).data[0]
        expected = np.exp(logits - logits.max(axis=1, keepdims=True))
        expected /= expected.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(expected, probs, atol=1e-9)

    def test_tokens_of_wrong_shape_raise(self):
        with self.assertRaises(ValueError):
            pipeline.segment_tokens(self.checkpoint, np.zeros((1, 3, 8)))

    def test_embedding_row_out_of_range_raises(self):
        with self.assertRaises(IndexError):
            pipeline.embedding_tokens(self.checkpoint, [[10**6]])

    def test_segment_image_gives_mask_of_image_size(self):
        image = backbone.RasterImage(
            utils.make_rng(1).uniform(0.1, 1.0, size=(4, 3, 3))
        )
        probs, features, mask = pipeline.segment_image(
            self.checkpoint, image, postproc.PostprocessConfig(K=2)
        )
        self.assertEqual((4, 3), mask.shape)
        self.assertEqual((2, 2), (probs.h, probs.w))
        self.assertEqual((4, 12), features.rows.shape)
        self.assertLess(mask.labels.max(), 3)

    def test_greyscale_image_is_accepted(self):
        image = backbone.RasterImage(np.full((4, 4), 0.5))
        _, features, mask = pipeline.segment_image(self.checkpoint, image)
        self.assertEqual((4, 4), mask.shape)
        self.assertEqual(12, features.rows.shape[1])

    def test_image_of_other_grid_raises(self):
        image = backbone.RasterImage(np.full((8, 8, 3), 0.5))
        with self.assertRaises(ValueError):
            pipeline.segment_image(self.checkpoint, image)
