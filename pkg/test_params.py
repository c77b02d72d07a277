#!/usr/bin/env python3
"""Tests for the float64 parameter container in corrkit.params."""

import json
import os
import shutil
import tempfile
import unittest

import numpy as np

from corrkit.errors import FormatError
from corrkit.featxform import PatchEmbedSpec, UpsampleAttention, guided_upsample, multiscale_patch_embed
from corrkit.matching import FeatureMap
from corrkit.params import decode_params, encode_params, load_params, save_params


class TestParams(unittest.TestCase):

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_manifest_offsets_count_elements(self):
        payload, manifest = encode_params({"a": np.zeros((2, 3)), "b": np.ones(4)})
        meta = json.loads(manifest)
        self.assertEqual(meta["format"], "corrkit-params")
        self.assertEqual([b["offset"] for b in meta["blocks"]], [0, 6])
        self.assertEqual(len(payload), 8 * 10)

    def test_saved_attention_reproduces_output(self):
        """Weights saved and reloaded give bit-identical upsampling"""
        # Arrange
        rng = np.random.default_rng(0)
        attn = UpsampleAttention.seeded(8, heads=2, scale=2, seed=3)
        low = FeatureMap(rng.normal(size=(3, 3, 8)), stride=4)
        guide = FeatureMap(rng.normal(size=(6, 6, 8)), stride=2)
        base = os.path.join(self.test_dir, "upsample")

        # Act
        save_params(base, attn.to_blocks())
        loaded = UpsampleAttention.from_blocks(load_params(base), heads=2, scale=2)

        # Assert
        np.testing.assert_array_equal(guided_upsample(low, guide, loaded).data,
                                      guided_upsample(low, guide, attn).data)

    def test_saved_embedding_reproduces_output(self):
        rng = np.random.default_rng(1)
        spec = PatchEmbedSpec.seeded(2, embed_dim=4, out_channels=3, seed=7)
        pyramid = {s: FeatureMap(rng.normal(size=(16 // s, 16 // s, 2)), stride=s) for s in (2, 4, 8, 16)}
        base = os.path.join(self.test_dir, "embed")

        save_params(base, spec.to_blocks())
        loaded = PatchEmbedSpec.from_blocks(load_params(base))

        np.testing.assert_array_equal(multiscale_patch_embed(pyramid, loaded).data,
                                      multiscale_patch_embed(pyramid, spec).data)

    def test_overrun_rejected(self):
        payload, manifest = encode_params({"a": np.zeros(4)})
        with self.assertRaises(FormatError):
            decode_params(payload[:16], manifest)

    def test_wrong_format_rejected(self):
        payload, _ = encode_params({"a": np.zeros(1)})
        with self.assertRaises(FormatError):
            decode_params(payload, json.dumps({"format": "other", "version": 1, "dtype": "<f8", "blocks": []}))

    def test_malformed_json_rejected(self):
        with self.assertRaises(FormatError):
            decode_params(b"", "{not json")

    def test_duplicate_block_rejected(self):
        payload, manifest = encode_params({"a": np.zeros(2)})
        meta = json.loads(manifest)
        meta["blocks"].append(dict(meta["blocks"][0]))
        with self.assertRaises(FormatError):
            decode_params(payload, json.dumps(meta))


if __name__ == "__main__":
    unittest.main()
