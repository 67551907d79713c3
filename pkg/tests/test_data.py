"""
Unit tests for dataset files, seed splits and the synthetic generator
"""

import math
import os
import shutil
import tempfile
import unittest

import numpy as np

from poincare_align.data import (
    DatasetPaths,
    SyntheticSpec,
    dataset_statistics,
    format_statistics,
    generate_synthetic,
    load_dataset,
    read_alignments,
    read_triples,
    read_visual,
    split_alignments,
    write_dataset,
)
from poincare_align.exceptions import DataFormatError, InvalidInputError


def _write(path, lines):
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def _edges(store):
    return {tuple(sorted((h, t))) for h, _, t in store.triples}


class TestSplit(unittest.TestCase):
    def setUp(self):
        self.pairs = np.column_stack([np.arange(100), 100 + np.arange(100)])

    def test_low_percentage_split(self):
        seeds = split_alignments(self.pairs, 0.2, rng_seed=0)
        self.assertEqual(len(seeds.train_pairs), 20)
        self.assertEqual(len(seeds.test_pairs), 80)

    def test_split_is_disjoint_and_complete(self):
        seeds = split_alignments(self.pairs, 0.5, rng_seed=3)
        union = sorted(map(tuple, np.vstack([seeds.train_pairs, seeds.test_pairs]).tolist()))
        self.assertEqual(union, sorted(map(tuple, self.pairs.tolist())))

    def test_split_is_deterministic(self):
        a = split_alignments(self.pairs, 0.8, rng_seed=5)
        b = split_alignments(self.pairs, 0.8, rng_seed=5)
        np.testing.assert_array_equal(a.train_pairs, b.train_pairs)
        np.testing.assert_array_equal(a.test_pairs, b.test_pairs)

    def test_halves_round_up(self):
        seeds = split_alignments(self.pairs[:5], 0.5, rng_seed=0)
        self.assertEqual(len(seeds.train_pairs), 3)

    def test_invalid_fraction(self):
        for bad in (0.0, 1.0, -0.1):
            with self.assertRaises(InvalidInputError):
                split_alignments(self.pairs, bad, rng_seed=0)


class TestFileFormats(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.triples1 = os.path.join(self.temp_dir, "triples_1.tsv")
        self.triples2 = os.path.join(self.temp_dir, "triples_2.tsv")
        self.alignments = os.path.join(self.temp_dir, "alignments.tsv")
        _write(self.triples1, ["a\tknows\tb", "b\tknows\tc", "", "a\tlikes\tc"])
        _write(self.triples2, ["x\tr\ty", "y\tr\tz"])

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_read_triples(self):
        store = read_triples(self.triples1)
        self.assertEqual(store.entities, ["a", "b", "c"])
        self.assertEqual(store.relations, ["knows", "likes"])
        self.assertEqual(len(store.triples), 3)

    def test_malformed_line_names_file_and_line(self):
        _write(self.triples1, ["a\tknows\tb", "broken line"])
        with self.assertRaises(DataFormatError) as ctx:
            read_triples(self.triples1)
        self.assertIn(f"{self.triples1}:2", str(ctx.exception))

    def test_unknown_alignment_entity_is_named(self):
        _write(self.alignments, ["a\tx", "ghost\ty"])
        with self.assertRaises(DataFormatError) as ctx:
            read_alignments(self.alignments, read_triples(self.triples1), read_triples(self.triples2))
        self.assertIn("ghost", str(ctx.exception))

    def test_duplicate_alignment_rejected(self):
        _write(self.alignments, ["a\tx", "a\tx"])
        with self.assertRaises(DataFormatError):
            read_alignments(self.alignments, read_triples(self.triples1), read_triples(self.triples2))

    def test_visual_file(self):
        path = os.path.join(self.temp_dir, "visual_1.tsv")
        _write(path, ["a\t1.0\t2.0", "c\t0.5\t-0.5"])
        visual = read_visual(path, read_triples(self.triples1))
        self.assertEqual(visual.dim, 2)
        self.assertEqual(visual.mask.tolist(), [True, False, True])
        np.testing.assert_array_equal(visual.matrix[1], [0.0, 0.0])

    def test_visual_dimension_mismatch(self):
        path = os.path.join(self.temp_dir, "visual_1.tsv")
        _write(path, ["a\t1.0\t2.0", "b\t0.5"])
        with self.assertRaises(DataFormatError) as ctx:
            read_visual(path, read_triples(self.triples1))
        self.assertIn(f"{path}:2", str(ctx.exception))

    def test_visual_non_numeric(self):
        path = os.path.join(self.temp_dir, "visual_1.tsv")
        _write(path, ["a\t1.0\tabc"])
        with self.assertRaises(DataFormatError):
            read_visual(path, read_triples(self.triples1))

    def test_missing_file_is_named(self):
        paths = DatasetPaths.in_directory(self.temp_dir, with_visual=False)
        with self.assertRaises(DataFormatError) as ctx:
            load_dataset(paths, 0.5, rng_seed=0)
        self.assertIn("alignments.tsv", str(ctx.exception))

    def test_load_without_visual(self):
        _write(self.alignments, ["a\tx", "b\ty", "c\tz"])
        dataset = load_dataset(DatasetPaths.in_directory(self.temp_dir, with_visual=False), 0.5, rng_seed=0)
        self.assertFalse(dataset.has_visual)
        self.assertEqual(dataset.merged.graph.n, 6)
        self.assertEqual(len(dataset.seeds.train_pairs), 2)
        self.assertEqual(dataset.entity_names(), ["a", "b", "c", "x", "y", "z"])


class TestSyntheticGenerator(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_noise_free_copy_is_isomorphic(self):
        dataset = generate_synthetic(SyntheticSpec(n_entities=50, rng_seed=1))
        partner = {a: b for a, b in dataset.alignments}
        index2 = dataset.kg2.entity_index
        mapped = {
            tuple(sorted((index2[partner[dataset.kg1.entities[u]]], index2[partner[dataset.kg1.entities[v]]])))
            for u, v in _edges(dataset.kg1)
        }
        self.assertEqual(mapped, _edges(dataset.kg2))

    def test_edge_noise_changes_edges(self):
        clean = generate_synthetic(SyntheticSpec(n_entities=50, rng_seed=1))
        noisy = generate_synthetic(SyntheticSpec(n_entities=50, rng_seed=1, edge_noise=0.2))
        self.assertEqual(_edges(clean.kg1), _edges(noisy.kg1))
        self.assertNotEqual(_edges(clean.kg2), _edges(noisy.kg2))

    def test_full_visual_signal_copies_vectors(self):
        dataset = generate_synthetic(SyntheticSpec(n_entities=30, visual_signal=1.0, rng_seed=2))
        for a, b in dataset.alignments:
            i = dataset.kg1.entity_index[a]
            j = dataset.kg2.entity_index[b]
            np.testing.assert_array_equal(dataset.visual1.matrix[i], dataset.visual2.matrix[j])

    def test_expected_edge_count(self):
        """About n * avg_degree / 2 edges; isolated-node attachment adds only a few."""
        dataset = generate_synthetic(SyntheticSpec(n_entities=100, avg_degree=4.0, rng_seed=0))
        p = 4.0 / 99
        mean = 4950 * p
        sigma = math.sqrt(4950 * p * (1 - p))
        self.assertLess(abs(len(dataset.kg1.triples) - mean), 3 * sigma + 5)

    def test_rewiring_a_complete_graph_terminates(self):
        for n, degree in ((3, 2.0), (5, 4.0)):
            dataset = generate_synthetic(
                SyntheticSpec(n_entities=n, avg_degree=degree, edge_noise=0.5, rng_seed=0)
            )
            self.assertEqual(len(dataset.kg1.triples), n * (n - 1) // 2)
            self.assertEqual(len(dataset.kg2.triples), len(dataset.kg1.triples))

    def test_dense_rewiring_keeps_edge_count(self):
        """Only a couple of non-edges exist; the rest of the moved edges come back."""
        for seed in range(5):
            dataset = generate_synthetic(
                SyntheticSpec(n_entities=6, avg_degree=4.5, edge_noise=1.0, rng_seed=seed)
            )
            self.assertEqual(len(dataset.kg2.triples), len(dataset.kg1.triples))
            self.assertEqual(len(_edges(dataset.kg2)), len(dataset.kg2.triples))

    def test_every_entity_in_a_triple(self):
        dataset = generate_synthetic(SyntheticSpec(n_entities=40, avg_degree=1.0, rng_seed=4))
        for store in (dataset.kg1, dataset.kg2):
            touched = {h for h, _, _ in store.triples} | {t for _, _, t in store.triples}
            self.assertEqual(len(touched), store.n_entities)

    def test_image_coverage(self):
        dataset = generate_synthetic(SyntheticSpec(n_entities=200, image_coverage=0.5, rng_seed=0))
        self.assertLess(dataset.visual1.n_images, 200)
        self.assertGreater(dataset.visual1.n_images, 50)
        np.testing.assert_array_equal(dataset.visual1.matrix[~dataset.visual1.mask], 0.0)

    def test_bit_reproducible(self):
        a = generate_synthetic(SyntheticSpec(n_entities=30, edge_noise=0.1, rng_seed=9))
        b = generate_synthetic(SyntheticSpec(n_entities=30, edge_noise=0.1, rng_seed=9))
        self.assertEqual(a.kg1.triples, b.kg1.triples)
        self.assertEqual(a.kg2.triples, b.kg2.triples)
        np.testing.assert_array_equal(a.visual2.matrix, b.visual2.matrix)
        np.testing.assert_array_equal(a.seeds.train_pairs, b.seeds.train_pairs)

    def test_settings_validation(self):
        with self.assertRaises(InvalidInputError):
            SyntheticSpec(n_entities=1)
        with self.assertRaises(InvalidInputError):
            SyntheticSpec(n_entities=10, avg_degree=10.0)
        with self.assertRaises(InvalidInputError):
            SyntheticSpec(edge_noise=1.5)

    def test_write_load_write_is_stable(self):
        generated = generate_synthetic(SyntheticSpec(n_entities=30, image_coverage=0.8, rng_seed=3))
        first_dir = os.path.join(self.temp_dir, "first")
        second_dir = os.path.join(self.temp_dir, "second")
        first = load_dataset(write_dataset(generated, first_dir), 0.3, rng_seed=3)
        second = load_dataset(write_dataset(first, second_dir), 0.3, rng_seed=3)
        self.assertEqual(first.kg1.entities, second.kg1.entities)
        self.assertEqual(first.kg2.named_triples(), second.kg2.named_triples())
        self.assertEqual(first.alignments, second.alignments)
        np.testing.assert_array_equal(first.visual1.matrix, second.visual1.matrix)
        np.testing.assert_array_equal(first.visual2.mask, second.visual2.mask)
        np.testing.assert_array_equal(first.seeds.test_pairs, second.seeds.test_pairs)
        self.assertEqual(set(first.alignments), set(generated.alignments))
        for name, i in first.kg1.entity_index.items():
            j = generated.kg1.entity_index[name]
            np.testing.assert_array_equal(first.visual1.matrix[i], generated.visual1.matrix[j])

    def test_statistics(self):
        dataset = generate_synthetic(SyntheticSpec(n_entities=20, image_coverage=1.0, rng_seed=0))
        rows = dataset_statistics(dataset)
        self.assertEqual([r["entities"] for r in rows], [20, 20])
        self.assertEqual(rows[1]["same_as"], 20)
        self.assertEqual(rows[0]["images"], 20)
        text = format_statistics(rows)
        self.assertIn("Rel.Triples", text)
        self.assertEqual(len(text.splitlines()), 3)


if __name__ == '__main__':
    unittest.main()
