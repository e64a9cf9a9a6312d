import json

import numpy as np
import pytest

from hypcog.errors import InvalidInputError, SchemaError, TooLargeError
from hypcog.hyperbolicity import gromov_delta_exact
from hypcog.taxonomy import (DIMENSIONS, CognitiveLabel, Sample, SyntheticTree, builtin_taxonomy,
                             generate_synthetic, load_dataset, make_prototypes, read_features_csv,
                             read_labels_jsonl, save_dataset, tree_metric, write_features_csv,
                             write_labels_jsonl)

GOOD = {"id": "1", "context": "...", "target": "...", "emotion": "Joy", "thinking": "Logical",
        "stance": "Support", "intent": "Opinion Expression"}


class TestBuiltin:
    def test_leaf_counts(self):
        assert builtin_taxonomy().class_counts == (9, 8, 3, 7)

    def test_categories(self):
        tax = builtin_taxonomy()
        assert tax["emotion"].category_names == ("Positive", "Negative", "Neutral")
        assert tax["intent"].category_names == ("Representatives", "Directives", "Expressives")
        assert tax["thinking"].category_names == ("Intuitive", "Analytical")

    def test_stance_leaves(self):
        assert builtin_taxonomy()["stance"].leaves == ("Support", "Oppose", "Unclear")

    def test_joint_size(self):
        assert builtin_taxonomy().joint_size == 1512

    def test_each_leaf_has_one_parent(self):
        for dim in builtin_taxonomy().dimensions:
            assert len(dim.leaf_category) == dim.leaf_count
            assert len(set(dim.leaves)) == dim.leaf_count

    def test_surprise_is_positive(self):
        emo = builtin_taxonomy()["emotion"]
        assert emo.category_names[emo.leaf_category[emo.leaf_id("Surprise")]] == "Positive"


class TestLabel:
    def test_validate(self):
        CognitiveLabel(8, 7, 2, 6).validate()
        with pytest.raises(InvalidInputError):
            CognitiveLabel(9, 0, 0, 0).validate()

    def test_names_round_trip(self):
        lab = CognitiveLabel(3, 5, 1, 4)
        assert CognitiveLabel.from_names(lab.names()) == lab


class TestTree:
    def test_two_leaves(self):
        d = tree_metric(SyntheticTree(2, 1)).dist
        assert d[1, 2] == 2.0

    def test_root_to_leaf(self):
        t = SyntheticTree(2, 2)
        d = tree_metric(t).dist
        np.testing.assert_array_equal(d[0, t.depths() == 2], 2.0)

    def test_forty_nodes_zero_delta(self):
        s = tree_metric(SyntheticTree(3, 3))
        assert s.n == 40
        assert gromov_delta_exact(s).delta == 0.0

    @pytest.mark.parametrize("b,k", [(2, 5), (3, 4), (4, 3), (7, 2)])
    def test_level_sizes(self, b, k):
        t = SyntheticTree(b, k)
        counts = np.bincount(t.depths())
        np.testing.assert_array_equal(counts, [b ** l for l in range(k + 1)])

    def test_edge_length_scales(self):
        d1 = tree_metric(SyntheticTree(2, 3)).dist
        d2 = tree_metric(SyntheticTree(2, 3, 0.5)).dist
        np.testing.assert_allclose(d2, 0.5 * d1)

    def test_size_cap(self):
        with pytest.raises(TooLargeError):
            tree_metric(SyntheticTree(2, 12))


class TestDataset:
    def write(self, path, records):
        path.write_text("".join(json.dumps(r) + "\n" for r in records))

    def test_valid_line(self, tmp_path):
        self.write(tmp_path / "d.jsonl", [GOOD])
        (s,) = load_dataset(tmp_path / "d.jsonl")
        assert s.id == "1" and s.label.names()["intent"] == "Opinion Expression"

    def test_bad_label_names_line_and_field(self, tmp_path):
        self.write(tmp_path / "d.jsonl", [GOOD, {**GOOD, "id": "2", "emotion": "Happy"}])
        with pytest.raises(SchemaError) as exc:
            load_dataset(tmp_path / "d.jsonl")
        assert exc.value.line == 2 and exc.value.field == "emotion"
        assert "line 2" in str(exc.value) and "emotion" in str(exc.value)

    def test_missing_field(self, tmp_path):
        rec = dict(GOOD)
        del rec["stance"]
        self.write(tmp_path / "d.jsonl", [rec])
        with pytest.raises(SchemaError, match="stance"):
            load_dataset(tmp_path / "d.jsonl")

    def test_malformed_json(self, tmp_path):
        (tmp_path / "d.jsonl").write_text('{"id": 1,\n')
        with pytest.raises(SchemaError, match="line 1"):
            load_dataset(tmp_path / "d.jsonl")

    def test_empty_file(self, tmp_path):
        (tmp_path / "d.jsonl").write_text("")
        assert load_dataset(tmp_path / "d.jsonl") == []

    def test_round_trip(self, tmp_path):
        samples = [Sample("a", "ctx, with comma\nand newline", "tgt", CognitiveLabel(1, 2, 0, 3), "topic", "x"),
                   Sample("b", "", "t2", CognitiveLabel(8, 7, 2, 6))]
        save_dataset(tmp_path / "d.jsonl", samples)
        assert load_dataset(tmp_path / "d.jsonl") == samples


class TestSynthetic:
    def test_deterministic(self):
        a, la = generate_synthetic(50, 16, 0.2, 3)
        b, lb = generate_synthetic(50, 16, 0.2, 3)
        np.testing.assert_array_equal(a, b)
        assert la == lb

    def test_identical_labels_identical_features(self):
        x, labels = generate_synthetic(400, 64, 0.0, 0)
        seen = {}
        for row, lab in zip(x, labels):
            if lab in seen:
                np.testing.assert_array_equal(row, seen[lab])
            seen[lab] = row

    def test_hierarchy_in_prototypes(self):
        # closed form: sharing a category leaves only the leaf difference (norm sqrt(0.5)),
        # changing category adds the unit category difference on top
        tax = builtin_taxonomy()
        p = make_prototypes(64)
        for k, dim in enumerate(tax.dimensions):
            cat = np.asarray(dim.leaf_category)
            full = p.category[k][cat] + p.leaf[k]
            d = np.linalg.norm(full[:, None] - full[None], axis=-1)
            same = (cat[:, None] == cat[None]) & ~np.eye(len(cat), dtype=bool)
            diff = cat[:, None] != cat[None]
            if same.any() and diff.any():
                assert d[same].max() < d[diff].min()

    def test_noise_zero_category_closer(self):
        x, labels = generate_synthetic(300, 64, 0.0, 1)
        tax = builtin_taxonomy()
        cat = np.asarray(tax["emotion"].leaf_category)
        emo = np.array([l.emotion for l in labels])
        rest = np.array([l.as_tuple()[1:] for l in labels])
        # compare pairs that agree in every other dimension
        same_cat, diff_cat = [], []
        for i in range(len(x)):
            for j in range(i + 1, len(x)):
                if emo[i] == emo[j] or not np.array_equal(rest[i], rest[j]):
                    continue
                dist = np.linalg.norm(x[i] - x[j])
                (same_cat if cat[emo[i]] == cat[emo[j]] else diff_cat).append(dist)
        assert same_cat and diff_cat
        assert max(same_cat) < min(diff_cat)

    def test_label_weights(self):
        w = {"stance": [0, 0, 1]}
        _, labels = generate_synthetic(100, 16, 0.1, 0, label_weights=w)
        assert all(l.stance == 2 for l in labels)

    def test_bad_arguments(self):
        with pytest.raises(InvalidInputError):
            generate_synthetic(0, 16, 0.1, 0)
        with pytest.raises(InvalidInputError):
            generate_synthetic(10, 4, 0.1, 0)

    def test_file_round_trip(self, tmp_path):
        x, labels = generate_synthetic(20, 12, 0.3, 2)
        write_features_csv(tmp_path / "f.csv", x)
        write_labels_jsonl(tmp_path / "l.jsonl", labels)
        np.testing.assert_array_equal(read_features_csv(tmp_path / "f.csv"), x)
        assert read_labels_jsonl(tmp_path / "l.jsonl") == labels

    def test_dimension_order(self):
        assert DIMENSIONS == ("emotion", "thinking", "stance", "intent")
