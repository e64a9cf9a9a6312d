import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest
import torch

from hypcog.alignment import read_trace_csv
from hypcog.cli import build_parser, main, parse_depths
from hypcog.hcn import HcnConfig, build_model, load_checkpoint, save_checkpoint
from hypcog.hyperbolicity import write_distance_csv
from hypcog.metrics import PredictionSet, read_predictions_jsonl, write_predictions_jsonl
from hypcog.taxonomy import SyntheticTree, tree_metric

TINY_HCN = {"feature_dim": 8, "hidden_dim": 8, "layers_N": 1, "heads_H": 2, "batch_size": 8}
TINY_ALIGN = {"anchor_dim": 4, "model_dim": 8, "prompt_len": 2, "projector_hidden": 8,
              "vocab": 8, "n_samples": 24, "epochs": 1}
TIMESTAMPS = ("started", "finished")


def strip_times(obj):
    if isinstance(obj, dict):
        return {k: strip_times(v) for k, v in obj.items() if k not in TIMESTAMPS}
    if isinstance(obj, list):
        return [strip_times(v) for v in obj]
    return obj


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def same_json(a, b):
    return json.dumps(strip_times(load_json(a)), sort_keys=True) == json.dumps(strip_times(load_json(b)), sort_keys=True)


def write_json(path, obj):
    path.write_text(json.dumps(obj), encoding="utf-8")
    return str(path)


@pytest.fixture
def square_csv(tmp_path):
    p = tmp_path / "square.csv"
    s2 = math.sqrt(2.0)
    rows = [[0, 1, s2, 1], [1, 0, 1, s2], [s2, 1, 0, 1], [1, s2, 1, 0]]
    p.write_text("\n".join(",".join(repr(float(v)) for v in r) for r in rows) + "\n")
    return str(p)


@pytest.fixture
def synth_data(tmp_path):
    f, l = tmp_path / "feats.csv", tmp_path / "labels.jsonl"
    assert main(["synth", "features", "--n", "40", "--feature-dim", "8", "--seed", "3",
                 "--features-out", str(f), "--labels-out", str(l)]) == 0
    return str(f), str(l)


class TestParser:
    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0

    @pytest.mark.parametrize("sub", [["delta"], ["capacity"], ["hcn", "train"], ["hcn", "predict"],
                                     ["align"], ["metrics"], ["synth", "features"], ["synth", "tree"]])
    def test_subcommand_help(self, sub, capsys):
        with pytest.raises(SystemExit) as exc:
            main(sub + ["--help"])
        assert exc.value.code == 0
        assert "--out" in capsys.readouterr().out or sub == ["synth", "features"]

    def test_help_documents_flags(self, capsys):
        with pytest.raises(SystemExit):
            main(["delta", "--help"])
        text = capsys.readouterr().out
        for flag in ("--input", "--space", "--mode", "--quadruples", "--seed", "--out"):
            assert flag in text

    def test_console_script_help(self):
        r = subprocess.run([sys.executable, "-m", "hypcog.cli", "--help"], capture_output=True, text=True)
        assert r.returncode == 0 and "capacity" in r.stdout

    @pytest.mark.parametrize("text,expected", [("1..4", (1, 2, 3, 4)), ("3-5", (3, 4, 5)),
                                               ("2", (2,)), ("1,2,5", (1, 2, 5))])
    def test_parse_depths(self, text, expected):
        assert parse_depths(text) == expected

    def test_usage_error_exit_code(self, capsys):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(["delta"])
        assert exc.value.code == 2


class TestDelta:
    def test_unit_square(self, square_csv, tmp_path):
        out = tmp_path / "d.json"
        assert main(["delta", "--input", square_csv, "--out", str(out)]) == 0
        rep = load_json(out)
        assert abs(rep["delta"] - (math.sqrt(2) - 1)) < 1e-12
        man = rep["manifest"]
        assert man["subcommand"] == "delta" and man["seed"] == 42
        assert list(man["inputs"].values())[0] and len(list(man["inputs"].values())[0]) == 64

    def test_tree_metric_zero(self, tmp_path):
        src, out = tmp_path / "tree.csv", tmp_path / "d.json"
        assert main(["synth", "tree", "--branching", "3", "--depth", "3", "--out", str(src)]) == 0
        assert main(["delta", "--input", str(src), "--out", str(out)]) == 0
        assert load_json(out)["delta"] == 0.0

    def test_hyperbolic_embeddings(self, tmp_path):
        src, emb, out = tmp_path / "t.csv", tmp_path / "e.jsonl", tmp_path / "d.json"
        assert main(["synth", "tree", "--depth", "3", "--out", str(src), "--embed-out", str(emb)]) == 0
        assert main(["delta", "--input", str(emb), "--space", "hyperbolic", "--out", str(out)]) == 0
        assert load_json(out)["delta"] >= 0

    def test_sampled_mode(self, tmp_path):
        src, out = tmp_path / "m.csv", tmp_path / "d.json"
        pts = np.random.default_rng(0).random((12, 2))
        from hypcog.hyperbolicity import metric_from_embeddings
        write_distance_csv(src, metric_from_embeddings(pts, "euclidean"))
        assert main(["delta", "--input", str(src), "--mode", "sampled", "--quadruples", "500",
                     "--out", str(out)]) == 0
        assert load_json(out)["mode"] == "sampled"

    def test_missing_file_exit_2(self, tmp_path):
        assert main(["delta", "--input", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o.json")]) == 2

    def test_invalid_metric_exit_3(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("0,1,5\n1,0,1\n5,1,0\n")
        assert main(["delta", "--input", str(p), "--out", str(tmp_path / "o.json")]) == 3

    def test_asymmetric_exit_3(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("0,1\n2,0\n")
        assert main(["delta", "--input", str(p), "--out", str(tmp_path / "o.json")]) == 3


class TestCapacity:
    ARGS = ["--depths", "0..3", "--max-iter", "1500", "--restarts", "4"]

    def test_sweep(self, tmp_path):
        out = tmp_path / "cap.json"
        assert main(["capacity", *self.ARGS, "--out", str(out)]) == 0
        rep = load_json(out)
        recs = rep["records"]
        assert [r["k"] for r in recs] == [0, 1, 2, 3]
        assert recs[0]["min_radius_euclidean"] == 0 and recs[0]["radius_hyperbolic"] == 0
        radii = [r["min_radius_euclidean"] for r in recs]
        assert all(b >= a for a, b in zip(radii, radii[1:]))
        with open(tmp_path / "cap.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4

    def test_cap_exit_4(self, tmp_path):
        assert main(["capacity", "--depths", "1..17", "--out", str(tmp_path / "c.json")]) == 4

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for p in (a, b):
            assert main(["capacity", *self.ARGS, "--seed", "5", "--out", str(p)]) == 0
        assert same_json(a, b)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestHcn:
    def test_synthetic_train_lowers_loss(self, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", TINY_HCN)
        out = tmp_path / "m.json"
        assert main(["hcn", "train", "--synthetic", "128", "--config", cfg, "--steps", "60",
                     "--seed", "1", "--out", str(out)]) == 0
        with open(tmp_path / "m.trace.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 60
        assert float(rows[-1]["total"]) < float(rows[0]["total"])
        assert load_json(out)["manifest"]["subcommand"] == "hcn train"

    def test_round_trip_to_metrics(self, tmp_path, synth_data):
        feats, labels = synth_data
        cfg = write_json(tmp_path / "cfg.json", TINY_HCN)
        model, preds, rep = tmp_path / "m.json", tmp_path / "p.jsonl", tmp_path / "r.json"
        assert main(["hcn", "train", "--features", feats, "--labels", labels, "--config", cfg,
                     "--steps", "10", "--out", str(model)]) == 0
        assert main(["hcn", "predict", "--model", str(model), "--features", feats, "--labels", labels,
                     "--out", str(preds)]) == 0
        ps = read_predictions_jsonl(preds)
        assert len(ps) == 40
        assert main(["metrics", "--pred", str(preds), "--out", str(rep)]) == 0
        r = load_json(rep)
        assert 0.0 <= r["PMA@4"] <= r["PMA@1"] <= 1.0

    def test_zero_model_predicts_class_zero(self, tmp_path, synth_data):
        feats, _ = synth_data
        model = build_model(HcnConfig.from_dict(TINY_HCN))
        with torch.no_grad():
            for p in model.parameters():
                p.zero_()
        ckpt, preds = tmp_path / "zero.json", tmp_path / "p.jsonl"
        save_checkpoint(ckpt, model)
        assert main(["hcn", "predict", "--model", str(ckpt), "--features", feats, "--out", str(preds)]) == 0
        from hypcog.taxonomy import builtin_taxonomy
        tax = builtin_taxonomy()
        first = [tax.dimensions[k].leaves[0] for k in range(4)]
        for line in preds.read_text().splitlines():
            rec = json.loads(line)
            assert list(rec["pred"].values()) == first

    def test_feature_width_mismatch_exit_3(self, tmp_path, synth_data):
        feats, labels = synth_data
        cfg = write_json(tmp_path / "cfg.json", {**TINY_HCN, "feature_dim": 16})
        assert main(["hcn", "train", "--features", feats, "--labels", labels, "--config", cfg,
                     "--steps", "2", "--out", str(tmp_path / "m.json")]) == 3

    def test_bad_label_exit_3(self, tmp_path, synth_data):
        feats, labels = synth_data
        lines = open(labels).read().splitlines()
        rec = json.loads(lines[4])
        rec["emotion"] = "Boredom"
        lines[4] = json.dumps(rec)
        bad = tmp_path / "bad.jsonl"
        bad.write_text("\n".join(lines) + "\n")
        cfg = write_json(tmp_path / "cfg.json", TINY_HCN)
        assert main(["hcn", "train", "--features", feats, "--labels", str(bad), "--config", cfg,
                     "--steps", "2", "--out", str(tmp_path / "m.json")]) == 3

    def test_unknown_config_key_exit_3(self, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", {"bogus": 1})
        assert main(["hcn", "train", "--synthetic", "8", "--config", cfg, "--steps", "1",
                     "--out", str(tmp_path / "m.json")]) == 3

    def test_deterministic(self, tmp_path, synth_data):
        feats, _ = synth_data
        cfg = write_json(tmp_path / "cfg.json", TINY_HCN)
        outs = []
        for tag in "ab":
            m, p = tmp_path / f"{tag}.json", tmp_path / f"{tag}.jsonl"
            assert main(["hcn", "train", "--synthetic", "64", "--config", cfg, "--steps", "15",
                         "--seed", "4", "--out", str(m)]) == 0
            assert main(["hcn", "predict", "--model", str(m), "--features", feats, "--out", str(p)]) == 0
            outs.append((m, p, tmp_path / f"{tag}.trace.csv"))
        (ma, pa, ta), (mb, pb, tb) = outs
        assert same_json(ma, mb)
        assert pa.read_bytes() == pb.read_bytes()
        assert ta.read_bytes() == tb.read_bytes()

    def test_checkpoint_round_trip(self, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", TINY_HCN)
        out = tmp_path / "m.json"
        assert main(["hcn", "train", "--synthetic", "16", "--config", cfg, "--steps", "2",
                     "--out", str(out)]) == 0
        assert load_checkpoint(out).cfg.feature_dim == 8


class TestAlign:
    def run(self, tmp_path, name, extra=(), cfg=TINY_ALIGN):
        c = write_json(tmp_path / f"{name}.cfg.json", cfg)
        out = tmp_path / name
        code = main(["align", "--config", c, "--out", str(out), *extra])
        return code, out

    def test_outputs(self, tmp_path):
        code, out = self.run(tmp_path, "a", ["--steps", "8"])
        assert code == 0
        with open(out / "trace.csv", newline="") as fh:
            assert next(csv.reader(fh)) == ["step", "sft", "sct", "total"]
        assert len(read_trace_csv(out / "trace.csv")) == 8
        summary = load_json(out / "summary.json")
        assert summary["steps"] == 8 and summary["manifest"]["subcommand"] == "align"

    def test_lambda_zero_total_is_sft(self, tmp_path):
        code, out = self.run(tmp_path, "z", ["--steps", "6"], {**TINY_ALIGN, "lambda_sct": 0.0})
        assert code == 0
        for row in read_trace_csv(out / "trace.csv"):
            assert row.total == row.sft
            assert row.sct > 0

    def test_anchor_file(self, tmp_path):
        anchors = tmp_path / "anchors.jsonl"
        vecs = np.random.default_rng(2).standard_normal((24, 5))
        anchors.write_text("".join(json.dumps({"id": str(i), "vec": v.tolist()}) + "\n" for i, v in enumerate(vecs)))
        code, out = self.run(tmp_path, "f", ["--steps", "4", "--anchors", str(anchors)])
        assert code == 0
        assert load_json(out / "summary.json")["manifest"]["config"]["anchor_dim"] == 5

    def test_from_hcn(self, tmp_path):
        hc = write_json(tmp_path / "hcn.json", TINY_HCN)
        ckpt = tmp_path / "m.json"
        assert main(["hcn", "train", "--synthetic", "16", "--config", hc, "--steps", "2", "--out", str(ckpt)]) == 0
        code, out = self.run(tmp_path, "h", ["--steps", "4", "--from-hcn", str(ckpt)])
        assert code == 0
        assert load_json(out / "summary.json")["manifest"]["config"]["anchor_dim"] == 8

    def test_divergence_exit_5(self, tmp_path):
        code, _ = self.run(tmp_path, "d", ["--steps", "30"], {**TINY_ALIGN, "learning_rate": 1e6, "lambda_sct": 1e7})
        assert code == 5

    def test_deterministic(self, tmp_path):
        _, a = self.run(tmp_path, "a", ["--steps", "10", "--seed", "9"])
        _, b = self.run(tmp_path, "b", ["--steps", "10", "--seed", "9"])
        assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()
        assert (a / "model.json").read_bytes() == (b / "model.json").read_bytes()
        sa, sb = strip_times(load_json(a / "summary.json")), strip_times(load_json(b / "summary.json"))
        sa["manifest"].pop("inputs"), sb["manifest"].pop("inputs")
        assert sa == sb


class TestMetrics:
    @pytest.fixture
    def worked_file(self, tmp_path):
        gold = np.zeros((3, 4), dtype=int)
        pred = np.array([[0, 0, 0, 0], [0, 0, 1, 1], [1, 1, 1, 1]])
        p = tmp_path / "worked.jsonl"
        write_predictions_jsonl(p, PredictionSet.from_arrays(pred, gold))
        return p

    def test_worked_example(self, tmp_path, worked_file):
        out = tmp_path / "r.json"
        assert main(["metrics", "--pred", str(worked_file), "--out", str(out)]) == 0
        r = load_json(out)
        assert r["PMA@4"] == 1 / 3 and r["PMA@2"] == 2 / 3
        assert r["hamming_loss"] == 0.5

    def test_perfect(self, tmp_path):
        gold = np.stack([np.arange(6) % c for c in (9, 8, 3, 7)], 1)
        p, out = tmp_path / "p.jsonl", tmp_path / "r.json"
        write_predictions_jsonl(p, PredictionSet.from_arrays(gold, gold))
        assert main(["metrics", "--pred", str(p), "--out", str(out)]) == 0
        assert load_json(out)["hamming_loss"] == 0.0

    def test_topic_kappa(self, tmp_path, worked_file):
        lines = worked_file.read_text().splitlines()
        recs = [dict(json.loads(s), topic="t") for s in lines]
        p, out = tmp_path / "t.jsonl", tmp_path / "r.json"
        p.write_text("".join(json.dumps(r) + "\n" for r in recs))
        assert main(["metrics", "--pred", str(p), "--out", str(out)]) == 0
        assert set(load_json(out)["kappa_by_topic"]["t"]) == {"emotion", "thinking", "stance", "intent"}

    def test_empty_exit_3(self, tmp_path):
        p = tmp_path / "empty.jsonl"
        p.write_text("")
        assert main(["metrics", "--pred", str(p), "--out", str(tmp_path / "r.json")]) == 3

    def test_invalid_label_exit_3(self, tmp_path, worked_file, capsys):
        rec = json.loads(worked_file.read_text().splitlines()[0])
        rec["gold"]["stance"] = "Maybe"
        p = tmp_path / "bad.jsonl"
        p.write_text(json.dumps(rec) + "\n")
        assert main(["metrics", "--pred", str(p), "--out", str(tmp_path / "r.json")]) == 3
        assert "gold.stance" in capsys.readouterr().err

    def test_deterministic(self, tmp_path, worked_file):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for p in (a, b):
            assert main(["metrics", "--pred", str(worked_file), "--out", str(p)]) == 0
        assert same_json(a, b)


class TestSynth:
    def test_tree_csv_round_trip(self, tmp_path):
        from hypcog.hyperbolicity import read_distance_csv
        p = tmp_path / "t.csv"
        assert main(["synth", "tree", "--branching", "2", "--depth", "2", "--out", str(p)]) == 0
        np.testing.assert_array_equal(read_distance_csv(p).dist, tree_metric(SyntheticTree(2, 2)).dist)

    def test_tree_cap_exit_4(self, tmp_path):
        assert main(["synth", "tree", "--branching", "2", "--depth", "13", "--out", str(tmp_path / "t.csv")]) == 4

    def test_features_deterministic(self, tmp_path):
        outs = []
        for tag in "ab":
            f, l = tmp_path / f"{tag}.csv", tmp_path / f"{tag}.jsonl"
            assert main(["synth", "features", "--n", "20", "--feature-dim", "8", "--seed", "2",
                         "--features-out", str(f), "--labels-out", str(l)]) == 0
            outs.append((f.read_bytes(), l.read_bytes()))
        assert outs[0] == outs[1]
