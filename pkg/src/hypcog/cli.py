"""``hypcog`` command-line entry point.

Exit codes: 0 success, 2 unreadable input or output, 3 schema or metric
violation, 4 resource cap exceeded, 5 training divergence.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (DepthTooLargeError, DivergenceError, HypcogError, InvalidInputError,
                     InvalidMetricError, OutOfManifoldError, SchemaError, TooLargeError)

EXIT_OK, EXIT_IO, EXIT_SCHEMA, EXIT_CAP, EXIT_DIVERGENCE = 0, 2, 3, 4, 5


class Manifest:
    """Provenance block embedded in every JSON output."""

    def __init__(self, subcommand: str, config: dict, seed, inputs=()):
        self.subcommand = subcommand
        self.config = config
        self.seed = seed
        self.inputs = {str(p): sha256_file(p) for p in inputs if p is not None}
        self.started = _now()

    def to_dict(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "config": self.config,
            "seed": self.seed,
            "version": __version__,
            "inputs": self.inputs,
            "started": self.started,
            "finished": _now(),
        }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc.msg})", line=exc.lineno) from None


def parse_depths(text: str) -> tuple[int, ...]:
    """``"1..8"``, ``"3-5"``, ``"4"`` or ``"1,2,5"``."""
    try:
        for sep in ("..", "-"):
            if sep in text:
                lo, hi = text.split(sep, 1)
                return tuple(range(int(lo), int(hi) + 1))
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad depth range {text!r}") from None


# --- subcommands ------------------------------------------------------------------

def cmd_delta(args) -> int:
    from .hyperbolicity import (gromov_delta_exact, gromov_delta_sampled, metric_from_embeddings,
                                read_distance_csv, read_embeddings_jsonl, write_report)
    from .poincare import BallConfig

    path = Path(args.input)
    if path.suffix.lower() in (".jsonl", ".json"):
        _, vecs = read_embeddings_jsonl(path)
        if len(vecs) == 0:
            raise SchemaError("no embeddings in input")
        space = BallConfig(args.curvature, vecs.shape[1]) if args.space == "hyperbolic" else "euclidean"
        sample = metric_from_embeddings(vecs, space)
    else:
        sample = read_distance_csv(path)
    if args.mode == "exact":
        report = gromov_delta_exact(sample, workers=args.workers)
    else:
        report = gromov_delta_sampled(sample, args.quadruples, args.seed, workers=args.workers)
    config = {"space": args.space, "curvature": args.curvature, "mode": args.mode,
              "quadruples": args.quadruples, "workers": args.workers}
    man = Manifest("delta", config, args.seed, [path])
    write_report(args.out, report, {"manifest": man.to_dict()})
    print(f"delta={report.delta!r} relative_delta={report.relative_delta!r}")
    return EXIT_OK


def cmd_capacity(args) -> int:
    from .capacity import CapacityConfig, run_capacity, write_report_csv, write_report_json

    cfg = CapacityConfig(branching_b=args.branching, depth_range=args.depths, dim_d=args.dim,
                         epsilon_sep=args.epsilon, trials=args.trials, seed=args.seed,
                         curvature_c=args.curvature, restarts=args.restarts, max_iter=args.max_iter)
    man = Manifest("capacity", None, args.seed)
    report = run_capacity(cfg)
    man.config = report.config
    write_report_json(args.out, report, {"manifest": man.to_dict()})
    csv_path = args.csv or str(Path(args.out).with_suffix(".csv"))
    write_report_csv(csv_path, report)
    for r in report.records:
        print(f"k={r.k} R_euc={r.min_radius_euclidean:.4f} R_hyp={r.radius_hyperbolic:.4f}")
    return EXIT_OK


def _hcn_config(args):
    from .hcn import HcnConfig

    raw = _read_json(args.config) if args.config else {}
    if not isinstance(raw, dict):
        raise SchemaError("config must be a JSON object")
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        return HcnConfig.from_dict(raw)
    except TypeError as exc:
        raise SchemaError(f"bad config: {exc}") from None


def _write_loss_trace(path, trace) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,l_task,l_hyp,l_con,total\n")
        for i, lb in enumerate(trace):
            fh.write(f"{i},{lb.l_task!r},{lb.l_hyp!r},{lb.l_con!r},{lb.total!r}\n")


def cmd_hcn_train(args) -> int:
    from dataclasses import asdict

    from .hcn import save_checkpoint, train
    from .taxonomy import generate_synthetic, labels_to_array, read_features_csv, read_labels_jsonl

    cfg = _hcn_config(args)
    inputs = [args.config]
    if args.synthetic:
        feats, labels = generate_synthetic(args.synthetic, cfg.feature_dim, args.noise, cfg.seed)
    else:
        if not (args.features and args.labels):
            raise InvalidInputError("need --features and --labels, or --synthetic N")
        feats, labels = read_features_csv(args.features), read_labels_jsonl(args.labels)
        inputs += [args.features, args.labels]
        if feats.shape[0] != len(labels):
            raise SchemaError(f"{feats.shape[0]} feature rows but {len(labels)} labels")
        if feats.shape[1] != cfg.feature_dim:
            raise SchemaError(f"features have {feats.shape[1]} columns, config expects {cfg.feature_dim}")
    config = {**asdict(cfg), "steps": args.steps, "synthetic": args.synthetic, "noise": args.noise}
    config["class_counts"] = list(cfg.class_counts)
    man = Manifest("hcn train", config, cfg.seed, inputs)
    result = train(cfg, feats, labels_to_array(labels), args.steps)
    trace_path = args.trace or str(Path(args.out).with_suffix(".trace.csv"))
    _write_loss_trace(trace_path, result.trace)
    save_checkpoint(args.out, result.model, {"manifest": man.to_dict()})
    if result.trace:
        first, last = result.trace[0], result.trace[-1]
        print(f"total {first.total:.6f} -> {last.total:.6f}; l_hyp {first.l_hyp:.6f} -> {last.l_hyp:.6f}")
    return EXIT_OK


def cmd_hcn_predict(args) -> int:
    from .hcn import load_checkpoint, predict
    from .taxonomy import read_features_csv, read_labels_jsonl

    model = load_checkpoint(args.model)
    feats = read_features_csv(args.features)
    if feats.ndim != 2 or feats.shape[1] != model.cfg.feature_dim:
        raise SchemaError(f"features must have {model.cfg.feature_dim} columns")
    preds = predict(model, model.cfg, feats)
    gold = read_labels_jsonl(args.labels) if args.labels else None
    if gold is not None and len(gold) != len(preds):
        raise SchemaError(f"{len(preds)} feature rows but {len(gold)} gold labels")
    with open(args.out, "w", encoding="utf-8") as fh:
        for i, p in enumerate(preds):
            rec = {"id": str(i), "pred": p.names()}
            if gold is not None:
                rec["gold"] = gold[i].names()
            fh.write(json.dumps(rec) + "\n")
    print(f"wrote {len(preds)} predictions")
    return EXIT_OK


def cmd_align(args) -> int:
    import dataclasses

    from .alignment import (AlignRunConfig, align_train, make_alignment_dataset, save_model,
                            write_trace_csv)

    raw = _read_json(args.config) if args.config else {}
    if not isinstance(raw, dict):
        raise SchemaError("config must be a JSON object")
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        run = AlignRunConfig.from_dict(raw)
    except TypeError as exc:
        raise SchemaError(f"bad config: {exc}") from None
    inputs = [args.config]
    anchors = None
    if args.anchors:
        from .hyperbolicity import read_embeddings_jsonl
        from .taxonomy import read_features_csv

        if Path(args.anchors).suffix.lower() in (".jsonl", ".json"):
            anchors = read_embeddings_jsonl(args.anchors)[1]
        else:
            anchors = read_features_csv(args.anchors)
        inputs.append(args.anchors)
    elif args.from_hcn:
        from .hcn import embed, load_checkpoint
        from .taxonomy import generate_synthetic, read_features_csv

        model = load_checkpoint(args.from_hcn)
        inputs.append(args.from_hcn)
        if args.features:
            feats = read_features_csv(args.features)
            inputs.append(args.features)
        else:
            feats, _ = generate_synthetic(run.n_samples, model.cfg.feature_dim, 0.1, run.seed)
        anchors = embed(model, feats).v_cog.numpy()
    if anchors is not None:
        if anchors.ndim != 2 or len(anchors) == 0:
            raise SchemaError("anchors must be a nonempty matrix")
        run = dataclasses.replace(run, projector=dataclasses.replace(run.projector, anchor_dim=anchors.shape[1]))
    data = make_alignment_dataset(run.n_samples, run.vocab, run.projector.anchor_dim,
                                  run.n_clusters, run.seed, anchors=anchors)
    man = Manifest("align", run.to_dict(), run.seed, inputs)
    t0 = time.perf_counter()
    result = align_train(run, data, steps=args.steps)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(out / "trace.csv", result.trace)
    save_model(out / "model.json", result.model, run)
    tr = result.trace
    head, tail = tr[:10], tr[-10:]
    summary = {
        "steps": len(tr),
        "first10": {k: float(np.mean([getattr(t, k) for t in head])) for k in ("sft", "sct", "total")},
        "last10": {k: float(np.mean([getattr(t, k) for t in tail])) for k in ("sft", "sct", "total")},
        "manifest": man.to_dict(),
    }
    _write_json(out / "summary.json", summary)
    print(f"{len(tr)} steps in {elapsed:.1f}s; sct {summary['first10']['sct']:.4f} -> {summary['last10']['sct']:.4f}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .metrics import evaluate, kappa_by_topic, read_predictions_jsonl, write_report_json

    preds = read_predictions_jsonl(args.pred)
    report = evaluate(preds)
    extra = {"manifest": Manifest("metrics", {}, None, [args.pred]).to_dict()}
    kappas = kappa_by_topic(preds)
    if kappas:
        extra["kappa_by_topic"] = kappas
    write_report_json(args.out, report, extra)
    print(" ".join(f"PMA@{k}={v:.4f}" for k, v in report.pma.items()) + f" hamming={report.hamming_loss:.4f}")
    return EXIT_OK


def cmd_synth_features(args) -> int:
    from .taxonomy import generate_synthetic, write_features_csv, write_labels_jsonl

    feats, labels = generate_synthetic(args.n, args.feature_dim, args.noise, args.seed)
    write_features_csv(args.features_out, feats)
    write_labels_jsonl(args.labels_out, labels)
    print(f"wrote {len(labels)} samples")
    return EXIT_OK


def cmd_synth_tree(args) -> int:
    from .hyperbolicity import write_distance_csv
    from .taxonomy import SyntheticTree, tree_metric

    tree = SyntheticTree(args.branching, args.depth, args.edge_length)
    write_distance_csv(args.out, tree_metric(tree))
    if args.embed_out:
        from .capacity import hyperbolic_tree_embed
        from .poincare import BallConfig

        emb = hyperbolic_tree_embed(args.branching, args.depth, BallConfig(args.curvature, 2), args.epsilon)
        with open(args.embed_out, "w", encoding="utf-8") as fh:
            for i, (p, k) in enumerate(zip(emb.points, emb.depths)):
                fh.write(json.dumps({"id": str(i), "depth": int(k), "vec": [float(v) for v in p]}) + "\n")
    print(f"wrote {tree.node_count}-node tree metric")
    return EXIT_OK


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hypcog", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("delta", help="Gromov delta of a distance matrix or embedding set")
    d.add_argument("--input", required=True, help="distance CSV or embeddings JSONL ({id, vec})")
    d.add_argument("--space", choices=("euclidean", "hyperbolic"), default="euclidean",
                   help="geometry for embedding inputs")
    d.add_argument("--curvature", type=float, default=1.0, help="c for --space hyperbolic")
    d.add_argument("--mode", choices=("exact", "sampled"), default="exact")
    d.add_argument("--quadruples", type=int, default=200_000, help="sample size in sampled mode")
    d.add_argument("--seed", type=int, default=42)
    d.add_argument("--workers", type=int, default=1)
    d.add_argument("--out", required=True, help="report JSON path")
    d.set_defaults(func=cmd_delta)

    c = sub.add_parser("capacity", help="Euclidean vs hyperbolic radius sweep over tree depth")
    c.add_argument("--branching", type=int, default=2)
    c.add_argument("--depths", type=parse_depths, default=tuple(range(1, 9)), help="e.g. 1..8")
    c.add_argument("--dim", type=int, default=2)
    c.add_argument("--epsilon", type=float, default=0.5)
    c.add_argument("--trials", type=int, default=1)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--curvature", type=float, default=1.0)
    c.add_argument("--restarts", type=int, default=20)
    c.add_argument("--max-iter", type=int, default=4000)
    c.add_argument("--out", required=True, help="report JSON path")
    c.add_argument("--csv", help="plot-ready CSV path (default: --out with .csv)")
    c.set_defaults(func=cmd_capacity)

    h = sub.add_parser("hcn", help="train or apply the hyperbolic cognitive network")
    hs = h.add_subparsers(dest="hcn_command", required=True)
    ht = hs.add_parser("train")
    ht.add_argument("--features", help="feature CSV, one row per sample")
    ht.add_argument("--labels", help="labels JSONL aligned with --features")
    ht.add_argument("--synthetic", type=int, metavar="N", help="train on N generated samples instead")
    ht.add_argument("--noise", type=float, default=0.1, help="noise for --synthetic")
    ht.add_argument("--config", help="HCN config JSON")
    ht.add_argument("--steps", type=int, default=500)
    ht.add_argument("--seed", type=int, help="overrides the config seed")
    ht.add_argument("--out", required=True, help="checkpoint JSON path")
    ht.add_argument("--trace", help="loss trace CSV (default: next to --out)")
    ht.set_defaults(func=cmd_hcn_train)
    hp = hs.add_parser("predict")
    hp.add_argument("--model", required=True, help="checkpoint from hcn train")
    hp.add_argument("--features", required=True)
    hp.add_argument("--labels", help="gold labels JSONL to include for evaluation")
    hp.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")
    hp.add_argument("--out", required=True, help="predictions JSONL")
    hp.set_defaults(func=cmd_hcn_predict)

    a = sub.add_parser("align", help="train the toy model with the soft-prompt alignment loss")
    src = a.add_mutually_exclusive_group()
    src.add_argument("--anchors", help="anchor vectors as JSONL ({id, vec}) or CSV")
    src.add_argument("--from-hcn", help="HCN checkpoint whose anchors are used")
    a.add_argument("--features", help="features for --from-hcn (default: synthetic)")
    a.add_argument("--config", help="alignment run config JSON")
    a.add_argument("--steps", type=int, help="overrides epochs")
    a.add_argument("--seed", type=int, help="overrides the config seed")
    a.add_argument("--out", required=True, help="output directory")
    a.set_defaults(func=cmd_align)

    m = sub.add_parser("metrics", help="evaluate a predictions JSONL")
    m.add_argument("--pred", required=True)
    m.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_metrics)

    s = sub.add_parser("synth", help="generate synthetic inputs")
    ss = s.add_subparsers(dest="synth_command", required=True)
    sf = ss.add_parser("features", help="labelled features from the built-in taxonomy")
    sf.add_argument("--n", type=int, default=1024)
    sf.add_argument("--feature-dim", type=int, default=64)
    sf.add_argument("--noise", type=float, default=0.1)
    sf.add_argument("--seed", type=int, default=0)
    sf.add_argument("--features-out", required=True)
    sf.add_argument("--labels-out", required=True)
    sf.set_defaults(func=cmd_synth_features)
    st = ss.add_parser("tree", help="distance CSV of a b-ary tree, optionally its hyperbolic embedding")
    st.add_argument("--branching", type=int, default=2)
    st.add_argument("--depth", type=int, default=3)
    st.add_argument("--edge-length", type=float, default=1.0)
    st.add_argument("--seed", type=int, default=0, help="unused; the tree is deterministic")
    st.add_argument("--out", required=True)
    st.add_argument("--embed-out", help="JSONL of hyperbolic node positions")
    st.add_argument("--epsilon", type=float, default=0.5)
    st.add_argument("--curvature", type=float, default=1.0)
    st.set_defaults(func=cmd_synth_tree)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError, UnicodeDecodeError) as exc:
        print(f"hypcog: cannot read or write: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TooLargeError, DepthTooLargeError) as exc:
        print(f"hypcog: resource cap: {exc}", file=sys.stderr)
        return EXIT_CAP
    except DivergenceError as exc:
        print(f"hypcog: divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (SchemaError, InvalidMetricError, InvalidInputError, OutOfManifoldError, HypcogError) as exc:
        print(f"hypcog: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"hypcog: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
