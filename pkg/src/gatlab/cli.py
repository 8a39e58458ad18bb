"""``gatlab`` command line.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure or a
check that did not pass. ``GATLAB_SEED`` replaces the default seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, tensor as T
from .dictlookup import DictDataset, DictLookupModel, gen_dataset
from .errors import GatlabError, NumericError
from .graph import (
    GraphRecord, NoiseSpec, bipartite_complete, build_graph, inject_noise, read_jsonl, write_jsonl,
)
from .layers import KINDS, AttentionLayer, layer_forward, param_count
from .training import TrainConfig, train_model

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("gatlab")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def default_seed():
    raw = os.environ.get("GATLAB_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"GATLAB_SEED must be an integer, got {raw!r}") from None


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {value}")
    return value


def _ratio(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {value}")
    return value


def _emit(report):
    print(json.dumps(report, indent=2))


def _load_dataset(path):
    try:
        return DictDataset.load_jsonl(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot load dataset {path}: {exc}") from exc


def cmd_gen_dict(args):
    ds = gen_dataset(args.k, args.graphs, seed=args.seed)
    try:
        ds.save_jsonl(args.out)
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc}") from exc
    print(len(ds))
    return EXIT_OK


def _train_one(cfg, data_path, out_dir):
    data = DictDataset.load_jsonl(data_path)
    model, result = train_model(cfg, data)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = model.to_dict()
    ckpt["seed"] = cfg.seed
    (out_dir / "checkpoint.json").write_text(json.dumps(ckpt), encoding="utf-8")
    result.to_json(out_dir / "result.json")
    result.write_csv(out_dir / "curves.csv")
    return {
        "seed": cfg.seed,
        "out": str(out_dir),
        "final_train": result.final_train,
        "final_test": result.final_test,
        "best_epoch": result.best_epoch,
        "epochs": result.epochs,
        "wall_time": result.wall_time,
    }


def cmd_train(args):
    _load_dataset(args.data)
    seeds = args.seeds if args.seeds else [args.seed]
    configs = [
        TrainConfig(kind=args.model, heads=args.heads, hidden=args.dim, lr=args.lr,
                    batch_size=args.batch_size, lr_decay=args.lr_decay,
                    max_epochs=args.max_epochs, seed=s, shared_w=args.shared_w)
        for s in seeds
    ]
    out = Path(args.out)
    dirs = [out] if len(seeds) == 1 else [out / f"seed{s}" for s in seeds]
    if args.jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            runs = list(pool.map(_train_one, configs, [args.data] * len(configs), dirs))
    else:
        runs = [_train_one(c, args.data, d) for c, d in zip(configs, dirs)]
    _emit(runs[0] if len(runs) == 1 else {"runs": runs})
    return EXIT_OK


def _load_model(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return DictLookupModel.from_dict(json.load(fh))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot load checkpoint {path}: {exc}") from exc


def _instance(data, index):
    if not 0 <= index < len(data):
        raise DataError(f"graph index {index} out of range for {len(data)} graphs")
    return data.instance(index)


def cmd_heatmap(args):
    model = _load_model(args.model)
    data = _load_dataset(args.data)
    if data.k != model.k:
        raise DataError(f"checkpoint was trained for k={model.k}, dataset has k={data.k}")
    inst = _instance(data, args.graph_index)
    alpha = model.attention_matrix(inst, head=args.head)
    k = model.k
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["query"] + [f"k{j}" for j in range(k)])
        for q in range(k):
            w.writerow([f"q{q}"] + [repr(float(x)) for x in alpha[q]])
    argmax = alpha.argmax(axis=1)
    row_err = float(np.abs(alpha.sum(axis=1) - 1.0).max())
    _emit({
        "out": args.out,
        "argmax": argmax.tolist(),
        "same_argmax_everywhere": bool(np.all(argmax == argmax[0])),
        "max_row_sum_error": row_err,
    })
    return EXIT_OK if row_err <= 1e-9 else EXIT_NUMERIC


def cmd_analyze_static(args):
    if args.checkpoint:
        model = _load_model(args.checkpoint)
        data = _load_dataset(args.data) if args.data else None
        if data is None:
            raise UsageError("--checkpoint needs --data")
        inst = _instance(data, args.graph_index)
        feats = model.node_features(inst)
        reports = [
            analysis.check_static(model.layer, feats[model.k:], feats[:model.k], head=h)
            for h in range(model.layer.heads)
        ]
    else:
        rng = np.random.default_rng(args.seed)
        reports = []
        for _ in range(args.trials):
            layer = AttentionLayer.init(args.model, args.d, args.d, heads=1,
                                        seed=int(rng.integers(2**31)))
            keys = rng.standard_normal((args.n, args.d))
            queries = rng.standard_normal((args.m, args.d))
            reports.append(analysis.check_static(layer, keys, queries))
    ranked = [r.is_globally_ranked for r in reports]
    if args.expect == "static":
        passed = all(ranked)
    else:
        passed = not all(ranked)
    summary = {
        "expect": args.expect,
        "trials": len(reports),
        "globally_ranked": int(sum(ranked)),
        "exceptions": int(len(ranked) - sum(ranked)),
        "passed": passed,
    }
    if len(reports) == 1:
        summary["report"] = {key: v for key, v in reports[0].to_dict().items() if key != "scores"}
    _emit(summary)
    return EXIT_OK if passed else EXIT_NUMERIC


def cmd_construct_dpgat(args):
    rng = np.random.default_rng(args.seed)
    X = rng.standard_normal((args.n, args.d))
    phi = rng.integers(0, args.n, size=args.n)
    Q, K = analysis.construct_dpgat(X, phi, d_k=args.dk)
    check = analysis.check_dpgat(X, Q, K, phi, tol=args.tol)
    _emit({"n": args.n, "d": args.d, "d_k": Q.shape[1], **check.to_dict()})
    return EXIT_OK if check.passed else EXIT_NUMERIC


def gradcheck_suite(seed=0):
    """Relative gradient error for every layer variant and the end-to-end loss."""
    rng = np.random.default_rng(seed)
    n, d = 6, 4
    edges = [(s, t) for s in range(n) for t in range(n) if (s + 2 * t) % 3 != 0]
    g = build_graph(n, edges)
    h = T.Tensor(rng.standard_normal((n, d)), requires_grad=True)
    target = rng.standard_normal((n, 2 * 3))
    results = {}
    variants = [("gat", False), ("gatv2", True), ("gatv2", False), ("dpgat", True), ("dpgat", False)]
    for kind, shared in variants:
        layer = AttentionLayer.init(kind, d, 3, heads=2, shared_w=shared, activation="elu",
                                    seed=int(rng.integers(2**31)))

        def loss():
            return T.tsum(layer_forward(layer, g, h) * target)

        name = f"{kind}{'-shared' if shared and kind != 'gat' else ''}"
        results[name] = T.grad_check(loss, [h, *layer.parameters()])

    data = gen_dataset(3, 8, seed=seed)
    model = DictLookupModel.init("gatv2", 3, hidden=4, seed=seed)
    idx = data.train

    def train_loss():
        logits = model.logits(data.key_attrs[idx], data.key_values[idx], data.query_attrs[idx])
        return T.cross_entropy(logits, data.labels[idx].reshape(-1))

    results["training-loss"] = T.grad_check(train_loss, model.parameters())
    return results


def cmd_gradcheck(args):
    results = gradcheck_suite(args.seed)
    worst = float(max(results.values()))
    passed = bool(worst < args.tol)
    _emit({"max_rel_err": worst, "tol": args.tol, "cases": results, "passed": passed})
    return EXIT_OK if passed else EXIT_NUMERIC


def cmd_noise_inject(args):
    if args.data:
        try:
            records = read_jsonl(args.data)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read {args.data}: {exc}") from exc
        if not 0 <= args.graph_index < len(records):
            raise DataError(f"graph index {args.graph_index} out of range for {len(records)} graphs")
        g = records[args.graph_index].graph
    else:
        g = bipartite_complete(args.k)
    spec = NoiseSpec(args.p, args.seed)
    noisy = inject_noise(g, spec)
    again = inject_noise(g, spec)
    original = g.edge_set()
    added = noisy.edge_set() - original
    expected = int(np.floor(g.num_edges * args.p))
    report = {
        "num_nodes": g.num_nodes,
        "edges": g.num_edges,
        "p": args.p,
        "added": len(added),
        "expected": expected,
        "count_ok": len(added) == expected and noisy.num_edges == g.num_edges + expected,
        "disjoint": original <= noisy.edge_set() and not (added & original),
        "deterministic": noisy == again,
        "self_loops_added": sum(1 for s, t in added if s == t),
    }
    report["passed"] = bool(report["count_ok"] and report["disjoint"] and report["deterministic"])
    if args.out:
        write_jsonl(args.out, [GraphRecord(noisy)])
    _emit(report)
    return EXIT_OK if report["passed"] else EXIT_NUMERIC


def cmd_param_count(args):
    shared = args.shared
    d_k = args.dk if args.dk is not None else args.dprime
    formula = param_count(args.model, args.d, args.dprime, d_k=d_k, heads=args.heads,
                          shared_w=shared)
    layer = AttentionLayer.init(args.model, args.d, args.dprime, heads=args.heads,
                                shared_w=shared, d_k=d_k)
    counted = layer.num_parameters()
    _emit({
        "model": args.model,
        "d": args.d,
        "dprime": args.dprime,
        "heads": args.heads,
        "shared_w": layer.shared_w,
        "params": formula,
        "instantiated": counted,
        "passed": formula == counted,
    })
    return EXIT_OK if formula == counted else EXIT_NUMERIC


def build_parser(seed):
    parser = argparse.ArgumentParser(prog="gatlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dict", help="generate a dictionary-lookup dataset as JSONL")
    p.add_argument("--k", type=_positive, required=True)
    p.add_argument("--graphs", type=_positive, default=5000)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_dict)

    p = sub.add_parser("train", help="train on a dictionary-lookup dataset")
    p.add_argument("--model", choices=KINDS, required=True)
    p.add_argument("--heads", type=_positive, default=1)
    p.add_argument("--dim", type=_positive, default=128)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--seeds", type=int, nargs="+", help="sweep several seeds")
    p.add_argument("--jobs", type=_positive, default=1)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=_positive, default=1024)
    p.add_argument("--lr-decay", type=float, default=0.5)
    p.add_argument("--max-epochs", type=_positive, default=1000)
    share = p.add_mutually_exclusive_group()
    share.add_argument("--shared-w", dest="shared_w", action="store_true", default=None)
    share.add_argument("--no-shared-w", dest="shared_w", action="store_false")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("heatmap", help="export one graph's attention matrix as CSV")
    p.add_argument("--model", required=True, help="checkpoint JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--graph-index", type=int, default=0)
    p.add_argument("--head", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("analyze-static", help="test whether attention ranks keys globally")
    p.add_argument("--model", choices=KINDS, default="gat")
    p.add_argument("--checkpoint", help="analyze a trained model instead of random layers")
    p.add_argument("--data")
    p.add_argument("--graph-index", type=int, default=0)
    p.add_argument("--n", type=_positive, default=10, help="number of keys")
    p.add_argument("--m", type=_positive, default=10, help="number of queries")
    p.add_argument("--d", type=_positive, default=8)
    p.add_argument("--trials", type=_positive, default=1)
    p.add_argument("--expect", choices=("static", "dynamic"), default="static")
    p.add_argument("--seed", type=int, default=seed)
    p.set_defaults(func=cmd_analyze_static)

    p = sub.add_parser("construct-dpgat", help="build dot-product weights selecting a random mapping")
    p.add_argument("--n", type=_positive, required=True)
    p.add_argument("--d", type=_positive, required=True)
    p.add_argument("--dk", type=_positive)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=seed)
    p.set_defaults(func=cmd_construct_dpgat)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer and the loss")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=seed)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("noise-inject", help="add random non-edges and verify the contract")
    p.add_argument("--data", help="graph JSONL; defaults to a complete bipartite graph")
    p.add_argument("--graph-index", type=int, default=0)
    p.add_argument("--k", type=_positive, default=10)
    p.add_argument("--p", type=_ratio, required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=seed)
    p.set_defaults(func=cmd_noise_inject)

    p = sub.add_parser("param-count", help="learned parameters per layer")
    p.add_argument("--model", choices=KINDS, required=True)
    p.add_argument("--d", type=_positive, required=True)
    p.add_argument("--dprime", type=_positive, required=True)
    p.add_argument("--dk", type=_positive)
    p.add_argument("--heads", type=_positive, default=1)
    p.add_argument("--shared", action="store_true", help="GATv2 shared W / DPGAT Q = K")
    p.set_defaults(func=cmd_param_count)
    return parser


def main(argv=None):
    try:
        parser = build_parser(default_seed())
    except UsageError as exc:
        print(f"gatlab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gatlab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"gatlab: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"gatlab: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GatlabError, ValueError) as exc:
        print(f"gatlab: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
