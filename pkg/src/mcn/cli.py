"""Command-line entry points: ``mcn train | eval | motifs | export-attention | convert-check``.

Exit codes: 0 success, 1 configuration or checkpoint mismatch, 2 data error,
3 numerical divergence or matrix-power density budget exceeded.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys

import numpy as np
import scipy

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .graph import DatasetError, load_dataset, save_predictions
from .matrices import DensityBudgetExceeded, PsiKind, k_step_matrix
from .motifs import MotifKind, motif_adjacency, node_motif_counts
from .training import (ConfigError, DivergenceError, TrainConfig, build_model, prepare_features,
                       split_metrics, train)

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


def parse_seeds(text: str) -> list:
    """``"7"``, ``"1,2,5"`` or an inclusive range ``"1..15"``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise ValueError(f"no seeds in {text!r}")
    return seeds


def _common(p: argparse.ArgumentParser):
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--config", help="key=value TrainConfig file")
    p.add_argument("--out", help="output directory (or file for eval predictions)")
    p.add_argument("--seed", type=int, help="single seed; overrides the config")
    p.add_argument("--seeds", help="several seeds, e.g. 1..15 or 1,2,3")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mcn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and write checkpoint, history, report and manifest")
    _common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))

    p = sub.add_parser("motifs", help="export motif adjacencies, motif matrices and node motif counts")
    _common(p)
    p.add_argument("--motif", action="append", help="motif name (repeatable or comma-separated)")
    p.add_argument("--psi", help="also export Psi(A^k) with this motif matrix function")
    p.add_argument("--k", type=int, default=1, help="step count for --psi")

    p = sub.add_parser("export-attention", help="write per-node motif/step choices as CSV and DOT")
    _common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("convert-check", help="validate a dataset directory")
    _common(p)
    return parser


# ------------------------------------------------------------------ helpers

def _say(args, msg):
    if not args.quiet:
        print(msg, file=sys.stderr)


def _load_config(args) -> TrainConfig:
    config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    return config


def _require_data(args):
    if not args.data:
        raise DatasetError("--data is required")
    return load_dataset(args.data)


def _versions():
    return {"mcn": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _model_from_checkpoint(path, data):
    spec, params, header = load_checkpoint(path)
    config = TrainConfig.from_dict(header["config"])
    x = prepare_features(data, config)
    model = build_model(data, config, x=x, params=None)
    if model.spec != spec:
        raise CheckpointError(f"{path}: checkpoint architecture {spec} does not match dataset/config {model.spec}")
    model.params = params
    return model, config, x


# ----------------------------------------------------------------- commands

def cmd_train(args) -> int:
    config = _load_config(args)
    data = _require_data(args)
    seeds = parse_seeds(args.seeds) if args.seeds else [config.seed]
    out = args.out or "run"
    os.makedirs(out, exist_ok=True)
    x = prepare_features(data, config)
    runs = []
    outputs = []
    for seed in seeds:
        cfg = config.replace(seed=seed)
        run_dir = out if len(seeds) == 1 else os.path.join(out, f"seed-{seed}")
        os.makedirs(run_dir, exist_ok=True)
        log = None if args.quiet else (lambda r: print(
            f"[seed {seed}] epoch {r['epoch']:4d}  L_C {r['L_C']:.4f}  L_A {r['L_A']:.4f}  "
            f"train {r['train_acc']:.3f}  val {r['val_acc']:.3f}", file=sys.stderr) if r["epoch"] % 50 == 0 else None)
        result = train(data, cfg, log=log, x=x)
        test = split_metrics(result.model.predict(x), data.labels, data.splits.test)
        ckpt = os.path.join(run_dir, "checkpoint.mcn")
        save_checkpoint(ckpt, result.model.spec, result.model.params, cfg.to_dict(),
                        extra={"best_epoch": result.best_epoch, "dataset": data.fingerprint()})
        hist = os.path.join(run_dir, "history.jsonl")
        with open(hist, "w", encoding="utf-8") as fh:
            fh.write(result.history_jsonl())
        run = {"seed": seed, "test_accuracy": test.accuracy, "micro_f1": test.micro_f1,
               "best_epoch": result.best_epoch, "epochs": len(result.history),
               "wall_clock_s": round(result.wall_clock, 3)}
        runs.append(run)
        outputs += [ckpt, hist]
        if len(seeds) > 1:
            _write_json(os.path.join(run_dir, "report.json"), run)
        _say(args, f"seed {seed}: test accuracy {test.accuracy:.4f} (best epoch {result.best_epoch})")

    accs = np.array([r["test_accuracy"] for r in runs])
    report = {"config": config.to_dict(), "runs": runs, "test_accuracy": float(accs.mean()),
              "micro_f1": float(np.mean([r["micro_f1"] for r in runs])),
              "wall_clock_s": round(sum(r["wall_clock_s"] for r in runs), 3)}
    if len(seeds) > 1:
        report["test_accuracy_mean"] = float(accs.mean())
        report["test_accuracy_sd"] = float(accs.std(ddof=1))
    _write_json(os.path.join(out, "report.json"), report)
    manifest = {"config": config.to_dict(), "dataset": {"path": os.path.abspath(args.data),
                "fingerprint": data.fingerprint(), "n_nodes": data.graph.n_nodes,
                "n_edges": data.graph.n_edges, "feature_dim": data.features.d},
                "seeds": seeds, "outputs": [os.path.relpath(p, out) for p in outputs] + ["report.json"],
                "versions": _versions()}
    _write_json(os.path.join(out, "manifest.json"), manifest)
    if len(seeds) > 1:
        _say(args, f"test accuracy {accs.mean():.4f} +- {accs.std(ddof=1):.4f} over {len(seeds)} seeds")
    return 0


def cmd_eval(args) -> int:
    data = _require_data(args)
    model, config, x = _model_from_checkpoint(args.checkpoint, data)
    probs = model.predict(x)
    m = split_metrics(probs, data.labels, data.splits.get(args.split))
    print(json.dumps({"split": args.split, "accuracy": m.accuracy, "micro_f1": m.micro_f1,
                      "loss": m.loss, "n": m.n, "per_class": m.per_class}, sort_keys=True))
    if args.out:
        save_predictions(args.out, np.argmax(probs, axis=1), probs)
    return 0


def _write_triples(fh, mat, header, upper_only):
    coo = mat.tocoo()
    order = np.lexsort((coo.col, coo.row))
    fh.write(header + "\n")
    for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
        if upper_only and j <= i:
            continue
        fh.write(f"{i}\t{j}\t{int(v) if upper_only else repr(float(v))}\n")


def cmd_motifs(args) -> int:
    data = _require_data(args)
    names = []
    for item in args.motif or ["edge"]:
        names.extend(p for p in item.split(",") if p.strip())
    try:
        kinds = [MotifKind.parse(n) for n in names]
        psi = PsiKind.parse(args.psi) if args.psi else None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.k < 1:
        raise ConfigError("--k must be >= 1")
    g = data.graph
    if not args.out:
        for kind in kinds:
            adj = motif_adjacency(g, kind)
            if psi is None:
                _write_triples(sys.stdout, adj.matrix, "i\tj\tcount", upper_only=True)
            else:
                _write_triples(sys.stdout, k_step_matrix(adj, args.k, psi).matrix, "i\tj\tvalue", upper_only=False)
        return 0
    os.makedirs(args.out, exist_ok=True)
    for kind in kinds:
        adj = motif_adjacency(g, kind)
        with open(os.path.join(args.out, f"A_{kind.value}.tsv"), "w", encoding="utf-8") as fh:
            _write_triples(fh, adj.matrix, "i\tj\tcount", upper_only=True)
        if psi is not None:
            mm = k_step_matrix(adj, args.k, psi)
            with open(os.path.join(args.out, f"psi_{psi.value}_k{args.k}_{kind.value}.tsv"), "w", encoding="utf-8") as fh:
                _write_triples(fh, mm.matrix, "i\tj\tvalue", upper_only=False)
    counts = node_motif_counts(g, kinds).counts
    with open(os.path.join(args.out, "counts.tsv"), "w", encoding="utf-8") as fh:
        fh.write("node\t" + "\t".join(k.value for k in kinds) + "\n")
        for i, row in enumerate(counts):
            fh.write(f"{i}\t" + "\t".join(str(int(v)) for v in row) + "\n")
    _say(args, f"wrote {len(kinds)} motif adjacencies to {args.out}")
    return 0


_DOT_COLORS = ["blue", "red", "green", "orange", "purple", "brown", "gray"]


def cmd_export_attention(args) -> int:
    data = _require_data(args)
    model, config, x = _model_from_checkpoint(args.checkpoint, data)
    _, trace = model.forward(x, mode="greedy")
    out = args.out or "attention"
    os.makedirs(out, exist_ok=True)
    motifs = model.bank.motifs
    with open(os.path.join(out, "attention.csv"), "w", encoding="utf-8") as fh:
        fh.write("node,layer,chosen_motif,chosen_k,prob_f_max,prob_fprime_max\n")
        for l, lt in enumerate(trace.layers, start=1):
            sel = lt.selection
            pf_max = sel.probs_f.max(axis=1)
            pfp_max = sel.probs_f_prime.max(axis=1)
            for i in range(sel.t.size):
                fh.write(f"{i},{l},{motifs[sel.t[i]].value},{sel.k[i] + 1},{pf_max[i]:.6f},{pfp_max[i]:.6f}\n")
    first = trace.layers[0].selection.t
    with open(os.path.join(out, "graph.dot"), "w", encoding="utf-8") as fh:
        fh.write("graph mcn {\n  node [style=filled];\n")
        for t, kind in enumerate(motifs):
            fh.write(f"  // {kind.value}: {_DOT_COLORS[t % len(_DOT_COLORS)]}\n")
        for i in range(first.size):
            color = _DOT_COLORS[first[i] % len(_DOT_COLORS)]
            fh.write(f'  {i} [fillcolor={color}, motif="{motifs[first[i]].value}"];\n')
        for u, v in data.graph.edge_list():
            fh.write(f"  {u} -- {v};\n")
        fh.write("}\n")
    _say(args, f"wrote attention choices for {first.size} nodes to {out}")
    return 0


def cmd_convert_check(args) -> int:
    data = _require_data(args)
    s = data.splits
    print(json.dumps({"n_nodes": data.graph.n_nodes, "n_edges": data.graph.n_edges,
                      "n_classes": data.labels.n_classes, "feature_dim": data.features.d,
                      "needs_wl_features": data.features.needs_wl,
                      "train": int(s.train.size), "val": int(s.val.size), "test": int(s.test.size),
                      "fingerprint": data.fingerprint()}, sort_keys=True))
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "motifs": cmd_motifs,
            "export-attention": cmd_export_attention, "convert-check": cmd_convert_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, DensityBudgetExceeded) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
