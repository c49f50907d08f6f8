"""Command-line pipeline: filter, mine, train, project, aggregate, evaluate,
analyze.

Every subcommand accepts ``--seed``, ``--threads`` and ``--config`` (a
key=value file whose entries become flag defaults; explicit flags win) and
writes a flat key=value run manifest next to its primary output, recording
the subcommand, effective configuration and content hashes of inputs and
outputs.  Exit codes: 0 success, 1 data error, 2 usage error.  Diagnostics go
to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import contrastive, distill, distsup, evaluation, mining, simsearch, store


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_path, subcommand, inputs, outputs, config):
    lines = [f"subcommand={subcommand}"]
    for key in sorted(config):
        lines.append(f"config.{key}={config[key]}")
    for path in inputs:
        lines.append(f"input.{Path(path).name}.path={path}")
        lines.append(f"input.{Path(path).name}.sha256={_sha256(path)}")
    for path in outputs:
        lines.append(f"output.{Path(path).name}.path={path}")
        lines.append(f"output.{Path(path).name}.sha256={_sha256(path)}")
    Path(str(out_path) + ".manifest").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_config_file(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed config line {lineno}: {line!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _effective(args, names) -> dict:
    return {name: getattr(args, name) for name in names if hasattr(args, name)}


def _load_gold(path, vocab):
    positives, fixed, missing = evaluation.load_benchmark_tsv(path, vocab)
    return positives, fixed, missing


def _build_dataset(args, vocab, table_or_none=None):
    positives, fixed, missing = _load_gold(args.benchmark, vocab)
    if missing:
        print(f"warning: {len(missing)} benchmark words outside vocabulary", file=sys.stderr)
    if table_or_none is not None:
        kept = {}
        excluded = 0
        for name, concepts in positives.items():
            inside = [c for c in concepts if c in table_or_none]
            excluded += len(concepts) - len(inside)
            if inside:
                kept[name] = inside
        if excluded:
            print(f"warning: {excluded} items without embeddings excluded", file=sys.stderr)
        positives = kept
    rng = np.random.default_rng(args.seed)
    dataset = evaluation.split_and_negatives(
        positives, negatives_per_concept=args.negatives, rng=rng
    )
    if fixed:
        items = []
        for it in dataset.items:
            key = (it.concept, dataset.classes[it.cls])
            split = fixed.get(key, it.split) if it.positive else it.split
            items.append(evaluation.Item(it.concept, it.cls, it.positive, split))
        dataset.items = items
    if dataset.skipped_classes:
        print(
            f"warning: skipped classes with <3 positives: {', '.join(dataset.skipped_classes)}",
            file=sys.stderr,
        )
    return dataset


def cmd_filter(args):
    st = store.read_store(args.store)
    kept = mining.filter_idiosyncratic(st, args.k_filter, threads=args.threads)
    mining.write_kept_indices(kept, args.k_filter, args.out)
    removed = len(st) - len(kept)
    print(f"kept {len(kept)} of {len(st)} records ({removed} idiosyncratic)", file=sys.stderr)
    _write_manifest(
        args.out, "filter", [args.store], [args.out],
        _effective(args, ["k_filter", "seed", "threads"]),
    )
    return 0


def cmd_mine_neigh(args):
    st = store.read_store(args.store)
    config = mining.MiningConfig(k_compat=args.k, theta=mining.as_fraction(args.theta))
    pairs = mining.mine_neighborhood_pairs(st, config, threads=args.threads)
    mining.write_pairs(pairs, args.out)
    if args.cache:
        neighbors = simsearch.knn_all(st, config.k_compat, threads=args.threads)
        simsearch.write_neighbor_cache(neighbors, args.cache)
    print(f"mined {len(pairs)} pairs", file=sys.stderr)
    outputs = [args.out] + ([args.cache] if args.cache else [])
    _write_manifest(
        args.out, "mine-neigh", [args.store], outputs,
        _effective(args, ["k", "theta", "seed", "threads"]),
    )
    return 0


def cmd_mine_word(args):
    st = store.read_store(args.store)
    pairs = mining.mine_word_identity_pairs(st)
    mining.write_pairs(pairs, args.out)
    print(f"mined {len(pairs)} word-identity pairs", file=sys.stderr)
    _write_manifest(
        args.out, "mine-word", [args.store], [args.out], _effective(args, ["seed"])
    )
    return 0


def cmd_mine_cn(args):
    st = store.read_store(args.store)
    table = distsup.load_concept_property_table(args.table)
    if table.malformed_lines:
        print(
            f"warning: skipped {len(table.malformed_lines)} malformed table lines "
            f"(first at line {table.malformed_lines[0]})",
            file=sys.stderr,
        )
    groups = distsup.match_corpus(args.corpus, table, st.vocab, plural_fold=args.plural_fold)
    _, dropped = distsup.resolve_members(groups, st)
    if dropped:
        print(f"warning: {dropped} matched members lack mention records", file=sys.stderr)
    pairs = distsup.pairs_from_groups(groups, st)
    mining.write_pairs(pairs, args.out)
    outputs = [args.out]
    if args.groups_out:
        distsup.write_groups(groups, st.vocab, args.groups_out)
        outputs.append(args.groups_out)
    print(f"{len(groups)} property groups, {len(pairs)} pairs", file=sys.stderr)
    _write_manifest(
        args.out, "mine-cn", [args.store, args.table, args.corpus], outputs,
        _effective(args, ["plural_fold", "seed"]),
    )
    return 0


def _train_config(args) -> contrastive.TrainConfig:
    return contrastive.TrainConfig(
        out_dim=args.out_dim,
        tau=args.tau,
        lr=args.lr,
        warmup_epochs=args.warmup_epochs,
        patience=args.patience,
        min_delta=args.min_delta,
        batch_pairs=args.batch_pairs,
        group_sample=args.group_sample,
        max_epochs=args.max_epochs,
        weight_decay=args.weight_decay,
        seed=args.seed,
    )


def cmd_train_proj(args):
    st = store.read_store(args.store)
    config = _train_config(args)
    if args.groups:
        data = distsup.read_groups(args.groups, st.vocab)
        inputs = [args.store, args.groups]
    else:
        data = mining.read_pairs(args.pairs)
        inputs = [args.store, args.pairs]
    model = contrastive.train_projection(st, data, config, log_path=args.log)
    contrastive.save_projection(model, args.out)
    outputs = [args.out] + ([args.log] if args.log else [])
    _write_manifest(
        args.out, "train-proj", inputs, outputs,
        _effective(
            args,
            [
                "out_dim", "tau", "lr", "warmup_epochs", "patience", "min_delta",
                "batch_pairs", "group_sample", "max_epochs", "weight_decay", "seed",
            ],
        ),
    )
    return 0


def cmd_project(args):
    st = store.read_store(args.store)
    model = contrastive.load_projection(args.model)
    projected = contrastive.project_store(st, model)
    store.write_store(projected, args.out)
    _write_manifest(
        args.out, "project", [args.store, args.model], [args.out],
        _effective(args, ["seed"]),
    )
    return 0


def cmd_aggregate(args):
    st = store.read_store(args.store)
    kept = mining.read_kept_indices(args.kept) if args.kept else None
    result = distill.aggregate(st, kept)
    if result.fallback_concepts:
        print(
            f"warning: {len(result.fallback_concepts)} concepts lost every mention "
            "to filtering; unfiltered mean used",
            file=sys.stderr,
        )
    store.write_table(result.table, args.out)
    outputs = [args.out]
    if args.text_out:
        store.write_table_text(result.table, args.text_out)
        outputs.append(args.text_out)
    inputs = [args.store] + ([args.kept] if args.kept else [])
    _write_manifest(args.out, "aggregate", inputs, outputs, _effective(args, ["seed"]))
    return 0


def cmd_eval_clf(args):
    table = store.read_table(args.table)
    dataset = _build_dataset(args, table.vocab, table)
    grid = tuple(float(c) for c in args.c_grid.split(","))
    report = evaluation.evaluate_linear_classification(
        dataset, table, grid, seed=args.seed, balanced=args.balanced
    )
    Path(args.out).write_text("\n".join(report.lines()) + "\n", encoding="utf-8")
    print(f"macro F1 {report.macro:.4f}", file=sys.stderr)
    _write_manifest(
        args.out, "eval-clf", [args.table, args.benchmark], [args.out],
        _effective(args, ["c_grid", "balanced", "negatives", "seed"]),
    )
    return 0


def cmd_eval_mention_clf(args):
    st = store.read_store(args.store)
    dataset = _build_dataset(args, st.vocab)
    config = evaluation.MentionClassifierConfig(
        lr=args.lr, batch_size=args.batch_size, max_epochs=args.max_epochs, seed=args.seed
    )
    report = evaluation.evaluate_mention_classification(dataset, st, config)
    Path(args.out).write_text("\n".join(report.lines()) + "\n", encoding="utf-8")
    print(f"macro F1 {report.macro:.4f}", file=sys.stderr)
    _write_manifest(
        args.out, "eval-mention-clf", [args.store, args.benchmark], [args.out],
        _effective(args, ["lr", "batch_size", "max_epochs", "negatives", "seed"]),
    )
    return 0


def cmd_eval_cluster(args):
    table = store.read_table(args.table)
    positives, _, missing = _load_gold(args.benchmark, table.vocab)
    if missing:
        print(f"warning: {len(missing)} benchmark words outside vocabulary", file=sys.stderr)
    gold = {}
    for category, concepts in positives.items():
        for concept in concepts:
            if concept in table:
                gold[concept] = category
    k = args.k if args.k else len({v for v in gold.values()})
    report = evaluation.kmeans_purity(table, gold, k, restarts=args.restarts, seed=args.seed)
    Path(args.out).write_text("\n".join(report.lines()) + "\n", encoding="utf-8")
    print(f"mean purity {report.mean_purity:.4f}", file=sys.stderr)
    _write_manifest(
        args.out, "eval-cluster", [args.table, args.benchmark], [args.out],
        _effective(args, ["k", "restarts", "seed"]),
    )
    return 0


def cmd_neighbors(args):
    table = store.read_table(args.table)
    listing = distill.concept_neighbors(table, args.word, args.k)
    lines = [f"{word}\t{sim:.6f}" for word, sim in listing]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        _write_manifest(
            args.out, "neighbors", [args.table], [args.out],
            _effective(args, ["word", "k", "seed"]),
        )
    else:
        sys.stdout.write(text)
    return 0


def cmd_anisotropy(args):
    table = store.read_table(args.table)
    hist = distill.anisotropy_histogram(
        table, args.samples, bins=args.bins, rng=np.random.default_rng(args.seed)
    )
    lines = list(hist.lines())
    lines.append(f"# mean={hist.mean:.6f} std={hist.std:.6f} samples={hist.samples}")
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"mean cosine {hist.mean:.6f}", file=sys.stderr)
    _write_manifest(
        args.out, "anisotropy", [args.table], [args.out],
        _effective(args, ["samples", "bins", "seed"]),
    )
    return 0


def cmd_neighbor_shift(args):
    base = store.read_store(args.base)
    tuned = store.read_store(args.tuned)
    shifted = distill.neighbor_shift(
        base, tuned, top_in=args.top_in, top_out=args.top_out, threads=args.threads
    )
    Path(args.out).write_text(
        "".join(f"{i}\t{j}\n" for i, j in shifted), encoding="utf-8"
    )
    print(f"{len(shifted)} shifted pairs", file=sys.stderr)
    _write_manifest(
        args.out, "neighbor-shift", [args.base, args.tuned], [args.out],
        _effective(args, ["top_in", "top_out", "seed", "threads"]),
    )
    return 0


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=0, help="rng seed")
    parser.add_argument("--threads", type=int, default=None, help="worker cap (1 = bit-deterministic)")
    parser.add_argument("--config", default=None, help="key=value file of flag defaults")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="condist",
        description="concept-embedding distillation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("filter", help="drop idiosyncratic mentions")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k-filter", type=int, default=5)
    _add_common(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("mine-neigh", help="neighbourhood-structure positive pairs")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--theta", default="1/2")
    p.add_argument("--cache", default=None, help="optional CKNN neighbor cache output")
    _add_common(p)
    p.set_defaults(func=cmd_mine_neigh)

    p = sub.add_parser("mine-word", help="word-identity pairing ablation")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_mine_word)

    p = sub.add_parser("mine-cn", help="distant-supervision pairs from concept-property TSV")
    p.add_argument("--store", required=True)
    p.add_argument("--table", required=True, help="concept<TAB>property TSV")
    p.add_argument("--corpus", required=True, help="one sentence per line")
    p.add_argument("--out", required=True)
    p.add_argument("--groups-out", default=None, help="property-group sidecar")
    p.add_argument("--plural-fold", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_mine_cn)

    p = sub.add_parser("train-proj", help="train the contrastive projection")
    p.add_argument("--store", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--pairs")
    src.add_argument("--groups", help="property-group sidecar (group strategy)")
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="per-epoch training log")
    p.add_argument("--out-dim", type=int, default=256)
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--warmup-epochs", type=int, default=2)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--min-delta", type=float, default=1e-10)
    p.add_argument("--batch-pairs", type=int, default=1024)
    p.add_argument("--group-sample", type=int, default=50)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--weight-decay", type=float, default=0.01)
    _add_common(p)
    p.set_defaults(func=cmd_train_proj)

    p = sub.add_parser("project", help="apply a projection to a store")
    p.add_argument("--store", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("aggregate", help="average mentions into concept embeddings")
    p.add_argument("--store", required=True)
    p.add_argument("--kept", default=None, help="kept-index file from filter")
    p.add_argument("--out", required=True)
    p.add_argument("--text-out", default=None, help="classic text word-vector export")
    _add_common(p)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("eval-clf", help="per-class linear classification, macro F1")
    p.add_argument("--table", required=True)
    p.add_argument("--benchmark", required=True, help="word<TAB>class[<TAB>split] TSV")
    p.add_argument("--out", required=True)
    p.add_argument("--c-grid", default="0.1,1,10,100")
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--balanced", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_eval_clf)

    p = sub.add_parser("eval-mention-clf", help="mention-set classifier, macro F1")
    p.add_argument("--store", required=True)
    p.add_argument("--benchmark", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--negatives", type=int, default=5)
    _add_common(p)
    p.set_defaults(func=cmd_eval_mention_clf)

    p = sub.add_parser("eval-cluster", help="k-means clustering purity")
    p.add_argument("--table", required=True)
    p.add_argument("--benchmark", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=None, help="default: number of categories")
    p.add_argument("--restarts", type=int, default=10)
    _add_common(p)
    p.set_defaults(func=cmd_eval_cluster)

    p = sub.add_parser("neighbors", help="nearest concepts of a word")
    p.add_argument("--table", required=True)
    p.add_argument("--word", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_neighbors)

    p = sub.add_parser("anisotropy", help="random-pair cosine histogram")
    p.add_argument("--table", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=100000)
    p.add_argument("--bins", type=int, default=50)
    _add_common(p)
    p.set_defaults(func=cmd_anisotropy)

    p = sub.add_parser("neighbor-shift", help="pairs newly similar after tuning")
    p.add_argument("--base", required=True)
    p.add_argument("--tuned", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--top-in", type=int, default=100)
    p.add_argument("--top-out", type=int, default=1000)
    _add_common(p)
    p.set_defaults(func=cmd_neighbor_shift)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            overrides = _load_config_file(known.config)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        for subparser in parser._subparsers._group_actions[0].choices.values():
            coerced = {}
            for action in subparser._actions:
                if action.dest not in overrides:
                    continue
                raw = overrides[action.dest]
                if isinstance(action, argparse._StoreTrueAction):
                    coerced[action.dest] = raw.lower() in ("1", "true", "yes")
                elif action.type is not None:
                    coerced[action.dest] = action.type(raw)
                else:
                    coerced[action.dest] = raw
            subparser.set_defaults(**coerced)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except (OSError, ValueError, KeyError, IndexError, RuntimeError, store.StoreFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
