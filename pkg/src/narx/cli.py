"""``narx`` command line: generate, split, mine, train, embed, index, query, evaluate, export."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from . import experiments
from .config import ConfigError, RunConfig
from .gcn import NumericError
from .graph import CompGraph, GraphError, OperatorVocab, load_corpus, write_corpus
from .motifs import MotifMiner
from .nasgen import NAS_VOCAB, GenerationError, generate_dataset, write_manifest
from .pipeline import LOSS_MODES, TrainedModels, embed_graphs, stage1_train, stage2_train, write_history
from .retrieval import EmbeddingIndex, evaluate
from .splitters import SPLITTERS

log = logging.getLogger("narx")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(Exception):
    pass


# ------------------------------------------------------------ helpers


def _graph_ids(graphs: list[CompGraph]) -> list[str]:
    """Model names when they are unique, otherwise ``line<N>``."""
    names = [g.meta.model_name for g in graphs]
    if all(names) and len(set(names)) == len(names):
        return names
    return [f"line{i + 1}" for i in range(len(graphs))]


def _read_corpus(path: str, vocab: OperatorVocab | None = None):
    if not Path(path).is_file():
        raise DataError(f"corpus {path} not found")
    return load_corpus(path, vocab)


def _load_models(path: str) -> TrainedModels:
    if not Path(path).is_file():
        raise DataError(f"checkpoint {path} not found; run train-motifs / train-graph first")
    try:
        return TrainedModels.load(path)
    except (ValueError, KeyError) as exc:
        raise DataError(f"cannot load checkpoint {path}: {exc}") from exc


def _load_index(path: str) -> EmbeddingIndex:
    if not Path(path).is_file():
        raise DataError(f"index {path} not found; run the index command first")
    try:
        return EmbeddingIndex.load(path)
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def _out_path(path: str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _write_embeddings(path, ids, graphs, emb) -> None:
    with open(_out_path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "name", "label"] + [f"v{j}" for j in range(emb.shape[1])])
        for id_, g, row in zip(ids, graphs, emb):
            w.writerow([id_, g.meta.model_name, "" if g.label is None else g.label] + [repr(float(x)) for x in row])


def _read_embeddings(path) -> EmbeddingIndex:
    if not Path(path).is_file():
        raise DataError(f"embeddings file {path} not found; run embed first")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:3] != ["id", "name", "label"]:
        raise DataError(f"{path} is not an embeddings file")
    index = EmbeddingIndex(len(rows[0]) - 3)
    for r in rows[1:]:
        index.add(r[0], [float(x) for x in r[3:]], r[1], int(r[2]) if r[2] != "" else None)
    return index


def _histogram(graphs) -> str:
    counts = Counter(g.label for g in graphs)
    return "\n".join(f"  class {c}: {counts[c]}" for c in sorted(counts, key=lambda x: (x is None, x)))


# ------------------------------------------------------------ commands


def cmd_gen_nas(args, cfg: RunConfig) -> int:
    gen = cfg.generate
    if gen.classes < 2:
        raise ConfigError("classes must be at least 2 (contrastive training needs negatives)")
    ds = generate_dataset(gen.n, gen.classes, gen.max_radius, cfg.seed, gen.num_cells, gen.separation)
    out = _out_path(args.out or cfg.paths.corpus)
    try:
        write_corpus(out, ds.graphs, NAS_VOCAB)
        write_manifest(args.manifest or out.with_suffix(".manifest.json"), ds.manifest)
    except OSError as exc:
        raise DataError(f"cannot write {out}: {exc.strerror}") from exc
    print(f"wrote {len(ds.graphs)} architectures to {out}")
    print(_histogram(ds.graphs))
    return EXIT_OK


def cmd_split(args, cfg: RunConfig) -> int:
    corpus = args.corpus or cfg.paths.corpus
    if not Path(corpus).is_file():
        raise DataError(f"corpus {corpus} not found")
    lines = [ln for ln in Path(corpus).read_text(encoding="utf-8").splitlines() if ln.strip()]
    labels = []
    for no, ln in enumerate(lines, 1):
        try:
            lab = json.loads(ln).get("label")
        except (json.JSONDecodeError, AttributeError) as exc:
            raise DataError(f"line {no} of {corpus} is not a JSON object") from exc
        if lab is None:
            raise DataError(f"line {no} has no label; split is stratified by label")
        labels.append(int(lab))
    ratio = cfg.generate.split_ratio if args.ratio is None else args.ratio
    train, test = experiments.stratified_split(labels, ratio, cfg.seed)
    stem = Path(corpus).with_suffix("")
    train_out = _out_path(args.train_out or f"{stem}.train.jsonl")
    test_out = _out_path(args.test_out or f"{stem}.test.jsonl")
    train_out.write_text("".join(lines[i] + "\n" for i in train), encoding="utf-8")
    test_out.write_text("".join(lines[i] + "\n" for i in test), encoding="utf-8")
    print(f"train {len(train)} -> {train_out}\ntest {len(test)} -> {test_out}")
    return EXIT_OK


def _vocab_for(args, cfg):
    path = getattr(args, "vocab", None) or cfg.paths.vocab
    if path:
        if not Path(path).is_file():
            raise DataError(f"vocab {path} not found")
        return OperatorVocab.load(path)
    return None


def cmd_mine(args, cfg: RunConfig) -> int:
    graphs, _ = _read_corpus(args.corpus or cfg.paths.corpus, _vocab_for(args, cfg))
    miner = MotifMiner(cfg.mining).fit(graphs)
    out = _out_path(args.out)
    out.write_text(json.dumps(miner.to_dict()) + "\n", encoding="utf-8")
    if args.dump:
        miner.dump(_out_path(args.dump), graphs)
    shown = [p for p in miner.patterns if not p.singleton][: args.top]
    print(f"{len(miner.patterns)} patterns ({sum(not p.singleton for p in miner.patterns)} repeated)")
    for p in shown:
        print(f"  len {p.length:3d}  freq {p.frequency:5d}  rank {p.rank}")
    return EXIT_OK


def cmd_train_motifs(args, cfg: RunConfig) -> int:
    graphs, vocab = _read_corpus(args.corpus or cfg.paths.corpus, _vocab_for(args, cfg))
    models = stage1_train(graphs, vocab, cfg.stage1, cfg.mining, splitter=args.split or cfg.splitter)
    out = _out_path(args.out or Path(cfg.paths.checkpoints) / "motifs.ckpt")
    models.save(out)
    if args.log:
        write_history(_out_path(args.log), models.history)
    print(f"stage 1: {models.history[-1]['anchors']} anchors, final loss {models.history[-1]['loss']:.4f} -> {out}")
    return EXIT_OK


def cmd_train_graph(args, cfg: RunConfig) -> int:
    init = args.init or str(Path(cfg.paths.checkpoints) / "motifs.ckpt")
    stage1 = _load_models(init)
    if stage1.f_s is None:
        raise DataError(f"{init} has no motif encoder")
    graphs, _ = _read_corpus(args.corpus or cfg.paths.corpus, stage1.vocab)
    models = stage2_train(graphs, stage1, cfg.stage2, loss=args.loss or cfg.loss)
    out = _out_path(args.out or Path(cfg.paths.checkpoints) / "model.ckpt")
    models.save(out)
    if args.log:
        write_history(_out_path(args.log), models.history)
    last = models.history[-1]
    print(f"stage 2 ({models.configs['loss']}): final loss {last['loss']:.4f}, accuracy {last['accuracy'] or '-'} -> {out}")
    return EXIT_OK


def cmd_embed(args, cfg: RunConfig) -> int:
    models = _load_models(args.model or str(Path(cfg.paths.checkpoints) / "model.ckpt"))
    graphs, _ = _read_corpus(args.corpus or cfg.paths.corpus, models.vocab)
    emb = embed_graphs(graphs, models, workers=cfg.workers)
    _write_embeddings(args.out, _graph_ids(graphs), graphs, emb)
    print(f"embedded {len(graphs)} graphs -> {args.out}")
    return EXIT_OK


def cmd_index(args, cfg: RunConfig) -> int:
    index = _read_embeddings(args.embeddings)
    out = _out_path(args.out or cfg.paths.index)
    index.save(out)
    print(f"indexed {len(index)} vectors (dim {index.dim}) -> {out}")
    return EXIT_OK


def cmd_query(args, cfg: RunConfig) -> int:
    index = _load_index(args.index or cfg.paths.index)
    models = _load_models(args.model or str(Path(cfg.paths.checkpoints) / "model.ckpt"))
    graphs, _ = _read_corpus(args.queries, models.vocab)
    ids = _graph_ids(graphs)
    picks = range(len(graphs)) if args.line is None else [args.line - 1]
    emb = embed_graphs([graphs[i] for i in picks], models, workers=cfg.workers)
    names = dict(zip(index.ids, index.names))
    for i, vec in zip(picks, emb):
        res = index.query(vec, args.k, exclude_self=ids[i] if args.exclude_self else None, query_id=ids[i])
        print(f"query {ids[i]}")
        for rank, (hit, score) in enumerate(res.hits, 1):
            print(f"  {rank:3d}  {score:+.6f}  {names[hit] or hit}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    index = _load_index(args.index or cfg.paths.index)
    models = _load_models(args.model or str(Path(cfg.paths.checkpoints) / "model.ckpt"))
    graphs, _ = _read_corpus(args.queries, models.vocab)
    emb = embed_graphs(graphs, models, workers=cfg.workers)
    ids = _graph_ids(graphs)
    missing = [i for i in ids if i not in set(index.ids)]
    if missing:
        raise DataError(f"{len(missing)} query ids are not in the index (first: {missing[0]}); index the full corpus")
    report = evaluate(index, list(zip(ids, emb)), cfg.cutoffs)
    out = _out_path(args.out or Path(cfg.paths.output_dir) / "metrics.csv")
    report.write_csv(out)
    print(report.table(f"retrieval ({models.configs.get('loss', '?')}, splitter {models.splitter.name})"))
    print(f"metrics -> {out}")
    return EXIT_OK


def cmd_export(args, cfg: RunConfig) -> int:
    index = _load_index(args.index or cfg.paths.index)
    n = index.export_csv(_out_path(args.out))
    print(f"exported {n} rows -> {args.out}")
    return EXIT_OK


def cmd_compare_splits(args, cfg: RunConfig) -> int:
    corpus = args.corpus or cfg.paths.corpus
    graphs, vocab = _read_corpus(corpus, _vocab_for(args, cfg))
    if any(g.label is None for g in graphs):
        raise DataError("splitter comparison needs labelled graphs")
    train, test = experiments.stratified_split([g.label for g in graphs], cfg.generate.split_ratio, cfg.seed)
    setup = experiments.DeskSetup(experiments.NasDataset(graphs, [], [], {}), train, test)
    rows = experiments.compare_splitters(
        setup, args.splitters, cfg.stage1, cfg.stage2, cfg.loss, cfg.cutoffs, cfg.seed, vocab=vocab
    )
    print(experiments.splitter_table(rows))
    out = _out_path(args.out or Path(cfg.paths.output_dir) / "splitters.csv")
    experiments.write_splitter_csv(out, rows)
    print(f"report -> {out}")
    return EXIT_OK


# ------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="narx", description=__doc__)
    ap.add_argument("--config", help="JSON run config")
    ap.add_argument("--seed", type=int, help="overrides config and NARX_SEED")
    ap.add_argument("--workers", type=int, help="processes for per-graph segmentation (default 1)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-nas", help="generate a labelled cell-space corpus")
    p.add_argument("--out")
    p.add_argument("--manifest")
    p.add_argument("--n", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--radius", type=int)
    p.add_argument("--cells", type=int)
    p.set_defaults(func=cmd_gen_nas)

    p = sub.add_parser("split", help="stratified train/test split of a corpus")
    p.add_argument("--corpus")
    p.add_argument("--ratio", type=float)
    p.add_argument("--train-out")
    p.add_argument("--test-out")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("mine", help="mine repeated motifs and save the fitted miner")
    p.add_argument("--corpus")
    p.add_argument("--vocab")
    p.add_argument("--out", required=True)
    p.add_argument("--dump", help="per-graph motif debug JSONL")
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("train-motifs", help="stage 1: motif and context encoders")
    p.add_argument("--corpus")
    p.add_argument("--vocab")
    p.add_argument("--out")
    p.add_argument("--log", help="training history CSV")
    p.add_argument("--split", choices=sorted(SPLITTERS))
    p.set_defaults(func=cmd_train_motifs)

    p = sub.add_parser("train-graph", help="stage 2: macro-graph encoder and classifier")
    p.add_argument("--corpus")
    p.add_argument("--init", help="stage-1 checkpoint")
    p.add_argument("--out")
    p.add_argument("--log", help="training history CSV")
    p.add_argument("--loss", choices=LOSS_MODES)
    p.set_defaults(func=cmd_train_graph)

    p = sub.add_parser("embed", help="embed every corpus line")
    p.add_argument("--corpus")
    p.add_argument("--model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("index", help="build an index file from embed output")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("query", help="top-k neighbours for corpus lines")
    p.add_argument("--index")
    p.add_argument("--model")
    p.add_argument("--queries", required=True, help="corpus file holding the query graphs")
    p.add_argument("--line", type=int, help="1-based line to query (default: all)")
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--exclude-self", action="store_true")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="MRR / MAP / NDCG of held-out queries against the index")
    p.add_argument("--index")
    p.add_argument("--model")
    p.add_argument("--queries", required=True)
    p.add_argument("--out", help="metrics CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="index to CSV for external plotting")
    p.add_argument("--index")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("compare-splits", help="train and evaluate once per splitter strategy")
    p.add_argument("--corpus")
    p.add_argument("--vocab")
    p.add_argument("--splitters", nargs="+", default=list(SPLITTERS), choices=sorted(SPLITTERS))
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare_splits)

    for name in ("train-motifs", "train-graph", "compare-splits"):
        sp = sub.choices[name]
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch-size", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--temperature", type=float)
        sp.add_argument("--embed-dim", type=int)
    sub.choices["compare-splits"].add_argument("--loss", choices=LOSS_MODES)
    return ap


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg.with_seed(args.seed)
    if args.workers is not None:
        cfg.workers = args.workers
    gen = cfg.generate
    for flag, attr in (("n", "n"), ("classes", "classes"), ("radius", "max_radius"), ("cells", "num_cells")):
        if getattr(args, flag, None) is not None:
            setattr(gen, attr, getattr(args, flag))
    stages = {"train-motifs": [cfg.stage1], "train-graph": [cfg.stage2], "compare-splits": [cfg.stage1, cfg.stage2]}
    for stage in stages.get(args.command, []):
        for flag, attr in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "learning_rate"),
                           ("temperature", "temperature"), ("embed_dim", "embed_dim")):
            if getattr(args, flag, None) is not None:
                setattr(stage, attr, getattr(args, flag))
        stage.__post_init__()
    if getattr(args, "loss", None):
        cfg.loss = args.loss
    cfg.__post_init__()
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_flags(RunConfig.load(args.config), args)
        return args.func(args, cfg)
    except (ConfigError, GenerationError) as exc:
        print(f"narx: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"narx: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, GraphError, OSError, KeyError) as exc:
        print(f"narx: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # remaining ValueErrors come from parameter checks
        print(f"narx: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
