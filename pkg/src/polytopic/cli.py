"""Command-line pipeline: ingest -> lda -> label -> train -> eval -> repro.

Every subcommand takes ``--config`` (the JSON run config) and ``--out``
(its output directory), plus the overrides ``--seed``, ``--threads`` and
``--precision {f32,f64}``. Each run writes a MANIFEST.json naming every
artifact it produced, and holds an exclusive lockfile in the output
directory while running. Exit codes: 0 success, 1 validation error,
2 runtime error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .corpus import (
    AlignedCorpus,
    Vocab,
    build_vocab,
    load_aligned_corpus,
    load_manifest,
    load_stopwords,
    vectorize_all,
)
from .embedstore import attach, read_embeddings
from .errors import ConfigError, PolytopicError
from .evaluate import EvalReport, build_report, npmi_coherence, random_baseline
from .lda import (
    LdaModel,
    bootstrap_labels,
    gibbs_train,
    label_disagreement,
    load_lda,
    posterior_labels,
    read_labels,
    save_lda,
    sweep_topics,
    top_words,
    write_labels,
)
from .nnkernel import mix_seed
from .ntm import (
    NtmConfig,
    TrainConfig,
    TrainingData,
    infer_theta,
    load_ntm,
    ntm_top_words,
    save_ntm,
    train,
)
from .plotting import save_confusion_heatmap, save_sweep_curve, save_topic_count_bars

LOCK_NAME = ".polytopic.lock"


@contextlib.contextmanager
def locked_output_dir(path: Path):
    """Create the directory and hold an exclusive lockfile while inside."""
    path.mkdir(parents=True, exist_ok=True)
    lock = path / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise PolytopicError(
            f"output directory {path} is locked by another run "
            f"(remove {lock} if that run is dead)") from None
    os.close(fd)
    try:
        yield path
    finally:
        lock.unlink(missing_ok=True)


@contextlib.contextmanager
def _stage(name: str):
    """Prefix any toolkit error with the pipeline stage that raised it."""
    try:
        yield
    except PolytopicError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise type(exc)(f"[{name}] {exc}") from exc


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_run_manifest(outdir: Path, command: str, config: Optional[RunConfig],
                        artifacts: dict[str, str]) -> None:
    _write_json(outdir / "MANIFEST.json", {
        "command": command,
        "toolkit_version": __version__,
        "config_hash": config.hash() if config else None,
        "seeds": config.seeds if config else None,
        "artifacts": dict(sorted(artifacts.items())),
    })


def _load_pipeline_inputs(config: RunConfig):
    """Corpus, per-language vocabularies, and pivot bags of words."""
    corpus = load_aligned_corpus(config.manifest)
    man = load_manifest(config.manifest)
    stop = {lang: load_stopwords(p) for lang, p in man.stopwords.items()}
    vocabs = {lang: build_vocab(corpus.docs[lang], config.vocab_cap, stop.get(lang, ()))
              for lang in corpus.languages}
    bows = vectorize_all(corpus.pivot_docs(), vocabs[corpus.pivot])
    return corpus, vocabs, bows


def _save_bow_cache(path: Path, bows, ids, vocab_size: int) -> None:
    indptr = np.zeros(len(bows) + 1, dtype=np.int64)
    cols, vals = [], []
    for i, bow in enumerate(bows):
        for pos in sorted(bow.counts):
            cols.append(pos)
            vals.append(bow.counts[pos])
        indptr[i + 1] = len(cols)
    np.savez(path, format="polytopic-bows-v1", indptr=indptr,
             cols=np.array(cols, dtype=np.int64), vals=np.array(vals, dtype=np.int64),
             ids=np.array(ids, dtype=str), vocab_size=vocab_size)


def cmd_ingest(config: RunConfig, outdir: Path) -> dict[str, str]:
    with _stage("ingest"):
        corpus, vocabs, bows = _load_pipeline_inputs(config)
        artifacts = {}
        for lang, vocab in vocabs.items():
            name = f"vocab_{lang}.txt"
            vocab.save(outdir / name)
            artifacts[f"vocab.{lang}"] = name
        cache = f"bows_{corpus.pivot}.npz"
        _save_bow_cache(outdir / cache, bows, corpus.ids, len(vocabs[corpus.pivot]))
        artifacts[f"bows.{corpus.pivot}"] = cache
        stats = {
            "languages": list(corpus.languages),
            "pivot": corpus.pivot,
            "documents": len(corpus),
            "vocab_sizes": {lang: len(v) for lang, v in vocabs.items()},
            "pivot_tokens_in_vocab": int(sum(b.total() for b in bows)),
        }
        _write_json(outdir / "ingest_stats.json", stats)
        artifacts["stats"] = "ingest_stats.json"
    _write_run_manifest(outdir, "ingest", config, artifacts)
    return artifacts


def _train_lda(config: RunConfig, bows, vocab: Vocab, seed: int,
               tau: Optional[int] = None) -> LdaModel:
    return gibbs_train(bows, tau=tau or config.tau, iterations=config.lda_iterations,
                       alpha=config.alpha, eta=config.eta,
                       seed=mix_seed(seed, 0x1DA), vocab=vocab)


def cmd_lda(config: RunConfig, outdir: Path) -> dict[str, str]:
    artifacts = {}
    with _stage("lda"):
        corpus, vocabs, bows = _load_pipeline_inputs(config)
        vocab = vocabs[corpus.pivot]
        seed = config.seeds[0]
        tau = config.tau
        if config.lda_grid:
            best_tau, table = sweep_topics(
                bows, vocab, config.lda_grid, iterations=config.lda_iterations,
                seed=seed, alpha=config.alpha, eta=config.eta, threads=config.threads)
            with open(outdir / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["tau", "npmi"])
                for t in config.lda_grid:
                    writer.writerow([t, repr(table[t])])
            save_sweep_curve(table, outdir / "sweep.png")
            artifacts["sweep.table"] = "sweep.csv"
            artifacts["sweep.figure"] = "sweep.png"
            tau = best_tau
        model = _train_lda(config, bows, vocab, seed, tau=tau)
        save_lda(model, outdir / "lda.npz")
        artifacts["checkpoint"] = "lda.npz"
        lists = top_words(model, 10)
        labels = bootstrap_labels(corpus.pivot_docs(), lists, model=model)
        write_labels(outdir / "labels.jsonl", corpus.ids, labels)
        artifacts["labels"] = "labels.jsonl"
        posterior = posterior_labels(model)
        write_labels(outdir / "labels_posterior.jsonl", corpus.ids, posterior)
        artifacts["labels.posterior"] = "labels_posterior.jsonl"
        _write_json(outdir / "lda_summary.json", {
            "tau": tau,
            "npmi": npmi_coherence(lists, bows, vocab),
            "label_disagreement": label_disagreement(labels, posterior),
            "top_words": lists,
        })
        artifacts["summary"] = "lda_summary.json"
    _write_run_manifest(outdir, "lda", config, artifacts)
    return artifacts


def cmd_label(config: RunConfig, outdir: Path, checkpoint: Path) -> dict[str, str]:
    artifacts = {}
    with _stage("label"):
        model = load_lda(checkpoint)
        corpus = load_aligned_corpus(config.manifest)
        lists = top_words(model, 10)
        labels = bootstrap_labels(corpus.pivot_docs(), lists, model=model)
        posterior = posterior_labels(model)
        write_labels(outdir / "labels.jsonl", corpus.ids, labels)
        artifacts["labels"] = "labels.jsonl"
        _write_json(outdir / "label_diagnostics.json", {
            "label_disagreement": label_disagreement(labels, posterior),
            "documents": len(corpus),
        })
        artifacts["diagnostics"] = "label_diagnostics.json"
    _write_run_manifest(outdir, "label", config, artifacts)
    return artifacts


def _ntm_config(config: RunConfig, vocab_size: int, input_dim: Optional[int]) -> NtmConfig:
    return NtmConfig(kind=config.model, tau=config.tau, vocab_size=vocab_size,
                     input_dim=input_dim, hidden=config.hidden,
                     dropout=config.dropout, prior_alpha=config.prior_alpha,
                     dtype=config.precision)


def _labels_for(corpus: AlignedCorpus, labels_path: Path) -> np.ndarray:
    table = read_labels(labels_path)
    missing = [i for i in corpus.ids if i not in table]
    if missing:
        raise PolytopicError(f"labels file lacks {len(missing)} document id(s), "
                             f"first: {missing[0]!r}")
    return np.array([table[i] for i in corpus.ids], dtype=np.int64)


def cmd_train(config: RunConfig, outdir: Path) -> dict[str, str]:
    artifacts = {}
    with _stage("train"):
        corpus, vocabs, bows = _load_pipeline_inputs(config)
        vocab = vocabs[corpus.pivot]
        embeddings = None
        input_dim = None
        if config.model in ("ctm", "tcctm"):
            emb = read_embeddings(config.embeddings[corpus.pivot])
            bound = attach(corpus.pivot_docs(), emb)
            embeddings = bound.features
            input_dim = emb.dim
        labels = None
        if config.model == "tcctm":
            if config.labels is None:
                raise ConfigError("labels: required to train tcctm (run the lda/label stage first)")
            labels = _labels_for(corpus, config.labels)
        data = TrainingData(bows, vocab, embeddings=embeddings, labels=labels)
        net = _ntm_config(config, len(vocab), input_dim)
        tc = TrainConfig(epochs=config.epochs, lr=config.lr, batch_size=config.batch_size,
                         lam=config.lam, seed=config.seeds[0])
        model = train(data, net, tc, log_path=outdir / "training_log.jsonl")
        artifacts["training_log"] = "training_log.jsonl"
        save_ntm(model, outdir / "ntm.npz")
        artifacts["checkpoint"] = "ntm.npz"
    _write_run_manifest(outdir, "train", config, artifacts)
    return artifacts


def _write_report_files(report: EvalReport, outdir: Path, pivot: str,
                        random_rows: Optional[dict] = None,
                        figures: bool = True) -> dict[str, str]:
    artifacts = {}
    payload = report.to_dict()
    if random_rows:
        payload["random_baseline"] = random_rows
    _write_json(outdir / "report.json", payload)
    artifacts["report"] = "report.json"
    for lang, matrix in sorted(report.confusion.items()):
        name = f"confusion_{lang}.csv"
        with open(outdir / name, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            for row in matrix:
                writer.writerow([repr(float(v)) for v in row])
        artifacts[f"confusion.{lang}"] = name
        if figures:
            fig = f"confusion_{lang}.png"
            save_confusion_heatmap(matrix, outdir / fig, pivot, lang)
            artifacts[f"confusion.{lang}.figure"] = fig
    with open(outdir / "topic_counts.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["topic", "count"])
        for t, c in enumerate(report.topic_counts_pivot):
            writer.writerow([t, int(c)])
    artifacts["topic_counts"] = "topic_counts.csv"
    if figures:
        save_topic_count_bars(report.topic_counts_pivot, outdir / "topic_counts.png")
        artifacts["topic_counts.figure"] = "topic_counts.png"
    return artifacts


def cmd_eval(config: RunConfig, outdir: Path, checkpoint: Path) -> dict[str, str]:
    with _stage("eval"):
        model = load_ntm(checkpoint)
        corpus = load_aligned_corpus(config.manifest)
        if model.vocab is None:
            raise PolytopicError("checkpoint carries no vocabulary; cannot score NPMI")
        reference = vectorize_all(corpus.pivot_docs(), model.vocab)
        if model.config.kind == "prodlda":
            lists = ntm_top_words(model, 10)
            counts = np.zeros(model.config.tau, dtype=np.int64)
            for lo in range(0, len(reference), 512):
                chunk = reference[lo:lo + 512]
                dense = np.stack([b.dense(len(model.vocab), model.dtype) for b in chunk])
                theta = infer_theta(model, dense)
                counts += np.bincount(np.argmax(theta, axis=1), minlength=model.config.tau)
            report = EvalReport(npmi=npmi_coherence(lists, reference, model.vocab),
                                match_pct={}, mean_kl={}, confusion={},
                                per_topic_precision={},
                                topic_counts_pivot=counts,
                                confusion_empty_rows={})
            random_rows = None
        else:
            missing = [l for l in corpus.languages if l not in config.embeddings]
            if missing:
                raise ConfigError(f"embeddings: missing for language(s) {', '.join(missing)}")
            bound = attach(corpus, {l: read_embeddings(config.embeddings[l])
                                    for l in corpus.languages})
            report = build_report(model, bound, reference, model.vocab)
            rmatch, rkl = random_baseline(model, bound, seed=mix_seed(config.seeds[0], 0xBA5E))
            random_rows = {"match_pct": dict(sorted(rmatch.items())),
                           "mean_kl": dict(sorted(rkl.items()))}
        artifacts = _write_report_files(report, outdir, corpus.pivot, random_rows)
    _write_run_manifest(outdir, "eval", config, artifacts)
    return artifacts


def cmd_repro(config: RunConfig, outdir: Path) -> dict[str, str]:
    """Train and evaluate the LDA / ProdLDA / CTM / TCCTM grid over every
    configured seed; emit a coherence table, a transfer table, per-run
    reports and figures for the first seed."""
    artifacts = {}
    with _stage("repro"):
        corpus, vocabs, bows = _load_pipeline_inputs(config)
        vocab = vocabs[corpus.pivot]
        missing = [l for l in corpus.languages if l not in config.embeddings]
        if missing:
            raise ConfigError(f"embeddings: missing for language(s) {', '.join(missing)}")
        emb = {l: read_embeddings(config.embeddings[l]) for l in corpus.languages}
        bound = attach(corpus, emb)
        pivot_features = bound.features[corpus.pivot]
        input_dim = pivot_features.shape[1]

        (outdir / "models").mkdir(exist_ok=True)
        (outdir / "eval").mkdir(exist_ok=True)
        coherence_rows = []
        transfer_rows = []
        npmi_by_model: dict[str, list[float]] = {}

        for seed in config.seeds:
            lda_model = _train_lda(config, bows, vocab, seed)
            lists = top_words(lda_model, 10)
            lda_npmi = npmi_coherence(lists, bows, vocab)
            coherence_rows.append(("lda", seed, lda_npmi))
            npmi_by_model.setdefault("lda", []).append(lda_npmi)
            labels = bootstrap_labels(corpus.pivot_docs(), lists, model=lda_model)
            if seed == config.seeds[0]:
                save_lda(lda_model, outdir / "models" / f"lda_s{seed}.npz")
                artifacts[f"model.lda.s{seed}"] = f"models/lda_s{seed}.npz"
                write_labels(outdir / "labels.jsonl", corpus.ids, labels)
                artifacts["labels"] = "labels.jsonl"

            for kind in ("prodlda", "ctm", "tcctm"):
                net = NtmConfig(kind=kind, tau=config.tau, vocab_size=len(vocab),
                                input_dim=None if kind == "prodlda" else input_dim,
                                hidden=config.hidden, dropout=config.dropout,
                                prior_alpha=config.prior_alpha, dtype=config.precision)
                data = TrainingData(
                    bows, vocab,
                    embeddings=None if kind == "prodlda" else pivot_features,
                    labels=labels if kind == "tcctm" else None)
                tc = TrainConfig(epochs=config.epochs, lr=config.lr,
                                 batch_size=config.batch_size,
                                 lam=config.lam if kind == "tcctm" else 0.0, seed=seed)
                model = train(data, net, tc)
                save_ntm(model, outdir / "models" / f"{kind}_s{seed}.npz")
                artifacts[f"model.{kind}.s{seed}"] = f"models/{kind}_s{seed}.npz"

                lists_k = ntm_top_words(model, 10)
                npmi = npmi_coherence(lists_k, bows, vocab)
                coherence_rows.append((kind, seed, npmi))
                npmi_by_model.setdefault(kind, []).append(npmi)

                if kind == "prodlda":
                    continue
                report = build_report(model, bound, bows, vocab)
                rmatch, rkl = random_baseline(model, bound,
                                              seed=mix_seed(seed, 0xBA5E))
                rdir = outdir / "eval" / f"{kind}_s{seed}"
                rdir.mkdir(parents=True, exist_ok=True)
                sub = _write_report_files(
                    report, rdir, corpus.pivot,
                    {"match_pct": dict(sorted(rmatch.items())),
                     "mean_kl": dict(sorted(rkl.items()))},
                    figures=seed == config.seeds[0])
                for key, rel in sub.items():
                    artifacts[f"eval.{kind}.s{seed}.{key}"] = f"eval/{kind}_s{seed}/{rel}"
                for lang in sorted(report.match_pct):
                    transfer_rows.append((kind, seed, lang, report.match_pct[lang],
                                          report.mean_kl[lang], rmatch[lang], rkl[lang]))

        with open(outdir / "coherence.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "seed", "npmi"])
            for model_name, seed, npmi in coherence_rows:
                writer.writerow([model_name, seed, repr(npmi)])
            for model_name in ("lda", "prodlda", "ctm", "tcctm"):
                writer.writerow([model_name, "median",
                                 repr(float(np.median(npmi_by_model[model_name])))])
        artifacts["coherence"] = "coherence.csv"

        with open(outdir / "transfer.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "seed", "language", "match_pct", "mean_kl",
                             "random_match_pct", "random_mean_kl"])
            for row in transfer_rows:
                writer.writerow([row[0], row[1], row[2]] + [repr(float(v)) for v in row[3:]])
        artifacts["transfer"] = "transfer.csv"
    _write_run_manifest(outdir, "repro", config, artifacts)
    return artifacts


def cmd_synth(outdir: Path, n_docs: int, n_topics: int, dim: int, sigma: float,
              seed: int) -> dict[str, str]:
    from .synthetic import make_fixture

    with _stage("synth"):
        fixture = make_fixture(outdir, n_docs=n_docs, n_topics=n_topics, dim=dim,
                               sigma=sigma, seed=seed)
        artifacts = {
            "manifest": "manifest.json",
            "config": "config.json",
            "docs.en": "en.jsonl",
            "docs.xx": "xx.jsonl",
            "stopwords.en": "stopwords_en.txt",
            "stopwords.xx": "stopwords_xx.txt",
            "embeddings.en": fixture.emb_paths["en"].name,
            "embeddings.xx": fixture.emb_paths["xx"].name,
        }
    _write_run_manifest(outdir, "synth", None, artifacts)
    return artifacts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polytopic",
        description="Topic modeling pipeline: LDA, ProdLDA/CTM/TCCTM, and "
                    "monolingual + zero-shot cross-lingual evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seeds")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--precision", choices=("f32", "f64"), default=None)
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="model checkpoint (.npz)")

    common(sub.add_parser("ingest", help="build vocabularies and BoW caches"))
    common(sub.add_parser("lda", help="Gibbs LDA (+ optional topic-count sweep) and labels"))
    common(sub.add_parser("label", help="bootstrap labels from an LDA checkpoint"),
           checkpoint=True)
    common(sub.add_parser("train", help="train prodlda / ctm / tcctm"))
    common(sub.add_parser("eval", help="evaluate a trained model"), checkpoint=True)
    common(sub.add_parser("repro", help="full model-grid experiment at configured scale"))

    synth = sub.add_parser("synth", help="generate the synthetic bilingual fixture")
    synth.add_argument("--out", required=True)
    synth.add_argument("--docs", type=int, default=1000)
    synth.add_argument("--topics", type=int, default=4)
    synth.add_argument("--dim", type=int, default=16)
    synth.add_argument("--sigma", type=float, default=0.1)
    synth.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        outdir = Path(args.out)
        if args.command == "synth":
            with locked_output_dir(outdir):
                cmd_synth(outdir, args.docs, args.topics, args.dim, args.sigma, args.seed)
            return 0
        config = load_config(args.config, seed=args.seed, threads=args.threads,
                             precision=args.precision)
        with locked_output_dir(outdir):
            if args.command == "ingest":
                cmd_ingest(config, outdir)
            elif args.command == "lda":
                cmd_lda(config, outdir)
            elif args.command == "label":
                cmd_label(config, outdir, Path(args.checkpoint))
            elif args.command == "train":
                cmd_train(config, outdir)
            elif args.command == "eval":
                cmd_eval(config, outdir, Path(args.checkpoint))
            elif args.command == "repro":
                cmd_repro(config, outdir)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except PolytopicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
