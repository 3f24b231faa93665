"""End-to-end run orchestration: dataset preparation, the training loop
with early stopping and checkpoints, and checkpoint-backed translation.

A dataset directory holds ``{train,dev,test}.{src,tgt}`` text files and,
for the multimodal architectures, ``features.{split}.mmf`` maps. A run
directory is self-contained: config snapshot, merge table, vocabularies,
``best.ckpt``/``last.ckpt``, ``metrics.jsonl``, and ``log.txt``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, format_config, parse_config, save_config
from .data.batching import ParallelCorpus, index_corpus, make_batches
from .data.bpe import apply_bpe, learn_bpe, load_bpe, remove_bpe, save_bpe
from .data.features import load_features
from .data.text import preprocess_text, read_lines
from .data.vocab import Vocabulary
from .decode import ModelStepper, beam_decode, greedy_decode, greedy_decode_batch
from .errors import ConfigError, FormatError
from .metrics import bleu_corpus
from .model import ModelParams, TranslationModel, parameter_specs
from .tensor import Rng, Tensor
from .train import EarlyStopState, OptimizerState, init_params, train_epoch

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


@dataclass
class Dataset:
    """Preprocessed, segmented, indexed corpora plus aligned features."""

    cfg: TrainConfig
    bpe_model: object
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    corpora: dict[str, ParallelCorpus]          # de-BPE'd token sentences
    segmented: dict[str, ParallelCorpus]        # subword sentences
    indexed: dict[str, list]
    features: dict[str, np.ndarray] | None      # (N, P, C) per split


def _load_split(data_dir: Path, split: str) -> tuple[list[list[str]], list[list[str]]]:
    src_path = data_dir / f"{split}.src"
    tgt_path = data_dir / f"{split}.tgt"
    if not src_path.exists() or not tgt_path.exists():
        raise ConfigError(f"dataset is missing {split}.src / {split}.tgt under {data_dir}")
    src = [preprocess_text(line).split() for line in read_lines(src_path)]
    tgt = [preprocess_text(line).split() for line in read_lines(tgt_path)]
    return src, tgt


def load_dataset(data_dir: str | Path, cfg: TrainConfig) -> Dataset:
    """Read, preprocess, segment, and index the corpus; load features when
    the architecture needs them (adopting their channel/width geometry)."""
    data_dir = Path(data_dir)
    raw = {}
    for split in SPLITS:
        src, tgt = _load_split(data_dir, split)
        raw[split] = ParallelCorpus(src=src, tgt=tgt, split=split)

    bpe_model = learn_bpe([raw["train"].src, raw["train"].tgt], cfg.bpe_merges)
    segmented = {
        split: ParallelCorpus(
            src=[apply_bpe(bpe_model, s) for s in corpus.src],
            tgt=[apply_bpe(bpe_model, t) for t in corpus.tgt],
            split=split,
        )
        for split, corpus in raw.items()
    }
    src_vocab = Vocabulary.from_corpus(segmented["train"].src)
    tgt_vocab = Vocabulary.from_corpus(segmented["train"].tgt)
    indexed = {
        split: index_corpus(corpus, src_vocab, tgt_vocab)
        for split, corpus in segmented.items()
    }

    features = None
    if cfg.arch in ("ma", "fa"):
        features = {}
        geometry = None
        for split in SPLITS:
            path = data_dir / f"features.{split}.mmf"
            if not path.exists():
                raise ConfigError(f"architecture {cfg.arch!r} needs {path.name} under {data_dir}")
            store = load_features(path, normalize=cfg.normalize_features)
            store.check_alignment(len(raw[split]), what=f"{split} split")
            if geometry is None:
                geometry = (store.channels, store.width)
            elif geometry != (store.channels, store.width):
                raise ConfigError(f"feature geometry differs across splits: {geometry} vs "
                                  f"({store.channels}, {store.width})")
            features[split] = store.positions()
        if (cfg.feat_channels, cfg.feat_width) != geometry:
            log.info("adopting feature geometry channels=%d width=%d from the dataset", *geometry)
            cfg = cfg.replace(feat_channels=geometry[0], feat_width=geometry[1])

    return Dataset(
        cfg=cfg, bpe_model=bpe_model, src_vocab=src_vocab, tgt_vocab=tgt_vocab,
        corpora=raw, segmented=segmented, indexed=indexed, features=features,
    )


def _split_features(ds: Dataset, split: str) -> np.ndarray | None:
    return None if ds.features is None else ds.features[split]


def evaluate_split(model: TranslationModel, ds: Dataset, split: str,
                   batch_size: int = 64, stats: dict | None = None) -> tuple[float, list[list[str]]]:
    """Greedy-decode a split in batches and score corpus BLEU against the
    de-BPE'd references. Returns (bleu, hypothesis token sentences)."""
    indexed = ds.indexed[split]
    feats = _split_features(ds, split)
    batches = make_batches(indexed, batch_size, rng=None, max_len=model.cfg.max_len, features=feats)
    hyp_tokens: list[list[str] | None] = [None] * len(indexed)
    for batch in batches:
        stepper = ModelStepper(model, batch.src_ids, batch.src_mask, batch.features, stats=stats)
        outputs = greedy_decode_batch(stepper, max_len=model.cfg.max_len)
        for row, idx in enumerate(batch.indices):
            hyp_tokens[int(idx)] = remove_bpe(ds.tgt_vocab.decode(outputs[row]))
    refs = ds.corpora[split].tgt
    return bleu_corpus(hyp_tokens, refs), hyp_tokens


@dataclass
class TrainOutcome:
    run_dir: Path
    best_metric: float
    best_epoch: int
    epochs_run: int
    stopped_early: bool


def _checkpoint_from_state(params: ModelParams, opt: OptimizerState, cfg: TrainConfig,
                           epoch: int, early: EarlyStopState,
                           data_rng: Rng, dropout_rng: Rng,
                           src_vocab_size: int, tgt_vocab_size: int) -> Checkpoint:
    arrays = {}
    for name, p in params.items():
        arrays[f"param/{name}"] = p.data
    for name in params.names():
        arrays[f"adam/m/{name}"] = opt.m[name]
        arrays[f"adam/v/{name}"] = opt.v[name]
    meta = {
        "config": format_config(cfg),
        "epoch": epoch,
        "adam_t": opt.t,
        "best_metric": early.best if np.isfinite(early.best) else None,
        "best_epoch": early.best_epoch,
        "since": early.since,
        "rng": {"data": data_rng.state, "dropout": dropout_rng.state},
        "src_vocab_size": src_vocab_size,
        "tgt_vocab_size": tgt_vocab_size,
    }
    return Checkpoint(arrays=arrays, meta=meta)


def params_from_checkpoint(ckpt: Checkpoint) -> tuple[TrainConfig, ModelParams]:
    cfg = parse_config(ckpt.meta["config"])
    src_size = int(ckpt.meta["src_vocab_size"])
    tgt_size = int(ckpt.meta["tgt_vocab_size"])
    params = ModelParams()
    for spec in parameter_specs(cfg, src_size, tgt_size):
        key = f"param/{spec.name}"
        if key not in ckpt.arrays:
            raise FormatError(f"checkpoint is missing parameter {spec.name!r}")
        arr = ckpt.arrays[key]
        if tuple(arr.shape) != spec.shape:
            raise FormatError(
                f"checkpoint parameter {spec.name!r} has shape {arr.shape}, expected {spec.shape}"
            )
        params.add(spec.name, Tensor(arr.copy(), requires_grad=True), bias=spec.bias)
    return cfg, params


def _restore_optimizer(ckpt: Checkpoint, params: ModelParams) -> OptimizerState:
    opt = OptimizerState.for_params(params)
    opt.t = int(ckpt.meta["adam_t"])
    for name in params.names():
        opt.m[name][...] = ckpt.arrays[f"adam/m/{name}"]
        opt.v[name][...] = ckpt.arrays[f"adam/v/{name}"]
    return opt


def load_model(run_dir: str | Path, which: str = "best"):
    """Rebuild a trained model plus its vocabularies and merge table."""
    run_dir = Path(run_dir)
    ckpt = load_checkpoint(run_dir / f"{which}.ckpt")
    cfg, params = params_from_checkpoint(ckpt)
    model = TranslationModel(cfg, params)
    src_vocab = Vocabulary.load(run_dir / "vocab.src")
    tgt_vocab = Vocabulary.load(run_dir / "vocab.tgt")
    bpe_model = load_bpe(run_dir / "bpe.model")
    return model, src_vocab, tgt_vocab, bpe_model


def run_training(data_dir: str | Path, run_dir: str | Path, cfg: TrainConfig,
                 resume: bool = True) -> TrainOutcome:
    """Train one seeded run to early stopping; idempotent over restarts.

    Resuming from ``last.ckpt`` reproduces the uninterrupted run exactly:
    the checkpoint carries parameters, optimizer moments, shuffle and
    dropout rng states, and the early-stop counters.
    """
    cfg.validate()
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    ds = load_dataset(data_dir, cfg)
    cfg = ds.cfg  # may carry adopted feature geometry

    save_config(cfg, run_dir / "config.txt")
    save_bpe(ds.bpe_model, run_dir / "bpe.model")
    ds.src_vocab.save(run_dir / "vocab.src")
    ds.tgt_vocab.save(run_dir / "vocab.tgt")

    log_path = run_dir / "log.txt"
    metrics_path = run_dir / "metrics.jsonl"

    data_rng = Rng(cfg.seed, stream=1)
    dropout_rng = Rng(cfg.seed, stream=2)
    early = EarlyStopState(patience=cfg.patience)
    start_epoch = 0

    last_path = run_dir / "last.ckpt"
    if resume and last_path.exists():
        ckpt = load_checkpoint(last_path)
        saved_cfg, params = params_from_checkpoint(ckpt)
        # max_epochs only bounds the loop; every other field must match for
        # the resumed trajectory to be the uninterrupted one
        if format_config(saved_cfg.replace(max_epochs=1)) != format_config(cfg.replace(max_epochs=1)):
            raise ConfigError(f"{last_path}: checkpoint config differs from the requested one")
        opt = _restore_optimizer(ckpt, params)
        data_rng = Rng.from_state(ckpt.meta["rng"]["data"])
        dropout_rng = Rng.from_state(ckpt.meta["rng"]["dropout"])
        best = ckpt.meta["best_metric"]
        early.best = -np.inf if best is None else float(best)
        early.best_epoch = int(ckpt.meta["best_epoch"])
        early.since = int(ckpt.meta["since"])
        start_epoch = int(ckpt.meta["epoch"]) + 1
        _log_line(log_path, f"resumed from {last_path.name} at epoch {start_epoch}")
    else:
        init_rng = Rng(cfg.seed, stream=0)
        params = init_params(parameter_specs(cfg, len(ds.src_vocab), len(ds.tgt_vocab)), init_rng)
        opt = OptimizerState.for_params(params)
        _log_line(log_path, "config snapshot:\n" + format_config(cfg).rstrip(), mode="w")
        _log_line(log_path, f"seed {cfg.seed}, {len(ds.corpora['train'])} train sentences, "
                            f"src vocab {len(ds.src_vocab)}, tgt vocab {len(ds.tgt_vocab)}")
        metrics_path.write_text("")

    model = TranslationModel(cfg, params)
    train_feats = _split_features(ds, "train")

    epochs_run = start_epoch
    stopped = False
    for epoch in range(start_epoch, cfg.max_epochs):
        batches = make_batches(
            ds.indexed["train"], cfg.batch_size, rng=data_rng,
            max_len=cfg.max_len, features=train_feats,
        )
        stats = train_epoch(model, batches, opt, dropout_rng)
        dev_bleu, _ = evaluate_split(model, ds, "dev", batch_size=cfg.batch_size)
        improved = early.update(dev_bleu, epoch)
        epochs_run = epoch + 1

        with open(metrics_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"epoch": epoch, "loss": stats.mean_loss, "dev_bleu": dev_bleu}) + "\n")
        _log_line(
            log_path,
            f"epoch {epoch}: loss {stats.mean_loss:.4f} dev_bleu {dev_bleu:.2f}"
            f" grad_norm {stats.grad_norm_mean:.2f}"
            + (" *" if improved else ""),
        )

        ckpt = _checkpoint_from_state(
            params, opt, cfg, epoch, early, data_rng, dropout_rng,
            len(ds.src_vocab), len(ds.tgt_vocab),
        )
        if improved:
            save_checkpoint(run_dir / "best.ckpt", ckpt)
        save_checkpoint(last_path, ckpt)

        if early.should_stop:
            stopped = True
            _log_line(log_path, f"early stop: no dev improvement for {early.since} evaluations")
            break

    if not stopped:
        _log_line(log_path, f"stopped at max_epochs {cfg.max_epochs}")
    _log_line(log_path, f"best dev_bleu {early.best:.2f} at epoch {early.best_epoch}")
    return TrainOutcome(
        run_dir=run_dir, best_metric=float(early.best), best_epoch=early.best_epoch,
        epochs_run=epochs_run, stopped_early=stopped,
    )


def _log_line(path: Path, text: str, mode: str = "a") -> None:
    with open(path, mode, encoding="utf-8") as fh:
        fh.write(text + "\n")


def translate_lines(
    run_dirs: list[str | Path],
    lines: list[str],
    features_path: str | Path | None = None,
    beam: int = 6,
    max_len: int = 100,
    length_norm: float = 0.6,
    which: str = "best",
    stats: dict | None = None,
) -> list[str]:
    """Decode raw input lines with one model or an ensemble of runs.

    All runs must share vocabularies (they are byte-compared). Output is
    de-BPE'd token text, one sentence per line, aligned with the input.
    """
    if not run_dirs:
        raise ConfigError("need at least one run directory")
    loaded = [load_model(d, which=which) for d in run_dirs]
    models = [m for m, *_ in loaded]
    _, src_vocab, tgt_vocab, bpe_model = loaded[0]
    base = Path(run_dirs[0])
    for other in run_dirs[1:]:
        for name in ("vocab.src", "vocab.tgt"):
            if (Path(other) / name).read_bytes() != (base / name).read_bytes():
                raise ConfigError(f"ensemble runs disagree on {name}: {other} vs {base}")

    cfg = models[0].cfg
    needs_features = any(m.uses_features for m in models)
    positions = None
    if needs_features:
        if features_path is None:
            raise ConfigError("these models need --features with aligned feature maps")
        store = load_features(features_path, normalize=cfg.normalize_features)
        store.check_alignment(len(lines), what="input file")
        positions = store.positions()

    outputs = []
    for i, line in enumerate(lines):
        tokens = preprocess_text(line).split()
        if not tokens:
            raise ConfigError(f"input line {i + 1} is empty after preprocessing")
        ids = np.asarray([src_vocab.encode(apply_bpe(bpe_model, tokens))], dtype=np.int64)
        mask = np.ones_like(ids, dtype=np.float32)
        feats = None if positions is None else positions[i : i + 1]
        if beam == 1:
            hyp_ids = greedy_decode(models, ids, mask, feats, max_len=max_len, stats=stats)[0]
        else:
            hyp_ids = beam_decode(
                models, ids, mask, feats, beam=beam, max_len=max_len, length_norm=length_norm
            )[0]
        outputs.append(" ".join(remove_bpe(tgt_vocab.decode(hyp_ids))))
    return outputs
