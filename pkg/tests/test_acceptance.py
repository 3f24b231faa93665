"""Acceptance suite: every exit criterion, one test each, each printing a
single PASS/FAIL line (run with ``pytest tests/test_acceptance.py -s``).

The three training batteries (default task, distractor-heavy task, scaled
features) dominate the runtime: roughly an hour on two CPU cores at the
default configuration. Batteries are shared across criteria through
session fixtures and parallelized across processes (``MMT_MICRO_THREADS``
caps the workers).
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from mmt_micro.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from mmt_micro.cli import main as cli_main
from mmt_micro.config import TrainConfig, format_config
from mmt_micro.data.bpe import apply_bpe, learn_bpe, load_bpe, save_bpe
from mmt_micro.data.features import load_features, save_features
from mmt_micro.data.synthetic import SynthSpec, generate_synthetic, write_dataset
from mmt_micro.data.text import preprocess_text, read_lines
from mmt_micro.data.vocab import Vocabulary
from mmt_micro.errors import FormatError
from mmt_micro.gradcheck import check_gradients
from mmt_micro.matrix import run_cells, run_matrix
from mmt_micro.metrics import bleu_corpus
from mmt_micro.model import TranslationModel, parameter_specs
from mmt_micro.pipeline import translate_lines
from mmt_micro.tensor import Rng
from mmt_micro.train import init_params

SEEDS = (1, 2, 3, 4)


def verdict(num: int, name: str, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {num:2d}] {name}: {status} ({detail})")
    assert ok, f"criterion {num} {name}: {detail}"


def _battery_cfg(**kw) -> TrainConfig:
    # patience must span the plateau between learning the sentence frame
    # (early epochs) and learning the grounding (around epoch 25-35)
    base = dict(max_epochs=50, patience=30, max_len=30)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def work_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def default_battery(work_dir):
    """Baseline + filtered attention, 4 seeds, default synthetic task."""
    data = work_dir / "data_default"
    write_dataset(generate_synthetic(SynthSpec(seed=101)), data)
    t0 = time.monotonic()
    result = run_matrix(
        data, work_dir / "matrix_default", base_cfg=_battery_cfg(),
        systems=("baseline", "fa"), seeds=SEEDS, beam=6, trials=5000,
    )
    print(f"\n[battery] default task, 8 runs: {time.monotonic() - t0:.0f}s")
    return data, result


@pytest.fixture(scope="session")
def hard_battery(work_dir):
    """All three systems, 4 seeds, distractor-heavy task (8 distractors)."""
    data = work_dir / "data_hard"
    write_dataset(generate_synthetic(SynthSpec(distractors=8, seed=102)), data)
    t0 = time.monotonic()
    result = run_matrix(
        data, work_dir / "matrix_hard", base_cfg=_battery_cfg(),
        systems=("baseline", "ma", "fa"), seeds=SEEDS, beam=6, trials=5000,
    )
    print(f"\n[battery] distractor-heavy task, 12 runs: {time.monotonic() - t0:.0f}s")
    return data, result


@pytest.fixture(scope="session")
def scaled_battery(work_dir):
    """Multimodal attention with/without channel normalization on a task
    whose feature magnitudes are scaled by 100."""
    data = work_dir / "data_scaled"
    write_dataset(generate_synthetic(SynthSpec(feature_scale=100.0, seed=103)), data)
    cfg = _battery_cfg(arch="ma", max_epochs=30, patience=30)
    jobs = []
    for label, normalize in (("norm", True), ("unnorm", False)):
        for seed in SEEDS:
            run_cfg = cfg.replace(seed=seed, normalize_features=normalize)
            run_dir = work_dir / "matrix_scaled" / label / f"seed{seed}"
            jobs.append((str(data), str(run_dir), format_config(run_cfg), 6, 0.6))
    t0 = time.monotonic()
    results = run_cells(jobs)
    print(f"\n[battery] scaled-features task, 8 runs: {time.monotonic() - t0:.0f}s")
    grouped = {"norm": [], "unnorm": []}
    for job, res in zip(jobs, results):
        label = Path(job[1]).parent.name
        grouped[label].append(res)
    return data, grouped


class TestCriterion1Gradients:
    def test_full_model_gradients(self):
        t0 = time.monotonic()
        worst_by_arch = {}
        for arch in ("baseline", "ma", "fa"):
            cfg = TrainConfig(
                arch=arch, emb_dim=6, hidden_dim=5, feat_channels=7, feat_width=2,
                dropout_emb=0.0, dropout_enc=0.0, dropout_out=0.0,
            )
            params = init_params(parameter_specs(cfg, 11, 9), Rng(900), dtype=np.float64)
            model = TranslationModel(cfg, params)
            feats = None
            if model.uses_features:
                feats = np.abs(Rng(901).normal((2, 4, cfg.feat_channels)))
            src = np.array([[4, 5, 6, 7], [8, 9, 10, 0]])
            src_mask = np.array([[1, 1, 1, 1], [1, 1, 1, 0]], dtype=float)
            tgt_in = np.array([[1, 4, 5, 6], [1, 7, 8, 2]])
            tgt_ref = np.array([[4, 5, 6, 2], [7, 8, 2, 0]])
            tgt_mask = np.array([[1, 1, 1, 1], [1, 1, 1, 0]], dtype=float)

            def f():
                loss, _ = model.batch_loss(
                    src, src_mask, tgt_in, tgt_ref, tgt_mask, features=feats
                )
                return loss

            worst_by_arch[arch] = check_gradients(
                f, params.tensors(), samples_per_tensor=4, rng=Rng(902)
            )
        elapsed = time.monotonic() - t0
        worst = max(worst_by_arch.values())
        verdict(
            1, "full-model gradient check", worst < 1e-3 and elapsed < 120,
            f"max rel err {worst:.2e} across {worst_by_arch}, {elapsed:.0f}s",
        )


class TestCriterion2BpeOracle:
    def test_merges_and_segmentation_match_reference(self):
        from test_bpe import random_corpus, ref_apply, ref_learn

        t0 = time.monotonic()
        rng = Rng(777)
        mismatches = 0
        for _ in range(20):
            corpus_a = random_corpus(rng, max_words=25)
            corpus_b = random_corpus(rng, max_words=25)
            n_merges = int(rng.integers(1, 31))
            model = learn_bpe([corpus_a, corpus_b], n_merges)
            if model.merges != ref_learn([corpus_a, corpus_b], n_merges):
                mismatches += 1
                continue
            for sent in corpus_a + corpus_b:
                if apply_bpe(model, sent) != ref_apply(model.merges, sent):
                    mismatches += 1
                    break
        elapsed = time.monotonic() - t0
        verdict(
            2, "merge-learning oracle equivalence",
            mismatches == 0 and elapsed < 10,
            f"{mismatches} mismatching corpora of 20, {elapsed:.1f}s",
        )


class TestCriterion3BeamOracle:
    def test_beam_matches_enumeration(self):
        from test_decode import enumerate_best, random_table_stepper

        from mmt_micro.decode import beam_search

        t0 = time.monotonic()
        rng = Rng(4040)
        mismatches = 0
        for _ in range(50):
            stepper = random_table_stepper(rng, vocab=5, steps=4)
            got = beam_search(stepper, beam=4, max_len=4, length_norm=0.0)
            want = enumerate_best(stepper, max_len=4, length_norm=0.0)
            if got.tokens != want.tokens:
                mismatches += 1
        elapsed = time.monotonic() - t0
        verdict(
            3, "beam-search enumeration oracle",
            mismatches == 0 and elapsed < 30,
            f"{mismatches} mismatches of 50 models, {elapsed:.1f}s",
        )


class TestCriterion4FeatureNormalization:
    def test_normalization_direction_and_saturation(self, scaled_battery):
        _, grouped = scaled_battery
        dev_norm = float(np.mean([r["best_dev"] for r in grouped["norm"]]))
        dev_unnorm = float(np.mean([r["best_dev"] for r in grouped["unnorm"]]))
        pre_norm = float(np.mean([r["vis_pre_tanh_abs"] for r in grouped["norm"]]))
        pre_unnorm = float(np.mean([r["vis_pre_tanh_abs"] for r in grouped["unnorm"]]))
        ok = dev_norm >= dev_unnorm and pre_unnorm > 3.0 and pre_norm < 2.0
        verdict(
            4, "channel normalization direction",
            ok,
            f"dev BLEU norm {dev_norm:.1f} vs unnorm {dev_unnorm:.1f}; "
            f"|pre-tanh| norm {pre_norm:.2f} vs unnorm {pre_unnorm:.2f}",
        )


class TestCriterion5Grounding:
    def test_grounded_accuracy_separation(self, default_battery):
        _, result = default_battery
        base_acc = float(np.mean(result.accuracies["baseline"]))
        fa_acc = float(np.mean(result.accuracies["fa"]))
        verdict(
            5, "grounding separates text-only from filtered",
            base_acc <= 0.30 and fa_acc >= 0.80,
            f"baseline accuracy {base_acc:.3f} (chance 0.2), filtered {fa_acc:.3f}",
        )


class TestCriterion6FilteredVsMultimodal:
    def test_direction_and_significance(self, hard_battery):
        _, result = hard_battery
        runs = {}
        for (system, seed), run_dir in result.run_dirs.items():
            runs.setdefault(system, []).append(
                json.loads((run_dir / "test.metrics").read_text())
            )
        fa_dev = float(np.mean([r["dev_bleu"] for r in runs["fa"]]))
        ma_dev = float(np.mean([r["dev_bleu"] for r in runs["ma"]]))
        fa_test = float(np.mean([r["value"] for r in runs["fa"]]))
        base_test = float(np.mean([r["value"] for r in runs["baseline"]]))
        p = result.report.pairwise_p[("baseline", "fa")]
        gap = fa_test - base_test
        sig_ok = (p <= 0.05) if gap > 1.0 else True
        verdict(
            6, "filtered vs multimodal on distractor-heavy task",
            fa_dev >= ma_dev and sig_ok,
            f"dev BLEU fa {fa_dev:.1f} vs ma {ma_dev:.1f}; "
            f"test gap vs baseline {gap:.1f}, p={p:.4f}",
        )


class TestCriterion7Ensemble:
    def test_ensemble_at_least_mean_of_singles(self, default_battery):
        data, result = default_battery
        fa_dirs = [result.run_dirs[("fa", s)] for s in SEEDS]
        src_lines = read_lines(data / "test.src")
        refs = [preprocess_text(l) for l in read_lines(data / "test.tgt")]
        hyp = translate_lines(
            fa_dirs, src_lines, features_path=data / "features.test.mmf",
            beam=6, max_len=30,
        )
        ensemble_bleu = bleu_corpus(hyp, refs)
        singles = result.report.row("fa").scores
        verdict(
            7, "4-seed ensemble",
            ensemble_bleu >= float(np.mean(singles)),
            f"ensemble {ensemble_bleu:.2f} vs mean single {np.mean(singles):.2f}",
        )


class TestCriterion8Determinism:
    def test_repeated_training_bit_identical(self, work_dir):
        data = work_dir / "data_micro"
        write_dataset(
            generate_synthetic(SynthSpec(train_size=96, dev_size=24, test_size=24, seed=104)),
            data,
        )
        outs = []
        for name in ("det_a", "det_b"):
            run_dir = work_dir / name
            code = cli_main([
                "train", "--data", str(data), "--out", str(run_dir),
                "--arch", "fa", "--seed", "11", "--epochs", "3",
                "--batch-size", "32", "--no-resume",
            ])
            assert code == 0
            hyp = run_dir / "test.hyp"
            code = cli_main([
                "translate", "--run", str(run_dir), "--input", str(data / "test.src"),
                "--features", str(data / "features.test.mmf"),
                "--beam", "4", "--max-len", "20", "--output", str(hyp),
            ])
            assert code == 0
            outs.append(run_dir)
        same_ckpt = all(
            (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()
            for n in ("best.ckpt", "last.ckpt")
        )
        same_hyp = (outs[0] / "test.hyp").read_bytes() == (outs[1] / "test.hyp").read_bytes()
        verdict(
            8, "fixed-seed bit determinism",
            same_ckpt and same_hyp,
            f"checkpoints identical: {same_ckpt}, decoded outputs identical: {same_hyp}",
        )


class TestCriterion9FormatRoundTrips:
    def test_all_formats_roundtrip_with_crc(self, tmp_path):
        rng = Rng(55)
        problems = []

        maps = rng.normal((6, 8, 3, 3)).astype(np.float32)
        f1, f2 = tmp_path / "f1.mmf", tmp_path / "f2.mmf"
        save_features(maps, f1)
        save_features(load_features(f1), f2)
        if f1.read_bytes() != f2.read_bytes():
            problems.append("feature file")
        corrupted = bytearray(f1.read_bytes())
        corrupted[25] ^= 0x01
        (tmp_path / "f3.mmf").write_bytes(bytes(corrupted))
        try:
            load_features(tmp_path / "f3.mmf")
            problems.append("feature CRC not verified")
        except FormatError:
            pass

        model = learn_bpe([[["abab", "abba", "baba"]]], 12)
        b1, b2 = tmp_path / "m1.bpe", tmp_path / "m2.bpe"
        save_bpe(model, b1)
        save_bpe(load_bpe(b1), b2)
        if b1.read_bytes() != b2.read_bytes():
            problems.append("merge table")

        vocab = Vocabulary.from_corpus([["delta", "alpha", "alpha", "beta"]])
        v1, v2 = tmp_path / "v1.txt", tmp_path / "v2.txt"
        vocab.save(v1)
        Vocabulary.load(v1).save(v2)
        if v1.read_bytes() != v2.read_bytes():
            problems.append("vocabulary")

        ckpt = Checkpoint(
            arrays={"param/w": rng.normal((5, 4)).astype(np.float32)},
            meta={"config": "arch = fa\n", "epoch": 1},
        )
        c1, c2 = tmp_path / "c1.ckpt", tmp_path / "c2.ckpt"
        save_checkpoint(c1, ckpt)
        save_checkpoint(c2, load_checkpoint(c1))
        if c1.read_bytes() != c2.read_bytes():
            problems.append("checkpoint")
        corrupted = bytearray(c1.read_bytes())
        corrupted[-10] ^= 0x10
        (tmp_path / "c3.ckpt").write_bytes(bytes(corrupted))
        try:
            load_checkpoint(tmp_path / "c3.ckpt")
            problems.append("checkpoint CRC not verified")
        except FormatError:
            pass

        verdict(9, "format round-trips with CRC", not problems, f"problems: {problems or 'none'}")


class TestCriterion10FullScaleShapes:
    def test_construction_and_count_ordering(self):
        counts = {}
        for width in (7, 14):
            for arch in ("baseline", "ma", "fa"):
                cfg = TrainConfig(
                    arch=arch, emb_dim=128, hidden_dim=256,
                    feat_channels=2048, feat_width=width,
                )
                params = init_params(parameter_specs(cfg, 5830, 6608), Rng(1))
                TranslationModel(cfg, params)  # construction must succeed
                counts[(arch, width)] = params.count_values()
        ordered = all(
            counts[("baseline", w)] < counts[("ma", w)] < counts[("fa", w)]
            for w in (7, 14)
        )
        verdict(
            10, "full-scale construction and parameter ordering",
            ordered,
            "counts "
            + ", ".join(f"{a}/w{w}={counts[(a, w)] / 1e6:.1f}M" for (a, w) in counts),
        )
