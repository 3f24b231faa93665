"""Experiment matrix: counts, resume-skip, report artifacts."""

import json
import os

import pytest

from mmt_micro.config import TrainConfig
from mmt_micro.data.synthetic import SynthSpec, generate_synthetic, write_dataset
from mmt_micro.matrix import matrix_threads, run_matrix


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("matrix") / "data"
    spec = SynthSpec(train_size=64, dev_size=16, test_size=16, seed=21)
    write_dataset(generate_synthetic(spec), out)
    return out


def micro_cfg():
    return TrainConfig(max_epochs=2, batch_size=32, emb_dim=10, hidden_dim=12, patience=10)


def test_matrix_counts_and_artifacts(data_dir, tmp_path):
    result = run_matrix(
        data_dir, tmp_path / "m", base_cfg=micro_cfg(),
        systems=("baseline", "fa"), seeds=(1, 2), beam=2, trials=200, threads=1,
    )
    assert len(result.run_dirs) == 4
    assert {s.name for s in result.report.systems} == {"baseline", "fa"}
    assert all(len(s.scores) == 2 for s in result.report.systems)
    assert list(result.report.pairwise_p) == [("baseline", "fa")]
    p = result.report.pairwise_p[("baseline", "fa")]
    assert 0.0 < p <= 1.0
    for name in ("report.tsv", "report.png", "curves.png"):
        assert (tmp_path / "m" / name).exists(), name
    for run_dir in result.run_dirs.values():
        assert (run_dir / "test.hyp").exists()
        assert (run_dir / "test.metrics").exists()
    # grounded accuracy aggregated per system
    assert len(result.accuracies["fa"]) == 2


def test_matrix_skips_completed_runs(data_dir, tmp_path):
    out = tmp_path / "m"
    run_matrix(data_dir, out, base_cfg=micro_cfg(), systems=("baseline",),
               seeds=(1,), beam=1, trials=200, threads=1)
    marker = out / "baseline" / "seed1" / "test.metrics"
    row = json.loads(marker.read_text())
    row["value"] = 77.7  # sentinel: rerun must not touch finished cells
    marker.write_text(json.dumps(row) + "\n")
    result = run_matrix(data_dir, out, base_cfg=micro_cfg(), systems=("baseline",),
                        seeds=(1,), beam=1, trials=200, threads=1)
    assert result.report.row("baseline").scores == [77.7]


def test_thread_cap_env(monkeypatch):
    monkeypatch.setenv("MMT_MICRO_THREADS", "1")
    assert matrix_threads(8) == 1
    monkeypatch.setenv("MMT_MICRO_THREADS", "16")
    assert matrix_threads(2) == 2
    monkeypatch.delenv("MMT_MICRO_THREADS")
    assert matrix_threads(3) == 3
