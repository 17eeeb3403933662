"""Session fixtures for the pipeline tests.

Two corpora back the suite: a mini corpus (10 runs per level) that keeps the
harness unit tests cheap, and the desk-scale corpus (100 runs per level) that
the acceptance tests score against. Both are built once per session.
"""
import json
import time
from pathlib import Path

import pytest

from roadgrip.harness import (
    ExperimentConfig,
    cmd_evaluate,
    cmd_extreme,
    cmd_generate,
    cmd_sfs,
    cmd_sweep_batches,
    cmd_train,
    load_config,
)
from roadgrip.report import cmd_report

MINI_KV = """\
# mini pipeline: floor-sized corpus, trimmed sweep/sfs/extreme stages
runs_per_level = 10
seed = 11
sweep.trials = 60
sweep.batch_sizes = 1, 10, 50
sfs.target_count = 3
sfs.n_folds = 2
sfs.max_rows = 150
extreme.runs_per_scenario = 9
"""


@pytest.fixture(scope="session")
def mini_config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "mini.conf"
    path.write_text(MINI_KV, encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def mini_cfg(mini_config_file):
    return load_config(mini_config_file)


@pytest.fixture(scope="session")
def mini_out(mini_cfg, tmp_path_factory):
    """Every pipeline stage run once on the mini corpus."""
    out = tmp_path_factory.mktemp("mini_out")
    cmd_generate(mini_cfg, out)
    cmd_train(mini_cfg, out)
    cmd_evaluate(mini_cfg, out)
    cmd_sweep_batches(mini_cfg, out)
    cmd_sfs(mini_cfg, out)
    cmd_extreme(mini_cfg, out)
    cmd_report(mini_cfg, out)
    return out


@pytest.fixture(scope="session")
def desk_cfg():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def desk_out(desk_cfg, tmp_path_factory):
    """Desk-scale generate + train + evaluate, wall-clock timed as one pipeline."""
    out = tmp_path_factory.mktemp("desk_out")
    t0 = time.monotonic()
    cmd_generate(desk_cfg, out)
    cmd_train(desk_cfg, out)
    cmd_evaluate(desk_cfg, out)
    elapsed = time.monotonic() - t0
    (Path(out) / "pipeline_timing.json").write_text(
        json.dumps({"generate_train_evaluate_s": elapsed}), encoding="utf-8")
    return out


@pytest.fixture(scope="session")
def desk_sweep(desk_cfg, desk_out):
    cmd_sweep_batches(desk_cfg, desk_out)
    return json.loads(
        (Path(desk_out) / "sweep" / "sweep_summary.json").read_text())


@pytest.fixture(scope="session")
def desk_sfs(desk_cfg, desk_out):
    cmd_sfs(desk_cfg, desk_out)
    return json.loads(
        (Path(desk_out) / "sfs" / "sfs_summary.json").read_text())


@pytest.fixture(scope="session")
def desk_extreme(desk_cfg, desk_out):
    cmd_extreme(desk_cfg, desk_out)
    return json.loads(
        (Path(desk_out) / "extreme" / "extreme_summary.json").read_text())
