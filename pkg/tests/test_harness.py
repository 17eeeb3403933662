import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

import roadgrip.harness as harness
from roadgrip.cli import main as cli_main
from roadgrip.harness import (
    ExperimentConfig,
    HarnessError,
    cmd_evaluate,
    cmd_generate,
    config_as_dict,
    config_from_dict,
    load_config,
    load_corpus,
)
from roadgrip.learn import load_model
from roadgrip.report import cmd_report
from roadgrip.road import NORMAL_SCENARIOS
from roadgrip.summary import (
    FULL_FEATURE_NAMES,
    kinematic_feature_names,
    road_feature_names,
)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def manifest_of(out):
    return json.loads((Path(out) / "corpus" / "manifest.json").read_text())


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.scenarios == NORMAL_SCENARIOS
        assert cfg.runs_per_level == 100
        assert cfg.cv_folds == 8
        assert cfg.batch_sizes == (1, 10, 50, 100)
        assert len(cfg.mu_grid) == 11

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "exp.conf"
        path.write_text(
            "runs_per_level = 12\n"
            "seed = 99\n"
            "mu_grid = 0.2:0.4:0.05\n"
            "gbt.n_estimators = 40\n"
            "sfs.target_count = 5\n"
            "sweep.batch_sizes = 1, 5\n"
            "sweep.trials = 10\n"
            "extreme.runs_per_scenario = 9\n"
            "link.p_loss = 0.25\n",
            encoding="utf-8")
        cfg = load_config(path)
        assert cfg.runs_per_level == 12
        assert cfg.seed == 99
        assert cfg.mu_grid == (0.2, 0.25, 0.3, 0.35, 0.4)
        assert cfg.gbt.n_estimators == 40
        assert cfg.gbt.max_depth == 6
        assert cfg.sfs_target == 5
        assert cfg.batch_sizes == (1, 5)
        assert cfg.sweep_trials == 10
        assert cfg.extreme_runs_per_scenario == 9
        assert cfg.p_loss == 0.25

    def test_no_path_gives_defaults(self):
        assert load_config(None) == ExperimentConfig()

    def test_dict_round_trip(self):
        cfg = ExperimentConfig(runs_per_level=11, seed=3)
        assert config_from_dict(config_as_dict(cfg)) == cfg

    @pytest.mark.parametrize("raw", [
        {"bogus_key": 1},
        {"gbt": {"bogus": 2}},
        {"sweep": {"bogus": 2}},
        {"extreme": {"bogus": 2}},
        {"link": {"bogus": 2}},
        {"runs_per_level": 9},
        {"scenarios": ["no_such_road"]},
        {"test_fraction": 0.5},
        {"sweep": {"batch_sizes": [10, 1]}},
        {"link": {"p_loss": 1.0}},
    ])
    def test_rejects_bad_values(self, raw):
        with pytest.raises(HarnessError):
            config_from_dict(raw)


class TestGenerate:
    def test_corpus_shape(self, mini_cfg, mini_out):
        total = 0
        for name in mini_cfg.scenarios:
            header, rows = read_csv(Path(mini_out) / "corpus" / f"{name}.csv")
            assert tuple(header) == ("run_id", "scenario", "label") + FULL_FEATURE_NAMES
            # 10 runs per level, 11 levels
            assert len(rows) == 110
            assert all(r[1] == name for r in rows)
            total += len(rows)
        _, combined = read_csv(Path(mini_out) / "corpus" / "combined.csv")
        assert len(combined) == total == 440

    def test_manifest_fingerprints_match(self, mini_out):
        man = manifest_of(mini_out)
        assert man["schema"] == "corpus-v1"
        for fname, digest in man["fingerprints"].items():
            actual = harness._sha256(Path(mini_out) / "corpus" / fname)
            assert actual == digest

    def test_stratified_split(self, mini_cfg, mini_out):
        man = manifest_of(mini_out)
        for name in mini_cfg.scenarios:
            entry = man["scenarios"][name]
            mu_of = dict((rid, mu) for rid, mu in entry["rows"])
            train = entry["split"]["train"]
            test = entry["split"]["test"]
            assert not set(train) & set(test)
            assert len(train) + len(test) == entry["n_rows"]
            # one test run per level at 10 runs/level and 10% fraction
            per_level = {}
            for rid in test:
                per_level[mu_of[rid]] = per_level.get(mu_of[rid], 0) + 1
            assert all(n == 1 for n in per_level.values())
            assert len(per_level) == len(mini_cfg.mu_grid)

    def test_regenerate_is_byte_identical(self, mini_cfg, mini_out, tmp_path):
        cmd_generate(mini_cfg, tmp_path)
        assert manifest_of(tmp_path)["fingerprints"] == manifest_of(mini_out)["fingerprints"]

    def test_load_corpus_round_trip(self, mini_out):
        ds = load_corpus(Path(mini_out) / "corpus" / "combined.csv")
        assert ds.feature_names == FULL_FEATURE_NAMES
        assert len(ds.labels) == 440
        assert len(set(ds.run_ids)) == 440
        assert np.all(ds.labels >= 0.05) and np.all(ds.labels <= 1.2)
        assert np.all(np.isfinite(ds.features))

    def test_flagged_levels_warn_and_stay_short(self, monkeypatch, tmp_path):
        # force control loss on every mu=0.2 run: the level must drain, warn
        # about the flag fraction, and record every skipped run
        cfg = ExperimentConfig(scenarios=("sharp_turn",), runs_per_level=10, seed=7)
        real = harness.simulate_batch

        def lossy(section, vp, cfgs, **kw):
            pairs = real(section, vp, cfgs, **kw)
            for cfg_i, (log, _) in zip(cfgs, pairs):
                if cfg_i.mu_base == 0.2:
                    log.control_loss = True
            return pairs

        monkeypatch.setattr(harness, "simulate_batch", lossy)
        cmd_generate(cfg, tmp_path)
        entry = manifest_of(tmp_path)["scenarios"]["sharp_turn"]
        assert entry["n_rows"] == 100
        assert all(mu != 0.2 for _, mu in entry["rows"])
        assert any("mu=0.2" in w and "20%" in w for w in entry["warnings"])
        assert any("mu=0.2" in w and "retries" in w for w in entry["warnings"])
        assert len(entry["flagged"]) >= 10
        assert all(f["flags"] == "control_loss" for f in entry["flagged"])


class TestTrain:
    def test_model_inventory(self, mini_cfg, mini_out):
        models = Path(mini_out) / "models"
        expected = {"global_full", "global_no_sideslip", "global_no_speed"}
        expected |= {f"local_{n}" for n in mini_cfg.scenarios}
        assert {p.stem for p in models.glob("*.json")} - {"train_summary"} == expected

    def test_feature_lists_by_mode(self, mini_out):
        models = Path(mini_out) / "models"
        glob_full = load_model(models / "global_full.json")
        assert glob_full.feature_names == FULL_FEATURE_NAMES
        local = load_model(models / "local_sharp_turn.json")
        assert len(local.feature_names) == 55
        assert not set(local.feature_names) & set(road_feature_names())
        no_speed = load_model(models / "global_no_speed.json")
        assert not any(n.startswith("speed_") for n in no_speed.feature_names)
        no_ss = load_model(models / "global_no_sideslip.json")
        assert not any(n.startswith("sideslip") for n in no_ss.feature_names)

    def test_models_carry_corpus_digest(self, mini_out):
        digest = manifest_of(mini_out)["fingerprints"]["combined.csv"]
        for path in (Path(mini_out) / "models").glob("*.json"):
            if path.stem == "train_summary":
                continue
            assert json.loads(path.read_text())["corpus_digest"] == digest

    def test_cv_report_shape(self, mini_cfg, mini_out):
        header, rows = read_csv(Path(mini_out) / "models" / "cv_report.csv")
        assert header == ["model", "fold", "mape_pct"]
        # 8 folds for the global model and each local model
        assert len(rows) == 8 * (1 + len(mini_cfg.scenarios))
        assert all(float(r[2]) > 0 for r in rows)


class TestEvaluate:
    def test_report_shape(self, mini_cfg, mini_out):
        rep = json.loads((Path(mini_out) / "eval" / "evaluation.json").read_text())
        assert set(rep["global"]["per_scenario"]) == set(mini_cfg.scenarios)
        assert set(rep["local"]["per_scenario"]) == set(mini_cfg.scenarios)
        assert rep["n_test"] == 44
        assert abs(rep["residual_mean"]) <= 0.01
        header, rows = read_csv(Path(mini_out) / "eval" / "scatter.csv")
        assert header == ["run_id", "scenario", "label", "prediction", "residual"]
        assert len(rows) == rep["n_test"]
        for _, _, label, pred, resid in rows:
            assert float(pred) - float(label) == pytest.approx(float(resid))

    def test_ablation_block(self, mini_out):
        rep = json.loads((Path(mini_out) / "eval" / "evaluation.json").read_text())
        assert set(rep["ablations"]) == {"full", "no_sideslip", "no_speed"}
        assert rep["ablations"]["full"] == rep["global"]["combined_mape"]

    def test_tampered_corpus_aborts(self, mini_cfg, mini_out, tmp_path):
        work = tmp_path / "tampered"
        shutil.copytree(mini_out, work)
        target = work / "corpus" / "s_turn.csv"
        target.write_text(target.read_text().replace("0.2", "0.3", 1))
        with pytest.raises(HarnessError, match="fingerprint"):
            cmd_evaluate(mini_cfg, work)

    def test_split_leakage_aborts(self, mini_cfg, mini_out, tmp_path):
        work = tmp_path / "leaky"
        shutil.copytree(mini_out, work)
        man_path = work / "corpus" / "manifest.json"
        man = json.loads(man_path.read_text())
        split = man["scenarios"]["s_turn"]["split"]
        split["train"].append(split["test"][0])
        man_path.write_text(json.dumps(man))
        # manifest edits also break its own fingerprint story, so recompute
        man["fingerprints"] = {
            f: harness._sha256(work / "corpus" / f) for f in man["fingerprints"]}
        man_path.write_text(json.dumps(man))
        with pytest.raises(HarnessError, match="leakage"):
            cmd_evaluate(mini_cfg, work)


class TestSweep:
    def test_curve_shape(self, mini_cfg, mini_out):
        header, rows = read_csv(Path(mini_out) / "sweep" / "batch_sweep.csv")
        assert header == ["mu", "batch", "median_err_pct"]
        assert len(rows) == len(mini_cfg.mu_grid) * len(mini_cfg.batch_sizes)
        assert all(float(r[2]) >= 0 for r in rows)

    def test_batch_one_is_individual_error(self, mini_out):
        # a batch of one vehicle is one estimate: every trial error must equal
        # some test row's own error at that level
        _, scatter = read_csv(Path(mini_out) / "eval" / "scatter.csv")
        man = manifest_of(mini_out)
        mu_of = {}
        for entry in man["scenarios"].values():
            mu_of.update(dict((rid, mu) for rid, mu in entry["rows"]))
        row_errs = {}
        for run_id, _, _, pred, _ in scatter:
            mu = mu_of[run_id]
            target = 0.9 * mu
            row_errs.setdefault(mu, []).append(
                abs(float(pred) - target) / target * 100.0)
        _, trials = read_csv(Path(mini_out) / "sweep" / "batch_sweep_trials.csv")
        checked = 0
        for mu, batch, _, _, err in trials:
            if int(batch) != 1:
                continue
            gap = min(abs(float(err) - e) for e in row_errs[float(mu)])
            assert gap < 1e-9
            checked += 1
        assert checked > 0


class TestSfs:
    def test_outputs(self, mini_cfg, mini_out):
        header, rows = read_csv(Path(mini_out) / "sfs" / "sfs_path.csv")
        assert header == ["step", "feature", "cv_mape_pct"]
        assert len(rows) == mini_cfg.sfs_target
        picked = [r[1] for r in rows]
        assert len(set(picked)) == len(picked)
        assert set(picked) <= set(FULL_FEATURE_NAMES)
        summary = json.loads((Path(mini_out) / "sfs" / "sfs_summary.json").read_text())
        assert summary["selected"] == picked
        assert "prefix_3" in summary["cv_scores"]
        assert "all_features" in summary["cv_scores"]


class TestExtreme:
    def test_outputs(self, mini_cfg, mini_out):
        header, rows = read_csv(Path(mini_out) / "extreme" / "extreme_results.csv")
        assert header == ["run_id", "scenario", "mu_base", "label", "prediction",
                          "residual"]
        summary = json.loads(
            (Path(mini_out) / "extreme" / "extreme_summary.json").read_text())
        assert set(summary["per_scenario"]) == set(mini_cfg.extreme_scenarios)
        assert summary["kept_runs"] == len(rows)
        # predictions stay inside the clamp even far outside the training grid
        for r in rows:
            pred = float(r[4])
            assert np.isfinite(pred) and 0.05 <= pred <= 1.2


class TestReport:
    def test_figures_have_csv_twins(self, mini_out):
        rep = json.loads((Path(mini_out) / "report" / "report.json").read_text())
        assert rep["skipped"] == []
        for entry in rep["figures"].values():
            assert (Path(mini_out) / "report" / entry["svg"]).exists()
            assert (Path(mini_out) / "report" / entry["csv"]).exists()

    def test_twin_values_match_sources(self, mini_out):
        # the scatter twin is the evaluation scatter verbatim; the MAPE twin
        # restates evaluation.json exactly
        eval_scatter = (Path(mini_out) / "eval" / "scatter.csv").read_text()
        twin = (Path(mini_out) / "report" / "scatter_global.csv").read_text()
        assert twin == eval_scatter
        rep = json.loads((Path(mini_out) / "eval" / "evaluation.json").read_text())
        _, rows = read_csv(Path(mini_out) / "report" / "mape_by_scenario.csv")
        for name, g, loc in rows:
            if name == "combined":
                assert float(g) == rep["global"]["combined_mape"]
                assert loc == ""
            else:
                assert float(g) == rep["global"]["per_scenario"][name]
                assert float(loc) == rep["local"]["per_scenario"][name]

    def test_requires_evaluation(self, mini_cfg, tmp_path):
        with pytest.raises(HarnessError, match="evaluate"):
            cmd_report(mini_cfg, tmp_path)


class TestCli:
    def test_missing_config_file_exits_2(self, tmp_path):
        result = CliRunner().invoke(
            cli_main, ["generate", "--config", str(tmp_path / "nope.conf"),
                       "--out", str(tmp_path)])
        assert result.exit_code == 2

    def test_invalid_config_value_exits_2(self, tmp_path):
        bad = tmp_path / "bad.conf"
        bad.write_text("runs_per_level = 3\n", encoding="utf-8")
        result = CliRunner().invoke(
            cli_main, ["generate", "--config", str(bad), "--out", str(tmp_path)])
        assert result.exit_code == 2
        assert "error:" in result.output

    def test_report_without_evaluate_exits_2(self, tmp_path):
        result = CliRunner().invoke(cli_main, ["report", "--out", str(tmp_path)])
        assert result.exit_code == 2

    def test_report_success_exits_0(self, mini_config_file, mini_out):
        result = CliRunner().invoke(
            cli_main, ["report", "--config", str(mini_config_file),
                       "--out", str(mini_out)])
        assert result.exit_code == 0
        assert "figures" in result.output
