"""Experiment pipeline behind the CLI.

Each command reads and writes beneath one output directory:

    out/corpus/   per-scenario CSVs, combined.csv, manifest.json
    out/models/   trained regressors (JSON) plus cv_report.csv
    out/eval/     held-out evaluation numbers, scatter data, core figures
    out/sweep/    consensus batch-size sweep
    out/sfs/      sequential feature selection path and scores
    out/extreme/  extreme-manoeuvre generalization study

Every random draw is derived from the one config seed plus a fixed scope
tag, so rerunning a command with the same config reproduces its outputs
byte for byte. The corpus manifest carries sha256 fingerprints and the
train/test split; train and evaluate refuse corpora that do not match.
"""

from __future__ import annotations

import csv
import hashlib
import json
import zlib
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import parse_kv_file
from .learn import (
    DEFAULT_PARAMS,
    Dataset,
    GbtModel,
    GbtParams,
    SFS_PARAMS,
    kfold_cv,
    load_model,
    mape,
    save_model,
    sequential_feature_selection,
    train_gbt,
)
from .observer import estimate_states_batch
from .road import EXTREME_SCENARIOS, NORMAL_SCENARIOS, build_scenario, scenario_spec
from .rsu import ConsensusWindow, consensus
from .summary import (
    FULL_FEATURE_NAMES,
    kinematic_feature_names,
    road_feature_names,
    trace_features,
)
from .vehsim import (
    EXTREME_DRIVER,
    EXTREME_MU_GRID,
    MU_GRID,
    NORMAL_DRIVER,
    RunConfig,
    VehicleParams,
    sample_run_configs,
    simulate_batch,
)


class HarnessError(ValueError):
    pass


_MAX_RETRY_ROUNDS = 4
_ABLATION_DROPS = {"no_sideslip": ("sideslip", "sideslip_rate"),
                   "no_speed": ("speed",)}


@dataclass(frozen=True)
class ExperimentConfig:
    """Desk-scale defaults; every field can be overridden from a config file."""

    scenarios: tuple[str, ...] = NORMAL_SCENARIOS
    runs_per_level: int = 100
    mu_grid: tuple[float, ...] = MU_GRID
    seed: int = 20608
    test_fraction: float = 0.1
    cv_folds: int = 8
    gbt: GbtParams = DEFAULT_PARAMS
    sfs_target: int = 15
    sfs_folds: int = 3
    sfs_max_rows: int = 1500
    sfs_params: GbtParams = SFS_PARAMS
    batch_sizes: tuple[int, ...] = (1, 10, 50, 100)
    sweep_trials: int = 300
    extreme_scenarios: tuple[str, ...] = EXTREME_SCENARIOS
    extreme_runs_per_scenario: int = 90
    extreme_mu_grid: tuple[float, ...] = EXTREME_MU_GRID
    p_loss: float = 0.0
    latency_ms: float = 20.0
    jitter_ms: float = 0.0

    def __post_init__(self):
        if self.runs_per_level < 10:
            raise HarnessError("runs_per_level must be at least 10")
        if not self.scenarios:
            raise HarnessError("need at least one scenario")
        for name in tuple(self.scenarios) + tuple(self.extreme_scenarios):
            try:
                scenario_spec(name)
            except KeyError as exc:
                raise HarnessError(str(exc)) from None
        if not 0.0 < self.test_fraction <= 0.3:
            raise HarnessError("test_fraction must be in (0, 0.3]")
        if self.cv_folds < 2:
            raise HarnessError("cv_folds must be at least 2")
        if not self.mu_grid or not self.extreme_mu_grid:
            raise HarnessError("friction grids must be non-empty")
        if list(self.batch_sizes) != sorted(set(self.batch_sizes)) or min(self.batch_sizes) < 1:
            raise HarnessError("batch_sizes must be ascending positive integers")
        if self.sweep_trials < 1 or self.extreme_runs_per_scenario < len(self.extreme_mu_grid):
            raise HarnessError("sweep_trials and extreme runs must be positive")
        if not 1 <= self.sfs_target <= len(FULL_FEATURE_NAMES):
            raise HarnessError("sfs_target out of range")
        if self.sfs_folds < 2 or self.sfs_max_rows < 40:
            raise HarnessError("sfs_folds must be >= 2 and sfs_max_rows >= 40")
        if not 0.0 <= self.p_loss < 1.0:
            raise HarnessError("p_loss must be in [0, 1)")


def _as_tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return (value,)


def _round_grid(values):
    return tuple(round(float(v), 10) for v in _as_tuple(values))


_TOP_KEYS = {"scenarios", "runs_per_level", "mu_grid", "seed", "test_fraction",
             "cv_folds", "gbt", "sfs", "sweep", "extreme", "link"}


def config_from_dict(raw: dict) -> ExperimentConfig:
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise HarnessError(f"unknown config keys: {sorted(unknown)}")
    kw: dict = {}
    if "scenarios" in raw:
        kw["scenarios"] = tuple(str(s) for s in _as_tuple(raw["scenarios"]))
    for key in ("runs_per_level", "seed", "cv_folds"):
        if key in raw:
            kw[key] = int(raw[key])
    if "test_fraction" in raw:
        kw["test_fraction"] = float(raw["test_fraction"])
    if "mu_grid" in raw:
        kw["mu_grid"] = _round_grid(raw["mu_grid"])

    gbt = dict(raw.get("gbt", {}))
    if gbt:
        base = ExperimentConfig.__dataclass_fields__["gbt"].default
        unknown = [k for k in gbt if not hasattr(base, k)]
        if unknown:
            raise HarnessError(f"unknown gbt keys: {sorted(unknown)}")
        kw["gbt"] = replace(base, **{k: type(getattr(base, k))(v)
                                     for k, v in gbt.items()})

    sfs = dict(raw.get("sfs", {}))
    if sfs:
        kw["sfs_target"] = int(sfs.pop("target_count", ExperimentConfig.sfs_target))
        kw["sfs_folds"] = int(sfs.pop("n_folds", ExperimentConfig.sfs_folds))
        kw["sfs_max_rows"] = int(sfs.pop("max_rows", ExperimentConfig.sfs_max_rows))
        if sfs:
            base = ExperimentConfig.__dataclass_fields__["sfs_params"].default
            kw["sfs_params"] = replace(base, **{k: type(getattr(base, k))(v)
                                                for k, v in sfs.items()})

    sweep = dict(raw.get("sweep", {}))
    if "batch_sizes" in sweep:
        kw["batch_sizes"] = tuple(int(b) for b in _as_tuple(sweep.pop("batch_sizes")))
    if "trials" in sweep:
        kw["sweep_trials"] = int(sweep.pop("trials"))
    if sweep:
        raise HarnessError(f"unknown sweep keys: {sorted(sweep)}")

    extreme = dict(raw.get("extreme", {}))
    if "scenarios" in extreme:
        kw["extreme_scenarios"] = tuple(str(s) for s in _as_tuple(extreme.pop("scenarios")))
    if "runs_per_scenario" in extreme:
        kw["extreme_runs_per_scenario"] = int(extreme.pop("runs_per_scenario"))
    if "mu_grid" in extreme:
        kw["extreme_mu_grid"] = _round_grid(extreme.pop("mu_grid"))
    if extreme:
        raise HarnessError(f"unknown extreme keys: {sorted(extreme)}")

    link = dict(raw.get("link", {}))
    for src, dst in (("p_loss", "p_loss"), ("latency_ms", "latency_ms"),
                     ("jitter_ms", "jitter_ms")):
        if src in link:
            kw[dst] = float(link.pop(src))
    if link:
        raise HarnessError(f"unknown link keys: {sorted(link)}")

    try:
        return ExperimentConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise HarnessError(str(exc)) from exc


def load_config(path=None) -> ExperimentConfig:
    """Build the config from a key = value file; defaults when path is None."""
    if path is None:
        return ExperimentConfig()
    return config_from_dict(parse_kv_file(path))


def config_as_dict(cfg: ExperimentConfig) -> dict:
    return {
        "scenarios": list(cfg.scenarios),
        "runs_per_level": cfg.runs_per_level,
        "mu_grid": list(cfg.mu_grid),
        "seed": cfg.seed,
        "test_fraction": cfg.test_fraction,
        "cv_folds": cfg.cv_folds,
        "gbt": {"n_estimators": cfg.gbt.n_estimators, "max_depth": cfg.gbt.max_depth,
                "learning_rate": cfg.gbt.learning_rate,
                "min_samples_leaf": cfg.gbt.min_samples_leaf},
        "sfs": {"target_count": cfg.sfs_target, "n_folds": cfg.sfs_folds,
                "max_rows": cfg.sfs_max_rows,
                "n_estimators": cfg.sfs_params.n_estimators,
                "max_depth": cfg.sfs_params.max_depth},
        "sweep": {"batch_sizes": list(cfg.batch_sizes), "trials": cfg.sweep_trials},
        "extreme": {"scenarios": list(cfg.extreme_scenarios),
                    "runs_per_scenario": cfg.extreme_runs_per_scenario,
                    "mu_grid": list(cfg.extreme_mu_grid)},
        "link": {"p_loss": cfg.p_loss, "latency_ms": cfg.latency_ms,
                 "jitter_ms": cfg.jitter_ms},
    }


# --- seeding ----------------------------------------------------------------

def _rng(seed: int, *scope) -> np.random.Generator:
    tags = [zlib.crc32(str(part).encode()) for part in scope]
    return np.random.default_rng([int(seed), *tags])


def _seed_int(seed: int, *scope) -> int:
    return int(_rng(seed, *scope).integers(0, 2**63))


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path: Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


# --- corpus generation --------------------------------------------------------

def _flag_names(trace) -> str:
    names = [n for n in ("diverged", "low_speed", "control_loss")
             if getattr(trace, n)]
    return "+".join(names)


def _replacement_configs(spec, mu: float, count: int, grid, rng,
                         prefix: str, driver) -> list[RunConfig]:
    # same draw recipe as sample_run_configs, restricted to one grid level
    rated = spec.rated_speed_kph
    out = []
    for i in range(count):
        wear = float(rng.uniform(0.8, 1.0))
        speed = float(rng.triangular(0.8 * rated, rated, 1.2 * rated))
        run_seed = int(rng.integers(0, 2**63))
        mu_secondary = None
        if spec.friction_zone_splits:
            higher = [g for g in grid if g > mu + 1e-9]
            mu_secondary = float(rng.choice(higher)) if higher else mu
        style = replace(
            driver,
            lat_budget_frac=min(0.97, driver.lat_budget_frac
                                * float(rng.uniform(0.79, 1.21))),
            heading_gain=driver.heading_gain * float(rng.uniform(0.85, 1.25)),
            cross_gain=driver.cross_gain * float(rng.uniform(0.75, 1.25)),
            preview_time_s=driver.preview_time_s * float(rng.uniform(0.8, 1.2)),
        )
        out.append(RunConfig(
            run_id=f"{prefix}-{i:05d}", scenario=spec.name, mu_base=mu,
            wear_factor=wear, target_speed_kph=speed, seed=run_seed,
            mu_secondary=mu_secondary, driver=style))
    return out


def _generate_scenario(cfg: ExperimentConfig, name: str, vp: VehicleParams):
    """Simulate one scenario's corpus; flagged runs are skipped, recorded, and
    replaced by fresh draws at the same level so every level stays full."""
    spec = scenario_spec(name)
    section = build_scenario(spec)
    grid = cfg.mu_grid
    pending = sample_run_configs(
        name, cfg.runs_per_level * len(grid),
        seed=_seed_int(cfg.seed, "corpus", name), mu_grid=grid)
    rows = []
    flagged = []
    attempts: Counter = Counter()
    losses: Counter = Counter()
    round_no = 0
    while pending:
        pairs = simulate_batch(section, vp, pending)
        traces = estimate_states_batch([log for log, _ in pairs], section, vp)
        short: Counter = Counter()
        for run_cfg, (_, truth), trace in zip(pending, pairs, traces):
            attempts[run_cfg.mu_base] += 1
            if trace.flagged:
                losses[run_cfg.mu_base] += 1
                short[run_cfg.mu_base] += 1
                flagged.append({"run_id": run_cfg.run_id,
                                "mu_base": run_cfg.mu_base,
                                "flags": _flag_names(trace)})
                continue
            values = trace_features(trace, section).values
            rows.append((run_cfg.run_id, name, run_cfg.mu_base,
                         float(truth.mu_label), values))
        round_no += 1
        pending = []
        if short and round_no < _MAX_RETRY_ROUNDS:
            rng = _rng(cfg.seed, "corpus", name, "retry", round_no)
            for mu in sorted(short):
                prefix = f"{name}-r{round_no}-{int(round(mu * 100)):03d}"
                pending.extend(_replacement_configs(
                    spec, mu, short[mu], grid, rng, prefix, NORMAL_DRIVER))
    rows.sort(key=lambda r: (r[2], r[0]))

    warnings = []
    per_level = Counter(r[2] for r in rows)
    for mu in grid:
        if attempts[mu] and losses[mu] / attempts[mu] > 0.2:
            warnings.append(
                f"flagged-run fraction {losses[mu] / attempts[mu]:.2f} "
                f"at mu={mu} exceeds 20%")
        if per_level[mu] < cfg.runs_per_level:
            warnings.append(
                f"level mu={mu} kept only {per_level[mu]} of "
                f"{cfg.runs_per_level} runs after retries")
    return rows, flagged, warnings


def _stratified_test_ids(rows, frac: float, rng) -> list[str]:
    by_level: dict[float, list[str]] = {}
    for run_id, _, mu, _, _ in rows:
        by_level.setdefault(mu, []).append(run_id)
    test = []
    for mu in sorted(by_level):
        ids = by_level[mu]
        n_test = max(1, int(round(frac * len(ids))))
        picks = rng.choice(len(ids), size=n_test, replace=False)
        test.extend(ids[i] for i in sorted(picks))
    return test


def _write_corpus_csv(path: Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("run_id", "scenario", "label") + FULL_FEATURE_NAMES)
        for run_id, scenario, _, label, values in rows:
            writer.writerow([run_id, scenario, repr(float(label))]
                            + [repr(float(v)) for v in values])


def cmd_generate(cfg: ExperimentConfig, out: Path) -> dict:
    """Simulate the corpus: per-scenario CSVs, combined.csv, manifest."""
    corpus_dir = Path(out) / "corpus"
    corpus_dir.mkdir(parents=True, exist_ok=True)
    vp = VehicleParams()
    manifest: dict = {"schema": "corpus-v1", "seed": cfg.seed,
                      "config": config_as_dict(cfg),
                      "scenario_order": list(cfg.scenarios),
                      "scenarios": {}, "fingerprints": {}}
    all_rows = []
    summary = {}
    for name in cfg.scenarios:
        rows, flagged, warnings = _generate_scenario(cfg, name, vp)
        split_rng = _rng(cfg.seed, "split", name)
        test_ids = _stratified_test_ids(rows, cfg.test_fraction, split_rng)
        test_set = set(test_ids)
        train_ids = [r[0] for r in rows if r[0] not in test_set]
        csv_name = f"{name}.csv"
        _write_corpus_csv(corpus_dir / csv_name, rows)
        manifest["scenarios"][name] = {
            "csv": csv_name,
            "n_rows": len(rows),
            "rows": [[r[0], r[2]] for r in rows],
            "flagged": flagged,
            "warnings": warnings,
            "split": {"train": train_ids, "test": test_ids},
        }
        all_rows.extend(rows)
        summary[name] = {"rows": len(rows), "flagged": len(flagged),
                         "warnings": warnings}
    _write_corpus_csv(corpus_dir / "combined.csv", all_rows)
    manifest["combined_csv"] = "combined.csv"
    for name in cfg.scenarios:
        fname = f"{name}.csv"
        manifest["fingerprints"][fname] = _sha256(corpus_dir / fname)
    manifest["fingerprints"]["combined.csv"] = _sha256(corpus_dir / "combined.csv")
    _write_json(corpus_dir / "manifest.json", manifest)
    return {"corpus_dir": str(corpus_dir), "combined_rows": len(all_rows),
            "scenarios": summary}


# --- corpus loading -----------------------------------------------------------

def load_corpus(path) -> Dataset:
    """Read a corpus CSV back into a Dataset."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["run_id", "scenario", "label"]:
            raise HarnessError(f"{path}: not a corpus CSV")
        names = tuple(header[3:])
        run_ids, scenarios, labels, feats = [], [], [], []
        for row in reader:
            if len(row) != 3 + len(names):
                raise HarnessError(f"{path}: ragged row for {row[:1]}")
            run_ids.append(row[0])
            scenarios.append(row[1])
            labels.append(float(row[2]))
            feats.append([float(v) for v in row[3:]])
    return Dataset(np.array(feats), np.array(labels), names,
                   run_ids=tuple(run_ids), scenarios=tuple(scenarios))


def _load_manifest(out: Path) -> dict:
    path = Path(out) / "corpus" / "manifest.json"
    if not path.exists():
        raise HarnessError(f"no corpus manifest at {path}; run generate first")
    return json.loads(path.read_text(encoding="utf-8"))


def _verify_fingerprints(out: Path, manifest: dict) -> None:
    corpus_dir = Path(out) / "corpus"
    for fname, digest in manifest["fingerprints"].items():
        actual = _sha256(corpus_dir / fname)
        if actual != digest:
            raise HarnessError(
                f"corpus file {fname} does not match its manifest fingerprint")


def _split_ids(manifest: dict):
    train, test = [], []
    for name in manifest["scenario_order"]:
        split = manifest["scenarios"][name]["split"]
        train.extend(split["train"])
        test.extend(split["test"])
    overlap = set(train) & set(test)
    if overlap:
        raise HarnessError(f"train/test leakage: {sorted(overlap)[:3]}")
    return train, test


def _rows_for(ds: Dataset, ids) -> Dataset:
    index = {rid: i for i, rid in enumerate(ds.run_ids)}
    missing = [rid for rid in ids if rid not in index]
    if missing:
        raise HarnessError(f"corpus is missing runs from the manifest: {missing[:3]}")
    return ds.take([index[rid] for rid in ids])


# --- training -------------------------------------------------------------

def _shuffled(ds: Dataset, seed: int, *scope) -> Dataset:
    return ds.take(_rng(seed, *scope).permutation(len(ds.labels)))


def cmd_train(cfg: ExperimentConfig, out: Path) -> dict:
    """Global, per-scenario local, and ablation regressors + k-fold CV table."""
    manifest = _load_manifest(out)
    _verify_fingerprints(out, manifest)
    models_dir = Path(out) / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    combined = load_corpus(Path(out) / "corpus" / "combined.csv")
    digest = manifest["fingerprints"]["combined.csv"]
    train_ids, _ = _split_ids(manifest)
    train_ds = _rows_for(combined, train_ids)

    cv_rows = []
    info = {}

    def fit(tag: str, ds: Dataset, run_cv: bool) -> GbtModel:
        model = train_gbt(ds, cfg.gbt, corpus_digest=digest)
        save_model(model, models_dir / f"{tag}.json")
        entry = {"rows": int(len(ds.labels)), "features": len(ds.feature_names),
                 "final_training_mse": float(model.training_mse[-1])}
        if run_cv:
            scores = kfold_cv(ds, n_folds=cfg.cv_folds, params=cfg.gbt)
            cv_rows.extend((tag, i, s) for i, s in enumerate(scores))
            entry["cv_mean_mape"] = float(np.mean(scores))
        info[tag] = entry
        return model

    fit("global_full", _shuffled(train_ds, cfg.seed, "cv-shuffle"), run_cv=True)

    kin_names = kinematic_feature_names()
    for scenario in cfg.scenarios:
        rows = [i for i, s in enumerate(train_ds.scenarios) if s == scenario]
        local = train_ds.take(rows).select_features(kin_names)
        fit(f"local_{scenario}", _shuffled(local, cfg.seed, "cv-shuffle", scenario),
            run_cv=True)

    shuffled_full = _shuffled(train_ds, cfg.seed, "cv-shuffle")
    for ablation, drop in _ABLATION_DROPS.items():
        names = kinematic_feature_names(drop) + road_feature_names()
        fit(f"global_{ablation}", shuffled_full.select_features(names), run_cv=False)

    with open(models_dir / "cv_report.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("model", "fold", "mape_pct"))
        for tag, fold, score in cv_rows:
            writer.writerow((tag, fold, repr(float(score))))
    _write_json(models_dir / "train_summary.json",
                {"corpus_fingerprint": digest, "models": info})
    return {"models_dir": str(models_dir), "models": info}


# --- evaluation -----------------------------------------------------------

def _predict_on(model: GbtModel, ds: Dataset) -> np.ndarray:
    return model.predict(ds.select_features(model.feature_names).features)


def _load_models(out: Path, cfg: ExperimentConfig) -> dict[str, GbtModel]:
    models_dir = Path(out) / "models"
    tags = (["global_full"]
            + [f"local_{s}" for s in cfg.scenarios]
            + [f"global_{a}" for a in _ABLATION_DROPS])
    models = {}
    for tag in tags:
        path = models_dir / f"{tag}.json"
        if not path.exists():
            raise HarnessError(f"missing model file {path}; run train first")
        models[tag] = load_model(path)
    return models


def cmd_evaluate(cfg: ExperimentConfig, out: Path) -> dict:
    """Held-out MAPE per scenario for local and global models + scatter data."""
    manifest = _load_manifest(out)
    _verify_fingerprints(out, manifest)
    eval_dir = Path(out) / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    combined = load_corpus(Path(out) / "corpus" / "combined.csv")
    digest = manifest["fingerprints"]["combined.csv"]
    _, test_ids = _split_ids(manifest)
    test_ds = _rows_for(combined, test_ids)

    models = _load_models(out, cfg)
    for tag, model in models.items():
        if model.corpus_digest != digest:
            raise HarnessError(
                f"model {tag} was trained on a different corpus fingerprint")

    global_model = models["global_full"]
    preds = _predict_on(global_model, test_ds)
    labels = test_ds.labels
    residuals = preds - labels

    per_scenario_global = {}
    per_scenario_local = {}
    for scenario in cfg.scenarios:
        rows = [i for i, s in enumerate(test_ds.scenarios) if s == scenario]
        sub = test_ds.take(rows)
        per_scenario_global[scenario] = mape(sub.labels, preds[rows])
        local_preds = _predict_on(models[f"local_{scenario}"], sub)
        per_scenario_local[scenario] = mape(sub.labels, local_preds)

    ablation_mape = {"full": mape(labels, preds)}
    for ablation in _ABLATION_DROPS:
        ablation_mape[ablation] = mape(
            labels, _predict_on(models[f"global_{ablation}"], test_ds))

    with open(eval_dir / "scatter.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("run_id", "scenario", "label", "prediction", "residual"))
        for i, rid in enumerate(test_ds.run_ids):
            writer.writerow((rid, test_ds.scenarios[i], repr(float(labels[i])),
                             repr(float(preds[i])), repr(float(residuals[i]))))

    with open(eval_dir / "mape.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("scenario", "global_mape_pct", "local_mape_pct"))
        for scenario in cfg.scenarios:
            writer.writerow((scenario, repr(per_scenario_global[scenario]),
                             repr(per_scenario_local[scenario])))
        writer.writerow(("combined", repr(ablation_mape["full"]), ""))

    report = {
        "corpus_fingerprint": digest,
        "n_test": int(len(labels)),
        "global": {"combined_mape": ablation_mape["full"],
                   "per_scenario": per_scenario_global},
        "local": {"per_scenario": per_scenario_local},
        "local_minus_global_pp": {
            s: per_scenario_local[s] - per_scenario_global[s]
            for s in cfg.scenarios},
        "ablations": ablation_mape,
        "residual_mean": float(np.mean(residuals)),
    }
    _write_json(eval_dir / "evaluation.json", report)

    from .report import evaluation_figures
    evaluation_figures(eval_dir, cfg)
    return report


# --- consensus batch sweep --------------------------------------------------

def cmd_sweep_batches(cfg: ExperimentConfig, out: Path) -> dict:
    """Resample held-out estimates into batches and measure consensus error.

    The per-trial error is |midpoint - 0.9 mu| / (0.9 mu): the interval
    midpoint should land on 0.9 mu because labels are wear * mu with
    wear ~ U[0.8, 1].
    """
    manifest = _load_manifest(out)
    _verify_fingerprints(out, manifest)
    sweep_dir = Path(out) / "sweep"
    sweep_dir.mkdir(parents=True, exist_ok=True)
    combined = load_corpus(Path(out) / "corpus" / "combined.csv")
    digest = manifest["fingerprints"]["combined.csv"]
    _, test_ids = _split_ids(manifest)
    test_ds = _rows_for(combined, test_ids)

    model = load_model(Path(out) / "models" / "global_full.json")
    if model.corpus_digest != digest:
        raise HarnessError("global model fingerprint does not match the corpus")
    preds = _predict_on(model, test_ds)

    mu_of = {}
    for name in manifest["scenario_order"]:
        for run_id, mu in manifest["scenarios"][name]["rows"]:
            mu_of[run_id] = float(mu)
    levels = sorted({mu_of[rid] for rid in test_ds.run_ids})

    trial_rows = []
    medians: dict[tuple[float, int], float] = {}
    for mu in levels:
        pool = preds[[i for i, rid in enumerate(test_ds.run_ids)
                      if mu_of[rid] == mu]]
        if len(pool) == 0:
            continue
        target = 0.9 * mu
        for batch in cfg.batch_sizes:
            rng = _rng(cfg.seed, "sweep", mu, batch)
            errs = np.empty(cfg.sweep_trials)
            for t in range(cfg.sweep_trials):
                draw = pool[rng.integers(0, len(pool), size=batch)]
                window = ConsensusWindow()
                for k, est in enumerate(draw):
                    window.add(float(k), float(est))
                interval = consensus(window, now=float(batch), min_batch=1)
                err = abs(interval.midpoint - target) / target * 100.0
                errs[t] = err
                trial_rows.append((mu, batch, t, interval.midpoint, err))
            medians[(mu, batch)] = float(np.median(errs))

    with open(sweep_dir / "batch_sweep_trials.csv", "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("mu", "batch", "trial", "midpoint", "err_pct"))
        for mu, batch, t, mid, err in trial_rows:
            writer.writerow((repr(mu), batch, t, repr(float(mid)), repr(float(err))))

    with open(sweep_dir / "batch_sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("mu", "batch", "median_err_pct"))
        for (mu, batch), med in sorted(medians.items()):
            writer.writerow((repr(mu), batch, repr(med)))

    monotone = all(
        all(medians[(mu, a)] >= medians[(mu, b)] - 1e-12
            for a, b in zip(cfg.batch_sizes, cfg.batch_sizes[1:]))
        for mu in levels)
    worst_by_batch = {batch: max(medians[(mu, batch)] for mu in levels)
                      for batch in cfg.batch_sizes}
    summary = {"corpus_fingerprint": digest,
               "levels": levels,
               "batch_sizes": list(cfg.batch_sizes),
               "trials": cfg.sweep_trials,
               "monotone_per_level": bool(monotone),
               "worst_median_err_pct_by_batch": {
                   str(b): worst_by_batch[b] for b in cfg.batch_sizes}}
    _write_json(sweep_dir / "sweep_summary.json", summary)
    return summary


# --- sequential feature selection ------------------------------------------

def cmd_sfs(cfg: ExperimentConfig, out: Path) -> dict:
    """Greedy forward selection, then re-score key prefixes with full-protocol CV.

    Selection runs on a row-capped shuffle with the lighter SFS params so the
    candidate loop stays tractable; the reported prefix scores use the main
    GbtParams and cv_folds on the full training split.
    """
    manifest = _load_manifest(out)
    _verify_fingerprints(out, manifest)
    sfs_dir = Path(out) / "sfs"
    sfs_dir.mkdir(parents=True, exist_ok=True)
    combined = load_corpus(Path(out) / "corpus" / "combined.csv")
    train_ids, _ = _split_ids(manifest)
    shuffled = _shuffled(_rows_for(combined, train_ids), cfg.seed, "cv-shuffle")

    cap = min(cfg.sfs_max_rows, len(shuffled.labels))
    selection_ds = shuffled.take(np.arange(cap))
    result = sequential_feature_selection(
        selection_ds, cfg.sfs_target, n_folds=cfg.sfs_folds, params=cfg.sfs_params)

    with open(sfs_dir / "sfs_path.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("step", "feature", "cv_mape_pct"))
        for i, (name, score) in enumerate(zip(result.order, result.scores), start=1):
            writer.writerow((i, name, repr(float(score))))

    def cv_score(names) -> float:
        scores = kfold_cv(shuffled.select_features(names),
                          n_folds=cfg.cv_folds, params=cfg.gbt)
        return float(np.mean(scores))

    small = min(3, cfg.sfs_target)
    prefix_scores = {
        f"prefix_{small}": cv_score(result.prefix(small)),
        f"prefix_{cfg.sfs_target}": cv_score(result.prefix(cfg.sfs_target)),
        "all_features": cv_score(shuffled.feature_names),
    }
    summary = {
        "selected": list(result.order),
        "selection_scores": [float(s) for s in result.scores],
        "cv_scores": prefix_scores,
        "protocol": {"selection_rows": int(cap),
                     "selection_folds": cfg.sfs_folds,
                     "selection_params": {
                         "n_estimators": cfg.sfs_params.n_estimators,
                         "max_depth": cfg.sfs_params.max_depth},
                     "scoring_folds": cfg.cv_folds},
    }
    _write_json(sfs_dir / "sfs_summary.json", summary)
    return summary


# --- extreme manoeuvres -------------------------------------------------------

def cmd_extreme(cfg: ExperimentConfig, out: Path) -> dict:
    """Drive the aggressive profile over unseen courses and score the
    normal-corpus global model on them."""
    extreme_dir = Path(out) / "extreme"
    extreme_dir.mkdir(parents=True, exist_ok=True)
    model = load_model(Path(out) / "models" / "global_full.json")
    vp = VehicleParams()

    rows = []
    flagged: dict[str, int] = {}
    for name in cfg.extreme_scenarios:
        spec = scenario_spec(name)
        section = build_scenario(spec)
        cfgs = sample_run_configs(
            name, cfg.extreme_runs_per_scenario,
            seed=_seed_int(cfg.seed, "extreme", name),
            mu_grid=cfg.extreme_mu_grid, driver=EXTREME_DRIVER)
        pairs = simulate_batch(section, vp, cfgs)
        traces = estimate_states_batch([log for log, _ in pairs], section, vp)
        kept, labels, meta = [], [], []
        for run_cfg, (_, truth), trace in zip(cfgs, pairs, traces):
            if trace.flagged:
                flagged[name] = flagged.get(name, 0) + 1
                continue
            kept.append(trace_features(trace, section).values)
            labels.append(float(truth.mu_label))
            meta.append((run_cfg.run_id, run_cfg.mu_base))
        flagged.setdefault(name, 0)
        if not kept:
            continue
        sub = Dataset(np.array(kept), np.array(labels), FULL_FEATURE_NAMES)
        preds = _predict_on(model, sub)
        for (run_id, mu), label, pred in zip(meta, labels, preds):
            rows.append((run_id, name, mu, label, float(pred),
                         float(pred) - label))

    with open(extreme_dir / "extreme_results.csv", "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("run_id", "scenario", "mu_base", "label",
                         "prediction", "residual"))
        for run_id, scenario, mu, label, pred, res in rows:
            writer.writerow((run_id, scenario, repr(float(mu)), repr(label),
                             repr(pred), repr(res)))

    labels = np.array([r[3] for r in rows])
    preds = np.array([r[4] for r in rows])
    per_scenario = {}
    for name in cfg.extreme_scenarios:
        idx = [i for i, r in enumerate(rows) if r[1] == name]
        if idx:
            per_scenario[name] = mape(labels[idx], preds[idx])
    residual_by_mu = {}
    for mu in cfg.extreme_mu_grid:
        idx = [i for i, r in enumerate(rows) if r[2] == mu]
        if idx:
            residual_by_mu[repr(float(mu))] = float(np.mean(preds[idx] - labels[idx]))

    normal_mape = None
    eval_path = Path(out) / "eval" / "evaluation.json"
    if eval_path.exists():
        normal_mape = json.loads(eval_path.read_text(encoding="utf-8"))[
            "global"]["combined_mape"]

    summary = {
        "mape": mape(labels, preds) if len(rows) else None,
        "per_scenario": per_scenario,
        "residual_mean_by_mu": residual_by_mu,
        "normal_combined_mape": normal_mape,
        "kept_runs": len(rows),
        "flagged": flagged,
    }
    _write_json(extreme_dir / "extreme_summary.json", summary)
    return summary
