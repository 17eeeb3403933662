"""Gradient-boosted regression trees for friction labels.

Self-contained exact-greedy implementation. Feature columns are argsorted
once per training; node membership is carried level by level with stable
partitions so every split scan is a prefix-sum pass over contiguous node
segments. Gains use the sum-of-squares identity SL^2/nL + SR^2/nR - S^2/n,
thresholds are midpoints between adjacent distinct values, and ties go to
the first maximum in (feature, threshold) order, which makes training fully
deterministic. Models serialize to JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# Predictions are clamped to the physical friction range.
LABEL_CLIP = (0.05, 1.2)
GAIN_EPS = 1e-12
MODEL_SCHEMA = "gbt-v1"


@dataclass(frozen=True)
class GbtParams:
    n_estimators: int = 100
    max_depth: int = 6
    learning_rate: float = 0.1
    min_samples_leaf: int = 5

    def __post_init__(self):
        if self.n_estimators < 1 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("counts and depth must be at least 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning rate must be in (0, 1]")


DEFAULT_PARAMS = GbtParams()
# Lightened profile used inside the selection loop, where hundreds of
# candidate models are fitted; final scoring runs at DEFAULT_PARAMS.
SFS_PARAMS = GbtParams(n_estimators=30, max_depth=4)


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with labels and aligned per-run metadata."""

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    run_ids: tuple[str, ...] = ()
    scenarios: tuple[str, ...] = ()

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=float)
        if f.ndim != 2 or f.shape[0] != len(y):
            raise ValueError("features must be (n, d) aligned with labels")
        if f.shape[1] != len(self.feature_names):
            raise ValueError("feature_names do not match feature columns")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValueError("duplicate feature names")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(y))):
            raise ValueError("non-finite training data")
        if np.any(y <= 0):
            raise ValueError("labels must be positive (relative-error metric)")
        for meta in (self.run_ids, self.scenarios):
            if meta and len(meta) != len(y):
                raise ValueError("metadata length mismatch")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)
        f.setflags(write=False)
        y.setflags(write=False)

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            features=self.features[rows].copy(),
            labels=self.labels[rows].copy(),
            feature_names=self.feature_names,
            run_ids=tuple(self.run_ids[i] for i in rows) if self.run_ids else (),
            scenarios=tuple(self.scenarios[i] for i in rows) if self.scenarios else ())

    def select_features(self, names) -> "Dataset":
        index = {n: i for i, n in enumerate(self.feature_names)}
        missing = [n for n in names if n not in index]
        if missing:
            raise ValueError(f"unknown features: {missing[:3]}")
        cols = [index[n] for n in names]
        return Dataset(
            features=self.features[:, cols].copy(),
            labels=self.labels.copy(),
            feature_names=tuple(names),
            run_ids=self.run_ids, scenarios=self.scenarios)


@dataclass(frozen=True)
class Tree:
    """Flat-array binary tree; feature == -1 marks a leaf. x <= threshold
    goes left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int32)
        while True:
            live = np.flatnonzero(self.feature[node] >= 0)
            if len(live) == 0:
                break
            cur = node[live]
            go_left = x[live, self.feature[cur]] <= self.threshold[cur]
            node[live] = np.where(go_left, self.left[cur], self.right[cur])
        return self.value[node]

    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))


def grow_tree(x: np.ndarray, residual: np.ndarray, params: GbtParams,
              presort: np.ndarray | None = None) -> Tree:
    """Fit one regression tree to residuals by exact greedy search.

    presort is the per-column stable argsort of x; pass it in when fitting
    many trees on the same matrix so the sort happens once.
    """
    x = np.asarray(x, dtype=float)
    r = np.asarray(residual, dtype=float)
    n, d = x.shape
    if n < 1:
        raise ValueError("empty training set")
    if presort is None:
        presort = np.argsort(x, axis=0, kind="stable")
    sorted_rows = np.ascontiguousarray(presort.T).copy()
    min_leaf = params.min_samples_leaf

    feature = [-1]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    value = [0.0]

    seg_starts = np.array([0, n])
    seg_node = np.array([0])
    seg_depth = np.array([0])
    seg_active = np.array([True])

    while seg_active.any():
        starts = seg_starts[:-1]
        ends = seg_starts[1:]
        cnt = ends - starts
        m = len(cnt)
        rows0 = sorted_rows[0]
        r0 = r[rows0]
        csum0 = np.cumsum(r0)
        base0 = csum0[starts] - r0[starts]
        seg_sum = csum0[ends - 1] - base0

        can_split = seg_active & (seg_depth < params.max_depth) & (cnt >= 2 * min_leaf)
        best_gain = np.full(m, -np.inf)
        best_feat = np.full(m, -1)
        best_thr = np.zeros(m)

        if can_split.any():
            seg_of_pos = np.repeat(np.arange(m), cnt)
            n_left_all = np.arange(1, n + 1) - np.repeat(starts, cnt)
            cnt_pos = np.repeat(cnt, cnt)
            can_pos = np.repeat(can_split, cnt)
            boundary_ok = np.empty(n, dtype=bool)
            boundary_ok[:-1] = seg_of_pos[1:] == seg_of_pos[:-1]
            boundary_ok[-1] = False

            for f in range(d):
                rows = sorted_rows[f]
                vals = x[rows, f]
                rf = r[rows]
                csum = np.cumsum(rf)
                prev = csum[starts] - rf[starts]
                sum_left = csum - np.repeat(prev, cnt)
                seg_sum_f = csum[ends - 1] - prev
                sum_all = np.repeat(seg_sum_f, cnt)

                distinct = np.empty(n, dtype=bool)
                distinct[:-1] = vals[1:] > vals[:-1]
                distinct[-1] = False
                n_right = cnt_pos - n_left_all
                valid = (can_pos & boundary_ok & distinct
                         & (n_left_all >= min_leaf) & (n_right >= min_leaf))
                idx = np.flatnonzero(valid)
                if len(idx) == 0:
                    continue
                sl = sum_left[idx]
                sr = sum_all[idx] - sl
                gain_v = (sl * sl / n_left_all[idx] + sr * sr / n_right[idx]
                          - sum_all[idx] ** 2 / cnt_pos[idx])
                gains = np.full(n, -np.inf)
                gains[idx] = gain_v
                seg_max = np.maximum.reduceat(gains, starts)
                improved = can_split & (seg_max > best_gain) & (seg_max > GAIN_EPS)
                if not improved.any():
                    continue
                hit_idx = np.flatnonzero(gains == seg_max[seg_of_pos])
                slot = np.minimum(np.searchsorted(hit_idx, starts), len(hit_idx) - 1)
                first = hit_idx[slot]
                nxt = np.minimum(first + 1, n - 1)
                midpoint = 0.5 * (vals[first] + vals[nxt])
                best_gain = np.where(improved, seg_max, best_gain)
                best_feat = np.where(improved, f, best_feat)
                best_thr = np.where(improved, midpoint, best_thr)

        to_leaf = seg_active & (best_feat < 0)
        for k in np.flatnonzero(to_leaf):
            value[seg_node[k]] = float(seg_sum[k] / cnt[k])
        seg_active = seg_active & ~to_leaf
        split = best_feat >= 0
        if not split.any():
            break

        # route rows of splitting segments once, indexed by original row id
        goes_left = np.zeros(n, dtype=bool)
        for k in np.flatnonzero(split):
            rows = rows0[starts[k]:ends[k]]
            goes_left[rows] = x[rows, best_feat[k]] <= best_thr[k]

        n_left_seg = np.add.reduceat(goes_left[rows0].astype(np.int64), starts)

        # stable partition of every presorted column by (segment, side)
        seg_of_pos = np.repeat(np.arange(m), cnt)
        split_pos = np.repeat(split, cnt)
        for f in range(len(sorted_rows)):
            rows = sorted_rows[f]
            key = 2 * seg_of_pos
            key[split_pos] += ~goes_left[rows[split_pos]]
            sorted_rows[f] = rows[np.argsort(key, kind="stable")]

        new_counts = []
        new_node = []
        new_depth = []
        new_active = []
        for k in range(m):
            if not split[k]:
                new_counts.append(cnt[k])
                new_node.append(seg_node[k])
                new_depth.append(seg_depth[k])
                new_active.append(False)
                continue
            u = seg_node[k]
            child = len(feature)
            feature[u] = int(best_feat[k])
            threshold[u] = float(best_thr[k])
            left[u] = child
            right[u] = child + 1
            feature.extend([-1, -1])
            threshold.extend([0.0, 0.0])
            left.extend([-1, -1])
            right.extend([-1, -1])
            value.extend([0.0, 0.0])
            new_counts.extend([n_left_seg[k], cnt[k] - n_left_seg[k]])
            new_node.extend([child, child + 1])
            new_depth.extend([seg_depth[k] + 1] * 2)
            new_active.extend([True, True])

        seg_starts = np.concatenate([[0], np.cumsum(new_counts)])
        seg_node = np.array(new_node)
        seg_depth = np.array(new_depth)
        seg_active = np.array(new_active)

    return Tree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        value=np.array(value, dtype=float))


@dataclass(frozen=True)
class GbtModel:
    params: GbtParams
    feature_names: tuple[str, ...]
    base_value: float
    trees: tuple[Tree, ...]
    label_range: tuple[float, float]
    clip: tuple[float, float] = LABEL_CLIP
    training_mse: tuple[float, ...] = ()
    corpus_digest: str | None = None

    def predict(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != len(self.feature_names):
            raise ValueError(f"expected {len(self.feature_names)} features, got {x.shape[1]}")
        out = np.full(len(x), self.base_value)
        for tree in self.trees:
            out += self.params.learning_rate * tree.predict(x)
        # the stagewise sum can drift slightly past the label range on inputs
        # far from the training data; never extrapolate beyond seen labels,
        # then apply the physical friction bounds
        out = np.clip(out, self.label_range[0], self.label_range[1])
        out = np.clip(out, self.clip[0], self.clip[1])
        return out[0] if single else out


def train_gbt(dataset: Dataset, params: GbtParams = DEFAULT_PARAMS,
              corpus_digest: str | None = None) -> GbtModel:
    """Stagewise least-squares boosting: each tree fits the current residual
    and contributes learning_rate times its leaf means."""
    if len(dataset) < 20:
        raise ValueError("need at least 20 rows to train")
    x = dataset.features
    y = dataset.labels
    presort = np.argsort(x, axis=0, kind="stable")
    base = float(y.mean())
    current = np.full(len(y), base)
    trees = []
    mse_path = []
    for _ in range(params.n_estimators):
        tree = grow_tree(x, y - current, params, presort)
        current = current + params.learning_rate * tree.predict(x)
        trees.append(tree)
        mse_path.append(float(np.mean((y - current) ** 2)))
    return GbtModel(params=params, feature_names=dataset.feature_names,
                    base_value=base, trees=tuple(trees),
                    label_range=(float(y.min()), float(y.max())),
                    training_mse=tuple(mse_path), corpus_digest=corpus_digest)


def mape(y_true, y_pred) -> float:
    """Mean absolute percentage error, in percent."""
    y = np.asarray(y_true, dtype=float)
    p = np.asarray(y_pred, dtype=float)
    if y.shape != p.shape:
        raise ValueError("shape mismatch")
    if np.any(np.abs(y) < 1e-9):
        raise ValueError("labels too close to zero for a relative error")
    return float(100.0 * np.mean(np.abs((y - p) / y)))


def kfold_cv(dataset: Dataset, n_folds: int = 8,
             params: GbtParams = DEFAULT_PARAMS) -> np.ndarray:
    """Per-fold MAPE over contiguous folds.

    Folds are contiguous row ranges, so rows must already be shuffled;
    corpus files are written pre-shuffled for exactly this reason.
    """
    n = len(dataset)
    if not 2 <= n_folds <= n:
        raise ValueError("fold count must be in [2, n_rows]")
    edges = (np.arange(n_folds + 1) * n) // n_folds
    scores = np.empty(n_folds)
    everything = np.arange(n)
    for i in range(n_folds):
        test = everything[edges[i]:edges[i + 1]]
        train = np.concatenate([everything[:edges[i]], everything[edges[i + 1]:]])
        model = train_gbt(dataset.take(train), params)
        scores[i] = mape(dataset.labels[test], model.predict(dataset.features[test]))
    return scores


@dataclass(frozen=True)
class SfsResult:
    """Forward-selection outcome: features in the order chosen, with the
    CV score recorded after each addition."""

    order: tuple[str, ...]
    scores: tuple[float, ...]

    def prefix(self, k: int) -> tuple[str, ...]:
        return self.order[:k]


def sequential_feature_selection(dataset: Dataset, target_count: int,
                                 n_folds: int = 8,
                                 params: GbtParams = SFS_PARAMS) -> SfsResult:
    """Greedy forward selection scored by k-fold CV MAPE.

    Candidates are tried in lexicographic name order and a new best requires
    a strictly lower score, so ties resolve to the alphabetically first name.
    """
    d = len(dataset.feature_names)
    if not 1 <= target_count <= d:
        raise ValueError("target_count must be in [1, n_features]")
    selected: list[int] = []
    remaining = sorted(range(d), key=lambda j: dataset.feature_names[j])
    scores: list[float] = []
    x = dataset.features
    for _ in range(target_count):
        best_j = -1
        best_score = np.inf
        for j in remaining:
            cols = selected + [j]
            sub = Dataset(features=x[:, cols].copy(), labels=dataset.labels.copy(),
                          feature_names=tuple(dataset.feature_names[c] for c in cols))
            score = float(np.mean(kfold_cv(sub, n_folds, params)))
            if score < best_score:
                best_j = j
                best_score = score
        selected.append(best_j)
        remaining.remove(best_j)
        scores.append(best_score)
    return SfsResult(order=tuple(dataset.feature_names[j] for j in selected),
                     scores=tuple(scores))


def model_to_dict(model: GbtModel) -> dict:
    return {
        "schema": MODEL_SCHEMA,
        "params": {
            "n_estimators": model.params.n_estimators,
            "max_depth": model.params.max_depth,
            "learning_rate": model.params.learning_rate,
            "min_samples_leaf": model.params.min_samples_leaf,
        },
        "feature_names": list(model.feature_names),
        "base_value": model.base_value,
        "label_range": list(model.label_range),
        "clip": list(model.clip),
        "training_mse": list(model.training_mse),
        "corpus_digest": model.corpus_digest,
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
            }
            for t in model.trees
        ],
    }


def model_from_dict(payload: dict) -> GbtModel:
    if payload.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"unsupported model schema {payload.get('schema')!r}")
    trees = tuple(
        Tree(feature=np.array(t["feature"], dtype=np.int32),
             threshold=np.array(t["threshold"], dtype=float),
             left=np.array(t["left"], dtype=np.int32),
             right=np.array(t["right"], dtype=np.int32),
             value=np.array(t["value"], dtype=float))
        for t in payload["trees"])
    return GbtModel(
        params=GbtParams(**payload["params"]),
        feature_names=tuple(payload["feature_names"]),
        base_value=float(payload["base_value"]),
        trees=trees,
        label_range=tuple(payload["label_range"]),
        clip=tuple(payload["clip"]),
        training_mse=tuple(payload["training_mse"]),
        corpus_digest=payload.get("corpus_digest"))


def save_model(model: GbtModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, sort_keys=True)


def load_model(path) -> GbtModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
