"""Multi-target regression methods behind one train/predict interface.

Seven problem-transformation methods are provided: the single-target
baseline (st), stacked single-target (sst), ensembles of regressor chains
(erc), correlation-driven target trees (motc), repeated stacking layers
(drs), multi-learner augmented stacking (mtas), and multi-target stacked
generalisation (mtsg), plus the classic single-output stacked
generalisation (sg) as the d=1 building block.

Every submodel's seed is derived from the method seed and the submodel's
structural position, so methods that are structurally identical for some
configuration (e.g. drs with one layer versus sst) produce bit-identical
models.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import learners
from .learners import LearnerSpec, RegressionModel
from .tabular import ScalingParams, apply_autoscale, invert_autoscale

BUNDLE_FORMAT = "mtstack-bundle/1"

METHODS = ("st", "sst", "erc", "motc", "drs", "mtas", "mtsg", "sg")
FILTER_RULES = ("mean-threshold", "keep-all")

FILTER_RF_TREES = 500


def derive_seed(seed: int, *tokens) -> int:
    """Stable 63-bit seed derived from a master seed and structural tokens."""
    text = "|".join([str(int(seed))] + [str(t) for t in tokens])
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass(frozen=True)
class MtrMethodSpec:
    method: str
    base: LearnerSpec
    level0_pool: tuple[LearnerSpec, ...] = ()
    erc_chains: int = 10
    drs_max_layers: int = 5
    motc_max_children: int = 2
    motc_max_depth: int = 2
    filter_rule: str = "mean-threshold"
    seed: int = 0
    out_of_fold: bool = False
    oof_folds: int = 10

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method '{self.method}', expected one of {METHODS}")
        if self.filter_rule not in FILTER_RULES:
            raise ValueError(f"unknown filter rule '{self.filter_rule}'")
        if self.method in ("mtas", "mtsg", "sg") and len(self.level0_pool) < 1:
            raise ValueError(f"{self.method} needs a non-empty level0_pool")
        if self.erc_chains < 1 or self.drs_max_layers < 1:
            raise ValueError("erc_chains and drs_max_layers must be >= 1")
        if self.motc_max_children < 1 or self.motc_max_depth < 1:
            raise ValueError("motc_max_children and motc_max_depth must be >= 1")


@dataclass(frozen=True)
class MotcTree:
    """Per-target dependency tree: node 0 is the root; children index nodes."""

    targets: tuple[int, ...]
    children: tuple[tuple[int, ...], ...]

    def descendants(self, idx: int) -> list[int]:
        out = []
        stack = list(self.children[idx])[::-1]
        while stack:
            node = stack.pop()
            out.append(node)
            stack.extend(list(self.children[node])[::-1])
        return out


@dataclass(frozen=True)
class MultiTargetModel:
    spec: MtrMethodSpec
    d: int
    feature_count: int
    target_names: tuple[str, ...]
    level0: tuple[tuple[RegressionModel, ...], ...] = ()  # [learner][target]
    filter_masks: tuple[np.ndarray, ...] = ()
    level1: tuple[RegressionModel, ...] = ()
    layers: tuple[tuple[RegressionModel, ...], ...] = ()
    chains: tuple[tuple[tuple[int, ...], tuple[RegressionModel, ...]], ...] = ()
    trees: tuple[MotcTree, ...] = ()
    tree_models: tuple[tuple[RegressionModel, ...], ...] = ()
    x_scaling: ScalingParams | None = None
    y_scaling: ScalingParams | None = None


@dataclass(frozen=True)
class PredictionMatrix:
    values: np.ndarray
    target_names: tuple[str, ...]


def attach_scaling(model: MultiTargetModel, x_scaling, y_scaling) -> MultiTargetModel:
    """Copy of the model that descales queries and rescales outputs."""
    return replace(model, x_scaling=x_scaling, y_scaling=y_scaling)


# --------------------------------------------------------------------------
# Level-0 helpers
# --------------------------------------------------------------------------

def _check_xy(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("x and y must be matrices with matching row counts")
    return x, y


def _default_names(d: int) -> tuple[str, ...]:
    return tuple(f"y{t}" for t in range(d))


def _oof_fold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(seed, "folds"))
    ids = np.repeat(np.arange(folds), math.ceil(n / folds))[:n]
    return ids[rng.permutation(n)]


def _fit_and_train_preds(base: LearnerSpec, x, y_col, model_seed: int,
                         spec: MtrMethodSpec, fold_ids) -> tuple[RegressionModel, np.ndarray]:
    """Train on the full data; training-matrix predictions come either from
    the model itself (paper-faithful in-sample stacking) or out-of-fold."""
    model = learners.train(base.with_seed(model_seed), x, y_col)
    if not spec.out_of_fold:
        return model, learners.predict(model, x)
    preds = np.empty(x.shape[0])
    for k in range(spec.oof_folds):
        held = fold_ids == k
        if not held.any():
            continue
        fold_model = learners.train(
            base.with_seed(derive_seed(model_seed, "fold", k)), x[~held], y_col[~held]
        )
        preds[held] = learners.predict(fold_model, x[held])
    return model, preds


def _train_level0_grid(x, y, pool, spec, fold_ids):
    """j x d grid of base models plus the n x (j*d) training prediction matrix."""
    n, d = y.shape
    grid = []
    y0 = np.empty((n, len(pool) * d))
    for r, learner in enumerate(pool):
        row = []
        for t in range(d):
            model, preds = _fit_and_train_preds(
                learner, x, y[:, t], derive_seed(spec.seed, "m", r, t), spec, fold_ids
            )
            row.append(model)
            y0[:, r * d + t] = preds
        grid.append(tuple(row))
    return tuple(grid), y0


def _predict_level0_grid(model: MultiTargetModel, x) -> np.ndarray:
    d = model.d
    y0 = np.empty((x.shape[0], len(model.level0) * d))
    for r, row in enumerate(model.level0):
        for t in range(d):
            y0[:, r * d + t] = learners.predict(row[t], x)
    return y0


# --------------------------------------------------------------------------
# Relevance filter
# --------------------------------------------------------------------------

def filter_relevant(y0: np.ndarray, y_t: np.ndarray, rule: str, seed: int,
                    own_columns) -> np.ndarray:
    """Boolean mask over the j*d prediction columns relevant to one target.

    The mean-threshold rule ranks columns by the impurity importance of a
    forest fitted on (y0, y_t) and keeps those at or above the mean; columns
    with zero importance never qualify. An empty selection falls back to the
    target's own level-0 prediction columns, so the mask is never empty.
    """
    cols = y0.shape[1]
    if rule == "keep-all":
        return np.ones(cols, dtype=bool)
    rf = LearnerSpec(learners.KIND_RF, rf=learners.RfParams(
        n_trees=FILTER_RF_TREES, seed=seed))
    importance = learners.rf_importance(learners.train(rf, y0, y_t))
    mask = (importance > 0) & (importance >= importance.mean())
    if not mask.any():
        mask = np.zeros(cols, dtype=bool)
        mask[list(own_columns)] = True
    return mask


# --------------------------------------------------------------------------
# Training per method
# --------------------------------------------------------------------------

def st_train(x, y, base: LearnerSpec, seed: int = 0, target_names=None,
             spec: MtrMethodSpec | None = None) -> MultiTargetModel:
    """One independent model per target."""
    x, y = _check_xy(x, y)
    d = y.shape[1]
    spec = spec or MtrMethodSpec(method="st", base=base, seed=seed)
    models = tuple(
        learners.train(base.with_seed(derive_seed(spec.seed, "m", 0, t)), x, y[:, t])
        for t in range(d)
    )
    return MultiTargetModel(
        spec=spec, d=d, feature_count=x.shape[1],
        target_names=tuple(target_names) if target_names else _default_names(d),
        level0=(models,),
    )


def sst_train(x, y, base: LearnerSpec, seed: int = 0, target_names=None,
              spec: MtrMethodSpec | None = None) -> MultiTargetModel:
    """Stacked single-target: meta-models on features plus level-0 predictions."""
    x, y = _check_xy(x, y)
    d = y.shape[1]
    spec = spec or MtrMethodSpec(method="sst", base=base, seed=seed)
    fold_ids = _oof_fold_ids(x.shape[0], spec.oof_folds, spec.seed) if spec.out_of_fold else None
    level0, y0 = _train_level0_grid(x, y, (base,), spec, fold_ids)
    aug = np.hstack([x, y0])
    level1 = tuple(
        learners.train(base.with_seed(derive_seed(spec.seed, "meta", 1, t)), aug, y[:, t])
        for t in range(d)
    )
    return MultiTargetModel(
        spec=spec, d=d, feature_count=x.shape[1],
        target_names=tuple(target_names) if target_names else _default_names(d),
        level0=level0, level1=level1,
    )


def drs_train(x, y, base: LearnerSpec, drs_max_layers: int = 5, seed: int = 0,
              target_names=None, spec: MtrMethodSpec | None = None) -> MultiTargetModel:
    """Deep regressor stacking: repeated SST layers, last layer is the output."""
    x, y = _check_xy(x, y)
    n, d = y.shape
    spec = spec or MtrMethodSpec(method="drs", base=base, drs_max_layers=drs_max_layers, seed=seed)
    fold_ids = _oof_fold_ids(n, spec.oof_folds, spec.seed) if spec.out_of_fold else None

    layers = []
    prev = np.empty((n, d))
    layer0 = []
    for t in range(d):
        model, preds = _fit_and_train_preds(
            base, x, y[:, t], derive_seed(spec.seed, "m", 0, t), spec, fold_ids)
        layer0.append(model)
        prev[:, t] = preds
    layers.append(tuple(layer0))
    for level in range(1, spec.drs_max_layers + 1):
        aug = np.hstack([x, prev])
        nxt = np.empty((n, d))
        layer = []
        for t in range(d):
            model, preds = _fit_and_train_preds(
                base, aug, y[:, t], derive_seed(spec.seed, "meta", level, t), spec, fold_ids)
            layer.append(model)
            nxt[:, t] = preds
        layers.append(tuple(layer))
        prev = nxt
    return MultiTargetModel(
        spec=spec, d=d, feature_count=x.shape[1],
        target_names=tuple(target_names) if target_names else _default_names(d),
        layers=tuple(layers),
    )


def erc_train(x, y, base: LearnerSpec, erc_chains: int = 10, seed: int = 0,
              target_names=None, spec: MtrMethodSpec | None = None) -> MultiTargetModel:
    """Ensemble of regressor chains over distinct random target orders."""
    x, y = _check_xy(x, y)
    n, d = y.shape
    spec = spec or MtrMethodSpec(method="erc", base=base, erc_chains=erc_chains, seed=seed)
    fold_ids = _oof_fold_ids(n, spec.oof_folds, spec.seed) if spec.out_of_fold else None

    n_chains = spec.erc_chains
    if d <= 20:
        n_chains = min(n_chains, math.factorial(d))
    rng = np.random.default_rng(derive_seed(spec.seed, "chains"))
    perms: list[tuple[int, ...]] = []
    while len(perms) < n_chains:
        perm = tuple(int(v) for v in rng.permutation(d))
        if perm not in perms:
            perms.append(perm)

    chains = []
    for c, perm in enumerate(perms):
        aug = x
        models = []
        for t in perm:
            model, preds = _fit_and_train_preds(
                base, aug, y[:, t], derive_seed(spec.seed, "m", c, t), spec, fold_ids)
            models.append(model)
            aug = np.hstack([aug, preds[:, None]])
        chains.append((perm, tuple(models)))
    return MultiTargetModel(
        spec=spec, d=d, feature_count=x.shape[1],
        target_names=tuple(target_names) if target_names else _default_names(d),
        chains=tuple(chains),
    )


def _abs_corr(y: np.ndarray) -> np.ndarray:
    """|Pearson| between target columns; constant columns correlate with nothing."""
    d = y.shape[1]
    centered = y - y.mean(axis=0)
    norms = np.sqrt(np.sum(centered**2, axis=0))
    safe = np.where(norms > 0, norms, 1.0)
    corr = np.abs((centered.T @ centered) / np.outer(safe, safe))
    corr[norms == 0, :] = 0.0
    corr[:, norms == 0] = 0.0
    np.fill_diagonal(corr, 0.0)
    return corr


def _build_motc_tree(root: int, corr: np.ndarray, max_children: int,
                     max_depth: int) -> MotcTree:
    d = corr.shape[0]
    targets = [root]
    children: list[list[int]] = [[]]
    available = [t for t in range(d) if t != root]
    frontier = [0]
    for _ in range(max_depth):
        if not available:
            break
        nxt = []
        for node in frontier:
            order = sorted(available, key=lambda u: (-corr[targets[node], u], u))
            for u in order[:max_children]:
                available.remove(u)
                targets.append(u)
                children.append([])
                children[node].append(len(targets) - 1)
                nxt.append(len(targets) - 1)
        frontier = nxt
    return MotcTree(tuple(targets), tuple(tuple(c) for c in children))


def motc_train(x, y, base: LearnerSpec, motc_max_children: int = 2,
               motc_max_depth: int = 2, seed: int = 0, target_names=None,
               spec: MtrMethodSpec | None = None) -> MultiTargetModel:
    """Per-target dependency trees ordered by inter-target correlation.

    Each node's model sees the features augmented with the training
    predictions of all of its descendants; models are fitted leaves first.
    """
    x, y = _check_xy(x, y)
    n, d = y.shape
    spec = spec or MtrMethodSpec(
        method="motc", base=base, motc_max_children=motc_max_children,
        motc_max_depth=motc_max_depth, seed=seed)
    fold_ids = _oof_fold_ids(n, spec.oof_folds, spec.seed) if spec.out_of_fold else None
    corr = _abs_corr(y)

    trees = []
    tree_models = []
    for t in range(d):
        tree = _build_motc_tree(t, corr, spec.motc_max_children, spec.motc_max_depth)
        n_nodes = len(tree.targets)
        models: list[RegressionModel | None] = [None] * n_nodes
        node_preds: list[np.ndarray | None] = [None] * n_nodes
        for idx in range(n_nodes - 1, -1, -1):  # children are created after parents
            u = tree.targets[idx]
            desc = tree.descendants(idx)
            if desc:
                aug = np.hstack([x] + [node_preds[k][:, None] for k in desc])
                model_seed = derive_seed(spec.seed, "node", t, u)
            else:
                aug = x
                model_seed = derive_seed(spec.seed, "m", 0, u)
            models[idx], node_preds[idx] = _fit_and_train_preds(
                base, aug, y[:, u], model_seed, spec, fold_ids)
        trees.append(tree)
        tree_models.append(tuple(models))
    return MultiTargetModel(
        spec=spec, d=d, feature_count=x.shape[1],
        target_names=tuple(target_names) if target_names else _default_names(d),
        trees=tuple(trees), tree_models=tuple(tree_models),
    )


def mtas_train(x, y, level0_pool, base: LearnerSpec, filter_rule: str = "mean-threshold",
               seed: int = 0, target_names=None,
               spec: MtrMethodSpec | None = None) -> MultiTargetModel:
    """Multi-learner stacking keeping features plus filtered prediction columns."""
    x, y = _check_xy(x, y)
    d = y.shape[1]
    spec = spec or MtrMethodSpec(
        method="mtas", base=base, level0_pool=tuple(level0_pool),
        filter_rule=filter_rule, seed=seed)
    fold_ids = _oof_fold_ids(x.shape[0], spec.oof_folds, spec.seed) if spec.out_of_fold else None
    level0, y0 = _train_level0_grid(x, y, spec.level0_pool, spec, fold_ids)
    j = len(spec.level0_pool)
    masks = []
    level1 = []
    for t in range(d):
        own = [r * d + t for r in range(j)]
        mask = filter_relevant(y0, y[:, t], spec.filter_rule,
                               derive_seed(spec.seed, "filter", t), own)
        masks.append(mask)
        aug = np.hstack([x, y0[:, mask]])
        level1.append(learners.train(
            base.with_seed(derive_seed(spec.seed, "meta", 1, t)), aug, y[:, t]))
    return MultiTargetModel(
        spec=spec, d=d, feature_count=x.shape[1],
        target_names=tuple(target_names) if target_names else _default_names(d),
        level0=level0, filter_masks=tuple(masks), level1=tuple(level1),
    )


def mtsg_train(x, y, level0_pool, base: LearnerSpec, filter_rule: str = "mean-threshold",
               seed: int = 0, target_names=None,
               spec: MtrMethodSpec | None = None) -> MultiTargetModel:
    """Multi-target stacked generalisation.

    Level 0 trains every pool learner on every target and predicts back on
    the training inputs, giving j*d prediction columns. Per target, a
    relevance filter selects columns, and the level-1 meta-model is trained
    on the selected predictions only; the original features do not reach
    level 1.
    """
    x, y = _check_xy(x, y)
    d = y.shape[1]
    spec = spec or MtrMethodSpec(
        method="mtsg", base=base, level0_pool=tuple(level0_pool),
        filter_rule=filter_rule, seed=seed)
    fold_ids = _oof_fold_ids(x.shape[0], spec.oof_folds, spec.seed) if spec.out_of_fold else None
    level0, y0 = _train_level0_grid(x, y, spec.level0_pool, spec, fold_ids)
    j = len(spec.level0_pool)
    masks = []
    level1 = []
    for t in range(d):
        own = [r * d + t for r in range(j)]
        mask = filter_relevant(y0, y[:, t], spec.filter_rule,
                               derive_seed(spec.seed, "filter", t), own)
        masks.append(mask)
        level1.append(learners.train(
            base.with_seed(derive_seed(spec.seed, "meta", 1, t)), y0[:, mask], y[:, t]))
    return MultiTargetModel(
        spec=spec, d=d, feature_count=x.shape[1],
        target_names=tuple(target_names) if target_names else _default_names(d),
        level0=level0, filter_masks=tuple(masks), level1=tuple(level1),
    )


def sg_train(x, y_single, level0_pool, base: LearnerSpec, filter_rule: str = "keep-all",
             seed: int = 0, target_name: str = "y0") -> MultiTargetModel:
    """Classic single-target stacked generalisation (the d=1 building block)."""
    y_single = np.asarray(y_single, dtype=float).ravel()
    spec = MtrMethodSpec(method="sg", base=base, level0_pool=tuple(level0_pool),
                         filter_rule=filter_rule, seed=seed)
    return mtsg_train(x, y_single[:, None], level0_pool, base,
                      target_names=(target_name,), spec=spec)


_TRAINERS = {
    "st": lambda x, y, spec, names: st_train(x, y, spec.base, spec=spec, target_names=names),
    "sst": lambda x, y, spec, names: sst_train(x, y, spec.base, spec=spec, target_names=names),
    "erc": lambda x, y, spec, names: erc_train(x, y, spec.base, spec=spec, target_names=names),
    "motc": lambda x, y, spec, names: motc_train(x, y, spec.base, spec=spec, target_names=names),
    "drs": lambda x, y, spec, names: drs_train(x, y, spec.base, spec=spec, target_names=names),
    "mtas": lambda x, y, spec, names: mtas_train(
        x, y, spec.level0_pool, spec.base, spec=spec, target_names=names),
    "mtsg": lambda x, y, spec, names: mtsg_train(
        x, y, spec.level0_pool, spec.base, spec=spec, target_names=names),
    "sg": lambda x, y, spec, names: mtsg_train(
        x, y, spec.level0_pool, spec.base, spec=spec, target_names=names),
}


def mtr_train(x, y, spec: MtrMethodSpec, target_names=None) -> MultiTargetModel:
    """Train any method from its declarative spec."""
    return _TRAINERS[spec.method](x, y, spec, target_names)


# --------------------------------------------------------------------------
# Prediction
# --------------------------------------------------------------------------

def _predict_raw(model: MultiTargetModel, x: np.ndarray) -> np.ndarray:
    method = model.spec.method
    n, d = x.shape[0], model.d
    if method == "st":
        return np.column_stack([learners.predict(m, x) for m in model.level0[0]])
    if method == "sst":
        aug = np.hstack([x, _predict_level0_grid(model, x)])
        return np.column_stack([learners.predict(m, aug) for m in model.level1])
    if method == "drs":
        prev = np.column_stack([learners.predict(m, x) for m in model.layers[0]])
        for layer in model.layers[1:]:
            aug = np.hstack([x, prev])
            prev = np.column_stack([learners.predict(m, aug) for m in layer])
        return prev
    if method == "erc":
        total = np.zeros((n, d))
        for perm, models in model.chains:
            aug = x
            for k, t in enumerate(perm):
                preds = learners.predict(models[k], aug)
                total[:, t] += preds
                aug = np.hstack([aug, preds[:, None]])
        return total / len(model.chains)
    if method == "motc":
        out = np.empty((n, d))
        for t in range(d):
            tree = model.trees[t]
            models = model.tree_models[t]
            node_preds: list[np.ndarray | None] = [None] * len(tree.targets)
            for idx in range(len(tree.targets) - 1, -1, -1):
                desc = tree.descendants(idx)
                aug = np.hstack([x] + [node_preds[k][:, None] for k in desc]) if desc else x
                node_preds[idx] = learners.predict(models[idx], aug)
            out[:, t] = node_preds[0]
        return out
    if method in ("mtas", "mtsg", "sg"):
        y0 = _predict_level0_grid(model, x)
        cols = []
        for t in range(d):
            sel = y0[:, model.filter_masks[t]]
            if method == "mtas":
                sel = np.hstack([x, sel])
            cols.append(learners.predict(model.level1[t], sel))
        return np.column_stack(cols)
    raise ValueError(f"corrupted model: unknown method '{method}'")


def mtr_predict(model: MultiTargetModel, x) -> PredictionMatrix:
    """Run the method-appropriate cascade; output is n x d in original units."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.feature_count:
        raise ValueError(
            f"expected input width {model.feature_count}, got "
            f"{x.shape[1] if x.ndim == 2 else 'non-matrix'}"
        )
    if model.x_scaling is not None:
        x = apply_autoscale(x, model.x_scaling)
    values = _predict_raw(model, x)
    if model.y_scaling is not None:
        values = invert_autoscale(values, model.y_scaling)
    if values.size and not np.isfinite(values).all():
        raise ValueError("prediction produced non-finite values")
    return PredictionMatrix(values=values, target_names=model.target_names)


# --------------------------------------------------------------------------
# Bundle serialization
# --------------------------------------------------------------------------

def _learner_dict(spec: LearnerSpec) -> dict:
    return learners._spec_to_dict(spec)


def method_spec_to_dict(spec: MtrMethodSpec) -> dict:
    return {
        "method": spec.method,
        "base": _learner_dict(spec.base),
        "level0_pool": [_learner_dict(s) for s in spec.level0_pool],
        "erc_chains": spec.erc_chains,
        "drs_max_layers": spec.drs_max_layers,
        "motc_max_children": spec.motc_max_children,
        "motc_max_depth": spec.motc_max_depth,
        "filter_rule": spec.filter_rule,
        "seed": spec.seed,
        "out_of_fold": spec.out_of_fold,
        "oof_folds": spec.oof_folds,
    }


def method_spec_from_dict(d: dict) -> MtrMethodSpec:
    return MtrMethodSpec(
        method=d["method"],
        base=learners._spec_from_dict(d["base"]),
        level0_pool=tuple(learners._spec_from_dict(s) for s in d["level0_pool"]),
        erc_chains=d["erc_chains"],
        drs_max_layers=d["drs_max_layers"],
        motc_max_children=d["motc_max_children"],
        motc_max_depth=d["motc_max_depth"],
        filter_rule=d["filter_rule"],
        seed=d["seed"],
        out_of_fold=d["out_of_fold"],
        oof_folds=d["oof_folds"],
    )


def _scaling_to_json(p: ScalingParams | None):
    if p is None:
        return None
    return {"means": [float(v) for v in p.means], "stds": [float(v) for v in p.stds]}


def _scaling_from_json(obj) -> ScalingParams | None:
    if obj is None:
        return None
    return ScalingParams(means=np.array(obj["means"]), stds=np.array(obj["stds"]))


def save_bundle(model: MultiTargetModel, bundle_dir) -> None:
    """Persist a trained model as a directory: manifest plus per-model files."""
    os.makedirs(bundle_dir, exist_ok=True)
    models_dir = os.path.join(bundle_dir, "models")
    os.makedirs(models_dir, exist_ok=True)

    files: dict[str, RegressionModel] = {}
    for r, row in enumerate(model.level0):
        for t, m in enumerate(row):
            files[f"level0_r{r}_t{t}"] = m
    for t, m in enumerate(model.level1):
        files[f"level1_t{t}"] = m
    for level, layer in enumerate(model.layers):
        for t, m in enumerate(layer):
            files[f"layer{level}_t{t}"] = m
    for c, (_, models) in enumerate(model.chains):
        for k, m in enumerate(models):
            files[f"chain{c}_k{k}"] = m
    for t, models in enumerate(model.tree_models):
        for idx, m in enumerate(models):
            files[f"tree{t}_node{idx}"] = m
    for name, m in files.items():
        learners.save_model(m, os.path.join(models_dir, name + ".npz"))

    manifest = {
        "format": BUNDLE_FORMAT,
        "spec": method_spec_to_dict(model.spec),
        "d": model.d,
        "feature_count": model.feature_count,
        "target_names": list(model.target_names),
        "level0_shape": [len(model.level0), model.d if model.level0 else 0],
        "filter_masks": [[bool(v) for v in mask] for mask in model.filter_masks],
        "n_level1": len(model.level1),
        "n_layers": len(model.layers),
        "chains": [list(perm) for perm, _ in model.chains],
        "trees": [
            {"targets": list(tree.targets), "children": [list(c) for c in tree.children]}
            for tree in model.trees
        ],
        "x_scaling": _scaling_to_json(model.x_scaling),
        "y_scaling": _scaling_to_json(model.y_scaling),
    }
    with open(os.path.join(bundle_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_bundle(bundle_dir) -> MultiTargetModel:
    with open(os.path.join(bundle_dir, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != BUNDLE_FORMAT:
        raise ValueError(f"{bundle_dir}: not a {BUNDLE_FORMAT} bundle")
    models_dir = os.path.join(bundle_dir, "models")

    def load(name):
        return learners.load_model(os.path.join(models_dir, name + ".npz"))

    spec = method_spec_from_dict(manifest["spec"])
    d = manifest["d"]
    n_rows = manifest["level0_shape"][0]
    level0 = tuple(
        tuple(load(f"level0_r{r}_t{t}") for t in range(d)) for r in range(n_rows)
    )
    level1 = tuple(load(f"level1_t{t}") for t in range(manifest["n_level1"]))
    layers = tuple(
        tuple(load(f"layer{level}_t{t}") for t in range(d))
        for level in range(manifest["n_layers"])
    )
    chains = tuple(
        (tuple(perm), tuple(load(f"chain{c}_k{k}") for k in range(len(perm))))
        for c, perm in enumerate(manifest["chains"])
    )
    trees = tuple(
        MotcTree(tuple(t["targets"]), tuple(tuple(c) for c in t["children"]))
        for t in manifest["trees"]
    )
    tree_models = tuple(
        tuple(load(f"tree{t}_node{idx}") for idx in range(len(tree.targets)))
        for t, tree in enumerate(trees)
    )
    return MultiTargetModel(
        spec=spec, d=d, feature_count=manifest["feature_count"],
        target_names=tuple(manifest["target_names"]),
        level0=level0,
        filter_masks=tuple(np.array(m, dtype=bool) for m in manifest["filter_masks"]),
        level1=level1, layers=layers, chains=chains,
        trees=trees, tree_models=tree_models,
        x_scaling=_scaling_from_json(manifest["x_scaling"]),
        y_scaling=_scaling_from_json(manifest["y_scaling"]),
    )
