"""Base regression learners: Random Forest and epsilon-SVR behind one interface.

Both learners are implemented from first principles. The forest grows CART
regression trees (variance-reduction splits, bootstrap resampling, per-split
feature subsampling) with the hot loops compiled by numba; the SVR solves the
epsilon-insensitive dual by maximal-violating-pair coordinate updates with an
exact piecewise-quadratic line search.
"""

from __future__ import annotations

import io
import json
import math
import warnings
import zipfile
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

MODEL_FORMAT = "mtstack-learner/1"

KIND_RF = "rf"
KIND_SVR_L = "svr_l"
KIND_SVR_R = "svr_r"
KINDS = (KIND_RF, KIND_SVR_L, KIND_SVR_R)


@dataclass(frozen=True)
class RfParams:
    n_trees: int = 500
    mtry: int | None = None  # default ceil(f / 3) at training time
    min_node_size: int = 5
    seed: int = 0


@dataclass(frozen=True)
class SvrParams:
    c: float = 1.0
    epsilon: float = 0.1
    gamma: float | None = None  # default 1 / f, radial kernel only
    tolerance: float = 1e-3
    max_passes: int = 2000  # sweep budget; degenerate kernels converge slowly


@dataclass(frozen=True)
class LearnerSpec:
    """Declarative description of one base learner and its hyperparameters."""

    kind: str
    rf: RfParams = RfParams()
    svr: SvrParams = SvrParams()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown learner kind '{self.kind}', expected one of {KINDS}")

    def with_seed(self, seed: int) -> "LearnerSpec":
        """Copy of this spec with the RF seed replaced (no-op for SVR kinds)."""
        return replace(self, rf=replace(self.rf, seed=int(seed)))


@dataclass(frozen=True)
class ForestModel:
    spec: LearnerSpec
    feature_count: int
    features: np.ndarray  # per-node split feature, -1 for leaves
    thresholds: np.ndarray
    lefts: np.ndarray
    rights: np.ndarray
    values: np.ndarray
    offsets: np.ndarray  # node-range per tree, len n_trees + 1
    importance_raw: np.ndarray  # unnormalised variance-reduction sums


@dataclass(frozen=True)
class SvrModel:
    spec: LearnerSpec
    feature_count: int
    support_x: np.ndarray
    coef: np.ndarray
    bias: float
    gamma: float  # resolved value, 0.0 for the linear kernel


RegressionModel = ForestModel | SvrModel


# --------------------------------------------------------------------------
# Random forest kernels
# --------------------------------------------------------------------------

@njit(cache=True)
def _grow_tree(x, y, mtry, min_node_size, seed):
    n, f = x.shape
    np.random.seed(seed)
    samples = np.empty(n, dtype=np.int64)
    for i in range(n):
        samples[i] = np.random.randint(0, n)

    max_nodes = 2 * n + 1
    feature = np.full(max_nodes, -1, dtype=np.int32)
    threshold = np.zeros(max_nodes, dtype=np.float64)
    left = np.full(max_nodes, -1, dtype=np.int32)
    right = np.full(max_nodes, -1, dtype=np.int32)
    value = np.zeros(max_nodes, dtype=np.float64)
    importance = np.zeros(f, dtype=np.float64)

    stack_node = np.empty(max_nodes, dtype=np.int64)
    stack_lo = np.empty(max_nodes, dtype=np.int64)
    stack_hi = np.empty(max_nodes, dtype=np.int64)
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    n_nodes = 1
    feat_idx = np.arange(f)
    xcol = np.empty(n, dtype=np.float64)

    while top >= 0:
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        top -= 1
        m = hi - lo
        ysum = 0.0
        ysq = 0.0
        for k in range(lo, hi):
            yv = y[samples[k]]
            ysum += yv
            ysq += yv * yv
        value[node] = ysum / m
        sse = ysq - ysum * ysum / m
        if m <= min_node_size or sse <= 0.0:
            continue

        # mtry features without replacement via partial Fisher-Yates
        for k in range(mtry):
            j = k + np.random.randint(0, f - k)
            feat_idx[k], feat_idx[j] = feat_idx[j], feat_idx[k]

        best_gain = 0.0
        best_feat = -1
        best_thr = 0.0
        for k in range(mtry):
            fid = feat_idx[k]
            for t in range(m):
                xcol[t] = x[samples[lo + t], fid]
            order = np.argsort(xcol[:m])
            prev = xcol[order[0]]
            lsum = 0.0
            for t in range(m - 1):
                lsum += y[samples[lo + order[t]]]
                xv = xcol[order[t + 1]]
                if xv > prev:
                    nl = t + 1
                    nr = m - nl
                    rsum = ysum - lsum
                    gain = lsum * lsum / nl + rsum * rsum / nr - ysum * ysum / m
                    if gain > best_gain:
                        best_gain = gain
                        best_feat = fid
                        best_thr = 0.5 * (prev + xv)
                    prev = xv
        if best_feat < 0:
            continue

        i = lo
        j = hi - 1
        while i <= j:
            if x[samples[i], best_feat] <= best_thr:
                i += 1
            else:
                samples[i], samples[j] = samples[j], samples[i]
                j -= 1
        feature[node] = best_feat
        threshold[node] = best_thr
        importance[best_feat] += best_gain
        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        left[node] = np.int32(lid)
        right[node] = np.int32(rid)
        top += 1
        stack_node[top] = lid
        stack_lo[top] = lo
        stack_hi[top] = i
        top += 1
        stack_node[top] = rid
        stack_lo[top] = i
        stack_hi[top] = hi

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes],
            right[:n_nodes], value[:n_nodes], importance)


@njit(cache=True)
def _forest_predict(features, thresholds, lefts, rights, values, offsets, x):
    n = x.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.zeros(n, dtype=np.float64)
    for tree in range(n_trees):
        base = offsets[tree]
        for i in range(n):
            node = base
            while features[node] >= 0:
                if x[i, features[node]] <= thresholds[node]:
                    node = base + lefts[node]
                else:
                    node = base + rights[node]
            out[i] += values[node]
    return out / n_trees


def _train_rf(spec: LearnerSpec, x: np.ndarray, y: np.ndarray) -> ForestModel:
    n, f = x.shape
    p = spec.rf
    mtry = p.mtry if p.mtry is not None else math.ceil(f / 3)
    if not 1 <= mtry <= f:
        raise ValueError(f"mtry {mtry} out of range for {f} features")
    if p.n_trees < 1 or p.min_node_size < 1:
        raise ValueError("n_trees and min_node_size must be positive")

    parts = []
    importance = np.zeros(f)
    offsets = np.zeros(p.n_trees + 1, dtype=np.int64)
    for i in range(p.n_trees):
        tree_seed = (p.seed + i) & 0xFFFFFFFF
        arrs = _grow_tree(x, y, mtry, p.min_node_size, tree_seed)
        parts.append(arrs[:5])
        importance += arrs[5]
        offsets[i + 1] = offsets[i] + arrs[0].shape[0]
    return ForestModel(
        spec=spec,
        feature_count=f,
        features=np.concatenate([a[0] for a in parts]),
        thresholds=np.concatenate([a[1] for a in parts]),
        lefts=np.concatenate([a[2] for a in parts]),
        rights=np.concatenate([a[3] for a in parts]),
        values=np.concatenate([a[4] for a in parts]),
        offsets=offsets,
        importance_raw=importance,
    )


# --------------------------------------------------------------------------
# Epsilon-SVR via pairwise dual coordinate descent
# --------------------------------------------------------------------------

def _kernel(kind: str, gamma: float, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if kind == KIND_SVR_L:
        return a @ b.T
    sq_a = np.sum(a * a, axis=1)[:, None]
    sq_b = np.sum(b * b, axis=1)[None, :]
    d2 = np.maximum(sq_a + sq_b - 2.0 * (a @ b.T), 0.0)
    return np.exp(-gamma * d2)


def _solve_svr_dual(k_matrix, y, c, eps, tol, max_passes):
    """Solve the epsilon-insensitive dual by two-coordinate descent.

    Works on the 2n box variables (alpha, alpha*) so the objective stays a
    smooth quadratic; the working pair combines the worst first-order
    violator with the second-order best partner, and iteration stops once
    the maximal KKT violation falls below ``tol`` or the sweep budget
    (``max_passes`` times n pair updates) runs out.

    Returns beta = alpha - alpha* and the gradient (K beta) - y.
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    astar = np.zeros(n)
    kb = np.zeros(n)  # K @ (alpha - alpha*)
    diag = np.diag(k_matrix).copy()
    tau = 1e-12
    converged = False

    for _ in range(max_passes * n):
        ng_a = y - kb - eps  # -yhat * grad, alpha half
        ng_s = y - kb + eps  # -yhat * grad, alpha* half
        up_a = np.where(alpha < c, ng_a, -np.inf)
        up_s = np.where(astar > 0, ng_s, -np.inf)
        ia, isx = int(np.argmax(up_a)), int(np.argmax(up_s))
        if up_a[ia] >= up_s[isx]:
            i_star, pi, m = False, ia, up_a[ia]
        else:
            i_star, pi, m = True, isx, up_s[isx]
        low_a = np.where(alpha > 0, ng_a, np.inf)
        low_s = np.where(astar < c, ng_s, np.inf)
        gap = m - min(float(np.min(low_a)), float(np.min(low_s)))
        if gap <= tol:
            converged = True
            break

        # in point space every feasible pair moves beta_pi and beta_pj in
        # opposite directions, so one curvature formula covers both halves
        krow = k_matrix[pi]
        curv = np.maximum(diag[pi] + diag - 2.0 * krow, tau)
        b_a = m - low_a  # inf-masked entries become -inf and drop out
        b_s = m - low_s
        score_a = np.where(b_a > 0, b_a * b_a / curv, -np.inf)
        score_s = np.where(b_s > 0, b_s * b_s / curv, -np.inf)
        ja, js = int(np.argmax(score_a)), int(np.argmax(score_s))
        if score_a[ja] >= score_s[js]:
            j_star, pj = False, ja
        else:
            j_star, pj = True, js

        grad_i = (-kb[pi] + eps + y[pi]) if i_star else (kb[pi] + eps - y[pi])
        grad_j = (-kb[pj] + eps + y[pj]) if j_star else (kb[pj] + eps - y[pj])
        zi = astar[pi] if i_star else alpha[pi]
        zj = astar[pj] if j_star else alpha[pj]
        a = max(diag[pi] + diag[pj] - 2.0 * k_matrix[pi, pj], tau)
        if i_star == j_star:
            delta = -(grad_i - grad_j) / a
            delta = min(max(delta, -zi, zj - c), c - zi, zj)
            zi_new, zj_new = zi + delta, zj - delta
        else:
            delta = -(grad_i + grad_j) / a
            delta = min(max(delta, -zi, -zj), c - zi, c - zj)
            zi_new, zj_new = zi + delta, zj + delta
        if delta == 0.0:
            break
        if i_star:
            astar[pi] = zi_new
        else:
            alpha[pi] = zi_new
        if j_star:
            astar[pj] = zj_new
        else:
            alpha[pj] = zj_new
        dbi = (zi - zi_new) if i_star else (zi_new - zi)
        dbj = (zj - zj_new) if j_star else (zj_new - zj)
        kb += dbi * krow + dbj * k_matrix[pj]
    if not converged:
        warnings.warn("SVR solver stopped before reaching tolerance")
    return alpha - astar, kb - y


def _svr_bias(beta, grad, y, c, eps):
    kb = grad + y  # (K beta)_i
    free = (np.abs(beta) > 0) & (np.abs(beta) < c)
    if free.any():
        return float(np.mean(y[free] - kb[free] - eps * np.sign(beta[free])))
    lo, hi = -np.inf, np.inf
    for i in range(beta.shape[0]):
        center = y[i] - kb[i]
        if beta[i] >= c:
            hi = min(hi, center - eps)
        elif beta[i] <= -c:
            lo = max(lo, center + eps)
        else:  # beta_i == 0
            lo = max(lo, center - eps)
            hi = min(hi, center + eps)
    if math.isinf(lo) and math.isinf(hi):
        return 0.0
    if math.isinf(lo):
        return float(hi)
    if math.isinf(hi):
        return float(lo)
    return float(0.5 * (lo + hi))


def _train_svr(spec: LearnerSpec, x: np.ndarray, y: np.ndarray) -> SvrModel:
    n, f = x.shape
    p = spec.svr
    if p.c <= 0 or p.epsilon < 0 or p.tolerance <= 0 or p.max_passes < 1:
        raise ValueError("invalid SVR parameters")
    gamma = 0.0
    if spec.kind == KIND_SVR_R:
        gamma = p.gamma if p.gamma is not None else 1.0 / f
        if gamma <= 0:
            raise ValueError("gamma must be > 0")
    k = _kernel(spec.kind, gamma, x, x)
    beta, grad = _solve_svr_dual(k, y, p.c, p.epsilon, p.tolerance, p.max_passes)
    bias = _svr_bias(beta, grad, y, p.c, p.epsilon)
    sv = beta != 0.0
    return SvrModel(
        spec=spec,
        feature_count=f,
        support_x=x[sv].copy(),
        coef=beta[sv].copy(),
        bias=bias,
        gamma=gamma,
    )


# --------------------------------------------------------------------------
# Public interface
# --------------------------------------------------------------------------

def train(spec: LearnerSpec, x, y) -> RegressionModel:
    """Fit one base learner on (x, y). A constant y yields a constant predictor."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    if x.ndim != 2:
        raise ValueError("x must be a 2-d matrix")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"x has {x.shape[0]} rows but y has {y.shape[0]}")
    if x.shape[0] == 0:
        raise ValueError("cannot train on empty data")
    if spec.kind == KIND_RF:
        return _train_rf(spec, x, y)
    return _train_svr(spec, x, y)


def predict(model: RegressionModel, x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.feature_count:
        raise ValueError(
            f"expected input width {model.feature_count}, got "
            f"{x.shape[1] if x.ndim == 2 else 'non-matrix'}"
        )
    if isinstance(model, ForestModel):
        if x.shape[0] == 0:
            return np.empty(0)
        return _forest_predict(
            model.features, model.thresholds, model.lefts, model.rights,
            model.values, model.offsets, x,
        )
    if model.support_x.shape[0] == 0:
        return np.full(x.shape[0], model.bias)
    k = _kernel(model.spec.kind, model.gamma, x, model.support_x)
    return k @ model.coef + model.bias


def rf_importance(model: RegressionModel) -> np.ndarray:
    """Impurity importance: per-feature variance-reduction sums, normalised to 1."""
    if not isinstance(model, ForestModel):
        raise ValueError("importance is only defined for random forest models")
    total = model.importance_raw.sum()
    if total <= 0:
        return np.zeros_like(model.importance_raw)
    return model.importance_raw / total


# --------------------------------------------------------------------------
# Serialization (deterministic npz: fixed zip timestamps)
# --------------------------------------------------------------------------

def _write_det_npz(path, meta: dict, arrays: dict) -> None:
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        items = [("__meta__", np.array(json.dumps(meta, sort_keys=True)))]
        items += sorted(arrays.items())
        for name, arr in items:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr))
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def _read_det_npz(path):
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"].ravel()[0]))
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    return meta, arrays


def _spec_to_dict(spec: LearnerSpec) -> dict:
    return {
        "kind": spec.kind,
        "rf": {"n_trees": spec.rf.n_trees, "mtry": spec.rf.mtry,
               "min_node_size": spec.rf.min_node_size, "seed": spec.rf.seed},
        "svr": {"c": spec.svr.c, "epsilon": spec.svr.epsilon,
                "gamma": spec.svr.gamma, "tolerance": spec.svr.tolerance,
                "max_passes": spec.svr.max_passes},
    }


def _spec_from_dict(d: dict) -> LearnerSpec:
    return LearnerSpec(kind=d["kind"], rf=RfParams(**d["rf"]), svr=SvrParams(**d["svr"]))


def save_model(model: RegressionModel, path) -> None:
    meta = {
        "format": MODEL_FORMAT,
        "spec": _spec_to_dict(model.spec),
        "feature_count": model.feature_count,
    }
    if isinstance(model, ForestModel):
        meta["state"] = "forest"
        arrays = {
            "features": model.features, "thresholds": model.thresholds,
            "lefts": model.lefts, "rights": model.rights,
            "values": model.values, "offsets": model.offsets,
            "importance_raw": model.importance_raw,
        }
    else:
        meta["state"] = "svr"
        meta["bias"] = model.bias
        meta["gamma"] = model.gamma
        arrays = {"support_x": model.support_x, "coef": model.coef}
    _write_det_npz(path, meta, arrays)


def load_model(path) -> RegressionModel:
    meta, arrays = _read_det_npz(path)
    if meta.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a {MODEL_FORMAT} file")
    spec = _spec_from_dict(meta["spec"])
    if meta["state"] == "forest":
        return ForestModel(spec=spec, feature_count=meta["feature_count"], **arrays)
    return SvrModel(
        spec=spec, feature_count=meta["feature_count"],
        support_x=arrays["support_x"], coef=arrays["coef"],
        bias=meta["bias"], gamma=meta["gamma"],
    )
