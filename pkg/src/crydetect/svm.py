"""RBF-kernel support vector machine trained with SMO.

The solver follows the maximal-violating-pair scheme with second-order
working-set selection; training points are visited in a seeded random order so
that ties between equally good pairs are broken reproducibly.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .preprocess import CRYING, NOT_CRYING

log = logging.getLogger(__name__)

DEEP_DIM = 1000
ACOUSTIC_DIM = 102
EMBED_DIM = 128
TAU = 1e-12


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=np.float64)
        sd = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std


@dataclass
class SvmModel:
    support_vectors: np.ndarray  # already standardized
    dual_coef: np.ndarray  # alpha_i * y_i
    bias: float
    gamma: float
    C: float
    scaler: Scaler
    info: dict = field(default_factory=dict, compare=False)

    @property
    def n_features(self) -> int:
        return self.support_vectors.shape[1]

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        K = rbf_kernel(self.scaler.transform(X), self.support_vectors, self.gamma)
        return K @ self.dual_coef + self.bias


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    return np.exp(-gamma * np.maximum(d2, 0.0))


def default_gamma(Xs) -> float:
    v = float(np.var(Xs))
    return 1.0 / (Xs.shape[1] * v) if v > 0 else 1.0


@dataclass
class SmoResult:
    alpha: np.ndarray
    rho: float
    n_iter: int
    gap: float
    objective: list


def smo_solve(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3, max_iter: int | None = None,
              track_objective: bool = False) -> SmoResult:
    """Solve min 1/2 a'Qa - e'a s.t. 0 <= a <= C, y'a = 0 with Q = yy' * K.

    Stops once the maximal KKT violation gap m(a) - M(a) falls below ``tol``.
    ``objective`` holds the dual value e'a - 1/2 a'Qa after each step when tracked.
    """
    n = len(y)
    y = y.astype(np.float64)
    Q = K * np.outer(y, y)
    diag = np.diag(K).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    max_iter = max(10_000_000, 100 * n) if max_iter is None else max_iter
    history = []
    it = 0
    gap = np.inf
    while it < max_iter:
        yG = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            gap = 0.0
            break
        cand = np.where(up, yG, -np.inf)
        i = int(np.argmax(cand))
        m = cand[i]
        M = np.min(np.where(low, yG, np.inf))
        gap = m - M
        if gap < tol:
            break
        b = m - yG
        a = diag[i] + diag - 2.0 * K[i]
        a = np.where(a > 0, a, TAU)
        score = np.where(low & (b > 0), -(b * b) / a, np.inf)
        j = int(np.argmin(score))

        ai_old, aj_old = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(K[i, i] + K[j, j] + 2.0 * Q[i, j], TAU)
            delta = (-G[i] - G[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            quad = max(K[i, i] + K[j, j] - 2.0 * Q[i, j], TAU)
            delta = (G[i] - G[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        G += Q[:, i] * (ai - ai_old) + Q[:, j] * (aj - aj_old)
        it += 1
        if track_objective:
            history.append(0.5 * alpha.sum() - 0.5 * alpha @ G)
    else:
        log.warning("SMO stopped after %d iterations with gap %.3g", it, gap)

    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yG[free].mean())
    else:
        at_up = alpha >= C
        at_low = alpha <= 0
        ub_mask = ((y > 0) & at_low) | ((y < 0) & at_up)
        lb_mask = ((y > 0) & at_up) | ((y < 0) & at_low)
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
        rho = float((ub + lb) / 2.0) if np.isfinite(ub + lb) else float(ub if np.isfinite(ub) else lb)
    return SmoResult(alpha, rho, it, float(gap), history)


def fit(X, y, C: float = 1.0, gamma: float | None = None, tol: float = 1e-3, rng_seed: int = 0,
        track_objective: bool = False) -> SvmModel:
    """Fit an RBF SVM on labels in {+1, -1}; features are standardized with training statistics."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n, d) with one label per row")
    if len(y) < 2 or not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("SVM training needs at least one example of each class")
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ValueError("labels must be +1 or -1")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature values")
    scaler = Scaler.fit(X)
    Xs = scaler.transform(X)
    gamma = default_gamma(Xs) if gamma is None else float(gamma)

    order = np.random.default_rng(rng_seed).permutation(len(y))
    Xp, yp = Xs[order], y[order]
    res = smo_solve(rbf_kernel(Xp, Xp, gamma), yp, C, tol, track_objective=track_objective)
    alpha = np.empty_like(res.alpha)
    alpha[order] = res.alpha
    sv = alpha > 0
    if not sv.any():
        raise ArithmeticError("SMO produced no support vectors")
    info = {"n_iter": res.n_iter, "gap": res.gap, "alpha": alpha, "objective": res.objective}
    return SvmModel(Xs[sv], (alpha * y)[sv], -res.rho, gamma, float(C), scaler, info)


def decision(model: SvmModel, x) -> float:
    return float(model.decision_function(np.asarray(x, dtype=np.float64)[None, :])[0])


def predict(model: SvmModel, x) -> tuple[str, float]:
    """Label and decision value; a zero decision value counts as not_crying."""
    f = decision(model, x)
    return (CRYING if f > 0 else NOT_CRYING), f


def predict_labels(model: SvmModel, X) -> np.ndarray:
    """Vectorized +1 / -1 prediction (0 maps to -1)."""
    return np.where(model.decision_function(X) > 0, 1, -1)


def kkt_residuals(model: SvmModel, X, y) -> np.ndarray:
    """Per-point KKT violation at the fitted solution (0 where satisfied)."""
    alpha = model.info["alpha"]
    yf = np.asarray(y, dtype=np.float64) * model.decision_function(X)
    C = model.C
    lower = alpha <= 0
    upper = alpha >= C
    free = ~lower & ~upper
    r = np.zeros(len(alpha))
    r[lower] = np.maximum(0.0, 1.0 - yf[lower])
    r[upper] = np.maximum(0.0, yf[upper] - 1.0)
    r[free] = np.abs(yf[free] - 1.0)
    return r


def concat_dsf_af(deep, acoustic) -> np.ndarray:
    """Deep-spectrum features followed by acoustic features (1000 + 102)."""
    deep = np.asarray(deep, dtype=np.float64).ravel()
    acoustic = np.asarray(acoustic, dtype=np.float64).ravel()
    if deep.shape != (DEEP_DIM,) or acoustic.shape != (ACOUSTIC_DIM,):
        raise ValueError(f"expected {DEEP_DIM} deep and {ACOUSTIC_DIM} acoustic values, "
                         f"got {deep.size} and {acoustic.size}")
    return np.concatenate([deep, acoustic])


def load_embeddings(path, keys=None, dim: int = EMBED_DIM) -> tuple[list[str], np.ndarray]:
    """Read externally extracted embeddings keyed by window.

    CSV files carry ``window_key,e0..e127`` rows; ``.npz`` files hold ``keys``
    and ``embeddings`` arrays. When ``keys`` is given the returned matrix is
    aligned to that order.
    """
    path = os.fspath(path)
    if path.endswith(".npz"):
        with np.load(path, allow_pickle=False) as z:
            file_keys = [str(k) for k in z["keys"]]
            mat = np.asarray(z["embeddings"], dtype=np.float64)
    else:
        file_keys, rows = [], []
        with open(path, newline="") as f:
            for lineno, row in enumerate(csv.reader(f), 1):
                if not row or (lineno == 1 and row[0] in ("window_key", "key")):
                    continue
                if len(row) - 1 != dim:
                    raise ValueError(f"{path}:{lineno}: expected {dim} embedding values, got {len(row) - 1}")
                file_keys.append(row[0])
                rows.append([float(v) for v in row[1:]])
        mat = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    if mat.ndim != 2 or mat.shape[1] != dim:
        raise ValueError(f"{path}: embeddings must be {dim} wide, got shape {mat.shape}")
    if keys is None:
        return file_keys, mat
    index = {k: i for i, k in enumerate(file_keys)}
    missing = [k for k in keys if k not in index]
    if missing:
        shown = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
        raise KeyError(f"{path}: {len(missing)} window keys have no embedding: {shown}")
    return list(keys), mat[[index[k] for k in keys]]


def save_model(model: SvmModel, path) -> None:
    """Write ``<path>.json`` (descriptor) and ``<path>.bin`` (little-endian float64 blob)."""
    path = os.fspath(path)
    parts = {
        "support_vectors": model.support_vectors,
        "dual_coef": model.dual_coef,
        "scaler_mean": model.scaler.mean,
        "scaler_std": model.scaler.std,
    }
    offsets, blobs, pos = {}, [], 0
    for name, arr in parts.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        offsets[name] = {"offset": pos, "shape": list(a.shape)}
        blobs.append(a.tobytes())
        pos += a.nbytes
    desc = {"kind": "svm_rbf", "bias": model.bias, "gamma": model.gamma, "C": model.C,
            "n_support": int(len(model.dual_coef)), "arrays": offsets}
    with open(path + ".json", "w") as f:
        json.dump(desc, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(path + ".bin", "wb") as f:
        for b in blobs:
            f.write(b)


def load_model(path) -> SvmModel:
    path = os.fspath(path)
    with open(path + ".json") as f:
        desc = json.load(f)
    blob = open(path + ".bin", "rb").read()
    arrs = {}
    for name, meta in desc["arrays"].items():
        count = int(np.prod(meta["shape"]))
        arrs[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=meta["offset"]).reshape(meta["shape"]).copy()
    return SvmModel(arrs["support_vectors"], arrs["dual_coef"], float(desc["bias"]), float(desc["gamma"]),
                    float(desc["C"]), Scaler(arrs["scaler_mean"], arrs["scaler_std"]))
