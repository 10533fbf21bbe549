"""Per-method score regressors: RBF epsilon-SVR solved by SMO, and a small
fully connected network, plus feature standardization and bank serialization.

One regressor is trained per segmentation method on (subset feature vector,
method score) pairs; every subset vector of a dataset carries that dataset's
method score as its target.  All regressors in a bank share one standardizer
fitted on the training subset vectors.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConvergenceError,
    DataError,
    EmptyDataError,
    FormatError,
    MissingLabelError,
    ShapeError,
    TruncationError,
)

LEARNER_KINDS = ("svr", "mlp", "mean")
HIDDEN_SIZES = (50, 30)


# --- standardization ---------------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    means: np.ndarray
    stds: np.ndarray

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return (X - self.means) / self.stds


def fit_standardizer(X) -> Standardizer:
    """Column means and sample stds; zero-variance columns get std 1 so the
    standardized column is exactly zero."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise EmptyDataError("standardizer needs a non-empty 2D matrix")
    means = X.mean(axis=0)
    stds = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.zeros(X.shape[1])
    stds = np.where(stds < 1e-12, 1.0, stds)
    return Standardizer(means=means, stds=stds)


# --- epsilon-SVR via sequential minimal optimization --------------------------

@dataclass
class SvrModel:
    support_x: np.ndarray   # (n_sv, q)
    dual_coef: np.ndarray   # (n_sv,) alpha_i - alpha_i*, each in [-C, C]
    bias: float
    gamma: float
    C: float
    epsilon: float


@dataclass
class SmoDiagnostics:
    beta: np.ndarray         # full-length dual coefficients
    bias: float
    kkt_gap: float           # final maximal-violating-pair gap
    iterations: int


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    sq = (A**2).sum(axis=1)[:, None] + (B**2).sum(axis=1)[None, :] - 2.0 * (A @ B.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


def smo_solve(K, y, C: float, epsilon: float, tol: float = 1e-3,
              max_iter: int = 100_000) -> SmoDiagnostics:
    """Solve the epsilon-insensitive dual on a precomputed kernel matrix.

    Works on the 2n-variable box/equality form (alpha stacked over alpha*)
    with maximal-violating-pair selection, second-order choice of the
    partner index, and the exact two-variable update.  Terminates when the
    pair gap drops to tol.
    """
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    S = np.concatenate([np.ones(n), -np.ones(n)])
    idx = np.concatenate([np.arange(n), np.arange(n)])
    Kdiag2 = np.tile(np.diag(K), 2)

    lam = np.zeros(2 * n)
    G = epsilon - S * np.tile(y, 2)  # gradient at lam = 0

    gap = np.inf
    it = 0
    for it in range(max_iter):
        crit = -S * G
        up = ((S > 0) & (lam < C)) | ((S < 0) & (lam > 0))
        low = ((S < 0) & (lam < C)) | ((S > 0) & (lam > 0))
        if not up.any() or not low.any():
            gap = 0.0
            break
        up_crit = np.where(up, crit, -np.inf)
        i = int(np.argmax(up_crit))
        m_val = up_crit[i]
        low_crit = np.where(low, crit, np.inf)
        M_val = float(low_crit.min())
        gap = m_val - M_val
        if gap <= tol:
            break

        # second-order selection of j: maximize squared violation over
        # curvature among eligible lower indices
        Krow_i = np.tile(K[idx[i]], 2)
        a = np.maximum(Kdiag2 + Kdiag2[i] - 2.0 * Krow_i, 1e-12)
        bvec = m_val - crit
        eligible = low & (bvec > 0)
        if not eligible.any():
            break
        score = np.where(eligible, bvec * bvec / a, -np.inf)
        j = int(np.argmax(score))

        si, sj = S[i], S[j]
        Kij = K[idx[i], idx[j]]
        quad = max(K[idx[i], idx[i]] + K[idx[j], idx[j]] - 2.0 * Kij, 1e-12)
        old_i, old_j = lam[i], lam[j]
        if si != sj:
            delta = (-G[i] - G[j]) / quad
            diff = old_i - old_j
            lam[i] = old_i + delta
            lam[j] = old_j + delta
            if diff > 0:
                if lam[j] < 0:
                    lam[j] = 0.0
                    lam[i] = diff
            else:
                if lam[i] < 0:
                    lam[i] = 0.0
                    lam[j] = -diff
            if diff > 0:
                if lam[i] > C:
                    lam[i] = C
                    lam[j] = C - diff
            else:
                if lam[j] > C:
                    lam[j] = C
                    lam[i] = C + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = old_i + old_j
            lam[i] = old_i - delta
            lam[j] = old_j + delta
            if total > C:
                if lam[i] > C:
                    lam[i] = C
                    lam[j] = total - C
                if lam[j] > C:
                    lam[j] = C
                    lam[i] = total - C
            else:
                if lam[j] < 0:
                    lam[j] = 0.0
                    lam[i] = total
                if lam[i] < 0:
                    lam[i] = 0.0
                    lam[j] = total

        d_i = lam[i] - old_i
        d_j = lam[j] - old_j
        Qi = np.tile(K[idx[i]], 2) * (S * si)
        Qj = np.tile(K[idx[j]], 2) * (S * sj)
        G += Qi * d_i + Qj * d_j

    crit = -S * G
    free = (lam > 0) & (lam < C)
    if free.any():
        bias = float(crit[free].mean())
    else:
        up = ((S > 0) & (lam < C)) | ((S < 0) & (lam > 0))
        low = ((S < 0) & (lam < C)) | ((S > 0) & (lam > 0))
        hi = crit[up].max() if up.any() else 0.0
        lo = crit[low].min() if low.any() else 0.0
        bias = float((hi + lo) / 2.0)

    beta = lam[:n] - lam[n:]
    return SmoDiagnostics(beta=beta, bias=bias, kkt_gap=float(max(gap, 0.0)),
                          iterations=it + 1)


def resolve_gamma(X, gamma) -> float:
    if gamma == "scale":
        v = float(np.asarray(X, dtype=float).var())
        q = np.atleast_2d(X).shape[1]
        return 1.0 / (q * v) if v > 1e-12 else 1.0
    g = float(gamma)
    if g <= 0:
        raise DataError(f"gamma must be positive, got {g}")
    return g


def svr_fit(X, y, C: float = 1.0, epsilon: float = 0.1, gamma="scale",
            tol: float = 1e-3, max_iter: int = 100_000) -> SvrModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0] or y.shape[0] < 1:
        raise ShapeError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise DataError("svr_fit requires finite inputs")
    if C <= 0 or epsilon < 0 or tol <= 0:
        raise DataError("require C > 0, epsilon >= 0, tol > 0")
    g = resolve_gamma(X, gamma)
    K = rbf_kernel(X, X, g)
    diag = smo_solve(K, y, C, epsilon, tol=tol, max_iter=max_iter)
    keep = np.abs(diag.beta) > 1e-12
    return SvrModel(
        support_x=X[keep].copy(),
        dual_coef=diag.beta[keep].copy(),
        bias=diag.bias,
        gamma=g, C=C, epsilon=epsilon,
    )


def svr_decision(m: SvrModel, X) -> np.ndarray:
    """Unclipped kernel expansion values."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if m.support_x.shape[0] == 0:
        return np.full(X.shape[0], m.bias)
    if X.shape[1] != m.support_x.shape[1]:
        raise ShapeError(
            f"input has {X.shape[1]} features, model expects {m.support_x.shape[1]}"
        )
    return rbf_kernel(X, m.support_x, m.gamma) @ m.dual_coef + m.bias


def svr_predict(m: SvrModel, x) -> float:
    """Kernel expansion at one point, clipped to the valid score range."""
    val = svr_decision(m, np.atleast_2d(np.asarray(x, dtype=float)))[0]
    return float(min(1.0, max(0.0, val)))


def svr_kkt_gap(m: SvrModel, X, y) -> float:
    """Recompute the maximal-violating-pair gap of a fitted model on its
    training data (support rows matched back to X by value)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n = X.shape[0]
    beta = np.zeros(n)
    used = np.zeros(m.support_x.shape[0], dtype=bool)
    for r in range(n):
        for s in range(m.support_x.shape[0]):
            if not used[s] and np.array_equal(X[r], m.support_x[s]):
                beta[r] = m.dual_coef[s]
                used[s] = True
                break
    f = rbf_kernel(X, X, m.gamma) @ beta + m.bias
    alpha = np.maximum(beta, 0.0)
    alpha_star = np.maximum(-beta, 0.0)
    lam = np.concatenate([alpha, alpha_star])
    S = np.concatenate([np.ones(n), -np.ones(n)])
    G = np.concatenate([f - y + m.epsilon - m.bias, -(f - y) + m.epsilon + m.bias])
    crit = -S * G
    up = ((S > 0) & (lam < m.C)) | ((S < 0) & (lam > 0))
    low = ((S < 0) & (lam < m.C)) | ((S > 0) & (lam > 0))
    if not up.any() or not low.any():
        return 0.0
    return float(crit[up].max() - crit[low].min())


# --- multi-layer perceptron ---------------------------------------------------

@dataclass
class MlpModel:
    weights: list            # [q x 50, 50 x 30, 30 x 1]
    biases: list
    dropout_rate: float = 0.5


def mlp_init(q: int, seed: int, dropout_rate: float = 0.5) -> MlpModel:
    """He-uniform init (+-sqrt(6/fan_in) per layer), zero biases, seeded."""
    if q < 1:
        raise ShapeError("input width must be >= 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))
    sizes = (q, *HIDDEN_SIZES, 1)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights=weights, biases=biases, dropout_rate=dropout_rate)


def _mlp_forward(m: MlpModel, X, masks=None, rate=None):
    """Returns (prediction, cache).  masks is a pair of per-unit keep masks
    shaped like the two hidden activations; kept units are scaled by
    1/(1-rate) so evaluation needs no rescaling."""
    rate = m.dropout_rate if rate is None else rate
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cache = {"X": X, "z": [], "a": [], "masks": masks, "rate": rate}
    a = X
    for layer in range(2):
        z = a @ m.weights[layer] + m.biases[layer]
        h = np.maximum(z, 0.0)
        if masks is not None:
            mask = np.asarray(masks[layer], dtype=float)
            if mask.shape != h.shape:
                raise ShapeError(
                    f"dropout mask {layer} has shape {mask.shape}, expected {h.shape}"
                )
            h = h * mask / (1.0 - rate)
        cache["z"].append(z)
        cache["a"].append(h)
        a = h
    z_out = a @ m.weights[2] + m.biases[2]
    yhat = 1.0 / (1.0 + np.exp(-z_out))
    cache["z_out"] = z_out
    cache["yhat"] = yhat
    return yhat.ravel(), cache


def mlp_predict(m: MlpModel, X) -> np.ndarray:
    yhat, _ = _mlp_forward(m, X, masks=None)
    return yhat


def mlp_loss_grad(m: MlpModel, X, y, dropout_masks=None, dropout_rate=None):
    """Mean-squared-error loss and exact backpropagation gradients.

    dropout_masks: None for evaluation, or a pair of 0/1 arrays shaped like
    the hidden activations (inverted-dropout scaling applies to kept units).
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise EmptyDataError("empty batch")
    yhat, cache = _mlp_forward(m, X, masks=dropout_masks, rate=dropout_rate)
    if yhat.shape != y.shape:
        raise ShapeError(f"{yhat.shape[0]} predictions for {y.shape[0]} targets")
    B = y.shape[0]
    err = yhat - y
    loss = float((err**2).mean())

    rate = cache["rate"]
    d_out = (2.0 / B) * err * yhat * (1.0 - yhat)  # sigmoid backward
    d_out = d_out[:, None]
    gw = [None, None, None]
    gb = [None, None, None]
    gw[2] = cache["a"][1].T @ d_out
    gb[2] = d_out.sum(axis=0)
    d = d_out @ m.weights[2].T
    for layer in (1, 0):
        if dropout_masks is not None:
            d = d * np.asarray(dropout_masks[layer], dtype=float) / (1.0 - rate)
        d = d * (cache["z"][layer] > 0.0)
        prev = cache["a"][layer - 1] if layer == 1 else cache["X"]
        gw[layer] = prev.T @ d
        gb[layer] = d.sum(axis=0)
        if layer > 0:
            d = d @ m.weights[layer].T
    return loss, gw, gb


def mlp_fit(X, y, epochs: int = 200, batch: int = 32, lr: float = 1e-3,
            seed: int = 0, dropout_rate: float = 0.5) -> MlpModel:
    """Plain mini-batch gradient descent with seeded shuffling and seeded
    per-batch dropout masks; returns the final-epoch model."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0] or y.size == 0:
        raise ShapeError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if ((y < 0) | (y > 1)).any():
        raise DataError("targets must lie in [0, 1]")
    if epochs < 0 or batch < 1 or lr <= 0 or not (0.0 <= dropout_rate < 1.0):
        raise DataError("bad training configuration")

    model = mlp_init(X.shape[1], seed, dropout_rate=dropout_rate)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))
    n = X.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            rows = order[start:start + batch]
            Xb, yb = X[rows], y[rows]
            if dropout_rate > 0.0:
                masks = (
                    (rng.random((len(rows), HIDDEN_SIZES[0])) >= dropout_rate).astype(float),
                    (rng.random((len(rows), HIDDEN_SIZES[1])) >= dropout_rate).astype(float),
                )
            else:
                masks = None
            loss, gw, gb = mlp_loss_grad(model, Xb, yb, dropout_masks=masks,
                                         dropout_rate=dropout_rate)
            if not math.isfinite(loss):
                raise ConvergenceError(f"non-finite training loss at epoch {epoch}")
            for layer in range(3):
                model.weights[layer] -= lr * gw[layer]
                model.biases[layer] -= lr * gb[layer]
    return model


# --- regressor banks -----------------------------------------------------------

@dataclass
class RegressorBank:
    kind: str
    method_ids: list
    models: list
    standardizer: Standardizer
    mlp_config: dict = field(default_factory=dict)


def method_seed(master_seed: int, method_id: str) -> int:
    """Stable per-method seed so concurrent or reordered training cannot
    change results."""
    digest = hashlib.blake2b(
        f"{master_seed}:{method_id}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little") >> 1


def train_bank(features: dict, scores, kind: str, seed: int = 0,
               svr_params: dict | None = None,
               mlp_params: dict | None = None) -> RegressorBank:
    """Fit one regressor per method on all training subset vectors.

    features: dataset_id -> (n_subsets, q') matrix of subset vectors.
    scores: an object exposing .method_ids and .value(dataset_id, method_id);
    every subset vector of a dataset carries that dataset's method score.
    """
    if kind not in LEARNER_KINDS:
        raise DataError(f"unknown learner kind {kind!r}; expected one of {LEARNER_KINDS}")
    if not features:
        raise EmptyDataError("no training datasets")
    ds_ids = sorted(features.keys())
    mats = []
    for d in ds_ids:
        mat = np.atleast_2d(np.asarray(features[d], dtype=float))
        if mat.shape[0] < 1:
            raise EmptyDataError(f"dataset {d!r} has no subset vectors")
        mats.append(mat)
    for d in ds_ids:
        for mid in scores.method_ids:
            if not scores.has(d, mid):
                raise MissingLabelError(f"no score for dataset {d!r}, method {mid!r}")

    X = np.vstack(mats)
    standardizer = fit_standardizer(X)
    Xs = standardizer.transform(X)
    counts = [m.shape[0] for m in mats]

    svr_params = dict(svr_params or {})
    mlp_params = dict(mlp_params or {})
    models = []
    for mid in scores.method_ids:
        y = np.concatenate([
            np.full(c, scores.value(d, mid)) for d, c in zip(ds_ids, counts)
        ])
        if kind == "svr":
            models.append(svr_fit(Xs, y, **svr_params))
        elif kind == "mlp":
            models.append(mlp_fit(Xs, y, seed=method_seed(seed, mid), **mlp_params))
        else:
            # dataset-level mean, matching the NMAE baseline definition
            models.append(float(np.mean([scores.value(d, mid) for d in ds_ids])))
    return RegressorBank(kind=kind, method_ids=list(scores.method_ids),
                         models=models, standardizer=standardizer,
                         mlp_config={"dropout_rate": mlp_params.get("dropout_rate", 0.5)})


def predict_dataset(bank: RegressorBank, vectors) -> np.ndarray:
    """Per-method mean of per-subset predictions, clipped to [0, 1]."""
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    if V.shape[0] < 1:
        raise EmptyDataError("no subset vectors to predict from")
    if V.shape[1] != bank.standardizer.means.shape[0]:
        raise ShapeError(
            f"vectors have {V.shape[1]} features, bank expects "
            f"{bank.standardizer.means.shape[0]}"
        )
    Vs = bank.standardizer.transform(V)
    out = np.empty(len(bank.method_ids))
    for j, model in enumerate(bank.models):
        if bank.kind == "svr":
            preds = np.clip(svr_decision(model, Vs), 0.0, 1.0)
        elif bank.kind == "mlp":
            preds = mlp_predict(model, Vs)
        else:
            preds = np.full(Vs.shape[0], model)
        out[j] = float(np.clip(preds.mean(), 0.0, 1.0))
    return out


# --- bank archives --------------------------------------------------------------

def save_bank(bank: RegressorBank, path) -> None:
    q = bank.standardizer.means.shape[0]
    lines = [f"MLBANK 1", f"kind: {bank.kind}", f"qprime: {q}",
             f"methods: {len(bank.method_ids)}"]
    lines += [f"method: {mid}" for mid in bank.method_ids]
    if bank.kind == "svr":
        lines.append("svcounts: " + " ".join(str(m.support_x.shape[0]) for m in bank.models))
    if bank.kind == "mlp":
        lines.append(f"hidden: {HIDDEN_SIZES[0]} {HIDDEN_SIZES[1]}")
        lines.append(f"dropout: {bank.mlp_config.get('dropout_rate', 0.5)!r}")
    header = "\n".join(lines) + "\n\n"

    def f8(arr):
        return np.ascontiguousarray(arr, dtype="<f8").tobytes()

    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(f8(bank.standardizer.means))
        fh.write(f8(bank.standardizer.stds))
        for m in bank.models:
            if bank.kind == "svr":
                fh.write(f8(m.support_x))
                fh.write(f8(m.dual_coef))
                fh.write(f8([m.bias, m.gamma, m.C, m.epsilon]))
            elif bank.kind == "mlp":
                for w, b in zip(m.weights, m.biases):
                    fh.write(f8(w))
                    fh.write(f8(b))
            else:
                fh.write(f8([m]))


def load_bank(path) -> RegressorBank:
    with open(path, "rb") as fh:
        blob = fh.read()
    head_end = blob.find(b"\n\n")
    if head_end < 0 or not blob.startswith(b"MLBANK 1\n"):
        raise FormatError(f"{path}: not an MLBANK archive")
    header = blob[:head_end].decode("utf-8").split("\n")
    payload = blob[head_end + 2:]

    fields = {}
    method_ids = []
    for line in header[1:]:
        key, _, val = line.partition(": ")
        if key == "method":
            method_ids.append(val)
        else:
            fields[key] = val
    kind = fields.get("kind")
    if kind not in LEARNER_KINDS:
        raise FormatError(f"{path}: unknown kind {kind!r}")
    q = int(fields["qprime"])
    n_methods = int(fields["methods"])
    if len(method_ids) != n_methods:
        raise FormatError(f"{path}: header promises {n_methods} methods, lists {len(method_ids)}")

    pos = 0

    def take(count):
        nonlocal pos
        nbytes = count * 8
        if pos + nbytes > len(payload):
            raise TruncationError(f"{path}: payload shorter than header promises")
        out = np.frombuffer(payload[pos:pos + nbytes], dtype="<f8")
        pos += nbytes
        return out

    means = take(q)
    stds = take(q)
    standardizer = Standardizer(means=means, stds=stds)
    models = []
    mlp_config = {}
    if kind == "svr":
        counts = [int(s) for s in fields["svcounts"].split()] if fields.get("svcounts") else []
        if len(counts) != n_methods:
            raise FormatError(f"{path}: svcounts does not list {n_methods} entries")
        for c in counts:
            sx = take(c * q).reshape(c, q)
            dc = take(c)
            bias, gamma, C, eps = take(4)
            models.append(SvrModel(support_x=sx, dual_coef=dc, bias=float(bias),
                                   gamma=float(gamma), C=float(C), epsilon=float(eps)))
    elif kind == "mlp":
        h1, h2 = (int(s) for s in fields["hidden"].split())
        dropout = float(fields.get("dropout", 0.5))
        mlp_config = {"dropout_rate": dropout}
        for _ in range(n_methods):
            sizes = (q, h1, h2, 1)
            weights, biases = [], []
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
                weights.append(take(fan_in * fan_out).reshape(fan_in, fan_out))
                biases.append(take(fan_out))
            models.append(MlpModel(weights=weights, biases=biases, dropout_rate=dropout))
    else:
        for _ in range(n_methods):
            models.append(float(take(1)[0]))
    if pos != len(payload):
        raise FormatError(f"{path}: {len(payload) - pos} trailing payload bytes")
    return RegressorBank(kind=kind, method_ids=method_ids, models=models,
                         standardizer=standardizer, mlp_config=mlp_config)
