"""Latent-factor models over the ratings matrix.

The text-prior model places each user/item latent vector at its review
embedding plus a Gaussian offset and fits the MAP objective

    L = - sum_i (lam_u/2)|u_i - th_i|^2 - sum_j (lam_v/2)|v_j - th_j|^2
        - sum_ij (c_ij/2)(r_ij - u_i.v_j)^2

by alternating the gradient-zero fixed-point rules (optionally damped) or
by exact per-row normal-equation solves.  Confidence c_ij is two-level:
``conf_obs`` on observed cells, ``conf_unobs`` on unobserved cells (with
rating treated as 0 there).  An SVD baseline with user-mean imputation is
provided for comparison.
"""

from __future__ import annotations

import json
import time as _time
from dataclasses import dataclass, field, replace

import numpy as np

from reviewrec.dataset import RatingsMatrix


class DivergenceError(RuntimeError):
    """Training produced a non-finite objective value."""

    def __init__(self, sweep):
        super().__init__(f"non-finite log-likelihood at sweep {sweep}; reduce 1/lambda or damping")
        self.sweep = sweep


@dataclass(frozen=True)
class MfHyperparams:
    """Hyperparameters of the MAP factorization.

    ``k`` must equal the embedding dimension of the priors.  ``lambda_u``
    and ``lambda_v`` are the offset precisions (scalars shared across
    entities unless per-entity overrides are given).  ``conf_obs`` /
    ``conf_unobs`` are the two confidence levels; ``conf_unobs = 0``
    restricts the fit to observed cells only.  ``damping`` in (0, 1] mixes
    old and new rows in fixed-point mode (1.0 applies the rule verbatim).
    """

    k: int = 10
    lambda_u: float = 1.0
    lambda_v: float = 1.0
    conf_obs: float = 1.0
    conf_unobs: float = 0.01
    max_iters: int = 200
    tol: float = 1e-8
    grad_tol: float | None = None  # when set, stop on |grad|_inf instead of delta-L
    damping: float = 1.0
    seed: int = 1
    lambda_u_per_entity: np.ndarray | None = None
    lambda_v_per_entity: np.ndarray | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.lambda_u <= 0 or self.lambda_v <= 0:
            raise ValueError("offset precisions must be positive")
        if not (self.conf_obs > self.conf_unobs >= 0):
            raise ValueError("need conf_obs > conf_unobs >= 0")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not (0 < self.damping <= 1.0):
            raise ValueError("damping must be in (0, 1]")

    def lam_u(self, n):
        if self.lambda_u_per_entity is not None:
            return np.asarray(self.lambda_u_per_entity, dtype=np.float64)
        return np.full(n, self.lambda_u)

    def lam_v(self, m):
        if self.lambda_v_per_entity is not None:
            return np.asarray(self.lambda_v_per_entity, dtype=np.float64)
        return np.full(m, self.lambda_v)


@dataclass
class LatentModel:
    """User/item latent matrices with their embedding priors."""

    U: np.ndarray  # n x k
    V: np.ndarray  # m x k
    theta_u: np.ndarray
    theta_v: np.ndarray
    hyper: MfHyperparams
    user_ids: list[str] = field(default_factory=list)
    item_ids: list[str] = field(default_factory=list)
    training_log: list = field(default_factory=list)  # (sweep, L, grad_inf, seconds)


@dataclass
class SvdModel:
    """Truncated SVD of the user-mean-imputed, per-user-centered matrix."""

    U_svd: np.ndarray  # n x k
    sigma: np.ndarray  # k, non-increasing
    V_svd: np.ndarray  # m x k
    user_means: np.ndarray
    global_mean: float
    user_ids: list[str] = field(default_factory=list)
    item_ids: list[str] = field(default_factory=list)


def predict(model: LatentModel, i: int, j: int) -> float:
    """Predicted preference: inner product of the latent rows (unclipped)."""
    n, m = model.U.shape[0], model.V.shape[0]
    if not (0 <= i < n and 0 <= j < m):
        raise IndexError(f"indices ({i}, {j}) out of range for {n} users x {m} items")
    return float(model.U[i] @ model.V[j])


def log_likelihood(model: LatentModel, R: RatingsMatrix) -> float:
    """MAP objective L; larger is better, 0 is the unconstrained maximum."""
    U, V = model.U, model.V
    n, k = U.shape
    if V.shape[1] != k or model.theta_u.shape != U.shape or model.theta_v.shape != V.shape:
        raise ValueError("model dimensions are inconsistent")
    if R.n_users != n or R.n_items != V.shape[0]:
        raise ValueError("model does not match the ratings matrix dimensions")
    h = model.hyper
    lam_u = h.lam_u(n)
    lam_v = h.lam_v(V.shape[0])
    a, b = h.conf_obs, h.conf_unobs
    with np.errstate(over="ignore", invalid="ignore"):
        L = -0.5 * float(lam_u @ np.sum((U - model.theta_u) ** 2, axis=1))
        L += -0.5 * float(lam_v @ np.sum((V - model.theta_v) ** 2, axis=1))
        preds = np.sum(U[R.user_idx] * V[R.item_idx], axis=1)
        L += -0.5 * a * float(np.sum((R.scores - preds) ** 2))
        if b > 0:
            # unobserved cells: confidence b, rating 0.
            # sum_all (u.v)^2 = tr((U^T U)(V^T V)); subtract the observed cells.
            total_sq = float(np.trace((U.T @ U) @ (V.T @ V)))
            L += -0.5 * b * (total_sq - float(np.sum(preds**2)))
    # non-finite L is returned as-is; train_parvecmf raises DivergenceError
    return L


def gradient(model: LatentModel, R: RatingsMatrix):
    """Gradient of L w.r.t. (U, V)."""
    U, V = model.U, model.V
    h = model.hyper
    a, b = h.conf_obs, h.conf_unobs
    lam_u = h.lam_u(U.shape[0])[:, None]
    lam_v = h.lam_v(V.shape[0])[:, None]
    preds = np.sum(U[R.user_idx] * V[R.item_idx], axis=1)
    # residual weight per observed cell on top of the uniform b background
    w_obs = a * (R.scores - preds) + b * preds  # = a(r - uv) - b(0 - uv)
    gU = -lam_u * (U - model.theta_u)
    gV = -lam_v * (V - model.theta_v)
    np.add.at(gU, R.user_idx, w_obs[:, None] * V[R.item_idx])
    np.add.at(gV, R.item_idx, w_obs[:, None] * U[R.user_idx])
    if b > 0:
        gU -= b * U @ (V.T @ V)
        gV -= b * V @ (U.T @ U)
    return gU, gV


def _fp_residual_term(U, V, R, a, b):
    """sum_j c_ij (r_ij - u_i.v_j) v_j for every user row at once (and no prior)."""
    with np.errstate(over="ignore", invalid="ignore"):
        preds = np.sum(U[R.user_idx] * V[R.item_idx], axis=1)
        w_obs = a * (R.scores - preds) + b * preds
        acc = np.zeros_like(U)
        np.add.at(acc, R.user_idx, w_obs[:, None] * V[R.item_idx])
        if b > 0:
            acc -= b * U @ (V.T @ V)
    return acc


def map_update_user(model: LatentModel, R: RatingsMatrix, i: int) -> np.ndarray:
    """One application of the user fixed-point rule; returns the new row."""
    if not (0 <= i < model.U.shape[0]):
        raise IndexError(f"user index {i} out of range")
    h = model.hyper
    a, b = h.conf_obs, h.conf_unobs
    lam = h.lam_u(model.U.shape[0])[i]
    mask = R.user_idx == i
    items = R.item_idx[mask]
    ratings = R.scores[mask]
    u = model.U[i]
    preds = model.V[items] @ u
    term = (a * (ratings - preds) + b * preds) @ model.V[items]
    if b > 0:
        term -= b * (model.V.T @ (model.V @ u))
    return term / lam + model.theta_u[i]


def map_update_item(model: LatentModel, R: RatingsMatrix, j: int) -> np.ndarray:
    """Item-side mirror of :func:`map_update_user`."""
    if not (0 <= j < model.V.shape[0]):
        raise IndexError(f"item index {j} out of range")
    h = model.hyper
    a, b = h.conf_obs, h.conf_unobs
    lam = h.lam_v(model.V.shape[0])[j]
    mask = R.item_idx == j
    users = R.user_idx[mask]
    ratings = R.scores[mask]
    v = model.V[j]
    preds = model.U[users] @ v
    term = (a * (ratings - preds) + b * preds) @ model.U[users]
    if b > 0:
        term -= b * (model.U.T @ (model.U @ v))
    return term / lam + model.theta_v[j]


def exact_solve_user(model: LatentModel, R: RatingsMatrix, i: int) -> np.ndarray:
    """Closed-form maximizer of L in u_i with everything else fixed.

    Solves (lam I + sum_j c_ij v_j v_j^T) u = sum_j c_ij r_ij v_j + lam th_i.
    """
    if not (0 <= i < model.U.shape[0]):
        raise IndexError(f"user index {i} out of range")
    h = model.hyper
    a, b = h.conf_obs, h.conf_unobs
    lam = h.lam_u(model.U.shape[0])[i]
    k = model.hyper.k
    mask = R.user_idx == i
    Vo = model.V[R.item_idx[mask]]
    ro = R.scores[mask]
    A = lam * np.eye(k) + (a - b) * (Vo.T @ Vo)
    if b > 0:
        A += b * (model.V.T @ model.V)
    rhs = a * (ro @ Vo) + lam * model.theta_u[i]
    return np.linalg.solve(A, rhs)


def exact_solve_item(model: LatentModel, R: RatingsMatrix, j: int) -> np.ndarray:
    h = model.hyper
    a, b = h.conf_obs, h.conf_unobs
    lam = h.lam_v(model.V.shape[0])[j]
    k = model.hyper.k
    mask = R.item_idx == j
    Uo = model.U[R.user_idx[mask]]
    ro = R.scores[mask]
    A = lam * np.eye(k) + (a - b) * (Uo.T @ Uo)
    if b > 0:
        A += b * (model.U.T @ model.U)
    rhs = a * (ro @ Uo) + lam * model.theta_v[j]
    return np.linalg.solve(A, rhs)


def train_parvecmf(
    R_train: RatingsMatrix,
    theta_u: np.ndarray,
    theta_v: np.ndarray,
    hyper: MfHyperparams,
    mode: str = "fixed_point",
    auto_damping: bool = False,
) -> LatentModel:
    """Alternate full user/item sweeps until the objective stabilizes.

    ``mode="fixed_point"`` applies the update rules directly (scaled by
    ``hyper.damping``); ``mode="exact"`` solves each row's normal equations,
    which maximizes L coordinate-block-wise and cannot decrease it.
    Residuals within a half-sweep use the pre-sweep rows of the side being
    updated; users are updated before items.

    The fixed-point rule is not a contraction in general.  With
    ``auto_damping`` a divergent run is restarted with the damping factor
    halved (down to 2**-20 of the configured value) before giving up.
    """
    if mode not in ("fixed_point", "exact"):
        raise ValueError(f"unknown training mode {mode!r}")
    if auto_damping and mode == "fixed_point":
        gamma = hyper.damping
        last_exc = None
        for _ in range(21):
            try:
                damped = replace(hyper, damping=gamma)
                model = train_parvecmf(R_train, theta_u, theta_v, damped, mode=mode)
                # a non-divergent limit cycle also calls for more damping
                if hyper.grad_tol is not None and model.training_log:
                    if model.training_log[-1][2] >= hyper.grad_tol:
                        gamma /= 2
                        continue
                return model
            except DivergenceError as exc:
                last_exc = exc
                gamma /= 2
        if last_exc is not None:
            raise last_exc
        return model
    n, m = R_train.n_users, R_train.n_items
    k = hyper.k
    theta_u = np.asarray(theta_u, dtype=np.float64)
    theta_v = np.asarray(theta_v, dtype=np.float64)
    if theta_u.shape != (n, k) or theta_v.shape != (m, k):
        raise ValueError("theta dimensions do not match the matrix / k")

    rng = np.random.default_rng(hyper.seed)
    U = theta_u + rng.uniform(-0.01, 0.01, size=(n, k))
    V = theta_v + rng.uniform(-0.01, 0.01, size=(m, k))
    model = LatentModel(U, V, theta_u, theta_v, hyper, R_train.user_ids, R_train.item_ids)

    a, b = hyper.conf_obs, hyper.conf_unobs
    lam_u = hyper.lam_u(n)[:, None]
    lam_v = hyper.lam_v(m)[:, None]
    gamma = hyper.damping
    start = _time.perf_counter()
    prev_L = log_likelihood(model, R_train)
    for sweep in range(1, hyper.max_iters + 1):
        if mode == "fixed_point":
            with np.errstate(over="ignore", invalid="ignore"):
                new_U = _fp_residual_term(model.U, model.V, R_train, a, b) / lam_u + theta_u
                model.U = (1 - gamma) * model.U + gamma * new_U
                # item side: transpose roles
                Rt = _transpose(R_train)
                new_V = _fp_residual_term(model.V, model.U, Rt, a, b) / lam_v + theta_v
                model.V = (1 - gamma) * model.V + gamma * new_V
        else:
            model.U = np.vstack([exact_solve_user(model, R_train, i) for i in range(n)])
            model.V = np.vstack([exact_solve_item(model, R_train, j) for j in range(m)])

        L = log_likelihood(model, R_train)
        if not np.isfinite(L):
            raise DivergenceError(sweep)
        gU, gV = gradient(model, R_train)
        grad_inf = max(
            float(np.max(np.abs(gU))) if gU.size else 0.0,
            float(np.max(np.abs(gV))) if gV.size else 0.0,
        )
        model.training_log.append((sweep, L, grad_inf, _time.perf_counter() - start))
        if hyper.grad_tol is not None:
            if grad_inf < hyper.grad_tol:
                break
        elif abs(L - prev_L) < hyper.tol * max(1.0, abs(L)):
            break
        prev_L = L
    return model


def _transpose(R: RatingsMatrix) -> RatingsMatrix:
    return RatingsMatrix(
        R.n_items, R.n_users, R.item_idx, R.user_idx, R.scores, R.item_ids, R.user_ids
    )


def train_svd(R_train: RatingsMatrix, k: int) -> SvdModel:
    """Rank-k truncated SVD of the imputed ratings matrix.

    Unobserved cells take the user's mean rating (global mean for users
    with no training ratings), each row is then centered by that mean, so
    the factorized matrix holds per-user deviations.
    """
    n, m = R_train.n_users, R_train.n_items
    if not (1 <= k <= min(n, m)):
        raise ValueError(f"k={k} out of range for a {n} x {m} matrix")
    dense = np.zeros((n, m))
    counts = np.zeros((n, m), dtype=bool)
    dense[R_train.user_idx, R_train.item_idx] = R_train.scores
    counts[R_train.user_idx, R_train.item_idx] = True
    per_user_n = counts.sum(axis=1)
    sums = dense.sum(axis=1)
    global_mean = float(R_train.scores.mean()) if R_train.n_entries else 0.0
    user_means = np.where(per_user_n > 0, sums / np.maximum(per_user_n, 1), global_mean)
    filled = np.where(counts, dense, user_means[:, None]) - user_means[:, None]
    Uf, s, Vt = np.linalg.svd(filled, full_matrices=False)
    return SvdModel(
        U_svd=Uf[:, :k],
        sigma=s[:k],
        V_svd=Vt[:k].T,
        user_means=user_means,
        global_mean=global_mean,
        user_ids=R_train.user_ids,
        item_ids=R_train.item_ids,
    )


def predict_svd(model: SvdModel, i: int, j: int) -> float:
    return float(model.user_means[i] + (model.U_svd[i] * model.sigma) @ model.V_svd[j])


def score_all_items(model, i: int) -> np.ndarray:
    """Predicted score for user i against every item, for either model type."""
    if isinstance(model, LatentModel):
        return model.V @ model.U[i]
    if isinstance(model, SvdModel):
        return model.user_means[i] + model.V_svd @ (model.U_svd[i] * model.sigma)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def recommend_top_n(model, i: int, N: int, exclude=frozenset()) -> list[int]:
    """Top-N item indices for user i, excluding e.g. training items.

    Scores sorted descending; ties broken by ascending item index.  Fewer
    than N candidates yields a shorter list.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    scores = score_all_items(model, i)
    candidates = np.array([j for j in range(len(scores)) if j not in exclude], dtype=np.int64)
    if len(candidates) == 0:
        return []
    order = np.lexsort((candidates, -scores[candidates]))
    return [int(candidates[t]) for t in order[:N]]


# ---------------------------------------------------------------------------
# persistence

_MF_MAGIC = b"MFCKPT 1\n"


def save_latent_model(model: LatentModel, path):
    """Binary checkpoint: version-tagged JSON header + raw float64 blocks."""
    h = model.hyper
    header = {
        "n": model.U.shape[0],
        "m": model.V.shape[0],
        "k": h.k,
        "hyper": {
            "k": h.k,
            "lambda_u": h.lambda_u,
            "lambda_v": h.lambda_v,
            "conf_obs": h.conf_obs,
            "conf_unobs": h.conf_unobs,
            "max_iters": h.max_iters,
            "tol": h.tol,
            "damping": h.damping,
            "seed": h.seed,
        },
        "user_ids": model.user_ids,
        "item_ids": model.item_ids,
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MF_MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        for M in (model.U, model.V, model.theta_u, model.theta_v):
            f.write(np.ascontiguousarray(M, dtype=np.float64).tobytes())


def load_latent_model(path) -> LatentModel:
    with open(path, "rb") as f:
        magic = f.read(len(_MF_MAGIC))
        if magic != _MF_MAGIC:
            raise ValueError(f"{path}: not a factorization checkpoint")
        size = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(size).decode("utf-8"))
        n, m, k = header["n"], header["m"], header["k"]
        mats = []
        for rows in (n, m, n, m):
            buf = f.read(rows * k * 8)
            mats.append(np.frombuffer(buf, dtype=np.float64).reshape(rows, k).copy())
    hyper = MfHyperparams(**header["hyper"])
    return LatentModel(
        U=mats[0],
        V=mats[1],
        theta_u=mats[2],
        theta_v=mats[3],
        hyper=hyper,
        user_ids=header["user_ids"],
        item_ids=header["item_ids"],
    )


def training_log_tsv(model: LatentModel) -> str:
    lines = ["sweep\tlog_likelihood\tgrad_inf_norm\tseconds"]
    for sweep, L, g, sec in model.training_log:
        lines.append(f"{sweep}\t{L!r}\t{g!r}\t{sec:.6f}")
    return "\n".join(lines) + "\n"
