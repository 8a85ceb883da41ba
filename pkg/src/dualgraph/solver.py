"""ADMM for dual-graph regularized low-rank + sparse separation.

Model::

    min_{L,S}  ||D - L - S||_1 + lambda1 ||L||_{W,*} + lambda2 ||S||_1
               + gamma1/2 tr(L^T Phi_s L) + gamma2/2 tr(L Phi_t L^T)

split with U = L and V = D - L - S. Scaled multipliers ``U_tilde`` and
``V_tilde`` enter the augmented Lagrangian through
``rho1/2 ||U - L + U_tilde||^2 + rho2/2 ||D - L - S + V + V_tilde||^2``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import prox
from .graph import laplacian_quadratic
from .video_io import VideoMatrix, load_dgm, save_dgm

log = logging.getLogger(__name__)

UPDATE_MODES = ("paper", "consistent")


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Solver hyperparameters.

    ``None`` entries are data-dependent and filled in by :meth:`resolve`:
    ``lambda1 = sqrt(max(n, m))``, ``sigma_scale`` = a quarter of the largest
    singular value of D, ``dt = 0.9 / (2 gamma1 + 2 gamma2 + rho1 + rho2)``.

    The weight scale has to sit well below the dominant (background)
    singular value, or the background gets shrunk, and above roughly
    ``lambda1 / rho1``, or the multiplier directions get protected and the
    iteration cycles.
    """

    lambda1: float | None = None
    lambda2: float = 0.1
    gamma1: float = 0.1
    gamma2: float = 0.1
    rho1: float = 1.0
    rho2: float = 1.0
    dt: float | None = None
    sigma_scale: float | None = None
    T_out: int = 200
    T_in: int = 5
    tol: float = 1e-4
    update_mode: str = "paper"

    def __post_init__(self):
        if self.lambda1 is not None and self.lambda1 < 0:
            raise ValueError("lambda1 must be nonnegative")
        if self.lambda2 < 0:
            raise ValueError("lambda2 must be nonnegative")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("gamma1 and gamma2 must be nonnegative")
        if self.rho1 <= 0 or self.rho2 <= 0:
            raise ValueError("rho1 and rho2 must be positive")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.sigma_scale is not None and self.sigma_scale <= 0:
            raise ValueError("sigma_scale must be positive")
        if self.T_out < 0 or self.T_in < 0:
            raise ValueError("T_out and T_in must be nonnegative")
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")
        if self.update_mode not in UPDATE_MODES:
            raise ValueError(f"update_mode must be one of {UPDATE_MODES}")

    def default_dt(self) -> float:
        # normalized Laplacian spectra are bounded by 2
        return 0.9 / (2 * self.gamma1 + 2 * self.gamma2 + self.rho1 + self.rho2)

    def resolve(self, D: np.ndarray) -> SolverConfig:
        """Fill in data-dependent defaults."""
        D = _as_array(D)
        updates = {}
        if self.lambda1 is None:
            updates["lambda1"] = float(np.sqrt(max(D.shape)))
        if self.sigma_scale is None:
            s_max = float(np.linalg.norm(D, 2)) if D.size else 0.0
            updates["sigma_scale"] = s_max / 4.0 if s_max > 0 else 1.0
        if self.dt is None:
            updates["dt"] = self.default_dt()
        return replace(self, **updates)

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class SolverState:
    L: np.ndarray
    S: np.ndarray
    U: np.ndarray
    V: np.ndarray
    U_tilde: np.ndarray
    V_tilde: np.ndarray
    weights: np.ndarray
    iter: int = 0

    @classmethod
    def initial(cls, D: np.ndarray) -> SolverState:
        D = _as_array(D)
        zeros = np.zeros_like(D)
        return cls(
            L=D.copy(),
            S=zeros.copy(),
            U=D.copy(),
            V=zeros.copy(),
            U_tilde=zeros.copy(),
            V_tilde=zeros.copy(),
            weights=np.ones(min(D.shape)),
        )

    def copy(self) -> SolverState:
        return SolverState(
            self.L.copy(), self.S.copy(), self.U.copy(), self.V.copy(),
            self.U_tilde.copy(), self.V_tilde.copy(), self.weights.copy(), self.iter,
        )

    def is_finite(self) -> bool:
        return all(
            np.all(np.isfinite(x))
            for x in (self.L, self.S, self.U, self.V, self.U_tilde, self.V_tilde)
        )


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    rel_dL: float
    rel_dS: float
    residual_UL: float
    residual_DLSV: float
    objective: float


@dataclass
class SeparationResult:
    L: np.ndarray
    S: np.ndarray
    iterations: int
    converged: bool
    history: list[IterationRecord] = field(default_factory=list)
    state: SolverState | None = None
    config: SolverConfig | None = None


def _as_array(D) -> np.ndarray:
    return D.data if isinstance(D, VideoMatrix) else np.asarray(D, dtype=float)


def penalty_objective(L, state: SolverState, D, Phi_s, Phi_t, cfg: SolverConfig) -> float:
    """The smooth L-subproblem objective minimized by :func:`update_L`."""
    D = _as_array(D)
    val = 0.5 * cfg.rho1 * np.sum((state.U - L + state.U_tilde) ** 2)
    val += 0.5 * cfg.rho2 * np.sum((D - L - state.S + state.V + state.V_tilde) ** 2)
    if cfg.gamma1 and Phi_s is not None:
        val += 0.5 * cfg.gamma1 * laplacian_quadratic(Phi_s, L, "left")
    if cfg.gamma2 and Phi_t is not None:
        val += 0.5 * cfg.gamma2 * laplacian_quadratic(Phi_t, L, "right")
    return float(val)


def gradient_L(state: SolverState, D, Phi_s, Phi_t, cfg: SolverConfig, L=None) -> np.ndarray:
    D = _as_array(D)
    L = state.L if L is None else L
    g = cfg.rho1 * (L - state.U - state.U_tilde)
    g += cfg.rho2 * (L - D + state.S - state.V - state.V_tilde)
    # a missing Laplacian counts as the zero matrix
    if cfg.gamma1 and Phi_s is not None:
        g += cfg.gamma1 * (Phi_s @ L)
    if cfg.gamma2 and Phi_t is not None:
        g += cfg.gamma2 * (Phi_t @ L.T).T
    return g


def update_L(state: SolverState, D, Phi_s, Phi_t, cfg: SolverConfig) -> np.ndarray:
    """``T_in`` gradient steps on the L-subproblem, starting from ``state.L``."""
    dt = cfg.dt if cfg.dt is not None else cfg.default_dt()
    L = state.L
    for _ in range(cfg.T_in):
        with np.errstate(over="ignore", invalid="ignore"):
            L = L - dt * gradient_L(state, D, Phi_s, Phi_t, cfg, L=L)
        if not np.all(np.isfinite(L)):
            raise DivergenceError("divergent L-update, reduce dt")
    if cfg.T_in and not np.isfinite(penalty_objective(L, state, D, Phi_s, Phi_t, cfg)):
        raise DivergenceError("divergent L-update, reduce dt")
    return L


def update_S(L, D, cfg: SolverConfig, V=None, V_tilde=None) -> np.ndarray:
    """Paper mode: shrink(D - L, lambda2).

    Consistent mode minimizes the S-part of the augmented Lagrangian,
    giving shrink(D - L + V + V_tilde, lambda2 / rho2).
    """
    D = _as_array(D)
    if cfg.update_mode == "paper":
        return prox.shrink(D - L, cfg.lambda2)
    if V is None or V_tilde is None:
        raise ValueError("consistent mode needs V and V_tilde")
    return prox.shrink(D - L + V + V_tilde, cfg.lambda2 / cfg.rho2)


def update_U(state: SolverState, cfg: SolverConfig) -> tuple[np.ndarray, np.ndarray]:
    """Weighted SVT of L - U_tilde, then refresh the weights for the next pass."""
    L_hat = state.L - state.U_tilde
    U, factors = prox.weighted_svt(L_hat, state.weights, cfg.lambda1 / cfg.rho1)
    weights = prox.compute_weights(factors.singulars, cfg.sigma_scale)
    return U, weights


def update_V(state: SolverState, D, cfg: SolverConfig) -> np.ndarray:
    """shrink(L + S - D - V_tilde, 1 / rho2): the prox of ||V||_1 at scale 1/rho2."""
    D = _as_array(D)
    return prox.shrink(state.L + state.S - D - state.V_tilde, 1.0 / cfg.rho2)


def update_multipliers(state: SolverState, D) -> tuple[np.ndarray, np.ndarray]:
    D = _as_array(D)
    U_tilde = state.U_tilde + (state.U - state.L)
    V_tilde = state.V_tilde + (D - state.L - state.S + state.V)
    return U_tilde, V_tilde


def relative_change(new: np.ndarray, old: np.ndarray) -> float:
    """||new - old||_F / ||old||_F, or the absolute change when old is zero."""
    num = float(np.linalg.norm(new - old))
    den = float(np.linalg.norm(old))
    return num / den if den > 0 else num


def converged(prev: tuple[np.ndarray, np.ndarray], curr: tuple[np.ndarray, np.ndarray],
              tol: float) -> bool:
    (L0, S0), (L1, S1) = prev, curr
    nL, nS = np.linalg.norm(L0), np.linalg.norm(S0)
    if nL == 0 or nS == 0:
        return False
    return bool(np.linalg.norm(L1 - L0) / nL < tol and np.linalg.norm(S1 - S0) / nS < tol)


def model_objective(L, S, D, Phi_s, Phi_t, cfg: SolverConfig, weights) -> float:
    D = _as_array(D)
    val = np.abs(D - L - S).sum() + cfg.lambda2 * np.abs(S).sum()
    val += cfg.lambda1 * prox.weighted_nuclear_norm(L, weights)
    if cfg.gamma1 and Phi_s is not None:
        val += 0.5 * cfg.gamma1 * laplacian_quadratic(Phi_s, L, "left")
    if cfg.gamma2 and Phi_t is not None:
        val += 0.5 * cfg.gamma2 * laplacian_quadratic(Phi_t, L, "right")
    return float(val)


def step(state: SolverState, D, Phi_s, Phi_t, cfg: SolverConfig) -> SolverState:
    """One outer iteration in the fixed order L, S, U (+weights), V, multipliers."""
    D = _as_array(D)
    new = state.copy()
    new.L = update_L(new, D, Phi_s, Phi_t, cfg)
    new.S = update_S(new.L, D, cfg, V=new.V, V_tilde=new.V_tilde)
    new.U, new.weights = update_U(new, cfg)
    new.V = update_V(new, D, cfg)
    new.U_tilde, new.V_tilde = update_multipliers(new, D)
    new.iter = state.iter + 1
    return new


def _check_shapes(D: np.ndarray, Phi_s, Phi_t) -> None:
    n, m = D.shape
    if Phi_s is not None and Phi_s.shape != (n, n):
        raise ValueError(f"spatial Laplacian is {Phi_s.shape}, expected {(n, n)}")
    if Phi_t is not None and Phi_t.shape != (m, m):
        raise ValueError(f"temporal Laplacian is {Phi_t.shape}, expected {(m, m)}")


def run(D, Phi_s, Phi_t, cfg: SolverConfig | None = None, state: SolverState | None = None,
        checkpoint_dir: str | Path | None = None, checkpoint_every: int = 0) -> SeparationResult:
    """Run the outer ADMM loop until both relative changes drop below ``tol``.

    Pass ``state`` (e.g. from :func:`load_checkpoint`) to resume; the
    iteration budget ``T_out`` counts from that state's ``iter``.
    """
    D = _as_array(D)
    cfg = (cfg or SolverConfig()).resolve(D)
    if Phi_s is None:
        Phi_s = sp.csr_matrix((D.shape[0], D.shape[0]))
    if Phi_t is None:
        Phi_t = sp.csr_matrix((D.shape[1], D.shape[1]))
    _check_shapes(D, Phi_s, Phi_t)
    state = SolverState.initial(D) if state is None else state.copy()
    history: list[IterationRecord] = []
    done = False
    while state.iter < cfg.T_out:
        new = step(state, D, Phi_s, Phi_t, cfg)
        if not new.is_finite():
            raise DivergenceError(f"non-finite solver state at iteration {new.iter}")
        rec = IterationRecord(
            iter=new.iter,
            rel_dL=relative_change(new.L, state.L),
            rel_dS=relative_change(new.S, state.S),
            residual_UL=float(np.linalg.norm(new.U - new.L)),
            residual_DLSV=float(np.linalg.norm(D - new.L - new.S + new.V)),
            objective=model_objective(new.L, new.S, D, Phi_s, Phi_t, cfg, new.weights),
        )
        history.append(rec)
        done = converged((state.L, state.S), (new.L, new.S), cfg.tol)
        state = new
        log.debug("iter %d dL=%.3e dS=%.3e obj=%.6g", rec.iter, rec.rel_dL, rec.rel_dS,
                  rec.objective)
        if checkpoint_dir is not None and checkpoint_every and state.iter % checkpoint_every == 0:
            save_checkpoint(checkpoint_dir, state, cfg)
        if done:
            break
    if checkpoint_dir is not None:
        save_checkpoint(checkpoint_dir, state, cfg)
    return SeparationResult(state.L, state.S, len(history), done, history, state, cfg)


_STATE_FIELDS = ("L", "S", "U", "V", "U_tilde", "V_tilde")


def save_checkpoint(directory: str | Path, state: SolverState, cfg: SolverConfig) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in _STATE_FIELDS:
        save_dgm(directory / f"{name}.dgm", getattr(state, name))
    meta = {
        "iter": state.iter,
        "weights": [float(w) for w in state.weights],
        "config_hash": cfg.config_hash(),
        "config": asdict(cfg),
    }
    (directory / "checkpoint.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(directory: str | Path) -> tuple[SolverState, SolverConfig]:
    directory = Path(directory)
    meta = json.loads((directory / "checkpoint.json").read_text())
    mats = {name: load_dgm(directory / f"{name}.dgm").data for name in _STATE_FIELDS}
    state = SolverState(**mats, weights=np.asarray(meta["weights"], dtype=float),
                        iter=int(meta["iter"]))
    cfg = SolverConfig(**meta["config"])
    if cfg.config_hash() != meta["config_hash"]:
        raise ValueError(f"{directory}: config hash mismatch")
    return state, cfg


HISTORY_COLUMNS = ("iter", "rel_dL", "rel_dS", "residual_UL", "residual_DLSV", "objective")


def write_history_csv(path: str | Path, history: list[IterationRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for rec in history:
            writer.writerow([rec.iter] + [repr(float(getattr(rec, c))) for c in HISTORY_COLUMNS[1:]])
