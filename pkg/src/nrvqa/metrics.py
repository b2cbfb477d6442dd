"""Rank and linear agreement metrics between predicted and subjective scores.

SROCC uses average ranks for ties; KROCC is tau-b.  PLCC and RMSE are
computed after a five-parameter monotone mapping

    mapped = b1 * (1/2 - 1/exp(b2 * (pred - b3))) + b4 * pred + b5

fitted to the subjective scores by damped Gauss-Newton.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UndefinedCorrelationError(ValueError):
    """Correlation requested on a constant (zero-variance) vector."""


def _as_pair(predictions, subjective, min_n: int):
    p = np.asarray(predictions, dtype=np.float64)
    s = np.asarray(subjective, dtype=np.float64)
    if p.ndim != 1 or p.shape != s.shape:
        raise ValueError(f"score vectors must match, got {p.shape} vs {s.shape}")
    if p.size < min_n:
        raise ValueError(f"need at least {min_n} pairs, got {p.size}")
    return p, s


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank positions."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    vx = float(xc @ xc)
    vy = float(yc @ yc)
    if vx == 0.0 or vy == 0.0:
        raise UndefinedCorrelationError("constant vector has no correlation")
    return float((xc @ yc) / np.sqrt(vx * vy))


def srocc(predictions, subjective) -> float:
    """Spearman rank-order correlation (Pearson over average ranks)."""
    p, s = _as_pair(predictions, subjective, 3)
    return _pearson(average_ranks(p), average_ranks(s))


def krocc(predictions, subjective) -> float:
    """Kendall rank-order correlation, tau-b (tie-corrected)."""
    p, s = _as_pair(predictions, subjective, 3)
    n = p.size
    concordant = discordant = 0
    ties_p = ties_s = 0
    for i in range(n - 1):
        dp = p[i + 1:] - p[i]
        ds = s[i + 1:] - s[i]
        prod = dp * ds
        concordant += int(np.sum(prod > 0))
        discordant += int(np.sum(prod < 0))
        ties_p += int(np.sum((dp == 0) & (ds != 0)))
        ties_s += int(np.sum((dp != 0) & (ds == 0)))
    denom = np.sqrt(
        (concordant + discordant + ties_p) * (concordant + discordant + ties_s)
    )
    if denom == 0.0:
        raise UndefinedCorrelationError("constant vector has no correlation")
    return float((concordant - discordant) / denom)


# ---------------------------------------------------------------------------
# five-parameter monotone mapping for PLCC/RMSE
# ---------------------------------------------------------------------------

@dataclass
class LogisticFit:
    beta: np.ndarray  # (5,)
    converged: bool
    residual: float  # root-mean-square residual of the fit

    def apply(self, predictions) -> np.ndarray:
        return logistic_map(np.asarray(predictions, dtype=np.float64), self.beta)


def logistic_map(pred: np.ndarray, beta: np.ndarray) -> np.ndarray:
    b1, b2, b3, b4, b5 = beta
    with np.errstate(over="ignore", under="ignore"):
        inner = np.exp(-b2 * (pred - b3))
    return b1 * (0.5 - inner) + b4 * pred + b5


def _jacobian(pred: np.ndarray, beta: np.ndarray) -> np.ndarray:
    b1, b2, b3, b4, b5 = beta
    with np.errstate(over="ignore", under="ignore"):
        inner = np.exp(-b2 * (pred - b3))
    jac = np.empty((pred.size, 5))
    jac[:, 0] = 0.5 - inner
    jac[:, 1] = b1 * inner * (pred - b3)
    jac[:, 2] = -b1 * inner * b2
    jac[:, 3] = pred
    jac[:, 4] = 1.0
    return jac


IDENTITY_BETA = np.array([0.0, 1.0, 0.0, 1.0, 0.0])

_DAMPING_FACTOR = 10.0
_MAX_ITERATIONS = 200
_RELATIVE_TOL = 1e-10


def logistic_fit(predictions, subjective) -> LogisticFit:
    """Least-squares fit of the monotone mapping by damped Gauss-Newton.

    Starts from b1 = range(s), b2 = 1/std(pred), b3 = mean(pred), b4 = 1,
    b5 = min(s).  A non-converging fit is returned flagged with the
    identity mapping rather than raised.
    """
    pred, subj = _as_pair(predictions, subjective, 5)
    spread = float(pred.std())
    beta = np.array([
        float(subj.max() - subj.min()),
        1.0 / spread if spread > 0 else 1.0,
        float(pred.mean()),
        1.0,
        float(subj.min()),
    ])

    def rss(b):
        with np.errstate(over="ignore", invalid="ignore"):
            r = logistic_map(pred, b) - subj
            if not np.all(np.isfinite(r)):
                return np.inf
            value = float(r @ r)
        return value if np.isfinite(value) else np.inf

    current = rss(beta)
    if not np.isfinite(current):
        return LogisticFit(IDENTITY_BETA.copy(), False, _rms(pred, subj, IDENTITY_BETA))
    damping = 1e-3
    converged = False
    for _ in range(_MAX_ITERATIONS):
        residual = logistic_map(pred, beta) - subj
        jac = _jacobian(pred, beta)
        jtj = jac.T @ jac
        jtr = jac.T @ residual
        accepted = False
        for _ in range(60):
            try:
                step = np.linalg.solve(jtj + damping * np.eye(5), -jtr)
            except np.linalg.LinAlgError:
                damping *= _DAMPING_FACTOR
                continue
            trial = beta + step
            trial_rss = rss(trial)
            if trial_rss < current:
                beta = trial
                improvement = current - trial_rss
                current = trial_rss
                damping = max(damping / _DAMPING_FACTOR, 1e-12)
                accepted = True
                break
            damping *= _DAMPING_FACTOR
        if not accepted:
            # no step improves the residual: change is 0 < tol, a stall at a
            # stationary point counts as convergence
            converged = True
            break
        if improvement <= _RELATIVE_TOL * max(current, 1e-300):
            converged = True
            break
    if not converged:
        return LogisticFit(IDENTITY_BETA.copy(), False, _rms(pred, subj, IDENTITY_BETA))
    return LogisticFit(beta, True, _rms(pred, subj, beta))


def _rms(pred, subj, beta) -> float:
    r = logistic_map(pred, beta) - subj
    return float(np.sqrt(np.mean(r * r)))


def plcc_rmse(predictions, subjective, fit: LogisticFit) -> tuple[float, float]:
    """Pearson correlation and RMSE between mapped predictions and scores."""
    pred, subj = _as_pair(predictions, subjective, 3)
    mapped = fit.apply(pred)
    plcc = _pearson(mapped, subj)
    rmse = float(np.sqrt(np.mean((mapped - subj) ** 2)))
    return plcc, rmse
