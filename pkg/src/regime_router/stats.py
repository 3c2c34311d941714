"""Statistical kernel: margins, per-query AUC, normal-CDF calibration,
a tail-probability check, Kendall tau-b, McNemar, and Cohen's kappa.

All functions are pure. Score pools arrive as sequences of floats; the
gold passage score is kept separate from the pool throughout, so AUC and
margin read as "gold versus distractors".
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


@dataclass(frozen=True)
class MarginRecord:
    """Per-query separation margins and AUC under both query embeddings.

    sigma_q / sigma_b are the population standard deviations of the pool
    scores under the question embedding and the relation-sentence
    embedding respectively; ``sigma_pool`` aliases the question-side value.
    ``degenerate`` is set when either pool has zero spread.
    """

    query_id: str
    s_q: float
    s_b: float
    sigma_q: float
    sigma_b: float
    auc_q: float
    auc_b: float
    degenerate: bool = False

    @property
    def sigma_pool(self) -> float:
        return self.sigma_q


@dataclass(frozen=True)
class CalibrationFit:
    r_squared: float
    inversion_accuracy: float
    n: int
    degenerate: bool = False


@dataclass(frozen=True)
class TailBoundResult:
    """Empirical tail mass versus the reported lower-bound formula.

    ``bound`` is 1 / (1 + (t - 0.5)^2 / sigma^2), the form this harness
    reports; ``classical_upper`` is the textbook one-sided bound
    sigma^2 / (sigma^2 + (t - 0.5)^2) on the same tail, emitted alongside
    because the two forms disagree in direction.
    """

    empirical: float
    bound: float
    satisfied: bool
    classical_upper: float


def separation_margin(gold_score: float, pool_scores) -> tuple[float, float]:
    """Gold score minus pool mean, and the pool's population stddev.

    sigma == 0.0 signals a degenerate (constant) pool; callers flag it.
    """
    pool = np.asarray(pool_scores, dtype=float)
    if pool.size == 0:
        raise ValueError("pool_scores must be non-empty")
    if not np.all(np.isfinite(pool)) or not math.isfinite(gold_score):
        raise ValueError("scores must be finite")
    return float(gold_score - pool.mean()), float(pool.std())


def per_query_auc(gold_score: float, pool_scores) -> float:
    """Fraction of the pool strictly below gold, plus half the ties.

    >>> per_query_auc(0.9, [0.1, 0.2, 0.3])
    1.0
    >>> per_query_auc(0.5, [0.5, 0.5])
    0.5
    """
    pool = np.asarray(pool_scores, dtype=float)
    if pool.size == 0:
        raise ValueError("pool_scores must be non-empty")
    below = int(np.sum(pool < gold_score))
    tied = int(np.sum(pool == gold_score))
    return (below + 0.5 * tied) / pool.size


def phi(z: float) -> float:
    """Standard normal CDF via erf."""
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def _pairwise_sign_agreement(pred: np.ndarray, obs: np.ndarray, block: int = 512) -> float:
    """Fraction of pairs where sign(pred_i - pred_j) == sign(obs_i - obs_j).

    Pairs where either difference is exactly zero are excluded. Blockwise
    to keep memory bounded at n ~ 10^4.
    """
    n = pred.size
    agree = 0
    counted = 0
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        dp = np.sign(pred[lo:hi, None] - pred[None, :])
        do = np.sign(obs[lo:hi, None] - obs[None, :])
        mask = (dp != 0) & (do != 0)
        # Keep only pairs (i, j) with i < j globally.
        cols = np.arange(n)[None, :]
        rows = np.arange(lo, hi)[:, None]
        mask &= rows < cols
        agree += int(np.sum((dp == do) & mask))
        counted += int(np.sum(mask))
    return agree / counted if counted else 0.0


def calibration_fit(margins, aucs) -> CalibrationFit:
    """Fit quality of predicted = phi(S_i / sigma_i) against empirical AUC.

    margins: sequence of (S, sigma) pairs. r_squared is 1 - SS_res/SS_tot;
    inversion_accuracy is pairwise sign agreement between predicted and
    observed AUC differences, zero-sign pairs excluded.
    """
    pairs = [(float(s), float(sig)) for s, sig in margins]
    obs = np.asarray(aucs, dtype=float)
    if len(pairs) != obs.size:
        raise ValueError("margins and aucs must align")
    if obs.size < 3:
        raise ValueError("need n >= 3")
    pred = np.array([phi(s / sig) if sig > 0 else 0.5 for s, sig in pairs])
    ss_res = float(np.sum((obs - pred) ** 2))
    ss_tot = float(np.sum((obs - obs.mean()) ** 2))
    # Constant observations leave no variance to explain; the mean can
    # still carry rounding noise, so test the values, not ss_tot.
    degenerate = bool(np.all(obs == obs[0]))
    r2 = 0.0 if degenerate else 1.0 - ss_res / ss_tot
    return CalibrationFit(
        r_squared=r2,
        inversion_accuracy=_pairwise_sign_agreement(pred, obs),
        n=int(obs.size),
        degenerate=degenerate,
    )


def cantelli_check(aucs, sigma: float, t: float) -> TailBoundResult:
    """Evaluate the reported tail bound and its classical counterpart.

    empirical = fraction of aucs strictly above t;
    bound = 1 / (1 + (t - 0.5)^2 / sigma^2);
    satisfied = empirical >= bound.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    arr = np.asarray(aucs, dtype=float)
    empirical = float(np.mean(arr > t)) if arr.size else 0.0
    ratio = (t - 0.5) ** 2 / sigma**2
    bound = 1.0 / (1.0 + ratio)
    classical = sigma**2 / (sigma**2 + (t - 0.5) ** 2)
    return TailBoundResult(
        empirical=empirical,
        bound=bound,
        satisfied=empirical >= bound,
        classical_upper=classical,
    )


def _tie_sums(values: np.ndarray) -> tuple[int, int, int]:
    """(sum t(t-1)/2, sum t(t-1)(t-2), sum t(t-1)(2t+5)) over tie groups."""
    _, counts = np.unique(values, return_counts=True)
    t = counts.astype(np.int64)
    pairs = int(np.sum(t * (t - 1)) // 2)
    triples = int(np.sum(t * (t - 1) * (t - 2)))
    v = int(np.sum(t * (t - 1) * (2 * t + 5)))
    return pairs, triples, v


def kendall_tau(a, b) -> tuple[float, float]:
    """Kendall tau-b with tie correction; p by normal approximation.

    Returns (nan, nan) when either input is completely tied (tau-b
    undefined).
    """
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.size != y.size:
        raise ValueError("inputs must have equal length")
    n = int(x.size)
    if n < 2:
        raise ValueError("need length >= 2")

    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(n, k=1)
    prod = dx[iu] * dy[iu]
    concordant = int(np.sum(prod > 0))
    discordant = int(np.sum(prod < 0))

    n0 = n * (n - 1) // 2
    n1, triples_x, vx = _tie_sums(x)
    n2, triples_y, vy = _tie_sums(y)
    if n1 == n0 or n2 == n0:
        return (math.nan, math.nan)

    tau = (concordant - discordant) / math.sqrt((n0 - n1) * (n0 - n2))

    # Variance of C - D under the null, with tie correction.
    v0 = n * (n - 1) * (2 * n + 5)
    var = (v0 - vx - vy) / 18.0
    if n > 2:
        var += triples_x * triples_y / (9.0 * n * (n - 1) * (n - 2))
    var += (2.0 * n1) * (2.0 * n2) / (2.0 * n * (n - 1))
    if var <= 0:
        return (tau, 1.0)
    z = (concordant - discordant) / math.sqrt(var)
    p = 2.0 * (1.0 - phi(abs(z)))
    return (tau, min(1.0, p))


def mcnemar(wins: int, losses: int) -> dict[str, float]:
    """Paired-outcome test on discordant counts.

    p_exact: two-sided exact binomial, 2 * min(P(X <= m), P(X >= m))
    capped at 1, X ~ Binomial(wins + losses, 0.5), m = min(wins, losses).
    p_chi2: survival of (wins - losses)^2 / (wins + losses) under
    chi-square(1). p_exact_one_sided (the single tail P(X <= m)) is
    emitted as a diagnostic because published tables are sometimes
    one-sided.
    """
    if wins < 0 or losses < 0:
        raise ValueError("counts must be non-negative")
    n = wins + losses
    if n == 0:
        return {"p_exact": 1.0, "p_chi2": 1.0, "p_exact_one_sided": 1.0}
    m = min(wins, losses)
    denom = 1 << n
    below = sum(math.comb(n, i) for i in range(0, m + 1))
    above = sum(math.comb(n, i) for i in range(m, n + 1))
    one_sided = Fraction(below, denom)
    p_exact = 2 * min(one_sided, Fraction(above, denom))
    p_exact = min(p_exact, Fraction(1))

    stat = (wins - losses) ** 2 / n
    p_chi2 = math.erfc(math.sqrt(stat / 2.0))  # chi-square(1) survival
    return {
        "p_exact": float(p_exact),
        "p_chi2": p_chi2,
        "p_exact_one_sided": float(one_sided),
    }


def cohen_kappa(labels_a, labels_b) -> float:
    """Chance-corrected agreement between two label sequences."""
    a = list(labels_a)
    b = list(labels_b)
    if len(a) != len(b):
        raise ValueError("label sequences must align")
    if not a:
        raise ValueError("need at least one pair")
    n = len(a)
    observed = sum(1 for x, y in zip(a, b) if x == y) / n
    cats = set(a) | set(b)
    expected = sum((a.count(c) / n) * (b.count(c) / n) for c in cats)
    if expected == 1.0:
        return 1.0 if observed == 1.0 else 0.0
    return (observed - expected) / (1.0 - expected)
