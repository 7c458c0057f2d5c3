"""Token-level confidence check via a uniformity test.

When a model is sure of an answer, the top-k token probabilities are
skewed toward the chosen token; when it is guessing, they flatten out.
So for each probed fact we take the top-k logprobs, softmax them into
a k-way distribution, and test that distribution against the discrete
uniform with a Kolmogorov-Smirnov statistic:

    D = max_i | C_i - i/k |      C_i = cumulative sum of the
                                 ascending-sorted probabilities

with the asymptotic tail probability

    p = 2 * sum_{m>=1} (-1)^(m-1) exp(-2 m^2 k D^2)

truncated once terms drop below 1e-12 and clamped to [0, 1]. A small p
rejects uniformity, meaning the model was confident; p >= alpha keeps
the uniform hypothesis alive and the fact gets flagged.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .core import AlignmentVerdict, FactProbeError, ProbeResult, Stage, TokenDistribution, TokenMode

SUM_TOLERANCE = 1e-6
_TERM_CUTOFF = 1e-12
# below this, every series term is ~1 and the true tail value is 1.0
# to double precision, so summing is pointless
_MIN_LAMBDA = 0.01


class NonFiniteInput(FactProbeError):
    """Logits or probabilities contain NaN or infinity."""


class InvalidDistribution(FactProbeError):
    """Probabilities are negative, too few, or do not sum to one."""


class NoDistributions(FactProbeError):
    """The probe carried no token distributions; the caller keeps the
    alignment flag and records that the uniformity check was skipped."""


def normalize_topk(logprobs: Iterable[float]) -> np.ndarray:
    """Softmax raw top-k logprobs (or logits) into probabilities.

    Shift-invariant by construction: adding any constant to every input
    changes nothing. All-equal inputs give the exact uniform 1/k.
    """
    arr = np.asarray(list(logprobs), dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise InvalidDistribution("need a flat list of at least two values")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("logprobs must be finite")
    shifted = arr - arr.max()
    weights = np.exp(shifted)
    return weights / weights.sum()


def ks_uniform_pvalue(probs: Sequence[float]) -> tuple[float, float]:
    """KS statistic and p-value of probs against the discrete uniform.

    Returns (D, p). Exactly uniform input gives (0.0, 1.0).
    """
    arr = np.asarray(list(probs), dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise InvalidDistribution("need at least two probabilities")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("probabilities must be finite")
    if np.any(arr < 0.0):
        raise InvalidDistribution("probabilities must be non-negative")
    total = float(arr.sum())
    if abs(total - 1.0) > SUM_TOLERANCE:
        raise InvalidDistribution(f"probabilities sum to {total!r}, not 1")

    k = arr.size
    cumulative = np.cumsum(np.sort(arr))
    # same cumsum for the reference grid, so exactly-uniform input
    # cancels elementwise and D comes out 0.0, not an ulp above it
    grid = np.cumsum(np.full(k, 1.0 / k))
    d = float(np.max(np.abs(cumulative - grid)))
    return d, _kolmogorov_tail(math.sqrt(k) * d)


def _kolmogorov_tail(lam: float) -> float:
    if lam < _MIN_LAMBDA:
        return 1.0
    total = 0.0
    sign = 1.0
    m = 1
    while True:
        term = math.exp(-2.0 * m * m * lam * lam)
        if term < _TERM_CUTOFF:
            break
        total += sign * term
        sign = -sign
        m += 1
    return min(1.0, max(0.0, 2.0 * total))


def distribution_pvalue(dist: TokenDistribution) -> float:
    """p-value for one token position's top-k logprobs."""
    _, p = ks_uniform_pvalue(normalize_topk(dist.logprobs))
    return p


def pooled_pvalue(distributions: Sequence[TokenDistribution], mode: TokenMode) -> float:
    """Pool per-token p-values into the fact-level confidence signal.

    FIRST looks only at the first generated token (the answer's head
    usually carries the commitment), MIN_P takes the most confident
    position, MEAN_P averages.
    """
    if not distributions:
        raise NoDistributions("no token distributions to test")
    if mode == TokenMode.FIRST:
        return distribution_pvalue(distributions[0])
    pvalues = [distribution_pvalue(d) for d in distributions]
    if mode == TokenMode.MIN_P:
        return min(pvalues)
    if mode == TokenMode.MEAN_P:
        return float(sum(pvalues) / len(pvalues))
    raise ValueError(f"unknown token mode: {mode!r}")


def uniformity_verdict(probe: ProbeResult, alpha: float,
                       mode: TokenMode = TokenMode.FIRST) -> AlignmentVerdict:
    """Second-stage verdict for one probed fact.

    flag 0 when p < alpha (uniformity rejected, the model was
    confident), flag 1 when p >= alpha (answer looks like guessing).
    """
    if not probe.token_distributions:
        raise NoDistributions("probe carries no token distributions")
    p = pooled_pvalue(probe.token_distributions, mode)
    return AlignmentVerdict(fact_key=probe.fact.key, stage=Stage.UNIFORMITY,
                            flag=0 if p < alpha else 1, detail=f"p={p:.6g}")


def escalate(alignment_flag: int, uniformity_flag: int) -> int:
    """Combine the stages: the confidence check may raise a flag to 1,
    never lower one back to 0."""
    if alignment_flag not in (0, 1) or uniformity_flag not in (0, 1):
        raise ValueError("flags must be 0 or 1")
    return max(alignment_flag, uniformity_flag)
