"""Dynamic graph-structure policy.

Each factor column gets a categorical distribution over agents from a
hypernetwork-generated action layer. A structure is drawn by tallying d_max
categorical draws per column (multinomial counts) and binarizing to an
adjacency. The induced distribution over support sets, its normalization,
importance ratios on stored counts, and entropy all live here.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .graphs import Adjacency
from .nn import HyperNetwork, ParamVector

PROB_TOL = 1e-9
MAX_MODE_ENUMERATION = 200_000


def validate_edge_probs(probs: np.ndarray) -> np.ndarray:
    """Check an agents-by-factors matrix of per-column distributions."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("edge probabilities must be a 2-d matrix")
    if np.any(probs < 0.0):
        raise ValueError("edge probabilities must be nonnegative")
    if probs.shape[1] > 0:
        sums = probs.sum(axis=0)
        if np.any(np.abs(sums - 1.0) > PROB_TOL):
            raise ValueError("every factor column must sum to 1")
    return probs


@dataclass(frozen=True)
class GraphSample:
    """Sampled per-factor agent counts plus the binarized adjacency."""

    counts: np.ndarray
    adjacency: Adjacency
    d_max: int

    def __post_init__(self):
        counts = np.ascontiguousarray(np.asarray(self.counts, dtype=np.int64))
        object.__setattr__(self, "counts", counts)
        if counts.ndim != 2:
            raise ValueError("counts must be a 2-d matrix")
        if self.d_max < 1:
            raise ValueError("d_max must be >= 1")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        if counts.shape[1] > 0 and np.any(counts.sum(axis=0) != self.d_max):
            raise ValueError("every column's counts must sum to d_max")
        if not np.array_equal(self.adjacency.entries, (counts >= 1).astype(np.int8)):
            raise ValueError("adjacency must binarize the counts")


class StructurePolicy:
    """Per-column softmax over agents through a hypernetwork action layer.

    The hypernetwork maps the global state to the weights and bias of a
    linear layer applied to each agent's hidden state; a softmax down each
    factor column turns the resulting logits into edge probabilities.
    """

    def __init__(self, params: ParamVector, name: str, n_agents: int, n_factors: int,
                 hidden_dim: int, state_dim: int, hyper_hidden: int,
                 rng: np.random.Generator):
        if n_agents < 1 or n_factors < 0:
            raise ValueError("need n_agents >= 1 and n_factors >= 0")
        self.n_agents = n_agents
        self.n_factors = n_factors
        self.hidden_dim = hidden_dim
        self.hyper = HyperNetwork(params, name, state_dim, hyper_hidden,
                                  gen_in=hidden_dim, gen_out=n_factors, rng=rng)

    def edge_probabilities_batch(self, hidden: np.ndarray, states: np.ndarray) -> tuple[np.ndarray, tuple]:
        """hidden (B, n, H), states (B, S) -> per-column distributions (B, n, M)."""
        hidden = np.asarray(hidden, dtype=np.float64)
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if hidden.ndim != 3 or hidden.shape[1] != self.n_agents or hidden.shape[2] != self.hidden_dim:
            raise ValueError("hidden states must have shape (batch, n_agents, hidden_dim)")
        if states.shape[0] != hidden.shape[0]:
            raise ValueError("batch sizes of hidden states and global states differ")
        w, b, hn_cache = self.hyper.generate(states)
        logits = np.einsum("bnh,bhm->bnm", hidden, w) + b[:, None, :]
        shifted = logits - logits.max(axis=1, keepdims=True)
        expz = np.exp(shifted)
        probs = expz / expz.sum(axis=1, keepdims=True)
        return probs, (hidden, w, probs, hn_cache)

    def edge_probabilities(self, hidden: np.ndarray, state: np.ndarray) -> tuple[np.ndarray, tuple]:
        """Single-step view of the batched forward pass."""
        probs, cache = self.edge_probabilities_batch(hidden[None], np.atleast_1d(state)[None])
        return probs[0], cache

    def backward(self, dprobs: np.ndarray, cache: tuple, grads: ParamVector) -> np.ndarray:
        """Accumulate hypernetwork grads from dL/dprobs; returns dL/dhidden."""
        hidden, w, probs, hn_cache = cache
        dprobs = np.asarray(dprobs, dtype=np.float64)
        if dprobs.ndim == 2:
            dprobs = dprobs[None]
        # softmax over the agent axis: dz = p * (dp - sum_i dp_i p_i)
        dlogits = probs * (dprobs - (dprobs * probs).sum(axis=1, keepdims=True))
        dw = np.einsum("bnh,bnm->bhm", hidden, dlogits)
        db = dlogits.sum(axis=1)
        self.hyper.backward(dw, db, hn_cache, grads)
        return np.einsum("bnm,bhm->bnh", dlogits, w)


def sample_structure(probs: np.ndarray, d_max: int, rng: np.random.Generator) -> GraphSample:
    """Tally d_max categorical draws per factor column; binarize to adjacency."""
    probs = validate_edge_probs(probs)
    if d_max < 1:
        raise ValueError("d_max must be >= 1")
    n, m = probs.shape
    if m == 0:
        counts = np.zeros((n, 0), dtype=np.int64)
    else:
        counts = rng.multinomial(d_max, probs.T).T.astype(np.int64)
    return GraphSample(counts=counts,
                       adjacency=Adjacency((counts >= 1).astype(np.int8)),
                       d_max=d_max)


def greedy_structure(probs: np.ndarray, d_max: int) -> GraphSample:
    """Deterministic analogue of sampling: per-column most-likely count vector.

    Ties resolve to the lexicographically smallest count vector.
    """
    probs = validate_edge_probs(probs)
    if d_max < 1:
        raise ValueError("d_max must be >= 1")
    n, m = probs.shape
    counts = np.zeros((n, m), dtype=np.int64)
    for j in range(m):
        col = probs[:, j]
        best, best_p = None, -1.0
        for vec in _count_vectors(n, d_max):
            p = multinomial_pmf(col, vec, d_max)
            if p > best_p:
                best, best_p = vec, p
        counts[:, j] = best
    return GraphSample(counts=counts,
                       adjacency=Adjacency((counts >= 1).astype(np.int8)),
                       d_max=d_max)


def _count_vectors(n: int, total: int):
    """Nonnegative integer vectors of length n summing to total, ascending lex."""
    if math.comb(n + total - 1, n - 1) > MAX_MODE_ENUMERATION:
        raise ValueError("count-vector enumeration too large")
    for bars in itertools.combinations(range(n + total - 1), n - 1):
        prev, vec = -1, []
        for b in bars:
            vec.append(b - prev - 1)
            prev = b
        vec.append(n + total - 2 - prev)
        yield tuple(vec)


def multinomial_pmf(p: np.ndarray, counts, d_max: int) -> float:
    """P{X_1=m_1, ..., X_n=m_n} for d_max draws from distribution p.

    Evaluated in log space so large d_max cannot underflow the factorials.
    """
    p = np.asarray(p, dtype=np.float64)
    m = np.asarray(counts, dtype=np.int64)
    if p.shape != m.shape or p.ndim != 1:
        raise ValueError("p and counts must be matching vectors")
    if np.any(m < 0) or int(m.sum()) != d_max:
        raise ValueError("counts must be nonnegative and sum to d_max")
    active = m > 0
    if np.any(p[active] == 0.0):
        return 0.0
    log_coeff = math.lgamma(d_max + 1) - sum(math.lgamma(int(mi) + 1) for mi in m)
    log_p = float(np.sum(m[active] * np.log(p[active])))
    return math.exp(log_coeff + log_p)


def subpolicy_pmf(p: np.ndarray, members, d_max: int) -> float:
    """Probability that the sampled support set is exactly the given agent set.

    Sums the multinomial PMF over count vectors positive on every member and
    zero elsewhere.
    """
    p = np.asarray(p, dtype=np.float64)
    members = sorted(set(int(i) for i in members))
    if not members:
        raise ValueError("the agent set must be nonempty")
    if members[0] < 0 or members[-1] >= p.shape[0]:
        raise ValueError("agent index out of range")
    g = len(members)
    if g > d_max:
        raise ValueError("agent set larger than d_max cannot be a support")
    total = 0.0
    counts = np.zeros_like(p, dtype=np.int64)
    for extra in _count_vectors(g, d_max - g):
        counts[:] = 0
        counts[members] = np.asarray(extra, dtype=np.int64) + 1
        total += multinomial_pmf(p, counts, d_max)
    return total


def support_count(n: int, d_max: int) -> int:
    """Number of distinct count vectors for n agents and d_max draws."""
    if n < 1 or d_max < 1:
        raise ValueError("need n >= 1 and d_max >= 1")
    return math.comb(n + d_max - 1, n - 1)


def importance_ratio(probs_new: np.ndarray, probs_old: np.ndarray, counts) -> float:
    """Likelihood ratio of one factor's stored counts under new vs old probs.

    The multinomial coefficient cancels on the fixed counts, leaving the
    product of probability powers.
    """
    pn = np.asarray(probs_new, dtype=np.float64)
    po = np.asarray(probs_old, dtype=np.float64)
    m = np.asarray(counts, dtype=np.float64)
    if pn.shape != po.shape or pn.shape != m.shape:
        raise ValueError("probability and count vectors must match")
    active = m > 0
    if np.any(po[active] == 0.0):
        raise ValueError("stored counts hit zero-probability entries of the old policy")
    if np.any(pn[active] == 0.0):
        return 0.0
    return math.exp(float(np.sum(m[active] * (np.log(pn[active]) - np.log(po[active])))))


def importance_ratio_grad(probs_new: np.ndarray, probs_old: np.ndarray, counts) -> tuple[float, np.ndarray]:
    """Ratio plus its gradient in the new probabilities: d ratio/dp_i = ratio*m_i/p_i."""
    pn = np.asarray(probs_new, dtype=np.float64)
    m = np.asarray(counts, dtype=np.float64)
    ratio = importance_ratio(pn, probs_old, m)
    grad = np.zeros_like(pn)
    active = m > 0
    if ratio != 0.0:
        grad[active] = ratio * m[active] / pn[active]
    return ratio, grad


def policy_entropy(probs: np.ndarray) -> float:
    """Summed entropy of every column distribution, with 0*ln(0) := 0."""
    probs = validate_edge_probs(probs)
    pos = probs > 0.0
    terms = np.zeros_like(probs)
    terms[pos] = probs[pos] * np.log(probs[pos])
    return float(-terms.sum())


def policy_entropy_grad(probs: np.ndarray) -> np.ndarray:
    """dH/dp elementwise: -(ln p + 1) on positive entries, 0 on zero entries."""
    probs = np.asarray(probs, dtype=np.float64)
    grad = np.zeros_like(probs)
    pos = probs > 0.0
    grad[pos] = -(np.log(probs[pos]) + 1.0)
    return grad
