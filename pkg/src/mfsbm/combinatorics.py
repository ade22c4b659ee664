"""Index sets that label the terms of the moment expansion.

A term of order n with n' noise integrations is labelled by a triple
(alpha, beta, tau):

* alpha in {0,1}^n marks which of the n evaluation points attach to a noise
  integration, beta in {0,1}^n' marks which integration variables attach to a
  later one (the last entry is always 0);
* tau assigns each of the 2n' "slots" (first the ones of alpha, then the ones
  of beta) to an integration variable 1..n', every variable receiving exactly
  two slots; a slot coming from the m-th one of beta, which sits at variable
  b = pos_beta[m], must go to a variable strictly greater than b.

All indices are 1-based to match the usual way these objects are written.
"""
from __future__ import annotations

import itertools
import math
from collections.abc import Sequence
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError

__all__ = [
    "IndexPair",
    "IndexTriple",
    "TripleSet",
    "enumerate_index_pairs",
    "enumerate_tau",
    "tau_array",
    "enumerate_triples",
    "count_triples",
    "is_valid_triple",
    "bijection_forward",
    "bijection_inverse",
]


def ones_positions(bits) -> tuple:
    """1-based positions of the ones of a 0/1 tuple, increasing."""
    return tuple(i + 1 for i, b in enumerate(bits) if b)


@dataclass(frozen=True)
class IndexPair:
    alpha: tuple
    beta: tuple  # empty tuple when there are no integrations

    @property
    def n(self) -> int:
        return len(self.alpha)

    @property
    def n_prime(self) -> int:
        return len(self.beta)

    @property
    def alpha_positions(self) -> tuple:
        return ones_positions(self.alpha)

    @property
    def beta_positions(self) -> tuple:
        return ones_positions(self.beta)

    def slot_bounds(self) -> tuple:
        """Strict lower bound on tau for every slot (0 for alpha slots)."""
        return (0,) * sum(self.alpha) + self.beta_positions


@dataclass(frozen=True)
class IndexTriple:
    pair: IndexPair
    tau: tuple

    @property
    def alpha(self):
        return self.pair.alpha

    @property
    def beta(self):
        return self.pair.beta

    @property
    def n(self) -> int:
        return self.pair.n

    @property
    def n_prime(self) -> int:
        return self.pair.n_prime

    def key(self) -> tuple:
        return (self.alpha, self.beta, self.tau)


def _check_orders(n: int, n_prime: int):
    if n < 1 or n_prime < 0 or n_prime > n - 1:
        raise DomainError(f"need n >= 1 and 0 <= n' <= n-1, got n={n}, n'={n_prime}")


def enumerate_index_pairs(n: int, n_prime: int) -> list:
    """All admissible (alpha, beta) in lexicographic order."""
    _check_orders(n, n_prime)
    if n_prime == 0:
        return [IndexPair((0,) * n, ())]
    out = []
    for alpha in itertools.product((0, 1), repeat=n):
        a = sum(alpha)
        for head in itertools.product((0, 1), repeat=n_prime - 1):
            if a + sum(head) == 2 * n_prime:
                out.append(IndexPair(alpha, head + (0,)))
    return out


@lru_cache(maxsize=512)
def _tau_array_cached(alpha: tuple, beta: tuple) -> np.ndarray:
    pair = IndexPair(alpha, beta)
    n_prime = pair.n_prime
    n_slots = 2 * n_prime
    if n_prime == 0:
        return np.zeros((1, 0), dtype=np.int8)
    if len(pair.slot_bounds()) != n_slots:
        return np.zeros((0, n_slots), dtype=np.int8)
    bounds = np.array(pair.slot_bounds())
    # assign variables 1..n' in turn; variable k picks two still-free slots whose bound is < k
    partial = np.zeros((1, n_slots), dtype=np.int8)
    for k in range(1, n_prime + 1):
        allowed = np.flatnonzero(bounds < k)
        blocks = []
        for i, j in itertools.combinations(allowed, 2):
            ok = (partial[:, i] == 0) & (partial[:, j] == 0)
            if ok.any():
                block = partial[ok].copy()
                block[:, i] = k
                block[:, j] = k
                blocks.append(block)
        if not blocks:
            return np.zeros((0, n_slots), dtype=np.int8)
        partial = np.concatenate(blocks)
    order = np.lexsort(partial.T[::-1])
    out = partial[order]
    out.setflags(write=False)
    return out


def tau_array(pair: IndexPair) -> np.ndarray:
    """All admissible tau for ``pair`` as a read-only int8 array, one row per map, sorted."""
    return _tau_array_cached(tuple(pair.alpha), tuple(pair.beta))


def enumerate_tau(pair: IndexPair) -> list:
    return [tuple(int(v) for v in row) for row in tau_array(pair)]


class TripleSet(Sequence):
    """Lazy, ordered view of all triples of given (n, n').

    Triples are materialised on access; ``blocks`` exposes the raw
    (pair, tau array) layout for vectorised consumers.
    """

    def __init__(self, n: int, n_prime: int):
        _check_orders(n, n_prime)
        self.n, self.n_prime = n, n_prime
        self.blocks = [(p, tau_array(p)) for p in enumerate_index_pairs(n, n_prime)]
        self.blocks = [(p, t) for p, t in self.blocks if len(t)]
        self._offsets = np.cumsum([0] + [len(t) for _, t in self.blocks])

    def __len__(self):
        return int(self._offsets[-1])

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        b = int(np.searchsorted(self._offsets, i, side="right")) - 1
        pair, taus = self.blocks[b]
        return IndexTriple(pair, tuple(int(v) for v in taus[i - self._offsets[b]]))

    def __iter__(self):
        for pair, taus in self.blocks:
            for row in taus:
                yield IndexTriple(pair, tuple(int(v) for v in row))


def enumerate_triples(n: int, n_prime: int) -> TripleSet:
    return TripleSet(n, n_prime)


def count_triples(n: int, n_prime: int, max_bits: int | None = None) -> int:
    """Closed-form size n!(n-1)! / (2^n' (n-n')! (n-n'-1)!).

    Exact integer arithmetic; with ``max_bits`` set, values that would not
    fit in a signed integer of that width raise OverflowError.
    """
    _check_orders(n, n_prime)
    num = math.factorial(n) * math.factorial(n - 1)
    den = 2 ** n_prime * math.factorial(n - n_prime) * math.factorial(n - n_prime - 1)
    value = num // den
    if max_bits is not None and value >= 2 ** (max_bits - 1):
        raise OverflowError(f"count {n},{n_prime} does not fit in {max_bits} bits")
    return value


def is_valid_triple(triple: IndexTriple) -> bool:
    alpha, beta, tau = triple.alpha, triple.beta, triple.tau
    n, n_prime = len(alpha), len(beta)
    if n < 1 or not 0 <= n_prime <= n - 1:
        return False
    if any(b not in (0, 1) for b in alpha + beta):
        return False
    if n_prime == 0:
        return sum(alpha) == 0 and tau == ()
    if beta[-1] != 0 or sum(alpha) + sum(beta) != 2 * n_prime or len(tau) != 2 * n_prime:
        return False
    if any(not 1 <= k <= n_prime for k in tau):
        return False
    if any(tau.count(k) != 2 for k in range(1, n_prime + 1)):
        return False
    bounds = triple.pair.slot_bounds()
    return all(k > b for k, b in zip(tau, bounds))


def bijection_forward(triple: IndexTriple):
    """Split off the first coalescence: returns (i, j, reduced_triple).

    i < j are the positions (in alpha) of the two slots sent to variable 1;
    the reduced triple has order n-1 and n'-1 integrations.
    """
    if not is_valid_triple(triple) or triple.n_prime < 1:
        raise DomainError("forward map needs a valid triple with n' >= 1")
    alpha, beta, tau = triple.alpha, triple.beta, triple.tau
    a = sum(alpha)
    j1, j2 = [s + 1 for s, k in enumerate(tau) if k == 1]
    if j2 > a:
        raise DomainError("variable 1 must be fed by two alpha slots")
    pos = triple.pair.alpha_positions
    i, j = pos[j1 - 1], pos[j2 - 1]
    new_alpha = tuple(b for p, b in enumerate(alpha, start=1) if p not in (i, j)) + (beta[0],)
    new_beta = beta[1:]
    new_tau = tuple(k - 1 for s, k in enumerate(tau, start=1) if s not in (j1, j2))
    return i, j, IndexTriple(IndexPair(new_alpha, new_beta), new_tau)


def bijection_inverse(i: int, j: int, reduced: IndexTriple) -> IndexTriple:
    """Inverse of :func:`bijection_forward`."""
    if not is_valid_triple(reduced):
        raise DomainError("reduced triple is not valid")
    n = reduced.n + 1
    if not 1 <= i < j <= n:
        raise DomainError(f"need 1 <= i < j <= {n}")
    rest, first_beta = list(reduced.alpha[:-1]), reduced.alpha[-1]
    alpha = rest[:]
    alpha.insert(i - 1, 1)
    alpha.insert(j - 1, 1)
    beta = (first_beta,) + reduced.beta
    old = iter(k + 1 for k in reduced.tau)
    tau = []
    for p, b in enumerate(alpha, start=1):
        if b:
            tau.append(1 if p in (i, j) else next(old))
    tau.extend(old)  # the slot of beta[0] (if any) then the remaining beta slots, in order
    out = IndexTriple(IndexPair(tuple(alpha), beta), tuple(tau))
    if not is_valid_triple(out):
        raise DomainError("inverse produced an invalid triple")
    return out
