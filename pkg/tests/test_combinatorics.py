import itertools
import math

import pytest

from mfsbm.combinatorics import (IndexPair, IndexTriple, bijection_forward, bijection_inverse, count_triples,
                                 enumerate_index_pairs, enumerate_tau, enumerate_triples, is_valid_triple)
from mfsbm.errors import DomainError


def brute_pairs(n, n_prime):
    out = []
    for alpha in itertools.product((0, 1), repeat=n):
        for beta in itertools.product((0, 1), repeat=n_prime):
            if n_prime and beta[-1] != 0:
                continue
            if sum(alpha) + sum(beta) == 2 * n_prime:
                out.append((alpha, beta))
    return out


def brute_taus(alpha, beta):
    """All maps slot -> variable taking each variable twice, with beta slots pointing below their owner."""
    n_prime = len(beta)
    if n_prime == 0:
        return [()]
    owners = [i + 1 for i, b in enumerate(beta) if b]
    a = sum(alpha)
    found = []
    for tau in itertools.product(range(1, n_prime + 1), repeat=2 * n_prime):
        if any(tau.count(k) != 2 for k in range(1, n_prime + 1)):
            continue
        if all(tau[a + i] > owners[i] for i in range(len(owners))):
            found.append(tau)
    return found


def brute_triples(n, n_prime):
    return sorted((alpha, beta, tau) for alpha, beta in brute_pairs(n, n_prime) for tau in brute_taus(alpha, beta))


def as_key(tr):
    return tr.alpha, tr.beta, tr.tau


TABLE_TRIPLE = IndexTriple(IndexPair((1, 0, 1, 1), (1, 0)), (1, 2, 1, 2))
TABLE_REDUCED = IndexTriple(IndexPair((0, 1, 1), (0,)), (1, 1))


def test_listed_pair_sets():
    assert [(p.alpha, p.beta) for p in enumerate_index_pairs(3, 0)] == [((0, 0, 0), ())]
    assert {(p.alpha, p.beta) for p in enumerate_index_pairs(3, 1)} == {
        ((1, 1, 0), (0,)), ((1, 0, 1), (0,)), ((0, 1, 1), (0,))}
    assert [(p.alpha, p.beta) for p in enumerate_index_pairs(3, 2)] == [((1, 1, 1), (1, 0))]


@pytest.mark.parametrize("n", range(1, 7))
def test_pairs_match_brute_force(n):
    for n_prime in range(n):
        got = [(p.alpha, p.beta) for p in enumerate_index_pairs(n, n_prime)]
        assert got == sorted(brute_pairs(n, n_prime))


def test_tau_examples():
    assert [t for t in enumerate_tau(IndexPair((1, 1), (0,)))] == [(1, 1)]
    taus = enumerate_tau(IndexPair((1, 1, 1), (1, 0)))
    assert len(taus) == 3
    assert sorted(taus) == brute_taus((1, 1, 1), (1, 0))
    assert all(t[3] == 2 for t in taus)
    assert enumerate_tau(IndexPair((0, 0, 0), ())) == [()]


@pytest.mark.parametrize("n", range(1, 6))
def test_triples_match_brute_force(n):
    for n_prime in range(n):
        got = [as_key(tr) for tr in enumerate_triples(n, n_prime)]
        assert got == brute_triples(n, n_prime)


def test_count_examples():
    assert count_triples(3, 2) == 3
    assert count_triples(5, 2) == 60
    assert count_triples(4, 2) == math.factorial(4) * math.factorial(3) // (4 * 2) == 18
    assert len(enumerate_triples(4, 2)) == 18
    assert len(enumerate_triples(3, 1)) == 3
    for n in range(1, 9):
        assert len(enumerate_triples(n, 0)) == 1
        if n >= 2:
            assert count_triples(n, 1) == n * (n - 1) // 2
    assert count_triples(6, 5) == 2700


def test_count_is_exact_for_large_orders():
    n = 20
    expected = math.factorial(n) * math.factorial(n - 1) // (2 ** 19 * math.factorial(1) * math.factorial(0))
    assert count_triples(n, 19) == expected
    assert count_triples(n, 19) > 2 ** 64
    with pytest.raises(OverflowError):
        count_triples(n, 19, max_bits=64)
    assert count_triples(5, 2, max_bits=64) == 60


def test_recursion_identity():
    for n in range(2, 13):
        for n_prime in range(1, n):
            assert count_triples(n, n_prime) == n * (n - 1) // 2 * count_triples(n - 1, n_prime - 1)


def test_orders_out_of_range():
    for args in [(3, 3), (3, -1), (0, 0)]:
        with pytest.raises(DomainError):
            enumerate_triples(*args)
        with pytest.raises(DomainError):
            count_triples(*args)


def test_enumeration_order_is_lexicographic_and_valid():
    triples = list(enumerate_triples(5, 3))
    keys = [as_key(tr) for tr in triples]
    assert keys == sorted(keys) and len(set(keys)) == len(keys)
    for tr in triples:
        assert is_valid_triple(tr)
        first = [s + 1 for s, k in enumerate(tr.tau) if k == 1]
        assert max(first) <= sum(tr.alpha)


def test_lazy_indexing_matches_iteration():
    ts = enumerate_triples(5, 3)
    listed = list(ts)
    assert [ts[i] for i in range(len(ts))] == listed
    assert ts[-1] == listed[-1]
    assert ts[3:6] == listed[3:6]


def test_worked_example():
    assert is_valid_triple(TABLE_TRIPLE)
    i, j, reduced = bijection_forward(TABLE_TRIPLE)
    assert (i, j) == (1, 4)
    assert reduced == TABLE_REDUCED
    assert bijection_inverse(1, 4, TABLE_REDUCED) == TABLE_TRIPLE


def test_smallest_case():
    (only,) = list(enumerate_triples(2, 1))
    (base,) = list(enumerate_triples(1, 0))
    assert bijection_forward(only) == (1, 2, base)
    assert bijection_inverse(1, 2, base) == only


@pytest.mark.parametrize("n", range(2, 7))
def test_bijection_round_trips(n):
    for n_prime in range(1, n):
        image = set()
        for tr in enumerate_triples(n, n_prime):
            i, j, reduced = bijection_forward(tr)
            assert bijection_inverse(i, j, reduced) == tr
            image.add((i, j, as_key(reduced)))
        expected = {(i, j, as_key(r)) for i in range(1, n + 1) for j in range(i + 1, n + 1)
                    for r in enumerate_triples(n - 1, n_prime - 1)}
        assert image == expected
        for i, j, key in expected:
            reduced = IndexTriple(IndexPair(key[0], key[1]), key[2])
            assert bijection_forward(bijection_inverse(i, j, reduced)) == (i, j, reduced)


def test_bijection_errors():
    (base,) = list(enumerate_triples(3, 0))
    with pytest.raises(DomainError):
        bijection_forward(base)
    with pytest.raises(DomainError):
        bijection_inverse(2, 2, TABLE_REDUCED)
    with pytest.raises(DomainError):
        bijection_inverse(1, 5, TABLE_REDUCED)
    with pytest.raises(DomainError):
        bijection_inverse(1, 2, IndexTriple(IndexPair((1, 1), (1,)), (1, 1)))
