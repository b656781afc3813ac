"""Small builders shared by the tests."""

import numpy as np

from cagrain.core import Factor, Mechanism, Occasion, OccasionGraph, OccasionId, ProductMechanism


def oid(name, t=0):
    return OccasionId(name, t)


def random_table(rng, n_in, n_out, sparsity=0.0):
    t = rng.random((n_in, n_out))
    if sparsity:
        t[rng.random(t.shape) < sparsity] = 0.0
        t[np.arange(n_in), rng.integers(0, n_out, n_in)] += 0.1
    return t / t.sum(axis=1, keepdims=True)


def random_deterministic(rng, n_bits, n_out=2):
    ins = [oid(f"i{k}") for k in range(n_bits)]
    outs = rng.integers(0, n_out, 1 << n_bits)
    return Mechanism.deterministic(ins, [2] * n_bits, n_out, outs)


def product(factors_spec, sizes):
    """``[(out_name, Mechanism), ...]`` -> ProductMechanism over outputs at t=1."""
    factors = []
    sizes = dict(sizes)
    for name, m in factors_spec:
        o = oid(name, 1)
        sizes[o] = m.n_out
        factors.append(Factor((o,), (m.n_out,), m))
    return ProductMechanism(factors, sizes)


def chain_graph(tables, sizes):
    """X0 -> X1 -> ... with X0 uniform and ``tables[k]`` the map X_k -> X_{k+1}."""
    occs = [Occasion(oid("x0", 0), sizes[0], Mechanism.prior(np.full(sizes[0], 1.0 / sizes[0])))]
    for k, t in enumerate(tables):
        prev = oid(f"x{k}", k)
        occs.append(Occasion(oid(f"x{k + 1}", k + 1), sizes[k + 1], Mechanism.from_table([prev], [sizes[k]], t)))
    return OccasionGraph(occs)
