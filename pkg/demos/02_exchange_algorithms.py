"""
Three ways to exchange halo data
================================

Run the same neighbor exchange with the pairwise, all-to-all and crystal
router algorithms on in-process ranks, and count messages and bytes.
"""

import numpy as np

from hipbone import ExchangePlan, crystal_partners, exchange, run_in_process

P = 6
rng = np.random.default_rng(1)

# every rank sends a random-length block to its two ring neighbors
traffic = {r: {(r - 1) % P: rng.standard_normal(rng.integers(1, 50)),
               (r + 1) % P: rng.standard_normal(rng.integers(1, 50))} for r in range(P)}


def plan(rank):
    send = {d: len(v) for d, v in traffic[rank].items()}
    recv = {s: len(traffic[s][rank]) for s in traffic if rank in traffic[s]}
    return ExchangePlan(send, recv)


def run(t, algorithm):
    t.reset_meters()
    got = exchange(t, plan(t.rank), traffic[t.rank], algorithm)
    return got, t.messages_sent, t.bytes_sent


for algorithm in ("pairwise", "alltoall", "crystalrouter"):
    results = run_in_process(P, run, algorithm)
    messages = sum(r[1] for r in results)
    volume = sum(r[2] for r in results)
    print(f"{algorithm:>14}: {messages:3d} messages, {volume:6d} bytes")

# all three deliver the same arrays
a = run_in_process(P, run, "pairwise")
c = run_in_process(P, run, "crystalrouter")
print("identical:", all(np.array_equal(a[r][0][s], c[r][0][s]) for r in range(P) for s in a[r][0]))

# the crystal router folds the rank set in half each round
for r in range(P):
    print("rank", r, "partners per fold", crystal_partners(r, P))
