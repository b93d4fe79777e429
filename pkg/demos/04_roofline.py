"""
Roofline bound and measured bandwidth
=====================================

Compare the data-motion model of the operator with a measured streaming
rate on this machine.
"""

import time

import numpy as np

from hipbone import (BoxSpec, estimate_bytes_moved, measure_streaming_rate, roofline_bound,
                     serial_operator)

# streaming kernel: 8 reads and 1 write per output
B = measure_streaming_rate(1 << 21)
print(f"streaming rate {B / 1e9:.2f} GB/s")

# bound on the operator FLOP rate for each degree
for N in (1, 3, 5, 7, 9, 11, 15):
    print(f"N={N:2d}  bound {roofline_bound(N, B) / 1e9:7.2f} GFLOPS")

# achieved bandwidth of one operator application
box = BoxSpec(8, 8, 8, 7)
op = serial_operator(box)
x = np.random.default_rng(0).standard_normal(box.N_G)
op.apply(x)
t0 = time.perf_counter()
for _ in range(5):
    op.apply(x)
elapsed = (time.perf_counter() - t0) / 5
moved = estimate_bytes_moved(box.N_G, box.N_L)
print(f"operator: {moved / elapsed / 1e9:.2f} GB/s, {100 * moved / elapsed / B:.0f}% of streaming")
