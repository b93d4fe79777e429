"""
A small CG benchmark run
========================

Solve with 100 fixed CG iterations on four in-process ranks and read the
report, then check that one rank gives the same answer.
"""

import numpy as np

from hipbone import BenchConfig, recompute, run_benchmark

cfg = BenchConfig(box=(4, 4, 2), degree=5, ranks=4, iterations=100, seed=3)
report = run_benchmark(cfg)
print(report.to_json())

# the derived numbers come straight from the other fields
print(recompute(report.to_dict()))

# residual history: squared norms, one per iteration
h = np.array(report.history)
print("r.r reduced by", h[-1] / h[0], "over", len(h) - 1, "iterations")

# the forcing depends only on global ids, so one rank solves the same system
serial = run_benchmark(BenchConfig(box=(4, 4, 2), degree=5, ranks=1, iterations=100, seed=3,
                                   bandwidth=report.bandwidth))
print("same forcing:", np.array_equal(serial.b, report.b))
print("max x difference:", np.max(np.abs(serial.x - report.x)))
