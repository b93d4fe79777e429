import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hipbone.bench import (REPORT_KEYS, BenchConfig, bytes_per_cg_iteration, forcing,
                           hipbone_flops, measure_streaming_rate, nekbone_flops, recompute,
                           roofline_bound, run_benchmark, streaming_bytes, throughput)
from hipbone.errors import ConfigurationError
from hipbone.mesh import BoxSpec


def test_nekbone_flops():
    assert nekbone_flops(1, 15) == 925696
    assert nekbone_flops(1, 1) == 464
    assert nekbone_flops(512, 7) == 34078720


def test_hipbone_flops():
    assert hipbone_flops(1, 15) == 898006
    assert hipbone_flops(1, 1) == 354


@given(st.integers(1, 10**6), st.integers(1, 15))
def test_hipbone_counts_fewer(E, N):
    assert hipbone_flops(E, N) < nekbone_flops(E, N)


def test_bytes_per_iteration():
    assert bytes_per_cg_iteration(4096, 4096) == 770048
    assert bytes_per_cg_iteration(0, 0) == 0
    box = BoxSpec(2, 2, 2, 7)
    assert bytes_per_cg_iteration(box.N_G, box.N_L) == 692180


def exact_roofline(N, B):
    n1 = N + 1
    return float(Fraction(B) * Fraction(12 * n1**4 + 18 * n1**3, 8 * N**3 + 68 * n1**3))


def test_roofline():
    assert roofline_bound(15, 1117e9) == pytest.approx(3.1447e12, rel=1e-4)
    assert roofline_bound(7, 820e9) == pytest.approx(1.274e12, rel=1e-3)
    assert roofline_bound(7, 820e9, C=0.0) == 0.0
    assert roofline_bound(7, 820e9, C=1e9) == 1e9


@given(st.integers(1, 15), st.floats(1e6, 1e13))
def test_roofline_matches_rational(N, B):
    assert roofline_bound(N, B) == exact_roofline(N, B)


def test_throughput():
    assert throughput(3375, 100, 1, 1.0) == 337500
    assert throughput(3375, 0, 1, 1.0) == 0
    assert throughput(3375, 100, 2, 1.0) == throughput(3375, 100, 1, 1.0) / 2
    with pytest.raises(ValueError):
        throughput(1, 1, 1, 0.0)


def test_streaming():
    assert streaming_bytes(10**6) == 72_000_000
    rate = measure_streaming_rate(1000, trials=3, warmup=1)
    assert rate > 0 and math.isfinite(rate)
    with pytest.raises(ValueError):
        measure_streaming_rate(0)


def test_forcing_is_partition_free():
    ids = np.arange(100)
    full = forcing(ids, 3)
    assert np.all(np.abs(full) < 1)
    assert np.array_equal(forcing(ids[50:], 3), full[50:])
    assert not np.array_equal(forcing(ids, 4), full)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        BenchConfig(lam=0.0).validate()
    with pytest.raises(ConfigurationError):
        BenchConfig(iterations=0).validate()
    with pytest.raises(ConfigurationError):
        BenchConfig(exchange="ring").validate()
    with pytest.raises(ConfigurationError):
        BenchConfig(box=(1, 1, 1), ranks=2).validate()


def small_config(**kw):
    args = dict(box=(2, 2, 2), degree=3, iterations=100, bandwidth=1e10, seed=1)
    args.update(kw)
    return BenchConfig(**args)


def test_report_keys_and_recompute(tmp_path):
    path = tmp_path / "report.json"
    report = run_benchmark(small_config(json_path=str(path)))
    fields = json.loads(path.read_text())
    assert tuple(fields) == REPORT_KEYS
    again = recompute(fields)
    assert again["fom_flops"] == fields["fom_flops"]
    assert again["throughput"] == fields["throughput"]
    assert again["bytes_per_iter"] == fields["bytes_per_iter"]
    assert fields["roofline_flops"] == roofline_bound(fields["N"], 1e10)
    assert fields["fom_flops"] == 100 * nekbone_flops(8, 3) / fields["time_s"]
    assert report.iterations == 100
    assert (fields["E"], fields["N"], fields["P"]) == (8, 3, 1)


def test_deterministic_runs():
    a = run_benchmark(small_config(iterations=20))
    b = run_benchmark(small_config(iterations=20))
    assert np.array_equal(a.b, b.b)
    assert a.history == b.history
    assert np.array_equal(a.x, b.x)


def test_forced_exchange_recorded():
    report = run_benchmark(small_config(ranks=2, exchange="crystalrouter", iterations=5))
    assert report.exchange == "crystalrouter"
    assert report.P == 2


def test_auto_exchange_tuned():
    report = run_benchmark(small_config(ranks=2, iterations=5))
    assert report.exchange in ("pairwise", "alltoall", "crystalrouter")
    assert set(report.tuning) == {"pairwise", "alltoall", "crystalrouter"}


def test_phase_times_present():
    report = run_benchmark(small_config(iterations=3))
    for key in ("halo_pack", "interior_a", "gather_wait", "operator", "vector"):
        assert report.phase_times[key] >= 0
