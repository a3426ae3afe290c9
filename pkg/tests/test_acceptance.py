"""Acceptance suite: each test checks one criterion at its stated tolerance.

Every test records a verdict line through the ``verdict`` fixture; the lines
are printed together at the end of the pytest run.
"""

import math
import time

import numpy as np
import pytest

from occlearn.bpmeans import serial_bpmeans
from occlearn.dpmeans import serial_dpmeans
from occlearn.experiments import (ExperimentGrid, make_dataset, rejection_slope, run_rejection_experiment,
                                  run_scaling, summarize)
from occlearn.ofl import OflProposal, ofl_objective, ofl_validate, open_probability, serial_ofl
from occlearn.stream import UniformStream
from occlearn.verify import verify_serializability

from oracles import brute_force_fl, brute_force_unrestricted

ALGS = ["dpmeans", "ofl", "bpmeans"]


def _data_mode(alg):
    return "bp" if alg == "bpmeans" else "mixture"


@pytest.mark.slow
@pytest.mark.parametrize("alg", ALGS)
def test_serializability_suite(alg, verdict):
    rng = np.random.default_rng(20240 + ALGS.index(alg))
    n_configs, failures = 200, []
    tic = time.perf_counter()
    for _ in range(n_configs):
        n = int(rng.integers(16, 2001))
        dim = int(rng.choice([1, 2, 16]))
        P = int(rng.choice([1, 2, 4, 8]))
        b = int(rng.integers(1, 65))
        lam = float(rng.uniform(0.5, 3.0))
        seed = int(rng.integers(2**32))
        boot = bool(rng.integers(2))
        X = make_dataset(_data_mode(alg), n, seed, dim=dim).points
        rep = verify_serializability(alg, X, lam, P, b, seed=seed, bootstrap=boot)
        if not rep.passed:
            failures.append(rep.summary())
    elapsed = time.perf_counter() - tic
    verdict(1, not failures, f"{alg}: {n_configs - len(failures)}/{n_configs} configurations PASS "
                             f"in {elapsed:.0f}s")
    assert not failures, failures[0]


def _first_iteration_grid(alg, mode):
    grid = ExperimentGrid(algorithm=alg, data_mode=mode)
    tic = time.perf_counter()
    records = run_rejection_experiment(grid, seed=0)
    cells = summarize(records)
    return grid, records, cells, time.perf_counter() - tic


@pytest.mark.slow
@pytest.mark.parametrize("alg", ALGS)
def test_rejections_bounded_and_flat(alg, verdict):
    grid, records, cells, elapsed = _first_iteration_grid(alg, None)
    bounded = all(c.within_pb for c in cells)
    worst = max(c.mean_rejected / c.pb for c in cells)
    fits = [rejection_slope(records, pb) for pb in grid.pb_values]
    flat = [f.pb for f in fits if f.contains_zero]
    sloped = [f"Pb={f.pb} slope {f.slope:.2e} CI [{f.low:.2e}, {f.high:.2e}]" for f in fits if not f.contains_zero]
    detail = (f"{alg}: max mean(M-k)/Pb = {worst:.3f} ({'bounded' if bounded else 'EXCEEDS Pb'}); "
              f"slope CI contains 0 for Pb in {flat}" + (f", not for {', '.join(sloped)}" if sloped else "")
              + f" ({elapsed:.0f}s)")
    verdict(2, bounded and not sloped, detail)
    assert bounded, detail
    assert not sloped, detail


@pytest.mark.slow
@pytest.mark.parametrize("alg", ["dpmeans", "ofl"])
def test_master_load_bound_on_separable_data(alg, verdict):
    grid, records, cells, elapsed = _first_iteration_grid(alg, "separable")
    bad = [c for c in cells if not c.master_bound_holds(3.0)]
    slack = min(c.pb + c.mean_accepted + 3 * c.se_rejected - c.mean_proposed for c in cells)
    verdict(3, not bad, f"{alg}: bound holds in {len(cells) - len(bad)}/{len(cells)} cells, "
                        f"smallest slack {slack:.2f} ({elapsed:.0f}s)")
    assert not bad, [(c.n, c.pb, c.mean_proposed, c.mean_accepted) for c in bad]


def _non_increasing(values, rel=1e-9):
    return all(b <= a + rel * abs(a) for a, b in zip(values, values[1:]))


def test_objective_monotone(verdict):
    rng = np.random.default_rng(4)
    bad = {"dpmeans": 0, "bpmeans": 0}
    iters = {"dpmeans": 0, "bpmeans": 0}
    for _ in range(100):
        n = int(rng.integers(10, 300))
        dim = int(rng.integers(1, 6))
        lam = float(rng.uniform(0.3, 3.0))
        X = make_dataset("mixture", n, int(rng.integers(2**32)), dim=dim).points
        st = serial_dpmeans(X, lam)
        bad["dpmeans"] += not _non_increasing(st.objectives)
        iters["dpmeans"] += st.n_iters
        Xb = make_dataset("bp", n, int(rng.integers(2**32)), dim=dim).points
        model = serial_bpmeans(Xb, lam)
        bad["bpmeans"] += not _non_increasing(model.objectives)
        iters["bpmeans"] += model.n_iters
    ok = not any(bad.values())
    verdict(4, ok, ", ".join(f"{a}: {100 - bad[a]}/100 instances non-increasing over {iters[a]} iterations"
                             for a in bad))
    assert ok, bad


def test_ofl_constant_factor(verdict):
    rng = np.random.default_rng(5)
    worst_ofl, worst_fl = 0.0, 0.0
    for inst in range(20):
        n = int(rng.integers(4, 13))
        dim = int(rng.integers(1, 3))
        lam = float(rng.uniform(0.3, 2.0))
        X = make_dataset("mixture", n, int(rng.integers(2**32)), dim=dim).points
        opt, _ = brute_force_fl(X, lam)
        costs = []
        for s in range(200):
            order = np.random.default_rng([inst, s]).permutation(n)
            res = serial_ofl(X, lam, UniformStream(1000 * inst + s), order=order)
            costs.append(ofl_objective(X, res.centers, lam))
        worst_ofl = max(worst_ofl, float(np.mean(costs)) / opt)
    for _ in range(30):
        n = int(rng.integers(2, 9))
        dim = int(rng.integers(1, 3))
        lam = float(rng.uniform(0.3, 2.0))
        X = make_dataset("mixture", n, int(rng.integers(2**32)), dim=dim).points
        worst_fl = max(worst_fl, brute_force_fl(X, lam)[0] / brute_force_unrestricted(X, lam))
    ok = worst_ofl <= 68 and worst_fl <= 2
    verdict(5, ok, f"max mean J_OFL / J_FL = {worst_ofl:.3f} (limit 68) over 20 instances x 200 orders; "
                   f"max J_FL / J* = {worst_fl:.3f} (limit 2) over 30 instances")
    assert ok


TRIPLES = [  # (d, d*, lambda) with d* <= d <= lambda
    (1.0, 1.0, 1.0), (1.0, 0.5, 1.0), (0.8, 0.2, 1.0), (0.5, 0.45, 1.0), (0.3, 0.1, 0.5),
    (2.0, 1.0, 3.0), (1.5, 0.0, 2.0), (0.9, 0.6, 0.9), (0.25, 0.2, 1.0), (4.0, 3.0, 5.0),
]


def _coupled_acceptance(d, dstar, lam, draws, seed, chunk=1000):
    """Worker sends on ``u < d^2/lam^2``; the master decides with the same ``u``.

    Proposals are spaced far apart, each with its own epoch-accepted center at
    exactly ``d*``, so validations within one call do not interact.
    """
    stream = UniformStream(seed)
    p_send = float(open_probability(d * d, lam))
    accepted = sent = 0
    start = 0
    spacing = 100.0 * (lam + d + 1.0)
    while sent < draws:
        idx = np.arange(start, start + 4 * chunk)
        start += len(idx)
        idx = idx[stream.uniform(idx) < p_send][:min(chunk, draws - sent)]
        if not len(idx):
            continue
        xs = np.stack([spacing * np.arange(len(idx)), np.zeros(len(idx))], axis=1)
        near = xs + np.array([0.0, dstar])
        props = [OflProposal(int(i), x, d * d) for i, x in zip(idx, xs)]
        _, ok, _ = ofl_validate(props, np.empty((0, 2)), lam, stream, epoch_accepted=near)
        accepted += int(ok.sum())
        sent += len(idx)
    return accepted / sent


def test_coupling_acceptance_rate(verdict):
    draws = 100_000
    worst = 0.0
    lines = []
    for k, (d, dstar, lam) in enumerate(TRIPLES):
        p = min(dstar**2, d**2) / d**2
        freq = _coupled_acceptance(d, dstar, lam, draws, seed=k)
        se = math.sqrt(p * (1 - p) / draws)
        z = abs(freq - p) / se if se > 0 else (0.0 if freq == p else math.inf)
        worst = max(worst, z)
        lines.append(f"({d},{dstar},{lam}): {freq:.4f} vs {p:.4f}")
    ok = worst <= 3
    verdict(6, ok, f"10 triples, {draws} draws each, largest deviation {worst:.2f} s.e.")
    assert ok, lines


@pytest.mark.parametrize("alg", ALGS)
def test_scaling_invariance(alg, verdict):
    lam = {"dpmeans": 2.0, "ofl": 2.0, "bpmeans": 1.0}[alg]
    n, pb = 4096, 256
    X = make_dataset(_data_mode(alg), n, 11, dim=16).points
    res = run_scaling(alg, X, lam, pb, (1, 2, 4, 8), iters=5, seed=11)
    ref = res.master_counts(1)
    same = all(res.master_counts(p) == ref for p in (2, 4, 8))
    even = all(tot == tuple([n // p] * p) for p in (1, 2, 4, 8) for tot in res.worker_totals[p])
    timing = ", ".join(f"P={p} {res.wall_s[p]:.2f}s" for p in (1, 2, 4, 8))
    verdict(7, same and even, f"{alg}: master counts {'identical' if same else 'DIFFER'} across P, "
                              f"worker loads {'N/P' if even else 'UNEVEN'} (wall, advisory: {timing})")
    assert same and even
