"""Acceptance criteria, one test each.  Every test prints a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` (the lines are also
collected into a terminal summary section).
"""

import itertools
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from mflab.cli import dispatch
from mflab.config import parse_config
from mflab.constants import build_ledger
from mflab.dynamics import evolve_reference, one_step_map
from mflab.experiments import (Study, moment_check, reference_seed, run_bias_sweep, run_localization_audit,
                               run_tail_study, run_time_uniformity, self_convergence)
from mflab.metrics import sw1_montecarlo, w1_exact, w1_sorted_1d

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def report(num: int, title: str, ok: bool, detail: str, elapsed: float, budget: float):
    within = elapsed <= budget
    line = (f"[{'PASS' if ok and within else 'FAIL'}] criterion {num:2d} {title}: {detail}"
            f" ({elapsed:.1f}s, budget {budget:g}s)")
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line
    assert within, line


@pytest.fixture(scope="module")
def bias_cfg():
    return parse_config(CONFIGS / "bias_sweep.toml")


def _lipschitz_setup(cfg):
    N = 64
    plan = cfg.plan()
    hp = plan.hyperparams(N)
    led = build_ledger(cfg.model, hp, cfg.A, plan.C0, plan.Cpi, plan.r0)
    return N, hp, led


def test_01_lipschitz_in_parameters(bias_cfg):
    t0 = time.perf_counter()
    m = bias_cfg.model
    N, hp, led = _lipschitz_setup(bias_cfg)
    rng = np.random.default_rng(1)
    worst = -math.inf
    n = 1000
    for p in (1, 2):
        th = rng.uniform(-m.param_radius, m.param_radius, size=(n, N, 1))
        th2 = rng.uniform(-m.param_radius, m.param_radius, size=(n, N, 1))
        x = rng.uniform(-m.data_radius, m.data_radius, size=(n, 1))
        y = rng.uniform(-bias_cfg.A, bias_cfg.A, size=n)
        lhs = np.linalg.norm((one_step_map(th, (x, y), m, hp) - one_step_map(th2, (x, y), m, hp)).reshape(n, -1),
                             ord=p, axis=1)
        rhs = led.L_N * np.linalg.norm((th - th2).reshape(n, -1), ord=p, axis=1)
        worst = max(worst, float(np.max(lhs - rhs)))
    report(1, "Lipschitz in parameters, p=1,2", worst <= 1e-12,
           f"max(lhs - L_N*rhs) = {worst:.3e} over 2x1000 instances, L_N = {led.L_N:.6f}",
           time.perf_counter() - t0, 1.0)


def test_02_lipschitz_in_data(bias_cfg):
    t0 = time.perf_counter()
    m = bias_cfg.model
    N, hp, led = _lipschitz_setup(bias_cfg)
    rng = np.random.default_rng(2)
    n = 1000
    th = rng.uniform(-m.param_radius, m.param_radius, size=(n, N, 1))
    x, x2 = rng.uniform(-m.data_radius, m.data_radius, size=(2, n, 1))
    y, y2 = rng.uniform(-bias_cfg.A, bias_cfg.A, size=(2, n))
    diff = (one_step_map(th, (x, y), m, hp) - one_step_map(th, (x2, y2), m, hp)).reshape(n, -1)
    dz = np.maximum(np.abs(x - x2)[:, 0], np.abs(y - y2))
    worst = float(np.max(np.linalg.norm(diff, axis=1) - led.K / math.sqrt(N) * dz))
    report(2, "Lipschitz in data", worst <= 1e-12,
           f"max(lhs - K/sqrt(N)*|dz|) = {worst:.3e} over 1000 instances, K = {led.K:.6f}",
           time.perf_counter() - t0, 1.0)


def _brute(a, b):
    n = len(a)
    return min(sum(float(np.linalg.norm(a[i] - b[j])) for i, j in enumerate(p)) / n
               for p in itertools.permutations(range(n)))


def test_03_ot_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    gap_brute = gap_sorted = 0.0
    for i in range(100):
        n, D = 1 + i % 7, 1 + i % 3
        a, b = rng.normal(size=(n, D)), rng.normal(size=(n, D))
        gap_brute = max(gap_brute, abs(w1_exact(a, b) - _brute(a, b)))
    for i in range(500):
        n = 1 + i % 64
        a, b = rng.normal(size=(n, 1)), rng.normal(scale=3, size=(n, 1))
        gap_sorted = max(gap_sorted, abs(w1_sorted_1d(a, b) - w1_exact(a, b)))
    report(3, "OT oracle equivalence", gap_brute <= 1e-9 and gap_sorted <= 1e-9,
           f"max |exact - brute| = {gap_brute:.2e}, max |sorted - exact| = {gap_sorted:.2e}",
           time.perf_counter() - t0, 10.0)


def test_04_sliced_closed_form():
    t0 = time.perf_counter()
    est, se = sw1_montecarlo([[0.0, 0.0]], [[1.0, 0.0]], 100_000, seed=4)
    closed = abs(est - 2 / math.pi) <= 3 * se
    rng = np.random.default_rng(4)
    worst = -math.inf
    for i in range(100):
        n, D = 2 + i % 30, 2 + i % 4
        a, b = rng.normal(size=(n, D)), rng.normal(loc=0.2, size=(n, D))
        e, s = sw1_montecarlo(a, b, 2048, seed=i)
        worst = max(worst, e - w1_exact(a, b) - 3 * s)
    report(4, "sliced W1 closed form and SW1 <= W1", closed and worst <= 0,
           f"SW1 = {est:.5f} +- {se:.5f} vs 2/pi = {2 / math.pi:.5f}; max(SW1 - W1 - 3se) = {worst:.3e}",
           time.perf_counter() - t0, 30.0)


def test_05_bias_exponent(bias_cfg):
    t0 = time.perf_counter()
    plan = bias_cfg.plan(Study.BIAS_SWEEP)
    assert plan.widths == (64, 128, 256, 512, 1024) and plan.trials >= 200 and len(bias_cfg.data) == 4
    res = run_bias_sweep(plan)
    sl = {m: res.summary["slopes"][m]["4.0"]["slope"] for m in ("testfn", "w1", "sw1")}
    ok = (-0.65 <= sl["testfn"] <= -0.35 and -0.65 <= sl["sw1"] <= -0.35 and sl["w1"] <= -0.35
          and res.summary["valid"])
    report(5, "bias decay exponent at t=4", ok,
           f"slopes testfn {sl['testfn']:.3f}, sw1 {sl['sw1']:.3f}, w1 {sl['w1']:.3f}; "
           f"failed trials {res.summary['failed_trials']}", time.perf_counter() - t0, 900.0)


def test_06_time_uniformity():
    t0 = time.perf_counter()
    cfg = parse_config(CONFIGS / "time_uniformity.toml")
    plan = cfg.plan(Study.TIME_UNIFORMITY)
    assert plan.widths == (256,) and {2.0, 4.0, 8.0, 16.0} <= set(plan.times)
    res = run_time_uniformity(plan)
    ratio = res.summary["flatness"]["256"]["testfn"]["[2,16]"]
    means = {r["t"]: r["mean"] for r in res.table if r["metric"] == "testfn"}
    report(6, "time uniformity, N=256, t in [2,16]", ratio is not None and ratio <= 2.0 and res.summary["valid"],
           f"flatness ratio {ratio:.3f}; means " + ", ".join(f"t={t:g}: {v:.5f}" for t, v in means.items()),
           time.perf_counter() - t0, 600.0)


def test_07_concentration_scale():
    t0 = time.perf_counter()
    cfg = parse_config(CONFIGS / "tail_study.toml")
    plan = cfg.plan(Study.TAIL_STUDY)
    assert plan.widths == (128, 512) and plan.trials >= 500 and plan.verdict_time == 4.0
    res = run_tail_study(plan)
    s = res.summary["s_N"]
    ratio = max(s.values()) / min(s.values())
    report(7, "fluctuation scale std*sqrt(N), N=128 vs 512", ratio <= 2.0 and res.summary["valid"],
           f"s_128 = {s['128']:.5f}, s_512 = {s['512']:.5f}, ratio {ratio:.3f}", time.perf_counter() - t0, 900.0)


def test_08_localization():
    t0 = time.perf_counter()
    cfg = parse_config(CONFIGS / "localize.toml")
    plan = cfg.plan(Study.LOCALIZATION_AUDIT)
    led = plan.ledger(plan.widths[0])
    assert plan.steps >= 100_000 and plan.trials >= 20
    assert cfg.lam > cfg.model.M * cfg.model.c and led.gamma * cfg.lam <= 1
    res = run_localization_audit(plan)
    worst = max(r.max_particle_norm for r in res.records)
    report(8, "localization radius", res.summary["violations"] == 0 and worst <= led.R_inf + 1e-12,
           f"max norm {worst:.6f} <= R_inf {led.R_inf:.6f}; violations {res.summary['violations']}",
           time.perf_counter() - t0, 120.0)


def test_09_moment_bound(bias_cfg):
    t0 = time.perf_counter()
    plan = replace(bias_cfg.plan(), times=(0.0, 16.0))
    ref = evolve_reference(reference_seed(plan.master_seed), plan.m_ref, plan.h, 16.0, plan.data, plan.model,
                           plan.hyperparams(plan.n_max), plan.init, snapshot_times=[])
    out = moment_check(ref, plan.model, plan.A, plan.lam, tolerance=0.05)
    report(9, "second moment along the reference", out["passed"],
           f"max mean|theta|^2 = {out['max_second_moment']:.5f} <= {out['bound']:.5f} "
           f"(M_ref={plan.m_ref}, h={plan.h:g}, T=16)", time.perf_counter() - t0, 60.0)


def test_10_self_convergence(bias_cfg):
    t0 = time.perf_counter()
    plan = bias_cfg.plan()
    out = self_convergence(reference_seed(plan.master_seed), 1024, 0.01, 1.0, plan.data, plan.model,
                           plan.hyperparams(plan.n_max), plan.init)
    report(10, "Euler self-convergence", 1.5 <= out["ratio"] <= 2.5,
           f"dev(h,h/2) = {out['dev_h']:.3e}, dev(h/2,h/4) = {out['dev_h2']:.3e}, ratio {out['ratio']:.3f}",
           time.perf_counter() - t0, 60.0)


def test_11_determinism(tmp_path):
    t0 = time.perf_counter()
    src = (CONFIGS / "bias_sweep.toml").read_text()
    text = src.replace("trials = 200", "trials = 24").replace("widths = [64, 128, 256, 512, 1024]",
                                                              "widths = [32, 64, 128]")
    cfg = tmp_path / "bias.toml"
    cfg.write_text(text)
    runs = [("bias-sweep", cfg, "run_bias-sweep_trials.csv"),
            ("localize", CONFIGS / "localize.toml", "run_localize_trials.csv")]
    same = True
    names = []
    for cmd, path, name in runs:
        blobs = []
        for k, threads in enumerate(("1", "2")):
            out = tmp_path / f"{cmd}{k}"
            assert dispatch([cmd, "--config", str(path), "--out", str(out), "--threads", threads]) in (0, 3)
            blobs.append((out / name).read_bytes())
        same &= blobs[0] == blobs[1]
        names.append(f"{cmd} {len(blobs[0])} bytes")
    report(11, "byte-identical CSV on rerun", same, "; ".join(names), time.perf_counter() - t0, 600.0)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
