"""Acceptance runs A1-A13 at desk scale.

Each test records one pass/fail line (printed in the terminal summary).
Spectra from every sparse run are pooled for the pairing criterion A4,
which therefore runs last in this module.
"""
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from jrlab.assembly import assemble_bdg, assemble_H
from jrlab.clifford import verify_mod8_table
from jrlab.eigensolver import SolverConfig, smooth_kernel_basis
from jrlab.experiments import (bdg_symmetry_check, concentration_profile, concentration_slope,
                               conformal_check, gap_scan, gauge_equivariance_check,
                               riemann_roch_check, solve_with_kernel)
from jrlab.fields import (HiggsConfig, PlanePatch, ScalingSchedule, Torus, ZeroDatum,
                          sample_model_phi, sample_phi)
from jrlab.model_oracle import (ModelProblem, alpha_robustness, dense_kernel_dim, exact_mode_k1,
                                loglog_slope, model_residual, overlap)
from jrlab.vortex import BradlowError, VortexProblem, bradlow_threshold, solve_vortex, vortex_to_jr

pytestmark = pytest.mark.acceptance

SPECTRA = []


def solve(op, cfg, gap_scale=None, tag=""):
    rep, kc = solve_with_kernel(op, cfg, gap_scale)
    SPECTRA.append((tag, rep))
    return rep, kc


MODEL_PAIRS = [(0, 0), (1, 0), (2, 0), (1, 1), (1, 2), (2, 1)]


def test_a1_model_kernel_dims(criterion):
    t0 = time.perf_counter()
    g = PlanePatch(4.0, 48)
    T = 4.0
    bad = []
    for p, q in MODEL_PAIRS:
        k, m = p - q, p + q
        want = (max(k, 0), max(-k, 0))
        prob = ModelProblem(T, p, q, R=4.0, n=48)
        dp, dm = dense_kernel_dim(prob, 1), dense_kernel_dim(prob, -1)
        dense_ok = ((dp.kernel_dim, dm.kernel_dim) == want and dp.confident and dm.confident
                    and min(dp.separation_ratio, dm.separation_ratio) >= 10)
        op = assemble_H(g, None, sample_model_phi(g, T, p, q))
        _, kc = solve(op, SolverConfig(num_pairs=16), T ** (1 / (m + 1)), f"A1 {p},{q}")
        sparse_ok = (kc.dim_plus, kc.dim_minus) == want and kc.separation_ratio >= 10 and not kc.ambiguous
        if not (dense_ok and sparse_ok):
            bad.append(((p, q), (dp.kernel_dim, dm.kernel_dim), (kc.dim_plus, kc.dim_minus)))
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed <= 300
    assert criterion("A1", ok, f"6 (p,q) pairs, mismatches={bad}, {elapsed:.0f}s (limit 300s)")


def test_a2_exact_gaussian_mode(criterion):
    t = 8.0
    g = PlanePatch(2.0, 48)
    op = assemble_H(g, None, sample_model_phi(g, 1.0, 1, 0, t=t))
    rep, _ = solve(op, SolverConfig(num_pairs=12), math.sqrt(t), "A2")
    plus, minus = smooth_kernel_basis(rep, op)
    v = plus[:, 0]
    f = (v[0::4] + 1j * v[1::4]).reshape(g.shape)
    gauss = exact_mode_k1(t, g)
    ov = overlap(gauss, f)
    real = model_residual(gauss, g, t)
    imag = model_residual(1j * gauss, g, t)
    ok = plus.shape[1] == 1 and minus.shape[1] == 0 and ov >= 0.95 and imag >= 100 * real
    assert criterion("A2", ok, f"overlap={ov:.6f} (>=0.95), residual ratio i/1={imag / real:.3g} (>=100)")


def test_a3_alpha_threshold_scaling(criterion):
    scales = [0, 0.25, 0.5, 1, 2, 4, 8, 16]
    thresholds, baseline_ok = [], True
    for T in (1.0, 4.0, 16.0):
        prob = ModelProblem(T, 1, 0, R=4.0, n=48)
        rows, thr = alpha_robustness(prob, scales, refine=4)
        # dims unchanged below the threshold
        baseline_ok &= all((r.dim_plus, r.dim_minus) == (1, 0) for r in rows[:-1])
        thresholds.append(thr)
    slope, err = loglog_slope([1.0, 4.0, 16.0], thresholds)
    ok = baseline_ok and all(math.isfinite(x) for x in thresholds) and 0.7 * 0.5 <= slope <= 1.3 * 0.5
    assert criterion("A3", ok, f"thresholds={np.round(thresholds, 3).tolist()}, slope={slope:.3f}+-{err:.3f} "
                               f"(in [0.35, 0.65])")


def test_a5_index_and_cluster(criterion):
    g = PlanePatch(2.5, 48)
    t = 16.0
    cfg = SolverConfig(num_pairs=12)
    two = sample_phi(g, lambda z: z * (z - 1), (ZeroDatum(0j, 1, 1), ZeroDatum(1 + 0j, 1, 1)), t)
    mixed = sample_phi(g, lambda z: z * (np.conj(z) - 1), (ZeroDatum(0j, 1, 1), ZeroDatum(1 + 0j, -1, 1)), t)
    _, a = solve(assemble_H(g, None, two), cfg, math.sqrt(t), "A5 two")
    _, b = solve(assemble_H(g, None, mixed), cfg, math.sqrt(t), "A5 mixed")
    ok = ((a.dim_plus, a.dim_minus, a.index) == (2, 0, 2) and (b.dim_plus, b.dim_minus, b.index) == (1, 1, 0)
          and min(a.separation_ratio, b.separation_ratio) >= 10 and not (a.ambiguous or b.ambiguous))
    assert criterion("A5", ok, f"two-zero dims=({a.dim_plus},{a.dim_minus}) ratio={a.separation_ratio:.3g}; "
                               f"mixed dims=({b.dim_plus},{b.dim_minus}) ratio={b.separation_ratio:.3g}")


def test_a6_gap_scaling(criterion):
    t0 = time.perf_counter()
    parts, ok = [], True
    for m, R in ((1, 1.0), (2, 1.5)):
        g = PlanePatch(R, 48)
        h = sample_model_phi(g, 1.0, m, 0)
        scan = gap_scan(g, None, h, ScalingSchedule((10.0, 20.0, 40.0, 80.0, 160.0), m),
                        SolverConfig(num_pairs=12))
        ok &= 0.8 <= scan.ratio() <= 1.2 and not scan.excluded
        parts.append(f"m={m} slope={scan.slope:.4f} (pred {scan.predicted:.4f})")
    elapsed = time.perf_counter() - t0
    ok &= elapsed <= 900
    assert criterion("A6", ok, ", ".join(parts) + f", {elapsed:.0f}s (limit 900s)")


def test_a7_concentration(criterion):
    g = PlanePatch(2.0, 48)
    h = sample_model_phi(g, 1.0, 1, 0)
    prof = concentration_profile(g, None, h, (0.5,), ScalingSchedule((2.0, 4.0, 8.0, 16.0, 32.0), 1),
                                 SolverConfig(num_pairs=12))
    slope, monotone = concentration_slope(prof, 0.5)
    masses = [float(p.mass_outside[0]) for p in prof]
    ok = monotone and slope <= -1
    assert criterion("A7", ok, f"mass outside 0.5: {[f'{x:.3g}' for x in masses]}, slope={slope:.2f} (<=-1), "
                               f"monotone={monotone}")


def test_a8_vortex_and_riemann_roch(criterion):
    g = Torus(1.0, 1.0, 48, 48)
    rr = riemann_roch_check(g, 1, tau_factor=2.0, cfg=SolverConfig(num_pairs=16))
    sol = rr.vortex
    tau, d = sol.problem.tau, sol.problem.degree
    energy_err = abs(sol.energy - 2 * math.pi * tau * d) / (2 * math.pi * tau * d)
    gauge, higgs = vortex_to_jr(sol, side="jr")
    _, kc = solve(assemble_H(g, gauge, higgs), SolverConfig(num_pairs=16), None, "A8 jr")
    jr_index = (kc.dim_plus - kc.dim_minus) / 2
    ok = (d == 2 and tau == pytest.approx(2 * bradlow_threshold(g, 2))
          and sol.residual_1 < 1e-8 and sol.residual_2 < 1e-8 and energy_err < 0.01
          and (kc.dim_plus, kc.dim_minus) == (0, 2) and abs(jr_index) == 1 and not kc.ambiguous
          and rr.complex_index == rr.expected == 1)
    assert criterion("A8", ok, f"res=({sol.residual_1:.2g},{sol.residual_2:.2g}), energy err={energy_err:.2%}, "
                               f"JR dims=({kc.dim_plus},{kc.dim_minus}) complex index={jr_index:g}, "
                               f"RR deg L=1 complex index={rr.complex_index:g}")


def test_a9_bradlow_gate(criterion, monkeypatch):
    import jrlab.vortex as vx
    calls = []
    monkeypatch.setattr(vx, "solve_kazdan_warner", lambda *a, **k: calls.append(1))
    g = Torus(1.0, 1.0, 48, 48)
    prob = VortexProblem(g, ((0.25 + 0.5j, 1), (0.75 + 0.5j, 1)), 0.9 * bradlow_threshold(g, 2))
    try:
        solve_vortex(prob)
        msg = None
    except BradlowError as exc:
        msg = str(exc)
    ok = msg is not None and "Bradlow bound violated" in msg and not calls
    assert criterion("A9", ok, f"error={msg!r}, newton calls={len(calls)}")


def test_a10_clifford_table(criterion):
    t0 = time.perf_counter()
    rows = verify_mod8_table(8)
    elapsed = time.perf_counter() - t0
    fails = [(r["t"], r["s"], r["sigma"]) for r in rows if not r["pass"]]
    ok = len(rows) == 68 and not fails and elapsed <= 60
    assert criterion("A10", ok, f"{len(rows)} rows, failures={fails}, {elapsed:.1f}s (limit 60s)")


def test_a11_bdg_symmetries(criterion):
    worst = [0.0, 0.0, 0.0]
    odd = []
    setups = []
    tg = Torus(1.0, 1.0, 7, 7)
    setups.append(("torus", tg, HiggsConfig(tg, np.zeros(tg.shape, dtype=complex))))
    pg = PlanePatch(2.0, 15)
    setups.append(("plane", pg, sample_model_phi(pg, 1.0, 1, 0, t=4.0)))
    for name, g, h in setups:
        for p in (1, -1):
            for s in (1, -1):
                c = bdg_symmetry_check(assemble_bdg(g, None, h, p, s), cfg=SolverConfig(num_pairs=16))
                worst = [max(worst[0], c.commutation), max(worst[1], c.square),
                         max(worst[2], c.kernel_invariance)]
                if c.c_square == -1 and c.kernel_dim % 2:
                    odd.append((name, p, s, c.kernel_dim))
    ok = worst[0] <= 1e-13 and worst[1] <= 1e-13 and worst[2] <= 1e-10 and not odd
    assert criterion("A11", ok, f"max |HC-pCH|={worst[0]:.2g}, max |C^2-sp|={worst[1]:.2g}, "
                                f"kernel C-invariance={worst[2]:.2g}, odd quaternionic kernels={odd}")


def test_a12_equivariance(criterion):
    from jrlab.model_oracle import bump
    g = PlanePatch(2.0, 32)
    h = sample_model_phi(g, 1.0, 1, 0, t=4.0)
    z = g.coords()
    mus = [np.ones(g.shape, complex), np.full(g.shape, np.exp(0.7j)), np.exp(2j * bump(1.0)(z).real)]
    dists = [gauge_equivariance_check(g, None, h, mu, SolverConfig(num_pairs=12), 2.0) for mu in mus]
    res = []
    dims_ok = True
    for n in (24, 48):
        gn = PlanePatch(2.0, n)
        hn = sample_model_phi(gn, 1.0, 1, 0, t=4.0)
        f = 0.5 * bump(1.0, 0.3 + 0.2j)(gn.coords()).real
        r = conformal_check(gn, None, hn, f, SolverConfig(num_pairs=12), 2.0)
        dims_ok &= r.dims_flat == r.dims_conformal
        res.append(r.residual)
    ratio = res[1] / res[0]
    ok = max(dists) < 1e-6 and dims_ok and 0.4 <= ratio <= 0.65
    assert criterion("A12", ok, f"equivariance max dist={max(dists):.2g}, conformal dims invariant={dims_ok}, "
                                f"residual {res[0]:.3g}->{res[1]:.3g} ratio={ratio:.3f} (in [0.4, 0.65])")


CLI_CONFIGS = {
    "spectrum": """[domain]\nkind = plane\nradius = 2\nn = 24\n[higgs]\nkind = model\ncoeff = 1\np = 1\nq = 0\n"""
                """t = 8\n[solver]\nnum_pairs = 12\n""",
    "vortex": """[domain]\nkind = torus\nlx = 1\nly = 1\nnx = 24\nny = 24\n[higgs]\nkind = vortex\nd = 1\n"""
              """tau_factor = 2\n""",
    "bdg-check": """[domain]\nkind = torus\nlx = 1\nly = 1\nnx = 7\nny = 7\n[higgs]\nkind = constant\n"""
                 """value = 0\n""",
}


def test_a13_determinism(criterion, tmp_path):
    env = dict(os.environ)
    src = str(Path(__file__).resolve().parents[1] / "src")
    env["PYTHONPATH"] = src + os.pathsep + env.get("PYTHONPATH", "")
    diffs, codes = [], []
    for cmd, text in CLI_CONFIGS.items():
        cfg = tmp_path / f"{cmd}.ini"
        cfg.write_text(text)
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{cmd}-{rep}"
            proc = subprocess.run([sys.executable, "-m", "jrlab.cli", cmd, "--config", str(cfg), "--out",
                                   str(out), "--seed", "7", "--threads", "1"],
                                  env=env, capture_output=True, text=True)
            codes.append((cmd, proc.returncode))
            outs.append(out)
        for csv in sorted(outs[0].glob("*.csv")):
            if csv.read_bytes() != (outs[1] / csv.name).read_bytes():
                diffs.append(f"{cmd}/{csv.name}")
    ok = not diffs and all(c == 0 for _, c in codes)
    assert criterion("A13", ok, f"{len(CLI_CONFIGS)} subcommands run twice, exit codes={codes}, differing CSVs={diffs}")


def test_a4_spectral_pairing(criterion):
    if not SPECTRA:
        pytest.skip("no spectra collected (run the module as a whole)")
    worst, bad = -math.inf, []
    for tag, rep in SPECTRA:
        if not rep.converged:
            continue
        d = rep.pairing_defects()
        worst = max(worst, float(d.max()))
        if np.any(d > 0):
            bad.append(tag)
    ok = not bad
    assert criterion("A4", ok, f"{len(SPECTRA)} runs, worst (distance - 2 residual)={worst:.3g}, unpaired runs={bad}")
