"""Acceptance criteria, one test each.

Every test appends ``ACCEPTANCE <n> PASS|FAIL <summary>`` to the list that
conftest prints at the end of the session, then asserts.
"""

import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES

from bipkit.allocator import AllocConfig, provision
from bipkit.capacity import (
    acceptance_probability_model,
    count_collisions,
    exact_poisson_ci,
    expected_collisions,
    open_world_stress,
    poisson_mle,
    poisson_pmf,
    zero_collision_bound,
)
from bipkit.cli import main as cli_main
from bipkit.errors import MaxAttemptsExceeded
from bipkit.geometry import (
    alpha_star,
    cap_volume,
    displaced_cosine,
    gaussian_cap_approx,
    gv_bound,
    safety_buffer_analysis,
)
from bipkit.metrics import PairList, evaluate_pairs, non_collision_rate
from bipkit.pca import fit_pca
from bipkit.synth import (
    SynthGalleryConfig,
    bisection_alpha_star,
    mc_cap_volume,
    plant_collisions,
    sample_vmf_mixture,
)


def report(n, ok, summary):
    ACCEPTANCE_LINES.append(f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'} {summary}")
    assert ok, summary


def sig3(x):
    return float(f"{x:.2e}")


# published capacity rows at d=269: tau -> (mu, log2 A_GV, A_GV, alpha*(0, tau))
CAPACITY_TABLE = {
    0.319: (4.21e-8, 24.50, 2.38e7, 2.97),
    0.330: (1.40e-8, 26.09, 7.15e7, 2.86),
    0.341: (4.45e-9, 27.74, 2.25e8, 2.76),
    0.360: (5.52e-10, 30.75, 1.81e9, 2.59),
    0.391: (1.35e-11, 36.11, 7.41e10, 2.35),
    0.448: (4.92e-15, 47.53, 2.03e14, 2.00),
}


def test_1_capacity_table(tmp_path, capsys):
    t0 = time.perf_counter()
    code = cli_main(["capacity", "--tau", *map(str, CAPACITY_TABLE), "--dim", "269",
                     "--out", str(tmp_path / "cap")])
    capsys.readouterr()
    rows = json.loads((tmp_path / "cap.capacity.json").read_text())["rows"]
    dt = time.perf_counter() - t0
    bad = []
    for r in rows:
        mu, l2, gv, a = CAPACITY_TABLE[r["tau"]]
        if sig3(r["mu"]) != mu or sig3(r["gv_bound"]) != gv:
            bad.append((r["tau"], "mu/A_GV", r["mu"], r["gv_bound"]))
        if abs(r["log2_gv"] - l2) > 0.05:
            bad.append((r["tau"], "log2", r["log2_gv"]))
        if round(r["alpha_star_orthogonal"], 2) != a:
            bad.append((r["tau"], "alpha*", r["alpha_star_orthogonal"]))
    ok = code == 0 and not bad and dt < 1.0 and len(rows) == 6
    report(1, ok, f"6 rows at d=269 match to 3 s.f. / log2 +-0.05 (mismatches={bad}); {dt:.3f}s")


def test_2_full_sphere():
    t0 = time.perf_counter()
    rep = gv_bound(0.391, 512)
    dt = time.perf_counter() - t0
    ok = (abs(rep.mu.linear / 1.74e-20 - 1) < 0.01 and abs(rep.gv_bound / 5.75e19 - 1) < 0.01
          and round(rep.log2_gv, 1) == 65.6 and dt < 1.0)
    report(2, ok, f"mu(0.391,512)={rep.mu.linear:.4e} A_GV={rep.gv_bound:.4e} "
                  f"log2={rep.log2_gv:.2f}; {dt:.3f}s")


def test_3_low_dimension():
    t0 = time.perf_counter()
    e2 = abs(cap_volume(0.5, 2).linear - 1 / 3)
    e3 = max(abs(cap_volume(t, 3).linear - (1 - t) / 2) for t in np.linspace(0, 0.999, 1000))
    dt = time.perf_counter() - t0
    report(3, e2 < 1e-12 and e3 < 1e-12 and dt < 1.0,
           f"|mu(0.5,2)-1/3|={e2:.1e}, max |mu(t,3)-(1-t)/2|={e3:.1e}; {dt:.3f}s")


def test_4_gaussian_overestimate():
    t0 = time.perf_counter()
    ratio = gaussian_cap_approx(0.391, 269) / cap_volume(0.391, 269).linear
    dt = time.perf_counter() - t0
    report(4, abs(ratio - 5.3) <= 0.2 and dt < 1.0, f"Gaussian/exact = {ratio:.3f}; {dt:.3f}s")


def test_5_alpha_star():
    t0 = time.perf_counter()
    worst_b = worst_c = 0.0
    n = 0
    for tau in np.linspace(0.05, 0.95, 20):
        for frac in np.linspace(-0.9, 0.9, 25):
            p = frac * tau
            a = alpha_star(p, tau)
            worst_b = max(worst_b, abs(a - bisection_alpha_star(p, tau, tol=1e-11)))
            worst_c = max(worst_c, abs(displaced_cosine(p, a) - tau))
            n += 1
    spots = (round(alpha_star(0.0, 0.391), 2), round(alpha_star(0.3, 0.391), 1),
             round(alpha_star(0.0, 0.448), 2))
    dt = time.perf_counter() - t0
    ok = n == 500 and worst_b <= 1e-9 and worst_c <= 1e-9 and spots == (2.35, 9.5, 2.00) and dt < 5
    report(5, ok, f"{n} pairs: max|closed-bisect|={worst_b:.1e}, max|cos-tau|={worst_c:.1e}, "
                  f"spots={spots}; {dt:.3f}s")


def test_6_safety_buffer():
    t0 = time.perf_counter()
    a = safety_buffer_analysis(0.391, 0.031, 269).capacity_at_tau_safe
    b = safety_buffer_analysis(0.391, 0.072, 269).capacity_at_tau_safe
    head = b.headroom(1e6)
    dt = time.perf_counter() - t0
    ok = (abs(a.alpha_star_orthogonal - 2.59) <= 0.01 and abs(a.gv_bound / 1.81e9 - 1) <= 0.01
          and abs(b.gv_bound / 2.38e7 - 1) <= 0.01 and round(head) == 24 and dt < 1.0)
    report(6, ok, f"alpha*(0.360)={a.alpha_star_orthogonal:.4f} A_GV(0.360)={a.gv_bound:.4e} "
                  f"A_GV(0.319)={b.gv_bound:.4e} headroom={head:.1f}x; {dt:.3f}s")


@pytest.mark.slow
def test_7_monte_carlo():
    t0 = time.perf_counter()
    zs = []
    for d in (3, 8, 16):
        for tau in (0.2, 0.5):
            p, se = mc_cap_volume(tau, d, 10_000_000, seed=d * 10 + int(tau * 10))
            zs.append(abs(p - cap_volume(tau, d).linear) / se)
    dt = time.perf_counter() - t0
    report(7, max(zs) <= 3 and dt < 60, f"max |MC-exact|/SE = {max(zs):.2f} over 6 cells; {dt:.1f}s")


def _brute_force(V, G, tau):
    V = V.astype(np.float64)
    G = G.astype(np.float64)
    nc = 100.0 * np.mean((V @ G.T).max(axis=1) < tau) if len(V) else 100.0
    bad = 0
    for s in range(0, len(V), 4096):
        blk = V[s:s + 4096] @ V.T
        rows = np.arange(s, min(s + 4096, len(V)))
        blk[rows - s, rows] = -np.inf
        bad += int(np.count_nonzero(np.triu(blk >= tau, k=s + 1)))
    pairs = len(V) * (len(V) - 1) // 2
    return nc, 100.0 * (1 - bad / pairs) if pairs else 100.0


# Per-run attempt budget for criterion 8. At d=64, tau=0.391 a 10k-centroid
# gallery already covers ~99.8% of the sphere, so N=50,000 is out of reach;
# the budget keeps both runs inside the 10-minute limit.
DESK_BUDGET = 600_000


@pytest.mark.slow
def test_8_desk_provisioning():
    t0 = time.perf_counter()
    g = sample_vmf_mixture(SynthGalleryConfig(64, 100, 100, 16.0, seed=2024))
    pca = fit_pca(g)
    cfg = AllocConfig(tau=0.391, alpha=4.0, k_neighbors=10, temperature=0.1, kappa=1.0,
                      seed=7, max_total_attempts=DESK_BUDGET)
    outs = []
    for workers in (1, 8):
        try:
            vs, st = provision(g, pca, cfg, 50_000, workers=workers)
        except MaxAttemptsExceeded as exc:
            vs, st = exc.partial, exc.stats
        outs.append((vs, st))
    (v1, s1), (v8, _) = outs
    same = (v1.embeddings.data.tobytes() == v8.embeddings.data.tobytes()
            and v1.records == v8.records)
    nc, isep = _brute_force(v1.embeddings.data, g.centroids.data, 0.391)
    dt = time.perf_counter() - t0
    ok = v1.count == 50_000 and nc == 100.0 and isep == 100.0 and same and dt < 600
    report(8, ok, f"M=10000 d=64: provisioned {v1.count}/50000 in {s1.attempted} attempts "
                  f"(rejections {s1.rejections_by_cause}); brute-force re-verify "
                  f"{nc:.2f}/{isep:.2f}; identical across threads 1/8: {same}; {dt:.0f}s")


def test_9_poisson_suite():
    t0 = time.perf_counter()
    mle = poisson_mle(1e6, 1.8e5, 3)
    zb = zero_collision_bound(1e6, 1.8e5, 0.95)
    lams = [expected_collisions(1e6, 1.8e5, mu) for mu in (4.21e-8, 1.35e-11, 4.92e-15)]
    lam_ok = all(abs(x / y - 1) <= 0.01 for x, y in zip(lams, (7.58e3, 2.43, 8.9e-4)))
    p0, p1 = poisson_pmf(2.43, 0), poisson_pmf(2.43, 1)
    dt = time.perf_counter() - t0
    ok = (mle == 6.0e10 and abs(zb / 6.0e10 - 1) <= 0.005 and lam_ok
          and abs(p0 - 0.088) <= 0.002 and abs(p1 - 0.214) <= 0.003 and dt < 1.0)
    report(9, ok, f"MLE={mle:.3e} zero-bound={zb:.4e} lambda={[f'{x:.3g}' for x in lams]} "
                  f"pmf(0)={p0:.4f} pmf(1)={p1:.4f}; {dt:.3f}s")


def test_10_ci_coverage():
    t0 = time.perf_counter()
    N, L = 1e6, 1.8e5
    cover = {}
    for lam in (0.5, 2.43, 50.0):
        truth = N * L / lam
        draws = np.random.default_rng(int(lam * 1000)).poisson(lam, 200)
        cover[lam] = float(np.mean([lo <= truth <= hi for lo, hi in
                              (exact_poisson_ci(N, L, int(c), 0.95) for c in draws)]))
    dt = time.perf_counter() - t0
    ok = all(c >= 0.93 for c in cover.values()) and dt < 10
    report(10, ok, f"95% CI coverage over 200 draws: {cover}; {dt:.3f}s")


def test_11_acceptance_model():
    t0 = time.perf_counter()
    a = acceptance_probability_model(360232, 1e6, 7.41e10)
    b = acceptance_probability_model(360232, 1e7, 7.41e10)
    dt = time.perf_counter() - t0
    ok = abs(a - 0.99998) <= 1e-5 and abs(b - 0.99986) <= 1e-5 and dt < 1.0
    report(11, ok, f"p_accept(1e6)={a:.6f} p_accept(1e7)={b:.6f}; {dt:.3f}s")


@pytest.mark.slow
def test_12_open_world_flatness():
    t0 = time.perf_counter()
    g = sample_vmf_mixture(SynthGalleryConfig(128, 40, 50, 30.0, seed=12))
    vs, _ = provision(g, fit_pca(g), AllocConfig(tau=0.391, seed=12), 1000)
    n, L, pair_rate = vs.count, 50_000, 1e-4
    row_rate = pair_rate * n  # each planted row collides with exactly one virtual row
    held = plant_collisions(vs, L, row_rate, 0.391, seed=12)
    fr = [0.1, 0.2, 0.3, 0.4, 0.5, 1.0]
    curve = open_world_stress(vs, held, 0.391, fr)
    se = [math.sqrt(row_rate * (1 - row_rate) / s) / n for s in curve.sizes]
    dev = [abs(r - pair_rate) / e for r, e in zip(curve.rates[:5], se[:5])]
    direct = count_collisions(vs, held, 0.391) / (n * L)
    dt = time.perf_counter() - t0
    ok = max(dev) < 3 and curve.rates[-1] == direct and dt < 120
    report(12, ok, f"rates {[f'{r:.3e}' for r in curve.rates[:5]]} vs 1e-4: max dev "
                   f"{max(dev):.2f} SE; full-set rate {curve.rates[-1]:.4e} == direct "
                   f"{direct:.4e}; {dt:.1f}s")


def test_13_pair_protocols():
    t0 = time.perf_counter()
    real = sample_vmf_mixture(SynthGalleryConfig(64, 30, 20, 25.0, seed=13))
    virt, _ = provision(real, fit_pca(real), AllocConfig(tau=0.391, seed=13), 400)
    R, V = real.centroids.data, virt.embeddings.data
    a = np.repeat(np.arange(R.shape[0]), V.shape[0])
    b = np.tile(np.arange(V.shape[0]), R.shape[0])
    rv = PairList(a, b, np.zeros(a.size, bool))
    far = evaluate_pairs(R, V, rv, threshold=0.391, protocol="R-V").far

    # R-R genuine pairs: each real row against a noisy re-encoding of itself
    rng = np.random.default_rng(13)
    noisy = R + 0.25 * rng.standard_normal(R.shape).astype(np.float32) / math.sqrt(R.shape[1])
    noisy /= np.linalg.norm(noisy, axis=1, keepdims=True)
    m = R.shape[0]
    gen = np.arange(m) % 2 == 0
    bi = np.where(gen, np.arange(m), (np.arange(m) + 7) % m)
    folds = np.arange(m) % 10
    rr = PairList(np.arange(m), bi, gen, folds)
    rep = evaluate_pairs(R, noisy.astype(np.float32), rr, tar=0.95)
    exact = True
    for pf in rep.per_fold:
        scores = []
        for i, j in zip(rr.a_index[(folds != pf["fold"]) & gen], rr.b_index[(folds != pf["fold"]) & gen]):
            acc = 0.0
            for x, y in zip(R[i], noisy.astype(np.float32)[j]):
                acc += float(x) * float(y)
            scores.append(acc)
        s = sorted(scores)
        k = math.ceil(0.95 * len(s) - 1e-9)
        exact &= pf["threshold"] == s[len(s) - k]
    dt = time.perf_counter() - t0
    ok = far == 0.0 and exact and non_collision_rate(V, R, 0.391) == 100.0 and dt < 30
    report(13, ok, f"R-V FAR at 0.391 over {a.size} impostor pairs = {far:.2f}%; "
                   f"10 fold thresholds match order-statistic oracle: {exact}; {dt:.2f}s")
