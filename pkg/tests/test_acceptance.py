"""Acceptance suite: one test per numbered criterion, at the stated tolerance.

Each test prints a single PASS/FAIL line (run with ``pytest -s`` to see them
live).  The heavyweight runs are shared through module-scoped fixtures: the
two-level SDE ensemble serves criteria 1, 3 and 8, the Fokker-Planck solve
serves criteria 6 and 7.
"""

import time

import numpy as np
import pytest
from scipy import stats

from qtherm import canonical as can
from qtherm import cli
from qtherm import fokker_planck as fp
from qtherm import geometry as geo
from qtherm import moments as mom
from qtherm import sde

from oracles import mc_partition, rand_hermitian, rand_state, variance_se

H2 = np.diag([1.0, -1.0]).astype(complex)


def _report(num, ok, detail):
    print(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def spin_half_run():
    """h=1, beta=1, kappa=0.5, dt=1e-3, 10^4 trajectories, t=40."""
    params = sde.SdeParams(
        beta=1.0, kappa=0.5, dt=1e-3, steps=40_000, ensemble_size=10_000,
        master_seed=2024, record_stride=100,
    )
    t0 = time.time()
    series = sde.simulate_ensemble("uniform", H2, params, workers=4, with_moments=True)
    return params, series, time.time() - t0


@pytest.fixture(scope="module")
def fp_run():
    """Displaced Gaussian relaxing to the canonical state at beta h = 3."""
    m, h, beta, kappa = 800, 1.0, 3.0, 1.0
    init = fp.Density1D.gaussian(m, center=0.2, width=0.25)
    series = fp.solve(
        init, h, beta, kappa, t_max=10.0,
        record_every=None, track_step_inequality=True, l1_reference="stationary",
    )
    return (m, h, beta, kappa), series


def test_criterion_1_equilibrium_energy(spin_half_run):
    params, series, wall = spin_half_run
    target = 1.0 - 1.0 / np.tanh(1.0)  # 1/beta - h coth(beta h) = -0.31304...
    window = series.times >= 20.0
    u_late = series.mean_energy[window].mean()
    # records are correlated in time: the mean per-record error bounds the
    # error of their average
    se = series.stderr_energy[window].mean()
    ok = abs(u_late - target) <= 3 * se and wall < 240.0
    _report(
        1, ok,
        f"late-time U = {u_late:.5f} vs {target:.5f} (3 se = {3*se:.5f}), "
        f"ensemble wall time {wall:.0f} s",
    )
    assert abs(target - (-0.31304)) < 1e-5
    assert np.all(series.mean_energy >= -1 - 1e-9) and np.all(series.mean_energy <= 1 + 1e-9)


def test_criterion_2_generator_conventions():
    reps = 100_000
    rng_a = np.random.default_rng(11)
    h3 = rand_hermitian(3, rng_a)
    psi3 = rand_state(3, rng_a)
    h4 = rand_hermitian(4, rng_a)
    psi4 = rand_state(4, rng_a)
    h_off = np.array([[0.5, 0.3 - 0.2j], [0.3 + 0.2j, -0.5]], dtype=complex)
    pairs = [
        (H2, np.array([1.0, 1.0], dtype=complex) / np.sqrt(2), 1.0, 0.5, 0.01),
        (H2, np.array([np.cos(np.pi / 8), np.exp(1j * np.pi / 5) * np.sin(np.pi / 8)]), 0.0, 0.7, 0.01),
        (h3, psi3, 0.7, 0.5, 0.01),
        (h4, psi4, 2.0, 1.0, 0.002),
        (h_off, np.array([1.0, 0.0], dtype=complex), 3.0, 0.4, 0.01),
    ]
    worst_drift = worst_diff = 0.0
    for idx, (h, psi, beta, kappa, dt) in enumerate(pairs):
        n = h.shape[0]
        params = sde.SdeParams(beta=beta, kappa=kappa, dt=dt, steps=1)
        e0 = geo.expectation(h, psi)
        v0 = geo.variance(h, psi)
        drift_th = 0.5 * kappa**2 * (n * (geo.uniform_average(h) - e0) - beta * v0)
        rng = np.random.default_rng(100 + idx)
        batch = np.tile(psi, (reps, 1))
        dw = rng.normal(0.0, np.sqrt(dt), size=(reps, sde.noise_dim(n)))
        out = sde.step(batch, h, params, dw)
        de = np.einsum("bi,ij,bj->b", out.conj(), h, out).real - e0
        drift_emp = de.mean() / dt
        drift_se = de.std(ddof=1) / np.sqrt(reps) / dt
        z_drift = abs(drift_emp - drift_th) / drift_se
        var_emp = de.var(ddof=1) / dt
        var_se = variance_se(de) / dt
        z_var = abs(var_emp - kappa**2 * v0) / var_se
        worst_drift = max(worst_drift, z_drift)
        worst_diff = max(worst_diff, z_var)
    ok = worst_drift < 4.0 and worst_diff < 4.0
    _report(2, ok, f"max |z| over 5 pairs: drift {worst_drift:.2f}, diffusion {worst_diff:.2f} (limit 4)")


def test_criterion_3_energy_flow(spin_half_run):
    _, series2, _ = spin_half_run
    fractions = {}
    z2 = np.abs(series2.ode_residual) / series2.ode_residual_stderr
    fractions[2] = float((z2 <= 3.0).mean())
    rng = np.random.default_rng(21)
    for n, beta, kappa in ((3, 0.8, 0.5), (4, 0.6, 0.5)):
        h = rand_hermitian(n, rng)
        params = sde.SdeParams(
            beta=beta, kappa=kappa, dt=2e-3, steps=4000, ensemble_size=4000,
            master_seed=300 + n, record_stride=40,
        )
        series = sde.simulate_ensemble("uniform", h, params, workers=4)
        z = np.abs(series.ode_residual) / series.ode_residual_stderr
        fractions[n] = float((z <= 3.0).mean())
    ok = all(f >= 0.90 for f in fractions.values())
    _report(3, ok, "fraction of times with |z| <= 3: " + ", ".join(
        f"N={n}: {f:.3f}" for n, f in sorted(fractions.items())))


def test_criterion_4_partition_function_exactness():
    # n = 1 closed form to machine precision
    worst_exact = 0.0
    for beta, h in ((0.5, 1.0), (1.0, 1.0), (3.0, 0.7), (2.0, 2.5)):
        err = abs(can.partition_function([-h, h], beta) - np.sinh(beta * h) / (beta * h))
        worst_exact = max(worst_exact, err)
    rng = np.random.default_rng(41)
    worst_z = 0.0
    for i in range(10):
        n = int(rng.integers(1, 7))
        levels = np.sort(rng.normal(scale=1.5, size=n + 1))
        for beta in (0.3, 1.0, 3.0):
            z = can.partition_function(levels, beta)
            est, se = mc_partition(levels, beta, 10**6, np.random.default_rng(5000 + 10 * i + int(beta * 3)))
            worst_z = max(worst_z, abs(z - est) / se)
    ok = worst_exact < 1e-12 and worst_z < 4.0
    _report(4, ok, f"n=1 closed-form error {worst_exact:.1e} (limit 1e-12); "
                   f"max MC |z| over 30 cases {worst_z:.2f} (limit 4)")


def test_criterion_5_heat_capacity_identity():
    worst = 0.0
    for levels in ([-1.0, 1.0], [-1.0, 0.0, 1.0], [0.0, 0.7, 1.1, 3.0]):
        for beta in (0.5, 1.0, 2.0):
            worst = max(worst, can.verify_capacity_identity(levels, beta))
    t2c = can.heat_capacity([-1.0, 1.0], 1.0)  # T = 1
    ref_err = abs(t2c - 0.27593)
    ok = worst <= 1e-4 and ref_err <= 1e-4
    _report(5, ok, f"max identity residual {worst:.2e} (limit 1e-4); "
                   f"spin-1/2 T^2 C = {t2c:.5f} vs 0.27593")


def test_criterion_6_fokker_planck_stationarity_and_convergence(fp_run):
    (m, h, beta, kappa), series = fp_run
    # per-step preservation of the canonical state
    stat = fp.Density1D.stationary(m, h, beta)
    cur = stat
    dt = fp.stable_dt(m, h, beta, kappa)
    worst = 0.0
    for _ in range(20):
        nxt = fp.fp_step(cur, h, beta, kappa, dt)
        worst = max(worst, float(np.abs(nxt.rho - cur.rho).max()))
        cur = nxt
    l1 = series.l1_to_reference
    below = series.times[l1 < 1e-6]
    crossing = below[0] if len(below) else np.inf
    ok = worst < 1e-12 and crossing <= 10.0 / kappa**2
    _report(6, ok, f"stationary per-step drift {worst:.1e} (limit 1e-12); "
                   f"L1 < 1e-6 reached at t = {crossing:.2f} (limit 10/kappa^2 = {10.0/kappa**2:.1f})")


def test_criterion_7_entropy_production(fp_run):
    (m, h, beta, kappa), series = fp_run
    min_rate = series.min_step_rate
    scale = np.maximum.reduce(
        [np.abs(series.dsdt), series.production, np.full_like(series.production, 1e-8)]
    )
    rel = np.abs(series.residual) / scale
    interior = (series.times > 0.3 / kappa**2) & (series.times < series.times[-1])
    worst_rel = rel[interior].max()
    ok = min_rate >= -1e-6 and worst_rel <= 1e-4
    _report(7, ok, f"min per-step (dS - beta dU)/dt = {min_rate:.2e} (limit -1e-6); "
                   f"max relative equality residual after transient {worst_rel:.2e} (limit 1e-4)")


def test_criterion_8_density_matrix_law(spin_half_run):
    params, series, _ = spin_half_run
    # (a) algebraic structure on random valid inputs
    rng = np.random.default_rng(81)
    worst_tr = worst_herm = 0.0
    for n in (2, 3, 4):
        h = rand_hermitian(n, rng)
        states = np.array([rand_state(n, rng) for _ in range(6)])
        w = rng.dirichlet(np.ones(6))
        pi = geo.projector(states)
        rho = np.einsum("s,sij->ij", w, pi)
        r2 = np.einsum("s,sij,skl->ijkl", w, pi, pi)
        rhs = mom.liouville_rhs(rho, r2, h, 1.3, 0.7)
        worst_tr = max(worst_tr, abs(np.trace(rhs)))
        worst_herm = max(worst_herm, float(np.abs(rhs - rhs.conj().T).max()))
    # (b) ensemble finite-difference residuals on the criterion-1 run
    report = mom.verify_liouville(
        series.moments, H2, params.beta, params.kappa,
        residual_stats=(
            series.liouville_residual,
            series.liouville_stderr_re,
            series.liouville_stderr_im,
        ),
    )
    # (c) canonical moments are a fixed point within Monte Carlo error
    batches = []
    for b in range(16):
        rng_b = np.random.default_rng(900 + b)
        rho, _ = can.equilibrium_density_matrix(H2, 1.0, samples=100_000, rng=rng_b)
        rng_b = np.random.default_rng(900 + b)
        r2, _ = can.equilibrium_second_moment(H2, 1.0, samples=100_000, rng=rng_b)
        batches.append(mom.liouville_rhs(rho, r2, H2, 1.0, 0.5))
    batches = np.array(batches)
    mean = batches.mean(axis=0)
    se_re = batches.real.std(axis=0, ddof=1) / np.sqrt(len(batches)) + 1e-14
    se_im = batches.imag.std(axis=0, ddof=1) / np.sqrt(len(batches)) + 1e-14
    fixed_ok = np.all(np.abs(mean.real) < 4 * se_re) and np.all(np.abs(mean.imag) < 4 * se_im)
    ok = (
        worst_tr < 1e-12 and worst_herm < 1e-12
        and report.fraction_within_3 >= 0.95 and fixed_ok
    )
    _report(8, ok, f"trace {worst_tr:.1e}, hermiticity {worst_herm:.1e} (limits 1e-12); "
                   f"residuals within 3: {report.fraction_within_3:.3f} (limit 0.95); "
                   f"equilibrium fixed point within 4 se: {fixed_ok}")


def test_criterion_9_oracle_equivalence():
    configs = [(0.0, 0.5, 2.0), (1.0, 0.5, 5.0), (2.0, 1.0, 5.0)]
    h_split, dt, nsamp = 1.0, 1e-3, 3000
    psi0 = np.array([1.0, 1.0], dtype=complex) / np.sqrt(2)  # equator
    pvals = []
    for i, (beta, kappa, t_end) in enumerate(configs):
        steps = int(round(t_end / dt))
        params = sde.SdeParams(
            beta=beta, kappa=kappa, dt=dt, steps=steps, ensemble_size=nsamp,
            master_seed=7000 + i, record_stride=steps,
        )
        run = sde.simulate_ensemble(psi0, H2, params, workers=4, keep_final_states=True)
        e_ambient = np.einsum(
            "si,ij,sj->s", run.final_states.conj(), H2, run.final_states
        ).real
        rng = np.random.default_rng(7100 + i)
        theta = sde.simulate_theta_ensemble(np.pi / 2, h_split, beta, kappa, dt, steps, nsamp, rng)
        e_oracle = h_split * np.cos(theta)
        pvals.append(stats.ks_2samp(e_ambient, e_oracle).pvalue)
    ok = all(p > 0.01 for p in pvals)
    _report(9, ok, "KS p-values (limit 0.01): " + ", ".join(
        f"(beta={b},kappa={k},t={t}): {p:.3f}" for (b, k, t), p in zip(configs, pvals)))


def test_criterion_10_determinism(tmp_path):
    out = tmp_path / "det.csv"
    cfg = tmp_path / "det.cfg"
    cfg.write_text(
        "mode = simulate\nspectrum = -1,1\nbeta = 1\nkappa = 0.5\ndt = 1e-3\n"
        f"steps = 1000\nensemble = 512\nrecord_stride = 100\nseed = 99\nout = {out}\n"
    )
    blobs = []
    for workers in (1, 4, 8, 1):
        assert cli.main(["--config", str(cfg), "--workers", str(workers)]) == 0
        blobs.append(out.read_bytes())
    ok = blobs[0] == blobs[1] == blobs[2] == blobs[3]
    _report(10, ok, f"4 runs (workers 1/4/8/1), {len(blobs[0])} bytes each, byte-identical: {ok}")
