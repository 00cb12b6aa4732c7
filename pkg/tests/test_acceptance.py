"""End-to-end acceptance checks, one per criterion.

Each test prints a single ``PASS``/``FAIL`` line with the measured
quantities next to the required bounds, then asserts.  The reduced error
table takes several minutes; set ``HOMOCONTACT_FULL_TABLE=1`` to also run
the full-resolution grids (workstation budget).
"""

import gc
import os
import time

import numpy as np
import pytest
import scipy.sparse as sp

from homocontact.assembly import (
    GAUSS_WEIGHTS,
    Laminate,
    MicrostructureSpec,
    assemble_stiffness,
    sample_coefficient,
)
from homocontact.cell import corrector_h1_norms, solve_correctors
from homocontact.cli import GRID_PRESETS, StudyConfig, run_study, validate_config
from homocontact.contact import ContactProblemSpec, assemble_contact_system, fixed_point_solve
from homocontact.linsolve import SolverConfig, cg_solve
from homocontact.mesh import build_cell_mesh, build_domain_mesh
from homocontact.metrics import err0, err2, estimate_rate
from homocontact.recon import reconstruct
from oracles import newton_contact

# reference error-table values
TABLE_ERR0 = {16: 0.00328, 32: 0.00164, 64: 0.00082, 128: 0.00049}
TABLE_ERR2 = 0.219


def _verdict(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}")
    assert ok, detail


def test_constant_coefficient_degeneracy(tmp_path, capsys):
    start = time.perf_counter()
    micro = MicrostructureSpec(1.0, 1.0)
    corr = solve_correctors(micro, 16)
    report = run_study(StudyConfig(kappa1=1.0, kappa2=1.0, grids=[(8, 16)], out_dir=str(tmp_path)))
    elapsed = time.perf_counter() - start
    row = report.rows[0]
    n_corr = max(float(np.abs(corr.values).max()), float(corrector_h1_norms(corr).max()))
    d_tensor = float(np.abs(corr.tensor - np.eye(2)).max())
    errs = max(row.err0, row.err1, row.err2)
    ok = report.ok and n_corr <= 1e-9 and d_tensor <= 1e-10 and errs <= 1e-9 and elapsed < 10
    detail = (
        f"|N_l| {n_corr:.1e} (<=1e-9), |A-kI| {d_tensor:.1e} (<=1e-10), "
        f"max ERR {errs:.1e} (<=1e-9), {elapsed:.1f}s (<10s)"
    )
    _verdict(capsys, 1, "constant-coefficient degeneracy", ok, detail)


def test_laminate_oracle(capsys):
    target = np.diag([4 / 3, 3 / 2])
    errs = [float(np.abs(solve_correctors(Laminate(), M).tensor - target).max()) for M in (8, 16, 32, 64)]
    # the discrete tensor is exact up to round-off; "shrinking" is judged above that floor
    shrinking = all(b <= max(a, 1e-12) for a, b in zip(errs, errs[1:]))
    ok = errs[-1] <= 1e-3 and shrinking
    detail = f"error at M=8..64: {', '.join(f'{e:.1e}' for e in errs)} (M=64 <= 1e-3, non-increasing)"
    _verdict(capsys, 2, "laminate closed form", ok, detail)


def test_voigt_reuss_and_energy_identity(capsys):
    corr = solve_correctors(MicrostructureSpec(), 32)
    A = corr.tensor
    lam = np.linalg.eigvalsh(0.5 * (A + A.T))
    w = GAUSS_WEIGHTS * corr.mesh.element_area
    worst = 0.0
    for xi in ([1.0, 0.0], [0.0, 1.0], [1.0, 1.0]):
        xi = np.array(xi)
        flux = np.einsum("eqil,l->eqi", corr.gradients, xi) + xi
        energy = np.einsum("e,q,eqi,eqi->", corr.field, w, flux, flux)
        worst = max(worst, abs(xi @ A @ xi - energy) / energy)
    off = max(abs(A[0, 1]), abs(A[1, 0]))
    ok = off <= 1e-8 and 8 / 7 <= lam[0] and lam[1] <= 5 / 4 and worst <= 1e-8
    detail = (
        f"|A12| {off:.1e} (<=1e-8), eigenvalues {lam[0]:.6f}, {lam[1]:.6f} in [{8 / 7:.6f}, 1.25], "
        f"energy identity rel {worst:.1e} (<=1e-8)"
    )
    _verdict(capsys, 3, "Voigt-Reuss bounds and energy identity", ok, detail)


def _table_rows(tmp_path, grids):
    cfg = StudyConfig(grids=grids, out_dir=str(tmp_path))
    start = time.perf_counter()
    report = run_study(cfg)
    gc.collect()
    return report, time.perf_counter() - start


@pytest.mark.slow
def test_table_reduced_resolution(tmp_path, capsys):
    report, elapsed = _table_rows(tmp_path, GRID_PRESETS["reduced"])
    if not report.ok:
        _verdict(capsys, 4, "reduced error table", False, f"study failed: {report.failure}")
    by_n = {r.N: r for r in report.rows}
    e0 = by_n[16].err0
    err2s = np.array([r.err2 for r in report.rows])
    r0, r1 = report.rates["ERR0"], report.rates["ERR1"]
    checks = [
        abs(e0 - TABLE_ERR0[16]) <= 0.25 * TABLE_ERR0[16],
        np.all(np.abs(err2s - TABLE_ERR2) <= 0.01),
        np.ptp(err2s) < 0.002,
        0.8 <= r0 <= 1.1,
        0.4 <= r1 <= 0.7,
        elapsed < 15 * 60,
    ]
    rows = "; ".join(f"N={r.N}: {r.err0:.5f}/{r.err1:.5f}/{r.err2:.5f}" for r in report.rows)
    detail = (
        f"{rows}; ERR0(16) {e0:.5f} (0.00328 +-25%), ERR2 spread {np.ptp(err2s):.5f} (<0.002), "
        f"rates ERR0 {r0:.3f} [0.8,1.1] ERR1 {r1:.3f} [0.4,0.7], {elapsed:.0f}s (<900s)"
    )
    _verdict(capsys, 4, "reduced error table", all(checks), detail)


def test_fixed_point_contraction(capsys):
    tol = 1e-10
    spec, micro = ContactProblemSpec(), MicrostructureSpec()
    worst_ratio, worst_gap = 0.0, 0.0
    for N, M in ((2, 8), (4, 8)):
        mesh = build_domain_mesh(N, M, spec.partition, micro.rho)
        system = assemble_contact_system(mesh, sample_coefficient(micro, mesh, N), None, spec)
        u, rep = fixed_point_solve(system, tol)
        ref = newton_contact(system.stiffness, system.robin_mass, system.partial_mass, system.load, system.alpha)
        worst_ratio = max(worst_ratio, max(rep.ratios[-3:]))
        worst_gap = max(worst_gap, np.linalg.norm(u[system.free] - ref) / np.linalg.norm(ref))
    issues = validate_config(StudyConfig(alpha=1.5))
    rejected = any("solvability gate" in i for i in issues)
    ok = worst_ratio < 1 and worst_gap <= 10 * tol and rejected
    detail = (
        f"tail update ratio {worst_ratio:.3f} (<1), Newton gap {worst_gap:.1e} (<= {10 * tol:.0e}), "
        f"alpha=1.5 rejected: {rejected}"
    )
    _verdict(capsys, 5, "fixed-point contraction", ok, detail)


def test_robin_rate(tmp_path, capsys):
    cfg = StudyConfig(problem="robin", alpha=1.0, grids=GRID_PRESETS["robin"], out_dir=str(tmp_path))
    report = run_study(cfg)
    rate = report.rates["ERR0"]
    errs = ", ".join(f"{r.err0:.2e}" for r in report.rows)
    ok = report.ok and rate >= 0.85
    _verdict(capsys, 6, "Robin L2 rate", ok, f"ERR0 over N=4..32: {errs}; rate {rate:.3f} (>=0.85)")


def _property_checks():
    results = {}
    rng = np.random.default_rng(7)

    mesh = build_domain_mesh(4, 8, rho=0.25)
    kappa = sample_coefficient(MicrostructureSpec(), mesh, 4)
    K = assemble_stiffness(mesh, kappa)
    u = rng.standard_normal(mesh.n_nodes)
    x = mesh.node_coords[:, 0]
    results["stiffness symmetric"] = abs(K - K.T).max() <= 1e-14
    results["stiffness rows sum to zero"] = np.abs(K @ np.ones(mesh.n_nodes)).max() <= 1e-12
    results["stiffness energy >= 0"] = u @ K @ u >= 0
    results["linear field energy"] = np.isclose(x @ K @ x, np.sum(kappa) * mesh.element_area, rtol=1e-12)

    # CG minimizes the error energy, so it never grows
    A = (K + sp.identity(mesh.n_nodes)).tocsr()
    b = rng.standard_normal(mesh.n_nodes)
    x_star = np.linalg.solve(A.toarray(), b)
    errs = [np.sqrt(x_star @ A @ x_star)]
    cg_solve(A, b, SolverConfig(1e-12), callback=lambda v: errs.append(np.sqrt((x_star - v) @ A @ (x_star - v))))
    results["CG error energy non-increasing"] = bool(np.all(np.diff(errs) <= 1e-12 * errs[0]))

    corr = solve_correctors(MicrostructureSpec(), 16)
    _, pmap = build_cell_mesh(16)
    reps = pmap.leader
    # each periodic node counted once: the mean over the M x M representatives
    means = np.abs(corr.values[:, np.unique(reps)].mean(axis=1)).max()
    results["corrector zero mean"] = means <= 1e-10 * np.abs(corr.values).max()
    results["corrector periodic"] = np.abs(corr.values - corr.values[:, reps]).max() == 0.0

    fine = build_domain_mesh(2, 16)
    v1, v2 = rng.standard_normal((2, fine.n_nodes))
    lin = reconstruct(2 * v1 - 3 * v2, corr, fine, 2) - (2 * reconstruct(v1, corr, fine, 2) - 3 * reconstruct(v2, corr, fine, 2))
    results["reconstruction linear"] = np.abs(lin).max() <= 1e-11

    lam = solve_correctors(Laminate(), 16)
    g = reconstruct(fine.node_coords[:, 0].copy(), lam, fine, 2)
    flux = sample_coefficient(Laminate(), fine, 2)[:, None] * g[..., 0]
    results["laminate flux continuous"] = np.ptp(flux) <= 1e-10

    u0 = rng.standard_normal(fine.n_nodes)
    ue = u0 + 0.1 * rng.standard_normal(fine.n_nodes)
    results["metrics scale invariant"] = np.isclose(err0(5 * ue, 5 * u0, fine), err0(ue, u0, fine)) and np.isclose(
        err2(5 * ue, 5 * u0, fine), err2(ue, u0, fine)
    )
    samples = [(2.0**-k, 3 * 2.0 ** (-k)) for k in range(2, 6)]
    results["rate of a power law"] = np.isclose(estimate_rate(samples), 1.0)
    return results


def test_property_suites(capsys):
    results = _property_checks()
    failed = [k for k, v in results.items() if not v]
    detail = f"{len(results) - len(failed)}/{len(results)} invariants hold" + (f"; failed: {failed}" if failed else "")
    _verdict(capsys, 7, "property suites", not failed, detail)


@pytest.mark.slow
@pytest.mark.skipif(os.environ.get("HOMOCONTACT_FULL_TABLE") != "1", reason="set HOMOCONTACT_FULL_TABLE=1")
def test_full_table(tmp_path, capsys):
    report, elapsed = _table_rows(tmp_path, GRID_PRESETS["full"][:4])
    rows = {r.N: r for r in report.rows}
    ok = report.ok and all(abs(rows[N].err0 - v) <= 0.25 * v for N, v in TABLE_ERR0.items())
    detail = "; ".join(f"N={N}: {rows[N].err0:.5f} vs {v}" for N, v in TABLE_ERR0.items() if N in rows)
    _verdict(capsys, "4*", "full-resolution error table", ok, f"{detail}; {elapsed:.0f}s")
