"""Convergence-study driver.

Reads an INI-style study configuration, solves the correctors once per cell
resolution, runs fine and homogenized solves for every ``(N, M)`` grid and
writes ``study.csv`` and ``summary.txt``.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .assembly import Laminate, MicrostructureSpec, sample_coefficient
from .cell import CorrectorSet, read_correctors, solve_correctors, write_correctors
from .contact import (
    ContactProblemSpec,
    FixedPointError,
    SolvabilityError,
    robin_solve,
    solve_fine,
    solve_homogenized,
)
from .linsolve import PRECONDITIONERS, ConvergenceError, SolverConfig
from .mesh import DIRICHLET, BoundaryPartition, build_domain_mesh
from .metrics import ErrorReport, error_report, estimate_rate, pairwise_rates

log = logging.getLogger("homocontact")

CSV_HEADER = "N,M,ERR0,ERR1,ERR2,fine_iters,homog_iters,wall_seconds"

GRID_PRESETS = {
    "reduced": [(16, 32), (32, 32), (64, 32)],
    "full": [(16, 128), (32, 64), (64, 32), (128, 16), (32, 128)],
    "robin": [(4, 32), (8, 32), (16, 32), (32, 32)],
}


@dataclass
class StudyConfig:
    problem: str = "contact"
    geometry: str = "inclusion"
    kappa1: float = 1.0
    kappa2: float = 2.0
    rho: float = 0.25
    alpha: float = 0.5
    f: float = 1.0
    g: float = 1.0
    grids: list[tuple[int, int]] = field(default_factory=lambda: list(GRID_PRESETS["reduced"]))
    tol: float = 1e-10
    max_iter: int = 200
    cg_tol: float = 1e-12
    preconditioner: str = "amg"
    semi_implicit: bool = False
    out_dir: str = "study_out"

    def microstructure(self):
        if self.geometry == "laminate":
            return Laminate(self.kappa1, self.kappa2)
        return MicrostructureSpec(self.kappa1, self.kappa2, self.rho)

    def contact_spec(self) -> ContactProblemSpec:
        return ContactProblemSpec(self.f, self.g, self.alpha, BoundaryPartition.contact(), self.semi_implicit)

    def solver(self) -> SolverConfig:
        return SolverConfig(rel_tolerance=self.cg_tol, preconditioner=self.preconditioner)


def parse_grids(text: str) -> list[tuple[int, int]]:
    text = text.strip()
    if text in GRID_PRESETS:
        return list(GRID_PRESETS[text])
    grids = []
    for item in text.replace(";", ",").split(","):
        item = item.strip()
        if not item:
            continue
        n, _, m = item.lower().partition("x")
        grids.append((int(n), int(m)))
    return grids


_SECTIONS = {
    "problem": ("problem",),
    "microstructure": ("geometry", "kappa1", "kappa2", "rho"),
    "physics": ("alpha", "f", "g"),
    "grids": ("grids",),
    "solver": ("tol", "max_iter", "cg_tol", "preconditioner", "semi_implicit"),
    "output": ("out_dir",),
}


def _coerce(name: str, raw: str):
    kinds = {f.name: f.type for f in fields(StudyConfig)}
    kind = kinds[name]
    if name == "grids":
        return parse_grids(raw)
    if kind == "bool":
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw.strip()


def load_config(path) -> StudyConfig:
    """Read a key = value config with ``[section]`` headers (sections are optional groupings)."""
    parser = configparser.ConfigParser()
    text = Path(path).read_text(encoding="utf-8")
    if not text.lstrip().startswith("["):
        text = "[study]\n" + text
    parser.read_string(text)
    known = {f.name for f in fields(StudyConfig)}
    aliases = {"kind": "problem", "dir": "out_dir", "out": "out_dir"}
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            name = aliases.get(key, key)
            if name not in known:
                raise ValueError(f"{path}: unknown key {key!r} in [{section}]")
            values[name] = _coerce(name, raw)
    return StudyConfig(**values)


def dump_config(cfg: StudyConfig) -> str:
    lines = []
    for section, keys in _SECTIONS.items():
        lines.append(f"[{section}]")
        for k in keys:
            v = getattr(cfg, k)
            if k == "grids":
                v = ", ".join(f"{n}x{m}" for n, m in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)


def validate_config(cfg: StudyConfig) -> list[str]:
    """Every violated precondition of ``cfg``, each naming the governing assumption.

    An empty list means the configuration is valid.  Never raises.
    """
    issues: list[str] = []
    try:
        _collect_issues(cfg, issues)
    except (TypeError, ValueError, AttributeError) as exc:
        issues.append(f"malformed configuration value: {exc}")
    return issues


def _collect_issues(cfg: StudyConfig, issues: list[str]) -> None:
    if cfg.problem not in ("contact", "robin"):
        issues.append(f"problem kind {cfg.problem!r} must be 'contact' or 'robin'")
    if cfg.geometry not in ("inclusion", "laminate"):
        issues.append(f"geometry {cfg.geometry!r} must be 'inclusion' or 'laminate'")
    if not (cfg.kappa1 > 0 and cfg.kappa2 > 0):
        issues.append("uniform ellipticity: kappa1 and kappa2 must be positive")
    inclusion = cfg.geometry == "inclusion"
    if inclusion and not 0.0 < cfg.rho < 0.5:
        issues.append(f"geometry: inclusion inset rho={cfg.rho} must lie in (0, 1/2)")
    if cfg.problem == "contact":
        kmin = min(cfg.kappa1, cfg.kappa2)
        if not kmin > abs(cfg.alpha):
            issues.append(
                f"solvability gate κ₁ > |α| fails: min coefficient {kmin} <= |alpha| = {abs(cfg.alpha)}"
            )
        if DIRICHLET not in BoundaryPartition.contact().tags:
            issues.append("Gamma_D must be nonempty (norm equivalence on V needs a clamped side)")
    elif cfg.problem == "robin" and not cfg.alpha > 0:
        issues.append(f"Robin coercivity needs alpha > 0, got alpha = {cfg.alpha}")
    if not cfg.grids:
        issues.append("grid list is empty")
    for N, M in cfg.grids:
        if N < 1 or M < 2:
            issues.append(f"grid {N}x{M}: need N >= 1 and M >= 2")
            continue
        if inclusion and 0.0 < cfg.rho < 0.5 and abs(M * cfg.rho - round(M * cfg.rho)) > 1e-9:
            issues.append(f"grid {N}x{M}: M*rho must be an integer so inclusion faces align (M divisible by 4 for rho=0.25)")
        if cfg.problem == "contact" and (N * M) % 2:
            issues.append(f"grid {N}x{M}: N*M must be even so x=1/2 splits the contact boundary at a node")
    if not 0.0 < cfg.tol < 1.0:
        issues.append("fixed-point tol must lie in (0, 1)")
    if not 0.0 < cfg.cg_tol < 1.0:
        issues.append("cg_tol must lie in (0, 1)")
    if cfg.max_iter < 1:
        issues.append("max_iter must be >= 1")
    if cfg.preconditioner not in PRECONDITIONERS:
        issues.append(f"preconditioner must be one of {PRECONDITIONERS}")


# ---------------------------------------------------------------------------
# corrector cache


def _cache_matches(corr: CorrectorSet, coefficient) -> bool:
    return corr.coefficient == coefficient


def load_or_solve_correctors(coefficient, M: int, out_dir: Path | None, cfg: SolverConfig | None = None) -> CorrectorSet:
    path = out_dir / f"correctors_M{M}.txt" if out_dir is not None else None
    if path is not None and path.exists():
        try:
            corr = read_correctors(path)
            if corr.M == M and _cache_matches(corr, coefficient):
                log.info("loaded correctors from %s", path)
                return corr
        except (ValueError, KeyError) as exc:
            log.warning("ignoring unreadable corrector cache %s: %s", path, exc)
    corr = solve_correctors(coefficient, M, cfg)
    if path is not None:
        write_correctors(corr, path)
        # reload so fresh and cached runs see bit-identical data
        corr = read_correctors(path)
    return corr


# ---------------------------------------------------------------------------
# study


@dataclass
class StudyReport:
    rows: list[ErrorReport]
    rates: dict[str, float]
    pairwise: dict[str, list[float]]
    tensors: dict[int, np.ndarray]
    ok: bool
    failure: str | None = None

    @property
    def exit_code(self) -> int:
        return 0 if self.ok else 1


def _solve_pair(cfg: StudyConfig, N: int, M: int, corr: CorrectorSet):
    coefficient = cfg.microstructure()
    solver = cfg.solver()
    if cfg.problem == "robin":
        mesh = build_domain_mesh(N, M, BoundaryPartition.robin(), getattr(coefficient, "rho", None))
        kappa = sample_coefficient(coefficient, mesh, N)
        u_eps, res_f = robin_solve(mesh, kappa, None, cfg.alpha, cfg.f, cfg.g, solver)
        u0, res_h = robin_solve(mesh, None, corr.tensor, cfg.alpha, cfg.f, cfg.g, solver)
        return mesh, u_eps, u0, res_f.iterations, res_h.iterations

    spec = cfg.contact_spec()
    mesh = build_domain_mesh(N, M, spec.partition, getattr(coefficient, "rho", None))
    u_eps, rep_f = solve_fine(spec, coefficient, N, M, mesh, cfg.tol, cfg.max_iter, solver)
    u0, rep_h = solve_homogenized(spec, corr.tensor, N, M, mesh, cfg.tol, cfg.max_iter, solver)
    return mesh, u_eps, u0, rep_f.iterations, rep_h.iterations


def _rate_samples(rows: list[ErrorReport], attr: str):
    seen, samples = set(), []
    for r in rows:
        if r.N in seen:
            continue
        seen.add(r.N)
        samples.append((r.eps, getattr(r, attr)))
    return samples


def _fmt(v: float) -> str:
    return f"{v:.10g}"


def format_csv(rows: list[ErrorReport], rates: dict[str, float]) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(
            ",".join(
                [str(r.N), str(r.M), _fmt(r.err0), _fmt(r.err1), _fmt(r.err2),
                 str(r.fine_iters), str(r.homog_iters), f"{r.wall_seconds:.3f}"]
            )
        )
    if rates:
        lines.append(
            ",".join(["rate", "", *(f"{rates[k]:.4f}" for k in ("ERR0", "ERR1", "ERR2")), "", "", ""])
        )
    return "\n".join(lines) + "\n"


def _compute_rates(rows):
    rates, pairwise = {}, {}
    for key, attr in (("ERR0", "err0"), ("ERR1", "err1"), ("ERR2", "err2")):
        samples = _rate_samples(rows, attr)
        if len(samples) >= 2 and all(e > 0 for _, e in samples):
            rates[key] = estimate_rate(samples)
            pairwise[key] = pairwise_rates(samples)
    return rates, pairwise


def format_summary(cfg: StudyConfig, report: StudyReport) -> str:
    out = ["homogenization study", "", dump_config(cfg)]
    issues = validate_config(cfg)
    out.append("gate checks: " + ("ok" if not issues else "; ".join(issues)))
    kmin = min(cfg.kappa1, cfg.kappa2)
    if cfg.problem == "contact":
        out.append(f"  fine: min kappa = {kmin:g} vs |alpha| = {abs(cfg.alpha):g}")
        for M, A in sorted(report.tensors.items()):
            lam = float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])
            out.append(f"  homogenized (M={M}): min eigenvalue = {lam:.6g} vs |alpha| = {abs(cfg.alpha):g}")
    else:
        out.append(f"  Robin coefficient alpha = {cfg.alpha:g} > 0")
    for M, A in sorted(report.tensors.items()):
        out.append(f"A_hat(M={M}) = [[{A[0, 0]:.10g}, {A[0, 1]:.3g}], [{A[1, 0]:.3g}, {A[1, 1]:.10g}]]")
    out.append("")
    for key, rate in report.rates.items():
        pw = ", ".join(f"{p:.3f}" for p in report.pairwise.get(key, []))
        out.append(f"{key}: least-squares rate {rate:.4f}; pairwise [{pw}]")
    if report.rows:
        e2 = [r.err2 for r in report.rows]
        out.append(f"ERR2 spread: {max(e2) - min(e2):.3e}")
    out.append(f"status: {'ok' if report.ok else 'FAILED: ' + str(report.failure)}")
    return "\n".join(out) + "\n"


def run_study(cfg: StudyConfig, write: bool = True) -> StudyReport:
    """Run every grid of ``cfg`` in order; stop at the first failed solve."""
    issues = validate_config(cfg)
    if issues:
        raise ValueError("invalid study configuration:\n  " + "\n  ".join(issues))
    out_dir = Path(cfg.out_dir) if write else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    coefficient = cfg.microstructure()
    rows: list[ErrorReport] = []
    tensors: dict[int, np.ndarray] = {}
    failure = None
    for N, M in cfg.grids:
        t0 = time.perf_counter()
        try:
            corr = load_or_solve_correctors(coefficient, M, out_dir, SolverConfig(rel_tolerance=cfg.cg_tol))
            tensors[M] = corr.tensor
            mesh, u_eps, u0, it_f, it_h = _solve_pair(cfg, N, M, corr)
        except (FixedPointError, ConvergenceError, SolvabilityError) as exc:
            failure = f"grid {N}x{M}: {exc}"
            log.error(failure)
            break
        rep = error_report(
            u_eps, u0, corr, mesh, N,
            fine_iters=it_f, homog_iters=it_h, wall_seconds=time.perf_counter() - t0,
        )
        rows.append(rep)
        log.info("N=%d M=%d ERR0=%.5f ERR1=%.5f ERR2=%.5f (%.1fs)", N, M, rep.err0, rep.err1, rep.err2, rep.wall_seconds)
        del mesh, u_eps, u0

    rates, pairwise = _compute_rates(rows)
    report = StudyReport(rows, rates, pairwise, tensors, failure is None, failure)
    if out_dir is not None:
        (out_dir / "study.csv").write_text(format_csv(rows, rates), encoding="utf-8")
        (out_dir / "summary.txt").write_text(format_summary(cfg, report), encoding="utf-8")
    return report


def run_cell_only(coefficient, Ms, out_dir=None, cfg: SolverConfig | None = None) -> list[dict]:
    """Homogenized tensor for each cell resolution, with successive differences."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    table, prev = [], None
    for M in Ms:
        corr = load_or_solve_correctors(coefficient, M, out, cfg)
        A = np.array(corr.tensor)
        diff = float(np.max(np.abs(A - prev))) if prev is not None else float("nan")
        table.append({"M": M, "tensor": A, "diff": diff})
        prev = A
    if out is not None:
        lines = ["M,A11,A12,A21,A22,diff"]
        for row in table:
            A = row["tensor"]
            lines.append(
                ",".join([str(row["M"]), *(repr(float(a)) for a in A.ravel()), repr(row["diff"])])
            )
        (out / "cell.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return table


# ---------------------------------------------------------------------------
# command line


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI study configuration")
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--grids", help='e.g. "16x32,32x32" or a preset: ' + ", ".join(GRID_PRESETS))
    p.add_argument("--problem", choices=("contact", "robin"))
    p.add_argument("--geometry", choices=("inclusion", "laminate"))
    p.add_argument("--semi-implicit", dest="semi_implicit", action="store_const", const=True)
    for name in ("kappa1", "kappa2", "rho", "alpha", "f", "g", "tol", "cg_tol"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--preconditioner", choices=PRECONDITIONERS)


def config_from_args(args) -> StudyConfig:
    cfg = load_config(args.config) if args.config else StudyConfig()
    updates = {}
    for f in fields(StudyConfig):
        v = getattr(args, f.name, None)
        if v is None:
            continue
        updates[f.name] = parse_grids(v) if f.name == "grids" else v
    return replace(cfg, **updates)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="homocontact", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_study = sub.add_parser("study", help="run a fine-vs-homogenized convergence study")
    _add_overrides(p_study)
    p_cell = sub.add_parser("cell", help="homogenized tensor convergence in the cell resolution")
    _add_overrides(p_cell)
    p_cell.add_argument("--M", dest="Ms", default="8,16,32,64", help="comma-separated cell resolutions")
    p_val = sub.add_parser("validate", help="check a configuration without solving")
    _add_overrides(p_val)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        cfg = config_from_args(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        issues = validate_config(cfg)
        for issue in issues:
            print(f"violation: {issue}")
        if not issues:
            print("ok")
        return 1 if issues else 0

    if args.command == "cell":
        issues = [i for i in validate_config(cfg) if not i.startswith("grid")]
        try:
            Ms = [int(m) for m in args.Ms.split(",") if m.strip()]
            table = run_cell_only(cfg.microstructure(), Ms, cfg.out_dir, SolverConfig(rel_tolerance=cfg.cg_tol))
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print("M,A11,A12,A21,A22,diff")
        for row in table:
            A = row["tensor"]
            print(f"{row['M']},{A[0, 0]:.10g},{A[0, 1]:.3g},{A[1, 0]:.3g},{A[1, 1]:.10g},{row['diff']:.3e}")
        return 0

    issues = validate_config(cfg)
    if issues:
        for issue in issues:
            print(f"violation: {issue}", file=sys.stderr)
        return 2
    report = run_study(cfg)
    print(format_csv(report.rows, report.rates), end="")
    if not report.ok:
        print(f"study aborted: {report.failure}", file=sys.stderr)
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
