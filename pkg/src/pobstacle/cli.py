"""Command-line front end: ``pobstacle {profile,sweep,solve,verify,analyze}``.

Every run writes into its own output directory: ``config.json`` (the
resolved configuration), ``report.json`` and the data files of the command.
Exit codes: 0 success, 1 bad input, 2 ran but a check failed or the solver
did not converge.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import logging
import math
import os
import sys
from fractions import Fraction

import numpy as np

from . import fem
from . import free_boundary as fbm
from .mesh import Domain, read_off, write_off
from .obstacle import (BarrierSearchError, CriticalPointError, Obstacle, barrier_search,
                       concavity_check, disk_sample, parse_expression)
from .numerics import fd_derivative
from .profile import (GLOBAL_PHARMONIC, GLOBAL_TOL, InadmissibleError, ProfileParams,
                      admissible_k, build_profile, check_profile, ode_rhs, profile_kind,
                      save_profile, theta0_closed_form, theta_of_psi, u_eval)

log = logging.getLogger("pobstacle")

COMMANDS = ("profile", "sweep", "solve", "verify", "analyze")
DEFAULT_TOLERANCES = {
    "ode_residual": 1e-6,
    "boundary": 1e-9,
    "weak_form": 1e-6,
    "symmetry": 1e-9,
    "angle": 0.2,
}
# a residual above tolerance still passes if doubling the grid shrinks it by this factor
SECOND_ORDER_RATIO = 3.0


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class RunConfig:
    command: str
    p: object = 2.0  # float, or list of floats for sweep
    k: int = 1
    h: float = 1 / 64
    ngrid: int = 4097
    tol: float = 1e-6
    max_iters: int = 100000
    out: str | None = None
    obstacle: dict | None = None
    boundary: dict | None = None
    domain: dict = dataclasses.field(default_factory=lambda: {"kind": "disk", "size": 1.0})
    seed: int = 0
    workers: int | None = None
    input: str | None = None
    tolerances: dict = dataclasses.field(default_factory=lambda: dict(DEFAULT_TOLERANCES))

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if isinstance(self.p, (list, tuple)):
            self.p = [float(x) for x in self.p]
            if not self.p:
                raise ConfigError("empty p list")
        else:
            self.p = float(self.p)
        self.k = int(self.k)
        self.h = float(self.h)
        self.ngrid = int(self.ngrid)
        self.tol = float(self.tol)
        self.max_iters = int(self.max_iters)
        self.seed = int(self.seed)
        extra = set(self.tolerances) - set(DEFAULT_TOLERANCES)
        if extra:
            raise ConfigError(f"unknown tolerance keys: {sorted(extra)}")
        self.tolerances = {**DEFAULT_TOLERANCES,
                           **{k: float(v) for k, v in self.tolerances.items()}}
        if self.out is None:
            self.out = os.path.join("runs", self.command)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - names
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @property
    def p_values(self):
        return self.p if isinstance(self.p, list) else [self.p]

    @property
    def p_scalar(self):
        if isinstance(self.p, list):
            if len(self.p) != 1:
                raise ConfigError(f"command {self.command} takes a single p")
            return self.p[0]
        return self.p


# --- helpers ----------------------------------------------------------------

def parse_number(text):
    """Accept decimals and fractions such as ``1/64``."""
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc


def parse_p_list(text):
    return [parse_number(t) for t in text.split(",") if t.strip()]


def _json_arg(text):
    """Inline JSON or a path to a JSON file."""
    if os.path.exists(text):
        with open(text) as fh:
            return json.load(fh)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not JSON and not a file: {text!r}") from exc


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o)}")


def _prepare(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "config.json"), "w") as fh:
        fh.write(cfg.to_json())


def _obstacle(cfg):
    return Obstacle.from_config(cfg.obstacle or {"kind": "quadratic", "a": 0.0, "b": 1.0})


def _boundary(cfg, profile=None):
    spec = cfg.boundary or {"kind": "profile"}
    kind = spec.get("kind")
    allowed = {"profile": {"kind"}, "constant": {"kind", "value"},
               "expression": {"kind", "formula"}}
    if kind not in allowed:
        raise ConfigError(f"unknown boundary kind {kind!r}")
    extra = set(spec) - allowed[kind]
    if extra:
        raise ConfigError(f"unknown boundary keys: {sorted(extra)}")
    if kind == "profile":
        prof = profile or build_profile(ProfileParams(cfg.p_scalar, cfg.k, cfg.ngrid))
        return lambda X: u_eval(prof, X)
    if kind == "constant":
        c = float(spec.get("value", 0.0))
        return lambda X: np.full(len(X), c)
    fn = parse_expression(spec["formula"])
    return lambda X: fn(X[:, 0], X[:, 1])


def _domain(cfg):
    extra = set(cfg.domain) - {"kind", "size"}
    if extra:
        raise ConfigError(f"unknown domain keys: {sorted(extra)}")
    return Domain(cfg.domain.get("kind", "disk"), float(cfg.domain.get("size", 1.0)))


def _inadmissible_message(p, k):
    ks = [kk for kk, _ in admissible_k(p)]
    return (f"inadmissible (p={p:g}, k={k}): θ0 > 2π (θ0 = {theta0_closed_form(p, k):.6g}); "
            f"admissible k for p={p:g}: {ks if ks else 'none'}")


def _ode_residual(profile):
    th, X, Y = profile.theta_grid, profile.v_values, profile.v_prime_values
    r1 = np.abs(fd_derivative(th, X) - Y)
    r2 = np.abs(fd_derivative(th, Y) - ode_rhs(profile.params.p, X, Y))
    return float(np.max(np.maximum(r1, r2)[1:-1]))


def _profile_checks(profile, tolerances):
    """Check report plus pass/fail flags against ``tolerances``."""
    rep = check_profile(profile)
    params = profile.params
    fine = build_profile(ProfileParams(params.p, params.k, 2 * params.n_grid - 1))
    fine_res = _ode_residual(fine)
    ratio = rep.ode_residual_max / fine_res if fine_res > 0 else math.inf
    ode_ok = (rep.ode_residual_max <= tolerances["ode_residual"]
              or ratio >= SECOND_ORDER_RATIO)
    passes = {
        "ode_residual": bool(ode_ok),
        "boundary": bool(max(rep.bc_defects) <= tolerances["boundary"]),
        "weak_form": bool(rep.weak_form_defect <= tolerances["weak_form"]),
        "symmetry": bool(params.k != 1 or rep.symmetry_defect <= tolerances["symmetry"]),
    }
    return {
        "check": rep.as_dict(),
        "ode_residual_doubled_grid": fine_res,
        "ode_residual_ratio": ratio,
        "passes": passes,
        "all_pass": all(passes.values()),
    }


# --- commands ---------------------------------------------------------------

def cmd_profile(cfg):
    p, k = cfg.p_scalar, cfg.k
    try:
        params = ProfileParams(p, k, cfg.ngrid)
    except InadmissibleError:
        print(_inadmissible_message(p, k), file=sys.stderr)
        return 1
    _prepare(cfg)
    profile = build_profile(params)
    checks = _profile_checks(profile, cfg.tolerances)
    summary = {
        "p": p, "k": k, "kind": profile.kind, "theta0": profile.theta0,
        "theta0_closed_form": theta0_closed_form(p, k),
        "contact_rays": list(profile.contact_rays), **checks,
    }
    save_profile(profile, os.path.join(cfg.out, "profile.csv"),
                 os.path.join(cfg.out, "profile.json"), extra={"check": checks["check"]})
    _write_json(os.path.join(cfg.out, "report.json"), summary)
    print(f"theta0 = {profile.theta0:.17g}  checks {'pass' if checks['all_pass'] else 'FAIL'}")
    return 0 if checks["all_pass"] else 2


def sweep_rows(p):
    """Rows (p, k, theta0, admissible) for k = 1, 2, 3 at one p."""
    kinds = dict(admissible_k(p))
    rows = []
    for k in (1, 2, 3):
        theta0 = theta_of_psi(p, -(2 * k - 1) * math.pi)
        rows.append((p, k, theta0, kinds.get(k, "no")))
    return rows


def _trichotomy(theta0):
    if abs(theta0 - math.pi) <= GLOBAL_TOL:
        return "equal"
    return "greater" if theta0 > math.pi else "less"


def cmd_sweep(cfg):
    ps = sorted(cfg.p_values)
    if any(not p > 1 for p in ps):
        print("every p must exceed 1", file=sys.stderr)
        return 1
    _prepare(cfg)
    workers = cfg.workers or min(len(ps), os.cpu_count() or 1)
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(sweep_rows, ps))
    else:
        results = [sweep_rows(p) for p in ps]
    rows = [r for block in results for r in block]
    with open(os.path.join(cfg.out, "sweep.csv"), "w") as fh:
        fh.write("p,k,theta0,admissible\n")
        for p, k, t, a in rows:
            fh.write(f"{p:.17g},{k},{t:.17g},{a}\n")
    k1 = [(p, t) for p, k, t, _ in rows if k == 1]
    expected = ["greater" if p < 2 else "equal" if p == 2 else "less" for p, _ in k1]
    observed = [_trichotomy(t) for _, t in k1]
    report = {
        "n_p": len(ps),
        "monotone_decreasing": all(b[1] < a[1] for a, b in zip(k1, k1[1:])),
        "trichotomy": [{"p": p, "theta0": t, "relation_to_pi": o}
                       for (p, t), o in zip(k1, observed)],
        "trichotomy_matches": observed == expected,
        "max_closed_form_error": max(abs(t - theta0_closed_form(p, k)) for p, k, t, _ in rows),
    }
    _write_json(os.path.join(cfg.out, "report.json"), report)
    print(f"{len(rows)} rows; monotone decreasing: {report['monotone_decreasing']}")
    return 0


def _solve(cfg, profile=None):
    spec = fem.ProblemSpec(cfg.p_scalar, _obstacle(cfg), _boundary(cfg, profile), _domain(cfg))
    sol = fem.solve(spec, fem.SolverConfig(tol=cfg.tol, max_iters=cfg.max_iters), h=cfg.h)
    return spec, sol


def _contact_fraction(sol, cs):
    m = sol.mesh.lumped_mass
    return float(np.sum(m[cs.flags]) / np.sum(m))


def cmd_solve(cfg):
    try:
        spec, sol = _solve(cfg)
    except (ValueError, InadmissibleError) as exc:
        print(f"bad configuration: {exc}", file=sys.stderr)
        return 1
    _prepare(cfg)
    cs = fbm.contact_mask(sol, spec.obstacle)
    write_off(sol.mesh, os.path.join(cfg.out, "mesh.off"))
    fem.save_solution(sol, os.path.join(cfg.out, "solution.csv"),
                      os.path.join(cfg.out, "stats.json"))
    report = {
        **sol.stats,
        "complementarity_residual": fem.complementarity_residual(spec, sol),
        "contact_fraction": _contact_fraction(sol, cs),
        "contact_tolerance": cs.tolerance,
    }
    _write_json(os.path.join(cfg.out, "report.json"), report)
    print(f"converged={sol.converged} iterations={sol.iterations} "
          f"energy={sol.final_energy:.17g} contact_fraction={report['contact_fraction']:.6f}")
    return 0 if sol.converged else 2


def _diagnostics(sol, obstacle, p, seed, theta0=None, angle_tol=None):
    """Free-boundary diagnostics shared by verify and analyze."""
    cs = fbm.contact_mask(sol, obstacle)
    curve = fbm.extract_free_boundary(cs)
    out = {"contact_fraction": _contact_fraction(sol, cs), "curve": curve.as_dict()}
    try:
        ang = fbm.angle_at_origin(sol, obstacle)
        out["angle"] = ang.as_dict()
    except (fbm.FreeBoundaryError, ValueError) as exc:
        ang = None
        out["angle"] = {"error": str(exc)}
    if ang is not None and theta0 is not None:
        out["angle"]["theta0"] = theta0
        out["angle"]["error_vs_theta0"] = ang.theta_hat - theta0

    R = sol.mesh.vertices[sol.mesh.boundary_flags]
    radius = float(np.min(np.linalg.norm(R, axis=1))) if len(R) else 1.0
    sample = disk_sample(4096, radius, seed=seed)
    try:
        conc = concavity_check(obstacle, p, sample)
        out["concavity"] = conc.as_dict()
        c0 = conc.margin_c0
    except ValueError as exc:
        out["concavity"] = {"error": str(exc)}
        c0 = None
    barrier = None
    if c0 is not None and c0 > 0:
        try:
            barrier = barrier_search(obstacle, p, (0.0, 0.0), c0, seed=seed)
            out["barrier"] = barrier.as_dict()
        except (BarrierSearchError, CriticalPointError, ValueError) as exc:
            out["barrier"] = {"error": str(exc)}

    nondeg = []
    if len(curve.segments) and not curve.degenerate:
        seeds = [(0.0, 0.0), (0.25, 0.0)]
        if theta0 is not None:
            seeds.append((0.25 * math.cos(theta0), 0.25 * math.sin(theta0)))
        centers = fbm.nearest_boundary_points(curve, seeds)
        radii = tuple(np.linspace(0.05, 0.4, 8) * radius)
        for c in centers:
            use = barrier if np.linalg.norm(c) <= 2 * sol.mesh.h else None
            try:
                rep = fbm.nondegeneracy_scan(sol, obstacle, c, radii, barrier=use)
                nondeg.append(rep.as_dict())
            except fbm.FreeBoundaryError as exc:
                nondeg.append({"center": list(c), "error": str(exc)})
        por = fbm.porosity_scan(curve, cs, centers, [0.1 * radius, 0.2 * radius])
        out["porosity"] = por.as_dict()
    out["nondegeneracy"] = nondeg
    lows = [r["c1_lower"] for r in nondeg if "c1_lower" in r]
    out["c1_lower"] = min(lows) if lows else None
    return out, curve


def cmd_verify(cfg):
    p, k = cfg.p_scalar, cfg.k
    try:
        kind = profile_kind(p, k)
    except InadmissibleError:
        print(_inadmissible_message(p, k), file=sys.stderr)
        return 1
    if kind == GLOBAL_PHARMONIC:
        print(f"(p={p:g}, k={k}): global p-harmonic case, no obstacle contact cone",
              file=sys.stderr)
        return 1
    if cfg.obstacle not in (None, {"kind": "quadratic", "a": 0.0, "b": 1.0}):
        print("verify uses the obstacle -|x|^2 of the homogeneous solutions", file=sys.stderr)
        return 1
    _prepare(cfg)
    profile = build_profile(ProfileParams(p, k, cfg.ngrid))
    vcfg = dataclasses.replace(cfg, boundary={"kind": "profile"})
    spec, sol = _solve(vcfg, profile)
    diag, curve = _diagnostics(sol, spec.obstacle, p, cfg.seed, profile.theta0)
    fbm.save_curve(curve, os.path.join(cfg.out, "free_boundary.csv"))
    fem.save_solution(sol, os.path.join(cfg.out, "solution.csv"))
    write_off(sol.mesh, os.path.join(cfg.out, "mesh.off"))
    angle_err = diag["angle"].get("error_vs_theta0")
    angle_ok = angle_err is not None and abs(angle_err) <= cfg.tolerances["angle"]
    c1 = diag["c1_lower"]
    report = {
        "p": p, "k": k, "h": cfg.h, "theta0": profile.theta0, "solver": sol.stats,
        "complementarity_residual": fem.complementarity_residual(spec, sol),
        **diag, "angle_ok": bool(angle_ok), "nondegenerate": bool(c1 is not None and c1 > 0),
    }
    _write_json(os.path.join(cfg.out, "report.json"), report)
    ok = report["angle_ok"] and report["nondegenerate"]
    theta_hat = diag["angle"].get("theta_hat", float("nan"))
    print(f"theta_hat = {theta_hat:.6f} (theta0 = {profile.theta0:.6f}), c1_lower = {c1}; "
          f"{'pass' if ok else 'FAIL'}")
    return 0 if ok else 2


def cmd_analyze(cfg):
    src = cfg.input
    needed = ("config.json", "mesh.off", "solution.csv")
    if not src or not all(os.path.exists(os.path.join(src, f)) for f in needed):
        print(f"--input must name a solve output directory containing {needed}",
              file=sys.stderr)
        return 1
    with open(os.path.join(src, "config.json")) as fh:
        run = RunConfig.from_dict(json.load(fh))
    mesh = read_off(os.path.join(src, "mesh.off"))
    stats = os.path.join(src, "stats.json")
    sol = fem.load_solution(os.path.join(src, "solution.csv"), mesh,
                            stats if os.path.exists(stats) else None)
    p = run.p_scalar
    theta0 = None
    if run.obstacle in (None, {"kind": "quadratic", "a": 0.0, "b": 1.0}) and \
            (run.boundary or {"kind": "profile"}).get("kind") == "profile":
        theta0 = theta0_closed_form(p, run.k)
    _prepare(cfg)
    diag, curve = _diagnostics(sol, _obstacle(run), p, cfg.seed, theta0)
    fbm.save_curve(curve, os.path.join(cfg.out, "free_boundary.csv"))
    _write_json(os.path.join(cfg.out, "report.json"), {"input": src, "p": p, **diag})
    print(f"free boundary length {curve.total_length:.6f}, c1_lower = {diag['c1_lower']}")
    return 0


HANDLERS = {"profile": cmd_profile, "sweep": cmd_sweep, "solve": cmd_solve,
            "verify": cmd_verify, "analyze": cmd_analyze}


# --- argument parsing -------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="pobstacle", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file (same keys as the flags)")
        sp.add_argument("--p", type=parse_p_list, help="exponent; comma-separated list for sweep")
        sp.add_argument("--k", type=int)
        sp.add_argument("--h", type=parse_number, help="mesh size, e.g. 1/64")
        sp.add_argument("--ngrid", type=int)
        sp.add_argument("--tol", type=parse_number)
        sp.add_argument("--max-iters", dest="max_iters", type=int)
        sp.add_argument("--out")
        sp.add_argument("--obstacle", help="obstacle JSON (inline or file)")
        sp.add_argument("--boundary", help="boundary-data JSON (inline or file)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--input", help="solve output directory (analyze)")
        sp.add_argument("--angle-tol", dest="angle_tol", type=parse_number)
    return parser


def config_from_args(args):
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
        if data.get("command", args.command) != args.command:
            raise ConfigError(f"config is for {data['command']!r}, not {args.command!r}")
    data["command"] = args.command
    for key in ("k", "h", "ngrid", "tol", "max_iters", "out", "seed", "workers", "input"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    if args.p is not None:
        data["p"] = args.p if args.command == "sweep" or len(args.p) > 1 else args.p[0]
    for key in ("obstacle", "boundary"):
        val = getattr(args, key)
        if val is not None:
            data[key] = _json_arg(val)
    if args.angle_tol is not None:
        data["tolerances"] = {**data.get("tolerances", {}), "angle": args.angle_tol}
    return RunConfig.from_dict(data)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except (ConfigError, ValueError, TypeError, OSError) as exc:
        print(f"bad configuration: {exc}", file=sys.stderr)
        return 1
    try:
        return HANDLERS[cfg.command](cfg)
    except (ConfigError, InadmissibleError) as exc:
        print(f"bad configuration: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
