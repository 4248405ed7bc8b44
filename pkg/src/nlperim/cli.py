"""Command line entry point: ``nlperim <subcommand> ...``.

Exit codes: 0 on success, 2 on validation errors, 1 when an assertion or
an experiment check fails.  Output paths are relative to --out.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .energy import k_perimeter
from .experiments import EXPERIMENTS, ExperimentConfig, run_experiment
from .flow import SCHEDULES, periodic_band, run_flow, trajectory_csv, StabilityViolation
from .gridgeom import (GridError, GridSet, ball_domain, box_domain, full_domain,
                       crofton_perimeter, classical_perimeter, ball_set)
from .io import read_set, write_set, write_csv, write_json
from .kernels import (KernelError, FAMILIES, make_kernel, load_kernel, build_weights,
                      kstar_audit, integrability_audit)
from .mincut import minimize
from .stability import flatness_certificate, certificate_graph_check


class ValidationError(ValueError):
    pass


def _floats(text, what):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValidationError("could not parse %s from %r" % (what, text))


def parse_omega(spec, world):
    """Omega spec: 'all', 'ball:c1,...,cn,r' or 'box:lo1,...,lon,hi1,...,hin'."""
    if spec is None or spec == "all":
        return full_domain(world)
    kind, _, rest = spec.partition(":")
    vals = _floats(rest, "omega")
    n = world.dim
    if kind == "ball" and len(vals) == n + 1:
        return ball_domain(world, vals[-1], center=vals[:n])
    if kind == "box" and len(vals) == 2 * n:
        return box_domain(world, vals[:n], vals[n:])
    raise ValidationError("omega must be 'all', 'ball:c1,..,cn,r' or 'box:lo..,hi..' (got %r)" % spec)


def _kernel_from_args(args, dim):
    if getattr(args, "kernel", None):
        try:
            return load_kernel(args.kernel)
        except (OSError, json.JSONDecodeError) as e:
            raise ValidationError("cannot read kernel file: %s" % e)
    return make_kernel(args.family, dim, s=args.s)


def _add_kernel_flags(p):
    p.add_argument("--kernel", help="kernel JSON file (overrides --family/--s)")
    p.add_argument("--family", default="fractional", choices=FAMILIES)
    p.add_argument("--s", type=float, default=0.5, help="fractional order (default 0.5)")
    p.add_argument("--cutoff", type=float, default=None, help="stencil cutoff in cells")


def _read(path, h):
    if not os.path.exists(path):
        raise ValidationError("no such file: %s" % path)
    return read_set(path, h)


def _out(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


# ---------------------------------------------------------------------------
# subcommands


def cmd_perimeter(args):
    E = _read(args.set, args.h)
    K = _kernel_from_args(args, E.dim)
    W = build_weights(K, E.shape, E.h, cutoff=args.cutoff)
    om = parse_omega(args.omega, E)
    rep = k_perimeter(E, om, W)
    head = ",".join(rep.FIELDS)
    # the domain spec goes in one CSV field, so its separators become semicolons
    label = (args.omega or "all").replace(",", ";")
    row = rep.csv_row(os.path.basename(args.set), K.to_dict().get("family", ""), label)
    print(head)
    print(row)
    if args.csv:
        with open(_out(args, args.csv), "w") as f:
            f.write(head + "\n" + row + "\n")
    return 0


def cmd_minimize(args):
    ext = _read(args.exterior, args.h)
    K = _kernel_from_args(args, ext.dim)
    W = build_weights(K, ext.shape, ext.h, cutoff=args.cutoff)
    om = parse_omega(args.omega, ext).with_exterior(ext.u)
    res = minimize(om, W, ext.like(np.zeros(ext.shape, bool)))
    write_set(res.E_min, _out(args, "E_min.pbm"))
    write_set(res.E_max, _out(args, "E_max.pbm"))
    head = "set_id,energy,energy_max,cells_min,nodes,edges,seconds"
    row = res.csv_row(os.path.basename(args.exterior))
    with open(_out(args, "minimize.csv"), "w") as f:
        f.write(head + "\n" + row + "\n")
    print(head)
    print(row)
    return 0


def _parse_init(spec, N, h, dim):
    if spec == "halfplane":
        return periodic_band(N, h, dim)
    kind, _, rest = spec.partition(":")
    if kind == "ball":
        r = _floats(rest, "ball radius")
        if len(r) != 1 or r[0] <= 0:
            raise ValidationError("--init ball:r needs one positive radius")
        return ball_set((N,) * dim, h, r[0])
    if kind == "pbm":
        E = _read(rest, h)
        if E.shape != (N,) * dim:
            raise ValidationError("initial set shape %s does not match --world %d" % (E.shape, N))
        return E
    raise ValidationError("--init must be ball:r, halfplane or pbm:path")


def cmd_flow(args):
    if args.world < 4:
        raise ValidationError("--world must be at least 4")
    h = args.h if args.h else 1.0 / args.world
    E0 = _parse_init(args.init, args.world, h, args.dim)
    K = _kernel_from_args(args, args.dim)
    W = build_weights(K, E0.shape, h, cutoff=args.cutoff)
    if args.schedule == "custom" and args.omega_value is None:
        raise ValidationError("--schedule custom needs --omega-value")
    rows, st = run_flow(E0, W, args.tau, args.steps, args.schedule, custom=args.omega_value)
    with open(_out(args, "trajectory.csv"), "w") as f:
        f.write(trajectory_csv(rows))
    write_set(st.E, _out(args, "final.pbm"))
    if args.snapshots:
        # replay to write periodic snapshots (the scheme is deterministic)
        from .flow import initial_state, mbo_step
        s = initial_state(E0, W, args.tau, args.schedule, custom=args.omega_value)
        for k in range(1, len(rows)):
            s = mbo_step(s, W)
            if k % args.snapshots == 0:
                write_set(s.E, _out(args, "step_%04d.pbm" % k))
    print("steps=%d omega=%.6g substeps=%d final_volume=%.17g" %
          (len(rows) - 1, st.omega, st.substeps, rows[-1]["volume"]))
    return 0


def cmd_certify(args):
    E = _read(args.set, args.h)
    vals = _floats(args.ball, "ball")
    if len(vals) != E.dim + 1 or vals[-1] <= 0:
        raise ValidationError("--ball needs c1,..,cn,r with r > 0")
    B = ball_domain(E, vals[-1], center=vals[:-1])
    cert = flatness_certificate(E, B, args.directions)
    write_json(_out(args, "certificate.json"),
               json.loads(json.dumps(cert.as_dict(), default=_np_default)))
    with open(_out(args, "graph.csv"), "w") as f:
        f.write(cert.g_csv())
    bad = certificate_graph_check(E, B, cert)
    print(json.dumps(cert.as_dict(), default=_np_default, sort_keys=True))
    if bad:
        print("certificate graph check failed on %d cells" % bad, file=sys.stderr)
        return 1
    return 0


def _np_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(type(x))


def cmd_crofton(args):
    E = _read(args.set, args.h)
    om = parse_omega(args.omega, E)
    est, se = crofton_perimeter(E, om, args.lines, args.seed)
    per = classical_perimeter(E, om)
    print("estimate,stderr,classical")
    print("%r,%r,%r" % (est, se, per))
    return 0


def cmd_experiment(args):
    kernel = None
    if args.kernel:
        kernel = load_kernel(args.kernel).to_dict()
    params = {}
    if args.s is not None:
        if args.id != "bitmap":
            raise ValidationError("--s applies to the bitmap experiment; use --kernel otherwise")
        params["s"] = args.s
    if args.trials is not None:
        if args.id in ("bitmap", "perturbation"):
            raise ValidationError("--trials does not apply to %s" % args.id)
        params["trials"] = args.trials
    cfg = ExperimentConfig(args.id, kernel, args.resolutions, args.R, args.rho, args.seed,
                           args.out, params)
    res = run_experiment(cfg)
    print(json.dumps({"experiment": args.id, "passed": res.passed,
                      "summary": res.summary}, default=_np_default, sort_keys=True))
    return 0 if res.passed else 1


def cmd_audit_kernel(args):
    K = _kernel_from_args(args, args.dim)
    out = {"kernel": K.to_dict(), "kstar": kstar_audit(K, args.samples, args.seed)}
    try:
        out["integrability"] = integrability_audit(K)
    except ArithmeticError as e:
        out["integrability"] = {"divergent": str(e)}
    text = json.dumps(out, indent=2, sort_keys=True, default=_np_default)
    print(text)
    if args.json:
        with open(_out(args, args.json), "w") as f:
            f.write(text + "\n")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="nlperim", description="Nonlocal perimeters on grids.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: available parallelism)")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("perimeter", help="energy report for a PBM set")
    q.add_argument("--set", required=True)
    q.add_argument("--omega", default="all")
    q.add_argument("--h", type=float, default=None, help="cell size (overrides the sidecar)")
    q.add_argument("--csv", default=None, help="also write the row to this file")
    _add_kernel_flags(q)
    q.set_defaults(func=cmd_perimeter)

    q = sub.add_parser("minimize", help="minimal and maximal minimizers with fixed exterior data")
    q.add_argument("--exterior", required=True, help="PBM with the exterior data")
    q.add_argument("--omega", default="all")
    q.add_argument("--h", type=float, default=None)
    _add_kernel_flags(q)
    q.set_defaults(func=cmd_minimize)

    q = sub.add_parser("flow", help="threshold dynamics on a periodic world")
    q.add_argument("--tau", type=float, required=True)
    q.add_argument("--steps", type=int, required=True)
    q.add_argument("--schedule", choices=SCHEDULES, default="frac-s")
    q.add_argument("--omega-value", type=float, default=None, help="omega for --schedule custom")
    q.add_argument("--world", type=int, default=64, help="cells per side")
    q.add_argument("--h", type=float, default=None, help="cell size (default 1/world)")
    q.add_argument("--dim", type=int, default=2, choices=(2, 3))
    q.add_argument("--init", default="ball:0.25", help="ball:r, halfplane or pbm:path")
    q.add_argument("--snapshots", type=int, default=0, help="write a PBM every k steps")
    _add_kernel_flags(q)
    q.set_defaults(func=cmd_flow)

    q = sub.add_parser("certify", help="flatness certificate in a ball")
    q.add_argument("--set", required=True)
    q.add_argument("--ball", required=True, help="c1,..,cn,r")
    q.add_argument("--directions", type=int, default=360)
    q.add_argument("--h", type=float, default=None)
    q.set_defaults(func=cmd_certify)

    q = sub.add_parser("crofton", help="Monte Carlo Cauchy-Crofton perimeter")
    q.add_argument("--set", required=True)
    q.add_argument("--omega", default="all")
    q.add_argument("--lines", type=int, default=100000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--h", type=float, default=None)
    q.set_defaults(func=cmd_crofton)

    q = sub.add_parser("experiment", help="run a seeded experiment suite")
    q.add_argument("id", choices=EXPERIMENTS)
    q.add_argument("--kernel", default=None)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--s", type=float, nargs="+", default=None, help="orders for the bitmap suite")
    q.add_argument("--R", type=float, nargs="+", default=None)
    q.add_argument("--rho", type=float, nargs="+", default=None)
    q.add_argument("--resolutions", type=float, nargs="+", default=None)
    q.add_argument("--trials", type=int, default=None)
    q.set_defaults(func=cmd_experiment)

    q = sub.add_parser("audit-kernel", help="K* domination and integrability audits")
    q.add_argument("--dim", type=int, default=2, choices=(2, 3))
    q.add_argument("--samples", type=int, default=2000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--json", default=None, help="also write the report to this file")
    _add_kernel_flags(q)
    q.set_defaults(func=cmd_audit_kernel)
    return p


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise ValidationError("--threads must be positive")
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        _set_threads(args.threads)
        return args.func(args)
    except AssertionError as e:
        print("assertion failed: %s" % e, file=sys.stderr)
        return 1
    except (ValidationError, GridError, KernelError, StabilityViolation, ValueError, OSError) as e:
        print("error: %s" % e, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
