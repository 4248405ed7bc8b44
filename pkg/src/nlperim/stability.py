"""Translation perturbations of grid sets, the second-variation inequalities
they satisfy, translation products and flatness certificates.

A perturbation translates E by t v near the origin and leaves it unchanged
outside B_R:  E_{R,t} = Psi(E) with Psi(x) = x + t phi(x) v, phi a radial
cutoff equal to 1 on B_{R/2} (linear variant) or on B_{sqrt R} (log variant).
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .energy import p_k_omega
from .gridgeom import (GridError, GridSet, DomainMask, _omega, direction_grid, directional_variation,
                       halfspace_fit_for, jump_counts, line_samples, perp_basis)

VARIANTS = ("linear", "log")
SUPERSAMPLE = 4


# ---------------------------------------------------------------------------
# cutoffs and the perturbation map


def cutoff_phi(x, R):
    """phi_R(x) = 1 on |x| < R/2, 2 - 2|x|/R on R/2 <= |x| < R, 0 beyond.  x is |x| or a vector."""
    r = _radius(x)
    q = r / R
    return np.where(q < 0.5, 1.0, np.where(q < 1.0, 2.0 - 2.0 * q, 0.0))


def cutoff_phi_log(x, R):
    """1 on |x| < sqrt R, 2 - 2 log|x| / log R on sqrt R <= |x| < R, 0 beyond."""
    if R < 4:
        raise ValueError("the log cutoff needs R >= 4")
    r = _radius(x)
    with np.errstate(divide="ignore"):
        mid = 2.0 - 2.0 * np.log(np.maximum(r, 1e-300)) / math.log(R)
    return np.where(r < math.sqrt(R), 1.0, np.where(r < R, mid, 0.0))


def cutoff_lipschitz(R, variant="linear", r=None):
    """Lipschitz bound of the cutoff: 2/R, or 2/(log R |x|) for the log variant."""
    if variant == "linear":
        return 2.0 / R
    r = math.sqrt(R) if r is None else max(r, math.sqrt(R))
    return 2.0 / (math.log(R) * r)


def _radius(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return np.abs(x)
    return np.sqrt(np.sum(x * x, axis=-1))


def _phi(variant):
    if variant == "linear":
        return cutoff_phi
    if variant == "log":
        return cutoff_phi_log
    raise ValueError("variant must be 'linear' or 'log'")


def psi(x, R, t, v, variant="linear"):
    """Psi_{R,t}(x) = x + t phi(x) v."""
    x = np.asarray(x, dtype=float)
    return x + t * _phi(variant)(x, R)[..., None] * np.asarray(v, float)


def psi_inverse(y, R, t, v, variant="linear", iterations=200):
    """Inverse of Psi by the contraction x -> y - t phi(x) v."""
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, float)
    phi = _phi(variant)
    x = y.copy()
    tol = 4 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(y), initial=0.0)))
    for _ in range(iterations):
        nx = y - t * phi(x, R)[..., None] * v
        done = np.max(np.abs(nx - x), initial=0.0) <= tol
        x = nx
        if done:
            break
    return x


def _core_radius(R, variant):
    return R / 2.0 if variant == "linear" else math.sqrt(R)


def _lookup(E, pts):
    """Value of E at the cells containing pts (points outside the world read 0)."""
    idx = np.rint((pts - E.origin) / E.h).astype(np.int64)
    shape = np.asarray(E.shape)
    inside = np.all((idx >= 0) & (idx < shape), axis=-1)
    idx = np.clip(idx, 0, shape - 1)
    return E.u[tuple(idx[..., j] for j in range(E.dim))] & inside


def perturb(E, R, t, v, variant="linear"):
    """Grid version of E_{R,t} = Psi_{R,t}(E) (cells centered at the world origin).

    Cells whose center lies outside B_R are copied.  Cells whose center
    pulls back into the core, where Psi is the translation by t v, read E at
    y - t v; for t a multiple of h along an axis this is an exact shift.
    Remaining cells take a majority vote over 4^n pulled-back subsamples
    (a tie is decided by the pulled-back center).
    """
    if not abs(t) < 1:
        raise ValueError("|t| must be < 1")
    v = np.asarray(v, dtype=float)
    if v.shape != (E.dim,) or abs(np.linalg.norm(v) - 1) > 1e-9:
        raise GridError("v must be a unit vector of the world dimension")
    if t == 0:
        return E.like(E.u.copy())
    y = E.centers()
    r = np.sqrt(np.sum(y * y, axis=-1))
    out = E.u.copy()
    core = np.sqrt(np.sum((y - t * v) ** 2, axis=-1)) < _core_radius(R, variant)
    out[core] = _lookup(E, y[core] - t * v)
    ring = (r < R) & ~core
    if ring.any():
        yc = y[ring]
        s = SUPERSAMPLE
        sub = (np.arange(s) + 0.5) / s - 0.5
        grids = np.meshgrid(*([sub] * E.dim), indexing="ij")
        offs = np.stack([g.ravel() for g in grids], axis=-1) * E.h
        pts = yc[:, None, :] + offs[None, :, :]
        votes = _lookup(E, psi_inverse(pts, R, t, v, variant)).sum(axis=1)
        center = _lookup(E, psi_inverse(yc, R, t, v, variant))
        half = offs.shape[0] / 2.0
        out[ring] = np.where(votes > half, True, np.where(votes < half, False, center))
    return E.like(out)


# ---------------------------------------------------------------------------
# second-variation inequalities


def ball_mask(E, R, center=None):
    x = E.centers()
    c = np.zeros(E.dim) if center is None else np.asarray(center, float)
    return np.sum((x - c) ** 2, axis=-1) <= R * R


def dyadic_radii(R):
    """R, R/2, R/4, ... down to 1 (and 1 itself)."""
    out = []
    rho = float(R)
    while rho >= 1.0:
        out.append(rho)
        rho /= 2.0
    if not out or out[-1] != 1.0:
        out.append(1.0)
    return out


@dataclass
class DefectReport:
    lhs: float
    rhs: float
    defect: float
    variant: str
    R: float
    t: float

    def csv_row(self, label=""):
        return "%s,%s,%.17g,%.17g,%.17g,%.17g,%.17g" % (label, self.variant, self.R, self.t,
                                                        self.lhs, self.rhs, self.defect)


def second_variation_defect(E, R, t, v, variant, W, Wstar):
    """lhs = P(E_{R,t}) + P(E_{R,-t}) - 2 P(E) in B_R and its second-variation bound.

    rhs = 32 t^2/R^2 P_{K*,B_R}(E) (linear), or
    (32 pi t)^2 / log R * max over dyadic rho in [1,R] of P_{K*,B_rho}(E)/rho^2 (log).
    """
    m = ball_mask(E, R)
    if t == 0:
        lhs = 0.0
    else:
        P0 = p_k_omega(E, m, W)
        Pp = p_k_omega(perturb(E, R, t, v, variant), m, W)
        Pm = p_k_omega(perturb(E, R, -t, v, variant), m, W)
        lhs = (Pp - P0) + (Pm - P0)
    if variant == "linear":
        rhs = 32.0 * t * t / (R * R) * p_k_omega(E, m, Wstar) if t != 0 else 0.0
    elif variant == "log":
        if R < 4:
            raise ValueError("the log variant needs R >= 4")
        if t == 0:
            rhs = 0.0
        else:
            sup = max(p_k_omega(E, ball_mask(E, rho), Wstar) / rho ** 2 for rho in dyadic_radii(R))
            rhs = (32.0 * math.pi * t) ** 2 / math.log(R) * sup
    else:
        raise ValueError("variant must be 'linear' or 'log'")
    return DefectReport(lhs, rhs, lhs - rhs, variant, float(R), float(t))


# ---------------------------------------------------------------------------
# translation products


def translate(E, t, v):
    """E + t v read at cell centers (nearest cell; exact shift for axis v, t = m h)."""
    v = np.asarray(v, dtype=float)
    return E.like(_lookup(E, E.centers() - t * v))


def translation_product(E, omega, v, ts):
    """Per t: min over +-t of |((E+tv) \\ E) n B| |(E \\ (E+tv)) n B| / t^2.

    Returns dict with the per-t rows, the smallest-|t| value as limit
    estimate, and the implied bound sqrt(limit) on min(Phi_+, Phi_-)(v).
    """
    m = _omega(E, omega)
    cell = E.h ** E.dim
    rows = []
    for t in ts:
        if t == 0:
            raise ValueError("t must be nonzero")
        best = None
        for tt in (t, -t):
            F = translate(E, tt, v).u
            gain = cell * int(np.count_nonzero(F & ~E.u & m))
            loss = cell * int(np.count_nonzero(E.u & ~F & m))
            val = gain * loss / (tt * tt)
            if best is None or val < best[0]:
                best = (val, gain, loss)
        rows.append({"t": float(t), "product": best[0], "gain": best[1], "loss": best[2]})
    lim = min(rows, key=lambda r: abs(r["t"]))["product"]
    return {"rows": rows, "limit": lim, "phi_min_bound": math.sqrt(lim)}


def phi_min_bound(Pstar_BR, R):
    """sqrt(8 P_{K*,B_R}/R^2)/2: bound on min(Phi_+, Phi_-) for minimizers."""
    return math.sqrt(8.0 * Pstar_BR / (R * R)) / 2.0


def phi_minmax(E, omega, directions):
    """max over directions of min(Phi_+, Phi_-)(v)."""
    out = 0.0
    for v in directions:
        dv = directional_variation(E, omega, v)
        out = max(out, min(dv.phi_plus, dv.phi_minus))
    return out


# ---------------------------------------------------------------------------
# flatness certificates


@dataclass
class FlatnessCertificate:
    frame: list
    mu: float
    eps: float
    bad_measure: float
    t_star: float
    t_low: float
    t_high: float
    osc_g: float
    symdiff: float
    symdiff_cells: int
    per_rescaled: float
    constant: float
    g_points: np.ndarray = field(repr=False)
    g_values: np.ndarray = field(repr=False)
    bad_points: np.ndarray = field(repr=False)

    def as_dict(self):
        return {"frame": self.frame, "mu": self.mu, "eps": self.eps,
                "bad_measure": self.bad_measure, "t_star": self.t_star,
                "osc_g": self.osc_g, "symdiff": self.symdiff,
                "per_rescaled": self.per_rescaled}

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    def g_csv(self):
        n1 = self.g_points.shape[1] if self.g_points.ndim == 2 else 1
        head = ",".join("y%d" % (i + 1) for i in range(n1)) + ",g"
        lines = [head]
        for p, g in zip(self.g_points, self.g_values):
            lines.append(",".join("%.10g" % x for x in np.atleast_1d(p)) + ",%.10g" % g)
        return "\n".join(lines) + "\n"


def _crop(E, m):
    idx = np.argwhere(m)
    lo = np.maximum(idx.min(axis=0) - 1, 0)
    hi = np.minimum(idx.max(axis=0) + 2, np.asarray(E.shape))
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    return GridSet(E.u[sl], E.h, E.origin + E.h * lo), m[sl]


def frame_for(en):
    """Orthonormal frame (e_1, ..., e_n) with prescribed last vector."""
    en = np.asarray(en, dtype=float)
    if en.size == 2:
        return [np.array([en[1], -en[0]]) + 0.0, en]
    b = perp_basis(en)
    return [b[0], b[1], en]


def flatness_certificate(E, ball, direction_samples=360, center=None, radius=None):
    """Certificate that E is flat in a ball B (rescaled to the unit ball).

    ball: DomainMask or boolean mask of B; center/radius give its geometry
    (taken from the DomainMask when available).  Frames take e_n from the
    same direction samples as best_halfspace_fit, so the certificate
    symmetric difference is never below the best fit.
    """
    if E.dim not in (2, 3):
        raise GridError("certificates need n in {2, 3}")
    m = _omega(E, ball)
    if isinstance(ball, DomainMask):
        center = ball.center if center is None else center
        radius = ball.radius if radius is None else radius
    c = np.zeros(E.dim) if center is None else np.asarray(center, float)
    if radius is None:
        radius = float(np.sqrt(np.max(np.sum((E.centers()[m] - c) ** 2, axis=-1))))
    n = E.dim
    Ec, mc = _crop(E, m)
    sec = radius ** (n - 1)
    best = None
    for en in direction_grid(n, direction_samples):
        frame = frame_for(en)
        mu_side = 0.0
        for e in frame[:-1]:
            dv = directional_variation(Ec, mc, e)
            mu_side = max(mu_side, dv.phi_plus, dv.phi_minus)
        dn = directional_variation(Ec, mc, frame[-1])
        fit = halfspace_fit_for(Ec, mc, frame[-1])[2]
        key = (max(mu_side, dn.phi_plus), dn.phi_plus, mu_side, fit, -float(np.max(np.abs(en))))
        if best is None or key < best[0]:
            best = (key, frame, dn)
    (mu, _, _, _, _), frame, dn = best
    en = frame[-1]

    # section lines along e_n: bad set and graph function
    vals, valid, offs = line_samples(Ec, mc, en)
    up, _ = jump_counts(vals, valid, bridge=True)
    cidx = (np.asarray(Ec.shape) - 1) // 2
    base = Ec.origin + Ec.h * cidx
    S = vals.shape[1]
    reach = (S - 1) // 2
    heights = ((base - c) @ en + Ec.h * (np.arange(S) - reach)) / radius
    has = valid.any(axis=1)
    bad = has & (up > 0)
    good = has & ~bad
    gvals = np.full(vals.shape[0], np.nan)
    for i in np.flatnonzero(good):
        ones = np.flatnonzero(vals[i] & valid[i])
        if ones.size == 0:
            gvals[i] = -1.0
        elif ones[-1] == np.flatnonzero(valid[i])[-1]:
            gvals[i] = 1.0
        else:
            gvals[i] = min(1.0, max(-1.0, heights[ones[-1]] + 0.5 * Ec.h / radius))
    ypts = ((base - c)[None, :] + offs) @ np.stack(frame[:-1], axis=1) / radius
    bad_measure = float(np.count_nonzero(bad)) * (Ec.h / radius) ** (n - 1)
    gg = gvals[good]
    osc = float(gg.max() - gg.min()) if gg.size else 0.0

    # ordering of full lines along e_1 gives [t_low, t_high]
    e1 = frame[0]
    v1, ok1, off1 = line_samples(Ec, mc, e1)
    has1 = ok1.any(axis=1)
    full_in = has1 & np.all(v1 | ~ok1, axis=1)
    full_out = has1 & np.all(~v1 | ~ok1, axis=1)
    h1 = ((base - c)[None, :] + off1) @ en / radius
    t_low = float(h1[full_in].max()) if full_in.any() else -1.0
    t_high = float(h1[full_out].min()) if full_out.any() else 1.0
    t_low, t_high = max(-1.0, t_low), min(1.0, t_high)
    t_fit, _, _ = halfspace_fit_for(E, m, en)
    ts = (t_fit - c @ en) / radius
    if t_low <= t_high:
        ts = min(max(ts, t_low), t_high)
    x = E.centers()[m]
    inside = x @ en <= c @ en + radius * ts
    cells = int(np.count_nonzero(inside != E.u[m]))
    symdiff = cells * (E.h / radius) ** n

    # directional-variation bound of the vertically rescaled perimeter
    side = sum(directional_variation(Ec, mc, e).total for e in frame[:-1]) / sec
    vert = dn.total / sec
    mu_r = mu / sec
    eps = max(mu_r, bad_measure, symdiff)
    if eps > 0:
        per_rescaled = side / eps + vert
    else:
        per_rescaled = vert if side == 0 else float("inf")
    constant = eps / mu_r if mu_r > 0 else float("inf") if eps > 0 else 1.0
    return FlatnessCertificate([list(map(float, e)) for e in frame], mu_r, eps, bad_measure,
                               float(ts), t_low, t_high, osc, symdiff, cells, per_rescaled,
                               constant, ypts[good], gvals[good], ypts[bad])


def certificate_graph_check(E, ball, cert, center=None, radius=None):
    """Number of good-line samples where E differs from the subgraph of g."""
    m = _omega(E, ball)
    if isinstance(ball, DomainMask):
        center = ball.center if center is None else center
        radius = ball.radius if radius is None else radius
    c = np.zeros(E.dim) if center is None else np.asarray(center, float)
    en = np.asarray(cert.frame[-1])
    Ec, mc = _crop(E, m)
    vals, valid, offs = line_samples(Ec, mc, en)
    up, _ = jump_counts(vals, valid, bridge=True)
    has = valid.any(axis=1)
    good = has & (up == 0)
    cidx = (np.asarray(Ec.shape) - 1) // 2
    base = Ec.origin + Ec.h * cidx
    S = vals.shape[1]
    heights = ((base - c) @ en + Ec.h * (np.arange(S) - (S - 1) // 2)) / radius
    g = cert.g_values
    sub = heights[None, :] <= g[:, None]
    gv, gok = vals[good], valid[good]
    return int(np.count_nonzero((sub != gv) & gok))
