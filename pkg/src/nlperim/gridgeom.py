"""Grid sets, domains, classical perimeter, directional variations and
Cauchy-Crofton estimates.

Cell (i_1, ..., i_n) of a world has center ``origin + h * i``.  Array axis j
is the coordinate x_{j+1}.
"""

import math

import numpy as np
from scipy.special import gamma

from .kernels import sphere_area


class GridError(ValueError):
    pass


class GridSet:
    """Indicator of a set E on a uniform grid inside a world box."""

    def __init__(self, u, h=1.0, origin=None):
        u = np.asarray(u).astype(bool)
        if u.ndim not in (2, 3):
            raise GridError("grid sets live in 2 or 3 dimensions")
        self.u = u
        self.h = float(h)
        if origin is None:
            origin = [-0.5 * self.h * (d - 1) for d in u.shape]
        self.origin = np.asarray(origin, dtype=float)

    @property
    def shape(self):
        return self.u.shape

    @property
    def dim(self):
        return self.u.ndim

    def measure(self):
        return self.h ** self.dim * int(np.count_nonzero(self.u))

    def complement(self):
        return GridSet(~self.u, self.h, self.origin)

    def like(self, u):
        return GridSet(u, self.h, self.origin)

    def centers(self):
        axes = [self.origin[j] + self.h * np.arange(d) for j, d in enumerate(self.shape)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def same_world(self, other):
        return (self.shape == other.shape and self.h == other.h
                and np.array_equal(self.origin, other.origin))

    def __eq__(self, other):
        return isinstance(other, GridSet) and self.same_world(other) and np.array_equal(self.u, other.u)

    def __repr__(self):
        return "GridSet(shape=%s, h=%g, cells=%d)" % (self.shape, self.h, np.count_nonzero(self.u))


def world_centers(shape, h, origin=None):
    return GridSet(np.zeros(shape, bool), h, origin).centers()


def from_function(shape, h, func, origin=None):
    """Cells whose center x satisfies func(x) (vectorized over (..., n))."""
    g = GridSet(np.zeros(shape, bool), h, origin)
    return g.like(np.asarray(func(g.centers()), dtype=bool))


def halfspace(shape, h, normal, t=0.0, origin=None):
    """Grid set {x . normal <= t}."""
    normal = np.asarray(normal, dtype=float)
    return from_function(shape, h, lambda x: x @ normal <= t, origin)


def ball_set(shape, h, radius, center=None, origin=None):
    n = len(shape)
    c = np.zeros(n) if center is None else np.asarray(center, float)
    return from_function(shape, h, lambda x: np.sum((x - c) ** 2, axis=-1) <= radius ** 2, origin)


class DomainMask:
    """Domain Omega inside the world box plus exterior data E0 on W minus Omega."""

    def __init__(self, omega, exterior=None, kind="box", center=None, radius=None):
        self.omega = np.asarray(omega, dtype=bool)
        if exterior is None:
            exterior = np.zeros_like(self.omega)
        exterior = np.asarray(exterior, dtype=bool)
        if exterior.shape != self.omega.shape:
            raise GridError("exterior data shape mismatch")
        self.exterior = exterior & ~self.omega
        self.kind = kind
        self.center = center
        self.radius = radius

    @property
    def shape(self):
        return self.omega.shape

    def with_exterior(self, exterior):
        return DomainMask(self.omega, exterior, self.kind, self.center, self.radius)

    def cell_count(self):
        return int(np.count_nonzero(self.omega))


def ball_domain(world, radius, center=None, exterior=None):
    """Cells of ``world`` (a GridSet giving geometry) whose centers lie in B_radius(center)."""
    n = world.dim
    c = np.zeros(n) if center is None else np.asarray(center, float)
    x = world.centers()
    om = np.sum((x - c) ** 2, axis=-1) <= radius ** 2
    ext = None if exterior is None else (exterior.u if isinstance(exterior, GridSet) else exterior)
    return DomainMask(om, ext, "ball", tuple(c.tolist()), float(radius))


def box_domain(world, lo, hi, exterior=None):
    x = world.centers()
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    om = np.all((x >= lo) & (x <= hi), axis=-1)
    ext = None if exterior is None else (exterior.u if isinstance(exterior, GridSet) else exterior)
    return DomainMask(om, ext, "box")


def full_domain(world):
    return DomainMask(np.ones(world.shape, bool), None, "box")


def _omega(E, omega):
    if omega is None:
        return np.ones(E.shape, bool)
    m = omega.omega if isinstance(omega, DomainMask) else np.asarray(omega, bool)
    if m.shape != E.shape:
        raise GridError("domain does not match the world")
    return m


# ---------------------------------------------------------------------------
# classical perimeter


def face_jumps(E, omega=None):
    """Per axis: boolean array of faces between two Omega-cells with different values."""
    u = E.u
    m = _omega(E, omega)
    out = []
    for j in range(E.dim):
        a = [slice(None)] * E.dim
        b = [slice(None)] * E.dim
        a[j] = slice(0, -1)
        b[j] = slice(1, None)
        a, b = tuple(a), tuple(b)
        out.append((u[a] != u[b]) & m[a] & m[b])
    return out


def axis_face_counts(E, omega=None):
    return [int(np.count_nonzero(f)) for f in face_jumps(E, omega)]


def classical_perimeter(E, omega=None):
    """h^{n-1} times the number of Omega-faces separating a 1-cell from a 0-cell."""
    return E.h ** (E.dim - 1) * sum(axis_face_counts(E, omega))


def symmetric_difference_measure(E, F, omega=None):
    if E.shape != F.shape:
        raise GridError("sets live on different worlds")
    m = _omega(E, omega)
    return E.h ** E.dim * int(np.count_nonzero((E.u != F.u) & m))


# ---------------------------------------------------------------------------
# line scans


def perp_basis(v):
    """Orthonormal basis of v-perp that changes at most by sign under v -> -v."""
    v = np.asarray(v, dtype=float)
    n = v.size
    if n == 2:
        return np.array([[-v[1], v[0]]])
    k = int(np.argmin(np.abs(v)))
    a = np.zeros(3)
    a[k] = 1.0
    b1 = a - (a @ v) * v
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(v, b1)
    return np.stack([b1, b2])


def _check_unit(v, n):
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise GridError("direction has wrong dimension")
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise GridError("direction must be a unit vector")
    return v


def line_samples(E, omega, v):
    """Sample E along the family of lines y + R v.

    Lines pass through offsets c + h * j * b (b a basis of v-perp, c the
    central cell center); samples are spaced h along v and read the nearest
    cell.  Returns (values, valid, offsets) with values/valid of shape
    (lines, samples) ordered along +v.
    """
    n = E.dim
    v = _check_unit(v, n)
    h = E.h
    m = _omega(E, omega)
    shape = np.asarray(E.shape)
    cidx = (shape - 1) // 2
    c = E.origin + h * cidx
    reach = int(math.ceil(0.5 * math.sqrt(float(np.sum(shape.astype(float) ** 2))))) + 1
    basis = perp_basis(v)
    js = np.arange(-reach, reach + 1)
    grids = np.meshgrid(*([js] * (n - 1)), indexing="ij")
    J = np.stack([g.ravel() for g in grids], axis=-1)              # (L, n-1)
    offs = (J * h) @ basis                                        # (L, n)
    ts = h * js                                                   # (S,)
    pts = c + offs[:, None, :] + ts[None, :, None] * v            # (L, S, n)
    idx = np.rint((pts - E.origin) / h).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < shape), axis=-1)
    idx_c = np.clip(idx, 0, shape - 1)
    flat = np.ravel_multi_index(tuple(idx_c[..., j] for j in range(n)), E.shape)
    vals = E.u.ravel()[flat] & inside
    valid = inside & m.ravel()[flat]
    return vals, valid, offs


def axis_lines(E, omega, axis):
    """Exact columns along +e_axis: (values, valid) of shape (lines, N_axis)."""
    m = _omega(E, omega)
    u = np.moveaxis(E.u, axis, -1).reshape(-1, E.shape[axis])
    mm = np.moveaxis(m, axis, -1).reshape(-1, E.shape[axis])
    return u, mm


def jump_counts(vals, valid, bridge=False):
    """0->1 (plus) and 1->0 (minus) transitions between consecutive valid samples.

    bridge=True compares each valid sample with the previous valid one,
    skipping invalid samples in between.  Oblique ray casting needs this:
    nearest-cell rounding can leave a gap inside a convex domain that would
    otherwise hide a jump.
    """
    if not bridge:
        both = valid[:, 1:] & valid[:, :-1]
        up = both & ~vals[:, :-1] & vals[:, 1:]
        down = both & vals[:, :-1] & ~vals[:, 1:]
        return up.sum(axis=1), down.sum(axis=1)
    L, S = valid.shape
    pos = np.where(valid, np.arange(S)[None, :], -1)
    last = np.maximum.accumulate(pos, axis=1)
    prev = np.concatenate([np.full((L, 1), -1), last[:, :-1]], axis=1)
    has = valid & (prev >= 0)
    pv = np.take_along_axis(vals, np.maximum(prev, 0), axis=1)
    up = has & ~pv & vals
    down = has & pv & ~vals
    return up.sum(axis=1), down.sum(axis=1)


class DirectionalVariation:
    """Phi_+ and Phi_- of chi_E along v with per-line jump counts.

    Phi_+ collects increasing jumps (0 -> 1 moving along +v, where v points
    into E), Phi_- the decreasing ones.
    """

    def __init__(self, v, counts_plus, counts_minus, cross_section):
        self.v = np.asarray(v, dtype=float)
        self.counts_plus = counts_plus
        self.counts_minus = counts_minus
        self.cross_section = cross_section
        self.phi_plus = float(cross_section * counts_plus.sum())
        self.phi_minus = float(cross_section * counts_minus.sum())

    @property
    def total(self):
        return self.phi_plus + self.phi_minus

    def bad_measure(self, sign=+1):
        """Cross-section measure of lines with I_+ >= 1 (sign=+1) or I_- >= 1."""
        c = self.counts_plus if sign > 0 else self.counts_minus
        return float(self.cross_section * np.count_nonzero(c))


def _axis_of(v):
    nz = np.flatnonzero(np.abs(v) > 0)
    if nz.size == 1 and abs(abs(v[nz[0]]) - 1.0) == 0.0:
        return int(nz[0]), int(np.sign(v[nz[0]]))
    return None, 0


def directional_variation(E, omega, v):
    """Per-line jump counts I(v,y)_+- and totals Phi_+-(v) inside Omega.

    Axis directions are scanned exactly along grid columns; oblique
    directions by ray casting with spacing h, treating Omega as convex
    along each line (balls and boxes).
    """
    n = E.dim
    v = _check_unit(v, n)
    axis, sg = _axis_of(v)
    if axis is not None:
        vals, valid = axis_lines(E, omega, axis)
        if sg < 0:
            vals, valid = vals[:, ::-1], valid[:, ::-1]
        bridge = False
    else:
        vals, valid, _ = line_samples(E, omega, v)
        bridge = True
    up, down = jump_counts(vals, valid, bridge)
    return DirectionalVariation(v, up, down, E.h ** (n - 1))


def is_nonincreasing(vals, valid):
    """Per line: no 0->1 transition between consecutive valid samples."""
    up, _ = jump_counts(vals, valid)
    return up == 0


# ---------------------------------------------------------------------------
# Cauchy-Crofton


def crofton_constant(n):
    """c(n) = (int_{S^{n-1}} |v.w| dv)^{-1}."""
    # int_{S^{n-1}} |v_1| dv = 2 |B^{n-1}|
    ball = math.pi ** ((n - 1) / 2.0) / gamma((n - 1) / 2.0 + 1)
    return 1.0 / (2.0 * ball)


def _random_directions(rng, count, n):
    if n == 2:
        th = rng.uniform(0, 2 * np.pi, count)
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    g = rng.normal(size=(count, n))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _random_in_ball(rng, count, d, radius):
    if d == 1:
        return rng.uniform(-radius, radius, (count, 1))
    g = rng.normal(size=(count, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (radius * rng.uniform(0, 1, count) ** (1.0 / d))[:, None]


def _bounding_ball(E, m):
    x = E.centers()[m]
    if x.size == 0:
        return np.zeros(E.dim), 0.0
    lo, hi = x.min(axis=0), x.max(axis=0)
    c = 0.5 * (lo + hi)
    rad = float(np.max(np.linalg.norm(x - c, axis=1))) + E.h * math.sqrt(E.dim) / 2
    return c, rad


def _count_face_crossings(E, faces, q, v):
    """Number of jump faces crossed by each line q + R v (exact for the staircase)."""
    n = E.dim
    h = E.h
    shape = E.shape
    count = np.zeros(q.shape[0], dtype=np.int64)
    for j in range(n):
        F = faces[j]
        if not F.any():
            continue
        X = E.origin[j] + h * (np.arange(shape[j] - 1) + 0.5)    # plane positions
        vj = v[:, j]
        ok = np.abs(vj) > 1e-15
        t = (X[None, :] - q[:, j:j + 1]) / np.where(ok, vj, 1.0)[:, None]
        idx = [None] * n
        good = np.repeat(ok[:, None], X.size, axis=1)
        for o in range(n):
            if o == j:
                idx[o] = np.broadcast_to(np.arange(X.size)[None, :], t.shape)
                continue
            xo = q[:, o:o + 1] + t * v[:, o:o + 1]
            io = np.floor((xo - E.origin[o]) / h + 0.5).astype(np.int64)
            good &= (io >= 0) & (io < shape[o])
            idx[o] = np.clip(io, 0, shape[o] - 1)
        hit = F[tuple(idx)] & good
        count += hit.sum(axis=1)
    return count


def crofton_perimeter(E, omega=None, line_count=100000, seed=0, batch=2048):
    """Monte Carlo Cauchy-Crofton estimate of the perimeter of E inside Omega.

    Lines have uniformly random direction and offset in the ball of v-perp
    covering the bounding ball of Omega.  Each line counts its exact
    crossings with the jump faces of the cell set, so the estimate is
    unbiased for the classical perimeter of the rasterized set.
    Returns (estimate, standard error).
    """
    if line_count < 1:
        raise GridError("line_count must be positive")
    n = E.dim
    m = _omega(E, omega)
    center, rad = _bounding_ball(E, m)
    if rad == 0:
        return 0.0, 0.0
    faces = face_jumps(E, omega)
    rng = np.random.default_rng(seed)
    counts = []
    left = line_count
    while left > 0:
        b = min(batch, left)
        v = _random_directions(rng, b, n)
        y = _random_in_ball(rng, b, n - 1, rad)
        if n == 2:
            q = center + y[:, :1] * np.stack([-v[:, 1], v[:, 0]], axis=-1)
        else:
            q = np.array([center + y[i] @ perp_basis(v[i]) for i in range(b)])
        counts.append(_count_face_crossings(E, faces, q, v))
        left -= b
    c = np.concatenate(counts).astype(float)
    ball = math.pi ** ((n - 1) / 2.0) / gamma((n - 1) / 2.0 + 1) * rad ** (n - 1)
    factor = crofton_constant(n) * sphere_area(n) * ball
    est = factor * c.mean()
    se = factor * c.std(ddof=1) / math.sqrt(c.size) if c.size > 1 else float("inf")
    return float(est), float(se)


# ---------------------------------------------------------------------------
# halfspace fitting


def direction_grid(n, samples):
    """Deterministic direction samples: equispaced angles (n=2), Fibonacci sphere (n=3)."""
    if n == 2:
        return [unit_angle(j, samples) for j in range(samples)]
    i = np.arange(samples) + 0.5
    phi = np.arccos(1 - 2 * i / samples)
    th = np.pi * (1 + 5 ** 0.5) * i
    pts = np.stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)], axis=-1)
    return list(pts)


def unit_angle(j, m):
    """Unit vector at angle 2 pi j / m (canonical construction shared by all scans)."""
    j = j % m
    if (4 * j) % m == 0:
        # exact axis vectors, so axis scans stay exact
        return np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]][4 * j // m])
    a = 2 * math.pi * j / m
    return np.array([math.cos(a), math.sin(a)])


def halfspace_fit_for(E, omega, v):
    """Best threshold t for {x.v <= t} in Omega; returns (t, sym-diff measure, cell count)."""
    m = _omega(E, omega)
    x = E.centers()[m]
    e = E.u[m]
    if x.shape[0] == 0:
        return 0.0, 0.0, 0
    p = x @ np.asarray(v, float)
    order = np.argsort(p, kind="stable")
    p, e = p[order], e[order]
    N = p.size
    # first k cells (by projection) inside the halfspace
    miss_in = np.concatenate([[0], np.cumsum(~e)])            # 0-cells included
    miss_out = np.concatenate([np.cumsum(e[::-1])[::-1], [0]])  # 1-cells excluded
    cost = miss_in + miss_out
    allowed = np.ones(N + 1, bool)
    allowed[1:N] = p[1:] > p[:-1]
    cost = np.where(allowed, cost, N + 1)
    k = int(np.argmin(cost))
    t = float(p[k - 1]) if k > 0 else float(p[0] - E.h)
    return t, E.h ** E.dim * int(cost[k]), int(cost[k])


def best_halfspace_fit(E, omega=None, direction_samples=360, extra_directions=()):
    """Halfspace {x.v <= t} minimizing the symmetric difference in Omega.

    Exhaustive in t over all distinct projections of cell centers for each
    sampled direction.  Returns (v, t, measure).
    """
    if direction_samples < 8:
        raise GridError("need at least 8 direction samples")
    best = None
    for v in list(direction_grid(E.dim, direction_samples)) + list(extra_directions):
        t, meas, _ = halfspace_fit_for(E, omega, v)
        if best is None or meas < best[2]:
            best = (np.asarray(v, float), t, meas)
    return best
