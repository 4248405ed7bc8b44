"""Discrete interaction energies L_K, the K-perimeter in a domain and its
structural identities.

All functionals live on a truncated world: pairs of cells farther apart
than the stencil reaches, or lying outside the world box, do not interact.
This is itself a K-perimeter for a truncated kernel, so exact identities
stay exact.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.signal import fftconvolve

from .gridgeom import GridSet, DomainMask, classical_perimeter, _omega
from .kernels import build_weights, make_kernel, InteractionWeights

DIRECT_PAIR_LIMIT = 4_000_000


class OverlapError(ValueError):
    pass


def _mask(x):
    if isinstance(x, GridSet):
        return x.u
    return np.asarray(x, dtype=bool)


def _correlate(B, W):
    """c(a) = sum_b B(b) w(b - a) on the world grid."""
    full = fftconvolve(B.astype(float), W.stencil, mode="full")
    sl = tuple(slice(c, c + d) for c, d in zip(W.center, B.shape))
    return full[sl]


def _direct(A, B, W):
    ia = np.argwhere(A)
    ib = np.argwhere(B)
    if ia.size == 0 or ib.size == 0:
        return 0.0
    c = np.asarray(W.center)
    S = np.asarray(W.stencil.shape)
    parts = []
    step = max(1, DIRECT_PAIR_LIMIT // max(1, len(ib)))
    for s in range(0, len(ia), step):
        d = ib[None, :, :] - ia[s:s + step, None, :] + c
        ok = np.all((d >= 0) & (d < S), axis=-1)
        vals = W.stencil[tuple(d[..., j][ok] for j in range(d.shape[-1]))]
        parts.append(math.fsum(vals.tolist()))
    return math.fsum(parts)


def interaction(A, B, W, method="auto"):
    """L_K(A, B): sum of w(b - a) over cells a in A and b in B.

    method: 'direct' (pair gather with exactly rounded summation), 'fft'
    (correlation with the stencil) or 'auto'.
    """
    A, B = _mask(A), _mask(B)
    if A.shape != B.shape or A.shape != W.shape:
        raise ValueError("masks and weights must share the world shape")
    if np.any(A & B):
        raise OverlapError("interaction sets must be disjoint")
    na, nb = int(A.sum()), int(B.sum())
    if na == 0 or nb == 0:
        return 0.0
    if method == "auto":
        method = "direct" if na * nb <= DIRECT_PAIR_LIMIT else "fft"
    if method == "direct":
        return _direct(A, B, W)
    if method == "fft":
        return math.fsum(_correlate(B, W)[A].tolist())
    raise ValueError("unknown method %r" % (method,))


@dataclass
class EnergyReport:
    term_in_in: float
    term_in_out: float
    term_out_in: float
    total: float
    classical_perimeter: float
    tail_bound: float

    FIELDS = ("set_id", "kernel_id", "R", "term_in_in", "term_in_out", "term_out_in",
              "total", "classical_perimeter", "tail_bound")

    def csv_row(self, set_id="", kernel_id="", R=""):
        vals = [set_id, kernel_id, R] + ["%.17g" % getattr(self, f) for f in self.FIELDS[3:]]
        return ",".join(str(v) for v in vals)

    def as_dict(self):
        return asdict(self)


def tail_distance(omega_mask, W):
    """Smallest distance from an Omega cell to the part of space that is ignored."""
    idx = np.argwhere(omega_mask)
    if idx.size == 0:
        return float("inf")
    shape = np.asarray(omega_mask.shape)
    d = np.minimum(idx + 0.5, shape - idx - 0.5).min() * W.h
    if W.cutoff is not None:
        d = min(d, W.cutoff * W.h)
    return float(d)


def k_perimeter(E, omega, W, method="auto"):
    """Three-term decomposition of P_{K,Omega}(E) on the truncated world."""
    u = _mask(E)
    m = _omega(E if isinstance(E, GridSet) else GridSet(u), omega)
    Ein, Eout = u & m, u & ~m
    Cin, Cout = ~u & m, ~u & ~m
    a = interaction(Ein, Cin, W, method)
    b = interaction(Ein, Cout, W, method)
    c = interaction(Eout, Cin, W, method)
    per = classical_perimeter(E if isinstance(E, GridSet) else GridSet(u, W.h), omega)
    tail = 0.0
    if W.kernel is not None:
        d = tail_distance(m, W)
        if np.isfinite(d):
            tail = m.sum() * W.h ** u.ndim * W.kernel.tail_integral(d)
    return EnergyReport(a, b, c, a + b + c, per, tail)


def p_k_omega(E, omega, W, method="auto"):
    return k_perimeter(E, omega, W, method).total


def interaction_touching(A, B, m, W, method="auto"):
    """L_K(A, B) restricted to pairs with at least one cell in Omega."""
    return (interaction(A & m, B, W, method) + interaction(A & ~m, B & m, W, method))


def submodularity_defect(E, F, omega, W, method="auto"):
    """P(E u F) + P(E n F) + 2 L(F minus E, E minus F) - P(E) - P(F).

    Pairs are counted when they touch Omega, which makes the identity hold
    exactly (not only for competitors that agree outside Omega).
    """
    e, f = _mask(E), _mask(F)
    m = _omega(GridSet(e), omega)
    P = lambda x: p_k_omega(x, m, W, method)
    lhs = P(e | f) + P(e & f) + 2 * interaction_touching(f & ~e, e & ~f, m, W, method)
    return lhs - P(e) - P(f)


# ---------------------------------------------------------------------------
# nonlocal total variation and coarea


def _pair_offsets(W):
    off = W.nonzero_offsets(half=True)
    return off, np.array([W.weight(k) for k in off])


def _shift_pairs(shape, k):
    """Slices (src, dst) so that dst cell = src cell + k inside the world."""
    src, dst = [], []
    for kk, d in zip(k, shape):
        if kk >= 0:
            src.append(slice(0, d - kk))
            dst.append(slice(kk, d))
        else:
            src.append(slice(-kk, d))
            dst.append(slice(0, d + kk))
    return tuple(src), tuple(dst)


def nonlocal_total_variation(u, omega, W):
    """F_{K,Omega}(u): sum over unordered pairs touching Omega of |u(x)-u(y)| w."""
    u = np.asarray(u, dtype=float)
    m = _omega(GridSet(np.zeros(u.shape, bool)), omega)
    parts = []
    for k, w in zip(*_pair_offsets(W)):
        if any(abs(int(x)) >= d for x, d in zip(k, u.shape)):
            continue
        s, d = _shift_pairs(u.shape, k)
        touch = m[s] | m[d]
        diff = np.abs(u[s] - u[d])[touch]
        if diff.size:
            parts.append(w * math.fsum(diff.tolist()))
    return math.fsum(parts)


def coarea(u, omega, W, method="auto"):
    """Return (F_{K,Omega}(u), sum_j (t_{j+1}-t_j) P_{K,Omega}({u > t_j}))."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0) or np.any(u > 1):
        raise ValueError("values must lie in [0, 1]")
    F = nonlocal_total_variation(u, omega, W)
    m = _omega(GridSet(np.zeros(u.shape, bool)), omega)
    levels = np.unique(np.concatenate([[0.0, 1.0], u.ravel()]))
    parts = []
    for t0, t1 in zip(levels[:-1], levels[1:]):
        parts.append((t1 - t0) * p_k_omega(u > t0, m, W, method))
    return F, math.fsum(parts)


# ---------------------------------------------------------------------------
# whole-space perimeters


def _autocorr_counts(u):
    """N(k) = #{a in E : a + k not in E} for all offsets within the bounding box."""
    idx = np.argwhere(u)
    lo, hi = idx.min(axis=0), idx.max(axis=0)
    crop = u[tuple(slice(a, b + 1) for a, b in zip(lo, hi))]
    D = int(np.max(hi - lo))
    pad = [(0, D + 1 - s) for s in crop.shape]
    crop = np.pad(crop, pad).astype(float)
    corr = fftconvolve(crop, crop[(slice(None, None, -1),) * crop.ndim], mode="full")
    corr = np.rint(corr).astype(np.int64)            # index D + k <-> offset k
    return int(u.sum()) - corr, D


def pk_whole(E, kernel, depth=6, weights=None):
    """Whole-space P_K(E) = L_K(E, CE) of a bounded grid set, with tail correction.

    Offsets inside the bounding box are summed exactly; for larger offsets
    every cell of E sees only the complement, and that lattice tail is
    replaced by h^n times the integral of K outside the cube.
    """
    u = _mask(E)
    if not u.any():
        return 0.0
    h = E.h
    n = u.ndim
    N, D = _autocorr_counts(u)
    if weights is None:
        weights = build_weights(kernel, [D + 1] * n, h, depth=depth, cutoff=None,
                                extent=[D] * n)
    st = weights.stencil
    if st.shape != N.shape:
        raise ValueError("weights do not cover the bounding box")
    near = math.fsum((st * N).ravel().tolist())
    tail = int(u.sum()) * h ** n * kernel.cube_tail_integral((D + 0.5) * h)
    return near + tail


def ball_grid(R, h, dim=2):
    """Grid set of the cells (centered lattice) whose centers lie in B_R."""
    N = int(math.ceil(2 * R / h - 1e-9))
    N = max(N, 1)
    shape = (N,) * dim
    g = GridSet(np.zeros(shape, bool), h)
    x = g.centers()
    return g.like(np.sum(x * x, axis=-1) <= R * R * (1 + 1e-12))


def pk_ball(kernel, R, resolution=256, h=None, depth=6):
    """Whole-space K-perimeter of B_R rasterized with cell size h (default 2R/resolution)."""
    if not R > 0:
        raise ValueError("R must be positive")
    if h is None:
        h = 2.0 * R / resolution
    return pk_whole(ball_grid(R, h, kernel.dim), kernel, depth=depth)


def interpolation_check(E, omega, s, depth=6):
    """Ratio of the in-domain fractional interaction to the classical perimeter.

    Returns a dict with ptilde = int_{E n B} int_{B minus E} |x-y|^{-n-s},
    the classical perimeter in B, the ratio, and a flag when Per = 0.
    """
    m = _omega(E, omega)
    k = make_kernel("fractional", E.dim, s=s)
    W = build_weights(k, E.shape, E.h, depth=depth).scaled(1.0 / k.scale)
    pt = interaction(E.u & m, ~E.u & m, W)
    per = classical_perimeter(E, omega)
    if per == 0:
        return {"ptilde": pt, "per": 0.0, "ratio": float("nan"), "flagged": True}
    return {"ptilde": pt, "per": per, "ratio": pt / per, "flagged": False}


def minimizer_energy_bound_check(E_min, omega, W, kernel=None, depth=None):
    """slack = P_K(Omega cells) - P_{K,Omega}(E_min), nonnegative for minimizers."""
    kernel = kernel if kernel is not None else W.kernel
    m = _omega(E_min, omega)
    ball = E_min.like(m)
    ref = pk_whole(ball, kernel, depth=depth if depth is not None else W.depth)
    return ref - p_k_omega(E_min, m, W)


# ---------------------------------------------------------------------------
# lower/upper comparison with indicator kernels


def indicator_weights(shape, h, r0):
    """Midpoint weights of K_0 = chi_{|z| <= r0}."""
    ext = [d - 1 for d in shape]
    grids = np.meshgrid(*[np.arange(-e, e + 1) for e in ext], indexing="ij")
    K = np.stack(grids, axis=-1).astype(float)
    r = np.sqrt(np.sum(K * K, axis=-1)) * h
    st = ((r <= r0) & (r > 0)).astype(float) * h ** (2 * len(shape))
    return InteractionWeights(st, shape, h, 0, None, "indicator")


def below_perimeter_constant(E, Q, W):
    """L_K(E n Q, CE n Q) / min(|E n Q|, |CE n Q|) (None when the minimum is 0)."""
    u = _mask(E)
    q = _omega(GridSet(u), Q)
    a, b = u & q, ~u & q
    mn = min(a.sum(), b.sum()) * W.h ** u.ndim
    if mn == 0:
        return None
    return interaction(a, b, W) / mn


def indicator_ratio(E, Q, W, W0):
    """L_{K_0}(E n Q, CE n Q) / L_K(E n Q, CE n Q) (None when both vanish)."""
    u = _mask(E)
    q = _omega(GridSet(u), Q)
    a, b = u & q, ~u & q
    den = interaction(a, b, W)
    if den == 0:
        return None
    return interaction(a, b, W0) / den


# ---------------------------------------------------------------------------
# companion kernel weights


class _CompanionKernel:
    """Smooth stand-in exposing K* of a kernel through the kernel call interface."""

    def __init__(self, kernel):
        self.kernel = kernel
        self.dim = kernel.dim
        self.family = "companion"
        self.cutoff = getattr(kernel, "cutoff", None)
        self.a_table = None
        self.singular_s = None

    def __call__(self, z):
        return self.kernel.kstar(z)


def kstar_weights(kernel, shape, h, cutoff=None, depth=6):
    """Cell-pair weights of the companion kernel K* on a world."""
    v = kernel.kstar_variant if kernel.family != "regularized" else "regularized"
    if v == "proportional":
        W = build_weights(kernel, shape, h, cutoff=cutoff, depth=depth)
        return InteractionWeights(W.stencil * kernel.c1, W.shape, h, depth, W.cutoff, "kstar")
    if v == "proportional_plus_indicator":
        W = build_weights(kernel, shape, h, cutoff=cutoff, depth=depth)
        ext = [(d - 1) // 2 for d in W.stencil.shape]
        grids = np.meshgrid(*[np.arange(-e, e + 1) for e in ext], indexing="ij")
        r = np.sqrt(sum(g.astype(float) ** 2 for g in grids)) * h
        ind = ((r <= kernel.r0) & (r > 0)).astype(float) * h ** (2 * len(shape))
        return InteractionWeights(kernel.c1 * (W.stencil + ind), W.shape, h, depth, W.cutoff, "kstar")
    if v == "regularized":
        Wb = kstar_weights(kernel.base, shape, h, cutoff=cutoff, depth=depth)
        a = kernel.dim + 0.5
        ce = a * (a + 1) * 2 ** (a + 2)
        frac = make_kernel("fractional", kernel.dim, s=0.5)
        Wf = build_weights(frac, shape, h, cutoff=cutoff, depth=depth)
        st = Wb.stencil + ce * kernel.epsilon * Wf.stencil / frac.scale
        return InteractionWeights(st, Wb.shape, h, depth, Wb.cutoff, "kstar")
    W = build_weights(_CompanionKernel(kernel), shape, h, cutoff=cutoff, depth=depth)
    return InteractionWeights(W.stencil, W.shape, h, depth, W.cutoff, "kstar")
