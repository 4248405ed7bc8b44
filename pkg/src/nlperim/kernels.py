"""Interaction kernels, their companion kernels K*, and cell-pair weights.

A kernel is stored in raw form together with a constant ``scale`` chosen so
that the evaluated kernel is at least one on the ball of radius two.  Every
family is singular (or smooth) only at the origin and is radial up to an
optional angular profile ``a``.
"""

import json
import math

import numpy as np
from scipy import integrate
from scipy.special import erfc, gamma

FAMILIES = ("fractional", "anisotropic", "truncated", "integrable", "regularized")
KSTAR_VARIANTS = ("proportional", "proportional_plus_indicator", "integrable")

TABLE_SIZE_2D = 256
TABLE_SHAPE_3D = (32, 64)


class KernelError(ValueError):
    pass


class DivergentIntegral(ArithmeticError):
    pass


def sphere_area(n):
    """Surface measure of the unit sphere in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / gamma(n / 2.0)


def canonical_sign(z):
    """Sign (+1/-1) that maps z and -z to the same representative.

    The last nonzero coordinate of the representative is positive.
    """
    z = np.asarray(z, dtype=float)
    sign = np.zeros(z.shape[:-1])
    for i in range(z.shape[-1] - 1, -1, -1):
        undecided = sign == 0
        sign = np.where(undecided, np.sign(z[..., i]), sign)
    return np.where(sign == 0, 1.0, sign)


# ---------------------------------------------------------------------------
# angular profiles


def _check_table(table, dim):
    table = np.asarray(table, dtype=float)
    if dim == 2:
        if table.ndim != 1 or table.size % 2:
            raise KernelError("2D a_table must be a 1D array of even length")
        flipped = np.roll(table, -table.size // 2)
    else:
        if table.ndim != 2 or table.shape[1] % 2:
            raise KernelError("3D a_table must be (lat, lon) with even lon count")
        flipped = np.roll(table[::-1, :], -table.shape[1] // 2, axis=1)
    if not np.all(np.isfinite(table)) or np.any(table <= 0):
        raise KernelError("a_table entries must be strictly positive")
    if np.max(np.abs(table - flipped)) > 1e-12 * np.max(table):
        raise KernelError("a_table violates a(-x) = a(x)")
    return 0.5 * (table + flipped)


def resample_profile(func, dim):
    """Sample an angular profile a(unit vector) on the default grid."""
    if dim == 2:
        th = 2 * np.pi * np.arange(TABLE_SIZE_2D) / TABLE_SIZE_2D
        pts = np.stack([np.cos(th), np.sin(th)], axis=-1)
        return np.asarray(func(pts), dtype=float)
    nlat, nlon = TABLE_SHAPE_3D
    th = (np.arange(nlat) + 0.5) * np.pi / nlat
    ph = 2 * np.pi * np.arange(nlon) / nlon
    T, P = np.meshgrid(th, ph, indexing="ij")
    pts = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1)
    return np.asarray(func(pts), dtype=float)


def _profile_eval(table, zc):
    """Linear interpolation of the angular table at canonicalized vectors."""
    if table.ndim == 1:
        L = table.size
        th = np.arctan2(zc[..., 1], zc[..., 0]) % (2 * np.pi)
        x = th * (L / (2 * np.pi))
        i0 = np.floor(x).astype(int) % L
        f = x - np.floor(x)
        return (1 - f) * table[i0] + f * table[(i0 + 1) % L]
    nlat, nlon = table.shape
    r = np.sqrt(np.sum(zc * zc, axis=-1))
    th = np.arccos(np.clip(zc[..., 2] / r, -1.0, 1.0))
    ph = np.arctan2(zc[..., 1], zc[..., 0]) % (2 * np.pi)
    x = np.clip(th * nlat / np.pi - 0.5, 0.0, nlat - 1.0)
    i0 = np.minimum(np.floor(x).astype(int), nlat - 2)
    fx = x - i0
    y = ph * nlon / (2 * np.pi)
    j0 = np.floor(y).astype(int) % nlon
    fy = y - np.floor(y)
    j1 = (j0 + 1) % nlon
    return ((1 - fx) * (1 - fy) * table[i0, j0] + (1 - fx) * fy * table[i0, j1]
            + fx * (1 - fy) * table[i0 + 1, j0] + fx * fy * table[i0 + 1, j1])


def _sphere_grid(dim, m=2048):
    """Midpoint quadrature nodes and weights on S^{dim-1}."""
    if dim == 2:
        th = (np.arange(m) + 0.5) * 2 * np.pi / m
        pts = np.stack([np.cos(th), np.sin(th)], axis=-1)
        return pts, np.full(m, 2 * np.pi / m)
    nt, npp = m // 8, m // 4
    th = (np.arange(nt) + 0.5) * np.pi / nt
    ph = (np.arange(npp) + 0.5) * 2 * np.pi / npp
    T, P = np.meshgrid(th, ph, indexing="ij")
    pts = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1)
    wts = np.sin(T) * (np.pi / nt) * (2 * np.pi / npp)
    return pts.reshape(-1, 3), wts.ravel()


# ---------------------------------------------------------------------------
# radial profiles (raw, unnormalized) and their first two derivatives


def _power(r, alpha, d=0):
    if d == 0:
        return r ** (-alpha)
    if d == 1:
        return -alpha * r ** (-alpha - 1)
    return alpha * (alpha + 1) * r ** (-alpha - 2)


def _trunc_factor(r, d=0):
    q = np.maximum(9.0 - r * r, 0.0)
    if d == 0:
        return q ** 3
    if d == 1:
        return -6 * r * q ** 2
    return -6 * q ** 2 + 24 * r * r * q


def _gauss(r, d=0):
    g = np.exp(9.0 - r * r)
    if d == 0:
        return g
    if d == 1:
        return -2 * r * g
    return (4 * r * r - 2) * g


class Kernel:
    """Interaction kernel K with companion kernel K*.

    Use :func:`make_kernel` to construct; it validates parameters and
    applies the normalization.
    """

    def __init__(self, family, dim, s=None, a_table=None, epsilon=0.0, base=None,
                 kstar="proportional", c1=1.0, r0=None, scale=1.0, cutoff=None):
        self.family = family
        self.dim = dim
        self.s = s
        self.a_table = a_table
        self.epsilon = epsilon
        self.base = base
        self.kstar_variant = kstar
        self.c1 = c1
        self.r0 = r0
        self.scale = scale
        self.cutoff = cutoff
        self._cube_cache = {}

    # -- basic structure -------------------------------------------------

    @property
    def alpha(self):
        """Homogeneity order n+s of the singular part (None if smooth)."""
        if self.family == "integrable":
            return None
        if self.family == "regularized":
            a = self.base.alpha
            return max(a, self.dim + 0.5) if a is not None else self.dim + 0.5
        return self.dim + self.s

    @property
    def singular_s(self):
        a = self.alpha
        return None if a is None else a - self.dim

    def _radial(self, r, d=0):
        """Raw radial factor f(r) or its derivatives."""
        if self.family in ("fractional", "anisotropic"):
            return _power(r, self.dim + self.s, d)
        if self.family == "truncated":
            a = self.dim + self.s
            g = [_trunc_factor(r, i) for i in range(d + 1)]
            p = [_power(r, a, i) for i in range(d + 1)]
            if d == 0:
                return g[0] * p[0]
            if d == 1:
                return g[1] * p[0] + g[0] * p[1]
            return g[2] * p[0] + 2 * g[1] * p[1] + g[0] * p[2]
        if self.family == "integrable":
            return _gauss(r, d)
        raise KernelError("no single radial profile for " + self.family)

    def _angular(self, zc):
        if self.a_table is None:
            return 1.0
        return _profile_eval(self.a_table, zc)

    def raw(self, z):
        """Kernel before normalization."""
        z = np.asarray(z, dtype=float)
        if self.family == "regularized":
            base = self.base(z)
            r = np.sqrt(np.sum(z * z, axis=-1))
            return base + self.epsilon * r ** (-self.dim - 0.5)
        r2 = np.sum(z * z, axis=-1)
        r = np.sqrt(r2)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            val = self._radial(r)
            if self.a_table is not None:
                zc = z * canonical_sign(z)[..., None]
                val = val * self._angular(zc)
        return val

    def __call__(self, z):
        return self.scale * self.raw(z)

    # -- companion kernel --------------------------------------------------

    def kstar(self, z):
        """Companion kernel K*(z)."""
        z = np.asarray(z, dtype=float)
        r = np.sqrt(np.sum(z * z, axis=-1))
        if self.family == "regularized":
            ae = self.dim + 0.5
            ce = ae * (ae + 1) * 2 ** (ae + 2)
            return self.base.kstar(z) + ce * self.epsilon * r ** (-ae)
        if self.kstar_variant == "proportional":
            return self.c1 * self(z)
        if self.kstar_variant == "proportional_plus_indicator":
            return self.c1 * (self(z) + (r < self.r0))
        if self.kstar_variant == "integrable":
            if self.family != "integrable":
                raise KernelError("stored integrable K* only for the integrable family")
            return self.scale * r * r * (9 * r * r + 2) * np.exp(9.0 - r * r / 4)
        raise KernelError("unknown K* variant " + str(self.kstar_variant))

    # -- bounds and integrals ------------------------------------------------

    def profile_bounds(self):
        if self.a_table is None:
            return 1.0, 1.0
        return float(self.a_table.min()), float(self.a_table.max())

    @property
    def lam(self):
        """Lower constant in lam |z|^{-n-s} <= K(z) (power-law families)."""
        if self.family not in ("fractional", "anisotropic"):
            return None
        return self.scale * self.profile_bounds()[0]

    @property
    def Lam(self):
        if self.family not in ("fractional", "anisotropic"):
            return None
        return self.scale * self.profile_bounds()[1]

    def angular_mean(self):
        """Mean of the angular profile over the unit sphere."""
        if self.a_table is None:
            return 1.0
        if self.dim == 2:
            return float(np.mean(self.a_table))
        pts, wts = _sphere_grid(3, 1024)
        return float(np.sum(self._angular(pts) * wts) / np.sum(wts))

    def radial_mean(self, r):
        """Spherical average of K over |z| = r."""
        r = np.asarray(r, dtype=float)
        if self.family == "regularized":
            return self.base.radial_mean(r) + self.epsilon * r ** (-self.dim - 0.5)
        return self.scale * self.angular_mean() * self._radial(r)

    def tail_integral(self, rho):
        """Integral of K over {|z| > rho}."""
        n = self.dim
        S = sphere_area(n)
        if rho <= 0:
            raise DivergentIntegral("tail integral needs rho > 0")
        if self.family == "regularized":
            return self.base.tail_integral(rho) + S * self.epsilon * rho ** -0.5 / 0.5
        c = self.scale * self.angular_mean()
        if self.family in ("fractional", "anisotropic"):
            return S * c * rho ** (-self.s) / self.s
        if self.family == "truncated":
            if rho >= 3:
                return 0.0
            val, _ = integrate.quad(lambda r: self._radial(r) * r ** (n - 1), rho, 3.0, limit=200)
            return S * c * val
        if n == 2:
            return S * c * 0.5 * math.exp(9 - rho * rho)
        return S * c * (0.5 * rho * math.exp(9 - rho * rho)
                        + 0.25 * math.sqrt(math.pi) * math.exp(9) * erfc(rho))

    def _radial_tail_many(self, rho):
        """Vectorized raw radial tail  int_rho^inf f(r) r^{n-1} dr."""
        n = self.dim
        if self.family in ("fractional", "anisotropic"):
            return rho ** (-self.s) / self.s
        if self.family == "integrable":
            if n == 2:
                return 0.5 * np.exp(9 - rho * rho)
            return 0.5 * rho * np.exp(9 - rho * rho) + 0.25 * math.sqrt(math.pi) * math.exp(9) * erfc(rho)
        # truncated: Gauss-Legendre in log r on [rho, 3]
        x, w = np.polynomial.legendre.leggauss(64)
        out = np.zeros_like(rho)
        ok = rho < 3
        lo = np.log(rho[ok])[:, None]
        hi = math.log(3.0)
        t = 0.5 * (hi - lo) * x[None, :] + 0.5 * (hi + lo)
        r = np.exp(t)
        f = self._radial(r) * r ** n
        out[ok] = 0.5 * (hi - lo[:, 0]) * (f @ w)
        return out

    def cube_tail_integral(self, a):
        """Integral of K over the complement of the cube {|z|_inf <= a}."""
        a = float(a)
        if a in self._cube_cache:
            return self._cube_cache[a]
        if self.family == "regularized":
            pts, wts = _sphere_grid(self.dim)
            linf = np.max(np.abs(pts), axis=1)
            extra = self.epsilon * np.sum(wts * (a / linf) ** -0.5 / 0.5)
            val = self.base.cube_tail_integral(a) + extra
        else:
            pts, wts = _sphere_grid(self.dim)
            linf = np.max(np.abs(pts), axis=1)
            ang = self._angular(pts * canonical_sign(pts)[:, None]) if self.a_table is not None else 1.0
            val = self.scale * float(np.sum(wts * ang * self._radial_tail_many(a / linf)))
        self._cube_cache[a] = val
        return val

    # -- serialization -------------------------------------------------------

    def to_dict(self):
        d = {"family": self.family, "dim": self.dim, "s": self.s,
             "epsilon": self.epsilon, "r0": self.r0, "c1": self.c1,
             "cutoff": self.cutoff,
             "a_table": None if self.a_table is None else self.a_table.tolist(),
             "kstar": self.kstar_variant}
        if self.base is not None:
            d["base"] = self.base.to_dict()
        return d

    def __repr__(self):
        return "Kernel(%s, dim=%d, s=%s, scale=%.6g)" % (self.family, self.dim, self.s, self.scale)


# ---------------------------------------------------------------------------
# construction


def fractional_c1(n, s):
    """Sufficient C1 for K*=C1 K with a pure power law of order n+s."""
    a = n + s
    return a * (a + 1) * 2 ** (a + 2)


def _anisotropic_c1(n, s, table):
    """Sufficient C1 for a(z/|z|)|z|^{-n-s} from finite differences of the table."""
    a = n + s
    amin, amax = table.min(), table.max()
    if n == 2:
        dth = 2 * np.pi / table.size
        d1 = np.max(np.abs(np.diff(np.append(table, table[0])))) / dth
        d2 = np.max(np.abs(np.roll(table, -1) - 2 * table + np.roll(table, 1))) / dth ** 2
    else:
        nlat, nlon = table.shape
        dth, dph = np.pi / nlat, 2 * np.pi / nlon
        g1 = np.max(np.abs(np.diff(table, axis=0))) / dth
        g2 = np.max(np.abs(np.diff(table, axis=1))) / (dph * math.sin(dth / 2))
        d1 = max(g1, g2)
        d2 = 4 * d1 / dth
    first = a + d1 / amin
    second = 2 ** (a + 2) * (a * (a + 2) * amax + 2 * (a + 1) * d1 + d2) / amin
    return float(max(first, second))


def _radial_c1(kernel, r0):
    """Numerical C1 for K* = C1 (K + chi_{|z|<r0}) from a dense radial scan."""
    r = np.geomspace(1e-3, 2 * r0, 4000)
    f1 = np.abs(kernel._radial(r, 1)) * kernel.scale
    rho = np.geomspace(5e-4, 3 * r0, 12000)
    h = np.maximum(np.abs(kernel._radial(rho, 2)), np.abs(kernel._radial(rho, 1)) / rho) * kernel.scale
    # sup of the Hessian bound over the shell [r/2, 3r/2]
    lo = np.searchsorted(rho, r / 2, side="left")
    hi = np.searchsorted(rho, 1.5 * r, side="right")
    cmax = np.maximum.accumulate(h[::-1])[::-1]
    sup = np.array([h[i:j].max() if j > i else cmax[min(i, len(h) - 1)] for i, j in zip(lo, hi)])
    denom = kernel.scale * kernel._radial(r) + (r < r0)
    num = np.maximum(r * f1, r * r * sup)
    # where K and the indicator vanish, so do all derivatives (support edge)
    need = np.divide(num, denom, out=np.where(num > 0, np.inf, 0.0), where=denom > 0)
    return float(1.1 * need.max())


def make_kernel(family, dim, s=None, a_table=None, epsilon=None, base=None,
                kstar=None, c1=None, r0=None, cutoff=None):
    """Build a normalized kernel of the given family.

    family: one of fractional, anisotropic, truncated, integrable, regularized.
    The kernel is multiplied by max(1, 1/inf_{B_2} K) so that K >= 1 on B_2.
    """
    if family not in FAMILIES:
        raise KernelError("unknown family %r" % (family,))
    if dim not in (2, 3):
        raise KernelError("dim must be 2 or 3")
    if cutoff is not None and cutoff <= 0:
        raise KernelError("cutoff must be positive")

    if family == "regularized":
        if base is None:
            raise KernelError("regularized kernel needs a base kernel")
        if epsilon is None or not epsilon > 0:
            raise KernelError("regularized kernel needs epsilon > 0")
        if base.dim != dim:
            raise KernelError("base kernel dimension mismatch")
        return Kernel("regularized", dim, s=base.s, epsilon=float(epsilon), base=base,
                      kstar="proportional", c1=base.c1, scale=1.0, cutoff=cutoff)

    if family != "integrable":
        if s is None or not (0 < s < 1):
            raise KernelError("order s must lie in (0, 1)")
        s = float(s)
    else:
        s = None

    table = None
    if family == "anisotropic":
        if a_table is None:
            raise KernelError("anisotropic kernel needs a_table")
        if callable(a_table):
            a_table = resample_profile(a_table, dim)
        table = _check_table(a_table, dim)
    elif family == "truncated" and a_table is not None:
        table = _check_table(resample_profile(a_table, dim) if callable(a_table) else a_table, dim)

    k = Kernel(family, dim, s=s, a_table=table, epsilon=0.0, cutoff=cutoff)
    amin = k.profile_bounds()[0]
    if family in ("fractional", "anisotropic"):
        inf_b2 = amin * 2.0 ** (-(dim + s))
    elif family == "truncated":
        inf_b2 = amin * 125.0 * 2.0 ** (-(dim + s))
    else:
        inf_b2 = math.exp(5.0)
    k.scale = max(1.0, 1.0 / inf_b2)

    if kstar is None:
        kstar = {"truncated": "proportional_plus_indicator",
                 "integrable": "integrable"}.get(family, "proportional")
    if kstar not in KSTAR_VARIANTS:
        raise KernelError("unknown K* variant %r" % (kstar,))
    k.kstar_variant = kstar
    if kstar == "proportional_plus_indicator":
        k.r0 = float(r0) if r0 is not None else (6.0 if family == "truncated" else 2.0)
        if k.r0 < 2:
            raise KernelError("R0 must be at least 2")
    if c1 is not None:
        k.c1 = float(c1)
    elif kstar == "integrable":
        k.c1 = 1.0
    elif family == "fractional":
        k.c1 = fractional_c1(dim, s)
    elif family == "anisotropic":
        k.c1 = _anisotropic_c1(dim, s, table)
    elif family == "truncated" and table is None:
        k.c1 = _radial_c1(k, k.r0 if k.r0 else 6.0)
    elif family == "truncated":
        a1 = _anisotropic_c1(dim, s, table) / fractional_c1(dim, s)
        k.c1 = _radial_c1(k, k.r0 if k.r0 else 6.0) * max(1.0, a1) * table.max() / table.min()
    else:
        k.c1 = _radial_c1(k, 6.0)
    return k


def kernel_from_dict(d):
    family = d["family"]
    base = kernel_from_dict(d["base"]) if d.get("base") else None
    table = None if d.get("a_table") is None else np.asarray(d["a_table"], dtype=float)
    return make_kernel(family, d["dim"], s=d.get("s"), a_table=table,
                       epsilon=d.get("epsilon") or None, base=base,
                       kstar=d.get("kstar"), c1=d.get("c1"), r0=d.get("r0"),
                       cutoff=d.get("cutoff"))


def save_kernel(kernel, path):
    with open(path, "w") as fh:
        json.dump(kernel.to_dict(), fh, indent=1, sort_keys=True)


def load_kernel(path):
    with open(path) as fh:
        return kernel_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# audits


def kstar_audit(kernel, sample_count=2000, seed=0, r_range=(0.05, 5.0)):
    """Finite-difference check of the derivative bounds defining K*.

    Returns a dict with the maximal ratio of the two derivative terms to
    K*(z); a ratio <= 1 (up to finite-difference error) means the stored K*
    dominates.
    """
    rng = np.random.default_rng(seed)
    n = kernel.dim
    r = np.exp(rng.uniform(math.log(r_range[0]), math.log(r_range[1]), sample_count))
    u = rng.normal(size=(sample_count, n))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    z = r[:, None] * u
    e = rng.normal(size=(sample_count, n))
    e /= np.linalg.norm(e, axis=1, keepdims=True)
    step = 1e-4 * r
    d1 = (kernel(z + step[:, None] * e) - kernel(z - step[:, None] * e)) / (2 * step)
    term1 = r * np.abs(d1)

    # 16-point sample of the sup over the ball |y - z| <= |z|/2 (center included)
    sup2 = np.zeros(sample_count)
    for j in range(16):
        if j == 0:
            off = np.zeros((sample_count, n))
        else:
            w = rng.normal(size=(sample_count, n))
            w /= np.linalg.norm(w, axis=1, keepdims=True)
            rad = 0.5 * r * rng.uniform(0, 1, sample_count) ** (1.0 / n)
            off = rad[:, None] * w
        y = z + off
        hy = 1e-4 * np.linalg.norm(y, axis=1)
        d2 = (kernel(y + hy[:, None] * e) - 2 * kernel(y) + kernel(y - hy[:, None] * e)) / hy ** 2
        sup2 = np.maximum(sup2, np.abs(d2))
    term2 = r * r * sup2
    ks = kernel.kstar(z)
    ratio = np.maximum(term1, term2) / ks
    i = int(np.argmax(ratio))
    return {"max_ratio": float(ratio[i]), "max_ratio_first": float(np.max(term1 / ks)),
            "max_ratio_second": float(np.max(term2 / ks)), "worst_z": z[i].tolist(),
            "samples": sample_count, "c1": kernel.c1, "variant": kernel.kstar_variant}


def _power_moments(n, s):
    """int_{B_1} |z|^{1-n-s} dz and int_{|z|>1} |z|^{-n-s} dz."""
    if not (0 < s < 1):
        raise DivergentIntegral("power-law moment diverges for s=%r" % (s,))
    S = sphere_area(n)
    return S / (1 - s), S / s


def integrability_audit(kernel, raw=False):
    """Evaluate int K(z) min{1,|z|} dz, split into the unit ball and its complement."""
    n = kernel.dim
    S = sphere_area(n)
    fac = 1.0 if not raw else 1.0 / kernel.scale
    fam = kernel.family
    if kernel.s is not None and not (0 < kernel.s < 1) and fam != "integrable":
        raise DivergentIntegral("s must lie in (0,1)")
    if fam in ("fractional", "anisotropic"):
        inner, tail = _power_moments(n, kernel.s)
        c = kernel.scale * kernel.angular_mean() * fac
        inner, tail = c * inner, c * tail
    elif fam == "truncated":
        c = kernel.scale * kernel.angular_mean() * fac
        # K(r) r r^{n-1} = r^{-s} (9 - r^2)^3 for the truncated power law
        inner, _ = integrate.quad(lambda r: float(_trunc_factor(r)), 0, 1, weight="alg",
                                  wvar=(-kernel.s, 0))
        inner *= S * c
        tail = kernel.tail_integral(1.0) * fac
    elif fam == "integrable":
        c = kernel.scale * fac
        inner, _ = integrate.quad(lambda r: _gauss(r) * r ** n, 0, 1)
        inner *= S * c
        tail = kernel.tail_integral(1.0) * fac
    else:
        b = integrability_audit(kernel.base, raw=raw)
        ei, et = _power_moments(n, 0.5)
        inner = b["inner"] + kernel.epsilon * ei
        tail = b["tail"] + kernel.epsilon * et
    total = inner + tail
    return {"inner": float(inner), "tail": float(tail), "total": float(total),
            "finite": bool(np.isfinite(total))}


def l1_norm(kernel):
    """||K||_{L^1} for kernels that are integrable at the origin."""
    if kernel.family != "integrable":
        raise DivergentIntegral("kernel is not integrable at the origin")
    S = sphere_area(kernel.dim)
    val, _ = integrate.quad(lambda r: _gauss(r) * r ** (kernel.dim - 1), 0, np.inf)
    return float(S * kernel.scale * val)


# ---------------------------------------------------------------------------
# cell-pair weights


class InteractionWeights:
    """Stencil w(k) of cell-pair interactions on a fixed world.

    ``stencil`` has shape (2*m_1+1, ..., 2*m_n+1) with the zero offset at
    index ``center``.  w(k) is the double integral of K over two cells of
    side h at integer offset k.
    """

    def __init__(self, stencil, shape, h, depth, cutoff, kernel_id="", kernel=None):
        self.stencil = stencil
        self.kernel = kernel
        self.shape = tuple(shape)
        self.h = float(h)
        self.depth = depth
        self.cutoff = cutoff
        self.kernel_id = kernel_id
        self.center = tuple((d - 1) // 2 for d in stencil.shape)

    @property
    def dim(self):
        return len(self.shape)

    def weight(self, k):
        idx = tuple(int(c) + int(x) for c, x in zip(self.center, k))
        if any(i < 0 or i >= d for i, d in zip(idx, self.stencil.shape)):
            return 0.0
        return float(self.stencil[idx])

    def scaled(self, factor):
        return InteractionWeights(self.stencil * factor, self.shape, self.h, self.depth,
                                  self.cutoff, self.kernel_id, None)

    def nonzero_offsets(self, half=False):
        """Integer offsets with nonzero weight (optionally one of each +-k pair)."""
        idx = np.argwhere(self.stencil > 0)
        off = idx - np.asarray(self.center)
        if half:
            sg = canonical_sign(off.astype(float))
            off = off[sg > 0]
        return off

    def total(self):
        return float(np.sum(self.stencil))


_GL_CACHE = {}


def _gl(order):
    if order not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(order)
        _GL_CACHE[order] = (0.5 * (x + 1), 0.5 * w)  # on [0,1]
    return _GL_CACHE[order]


def _box_gauss(kernel, h, k, lo, size, order=8):
    """Tensor Gauss-Legendre integral of K(h(k+u)) T(u) over boxes.

    lo: (m, n) lower corners; size: (m,) side lengths.
    """
    n = len(k)
    x, w = _gl(order)
    grids = np.meshgrid(*([x] * n), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    wts = np.ones(nodes.shape[0])
    for g in np.meshgrid(*([w] * n), indexing="ij"):
        wts = wts * g.ravel()
    u = lo[:, None, :] + size[:, None, None] * nodes[None, :, :]
    tent = np.prod(1.0 - np.abs(u), axis=-1)
    val = kernel(h * (np.asarray(k, dtype=float) + u)) * tent
    return np.sum(val @ wts * size ** n)


def _orthant_boxes(n):
    for signs in np.ndindex(*([2] * n)):
        lo = np.array([-1.0 if b == 0 else 0.0 for b in signs])
        yield lo


def near_weight(kernel, k, h, depth=6, order=8):
    """Quadrature of the double cell integral for a near offset 1<=|k|_inf<=2.

    The integral is written as h^{2n} int_{[-1,1]^n} K(h(k+u)) T(u) du with
    the tent T(u) = prod(1-|u_i|) and split into 2^n orthant boxes.  A box
    whose corner carries the singularity u = -k is subdivided dyadically
    toward that corner ``depth`` times; the remaining corner box is closed
    with the self-similar geometric factor 2^{-(m-s)} of the leading power
    law (m = number of nonzero entries of k).
    """
    k = np.asarray(k, dtype=float)
    n = k.size
    total = 0.0
    sing = -k if np.max(np.abs(k)) <= 1 else None
    sexp = kernel.singular_s
    m = int(np.count_nonzero(k))
    rho = 2.0 ** (-(m - sexp)) if sexp is not None else None
    for lo in _orthant_boxes(n):
        hi = lo + 1.0
        corner = None
        if sing is not None and np.all(sing >= lo) and np.all(sing <= hi):
            corner = sing
        if corner is None:
            # smooth integrand: one dyadic split then Gauss
            subs = np.array([lo + 0.5 * np.array(c) for c in np.ndindex(*([2] * n))])
            total += _box_gauss(kernel, h, k, subs, np.full(len(subs), 0.5), order)
            continue
        # recursive subdivision toward the singular corner
        cur_lo, size = lo.copy(), 1.0
        for _ in range(depth):
            half = size / 2
            child_lo = []
            corner_lo = None
            for c in np.ndindex(*([2] * n)):
                clo = cur_lo + half * np.array(c)
                if np.all(corner >= clo) and np.all(corner <= clo + half):
                    corner_lo = clo
                else:
                    child_lo.append(clo)
            child_lo = np.array(child_lo)
            total += _box_gauss(kernel, h, k, child_lo, np.full(len(child_lo), half), order)
            cur_lo, size = corner_lo, half
        if rho is None:
            total += _box_gauss(kernel, h, k, cur_lo[None, :], np.array([size]), order)
        else:
            # one more level of siblings, then geometric closure of the corner chain
            half = size / 2
            child_lo = []
            for c in np.ndindex(*([2] * n)):
                clo = cur_lo + half * np.array(c)
                if not (np.all(corner >= clo) and np.all(corner <= clo + half)):
                    child_lo.append(clo)
            child_lo = np.array(child_lo)
            g = _box_gauss(kernel, h, k, child_lo, np.full(len(child_lo), half), order)
            total += g / (1.0 - rho)
    return total * h ** (2 * n)


def _symmetry_images(k, radial):
    """All offsets equivalent to k under the symmetries of the kernel."""
    k = tuple(int(x) for x in k)
    if not radial:
        return {k, tuple(-x for x in k)}
    import itertools
    out = set()
    for perm in itertools.permutations(range(len(k))):
        p = [k[i] for i in perm]
        for signs in itertools.product((1, -1), repeat=len(k)):
            out.add(tuple(sg * x for sg, x in zip(signs, p)))
    return out


def is_radial(kernel):
    if kernel.family == "regularized":
        return is_radial(kernel.base)
    return kernel.a_table is None


MID_RANGE = 5


def _canonical_offsets(K, radial):
    """One representative per symmetry orbit, so images get bit-identical weights."""
    K = K.astype(float)
    if radial:
        return -np.sort(-np.abs(K), axis=-1)
    return K * canonical_sign(K)[..., None]


def far_weights(kernel, k, h):
    """Midpoint rule with the tent second-moment correction h^2 Delta K / 12.

    The Laplacian is a central difference with step h.  Accurate to a
    fraction of a permille relative for |k|_inf > 5; the zero offset is
    returned as garbage and must be overwritten.
    """
    n = k.shape[-1]
    z = h * k
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        k0 = kernel(z)
        lap = np.zeros_like(k0)
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            lap += kernel(z + e) + kernel(z - e) - 2.0 * k0
        return (k0 + lap / 12.0) * h ** (2 * n)


def mid_weight(kernel, k, h, order=8):
    """Tensor Gauss over the 2^n orthant boxes of the tent integral (smooth integrand)."""
    k = np.asarray(k, dtype=float)
    n = k.size
    lo = np.array(list(_orthant_boxes(n)))
    return _box_gauss(kernel, h, k, lo, np.ones(len(lo)), order) * h ** (2 * n)


def build_weights(kernel, shape, h, cutoff=None, depth=6, max_entries=2 ** 26, extent=None):
    """Cell-pair weights for all offsets realizable in a world of the given shape.

    cutoff: Euclidean radius in cells beyond which weights are set to zero
    (defaults to kernel.cutoff).  extent: optional maximal offset per axis
    (defaults to shape-1).
    """
    shape = tuple(int(x) for x in shape)
    n = len(shape)
    if n != kernel.dim:
        raise KernelError("world dimension does not match kernel")
    if not h > 0:
        raise KernelError("cell size must be positive")
    explicit = cutoff is not None
    if cutoff is None:
        cutoff = kernel.cutoff
    if extent is None:
        extent = [d - 1 for d in shape]
    extent = [int(e) for e in extent]
    if cutoff is not None:
        c = int(math.floor(cutoff))
        extent = [min(e, c) for e in extent]
        diam = math.sqrt(sum((d - 1) ** 2 for d in shape))
        if explicit and cutoff > diam + 1e-9:
            raise KernelError("cutoff exceeds the world diameter")
    sshape = tuple(2 * e + 1 for e in extent)
    if np.prod(sshape, dtype=float) > max_entries:
        raise MemoryError("stencil of shape %s exceeds the budget" % (sshape,))
    grids = np.meshgrid(*[np.arange(-e, e + 1) for e in extent], indexing="ij")
    K = np.stack(grids, axis=-1)
    radial = is_radial(kernel)
    st = far_weights(kernel, _canonical_offsets(K, radial), h)
    linf = np.max(np.abs(K), axis=-1)
    st[linf == 0] = 0.0
    done = set()
    for idx in np.argwhere((linf >= 1) & (linf <= MID_RANGE)):
        kk = tuple(int(v) for v in K[tuple(idx)])
        if kk in done:
            continue
        images = _symmetry_images(kk, radial)
        rep = max(images)
        if max(abs(x) for x in rep) <= 2:
            val = near_weight(kernel, rep, h, depth=depth)
        else:
            val = mid_weight(kernel, rep, h)
        for im in images:
            done.add(im)
            pos = tuple(c + x for c, x in zip(extent, im))
            if all(0 <= p < d for p, d in zip(pos, sshape)):
                st[pos] = val
    if cutoff is not None:
        st[np.sqrt(np.sum(K.astype(float) ** 2, axis=-1)) > cutoff] = 0.0
    return InteractionWeights(st, shape, h, depth, cutoff, kernel_id=kernel.family, kernel=kernel)
