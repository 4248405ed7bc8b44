"""Exact minimization of P_{K,Omega} with fixed exterior data by minimum cuts.

Cells of Omega are graph nodes.  Interacting pairs of Omega cells are joined
by an edge of capacity w(b - a); interactions with fixed exterior cells are
aggregated into terminal arcs (exterior 1-cells on the source side, 0-cells
on the sink side).  Weights are converted to fixed-point integers, so the
cut is exact for the quantized energy, which differs from the real one by
far less than 1e-9 relatively.
"""

import time
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from . import _maxflow
from .energy import p_k_omega, _shift_pairs
from .gridgeom import GridSet, DomainMask

FIXED_POINT_BITS = 48
TOTAL_BITS = 60
EXACT_TERMINAL_WORK = 60_000_000


class NegativeWeight(ValueError):
    pass


class CapacityOverflow(OverflowError):
    pass


@dataclass
class MinimizeResult:
    E_min: GridSet
    E_max: GridSet
    energy: float
    energy_max: float
    cut_value: int
    scale: float
    nodes: int
    edges: int
    seconds: float

    def csv_row(self, set_id=""):
        return "%s,%.17g,%.17g,%d,%d,%d,%.6f" % (set_id, self.energy, self.energy_max,
                                                 int(self.E_min.u.sum()), self.nodes,
                                                 self.edges, self.seconds)


class CutGraph:
    """Quantized two-terminal graph for P_{K,Omega} with fixed exterior data."""

    def __init__(self, omega, W):
        if np.any(W.stencil < 0):
            raise NegativeWeight("kernel weights must be nonnegative")
        self.omega = omega
        self.W = W
        m = omega.omega
        shape = m.shape
        self.node_of = -np.ones(shape, np.int64)
        self.cells = np.argwhere(m)
        self.n = len(self.cells)
        self.node_of[m] = np.arange(self.n)

        offs = W.nonzero_offsets(half=True)
        offs = offs[[all(abs(int(x)) < d for x, d in zip(k, shape)) for k in offs]] if len(offs) else offs
        wts = np.array([W.weight(k) for k in offs]) if len(offs) else np.zeros(0)

        ext1 = omega.exterior & ~m
        ext0 = ~omega.exterior & ~m
        # float estimate of the total capacity, for the fixed-point scale
        pair_counts = []
        pu, pv, pk = [], [], []
        for idx, k in enumerate(offs):
            s, d = _shift_pairs(shape, k)
            both = m[s] & m[d]
            if both.any():
                pu.append(self.node_of[s][both])
                pv.append(self.node_of[d][both])
                pk.append(np.full(int(both.sum()), idx))
            pair_counts.append(int(both.sum()))
        pair_total = float(np.dot(pair_counts, wts)) if len(wts) else 0.0
        fsrc = fftconvolve(ext1.astype(float), W.stencil, mode="full")
        fsnk = fftconvolve(ext0.astype(float), W.stencil, mode="full")
        sl = tuple(slice(c, c + dd) for c, dd in zip(W.center, shape))
        fsrc, fsnk = np.maximum(fsrc[sl][m], 0.0), np.maximum(fsnk[sl][m], 0.0)
        total = 2 * pair_total + fsrc.sum() + fsnk.sum()
        wmax = float(W.stencil.max()) if W.stencil.size else 0.0
        if wmax == 0 or total == 0:
            self.scale = 1.0
        else:
            self.scale = min(2.0 ** FIXED_POINT_BITS / wmax, 2.0 ** TOTAL_BITS / total)
        qst = np.rint(W.stencil * self.scale).astype(np.int64)
        self.q_stencil = qst
        q = np.array([int(qst[tuple(c + int(x) for c, x in zip(W.center, k))]) for k in offs],
                     dtype=np.int64)

        if pu:
            self.pu = np.concatenate(pu)
            self.pv = np.concatenate(pv)
            self.pcap = q[np.concatenate(pk)]
            keep = self.pcap > 0
            self.pu, self.pv, self.pcap = self.pu[keep], self.pv[keep], self.pcap[keep]
        else:
            self.pu = self.pv = self.pcap = np.zeros(0, np.int64)

        work = len(offs) * 2 * int(np.prod(shape))
        if work <= EXACT_TERMINAL_WORK:
            self.src_cap = self._terminal_exact(ext1, offs, q)
            self.sink_cap = self._terminal_exact(ext0, offs, q)
        else:
            self.src_cap = np.rint(fsrc * self.scale).astype(np.int64)
            self.sink_cap = np.rint(fsnk * self.scale).astype(np.int64)
        tot = int(self.pcap.sum()) * 2 + int(self.src_cap.sum()) + int(self.sink_cap.sum())
        if tot >= 2 ** 62:
            raise CapacityOverflow("capacities exceed the integer range")
        self.csr = _maxflow.build_csr(self.n, self.pu, self.pv, self.pcap)

    def _terminal_exact(self, ext, offs, q):
        m = self.omega.omega
        acc = np.zeros(m.shape, np.int64)
        for k, qk in zip(offs, q):
            if qk == 0:
                continue
            for kk in (k, -k):
                s, d = _shift_pairs(m.shape, kk)
                acc[s] += qk * ext[d]
        return acc[m]

    @property
    def edge_count(self):
        return int(len(self.pu))

    def cut_value(self, x):
        """Quantized energy of the node labelling x (True = in E)."""
        x = np.asarray(x, bool)
        split = x[self.pu] != x[self.pv]
        return (int(self.pcap[split].sum()) + int(self.sink_cap[x].sum())
                + int(self.src_cap[~x].sum()))

    def solve(self):
        """(minimal E labels, maximal E labels) over all minimum cuts."""
        t_min = _maxflow.min_sink_side(self.n, self.csr, self.src_cap, self.sink_cap)
        e_max = ~t_min
        # swapping terminals turns the complement into the source side
        t_min_c = _maxflow.min_sink_side(self.n, self.csr, self.sink_cap, self.src_cap)
        e_min = t_min_c.copy()
        return e_min, e_max

    def to_grid(self, x, world):
        u = self.omega.exterior.copy()
        u[self.omega.omega] = False
        u[tuple(self.cells.T)] = x
        return world.like(u)


def minimize(omega, W, world=None):
    """Global minimizers of P_{K,Omega} among sets equal to the exterior data off Omega.

    Returns the inclusion-minimal and inclusion-maximal minimizers.
    """
    t0 = time.perf_counter()
    if world is None:
        world = GridSet(np.zeros(omega.shape, bool), W.h)
    g = CutGraph(omega, W)
    e_min, e_max = g.solve()
    Emin, Emax = g.to_grid(e_min, world), g.to_grid(e_max, world)
    cv = g.cut_value(e_min)
    if g.cut_value(e_max) != cv:
        raise AssertionError("minimal and maximal cuts have different values")
    en = p_k_omega(Emin, omega, W)
    en2 = p_k_omega(Emax, omega, W)
    return MinimizeResult(Emin, Emax, en, en2, cv, g.scale, g.n, g.edge_count,
                          time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# oracle and checks


def enumerate_energies(omega, W):
    """Energies of all 2^|Omega| interior states (small Omega only), float64.

    Evaluated from the quadratic form of the cell interactions, without any
    graph construction.  Row i of the state matrix is the binary expansion of i.
    """
    m = omega.omega
    cells = np.argwhere(m)
    n = len(cells)
    if n > 20:
        raise ValueError("enumeration limited to 20 cells")
    c = np.asarray(W.center)
    diff = cells[None, :, :] - cells[:, None, :] + c
    Wm = W.stencil[tuple(diff[..., j] for j in range(diff.shape[-1]))]
    np.fill_diagonal(Wm, 0.0)
    ext1 = np.argwhere(omega.exterior & ~m)
    ext0 = np.argwhere(~omega.exterior & ~m)

    def agg(ext):
        if len(ext) == 0:
            return np.zeros(n)
        dd = ext[None, :, :] - cells[:, None, :] + c
        ok = np.all((dd >= 0) & (dd < np.asarray(W.stencil.shape)), axis=-1)
        dd = np.clip(dd, 0, np.asarray(W.stencil.shape) - 1)
        return np.sum(W.stencil[tuple(dd[..., j] for j in range(dd.shape[-1]))] * ok, axis=1)

    a1, a0 = agg(ext1), agg(ext0)
    states = ((np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1).astype(float)
    # sum_{i<j} w_ij [x_i != x_j] = x.(W 1) - x^T W x
    pair = states @ Wm.sum(axis=1) - np.einsum("si,ij,sj->s", states, Wm, states)
    energy = pair + states @ a0 + (1 - states) @ a1
    return states.astype(bool), energy


def enumeration_optima(omega, W, rel_tol=1e-12):
    states, energy = enumerate_energies(omega, W)
    best = energy.min()
    tol = rel_tol * max(abs(best), 1e-300) + 1e-300
    return states[energy <= best + tol], best


def mutual_inclusion_check(omega_base, W, trials, seed, exterior_fn=None):
    """Check E_min <= every enumerated optimum <= E_max on random exterior data."""
    rng = np.random.default_rng(seed)
    m = omega_base.omega
    violations = []
    for i in range(trials):
        ext = exterior_fn(rng) if exterior_fn else rng.random(m.shape) < 0.5
        om = omega_base.with_exterior(ext)
        res = minimize(om, W)
        lo = res.E_min.u[m]
        hi = res.E_max.u[m]
        ok = bool(np.all(lo <= hi))
        if np.count_nonzero(m) <= 20:
            opt, best = enumeration_optima(om, W)
            ok = ok and bool(np.all(opt >= lo) and np.all(opt <= hi))
            ok = ok and abs(best - res.energy) <= 1e-9 * max(best, 1e-300)
        if not ok:
            violations.append(i)
    return {"trials": trials, "violations": violations}


def regularization_sweep(omega, kernel, eps_list, world_shape=None, h=1.0, depth=6):
    """Minimize with K_eps for each eps (eps = 0 means K itself).

    Returns rows (eps, energy under K, |E_eps| cells) and pairwise
    symmetric differences of the minimal minimizers.
    """
    from .kernels import make_kernel, build_weights
    shape = world_shape or omega.shape
    W0 = build_weights(kernel, shape, h, depth=depth)
    rows, sets = [], []
    for eps in eps_list:
        if eps == 0:
            W = W0
        else:
            W = build_weights(make_kernel("regularized", kernel.dim, base=kernel, epsilon=eps),
                              shape, h, depth=depth)
        res = minimize(omega, W)
        rows.append({"eps": eps, "energy_K": p_k_omega(res.E_min, omega, W0),
                     "cells": int(res.E_min.u.sum())})
        sets.append(res.E_min.u)
    dist = np.array([[int(np.count_nonzero(a != b)) * h ** len(shape) for b in sets] for a in sets])
    return rows, dist


def competitor_interaction_check(E_min, omega, W, trials, seed, flip_fraction=None):
    """Fuzz 2 L_K(F minus E, E minus F) <= delta for competitors F of a minimizer E.

    F agrees with E off Omega and flips a random subset of Omega cells;
    delta = P_{K,Omega}(F) - P_{K,Omega}(E).  Returns the largest value of
    2 L - delta over the trials (nonpositive up to roundoff when E is minimal).
    """
    from .energy import interaction
    rng = np.random.default_rng(seed)
    m = omega.omega
    base = p_k_omega(E_min, omega, W)
    worst = -np.inf
    for _ in range(trials):
        frac = flip_fraction if flip_fraction is not None else rng.uniform(0.02, 0.5)
        flip = m & (rng.random(m.shape) < frac)
        F = E_min.like(E_min.u ^ flip)
        delta = p_k_omega(F, omega, W) - base
        L = interaction(F.u & ~E_min.u, E_min.u & ~F.u, W)
        worst = max(worst, 2 * L - delta)
    return float(worst)
