"""Discretized transfer operators on the union of intervals: RPF eigendata,
pressure, critical exponent, the normalized potential, and the measured
constants every later bound is tested against.

Discretization is Chebyshev collocation (first-kind nodes, barycentric
interpolation) per interval; branch maps are analytic Moebius maps so the
leading eigendata converge spectrally in the degree.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import symbolic
from .errors import NoConvergence, RootNotBracketed
from .symbolic import all_words, lip_quotient_pairs

DENSE_EIG_DIM = 256


class CollocationGrid:
    """Per-symbol Chebyshev nodes with barycentric interpolation weights."""

    def __init__(self, model, degree=16):
        self.model = model
        self.m = degree
        i = np.arange(degree)
        ang = (2 * i + 1) * np.pi / (2 * degree)
        ref = np.cos(ang)                       # strictly inside (-1, 1)
        self.wbary = (-1.0) ** i * np.sin(ang)  # first-kind barycentric weights
        mid = self.model.intervals.mean(axis=1)
        half = np.diff(self.model.intervals, axis=1)[:, 0] / 2.0
        self.nodes = mid[:, None] + half[:, None] * ref[None, :]

    @property
    def dim(self):
        return self.model.N * self.m

    def bary_matrix(self, j, x):
        """Rows of interpolation weights from the nodes of interval j to points x."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        diff = x[:, None] - self.nodes[j][None, :]
        hit = np.abs(diff) < 1e-300
        diff = np.where(hit, 1.0, diff)
        rows = self.wbary[None, :] / diff
        rows /= rows.sum(axis=1, keepdims=True)
        if hit.any():
            rows[hit.any(axis=1)] = 0.0
            rows[hit] = 1.0
        return rows

    def interp(self, j, values_j, x):
        return self.bary_matrix(j, x) @ values_j


def assemble_transfer(model, grid, xi, normalized=False, potential=None):
    """Dense collocation matrix of the transfer operator at parameter xi.

    Raw weight is exp(xi * tau); normalized weight is exp(f^(a) + i b tau) with
    a = Re(xi) pinned to the potential's parameter.
    """
    xi = complex(xi)
    if normalized:
        if potential is None:
            raise ValueError("normalized assembly needs a NormalizedPotential")
        if abs(xi.real - potential.a) > 1e-12:
            raise ValueError(f"Re(xi) = {xi.real} does not match potential a = {potential.a}")
    m, N = grid.m, model.N
    M = np.zeros((N * m, N * m), dtype=complex)
    for k in range(N):
        u = grid.nodes[k]
        for j in range(N):
            if not model.admissible(j, k):
                continue
            v = model.inv_branch(j, u)
            tau = model.tau(j, v)
            if normalized:
                w = np.exp(potential.f_step(j, k, v, u) + 1j * xi.imag * tau)
            else:
                w = np.exp(xi * tau)
            M[k * m:(k + 1) * m, j * m:(j + 1) * m] += w[:, None] * grid.bary_matrix(j, v)
    if np.abs(M.imag).max() == 0.0:
        return M.real.copy()
    return M


def power_leading(M, tol=1e-12, max_iter=100_000, v0=None):
    """Dominant eigenpair of a real matrix by power iteration."""
    n = M.shape[0]
    v = np.ones(n) / np.sqrt(n) if v0 is None else v0 / np.linalg.norm(v0)
    lam = 0.0
    for _ in range(max_iter):
        u = M @ v
        nrm = np.linalg.norm(u)
        if nrm == 0.0:
            raise NoConvergence("power iteration collapsed to zero")
        u /= nrm
        lam_new = u @ (M @ u)
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new, u
        lam, v = lam_new, u
    raise NoConvergence(f"power iteration did not reach tolerance {tol}")


def second_eigenvalue_modulus(M, lam, h, nu):
    """|second eigenvalue|: dense spectrum for small matrices, deflation otherwise."""
    if M.shape[0] <= DENSE_EIG_DIM:
        eig = np.sort(np.abs(np.linalg.eigvals(M)))[::-1]
        return float(eig[1])
    deflated = M - lam * np.outer(h, nu) / (nu @ h)
    lam2, _ = power_leading(deflated, tol=1e-10)
    return abs(lam2)


@dataclass
class RpfSolution:
    """Leading eigendata of the raw operator at potential -(delta + a) tau."""

    a: float
    lam: float
    h: np.ndarray        # (N, m) positive eigenfunction values
    nu: np.ndarray       # (N, m) nonnegative quadrature weights, total mass 1
    gap: float           # |second eigenvalue| / lam

    def nu_apply(self, values):
        return float(np.sum(self.nu * values))


def _leading_for_param(model, grid, s, v0=None, tol=1e-14):
    M = assemble_transfer(model, grid, -s)
    lam, v = power_leading(M, tol=tol, v0=v0)
    return M, lam, v


def critical_exponent(model, grid, tol=1e-12, max_iter=200):
    """Bowen pressure root: the s in (0, 1) with leading eigenvalue 1 at -s tau."""
    lo, hi = 0.0, 1.0
    _, lam_lo, v = _leading_for_param(model, grid, lo)
    _, lam_hi, _ = _leading_for_param(model, grid, hi, v0=v)
    if not (lam_lo > 1.0 > lam_hi):
        raise RootNotBracketed(f"leading eigenvalue is {lam_lo} at 0 and {lam_hi} at 1")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        _, lam, v = _leading_for_param(model, grid, mid, v0=v)
        if abs(np.log(lam)) < tol or hi - lo < 1e-15:
            return mid
        if lam > 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def rpf_solve(model, grid, a, delta=None, tol=1e-12):
    """RPF eigendata (lam_a, h_a, nu_a, gap) at the potential -(delta + a) tau."""
    if delta is None:
        delta = critical_exponent(model, grid)
    M, lam, h = _leading_for_param(model, grid, delta + a, tol=min(tol, 1e-13))
    if h.sum() < 0:
        h = -h
    _, nu = power_leading(M.T, tol=min(tol, 1e-13))
    if nu.sum() < 0:
        nu = -nu
    nu = nu / nu.sum()
    h = h / (nu @ h)
    gap = second_eigenvalue_modulus(M, lam, h, nu) / lam
    m = grid.m
    return RpfSolution(a, float(lam), h.reshape(model.N, m), nu.reshape(model.N, m), float(gap))


class NormalizedPotential:
    """f^(a) = -(a + delta) tau + log h0 - log h0 o sigma - log lam_a, evaluated anywhere."""

    def __init__(self, model, grid, a, delta, lam_a, h0):
        self.model = model
        self.grid = grid
        self.a = a
        self.delta = delta
        self.lam_a = lam_a
        self.loglam = float(np.log(lam_a))
        self.h0 = h0

    def logh0_at(self, j, x):
        scalar = np.asarray(x).ndim == 0
        vals = np.log(self.grid.interp(j, self.h0[j], x))
        return float(vals[0]) if scalar else vals

    def tau_step(self, j, v):
        return self.model.tau(j, v)

    def f_from_parts(self, tau, logh_v, logh_parent):
        return -(self.a + self.delta) * tau + logh_v - logh_parent - self.loglam

    def f_step(self, j, k, v, parent=None):
        """f^(a) on the branch (j, k) at points v = sigma^{-(j,k)}(parent)."""
        if parent is None:
            parent = self.model.forward(j, v)
        return self.f_from_parts(self.model.tau(j, v), self.logh0_at(j, v), self.logh0_at(k, parent))

    def f_at_point(self, x, px=None):
        """One-step f^(a) at a symbolic point (pair (x_0, x_1) evaluated at zeta(x))."""
        j, k = x.symbol(0), x.symbol(1)
        if px is None:
            px = symbolic.eval_point(self.model, x)
        return float(self.f_step(j, k, np.atleast_1d(px))[0])


@dataclass
class PotentialConstants:
    """Measured constants feeding every later schedule and bound."""

    theta: float
    C_theta: float
    T0: float
    A_f: float
    C_f: float
    a0p: float
    tau_min: float
    tau_max: float
    b0: float = 1.0

    @property
    def theta_factor(self):
        return self.theta / (1.0 - self.theta)

    def small_b_C1(self):
        t = self.T0 * self.theta_factor
        return max(1.0, (1.0 + self.b0) * t * np.exp(t))

    def mu_hat_nu_C(self):
        return float(np.exp(self.T0 * self.theta_factor))

    def nearly_flat_C(self, p):
        return float(np.exp(self.T0 * (self.theta_factor + p)))

    def estimate_nu_C(self, p):
        return self.T0 * self.theta ** (1 - p) / (1.0 - self.theta)


class ThermoLab:
    """Caches one model's grid, critical exponent, RPF data, and constants."""

    def __init__(self, model, degree=16, a0p=0.05, theta=None, seed=0):
        self.model = model
        self.grid = CollocationGrid(model, degree)
        self.a0p = a0p
        self.theta = float(theta if theta is not None else model.theta)
        self.seed = seed
        self._rpf = {}
        self._potential = {}
        self._masses = {}
        self._anchors = {}
        self._constants = None

    @cached_property
    def delta(self):
        return critical_exponent(self.model, self.grid)

    def rpf(self, a):
        key = round(float(a), 14)
        if key not in self._rpf:
            self._rpf[key] = rpf_solve(self.model, self.grid, key, delta=self.delta)
        return self._rpf[key]

    def potential(self, a):
        key = round(float(a), 14)
        if key not in self._potential:
            sol = self.rpf(key)
            h0 = self.rpf(0.0).h
            self._potential[key] = NormalizedPotential(self.model, self.grid, key, self.delta, sol.lam, h0)
        return self._potential[key]

    # ---- measured constants ----

    def constants(self):
        if self._constants is None:
            self._constants = self._measure_constants()
        return self._constants

    def _measure_constants(self):
        model, grid = self.model, self.grid
        a_samples = [0.0, 0.01, -0.01, 0.04, -0.04, 0.8 * self.a0p, -0.8 * self.a0p]
        a_samples = sorted({round(a, 12) for a in a_samples if abs(a) < self.a0p})
        pots = {a: self.potential(a) for a in a_samples}

        # A_f: difference quotient of f^(a) against f^(0) over all branch nodes
        ratio = 0.0
        f_sup = 0.0
        for a in a_samples:
            for k in range(model.N):
                u = grid.nodes[k]
                for j in range(model.N):
                    if not model.admissible(j, k):
                        continue
                    v = model.inv_branch(j, u)
                    fa = pots[a].f_step(j, k, v, u)
                    f_sup = max(f_sup, np.abs(fa).max())
                    if a != 0.0:
                        f0 = pots[0.0].f_step(j, k, v, u)
                        ratio = max(ratio, np.abs(fa - f0).max() / abs(a))
        A_f = 1.05 * ratio

        # T0 and C_theta: empirical d_theta difference quotients of tau and f^(a)
        rng = np.random.default_rng(self.seed)
        pairs = lip_quotient_pairs(model, rng, depths=range(0, 9), samples_per_depth=60)
        t0 = 1.0
        c_theta = 0.0
        for m_agree, x, y in pairs:
            scale = self.theta**m_agree
            px = symbolic.eval_point(model, x)
            py = symbolic.eval_point(model, y)
            c_theta = max(c_theta, abs(px - py) / scale)
            tx = float(model.tau(x.symbol(0), px))
            ty = float(model.tau(y.symbol(0), py))
            t0 = max(t0, abs(tx - ty) / scale)
            for a in a_samples:
                fx = pots[a].f_at_point(x, px)
                fy = pots[a].f_at_point(y, py)
                t0 = max(t0, abs(fx - fy) / scale)
        T0 = 1.25 * max(t0, f_sup)
        C_f = float(np.exp(A_f * self.a0p))
        return PotentialConstants(
            theta=self.theta,
            C_theta=1.05 * c_theta,
            T0=T0,
            A_f=A_f,
            C_f=C_f,
            a0p=self.a0p,
            tau_min=model.tau_min,
            tau_max=model.tau_max,
        )

    # ---- cylinder data on depth-D words ----

    def words(self, depth):
        return all_words(self.model.T, depth)

    def anchors(self, depth):
        if depth not in self._anchors:
            model = self.model
            words = self.words(depth)
            idx = {w: i for i, w in enumerate(words)}
            out = np.empty(len(words))
            base = {}
            for k in range(model.N):
                tail = symbolic.omega_tail(model.T, k)
                base[k] = symbolic.eval_point(model, symbolic.SymbolicPoint((k,), tail.period), check=False)
            stack = [((k,), base[k]) for k in range(model.N)]
            while stack:
                w, v = stack.pop()
                if len(w) == depth:
                    out[idx[w]] = v
                    continue
                for j in range(model.N):
                    if model.admissible(j, w[0]):
                        stack.append(((j,) + w, float(model.inv_branch(j, v))))
            self._anchors[depth] = (words, out)
        return self._anchors[depth]

    def cylinder_masses(self, depth):
        """nu_U mass of every depth-D cylinder, by quadrature pulled through the word."""
        if depth not in self._masses:
            model = self.model
            pot = self.potential(0.0)
            sol = self.rpf(0.0)
            w_U = sol.nu * sol.h  # d nu_U = h0 d nu0, total mass nu0(h0) = 1
            words = self.words(depth)
            idx = {w: i for i, w in enumerate(words)}
            masses = np.empty(len(words))
            logh_nodes = [pot.logh0_at(k, self.grid.nodes[k]) for k in range(model.N)]
            stack = [((k,), self.grid.nodes[k], logh_nodes[k], np.zeros(self.grid.m)) for k in range(model.N)]
            while stack:
                w, v, logh, f = stack.pop()
                if len(w) == depth:
                    masses[idx[w]] = float(np.sum(w_U[w[-1]] * np.exp(f)))
                    continue
                for j in range(model.N):
                    if not model.admissible(j, w[0]):
                        continue
                    v2 = model.inv_branch(j, v)
                    logh2 = pot.logh0_at(j, v2)
                    f2 = f + pot.f_from_parts(model.tau(j, v2), logh2, logh)
                    stack.append(((j,) + w, v2, logh2, f2))
            self._masses[depth] = (words, masses)
        return self._masses[depth]

    def sum_exp_f(self, k, x, a):
        """Sum over admissible k-step words prepended to x of exp(f_k^(a)); equals
        the normalized operator's k-th iterate applied to the constant one."""
        pot = self.potential(a)
        model = self.model
        px = symbolic.eval_point(model, x)
        sym = np.array([x.first])
        v = np.array([px])
        logh = np.atleast_1d(pot.logh0_at(x.first, px))
        f = np.zeros(1)
        for _ in range(k):
            parts = []
            for j in range(model.N):
                mask = model.T[j, sym] == 1
                if not mask.any():
                    continue
                v2 = model.inv_branch(j, v[mask])
                logh2 = pot.logh0_at(j, v2)
                f2 = f[mask] + pot.f_from_parts(model.tau(j, v2), logh2, logh[mask])
                parts.append((np.full(v2.shape, j, dtype=np.int64), v2, logh2, f2))
            sym = np.concatenate([p[0] for p in parts])
            v = np.concatenate([p[1] for p in parts])
            logh = np.concatenate([p[2] for p in parts])
            f = np.concatenate([p[3] for p in parts])
        return float(np.exp(f).sum())


def normalize_potential(model, grid, a, a0p=0.05):
    """Spec-level convenience: the normalized potential plus measured constants."""
    lab = ThermoLab(model, degree=grid.m, a0p=a0p)
    if abs(a) >= a0p:
        raise ValueError(f"|a| = {abs(a)} must stay below a0' = {a0p}")
    return lab.potential(a), lab.constants()
