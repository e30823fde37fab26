"""Conic subproblems: solver contract, McCormick envelopes, relaxed programs.

Programs are stated as ``min 1/2 x'Px + q'x  s.t.  b - Ax in K`` with ``K`` a
product of zero, nonnegative and second-order cones, and solved with the
Clarabel interior-point method. All builders rescale channels and powers to
O(1) units internally; reported objectives are in the caller's units.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import clarabel
import numpy as np
from scipy import sparse

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200
IM_SLACK = 1e-9  # two-sided slack on the phase-fixing rows (scaled units)


# -- program container --------------------------------------------------------------

@dataclass
class ConicProgram:
    """Real conic program built row block by row block."""

    n: int
    q: np.ndarray = None
    P_diag: np.ndarray = None  # objective is separable-quadratic in every builder here
    blocks: list = field(default_factory=list)  # (kind, A rows (dense), b)
    names: list = field(default_factory=list)

    def __post_init__(self):
        if self.q is None:
            self.q = np.zeros(self.n)
        if self.P_diag is None:
            self.P_diag = np.zeros(self.n)

    def _rows(self, A, b):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if A.shape[1] != self.n or A.shape[0] != b.shape[0]:
            raise ValueError(f"row block shape {A.shape} / {b.shape} inconsistent with n={self.n}")
        return A, b

    def add_eq(self, A, b, name="eq"):
        """``A x = b``."""
        self.blocks.append(("zero",) + self._rows(A, b))
        self.names.append(name)

    def add_leq(self, A, b, name="leq"):
        """``A x <= b``."""
        A, b = self._rows(A, b)
        if A.shape[0]:
            self.blocks.append(("nonneg", A, b))
            self.names.append(name)

    def add_soc(self, t_coef, t_const, V, v, name="soc"):
        """``t_coef.x + t_const >= || V x + v ||``."""
        V = np.atleast_2d(np.asarray(V, dtype=float))
        t_coef = np.asarray(t_coef, dtype=float).reshape(1, -1)
        A = -np.vstack([t_coef, V])
        b = np.concatenate([[t_const], np.asarray(v, dtype=float)])
        self.blocks.append(("soc",) + self._rows(A, b))
        self.names.append(name)

    def assemble(self):
        kinds = {"zero": 0, "nonneg": 1, "soc": 2}
        ordered = sorted(range(len(self.blocks)), key=lambda i: kinds[self.blocks[i][0]])
        As, bs, cones = [], [], []
        nz = nn = 0
        for i in ordered:
            kind, A, b = self.blocks[i]
            As.append(A)
            bs.append(b)
            if kind == "zero":
                nz += A.shape[0]
            elif kind == "nonneg":
                nn += A.shape[0]
            else:
                cones.append(A.shape[0])
        cone_list = []
        if nz:
            cone_list.append(clarabel.ZeroConeT(nz))
        if nn:
            cone_list.append(clarabel.NonnegativeConeT(nn))
        cone_list += [clarabel.SecondOrderConeT(m) for m in cones]
        A = sparse.csc_matrix(np.vstack(As)) if As else sparse.csc_matrix((0, self.n))
        b = np.concatenate(bs) if bs else np.zeros(0)
        P = sparse.csc_matrix(sparse.diags(self.P_diag))
        return P, self.q.copy(), A, b, cone_list

    def to_text(self) -> str:
        """Plain-text dump: objective, then each row block with its cone."""
        out = [f"variables {self.n}",
               "objective.P_diag " + " ".join(f"{v:.17g}" for v in self.P_diag),
               "objective.q " + " ".join(f"{v:.17g}" for v in self.q)]
        for (kind, A, b), name in zip(self.blocks, self.names):
            out.append(f"block {name} cone={kind} rows={A.shape[0]}")
            for r in range(A.shape[0]):
                nzi = np.flatnonzero(A[r])
                terms = " ".join(f"{j}:{A[r, j]:.17g}" for j in nzi)
                out.append(f"  b={b[r]:.17g} A {terms}")
        return "\n".join(out) + "\n"


@dataclass(frozen=True)
class SolveReport:
    status: str  # optimal | infeasible | numerical-failure (| almost* before retry)
    objective: float
    x: np.ndarray | None
    tolerance: float
    iterations: int = 0


REDUCED_TOL = 5e-5  # the conic solver's acceptance level for "almost solved"


def _run(P, q, A, b, cones, tol, max_iter, equilibrate):
    s = clarabel.DefaultSettings()
    s.verbose = False
    s.tol_gap_abs = tol
    s.tol_gap_rel = tol
    s.tol_feas = tol
    s.max_iter = max_iter
    s.max_threads = 1
    s.equilibrate_enable = equilibrate
    return clarabel.DefaultSolver(P, q, A, b, cones, s).solve()


def solve_conic(prog: ConicProgram, tol: float = DEFAULT_TOL,
                max_iter: int = DEFAULT_MAX_ITER, equilibrate: bool = True) -> SolveReport:
    P, q, A, b, cones = prog.assemble()
    sol = _run(P, q, A, b, cones, tol, max_iter, equilibrate)
    st = str(sol.status).split(".")[-1]
    x = np.asarray(sol.x)
    if st == "Solved":
        return SolveReport("optimal", float(sol.obj_val), x, tol, sol.iterations)
    if st in ("PrimalInfeasible", "DualInfeasible"):
        return SolveReport("infeasible", math.inf, None, tol, sol.iterations)
    if st == "AlmostSolved":
        return SolveReport("almost", float(sol.obj_val), x, REDUCED_TOL, sol.iterations)
    if st in ("AlmostPrimalInfeasible", "AlmostDualInfeasible"):
        return SolveReport("almost-infeasible", math.inf, None, REDUCED_TOL, sol.iterations)
    return SolveReport("numerical-failure", math.nan, x, tol, sol.iterations)


def solve_with_retry(prog: ConicProgram, tol: float = DEFAULT_TOL) -> SolveReport:
    """Solve, retrying without equilibration and at 10x / 100x looser tolerance.

    A run that only reaches the solver's reduced accuracy is returned as
    ``optimal`` with ``tolerance`` set to that reduced level, so callers can
    widen their safety margins; failures are reported as-is.
    """
    attempts = [dict(tol=t, equilibrate=eq) for t in (tol, tol * 10, tol * 100) for eq in (True, False)]
    fallback = None
    for kw in attempts:
        rep = solve_conic(prog, **kw)
        if rep.status in ("optimal", "infeasible"):
            return rep
        if fallback is None and rep.status in ("almost", "almost-infeasible"):
            fallback = rep
    if fallback is not None:
        status = "optimal" if fallback.status == "almost" else "infeasible"
        return SolveReport(status, fallback.objective, fallback.x, fallback.tolerance, fallback.iterations)
    return rep


# -- McCormick envelopes --------------------------------------------------------------

@dataclass(frozen=True)
class EnvelopeRows:
    """Rows ``G @ (x, y, z) <= h`` of the envelope of ``z = x y``."""

    G: np.ndarray  # (4, 3)
    h: np.ndarray  # (4,)

    def contains(self, x, y, z, tol=0.0) -> bool:
        return bool(np.all(self.G @ np.array([x, y, z]) <= self.h + tol))

    def z_range(self, x, y) -> tuple[float, float]:
        """Feasible ``z`` interval at a fixed ``(x, y)``."""
        lo, hi = -math.inf, math.inf
        for (gx, gy, gz), hh in zip(self.G, self.h):
            bound = (hh - gx * x - gy * y) / gz
            if gz > 0:
                hi = min(hi, bound)
            else:
                lo = max(lo, bound)
        return lo, hi


def mccormick(x_bounds, y_bounds) -> EnvelopeRows:
    xl, xu = map(float, x_bounds)
    yl, yu = map(float, y_bounds)
    if xl > xu or yl > yu:
        raise ValueError("inverted bounds")
    # z >= xl y + yl x - xl yl ; z >= xu y + yu x - xu yu
    # z <= xu y + yl x - xu yl ; z <= xl y + yu x - xl yu
    G = np.array([[yl, xl, -1.0],
                  [yu, xu, -1.0],
                  [-yl, -xu, 1.0],
                  [-yu, -xl, 1.0]])
    h = np.array([xl * yl, xu * yu, -xu * yl, -xl * yu])
    return EnvelopeRows(G, h)


def _envelope_into(rows, rhs, n, ix, iy, iz, env: EnvelopeRows):
    for r in range(4):
        row = np.zeros(n)
        row[ix] += env.G[r, 0]
        row[iy] += env.G[r, 1]
        row[iz] += env.G[r, 2]
        rows.append(row)
        rhs.append(env.h[r])


# -- single-user relaxation ------------------------------------------------------------

def su_coef_scale(coef: np.ndarray) -> float:
    m = float(np.max(np.abs(coef)))
    if m == 0:
        raise ValueError("all-zero channel")
    return m


@dataclass(frozen=True)
class P1CLayout:
    N: int
    L: int

    @property
    def pairs(self):
        return [(i, j) for i in range(self.L) for j in range(i, self.L)]

    @property
    def n_vars(self):
        return self.N * self.L + self.N * len(self.pairs)

    def a_index(self, n, l):
        return n * self.L + l

    def q_index(self, n, p):
        return self.N * self.L + n * len(self.pairs) + p


def build_P1C(lower: np.ndarray, upper: np.ndarray, counts: np.ndarray,
              coef: np.ndarray) -> tuple[ConicProgram, P1CLayout, float]:
    """LP relaxation of the single-user activation problem over a box.

    Maximizes ``sum_n (1/L_n) sum_ij Re(conj c_i c_j) Q_ij`` (as a minimization
    of its negative) with ``Q_n`` tied to ``a_n a_n'`` by McCormick rows and
    ``sum_l a_{l,n} = L_n``. ``coef`` is the (N, L) per-antenna ``g~ h``
    product of the single user. Returns the program, its layout and the
    channel scale ``s``: the true objective is ``s**2`` times the LP value.
    """
    coef = np.asarray(coef, dtype=complex)
    N, L = coef.shape
    lo = np.asarray(lower, dtype=float).reshape(N, L)
    hi = np.asarray(upper, dtype=float).reshape(N, L)
    counts = np.asarray(counts, dtype=int)
    if np.any(lo < 0) or np.any(hi > 1) or np.any(lo > hi):
        raise ValueError("box must lie within [0, 1]^M")
    if np.any(counts < 1):
        raise ValueError("every waveguide needs L_s >= 1")
    s = su_coef_scale(coef)
    c = coef / s
    lay = P1CLayout(N, L)
    prog = ConicProgram(lay.n_vars)
    nv = lay.n_vars
    rows, rhs = [], []
    for n in range(N):
        gram = np.real(np.conj(c[n])[:, None] * c[n][None, :])
        for p, (i, j) in enumerate(lay.pairs):
            iq = lay.q_index(n, p)
            w = gram[i, i] if i == j else 2.0 * gram[i, j]
            prog.q[iq] = -w / counts[n]
            env = mccormick((lo[n, i], hi[n, i]), (lo[n, j], hi[n, j]))
            _envelope_into(rows, rhs, nv, lay.a_index(n, i), lay.a_index(n, j), iq, env)
        card = np.zeros(nv)
        card[[lay.a_index(n, l) for l in range(L)]] = 1.0
        prog.add_eq(card, [counts[n]], name=f"card{n}")
    prog.add_leq(np.array(rows), np.array(rhs), name="mccormick")
    eye = np.eye(nv)[: N * L]
    prog.add_leq(eye, hi.reshape(-1), name="a_upper")
    prog.add_leq(-eye, -lo.reshape(-1), name="a_lower")
    return prog, lay, s


# -- multi-user relaxation --------------------------------------------------------------

@dataclass(frozen=True)
class P2CLayout:
    N: int
    L: int
    K: int

    @property
    def M(self):
        return self.N * self.L

    def a(self, n, l):
        return n * self.L + l

    def u(self, n, k):
        return self.M + n * self.K + k

    def v(self, n, k):
        return self.M + self.N * self.K + n * self.K + k

    def zr(self, n, l, k):
        return self.M + 2 * self.N * self.K + (n * self.L + l) * self.K + k

    def zi(self, n, l, k):
        return self.M + 2 * self.N * self.K + self.M * self.K + (n * self.L + l) * self.K + k

    @property
    def n_vars(self):
        return self.M + 2 * self.N * self.K + 2 * self.M * self.K

    @property
    def n_branch(self):
        return self.M + 2 * self.N * self.K


@dataclass(frozen=True)
class MUScale:
    """Units: channel ``cs`` and power ``ps = sigma^2 gamma / cs^2``."""

    cs: float
    ps: float

    @classmethod
    def for_problem(cls, coef, noise_power, gamma):
        cs = su_coef_scale(coef)
        return cls(cs, noise_power * gamma / cs ** 2)


def build_P2C(lower: np.ndarray, upper: np.ndarray, coef: np.ndarray, gamma: float,
              noise_power: float, scale: MUScale | None = None,
              perspective: bool = False) -> tuple[ConicProgram, P2CLayout, MUScale]:
    """SOCP relaxation of the multi-user problem over a mixed box.

    Branching coordinates are ``(a, Re d, Im d)`` in physical units (d in
    sqrt-watts). ``z = a d`` is relaxed with real McCormick envelopes on its
    real and imaginary parts; the SINR constraints are second-order cones
    after fixing each user's received phase to be real. The objective is
    ``||Z||_F^2`` and is returned in ``scale.ps`` units.

    With ``perspective`` the per-antenna term ``sum_k |z_{l,n,k}|^2`` is
    replaced by its perspective ``t_{l,n} >= sum_k |z|^2 / a_{l,n}`` (a
    rotated cone). Both agree at binary ``a``; the perspective is tighter
    for fractional ``a``.
    """
    coef = np.asarray(coef, dtype=complex)  # (K, N, L)
    K, N, L = coef.shape
    lay = P2CLayout(N, L, K)
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    if lo.shape != (lay.n_branch,) or hi.shape != (lay.n_branch,):
        raise ValueError(f"box must have {lay.n_branch} coordinates")
    if np.any(lo > hi):
        raise ValueError("inverted box")
    if np.any(lo[: lay.M] < 0) or np.any(hi[: lay.M] > 1):
        raise ValueError("binary coordinates must lie within [0, 1]")
    scale = scale or MUScale.for_problem(coef, noise_power, gamma)
    c = coef / scale.cs
    dscale = math.sqrt(scale.ps)
    lo_s = lo.copy()
    hi_s = hi.copy()
    lo_s[lay.M:] /= dscale
    hi_s[lay.M:] /= dscale
    nv = lay.n_vars + (lay.M if perspective else 0)
    prog = ConicProgram(nv)
    if perspective:
        for m in range(lay.M):
            n, l = divmod(m, L)
            it = lay.n_vars + m
            prog.q[it] = 1.0
            # ||(2 z, t - a)|| <= t + a  <=>  t a >= ||z||^2
            V, v = [], []
            for k in range(K):
                for idx in (lay.zr(n, l, k), lay.zi(n, l, k)):
                    r = np.zeros(nv)
                    r[idx] = 2.0
                    V.append(r)
                    v.append(0.0)
            r = np.zeros(nv)
            r[it] = 1.0
            r[m] = -1.0
            V.append(r)
            v.append(0.0)
            tc = np.zeros(nv)
            tc[it] = 1.0
            tc[m] = 1.0
            prog.add_soc(tc, 0.0, np.array(V), np.array(v), name=f"persp{m}")
    else:
        prog.P_diag[lay.M + 2 * N * K: lay.n_vars] = 2.0  # 1/2 x'Px = sum z^2

    rows, rhs = [], []
    for n in range(N):
        for l in range(L):
            ia = lay.a(n, l)
            for k in range(K):
                for idx_d, idx_z in ((lay.u(n, k), lay.zr(n, l, k)), (lay.v(n, k), lay.zi(n, l, k))):
                    env = mccormick((lo_s[ia], hi_s[ia]), (lo_s[idx_d], hi_s[idx_d]))
                    _envelope_into(rows, rhs, nv, ia, idx_d, idx_z, env)
    eye = np.eye(nv)[: lay.n_branch]
    rows.extend(eye)
    rhs.extend(hi_s)
    rows.extend(-eye)
    rhs.extend(-lo_s)
    # each waveguide keeps at least one antenna
    for n in range(N):
        r = np.zeros(nv)
        r[[lay.a(n, l) for l in range(L)]] = -1.0
        rows.append(r)
        rhs.append(-1.0)

    def received(k, j):
        """Real rows of Re and Im of sum_{n,l} c[k,n,l] z[n,l,j]."""
        re, im = np.zeros(nv), np.zeros(nv)
        for n in range(N):
            for l in range(L):
                cr, ci = c[k, n, l].real, c[k, n, l].imag
                re[lay.zr(n, l, j)] += cr
                re[lay.zi(n, l, j)] -= ci
                im[lay.zr(n, l, j)] += ci
                im[lay.zi(n, l, j)] += cr
        return re, im

    noise_scaled = noise_power / (scale.cs ** 2 * scale.ps)
    sg = math.sqrt(gamma)
    for k in range(K):
        re_kk, im_kk = received(k, k)
        rows.append(im_kk)
        rhs.append(IM_SLACK)
        rows.append(-im_kk)
        rhs.append(IM_SLACK)
        V, v = [], []
        for j in range(K):
            if j == k:
                continue
            re, im = received(k, j)
            V += [sg * re, sg * im]
            v += [0.0, 0.0]
        V.append(np.zeros(nv))
        v.append(sg * math.sqrt(noise_scaled))
        prog.add_soc(re_kk, 0.0, np.array(V), np.array(v), name=f"sinr{k}")
    prog.add_leq(np.array(rows), np.array(rhs), name="box+mccormick")
    return prog, lay, scale


def build_fixed_activation(heff: np.ndarray, gamma: float, noise_power: float):
    """Min-power SOCP for fixed effective channels ``heff`` (K, N).

    Variables are ``(Re W, Im W)`` with ``W`` (N, K) in units of
    ``sqrt(ps)`` where ``ps = sigma^2 gamma / cs^2``.
    """
    heff = np.asarray(heff, dtype=complex)
    K, N = heff.shape
    cs = su_coef_scale(heff)
    ps = noise_power * gamma / cs ** 2
    h = heff / cs
    nv = 2 * N * K

    def ir(n, k):
        return n * K + k

    def ii(n, k):
        return N * K + n * K + k

    prog = ConicProgram(nv)
    prog.P_diag[:] = 2.0
    sg = math.sqrt(gamma)

    def received(k, j):
        re, im = np.zeros(nv), np.zeros(nv)
        for n in range(N):
            hr, hi_ = h[k, n].real, h[k, n].imag
            re[ir(n, j)] += hr
            re[ii(n, j)] -= hi_
            im[ir(n, j)] += hi_
            im[ii(n, j)] += hr
        return re, im

    for k in range(K):
        re_kk, im_kk = received(k, k)
        prog.add_eq(im_kk, [0.0], name=f"phase{k}")
        V, v = [], []
        for j in range(K):
            if j != k:
                re, im = received(k, j)
                V += [sg * re, sg * im]
                v += [0.0, 0.0]
        V.append(np.zeros(nv))
        v.append(sg * math.sqrt(1.0 / gamma))
        prog.add_soc(re_kk, 0.0, np.array(V), np.array(v), name=f"sinr{k}")

    def unpack(x):
        x = np.asarray(x)
        W = (x[: N * K] + 1j * x[N * K:]).reshape(N, K)
        return W * math.sqrt(ps)

    return prog, ps, unpack


def socp_fixed_activation(heff: np.ndarray, gamma: float, noise_power: float,
                          tol: float = 1e-10):
    """Solve the fixed-activation power minimization with the conic solver.

    Returns ``(status, power_watts, W)``.
    """
    heff = np.asarray(heff, dtype=complex)
    if not np.any(heff):
        return "infeasible", math.inf, None
    prog, ps, unpack = build_fixed_activation(heff, gamma, noise_power)
    rep = solve_with_retry(prog, tol)
    if rep.status != "optimal":
        return rep.status, math.inf, None
    W = unpack(rep.x)
    return "optimal", float(np.sum(np.abs(W) ** 2)), W
