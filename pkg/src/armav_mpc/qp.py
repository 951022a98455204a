"""Dense convex QP solver for the force-planning problem.

    minimize    1/2 y'Hy + f'y
    subject to  lower <= A_ineq y <= upper
                A_eq y = b_eq

Equalities are eliminated by null-space substitution; the reduced problem is
solved with a primal active-set method started from a feasible point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.optimize import linprog

from .errors import DimensionMismatch, Infeasible

FEAS_TOL = 1e-6
OPT_TOL = 1e-6
MAX_ITER = 200
PSD_REG = 1e-9


@dataclass
class QpProblem:
    h: np.ndarray
    f: np.ndarray
    a_ineq: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.f = np.asarray(self.f, dtype=float).reshape(-1)
        n = self.f.size
        if self.h.shape != (n, n):
            raise DimensionMismatch(f"H is {self.h.shape}, f has {n} entries")
        if np.max(np.abs(self.h - self.h.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(self.h))):
            raise ValueError("H must be symmetric")
        if self.a_ineq is None:
            self.a_ineq = np.zeros((0, n))
        self.a_ineq = np.asarray(self.a_ineq, dtype=float).reshape(-1, n)
        p = self.a_ineq.shape[0]
        self.lower = np.full(p, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float).reshape(p)
        self.upper = np.full(p, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).reshape(p)
        if self.a_eq is None:
            self.a_eq = np.zeros((0, n))
        self.a_eq = np.asarray(self.a_eq, dtype=float).reshape(-1, n)
        q = self.a_eq.shape[0]
        self.b_eq = np.zeros(q) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).reshape(q)

    @property
    def n(self) -> int:
        return self.f.size

    def objective(self, y) -> float:
        y = np.asarray(y, dtype=float)
        return float(0.5 * y @ self.h @ y + self.f @ y)

    def constraint_violation(self, y) -> float:
        y = np.asarray(y, dtype=float)
        viol = 0.0
        if self.a_ineq.shape[0]:
            ay = self.a_ineq @ y
            viol = max(viol, float(np.max(np.maximum(ay - self.upper, self.lower - ay), initial=0.0)))
        if self.a_eq.shape[0]:
            viol = max(viol, float(np.max(np.abs(self.a_eq @ y - self.b_eq))))
        return viol

    def to_dict(self) -> dict:
        def enc(a):
            return np.where(np.isfinite(a), a, np.sign(a) * 1e300).tolist()

        return {
            "h": self.h.tolist(),
            "f": self.f.tolist(),
            "a_ineq": self.a_ineq.tolist(),
            "lower": enc(self.lower),
            "upper": enc(self.upper),
            "a_eq": self.a_eq.tolist(),
            "b_eq": self.b_eq.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QpProblem":
        def dec(a):
            a = np.asarray(a, dtype=float)
            return np.where(np.abs(a) >= 1e300, np.sign(a) * np.inf, a)

        n = len(d["f"])
        return cls(
            np.asarray(d["h"]).reshape(n, n),
            d["f"],
            np.asarray(d["a_ineq"], dtype=float).reshape(-1, n),
            dec(d["lower"]),
            dec(d["upper"]),
            np.asarray(d["a_eq"], dtype=float).reshape(-1, n),
            d["b_eq"],
        )


def dump_problem(problem: QpProblem, path) -> None:
    with open(path, "w") as fh:
        json.dump(problem.to_dict(), fh)


def load_problem(path) -> QpProblem:
    with open(path) as fh:
        return QpProblem.from_dict(json.load(fh))


@dataclass
class QpSolution:
    y: np.ndarray
    status: str  # "solved" | "max_iter" | "infeasible"
    kkt_residual: float
    iterations: int
    objective: float = np.nan
    dual_lower: np.ndarray | None = field(default=None, repr=False)
    dual_upper: np.ndarray | None = field(default=None, repr=False)
    dual_eq: np.ndarray | None = field(default=None, repr=False)
    active_set: tuple = ()

    @property
    def solved(self) -> bool:
        return self.status == "solved"


def _eliminate_equalities(a_eq, b_eq, n):
    """Return (y_p, Z, free) with y = y_p + Z w spanning {A_eq y = b_eq}.

    ``free`` holds the free coordinate indices when every equality pins a
    single coordinate (then Z is a column selection), otherwise None.
    """
    q = a_eq.shape[0]
    if q == 0:
        return np.zeros(n), None, np.arange(n)
    nnz = np.count_nonzero(a_eq, axis=1)
    if np.all(nnz == 1):
        cols = np.argmax(a_eq != 0, axis=1)
        vals = b_eq / a_eq[np.arange(q), cols]
        y_p = np.zeros(n)
        y_p[cols] = vals
        if np.max(np.abs(y_p[cols] - vals)) > FEAS_TOL:
            raise Infeasible("conflicting equalities on a pinned coordinate")
        pinned = np.zeros(n, dtype=bool)
        pinned[cols] = True
        return y_p, None, np.flatnonzero(~pinned)
    u, s, vt = np.linalg.svd(a_eq)
    tol = max(a_eq.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    y_p = vt[:rank].T @ ((u[:, :rank].T @ b_eq) / s[:rank])
    if np.max(np.abs(a_eq @ y_p - b_eq)) > FEAS_TOL * max(1.0, np.max(np.abs(b_eq))):
        raise Infeasible("equality constraints are inconsistent")
    return y_p, vt[rank:].T, None


class QpSolver:
    """Active-set QP solver with warm starting across control ticks.

    One instance per controller; keeps the previous working set so the next
    solve can start from it.
    """

    def __init__(self, max_iter: int = MAX_ITER, feas_tol: float = FEAS_TOL, opt_tol: float = OPT_TOL, dump_dir=None):
        self.max_iter = max_iter
        self.feas_tol = feas_tol
        self.opt_tol = opt_tol
        self.dump_dir = dump_dir
        self._n_calls = 0
        self._last_active: tuple = ()

    def solve(self, problem: QpProblem, warm_start=None, warm_active=None) -> QpSolution:
        self._n_calls += 1
        if self.dump_dir is not None:
            dump_problem(problem, f"{self.dump_dir}/qp_{self._n_calls:06d}.json")
        if warm_active is None and warm_start is not None:
            warm_active = self._last_active
        sol = self._solve(problem, warm_start, warm_active or ())
        self._last_active = sol.active_set
        return sol

    # -- internals ---------------------------------------------------------

    def _solve(self, prob: QpProblem, warm_start, warm_active) -> QpSolution:
        n = prob.n
        y_p, Z, free = _eliminate_equalities(prob.a_eq, prob.b_eq, n)
        if Z is None:
            hr = prob.h[np.ix_(free, free)]
            fr = prob.h[free] @ y_p + prob.f[free]
            ar = prob.a_ineq[:, free]
        else:
            hr = Z.T @ prob.h @ Z
            fr = Z.T @ (prob.h @ y_p + prob.f)
            ar = prob.a_ineq @ Z
        k = hr.shape[0]
        ay_p = prob.a_ineq @ y_p

        # one-sided rows G w <= g; row i < p is an upper bound of row i, i >= p a lower bound
        p = prob.a_ineq.shape[0]
        up = np.isfinite(prob.upper)
        lo = np.isfinite(prob.lower)
        g_rows = np.vstack([ar[up], -ar[lo]])
        g_rhs = np.concatenate([prob.upper[up] - ay_p[up], -(prob.lower[lo] - ay_p[lo])])
        origin = np.concatenate([np.flatnonzero(up), p + np.flatnonzero(lo)])

        # rows with no dependence on the reduced variables are either satisfied or infeasible
        live = np.any(np.abs(g_rows) > 0.0, axis=1) if g_rows.size else np.zeros(0, dtype=bool)
        if np.any(g_rhs[~live] < -self.feas_tol):
            raise Infeasible("a constant constraint row is violated")
        g_rows, g_rhs, origin = g_rows[live], g_rhs[live], origin[live]

        if k == 0:
            w = np.zeros(0)
            return self._finish(prob, y_p, Z, free, w, hr, fr, g_rows, g_rhs, origin, [], np.zeros(0), 0, "solved")

        hr = 0.5 * (hr + hr.T)
        try:
            linalg.cho_factor(hr, check_finite=False)
        except linalg.LinAlgError:
            hr = hr + PSD_REG * max(np.trace(hr), 1.0) / k * np.eye(k)

        w = self._initial_point(prob, warm_start, y_p, Z, free, g_rows, g_rhs, k)
        slack = g_rhs - g_rows @ w
        origin_pos = {int(o): i for i, o in enumerate(origin)}
        working = []
        for o in warm_active:
            i = origin_pos.get(int(o))
            if i is not None and abs(slack[i]) <= self.feas_tol and len(working) < k:
                working.append(i)

        status = "max_iter"
        lam = np.zeros(0)
        it = 0
        dropped_warm = False
        while it < self.max_iter:
            it += 1
            grad = hr @ w + fr
            nw = len(working)
            gw = g_rows[working]
            kkt = np.zeros((k + nw, k + nw))
            kkt[:k, :k] = hr
            kkt[:k, k:] = gw.T
            kkt[k:, :k] = gw
            rhs = np.concatenate([-grad, np.zeros(nw)])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                if working and not dropped_warm:
                    working, dropped_warm = [], True
                    continue
                sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
            step, lam = sol[:k], sol[k:]
            scale = 1.0 + np.max(np.abs(w), initial=0.0)
            if np.max(np.abs(step), initial=0.0) <= 1e-12 * scale:
                if nw == 0 or np.min(lam) >= -1e-12 * (1.0 + np.max(np.abs(lam))):
                    status = "solved"
                    break
                working.pop(int(np.argmin(lam)))
                continue
            gp = g_rows @ step
            alpha, block = 1.0, -1
            cand = gp > 1e-14 * (1.0 + np.abs(g_rows).sum(axis=1) * np.max(np.abs(step)))
            if working:
                cand[working] = False
            if np.any(cand):
                idx = np.flatnonzero(cand)
                ratios = (g_rhs[idx] - g_rows[idx] @ w) / gp[idx]
                j = int(np.argmin(ratios))
                if ratios[j] < 1.0:
                    alpha, block = max(float(ratios[j]), 0.0), int(idx[j])
            w = w + alpha * step
            if block >= 0:
                working.append(block)

        if status != "solved":
            lam = self._multipliers(hr, fr, w, g_rows, working)
        return self._finish(prob, y_p, Z, free, w, hr, fr, g_rows, g_rhs, origin, working, lam, it, status)

    def _initial_point(self, prob, warm_start, y_p, Z, free, g_rows, g_rhs, k):
        tol = self.feas_tol * 1e-3
        candidates = []
        if warm_start is not None:
            ws = np.asarray(warm_start, dtype=float).reshape(prob.n)
            candidates.append(ws[free] if Z is None else Z.T @ (ws - y_p))
        candidates.append(np.zeros(k))
        for w in candidates:
            if g_rows.shape[0] == 0 or np.all(g_rows @ w <= g_rhs + tol):
                return w
        res = linprog(
            np.zeros(k), A_ub=g_rows, b_ub=g_rhs, bounds=[(None, None)] * k, method="highs"
        )
        if res.status == 2:
            raise Infeasible("inequality constraints admit no feasible point")
        if res.status != 0:
            raise Infeasible(f"feasibility phase failed: {res.message}")
        return res.x

    @staticmethod
    def _multipliers(hr, fr, w, g_rows, working):
        if not working:
            return np.zeros(0)
        gw = g_rows[working]
        return -np.linalg.lstsq(gw.T, hr @ w + fr, rcond=None)[0]

    def _finish(self, prob, y_p, Z, free, w, hr, fr, g_rows, g_rhs, origin, working, lam, it, status):
        n = prob.n
        if Z is None:
            y = y_p.copy()
            y[free] = w
        else:
            y = y_p + Z @ w
        p = prob.a_ineq.shape[0]
        dual_upper = np.zeros(p)
        dual_lower = np.zeros(p)
        for i, mult in zip(working, lam):
            o = int(origin[i])
            if o < p:
                dual_upper[o] += mult
            else:
                dual_lower[o - p] += mult
        r = prob.h @ y + prob.f + prob.a_ineq.T @ (dual_upper - dual_lower)
        if prob.a_eq.shape[0]:
            dual_eq = -np.linalg.lstsq(prob.a_eq.T, r, rcond=None)[0]
            r = r + prob.a_eq.T @ dual_eq
        else:
            dual_eq = np.zeros(0)
        stationarity = float(np.max(np.abs(r), initial=0.0))
        ay = prob.a_ineq @ y
        with np.errstate(invalid="ignore"):
            comp_u = np.where(np.isfinite(prob.upper), dual_upper * (prob.upper - ay), 0.0)
            comp_l = np.where(np.isfinite(prob.lower), dual_lower * (ay - prob.lower), 0.0)
        complementarity = float(np.max(np.abs(np.concatenate([comp_u, comp_l])), initial=0.0))
        kkt = max(stationarity, complementarity, prob.constraint_violation(y))
        return QpSolution(
            y=y,
            status=status,
            kkt_residual=kkt,
            iterations=it,
            objective=prob.objective(y),
            dual_lower=dual_lower,
            dual_upper=dual_upper,
            dual_eq=dual_eq,
            active_set=tuple(int(origin[i]) for i in working),
        )


def solve(problem: QpProblem, warm_start=None) -> QpSolution:
    return QpSolver().solve(problem, warm_start)


def build_friction_constraints(mu: float, stance_mask, fz_bounds: tuple[float, float]):
    """Per-step force constraints on a 12-vector of foot forces.

    Stance feet get the four friction-pyramid faces (|fx|, |fy| <= mu fz) and
    fz_min <= fz <= fz_max. Swing feet are pinned to zero force through
    equality rows. Returns (a_ineq, lower, upper, a_eq, b_eq).
    """
    fz_min, fz_max = fz_bounds
    if not mu > 0:
        raise ValueError("friction coefficient must be positive")
    if not fz_max > fz_min >= 0:
        raise ValueError("need fz_max > fz_min >= 0")
    rows, lower, upper, eq_rows = [], [], [], []
    for leg, stance in enumerate(np.asarray(stance_mask, dtype=bool).reshape(4)):
        ix, iy, iz = 3 * leg, 3 * leg + 1, 3 * leg + 2
        if stance:
            for axis in (ix, iy):
                for sign in (1.0, -1.0):
                    row = np.zeros(12)
                    row[axis] = sign
                    row[iz] = -mu
                    rows.append(row)
                    lower.append(-np.inf)
                    upper.append(0.0)
            row = np.zeros(12)
            row[iz] = 1.0
            rows.append(row)
            lower.append(fz_min)
            upper.append(fz_max)
        else:
            for axis in (ix, iy, iz):
                row = np.zeros(12)
                row[axis] = 1.0
                eq_rows.append(row)
    a_ineq = np.array(rows).reshape(-1, 12)
    a_eq = np.array(eq_rows).reshape(-1, 12)
    return a_ineq, np.array(lower), np.array(upper), a_eq, np.zeros(a_eq.shape[0])
