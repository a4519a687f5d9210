"""
Operator-splitting solver for small dense QPs with box and disc constraints.

Solves::

    minimize    0.5 x'Px + h'x
    subject to  lower <= (Ax)_i <= upper        for box rows
                ||((Ax)_i, (Ax)_j)|| <= r       for each disc pair (i, j)

with the ADMM splitting used by OSQP: one cached linear solve per
iteration, then a projection onto the constraint set, which here is a
product of intervals and 2-D discs (both projected in closed form).
Problem data is Ruiz-equilibrated first; disc rows keep a common scale so
that the scaled set is still a disc.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse

log = logging.getLogger(__name__)

RHO_MIN, RHO_MAX = 1e-6, 1e6
RHO_EQ_FACTOR = 1e3


@dataclass
class SolverSettings:
    """Tolerances and iteration limits of the inner solver."""

    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 5000
    warm_start: bool = True
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    scaling_iters: int = 15
    check_interval: int = 5
    adaptive_rho_interval: int = 25
    eps_infeas: float = 1e-7
    # active-set refinement of the final iterate: "never", "on_cap" (only when
    # max_iter is reached) or "always" (also after normal convergence, so the
    # returned point satisfies the active constraints to round-off)
    polish: str = "always"
    polish_interval: int = 1000     # "always" also tries a polish this often

    def __post_init__(self):
        if self.eps_abs <= 0 or self.eps_rel < 0:
            raise ValueError("solver tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.polish not in ("never", "on_cap", "always"):
            raise ValueError(f"polish must be 'never', 'on_cap' or 'always', got {self.polish!r}")


@dataclass
class QPResult:
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    status: str
    iterations: int
    prim_res: float
    dual_res: float
    objective: float
    rho: float = 0.1
    polished: bool = False
    prim_res_history: list = field(default_factory=list, repr=False)
    dual_res_history: list = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.status == "solved"


class ConeQP:
    """Factorisation-caching solver for one fixed ``(P, A)`` pair.

    The linear term, the box bounds and the disc radii may change between
    calls to :meth:`solve`; the equilibration and the KKT factorisation are
    reused, which makes repeated warm-started solves cheap.

    Parameters
    ----------
    P : (n, n) array
        Positive semidefinite quadratic term.
    A : (m, n) array
        Constraint matrix.
    discs : (k, 2) int array, optional
        Row pairs of ``A`` constrained to lie in a disc. Box bounds on these
        rows are ignored.
    h_ref : (n,) array, optional
        Typical linear term, used only to pick the cost scaling.
    """

    def __init__(self, P, A, discs=None, h_ref=None, settings: SolverSettings | None = None):
        self.settings = settings or SolverSettings()
        P = np.asarray(P, dtype=float)
        A = np.asarray(A, dtype=float)
        self.n = P.shape[0]
        self.m = A.shape[0]
        self.P, self.A = P, A
        self.discs = np.zeros((0, 2), dtype=int) if discs is None else np.asarray(discs, dtype=int)
        self.box_mask = np.ones(self.m, dtype=bool)
        self.box_mask[self.discs.ravel()] = False
        self._di, self._dj = self.discs[:, 0].copy(), self.discs[:, 1].copy()
        self._equilibrate(h_ref)
        self._kinv_cache = {}
        self._kinv = None

    def _equilibrate(self, h_ref):
        P, A = self.P, self.A
        n, m = self.n, self.m
        D = np.ones(n)
        E = np.ones(m)
        Pb, Ab = P.copy(), A.copy()
        for _ in range(self.settings.scaling_iters):
            cx = np.maximum(np.abs(Pb).max(axis=0, initial=0.0), np.abs(Ab).max(axis=0, initial=0.0))
            cz = np.abs(Ab).max(axis=1, initial=0.0)
            dx = 1.0 / np.sqrt(np.clip(np.where(cx > 0, cx, 1.0), 1e-4, 1e4))
            dz = 1.0 / np.sqrt(np.clip(np.where(cz > 0, cz, 1.0), 1e-4, 1e4))
            if len(self.discs):
                common = np.sqrt(dz[self.discs[:, 0]] * dz[self.discs[:, 1]])
                dz[self.discs[:, 0]] = common
                dz[self.discs[:, 1]] = common
            D *= dx
            E *= dz
            Pb = dx[:, None] * Pb * dx[None, :]
            Ab = dz[:, None] * Ab * dx[None, :]
        cost = np.abs(Pb).max(axis=0, initial=0.0).mean() if n else 1.0
        if h_ref is not None:
            cost = max(cost, np.abs(D * np.asarray(h_ref, dtype=float)).max(initial=0.0))
        cost = 1.0 if cost <= 0 else cost
        self.cs = 1.0 / np.clip(cost, 1e-4, 1e4)
        self.D, self.E = D, E
        self.Pb = self.cs * Pb
        self.Ab = Ab
        self.AbT = np.ascontiguousarray(Ab.T)
        # the constraint rows are mostly unit rows; sparse products are far
        # cheaper than streaming the dense matrix every iteration
        self._As = sparse.csr_matrix(Ab)
        self._AsT = sparse.csr_matrix(self.AbT)

    def _rho_vector(self, rho, lo, hi):
        r = np.full(self.m, rho)
        box = self.box_mask
        free = box & np.isinf(lo) & np.isinf(hi)
        eq = box & (hi - lo < 1e-12)
        r[free] = RHO_MIN
        r[eq] = RHO_EQ_FACTOR * rho
        return r

    def _diagonal_tail(self, K):
        """Start of the largest trailing block of ``K`` that is diagonal."""
        off = K != 0
        np.fill_diagonal(off, False)
        n1 = self.n
        while n1 > 0 and not off[n1 - 1, n1 - 1:].any():
            n1 -= 1
        return n1

    def _factor(self, rho_vec):
        key = rho_vec.tobytes()
        kinv = self._kinv_cache.get(key)
        if kinv is None:
            s = self.settings
            Kmat = self.Pb + s.sigma * np.eye(self.n) + self.AbT @ (rho_vec[:, None] * self.Ab)
            n1 = self._diagonal_tail(Kmat)
            if n1 < self.n:
                # eliminate the diagonal tail: only an n1 x n1 Schur complement is dense
                d = np.diag(Kmat)[n1:].copy()
                K12 = Kmat[:n1, n1:]
                Smat = Kmat[:n1, :n1] - (K12 / d) @ K12.T
                cf = linalg.cho_factor(Smat, lower=False, check_finite=False)
                kinv = (n1, linalg.cho_solve(cf, np.eye(n1), check_finite=False),
                        np.ascontiguousarray(K12), np.ascontiguousarray(K12.T), d)
            else:
                cf = linalg.cho_factor(Kmat, lower=False, check_finite=False)
                kinv = (n1, linalg.cho_solve(cf, np.eye(self.n), check_finite=False), None, None, None)
            if len(self._kinv_cache) >= 16:
                self._kinv_cache.pop(next(iter(self._kinv_cache)))
            self._kinv_cache[key] = kinv
        self._kinv = kinv

    def _ksolve(self, r):
        n1, Sinv, K12, K21, d = self._kinv
        if K12 is None:
            return Sinv @ r
        t = r[n1:] / d
        x1 = Sinv @ (r[:n1] - K12 @ t)
        return np.concatenate([x1, t - (K21 @ x1) / d])

    def _project(self, v, lo, hi, radius):
        out = np.minimum(np.maximum(v, lo), hi)
        if len(self.discs):
            i, j = self._di, self._dj
            a, b = v[i], v[j]
            nrm = np.sqrt(a * a + b * b)
            shrink = np.minimum(1.0, radius / np.maximum(nrm, 1e-300))
            out[i] = a * shrink
            out[j] = b * shrink
        return out

    def objective(self, x, h):
        return float(0.5 * x @ self.P @ x + h @ x)

    def solve(self, h, lower, upper, radius=None, warm: QPResult | None = None,
              record: bool = False) -> QPResult:
        """Solve for a given linear term, bounds and disc radii."""
        s = self.settings
        h = np.asarray(h, dtype=float)
        D, E, cs = self.D, self.E, self.cs
        lo = E * np.asarray(lower, dtype=float)
        hi = E * np.asarray(upper, dtype=float)
        lo[~self.box_mask] = -np.inf
        hi[~self.box_mask] = np.inf
        if len(self.discs):
            rad = np.asarray(radius, dtype=float) * E[self.discs[:, 0]]
        else:
            rad = np.zeros(0)
        hb = cs * D * h
        Pb, Ab, AbT = self.Pb, self._As, self._AsT
        rho = s.rho

        if warm is not None and s.warm_start:
            rho = warm.rho
            x = warm.x / D
            z = warm.z * E
            y = warm.y * E / cs
            z = self._project(z, lo, hi, rad)
        else:
            x = np.zeros(self.n)
            z = self._project(np.zeros(self.m), lo, hi, rad)
            y = np.zeros(self.m)

        rho_vec = self._rho_vector(rho, lo, hi)
        self._factor(rho_vec)

        Dinv, Einv = 1.0 / D, 1.0 / E
        status = "max_iter"
        prim = dual = np.inf
        hist_p, hist_d = [], []
        it = 0
        for it in range(1, s.max_iter + 1):
            y_prev = y
            rhs = s.sigma * x - hb + AbT @ (rho_vec * z - y)
            xt = self._ksolve(rhs)
            zt = Ab @ xt
            x = s.alpha * xt + (1 - s.alpha) * x
            zr = s.alpha * zt + (1 - s.alpha) * z
            z = self._project(zr + y / rho_vec, lo, hi, rad)
            y = y + rho_vec * (zr - z)

            check = it % s.check_interval == 0 or it == s.max_iter
            adapt = it % s.adaptive_rho_interval == 0
            if not (check or adapt):
                continue

            Ax = Ab @ x
            Px = Pb @ x
            Aty = AbT @ y
            prim = np.abs(Einv * (Ax - z)).max(initial=0.0)
            dual = np.abs(Dinv * (Px + hb + Aty)).max(initial=0.0) / cs
            if record:
                hist_p.append(prim)
                hist_d.append(dual)
            eps_p = s.eps_abs + s.eps_rel * max(np.abs(Einv * Ax).max(initial=0.0),
                                                 np.abs(Einv * z).max(initial=0.0))
            eps_d = s.eps_abs + s.eps_rel / cs * max(np.abs(Dinv * Px).max(initial=0.0),
                                                     np.abs(Dinv * Aty).max(initial=0.0),
                                                     np.abs(Dinv * hb).max(initial=0.0))
            if prim <= eps_p and dual <= eps_d:
                status = "solved"
                break
            if self._infeasible(y - y_prev, lo, hi, rad):
                status = "primal_infeasible"
                break
            if s.polish == "always" and it % s.polish_interval == 0:
                early = self._polish(x, z, y, hb, lo, hi, rad)
                if early is not None:
                    x, z, y, prim, dual = early
                    status = "polished_early"
                    break

            if adapt:
                sp = np.abs(Ax - z).max(initial=0.0) / max(np.abs(Ax).max(initial=0.0),
                                                           np.abs(z).max(initial=0.0), 1e-30)
                sd = np.abs(Px + hb + Aty).max(initial=0.0) / max(np.abs(Px).max(initial=0.0),
                                                                  np.abs(Aty).max(initial=0.0),
                                                                  np.abs(hb).max(initial=0.0), 1e-30)
                new_rho = float(np.clip(rho * np.sqrt(sp / max(sd, 1e-30)), RHO_MIN, RHO_MAX))
                if new_rho > 5 * rho or new_rho < 0.2 * rho:
                    rho = new_rho
                    rho_vec = self._rho_vector(rho, lo, hi)
                    self._factor(rho_vec)

        polished = status == "polished_early"
        if polished:
            status = "solved"
        elif (status == "max_iter" and s.polish != "never") or (status == "solved" and s.polish == "always"):
            out = self._polish(x, z, y, hb, lo, hi, rad)
            if out is not None:
                x, z, y, prim, dual = out
                status, polished = "solved", True

        x_out = D * x
        z_out = Einv * z
        y_out = cs * E * y
        return QPResult(
            x=x_out, z=z_out, y=y_out, status=status, iterations=it,
            prim_res=float(prim), dual_res=float(dual),
            objective=self.objective(x_out, h), rho=rho, polished=polished,
            prim_res_history=hist_p, dual_res_history=hist_d,
        )

    def _polish(self, x, z, y, hb, lo, hi, rad, rounds=12):
        """Refine an ADMM iterate by solving a KKT system on a guessed active set.

        The initial guess comes from ``(z, y)``; active discs are replaced by
        their tangent line along the dual direction. A few primal-dual
        active-set corrections follow (add violated rows, drop rows whose
        multiplier has the wrong sign, re-aim disc tangents). Works in the
        equilibrated space and returns None unless the final point is primal
        feasible and stationary to ``eps_abs``.
        """
        s = self.settings
        Ab, Pb = self.Ab, self.Pb
        n = self.n
        box = self.box_mask
        eq = box & (hi - lo < 1e-12)
        # box state: 0 inactive, -1 at lower, +1 at upper (equalities use -1)
        state = np.zeros(self.m, dtype=int)
        state[eq] = -1
        state[box & ~eq & (z - lo < -y)] = -1
        state[box & ~eq & (state == 0) & (hi - z < y)] = 1
        normals = {}
        for k, (i, j) in enumerate(self.discs):
            yk = np.array([y[i], y[j]])
            ny = np.linalg.norm(yk)
            if rad[k] <= 1e-12 or (ny > 0 and rad[k] - np.hypot(z[i], z[j]) < ny):
                normals[k] = yk / ny if ny > 0 else np.array([1.0, 0.0])
        tol = s.eps_abs * np.min(self.E)

        for _ in range(rounds):
            box_rows = np.flatnonzero(state != 0)
            disc_keys = sorted(normals)
            rows = [Ab[box_rows]]
            rhs = [np.where(state[box_rows] < 0, lo[box_rows], hi[box_rows])]
            for k in disc_keys:
                i, j = self.discs[k]
                if rad[k] <= 1e-12:
                    rows.append(Ab[[i, j]])
                    rhs.append(np.zeros(2))
                else:
                    nv = normals[k]
                    rows.append((nv[0] * Ab[i] + nv[1] * Ab[j])[None, :])
                    rhs.append(np.array([rad[k]]))
            C = np.vstack(rows)
            d = np.concatenate(rhs)
            na = len(d)
            K0 = np.block([[Pb, C.T], [C, np.zeros((na, na))]])
            Kr = K0 + np.diag(np.concatenate([np.full(n, 1e-9), np.full(na, -1e-9)]))
            b = np.concatenate([-hb, d])
            try:
                lu = linalg.lu_factor(Kr, check_finite=False)
            except (linalg.LinAlgError, ValueError):
                return None
            sol = linalg.lu_solve(lu, b, check_finite=False)
            for _ in range(3):
                sol = sol + linalg.lu_solve(lu, b - K0 @ sol, check_finite=False)
            if not np.all(np.isfinite(sol)):
                return None
            xp, mult = sol[:n], sol[n:]

            yp = np.zeros(self.m)
            yp[box_rows] = mult[:len(box_rows)]
            pos = len(box_rows)
            disc_mult = {}
            for k in disc_keys:
                i, j = self.discs[k]
                if rad[k] <= 1e-12:
                    yp[i], yp[j] = mult[pos], mult[pos + 1]
                    pos += 2
                else:
                    disc_mult[k] = mult[pos]
                    yp[i], yp[j] = mult[pos] * normals[k]
                    pos += 1

            Ax = Ab @ xp
            changed = False
            sign_tol = 1e-9 * max(1.0, np.abs(mult).max(initial=0.0))
            free = ~eq
            drop = free & (((state < 0) & (yp > sign_tol)) | ((state > 0) & (yp < -sign_tol)))
            if drop.any():
                state[drop] = 0
                changed = True
            for k, mu in disc_mult.items():
                if mu < -sign_tol:
                    del normals[k]
                    changed = True
            if not changed:
                under = box & (state == 0) & (Ax < lo - tol)
                over = box & (state == 0) & (Ax > hi + tol)
                state[under] = -1
                state[over] = 1
                changed = bool(under.any() or over.any())
                for k, (i, j) in enumerate(self.discs):
                    if rad[k] <= 1e-12:
                        continue
                    nrm = np.hypot(Ax[i], Ax[j])
                    if nrm > rad[k] + tol:
                        normals[k] = np.array([Ax[i], Ax[j]]) / nrm
                        changed = True
            if not changed:
                break
        else:
            log.debug("polish gave up after %d active-set rounds", rounds)
            return None

        zp = self._project(Ax, lo, hi, rad)
        Einv = 1.0 / self.E
        prim = np.abs(Einv * (Ax - zp)).max(initial=0.0)
        dual = np.abs((Pb @ xp + hb + Ab.T @ yp) / self.D).max(initial=0.0) / self.cs
        if prim > s.eps_abs or dual > s.eps_abs + s.eps_rel * np.abs(hb / self.D).max(initial=0.0) / self.cs:
            log.debug("polish rejected: residuals %.2e / %.2e", prim, dual)
            return None
        return xp, zp, yp, prim, dual

    def _infeasible(self, dy, lo, hi, rad):
        eps = self.settings.eps_infeas
        scale = np.abs(self.E * dy).max(initial=0.0)
        if scale < 1e-12:
            return False
        if np.abs(self.D**-1 * (self.AbT @ dy)).max(initial=0.0) > eps * scale:
            return False
        box = self.box_mask
        pos = np.maximum(dy[box], 0.0)
        neg = np.minimum(dy[box], 0.0)
        hib, lob = hi[box], lo[box]
        # a ray may not push against a missing bound (entries below eps count as zero)
        if np.any((pos > eps * scale) & np.isinf(hib)) or np.any((neg < -eps * scale) & np.isinf(lob)):
            return False
        up, dn = (pos > 0) & np.isfinite(hib), (neg < 0) & np.isfinite(lob)
        support = np.sum(hib[up] * pos[up]) + np.sum(lob[dn] * neg[dn])
        if len(self.discs):
            support += np.sum(rad * np.hypot(dy[self.discs[:, 0]], dy[self.discs[:, 1]]))
        return support < -eps * scale
