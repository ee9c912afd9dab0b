"""Standard-form conic (semidefinite) problems and an embedded solver.

Problems are stated as  min c'x  s.t.  Ax = b,  x in K,  where K is an
ordered product of free, nonnegative and PSD cones.  PSD blocks live in
scaled svec coordinates (off-diagonals carry a factor sqrt(2)) so that
vector inner products agree with matrix Frobenius products.

The embedded solver is a primal-dual interior-point method on the
homogeneous self-dual embedding, with Nesterov-Todd scaling and a Mehrotra
predictor-corrector.  It is deterministic: identical inputs and options
produce identical iterates.  Alternative backends can be registered under
a solver name; they must consume :class:`ConicProblem` and produce a
:class:`ConicSolution` with the same status semantics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

# Solution statuses.
OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
SLOW_PROGRESS = "slow_progress"
ITER_LIMIT = "iteration_limit"

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class Cone:
    """One cone block: kind is 'free', 'nonneg' or 'psd'."""

    kind: str
    size: int

    @property
    def dim(self) -> int:
        """Number of vector coordinates the block occupies."""
        if self.kind == "psd":
            return self.size * (self.size + 1) // 2
        return self.size

    @property
    def barrier(self) -> int:
        if self.kind == "free":
            return 0
        return self.size


def svec(M: np.ndarray) -> np.ndarray:
    """Scaled upper-triangle vectorization of a symmetric matrix."""
    m = M.shape[0]
    iu = np.triu_indices(m)
    v = M[iu].copy()
    v[iu[0] != iu[1]] *= SQRT2
    return v


def smat(v: np.ndarray, m: int) -> np.ndarray:
    """Inverse of :func:`svec`."""
    iu = np.triu_indices(m)
    M = np.zeros((m, m))
    vals = np.asarray(v, dtype=float).copy()
    off = iu[0] != iu[1]
    vals[off] /= SQRT2
    M[iu] = vals
    M.T[iu] = vals
    return M


class ConicProblem:
    """min c'x  s.t.  Ax = b,  x in the product cone."""

    def __init__(self, c, A, b, cones):
        self.c = np.asarray(c, dtype=float).ravel()
        self.A = sp.csr_matrix(A, dtype=float)
        self.b = np.asarray(b, dtype=float).ravel()
        self.cones = [Cone(k.kind, k.size) if isinstance(k, Cone) else Cone(*k) for k in cones]
        n = sum(k.dim for k in self.cones)
        if self.c.shape[0] != n:
            raise ValueError(f"c has length {self.c.shape[0]}, cones span {n}")
        if self.A.shape[1] != n:
            raise ValueError(f"A has {self.A.shape[1]} columns, cones span {n}")
        if self.A.shape[0] != self.b.shape[0]:
            raise ValueError("A and b have inconsistent row counts")

    @property
    def nvars(self) -> int:
        return self.c.shape[0]

    @property
    def neqs(self) -> int:
        return self.b.shape[0]

    def block_slices(self):
        out = []
        at = 0
        for k in self.cones:
            out.append((k, slice(at, at + k.dim)))
            at += k.dim
        return out

    def dump(self, path: str):
        """Write a plain-text sparse triplet dump (see format notes).

        Format: a ``cones`` line listing ``kind size`` pairs, then
        ``c i value`` / ``b i value`` lines for objective and rhs nonzeros,
        then ``A i j value`` triplets, all 0-based.
        """
        coo = self.A.tocoo()
        with open(path, "w") as fh:
            fh.write("# conic problem: min c'x s.t. Ax = b, x in K\n")
            fh.write("# psd blocks use svec coordinates (sqrt2-scaled off-diagonals)\n")
            fh.write("cones " + " ".join(f"{k.kind} {k.size}" for k in self.cones) + "\n")
            fh.write(f"size {self.neqs} {self.nvars}\n")
            for i, v in enumerate(self.c):
                if v != 0.0:
                    fh.write(f"c {i} {float(v)!r}\n")
            for i, v in enumerate(self.b):
                if v != 0.0:
                    fh.write(f"b {i} {float(v)!r}\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"A {i} {j} {float(v)!r}\n")


@dataclass
class ConicSolution:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    status: str
    gap: float
    prim_res: float
    dual_res: float
    iterations: int
    obj_primal: float = float("nan")
    obj_dual: float = float("nan")
    warning: str = ""

    @property
    def is_usable(self) -> bool:
        return self.status in (OPTIMAL, SLOW_PROGRESS)


def residuals(problem: ConicProblem, x, y, s) -> dict:
    """Normalized primal/dual residuals and duality gap of a candidate point."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    s = np.asarray(s, dtype=float).ravel()
    if x.shape[0] != problem.nvars or s.shape[0] != problem.nvars or y.shape[0] != problem.neqs:
        raise ValueError("residuals: dimension mismatch with problem")
    bnorm = np.linalg.norm(problem.b)
    cnorm = np.linalg.norm(problem.c)
    prim = np.linalg.norm(problem.A @ x - problem.b) / (1.0 + bnorm)
    dual = np.linalg.norm(problem.A.T @ y + s - problem.c) / (1.0 + cnorm)
    pobj = float(problem.c @ x)
    dobj = float(problem.b @ y)
    gap = abs(pobj - dobj) / (1.0 + abs(pobj))
    return {"prim_res": float(prim), "dual_res": float(dual), "gap": float(gap)}


# ---------------------------------------------------------------------------
# Embedded interior-point solver
# ---------------------------------------------------------------------------


class _PsdBlockData:
    """Per-PSD-block constraint data prepared once per problem.

    For the Schur complement we need, per equality row r, the symmetric
    matrix M_r hidden in that row's svec coefficients.  Entries are stored
    as flat (row-grouped) index/value arrays over the full matrix, so that
    T M_r T can be formed as a thin matrix product per row.
    """

    def __init__(self, A_block: sp.csr_matrix, m: int):
        self.m = m
        self.A = A_block.tocsr()
        iu_i, iu_j = np.triu_indices(m)
        coo = A_block.tocoo()
        order = np.argsort(coo.row, kind="stable")
        rows, cols, vals = coo.row[order], coo.col[order], coo.data[order]
        I, J, V, R = [], [], [], []
        for r, cidx, v in zip(rows, cols, vals):
            i, j = int(iu_i[cidx]), int(iu_j[cidx])
            if i == j:
                I.append(i)
                J.append(j)
                V.append(v)
                R.append(r)
            else:
                half = v / SQRT2
                I.extend((i, j))
                J.extend((j, i))
                V.extend((half, half))
                R.extend((r, r))
        self.entry_i = np.asarray(I, dtype=np.intp)
        self.entry_j = np.asarray(J, dtype=np.intp)
        self.entry_v = np.asarray(V, dtype=float)
        self.entry_row = np.asarray(R, dtype=np.intp)
        self.rows = np.unique(self.entry_row)
        # CSR-style pointers into the entry arrays, grouped by equality row
        self.row_ptr = np.searchsorted(self.entry_row, self.rows, side="left")
        self.row_end = np.searchsorted(self.entry_row, self.rows, side="right")
        self.iu = (iu_i, iu_j)
        self.sqrt2_mask = iu_i != iu_j

    def schur_contribution(self, Tmat: np.ndarray, M: np.ndarray, chunk_elems: float = 2.5e7):
        """Accumulate A_blk H^{-1} A_blk' into M, H^{-1}(U) = T U T."""
        if self.rows.size == 0:
            return
        svecdim = self.m * (self.m + 1) // 2
        chunk = max(1, int(chunk_elems // max(svecdim, 1)))
        iu_i, iu_j = self.iu
        for start in range(0, self.rows.size, chunk):
            sel = slice(start, min(start + chunk, self.rows.size))
            rows = self.rows[sel]
            B = np.empty((rows.size, svecdim))
            for k, (p0, p1) in enumerate(zip(self.row_ptr[sel], self.row_end[sel])):
                P = Tmat[:, self.entry_i[p0:p1]] * self.entry_v[p0:p1]
                Q = Tmat[:, self.entry_j[p0:p1]]
                Bmat = P @ Q.T
                bv = Bmat[iu_i, iu_j]
                bv[self.sqrt2_mask] *= SQRT2
                B[k] = bv
            M[:, rows] += self.A @ B.T


class _Scaling:
    """Nesterov-Todd scaling state for the coned part of the iterate."""

    def __init__(self, blocks):
        # blocks: list of (cone, slice) excluding free cones
        self.blocks = blocks
        self.data = {}

    def update(self, x, s):
        for cone, sl in self.blocks:
            if cone.kind == "nonneg":
                xb, sb = x[sl], s[sl]
                w = np.sqrt(xb / sb)
                self.data[sl.start] = ("nonneg", w, np.sqrt(xb * sb))
            else:
                m = cone.size
                X = smat(x[sl], m)
                S = smat(s[sl], m)
                L1 = np.linalg.cholesky(X)
                L2 = np.linalg.cholesky(S)
                U, sig, Vt = np.linalg.svd(L2.T @ L1)
                sroot = np.sqrt(sig)
                L1inv = sla.solve_triangular(L1, np.eye(m), lower=True, check_finite=False)
                R = L1 @ (Vt.T / sroot)
                Rinv = (sroot[:, None] * Vt) @ L1inv
                Tmat = R @ R.T
                self.data[sl.start] = ("psd", R, Rinv, sig, Tmat)

    # Each operator maps the full coned vector; free coords handled outside.

    def lam(self, out_template):
        """Scaled point lambda as a coned vector (svec of diag for PSD)."""
        out = np.zeros_like(out_template)
        for cone, sl in self.blocks:
            d = self.data[sl.start]
            if d[0] == "nonneg":
                out[sl] = d[2]
            else:
                out[sl] = svec(np.diag(d[3]))
        return out

    def W(self, u):
        out = np.zeros_like(u)
        for cone, sl in self.blocks:
            d = self.data[sl.start]
            if d[0] == "nonneg":
                out[sl] = u[sl] / d[1]
            else:
                Rinv = d[2]
                out[sl] = svec(Rinv @ smat(u[sl], cone.size) @ Rinv.T)
        return out

    def WT(self, u):
        out = np.zeros_like(u)
        for cone, sl in self.blocks:
            d = self.data[sl.start]
            if d[0] == "nonneg":
                out[sl] = u[sl] / d[1]
            else:
                Rinv = d[2]
                out[sl] = svec(Rinv.T @ smat(u[sl], cone.size) @ Rinv)
        return out

    def WinvT(self, u):
        out = np.zeros_like(u)
        for cone, sl in self.blocks:
            d = self.data[sl.start]
            if d[0] == "nonneg":
                out[sl] = u[sl] * d[1]
            else:
                R = d[1]
                out[sl] = svec(R.T @ smat(u[sl], cone.size) @ R)
        return out

    def Hinv(self, u):
        out = np.zeros_like(u)
        for cone, sl in self.blocks:
            d = self.data[sl.start]
            if d[0] == "nonneg":
                out[sl] = u[sl] * d[1] ** 2
            else:
                Tmat = d[4]
                out[sl] = svec(Tmat @ smat(u[sl], cone.size) @ Tmat)
        return out

    def max_step(self, v):
        """Largest alpha with lambda + alpha*v staying in the cone."""
        alpha = np.inf
        for cone, sl in self.blocks:
            d = self.data[sl.start]
            if d[0] == "nonneg":
                lam = d[2]
                ratio = v[sl] / lam
                lo = ratio.min() if ratio.size else 0.0
                if lo < 0:
                    alpha = min(alpha, -1.0 / lo)
            else:
                lam = d[3]
                scale = 1.0 / np.sqrt(lam)
                Z = smat(v[sl], cone.size)
                Z = Z * scale[:, None] * scale[None, :]
                emin = float(np.linalg.eigvalsh(Z)[0])
                if emin < 0:
                    alpha = min(alpha, -1.0 / emin)
        return alpha

    def compl_product(self, u, v):
        """Jordan product of two scaled coned vectors."""
        out = np.zeros_like(u)
        for cone, sl in self.blocks:
            if cone.kind == "nonneg":
                out[sl] = u[sl] * v[sl]
            else:
                Um = smat(u[sl], cone.size)
                Vm = smat(v[sl], cone.size)
                out[sl] = svec(0.5 * (Um @ Vm + Vm @ Um))
        return out

    def lam_solve(self, rhs):
        """Solve lambda o z = rhs for z (lambda is the scaled point)."""
        out = np.zeros_like(rhs)
        for cone, sl in self.blocks:
            d = self.data[sl.start]
            if d[0] == "nonneg":
                out[sl] = rhs[sl] / d[2]
            else:
                lam = d[3]
                Rm = smat(rhs[sl], cone.size)
                denom = 0.5 * (lam[:, None] + lam[None, :])
                out[sl] = svec(Rm / denom)
        return out


class _KKT:
    """Factorization of the scaled KKT system for one interior-point step."""

    def __init__(self, problem, coned_blocks, psd_data, A_free, A_nonneg_blocks,
                 free_idx, reg=1e-12):
        self.problem = problem
        self.coned_blocks = coned_blocks
        self.psd_data = psd_data
        self.A_free = A_free  # dense m x nf (or None)
        self.A_nonneg_blocks = A_nonneg_blocks  # list of (slice, csr)
        self.free_idx = free_idx
        self.reg = reg

    def factor(self, scaling: _Scaling):
        m = self.problem.neqs
        M = np.zeros((m, m))
        for sl, A_nn in self.A_nonneg_blocks:
            d = scaling.data[sl.start]
            w2 = d[1] ** 2
            M += (A_nn.multiply(w2) @ A_nn.T).toarray()
        for sl, blk in self.psd_data:
            d = scaling.data[sl.start]
            blk.schur_contribution(d[4], M)
        M = 0.5 * (M + M.T)
        diag = np.abs(np.diag(M)) if m else np.zeros(0)
        delta = self.reg
        idx = np.diag_indices(m)
        for _ in range(4):
            Mreg = M.copy()
            Mreg[idx] += delta * (1.0 + diag)
            try:
                self.M_fac = sla.cho_factor(Mreg, lower=True, check_finite=False)
                break
            except np.linalg.LinAlgError:
                delta *= 1e4
        else:
            raise np.linalg.LinAlgError("Schur complement factorization failed")
        self.scaling = scaling
        if self.A_free is not None:
            Z = sla.cho_solve(self.M_fac, self.A_free, check_finite=False)
            F = self.A_free.T @ Z
            F = 0.5 * (F + F.T)
            nf = F.shape[0]
            fdiag = np.abs(np.diag(F)) if nf else np.zeros(0)
            fdelta = self.reg
            fidx = np.diag_indices(nf)
            for _ in range(4):
                Freg = F.copy()
                Freg[fidx] += fdelta * (1.0 + fdiag)
                try:
                    self.F_fac = sla.cho_factor(Freg, lower=True, check_finite=False)
                    break
                except np.linalg.LinAlgError:
                    fdelta *= 1e4
            else:
                raise np.linalg.LinAlgError("free-variable Schur factorization failed")

    def _solve_once(self, u, w, coned_mask):
        prob = self.problem
        scaling = self.scaling
        u_coned = np.where(coned_mask, u, 0.0)
        hinv_u = scaling.Hinv(u_coned)
        wt = w - prob.A @ hinv_u
        if self.A_free is not None:
            t1 = sla.cho_solve(self.M_fac, wt, check_finite=False)
            rhs_f = self.A_free.T @ t1 + u[self.free_idx]
            dx_f = sla.cho_solve(self.F_fac, rhs_f, check_finite=False)
            dy = sla.cho_solve(self.M_fac, wt - self.A_free @ dx_f, check_finite=False)
        else:
            dx_f = np.zeros(0)
            dy = sla.cho_solve(self.M_fac, wt, check_finite=False) if prob.neqs else np.zeros(0)
        dx = scaling.Hinv(np.where(coned_mask, u + prob.A.T @ dy, 0.0))
        if self.A_free is not None:
            dx[self.free_idx] = dx_f
        return dx, dy

    def solve(self, u, w, coned_mask, refine: int = 4):
        """Solve  H dx_c - A_c' dy = u_c,  -A_f' dy = u_f,  A dx = w.

        Residual-driven iterative refinement keeps the saddle system
        accurate when the scaling becomes ill-conditioned near convergence.
        """
        prob = self.problem
        scaling = self.scaling
        dx, dy = self._solve_once(u, w, coned_mask)
        scale = 1.0 + np.linalg.norm(u) + np.linalg.norm(w)
        prev = np.inf
        for _ in range(refine):
            hdx = scaling.WT(scaling.W(dx))
            aty = prob.A.T @ dy
            res_u = u - np.where(coned_mask, hdx - aty, -aty)
            res_w = w - prob.A @ dx
            err = max(np.linalg.norm(res_u), np.linalg.norm(res_w))
            if err <= 1e-13 * scale or err >= 0.5 * prev:
                break
            prev = err
            cx, cy = self._solve_once(res_u, res_w, coned_mask)
            dx = dx + cx
            dy = dy + cy
        return dx, dy


def free_slice_concat(free_slices):
    """Index array selecting all free coordinates, in block order."""
    idx = []
    for sl in free_slices:
        idx.extend(range(sl.start, sl.stop))
    return np.asarray(idx, dtype=np.intp)


def solve_embedded(
    problem: ConicProblem,
    tol: float = 1e-8,
    max_iter: int = 200,
    relax_tol: float = 1e-6,
    verbose: bool = False,
) -> ConicSolution:
    """Homogeneous self-dual interior-point solve of a conic problem.

    Rows of A are equilibrated to unit max-norm internally; termination is
    still decided on residuals of the original, unscaled problem.
    """
    m, n = problem.neqs, problem.nvars
    A0, b0, c = problem.A, problem.b, problem.c
    row_max = np.asarray(abs(A0).max(axis=1).todense()).ravel() if m else np.zeros(0)
    row_scale = np.where(row_max > 0, 1.0 / np.maximum(row_max, 1e-12), 1.0)
    A = sp.diags(row_scale) @ A0 if m else A0
    A = A.tocsr()
    b = row_scale * b0
    blocks = problem.block_slices()
    free_slices = [sl for k, sl in blocks if k.kind == "free"]
    coned_blocks = [(k, sl) for k, sl in blocks if k.kind != "free"]
    if not coned_blocks:
        raise ValueError("problem has no coned variables; nothing to optimize over")
    coned_mask = np.zeros(n, dtype=bool)
    for _, sl in coned_blocks:
        coned_mask[sl] = True
    nu = sum(k.barrier for k, _ in coned_blocks)

    iprob = ConicProblem(c, A, b, problem.cones)
    A_csc = A.tocsc()
    free_idx = free_slice_concat(free_slices)
    A_free = A_csc[:, free_idx].toarray() if free_idx.size else None
    A_nonneg = [(sl, A_csc[:, sl].tocsr()) for k, sl in coned_blocks if k.kind == "nonneg"]
    psd_data = [
        (sl, _PsdBlockData(A_csc[:, sl], k.size)) for k, sl in coned_blocks if k.kind == "psd"
    ]

    # initial iterate: scaled identity in each cone, zero elsewhere; the
    # scale balances the initial equality residual against mu so neither
    # feasibility nor complementarity races ahead of the other
    e_init = _cone_identity(coned_blocks, n)
    Ae = A @ e_init
    xi = (1.0 + np.linalg.norm(b)) / (1.0 + np.linalg.norm(Ae))
    xi = float(np.clip(xi, 1e-4, 1e4))
    x = xi * e_init
    s = e_init.copy()
    y = np.zeros(m)
    tau, kappa = 1.0, xi

    scaling = _Scaling(coned_blocks)
    kkt = _KKT(iprob, coned_blocks, psd_data, A_free, A_nonneg, free_idx)

    bnorm, cnorm = np.linalg.norm(b0), np.linalg.norm(c)
    best = None
    best_metric = np.inf
    stall = 0
    mu_prev = None
    status = ITER_LIMIT
    warning = ""
    it = 0

    def normalized_metrics():
        xs, ss = x / tau, s / tau
        ys = (row_scale * y) / tau
        r = residuals(problem, xs, ys, ss)
        return xs, ys, ss, r

    for it in range(1, max_iter + 1):
        # residuals of the self-dual embedding
        r_p = A @ x - b * tau
        r_d = -(A.T @ y) + c * tau - s
        r_g = float(b @ y - c @ x) - kappa
        mu = (float(x[coned_mask] @ s[coned_mask]) + tau * kappa) / (nu + 1)

        xs, ys, ss, met = normalized_metrics()
        metric = max(met["prim_res"], met["dual_res"], met["gap"])
        if metric < best_metric:
            best_metric = metric
            best = (xs.copy(), ys.copy(), ss.copy(), met, it)
        if verbose:
            print(
                f"iter {it:3d}  mu={mu:9.2e}  pres={met['prim_res']:9.2e} "
                f"dres={met['dual_res']:9.2e} gap={met['gap']:9.2e} tau={tau:8.2e} kappa={kappa:8.2e}"
            )
        if metric <= tol:
            status = OPTIMAL
            break

        # infeasibility certificates
        by = float(b @ y)
        cx = float(c @ x)
        if kappa / max(tau, 1e-300) > 1e6 or tau <= 1e-12:
            if by > 0:
                y_orig = row_scale * y
                certres = np.linalg.norm(problem.A.T @ y_orig + s) * max(1.0, bnorm) / by
                if certres <= 1e-7:
                    status = INFEASIBLE
                    y = row_scale * y / by
                    s = s / by
                    x = x / max(tau, 1e-300)
                    break
            if cx < 0:
                certres = np.linalg.norm(problem.A @ x) * max(1.0, cnorm) / (-cx)
                if certres <= 1e-7:
                    status = UNBOUNDED
                    x = x / (-cx)
                    break

        try:
            scaling.update(x, s)
            kkt.factor(scaling)
        except np.linalg.LinAlgError:
            status = SLOW_PROGRESS
            warning = "KKT factorization failed; returning best iterate"
            break

        lam = scaling.lam(x)
        lam_sq = scaling.compl_product(lam, lam)

        # solve for the tau-column once per factorization
        dx1, dy1 = kkt.solve(-c, b, coned_mask)

        def direction(eta, d_compl, d_tk):
            u2 = scaling.WT(d_compl) - eta * r_d
            u2[free_idx] = -eta * r_d[free_idx]
            dx2, dy2 = kkt.solve(u2, -eta * r_p, coned_mask)
            denom = float(b @ dy1 - c @ dx1) + kappa / tau
            numer = -eta * r_g + float(c @ dx2 - b @ dy2) + d_tk / tau
            dtau = numer / denom
            dx = dx1 * dtau + dx2
            dy = dy1 * dtau + dy2
            # take ds from the dual equality row so linear residuals keep
            # contracting even when the scaled system is ill-conditioned
            ds = -(A.T @ dy) + c * dtau + eta * r_d
            ds[free_idx] = 0.0
            dkappa = (d_tk - kappa * dtau) / tau
            return dx, dy, ds, dtau, dkappa

        # predictor (affine) direction
        dxa, dya, dsa, dtaua, dkappaa = direction(1.0, -lam, -tau * kappa)
        wdxa = scaling.W(dxa)
        wdsa = scaling.WinvT(dsa)
        alpha_a = min(
            scaling.max_step(wdxa),
            scaling.max_step(wdsa),
            (-tau / dtaua) if dtaua < 0 else np.inf,
            (-kappa / dkappaa) if dkappaa < 0 else np.inf,
        )
        alpha_a = min(1.0, alpha_a)
        mu_aff = (
            float((x + alpha_a * dxa)[coned_mask] @ (s + alpha_a * dsa)[coned_mask])
            + (tau + alpha_a * dtaua) * (kappa + alpha_a * dkappaa)
        ) / (nu + 1)
        sigma = max(0.0, min(1.0, (mu_aff / mu))) ** 3

        # combined direction with Mehrotra correction
        corr = scaling.compl_product(wdxa, wdsa)
        d_compl = scaling.lam_solve(-lam_sq - corr + sigma * mu * _cone_identity(coned_blocks, n))
        d_tk = -tau * kappa - dtaua * dkappaa + sigma * mu
        dx, dy, ds, dtau, dkappa = direction(1.0 - sigma, d_compl, d_tk)

        def step_bound(dx_, ds_, dtau_, dkappa_):
            return min(
                scaling.max_step(scaling.W(dx_)),
                scaling.max_step(scaling.WinvT(ds_)),
                (-tau / dtau_) if dtau_ < 0 else np.inf,
                (-kappa / dkappa_) if dkappa_ < 0 else np.inf,
            )

        alpha = min(1.0, 0.99 * step_bound(dx, ds, dtau, dkappa))
        if alpha < 0.1:
            # corrector noise can block the step near the boundary; retry
            # with a plain centering direction before giving up
            sigma_c = max(sigma, 0.5)
            d_compl = scaling.lam_solve(-lam_sq + sigma_c * mu * _cone_identity(coned_blocks, n))
            d_tk = -tau * kappa + sigma_c * mu
            cand = direction(1.0 - sigma_c, d_compl, d_tk)
            alpha_c = min(1.0, 0.99 * step_bound(cand[0], cand[2], cand[3], cand[4]))
            if alpha_c > alpha:
                dx, dy, ds, dtau, dkappa = cand
                alpha = alpha_c
                sigma = sigma_c
        if verbose:
            print(f"        alpha={alpha:8.2e} sigma={sigma:6.3f} alpha_aff={alpha_a:8.2e}")
        if alpha <= 1e-8:
            status = SLOW_PROGRESS
            warning = "step length collapsed"
            break

        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        tau += alpha * dtau
        kappa += alpha * dkappa

        if mu_prev is not None and mu > 0.995 * mu_prev:
            stall += 1
            if stall >= 4:
                status = SLOW_PROGRESS
                warning = "no progress on complementarity"
                break
        else:
            stall = 0
        mu_prev = mu

    if status == OPTIMAL:
        xs, ys, ss, met = normalized_metrics()
        return ConicSolution(
            x=xs, y=ys, s=ss, status=OPTIMAL,
            gap=met["gap"], prim_res=met["prim_res"], dual_res=met["dual_res"],
            iterations=it, obj_primal=float(c @ xs), obj_dual=float(b @ ys),
        )
    if status in (INFEASIBLE, UNBOUNDED):
        return ConicSolution(
            x=x, y=y, s=s, status=status,
            gap=float("nan"), prim_res=float("nan"), dual_res=float("nan"),
            iterations=it,
            warning="certificate stored in (y, s) for infeasible, x for unbounded",
        )
    # stalled or hit the iteration limit: report the best normalized iterate
    xs, ys, ss, met, best_it = best
    final_status = status
    if max(met["prim_res"], met["dual_res"], met["gap"]) <= relax_tol:
        final_status = OPTIMAL
        warning = (
            warning + "; " if warning else ""
        ) + f"met relaxed tolerance {relax_tol:g} (target {tol:g})"
    return ConicSolution(
        x=xs, y=ys, s=ss, status=final_status,
        gap=met["gap"], prim_res=met["prim_res"], dual_res=met["dual_res"],
        iterations=it, obj_primal=float(c @ xs), obj_dual=float(b @ ys),
        warning=warning,
    )


def _cone_identity(coned_blocks, n):
    e = np.zeros(n)
    for k, sl in coned_blocks:
        if k.kind == "nonneg":
            e[sl] = 1.0
        else:
            e[sl] = svec(np.eye(k.size))
    return e


# ---------------------------------------------------------------------------
# Backend registry
# ---------------------------------------------------------------------------


def solve_cvxopt(problem: ConicProblem, tol: float = 1e-8, max_iter: int = 200, **_):
    """Solve via cvxopt's conelp applied to the dual problem.

    The dual of  min c'x, Ax=b, x in K  is  max b'y with c - A'y in K*,
    which is exactly cvxopt's (G, h) form with the free part of x yielding
    equality constraints.  Our x is recovered from cvxopt's dual variables.
    """
    try:
        from cvxopt import matrix, solvers, spmatrix
    except ImportError as exc:  # pragma: no cover
        raise RuntimeError("cvxopt backend requested but cvxopt is not installed") from exc

    blocks = problem.block_slices()
    nonneg = [(k, sl) for k, sl in blocks if k.kind == "nonneg"]
    psd = [(k, sl) for k, sl in blocks if k.kind == "psd"]
    free = [(k, sl) for k, sl in blocks if k.kind == "free"]
    A_csc = problem.A.tocsc()

    G_rows = []
    h_parts = []
    for k, sl in nonneg:
        G_rows.append(A_csc[:, sl].T)
        h_parts.append(problem.c[sl])
    for k, sl in psd:
        mm = k.size
        iu = np.triu_indices(mm)
        expand = sp.lil_matrix((mm * mm, k.dim))
        for col, (i, j) in enumerate(zip(*iu)):
            if i == j:
                expand[i * mm + j, col] = 1.0
            else:
                expand[j * mm + i, col] = 1.0 / SQRT2
                expand[i * mm + j, col] = 1.0 / SQRT2
        G_rows.append((expand @ A_csc[:, sl].T.tocsc()).tocoo())
        hm = smat(problem.c[sl], mm)
        h_parts.append(hm.ravel(order="F"))
    G = sp.vstack([sp.coo_matrix(g) for g in G_rows]).tocoo()
    h = np.concatenate(h_parts) if h_parts else np.zeros(0)
    dims = {
        "l": sum(k.size for k, _ in nonneg),
        "q": [],
        "s": [k.size for k, _ in psd],
    }
    Gc = spmatrix(G.data.tolist(), G.row.tolist(), G.col.tolist(), (G.shape[0], problem.neqs))
    hc = matrix(h)
    cc = matrix(-problem.b)
    kwargs = {}
    if free:
        idx = free_slice_concat([sl for _, sl in free])
        Af = A_csc[:, idx].T.tocoo()
        kwargs["A"] = spmatrix(
            Af.data.tolist(), Af.row.tolist(), Af.col.tolist(), (idx.size, problem.neqs)
        )
        kwargs["b"] = matrix(problem.c[idx])
    opts = dict(solvers.options)
    solvers.options.update({"show_progress": False, "abstol": tol, "reltol": tol, "maxiters": max_iter})
    try:
        sol = solvers.conelp(cc, Gc, hc, dims, **kwargs)
    finally:
        solvers.options.clear()
        solvers.options.update(opts)

    status_map = {
        "optimal": OPTIMAL,
        "primal infeasible": UNBOUNDED,  # cvxopt primal is our dual
        "dual infeasible": INFEASIBLE,
        "unknown": SLOW_PROGRESS,
    }
    status = status_map.get(sol["status"], SLOW_PROGRESS)
    x = np.zeros(problem.nvars)
    s = np.zeros(problem.nvars)
    y = np.zeros(problem.neqs)
    if sol["x"] is not None:
        y = np.asarray(sol["x"]).ravel()
    at = 0
    if sol["z"] is not None:
        z = np.asarray(sol["z"]).ravel()
        for k, sl in nonneg:
            x[sl] = z[at : at + k.size]
            at += k.size
        for k, sl in psd:
            mm = k.size
            Zb = z[at : at + mm * mm].reshape((mm, mm), order="F")
            x[sl] = svec(0.5 * (Zb + Zb.T))
            at += mm * mm
    if free and sol["y"] is not None:
        idx = free_slice_concat([sl for _, sl in free])
        x[idx] = np.asarray(sol["y"]).ravel()
    s = problem.c - problem.A.T @ y
    s[free_slice_concat([sl for _, sl in free])] = 0.0
    met = residuals(problem, x, y, s)
    return ConicSolution(
        x=x, y=y, s=s, status=status,
        gap=met["gap"], prim_res=met["prim_res"], dual_res=met["dual_res"],
        iterations=int(sol.get("iterations", 0)),
        obj_primal=float(problem.c @ x), obj_dual=float(problem.b @ y),
    )


BACKENDS = {
    "embedded": solve_embedded,
    "cvxopt": solve_cvxopt,
}


def solve(problem: ConicProblem, tol: float = 1e-8, max_iter: int = 200,
          solver: str = "embedded", **kwargs) -> ConicSolution:
    """Solve a conic problem with the selected backend (default embedded)."""
    if solver not in BACKENDS:
        raise ValueError(f"unknown solver {solver!r}; available: {sorted(BACKENDS)}")
    return BACKENDS[solver](problem, tol=tol, max_iter=max_iter, **kwargs)
