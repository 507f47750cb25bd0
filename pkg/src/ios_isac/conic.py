"""Small dense cone-program solver.

Solves linear objectives over a product of real-symmetric PSD blocks, a
nonnegative block and a free block, subject to affine equality constraints:

    min/max  c.x   s.t.  A x = b,  x in K.

The method is ADMM operator splitting: alternate projection onto the affine
subspace {A x = b} (with the linear objective folded into the prox) and onto
the cone product, with over-relaxation and residual-balanced penalty updates.
Inequalities are encoded by the caller through nonnegative slack variables.
Problem data is equilibrated internally (rows exactly, variables one scalar
per PSD block so the cone is preserved); convergence is always measured on
the original, unscaled data.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DimensionError

__all__ = [
    "SolverSettings",
    "ConeProgram",
    "ConeProgramBuilder",
    "SolverResult",
    "KktReport",
    "solve",
    "verify_kkt",
    "dump_program",
    "load_program",
]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERS = "max_iters"


@dataclass(frozen=True)
class SolverSettings:
    eps_primal: float = 1e-7
    eps_dual: float = 1e-7
    eps_gap: float = 1e-7
    max_iters: int = 50_000
    # splitting knobs; defaults follow the usual operator-splitting folklore
    over_relax: float = 1.6
    rho: float = 1.0
    check_every: int = 25
    # infeasibility heuristic: normalized primal residual stuck above
    # stall_level with < 0.1% relative improvement for stall_iters iterations
    stall_level: float = 1e-3
    stall_iters: int = 2_000

    def __post_init__(self):
        if min(self.eps_primal, self.eps_dual, self.eps_gap) <= 0:
            raise ValueError("solver tolerances must be positive")


@dataclass
class ConeProgram:
    """Linear-objective cone program in stacked form.

    Variable stacking order: PSD blocks (each stored as the full d x d
    symmetric matrix, row-major), then the nonnegative block, then the free
    block.  ``equalities`` couple arbitrary entries; symmetric redundancy in
    the PSD blocks is tied by construction (coefficient matrices are built
    symmetric, and the cone projection symmetrizes).
    """

    psd_block_dims: list
    nonneg_count: int
    free_count: int
    objective: np.ndarray
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    sense: str = "max"

    def __post_init__(self):
        if self.sense not in ("max", "min"):
            raise ValueError(f"unknown sense {self.sense!r}")
        n = self.total_dim
        self.objective = np.asarray(self.objective, dtype=float).reshape(n)
        self.eq_matrix = np.asarray(self.eq_matrix, dtype=float).reshape(-1, n)
        self.eq_rhs = np.asarray(self.eq_rhs, dtype=float).reshape(-1)
        if self.eq_matrix.shape[0] != self.eq_rhs.shape[0]:
            raise DimensionError("equality matrix/rhs row mismatch")
        if n == 0:
            raise DimensionError("program has no variables")

    @property
    def total_dim(self):
        return int(sum(d * d for d in self.psd_block_dims) + self.nonneg_count + self.free_count)

    def block_slices(self):
        """Yields (kind, slice, dim) over the stacked variable."""
        pos = 0
        for d in self.psd_block_dims:
            yield "psd", slice(pos, pos + d * d), d
            pos += d * d
        if self.nonneg_count:
            yield "nonneg", slice(pos, pos + self.nonneg_count), self.nonneg_count
            pos += self.nonneg_count
        if self.free_count:
            yield "free", slice(pos, pos + self.free_count), self.free_count


class _PsdRef:
    __slots__ = ("index", "dim")

    def __init__(self, index, dim):
        self.index = index
        self.dim = dim


class _ScalarRef:
    __slots__ = ("kind", "index")

    def __init__(self, kind, index):
        self.kind = kind
        self.index = index


class ConeProgramBuilder:
    """Incremental assembly of a :class:`ConeProgram`.

    Variables are declared first-come; the final stacking always follows the
    canonical PSD / nonneg / free order regardless of declaration order.
    """

    def __init__(self, sense="max"):
        self.sense = sense
        self._psd_dims = []
        self._n_nonneg = 0
        self._n_free = 0
        self._obj_terms = []
        self._rows = []

    def psd_block(self, dim):
        ref = _PsdRef(len(self._psd_dims), int(dim))
        self._psd_dims.append(int(dim))
        return ref

    def nonneg(self):
        ref = _ScalarRef("nonneg", self._n_nonneg)
        self._n_nonneg += 1
        return ref

    def free(self):
        ref = _ScalarRef("free", self._n_free)
        self._n_free += 1
        return ref

    def add_objective(self, terms):
        """terms: iterable of (ref, coefficient); PSD refs expect a full
        symmetric matrix C so the contribution is tr(C X)."""
        self._obj_terms.extend(terms)

    def add_eq(self, terms, rhs):
        self._rows.append((list(terms), float(rhs)))

    def _offsets(self):
        psd_off = []
        pos = 0
        for d in self._psd_dims:
            psd_off.append(pos)
            pos += d * d
        nonneg_off = pos
        free_off = pos + self._n_nonneg
        total = free_off + self._n_free
        return psd_off, nonneg_off, free_off, total

    def _scatter(self, vec, ref, coef, psd_off, nonneg_off, free_off):
        if isinstance(ref, _PsdRef):
            c = np.asarray(coef, dtype=float)
            if c.shape != (ref.dim, ref.dim):
                raise DimensionError(
                    f"coefficient shape {c.shape} does not match PSD block dim {ref.dim}"
                )
            c = 0.5 * (c + c.T)
            start = psd_off[ref.index]
            vec[start : start + ref.dim * ref.dim] += c.reshape(-1)
        elif ref.kind == "nonneg":
            vec[nonneg_off + ref.index] += float(coef)
        else:
            vec[free_off + ref.index] += float(coef)

    def build(self):
        psd_off, nonneg_off, free_off, total = self._offsets()
        c = np.zeros(total)
        for ref, coef in self._obj_terms:
            self._scatter(c, ref, coef, psd_off, nonneg_off, free_off)
        a = np.zeros((len(self._rows), total))
        b = np.zeros(len(self._rows))
        for i, (terms, rhs) in enumerate(self._rows):
            for ref, coef in terms:
                self._scatter(a[i], ref, coef, psd_off, nonneg_off, free_off)
            b[i] = rhs
        return ConeProgram(
            psd_block_dims=list(self._psd_dims),
            nonneg_count=self._n_nonneg,
            free_count=self._n_free,
            objective=c,
            eq_matrix=a,
            eq_rhs=b,
            sense=self.sense,
        )


@dataclass
class SolverResult:
    status: str
    x: np.ndarray
    psd_blocks: list
    nonneg: np.ndarray
    free: np.ndarray
    eq_dual: np.ndarray
    cone_dual: np.ndarray
    objective: float
    residuals: dict
    iterations: int
    warm: tuple = field(default=None, repr=False)


def _split_blocks(program, x):
    psd, nonneg, free = [], np.zeros(0), np.zeros(0)
    for kind, sl, d in program.block_slices():
        if kind == "psd":
            psd.append(x[sl].reshape(d, d))
        elif kind == "nonneg":
            nonneg = x[sl]
        else:
            free = x[sl]
    return psd, nonneg, free


class _ConeGeometry:
    """Projection machinery; PSD blocks of equal dim are batched."""

    def __init__(self, program):
        self.groups = []
        by_dim = {}
        pos = 0
        for d in program.psd_block_dims:
            by_dim.setdefault(d, []).append(pos)
            pos += d * d
        for d, starts in by_dim.items():
            self.groups.append(("psd", d, np.asarray(starts)))
        self.nonneg_slice = None
        self.free_slice = None
        for kind, sl, _ in program.block_slices():
            if kind == "nonneg":
                self.nonneg_slice = sl
            elif kind == "free":
                self.free_slice = sl

    def project(self, v):
        out = v.copy()
        for _, d, starts in self.groups:
            mats = np.stack([v[s : s + d * d].reshape(d, d) for s in starts])
            mats = 0.5 * (mats + np.transpose(mats, (0, 2, 1)))
            w, q = np.linalg.eigh(mats)
            w = np.maximum(w, 0.0)
            proj = np.einsum("kij,kj,klj->kil", q, w, q)
            for s, p in zip(starts, proj):
                out[s : s + d * d] = p.reshape(-1)
        if self.nonneg_slice is not None:
            out[self.nonneg_slice] = np.maximum(v[self.nonneg_slice], 0.0)
        return out

    def min_eigs(self, v):
        """Smallest eigenvalue per PSD block plus min of the nonneg block."""
        worst = np.inf
        for _, d, starts in self.groups:
            for s in starts:
                m = v[s : s + d * d].reshape(d, d)
                worst = min(worst, float(np.linalg.eigvalsh(0.5 * (m + m.T))[0]))
        if self.nonneg_slice is not None and v[self.nonneg_slice].size:
            worst = min(worst, float(np.min(v[self.nonneg_slice])))
        return worst


def _equilibrate(program):
    """Row/block scaling. Returns (A_s, b_s, c_s, row_scale, col_scale, obj_scale)."""
    a = program.eq_matrix.copy()
    b = program.eq_rhs.copy()
    c = program.objective.copy()
    m, n = a.shape
    row_scale = np.ones(m)
    col_scale = np.ones(n)
    # column groups: one scalar per PSD block (cone-preserving), per-variable
    # elsewhere
    groups = []
    for kind, sl, d in program.block_slices():
        if kind == "psd":
            groups.append(np.arange(sl.start, sl.stop))
        else:
            groups.extend(np.arange(sl.start, sl.stop).reshape(-1, 1))
    for _ in range(2):
        if m:
            r = np.max(np.abs(a), axis=1)
            r[r < 1e-12] = 1.0
            d_r = 1.0 / np.sqrt(r)
            a *= d_r[:, None]
            b *= d_r
            row_scale *= d_r
        for g in groups:
            peak = np.max(np.abs(a[:, g])) if m else 0.0
            peak = max(peak, np.max(np.abs(c[g])) if c[g].size else 0.0)
            if peak < 1e-12:
                continue
            d_c = 1.0 / np.sqrt(peak)
            d_c = min(max(d_c, 1e-8), 1e8)
            a[:, g] *= d_c
            c[g] *= d_c
            col_scale[g] *= d_c
    if m:
        r = np.max(np.abs(a), axis=1)
        r[r < 1e-12] = 1.0
        a /= r[:, None]
        b /= r
        row_scale /= r
    obj_scale = 1.0 / max(np.max(np.abs(c)), 1e-12)
    c = c * obj_scale
    return a, b, c, row_scale, col_scale, obj_scale


def _kkt_residuals(program, c_min, z, y, lam):
    """Normalized KKT residuals on the original data, minimization sense."""
    a, b = program.eq_matrix, program.eq_rhs
    r_primal = np.linalg.norm(a @ z - b) / (1.0 + np.linalg.norm(b)) if a.shape[0] else 0.0
    stat = c_min + (a.T @ y if a.shape[0] else 0.0) - lam
    r_dual = np.linalg.norm(stat) / (1.0 + np.linalg.norm(c_min))
    pobj = float(c_min @ z)
    dobj = -float(b @ y) if a.shape[0] else 0.0
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    return r_primal, r_dual, gap


def solve(program, settings=None, warm_start=None):
    """Solve a :class:`ConeProgram`.

    Deterministic for identical inputs.  ``warm_start`` accepts the ``warm``
    tuple of a previous result for a program of identical layout.
    """
    settings = settings or SolverSettings()
    sense_flip = -1.0 if program.sense == "max" else 1.0
    c_min = sense_flip * program.objective

    a_s, b_s, c_s, row_scale, col_scale, obj_scale = _equilibrate(
        replace_objective(program, c_min)
    )
    m, n = a_s.shape
    geometry = _ConeGeometry(program)

    if m:
        gram = a_s @ a_s.T
        jitter = 1e-12 * max(np.trace(gram) / m, 1.0)
        for _ in range(6):
            try:
                chol = scipy.linalg.cho_factor(gram + jitter * np.eye(m), lower=True)
                break
            except np.linalg.LinAlgError:
                jitter *= 100.0
        else:
            raise ArithmeticError("equality gram matrix could not be factorized")
    else:
        chol = None

    rho = settings.rho
    if warm_start is not None:
        z_orig, u_orig, rho = warm_start
        z = z_orig / col_scale
        u = u_orig / col_scale
    else:
        z = np.zeros(n)
        u = np.zeros(n)

    y_s = np.zeros(m)
    best = None
    best_rp = np.inf
    last_improve_it = 0
    status = MAX_ITERS
    it = 0
    residuals = {}

    for it in range(1, settings.max_iters + 1):
        v = z - u - c_s / rho
        if m:
            w = scipy.linalg.cho_solve(chol, a_s @ v - b_s)
            x = v - a_s.T @ w
            y_s = rho * w
        else:
            x = v
        x_hat = settings.over_relax * x + (1.0 - settings.over_relax) * z
        z = geometry.project(x_hat + u)
        u = u + x_hat - z

        if it % settings.check_every == 0 or it == settings.max_iters:
            # map back to original data, minimization convention
            z_o = z * col_scale
            y_o = row_scale * y_s / obj_scale if m else y_s
            lam_o = -(rho * u) / col_scale / obj_scale
            r_p, r_d, gap = _kkt_residuals(program, c_min, z_o, y_o, lam_o)
            max_res = max(r_p, r_d, gap)
            if best is None or max_res < best[0]:
                best = (max_res, z_o.copy(), y_o.copy(), lam_o.copy(), (r_p, r_d, gap), it)
            if (
                r_p <= settings.eps_primal
                and r_d <= settings.eps_dual
                and gap <= settings.eps_gap
            ):
                status = OPTIMAL
                residuals = {"primal": r_p, "dual": r_d, "gap": gap}
                best = (max_res, z_o, y_o, lam_o, (r_p, r_d, gap), it)
                break
            # stagnation heuristic for infeasibility: normalized primal
            # residual stuck above the stall level with less than 5% total
            # improvement across a full window of iterations
            if r_p < best_rp * 0.95:
                best_rp = r_p
                last_improve_it = it
            if r_p > settings.stall_level and it - last_improve_it >= settings.stall_iters:
                status = INFEASIBLE
                residuals = {"primal": r_p, "dual": r_d, "gap": gap}
                best = (max_res, z_o, y_o, lam_o, (r_p, r_d, gap), it)
                break
            # residual balancing in the scaled space
            if it % 100 == 0:
                r_p_s = np.linalg.norm(a_s @ z - b_s) / (1.0 + np.linalg.norm(b_s)) if m else 0.0
                stat_s = c_s + (a_s.T @ y_s if m else 0.0) + rho * u
                r_d_s = np.linalg.norm(stat_s) / (1.0 + np.linalg.norm(c_s))
                ratio = r_p_s / max(r_d_s, 1e-300)
                if ratio > 5.0 and rho < 1e8:
                    factor = min(math.sqrt(ratio), 10.0)
                    rho *= factor
                    u /= factor
                elif ratio < 0.2 and rho > 1e-6:
                    factor = min(math.sqrt(1.0 / ratio), 10.0)
                    rho /= factor
                    u *= factor

    _, z_o, y_o, lam_o, (r_p, r_d, gap), _at_iter = best
    residuals = residuals or {"primal": r_p, "dual": r_d, "gap": gap}
    psd, nonneg, free = _split_blocks(program, z_o)
    return SolverResult(
        status=status,
        x=z_o,
        psd_blocks=psd,
        nonneg=nonneg,
        free=free,
        eq_dual=sense_flip * y_o,
        cone_dual=sense_flip * lam_o,
        objective=float(program.objective @ z_o),
        residuals=residuals,
        iterations=it,
        warm=(z_o.copy(), u * col_scale, rho),
    )


def replace_objective(program, new_c):
    return ConeProgram(
        psd_block_dims=list(program.psd_block_dims),
        nonneg_count=program.nonneg_count,
        free_count=program.free_count,
        objective=new_c,
        eq_matrix=program.eq_matrix,
        eq_rhs=program.eq_rhs,
        sense="min",
    )


@dataclass(frozen=True)
class KktReport:
    primal: float
    dual: float
    gap: float
    cone_violation: float
    dual_cone_violation: float
    complementarity: float

    def within(self, settings):
        return (
            self.primal <= settings.eps_primal
            and self.dual <= settings.eps_dual
            and self.gap <= settings.eps_gap
        )


def verify_kkt(program, result):
    """Recompute all optimality residuals from scratch.

    Uses only the program data and the primal/dual points in ``result``;
    independent of any solver internals.
    """
    sense_flip = -1.0 if program.sense == "max" else 1.0
    c_min = sense_flip * program.objective
    z = result.x
    y = sense_flip * result.eq_dual
    lam = sense_flip * result.cone_dual
    r_p, r_d, gap = _kkt_residuals(program, c_min, z, y, lam)
    geometry = _ConeGeometry(program)
    cone_violation = max(0.0, -geometry.min_eigs(z)) if program.total_dim else 0.0
    dual_cone_violation = max(0.0, -geometry.min_eigs(lam))
    comp = abs(float(z @ lam)) / (1.0 + abs(float(c_min @ z)))
    return KktReport(
        primal=r_p,
        dual=r_d,
        gap=gap,
        cone_violation=cone_violation,
        dual_cone_violation=dual_cone_violation,
        complementarity=comp,
    )


def dump_program(program, path):
    """Self-describing text dump for cross-checking against external solvers."""
    lines = ["conic-program v1", f"sense {program.sense}"]
    lines.append("psd " + " ".join(str(d) for d in program.psd_block_dims))
    lines.append(f"nonneg {program.nonneg_count}")
    lines.append(f"free {program.free_count}")
    lines.append("objective " + " ".join(f"{v:.17g}" for v in program.objective))
    lines.append(f"rows {program.eq_matrix.shape[0]}")
    for rhs, row in zip(program.eq_rhs, program.eq_matrix):
        lines.append(f"{rhs:.17g} " + " ".join(f"{v:.17g}" for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_program(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if lines[0] != "conic-program v1":
        raise ValueError("not a conic program dump")
    sense = lines[1].split()[1]
    psd = [int(t) for t in lines[2].split()[1:]]
    nonneg = int(lines[3].split()[1])
    free = int(lines[4].split()[1])
    objective = np.array([float(t) for t in lines[5].split()[1:]])
    n_rows = int(lines[6].split()[1])
    rows, rhs = [], []
    for ln in lines[7 : 7 + n_rows]:
        vals = [float(t) for t in ln.split()]
        rhs.append(vals[0])
        rows.append(vals[1:])
    a = np.array(rows) if rows else np.zeros((0, objective.size))
    return ConeProgram(
        psd_block_dims=psd,
        nonneg_count=nonneg,
        free_count=free,
        objective=objective,
        eq_matrix=a,
        eq_rhs=np.array(rhs),
        sense=sense,
    )
