"""Variational EM for the multilayer mixed-membership block model."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from .graph import MultilayerGraph
from .model import Mode, ModelParams

logger = logging.getLogger(__name__)

# holdout: layer index -> (i, j) arrays of dyads excluded from training
Holdout = Mapping[int, tuple]

INIT_STRATEGIES = ("portfolio", "uniform")
# shrink factor for the damped half of w in leaning starts
LEAN = 0.1


@dataclass(frozen=True, eq=False)
class EdgeResponsibilities:
    """Per-edge distributions over group pairs.

    Rows follow the ordered edge list used by the fit: undirected dyads
    appear once per orientation and diagonal modes keep only ``k == l``
    mass (the arrays are still ``(E, K, K)``).
    """

    src: np.ndarray
    dst: np.ndarray
    layer: np.ndarray
    weight: np.ndarray
    rho: np.ndarray
    n_degenerate: int = 0


@dataclass
class EmConfig:
    k_groups: int
    mode: Mode | str = Mode.DIRECTED_FULL
    n_restarts: int = 5
    max_iterations: int = 500
    convergence_window: int = 10
    convergence_tolerance: float = 0.1
    check_every: int = 1
    seed: int = 0
    init_scale: float = 1.0
    allow_self_loops: Optional[bool] = None
    init: str = "portfolio"

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        if self.init not in INIT_STRATEGIES:
            raise ValueError(f"init must be one of {', '.join(INIT_STRATEGIES)}")
        for name in ("k_groups", "n_restarts", "max_iterations",
                     "convergence_window", "check_every"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.convergence_tolerance <= 0 or self.init_scale <= 0:
            raise ValueError("convergence_tolerance and init_scale must be positive")


@dataclass
class FitResult:
    params: ModelParams
    objective: float
    log_likelihood: float
    n_iterations: int
    restart_index: int
    converged: bool
    objective_trace: list = field(default_factory=list)
    restart_objectives: list = field(default_factory=list)
    n_degenerate: int = 0


def _ratio(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, int]:
    """``num / den`` with zero wherever the denominator vanishes."""
    ok = den > 0
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=ok)
    return out, int(np.count_nonzero(~ok & (num > 0)))


def _incidence(rows: np.ndarray, weights: np.ndarray, n_rows: int) -> sp.csr_matrix:
    n = len(rows)
    return sp.csr_matrix((weights, (rows, np.arange(n))), shape=(n_rows, n))


class _Design:
    """Ordered-dyad view of a training problem.

    Observed edges carry an effective weight ``m * A`` where ``m`` is the
    multiplicity of their ordered pair in the objective. Expected-count
    sums are evaluated over all ordered pairs in closed form and then
    corrected by ``(m - 1) * M_ij`` for every pair whose multiplicity is not
    one (excluded self-pairs, doubled undirected diagonals, held-out dyads).
    """

    def __init__(self, n, n_layers, K, mode, src, dst, lay, wt, ci, cj, cl, cc):
        self.n, self.n_layers, self.K, self.mode = n, n_layers, K, mode
        self.src, self.dst, self.lay, self.wt = src, dst, lay, wt
        self.ci, self.cj, self.cl, self.cc = ci, cj, cl, cc
        self.scale = 1.0 if mode.directed else 0.5
        self.S_src = _incidence(src, wt, n)
        self.S_dst = _incidence(dst, wt, n)
        self.S_lay = _incidence(lay, wt, n_layers)
        self.C_i = _incidence(ci, cc, n)
        self.C_j = _incidence(cj, cc, n)
        self.C_l = _incidence(cl, cc, n_layers)
        ones = np.ones(len(src))
        self.U_src = _incidence(src, ones, n)
        self.U_dst = _incidence(dst, ones, n)
        bounds = np.searchsorted(lay, np.arange(n_layers + 1))
        self.slices = [slice(bounds[a], bounds[a + 1]) for a in range(n_layers)]

    @classmethod
    def build(cls, graph: MultilayerGraph, mode: Mode, K: int,
              allow_self_loops: Optional[bool] = None,
              holdout: Optional[Holdout] = None) -> "_Design":
        mode = Mode.parse(mode)
        if mode.directed != graph.directed:
            raise ValueError(f"mode {mode.value} does not match a "
                             f"{'directed' if graph.directed else 'undirected'} graph")
        n, L = graph.n_nodes, graph.n_layers
        loops = graph.allow_self_loops if allow_self_loops is None else bool(allow_self_loops)
        directed = mode.directed
        diag_mult = (1 if loops else 0) if directed else (2 if loops else 0)

        held_keys = []
        for a, (hi, hj) in (holdout or {}).items():
            hi = np.asarray(hi, dtype=np.int64)
            hj = np.asarray(hj, dtype=np.int64)
            if not 0 <= a < L:
                raise IndexError("holdout layer out of range")
            if not directed:
                hi, hj = np.minimum(hi, hj), np.maximum(hi, hj)
            held_keys.append((a * n + hi) * n + hj)
        held = (np.unique(np.concatenate(held_keys)) if held_keys
                else np.zeros(0, dtype=np.int64))
        h_a, rem = np.divmod(held, n * n)
        h_i, h_j = np.divmod(rem, n)

        # observed edges
        g_src, g_dst, g_lay = graph.src, graph.dst, graph.layer
        g_w = graph.weight_values.astype(float)
        key = (g_lay * n + g_src) * n + g_dst
        mult = np.where(g_src == g_dst, float(diag_mult), 1.0)
        mult[np.isin(key, held)] = 0.0
        eff = g_w * mult
        if directed:
            src, dst, lay, wt = g_src, g_dst, g_lay, eff
        else:
            off = g_src != g_dst
            src = np.concatenate([g_src, g_dst[off]])
            dst = np.concatenate([g_dst, g_src[off]])
            lay = np.concatenate([g_lay, g_lay[off]])
            wt = np.concatenate([eff, eff[off]])
        keep = wt > 0
        order = np.lexsort((dst[keep], src[keep], lay[keep]))
        src, dst, lay, wt = (x[keep][order] for x in (src, dst, lay, wt))

        # multiplicity corrections
        ci, cj, cl, cc = [], [], [], []
        h_diag = h_i == h_j
        if diag_mult != 1:
            d_a, d_i = np.divmod(np.arange(L * n), n)
            d_key = (d_a * n + d_i) * n + d_i
            free = ~np.isin(d_key, held[h_diag])
            ci.append(d_i[free]); cj.append(d_i[free]); cl.append(d_a[free])
            cc.append(np.full(free.sum(), float(diag_mult - 1)))
        # held-out pairs drop to multiplicity zero
        ci.append(h_i[h_diag]); cj.append(h_i[h_diag]); cl.append(h_a[h_diag])
        cc.append(-np.ones(h_diag.sum()))
        oi, oj, oa = h_i[~h_diag], h_j[~h_diag], h_a[~h_diag]
        ci.append(oi); cj.append(oj); cl.append(oa); cc.append(-np.ones(len(oi)))
        if not directed:
            ci.append(oj); cj.append(oi); cl.append(oa); cc.append(-np.ones(len(oi)))
        ci, cj, cl, cc = (np.concatenate(x) for x in (ci, cj, cl, cc))
        nz = cc != 0
        return cls(n, L, K, mode, src, dst, lay, wt,
                   ci[nz].astype(np.int64), cj[nz].astype(np.int64),
                   cl[nz].astype(np.int64), cc[nz])

    # ---- expectation ---------------------------------------------------
    def _products(self, u, v, w):
        if self.mode.diagonal:
            wd = np.diagonal(w, axis1=1, axis2=2)
            return u[self.src] * v[self.dst] * wd[self.lay]
        return u[self.src][:, :, None] * v[self.dst][:, None, :] * w[self.lay]

    def _log_products(self, u, v, w):
        # summing logs avoids underflow of u * v * w when entries are tiny
        with np.errstate(divide="ignore"):
            lu, lv, lw = np.log(u), np.log(v), np.log(w)
        if self.mode.diagonal:
            lwd = np.diagonal(lw, axis1=1, axis2=2)
            return lu[self.src] + lv[self.dst] + lwd[self.lay]
        return lu[self.src][:, :, None] + lv[self.dst][:, None, :] + lw[self.lay]

    def estep(self, u, v, w):
        """Responsibilities and expected counts at the observed edges."""
        P = self._products(u, v, w)
        flat = P.reshape(len(P), int(np.prod(P.shape[1:])))
        M_e = flat.sum(axis=1)
        bad = M_e <= 0
        rho = np.empty_like(P)
        np.divide(P, M_e.reshape((-1,) + (1,) * (P.ndim - 1)), out=rho,
                  where=~bad.reshape((-1,) + (1,) * (P.ndim - 1)))
        n_bad = int(bad.sum())
        if n_bad:
            rho[bad] = 1.0 / flat.shape[1]
        return rho, M_e, n_bad

    def total_expected(self, u, v, w) -> float:
        """Expected edge count summed over the ordered training dyads."""
        su, sv = u.sum(axis=0), v.sum(axis=0)
        total = float(np.einsum("k,akl,l->", su, w, sv))
        if len(self.cc):
            X = np.einsum("ckl,cl->ck", w[self.cl], v[self.cj])
            total += float(np.dot(self.cc, np.einsum("ck,ck->c", u[self.ci], X)))
        return total

    def log_likelihood(self, u, v, w) -> float:
        _, M_e, _ = self.estep(u, v, w)
        if (M_e > 0).all():
            return self.objective_from(M_e, u, v, w)
        # some products underflowed; redo the edge terms in log space
        logP = self._log_products(u, v, w)
        logM = logsumexp(logP.reshape(len(logP), -1), axis=1)
        if np.isneginf(logM).any():
            return -np.inf
        return self.scale * (float(np.dot(self.wt, logM)) - self.total_expected(u, v, w))

    def objective_from(self, M_e, u, v, w) -> float:
        if (M_e <= 0).any():
            return -np.inf
        val = float(np.dot(self.wt, np.log(M_e))) - self.total_expected(u, v, w)
        return self.scale * val

    def variational(self, u, v, w, rho) -> float:
        logP = self._log_products(u, v, w)
        rho = self._rho_view(rho)
        pos = rho > 0
        if np.isneginf(logP[pos]).any():
            return -np.inf
        terms = np.zeros_like(rho)
        terms[pos] = rho[pos] * (logP[pos] - np.log(rho[pos]))
        val = float(np.dot(self.wt, terms.sum(axis=tuple(range(1, terms.ndim)))))
        return self.scale * (val - self.total_expected(u, v, w))

    def _rho_view(self, rho):
        if self.mode.diagonal and rho.ndim == 3:
            return np.diagonal(rho, axis1=1, axis2=2)
        return rho

    # ---- sufficient statistics -----------------------------------------
    def statistics(self, u, v, w):
        """Expected counts at the edges and the M-step numerators.

        Equivalent to forming the responsibilities and summing them, but
        never materialises the ``(E, K, K)`` array. Returns ``None`` for the
        numerators when some edge has zero expected count; callers then fall
        back to :meth:`estep`.
        """
        K = self.K
        E = len(self.src)
        M_e = np.empty(E)
        if self.mode.diagonal:
            wd = np.diagonal(w, axis1=1, axis2=2)
            P = u[self.src] * v[self.dst] * wd[self.lay]
            M_e = P.sum(axis=1)
            if (M_e <= 0).any():
                return M_e, None
            R = P * (self.wt / M_e)[:, None]
            num_u = self.U_src @ R
            num_v = self.U_dst @ R
            num_w = np.zeros((self.n_layers, K, K))
            num_w[:, np.arange(K), np.arange(K)] = self.S_lay @ (P / M_e[:, None])
            return M_e, (num_u, num_v, num_w)
        RT = np.empty((E, K))
        RQ = np.empty((E, K))
        num_w = np.zeros((self.n_layers, K, K))
        for a, sl in enumerate(self.slices):
            us, vd = u[self.src[sl]], v[self.dst[sl]]
            T = vd @ w[a].T
            m = np.einsum("ek,ek->e", us, T)
            M_e[sl] = m
            if (m <= 0).any():
                return M_e, None
            r = self.wt[sl] / m
            RT[sl] = T * r[:, None]
            RQ[sl] = (us @ w[a]) * r[:, None]
            num_w[a] = w[a] * ((us * r[:, None]).T @ vd)
        num_u = u * (self.U_src @ RT)
        num_v = v * (self.U_dst @ RQ)
        return M_e, (num_u, num_v, num_w)

    def numerators(self, rho):
        """M-step numerators from explicit responsibilities."""
        rho = self._rho_view(rho)
        K, L = self.K, self.n_layers
        num_u = self.S_src @ self._out_marginal(rho)
        num_v = self.S_dst @ self._in_marginal(rho)
        if rho.ndim == 2:
            num_w = np.zeros((L, K, K))
            num_w[:, np.arange(K), np.arange(K)] = self.S_lay @ rho
        else:
            num_w = (self.S_lay @ rho.reshape(len(rho), K * K)).reshape(L, K, K)
        return num_u, num_v, num_w

    # ---- maximization --------------------------------------------------
    def _out_marginal(self, rho):
        return rho if rho.ndim == 2 else rho.sum(axis=2)

    def _in_marginal(self, rho):
        return rho if rho.ndim == 2 else rho.sum(axis=1)

    def _u_step(self, num_u, v, w):
        den = np.tile(np.einsum("akl,l->k", w, v.sum(axis=0)), (self.n, 1))
        if len(self.cc):
            den += self.C_i @ np.einsum("ckl,cl->ck", w[self.cl], v[self.cj])
        return _ratio(num_u, den)

    def _v_step(self, num_v, u, w):
        den = np.tile(np.einsum("k,akl->l", u.sum(axis=0), w), (self.n, 1))
        if len(self.cc):
            den += self.C_j @ np.einsum("ck,ckl->cl", u[self.ci], w[self.cl])
        return _ratio(num_v, den)

    def _tied_step(self, num, u, w):
        # u == v: multiplicative minorize-maximize step, u <- sqrt(u * num / grad)
        s = u.sum(axis=0)
        W = w.sum(axis=0)
        grad = np.tile((W + W.T) @ s, (self.n, 1))
        if len(self.cc):
            grad += self.C_i @ np.einsum("ckl,cl->ck", w[self.cl], u[self.cj])
            grad += self.C_j @ np.einsum("ck,ckl->cl", u[self.ci], w[self.cl])
        step, n_bad = _ratio(num * u, grad)
        return np.sqrt(step), n_bad

    def _w_step(self, num_w, u, v):
        K, L = self.K, self.n_layers
        su, sv = u.sum(axis=0), v.sum(axis=0)
        if self.mode.diagonal:
            den = np.tile(su * sv, (L, 1))
            if len(self.cc):
                den += self.C_l @ (u[self.ci] * v[self.cj])
            wd, n_bad = _ratio(np.diagonal(num_w, axis1=1, axis2=2).copy(), den)
            out = np.zeros((L, K, K))
            out[:, np.arange(K), np.arange(K)] = wd
            return out, n_bad
        den = np.tile(np.outer(su, sv), (L, 1, 1))
        if len(self.cc):
            outer = (u[self.ci][:, :, None] * v[self.cj][:, None, :]).reshape(-1, K * K)
            den += (self.C_l @ outer).reshape(L, K, K)
        out, n_bad = _ratio(num_w, den)
        if not self.mode.directed:
            out = (out + out.transpose(0, 2, 1)) / 2
        return out, n_bad

    def update_u(self, u, v, w, rho):
        num_u, num_v, _ = self.numerators(rho)
        if not self.mode.directed:
            return self._tied_step(num_u + num_v, u, w)
        return self._u_step(num_u, v, w)

    def update_v(self, u, v, w, rho):
        num_u, num_v, _ = self.numerators(rho)
        if not self.mode.directed:
            return self._tied_step(num_u + num_v, u, w)
        return self._v_step(num_v, u, w)

    def update_w(self, u, v, w, rho):
        return self._w_step(self.numerators(rho)[2], u, v)

    def sweep(self, u, v, w, nums):
        """One maximization pass u, v, w, each using the freshest values."""
        num_u, num_v, num_w = nums
        if self.mode.directed:
            u, b1 = self._u_step(num_u, v, w)
            v, b2 = self._v_step(num_v, u, w)
        else:
            u, b1 = self._tied_step(num_u + num_v, u, w)
            v, b2 = u, 0
        w, b3 = self._w_step(num_w, u, v)
        return u, v, w, b1 + b2 + b3


def _initial(rng: np.random.Generator, n, L, K, mode: Mode, scale: float, lean: int = 0):
    """Random starting point, every entry uniform on (0, scale].

    ``lean`` 1 shrinks the off-diagonal affinities by :data:`LEAN`
    (assortative start), ``lean`` 2 shrinks the diagonal instead.
    """
    u = (1.0 - rng.random((n, K))) * scale
    v = u if not mode.directed else (1.0 - rng.random((n, K))) * scale
    w = (1.0 - rng.random((L, K, K))) * scale
    if not mode.directed:
        w = (w + w.transpose(0, 2, 1)) / 2
    eye = np.eye(K, dtype=bool)
    if mode.diagonal:
        return u, v, w * eye
    if lean == 1:
        w = w * np.where(eye, 1.0, LEAN)
    elif lean == 2 and K > 1:
        w = w * np.where(eye, LEAN, 1.0)
    return u, v, w


def _lean_for(config: EmConfig, restart: int) -> int:
    return restart % 3 if config.init == "portfolio" else 0


def _fit_once(design: _Design, config: EmConfig, rng, restart: int = 0):
    u, v, w = _initial(rng, design.n, design.n_layers, design.K,
                       design.mode, config.init_scale, _lean_for(config, restart))
    trace = []
    streak = 0
    converged = False
    n_bad = 0
    it = 0
    while True:
        M_e, nums = design.statistics(u, v, w)
        if nums is None:
            rho, M_e, bad = design.estep(u, v, w)
            n_bad += bad
            nums = design.numerators(rho)
        if it % config.check_every == 0 or it == config.max_iterations:
            obj = design.objective_from(M_e, u, v, w)
            if trace:
                streak = streak + 1 if obj - trace[-1] < config.convergence_tolerance else 0
            trace.append(obj)
            if streak >= config.convergence_window:
                converged = True
                break
        if it == config.max_iterations:
            break
        u, v, w, bad = design.sweep(u, v, w, nums)
        n_bad += bad
        it += 1
    return u, v, w, trace, it, converged, n_bad


def run_em(graph: MultilayerGraph, config: EmConfig,
           holdout: Optional[Holdout] = None) -> FitResult:
    """Fit the model with several random restarts and keep the best one.

    With ``config.init == "portfolio"`` restart ``r`` starts from an
    unstructured, assortative-leaning or disassortative-leaning affinity
    draw according to ``r % 3``; ``"uniform"`` uses unstructured draws only.

    The winner is the restart with the largest final objective; ties go to
    the lowest restart index. ``holdout`` removes dyads from training.
    """
    K = int(config.k_groups)
    if K > graph.n_nodes:
        raise ValueError(f"k_groups={K} exceeds the number of nodes ({graph.n_nodes})")
    if graph.n_edges == 0:
        raise ValueError("cannot fit an empty graph")
    design = _Design.build(graph, config.mode, K, config.allow_self_loops, holdout)
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_restarts)
    best = None
    objectives = []
    total_bad = 0
    for r, ss in enumerate(seeds):
        u, v, w, trace, n_it, conv, n_bad = _fit_once(
            design, config, np.random.default_rng(ss), r)
        total_bad += n_bad
        objectives.append(trace[-1])
        logger.debug("restart %d: objective %.6f after %d iterations", r, trace[-1], n_it)
        if best is None or trace[-1] > best[3][-1]:
            best = (u, v, w, trace, n_it, conv, r)
    u, v, w, trace, n_it, conv, r = best
    if total_bad:
        logger.warning("%d degenerate updates (zero denominators) during fitting", total_bad)
    params = ModelParams(u, v, w, design.mode)
    return FitResult(
        params=params,
        objective=trace[-1],
        log_likelihood=design.log_likelihood(u, v, w),
        n_iterations=n_it,
        restart_index=r,
        converged=conv,
        objective_trace=trace,
        restart_objectives=objectives,
        n_degenerate=total_bad,
    )


# ---- single-step public operations ------------------------------------

def _design_for(graph, params, allow_self_loops=None, holdout=None):
    if params.n_nodes != graph.n_nodes or params.n_layers != graph.n_layers:
        raise ValueError("graph and params disagree on N or L")
    return _Design.build(graph, params.mode, params.k_groups, allow_self_loops, holdout)


def update_rho(graph: MultilayerGraph, params: ModelParams,
               allow_self_loops=None, holdout=None) -> EdgeResponsibilities:
    d = _design_for(graph, params, allow_self_loops, holdout)
    rho, _, n_bad = d.estep(params.u, params.v, params.w)
    if rho.ndim == 2:
        full = np.zeros((len(rho), d.K, d.K))
        full[:, np.arange(d.K), np.arange(d.K)] = rho
        rho = full
    return EdgeResponsibilities(d.src, d.dst, d.lay, d.wt, rho, n_bad)


def _checked(d: _Design, rho: EdgeResponsibilities):
    if len(rho.rho) != len(d.src) or not np.array_equal(rho.src, d.src) \
            or not np.array_equal(rho.dst, d.dst):
        raise ValueError("responsibilities do not match the graph's edges")
    return rho.rho


def update_u(graph, params, rho: EdgeResponsibilities, allow_self_loops=None, holdout=None):
    d = _design_for(graph, params, allow_self_loops, holdout)
    return d.update_u(params.u, params.v, params.w, _checked(d, rho))[0]


def update_v(graph, params, rho: EdgeResponsibilities, allow_self_loops=None, holdout=None):
    d = _design_for(graph, params, allow_self_loops, holdout)
    return d.update_v(params.u, params.v, params.w, _checked(d, rho))[0]


def update_w(graph, params, rho: EdgeResponsibilities, allow_self_loops=None, holdout=None):
    d = _design_for(graph, params, allow_self_loops, holdout)
    return d.update_w(params.u, params.v, params.w, _checked(d, rho))[0]


def variational_objective(graph, params, rho: EdgeResponsibilities,
                          allow_self_loops=None, holdout=None) -> float:
    d = _design_for(graph, params, allow_self_loops, holdout)
    return d.variational(params.u, params.v, params.w, _checked(d, rho))
