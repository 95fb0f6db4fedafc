"""Sequential heading-length matching of a query against the HLG.

Each query segment is compared with straight paths of the graph by a
two-sided t-test on heading (Welch-Satterthwaite degrees of freedom) and a
z-test on length. Surviving hypotheses accumulate log-likelihoods; Otsu's
method on those log values separates a high-probability group, and the
vehicle is localized once that group holds a single hypothesis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DegenerateGeometryError, InvalidInputError, LocalizationLostError, NoIntersectionError
from .geo import LocalPoint, wrap_array
from .hlg import Hlg, long_successors, straight_paths, tls_fit

HEADING_LENGTH = "heading_length"
HEADING_ONLY = "heading_only"
MODES = (HEADING_LENGTH, HEADING_ONLY)


@dataclass(frozen=True)
class MatchConfig:
    alpha: float = 0.05
    mode: str = HEADING_LENGTH
    angle_tol: float = math.radians(10.0)
    max_candidates: int | None = None  # beam width carried between steps; None keeps all

    def __post_init__(self):
        if not 0 < self.alpha < 0.5:
            raise InvalidInputError("alpha must lie in (0, 0.5)")
        if self.mode not in MODES:
            raise InvalidInputError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class Candidate:
    start: int
    path: tuple[tuple[int, ...], ...]
    log_prob: float

    @property
    def last_vertex(self) -> int:
        return self.path[-1][-1] if self.path else self.start


class CandidateSet:
    """Hypotheses after k matched segments, stored column-wise.

    Entry i starts at vertex ``start[i]``; ``row[i]`` indexes the straight
    path it matched last in the graph's path table (-1 before any match) and
    ``parent[i]`` the hypothesis of ``prev`` it extends.
    """

    def __init__(self, k, start, row, log_prob, parent=None, prev=None, table=None):
        self.k = k
        self.start = np.asarray(start, dtype=np.int64)
        self.row = np.asarray(row, dtype=np.int64)
        self.log_prob = np.asarray(log_prob, dtype=float)
        self.parent = None if parent is None else np.asarray(parent, dtype=np.int64)
        self.prev = prev
        self.table = table
        self._cands = None

    def __len__(self):
        return len(self.start)

    def take(self, idx) -> "CandidateSet":
        idx = np.asarray(idx, dtype=np.int64)
        parent = None if self.parent is None else self.parent[idx]
        return CandidateSet(self.k, self.start[idx], self.row[idx], self.log_prob[idx], parent, self.prev,
                            self.table)

    def path_of(self, i: int) -> tuple[tuple[int, ...], ...]:
        chains = []
        node, j = self, int(i)
        while node is not None and node.k > 0:
            chains.append(node.table.chains[node.row[j]])
            j = int(node.parent[j])
            node = node.prev
        return tuple(reversed(chains))

    def candidate(self, i: int) -> Candidate:
        return Candidate(int(self.start[i]), self.path_of(i), float(self.log_prob[i]))

    @property
    def candidates(self) -> list[Candidate]:
        if self._cands is None:
            self._cands = [self.candidate(i) for i in range(len(self))]
        return self._cands

    def to_json(self) -> str:
        return json.dumps({
            "k": self.k,
            "candidates": [
                {"start": c.start, "path": [list(ch) for ch in c.path], "log_prob": c.log_prob}
                for c in self.candidates
            ],
        }, sort_keys=True)


def initial_candidates(g: Hlg) -> CandidateSet:
    longs = np.array(g.long_index, dtype=np.int64)
    lp = -math.log(len(longs)) if len(longs) else 0.0
    return CandidateSet(0, longs, np.full(len(longs), -1), np.full(len(longs), lp))

# ------------------------------------------------------------- pair statistics


def welch_dof(var_q, n_q, var_m, n_m):
    """Welch-Satterthwaite degrees of freedom for the two heading variances.

    The query mean carries n_q - 1 degrees of freedom and the map line fit
    n_m - 2 (at least one).
    """
    var_q = np.asarray(var_q, dtype=float)
    var_m = np.asarray(var_m, dtype=float)
    dq = np.maximum(np.asarray(n_q, dtype=float) - 1.0, 1.0)
    dm = np.maximum(np.asarray(n_m, dtype=float) - 2.0, 1.0)
    return (var_q + var_m) ** 2 / (var_q ** 2 / dq + var_m ** 2 / dm)


def pair_statistics_arrays(q, theta, theta_var, d, d_var, n_points):
    t = wrap_array(q.theta_mean - np.asarray(theta)) / np.sqrt(q.theta_var + np.asarray(theta_var))
    nu = welch_dof(q.theta_var, q.n_obs, theta_var, n_points)
    z = (q.d_mean - np.asarray(d)) / np.sqrt(np.asarray(d_var) + q.d_var)
    return t, nu, z


def pair_statistics(q, m) -> tuple[float, float, float]:
    """(t, nu, z) for a query segment against a straight-path aggregate.

    `q.theta_var` is the variance of the segment's mean heading.
    """
    for name, val in (("query theta_var", q.theta_var), ("query d_var", q.d_var),
                      ("map theta_var", m.theta_var), ("map d_var", m.d_var)):
        if not val > 0:
            raise InvalidInputError(f"{name} must be positive")
    n_m = getattr(m, "n_points", 2)
    t, nu, z = pair_statistics_arrays(q, m.theta_mean, m.theta_var, m.d_mean, m.d_var, n_m)
    return float(t), float(nu), float(z)


def t_critical(alpha, nu):
    return special.stdtrit(nu, 1.0 - alpha / 2.0)


def z_critical(alpha):
    return float(special.ndtri(1.0 - alpha / 2.0))


def pair_test(t, nu, z, alpha: float, mode: str = HEADING_LENGTH):
    """Accept when neither the heading t-test nor (if used) the length z-test rejects."""
    if not 0 < alpha < 0.5:
        raise InvalidInputError("alpha must lie in (0, 0.5)")
    ok = np.abs(t) <= t_critical(alpha, nu)
    if mode == HEADING_LENGTH:
        ok = ok & (np.abs(z) <= z_critical(alpha))
    return ok if np.ndim(ok) else bool(ok)


def t_logpdf(t, nu):
    t = np.asarray(t, dtype=float)
    nu = np.asarray(nu, dtype=float)
    return (special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2) - 0.5 * np.log(nu * math.pi)
            - (nu + 1) / 2 * np.log1p(t * t / nu))


def norm_logpdf(z):
    z = np.asarray(z, dtype=float)
    return -0.5 * z * z - 0.5 * math.log(2 * math.pi)


def pair_likelihood(t, nu, z, mode: str = HEADING_LENGTH):
    out = t_logpdf(t, nu)
    if mode == HEADING_LENGTH:
        out = out + norm_logpdf(z)
    return out if np.ndim(out) else float(out)


# ------------------------------------------------------------------ matching


class _PathTable:
    """Straight paths of the graph as flat arrays.

    ``own`` maps a vertex to the rows of paths starting at it; ``succ`` maps a
    vertex to the rows of paths starting at any of its long successors. Both
    are CSR arrays indexed by vertex id.
    """

    def __init__(self, g: Hlg, angle_tol: float):
        n_v = len(g.vertices)
        chains, cols = [], []
        own_lo = np.zeros(n_v, dtype=np.int64)
        own_hi = np.zeros(n_v, dtype=np.int64)
        for v in g.long_index:
            paths = straight_paths(g, v, angle_tol)
            own_lo[v] = len(chains)
            for p in paths:
                chains.append(p.vertices)
                cols.append((p.theta_mean, p.theta_var, p.d_mean, p.d_var, p.n_points))
            own_hi[v] = len(chains)
        self.chains = chains
        arr = np.array(cols, dtype=float).reshape(-1, 5)
        self.theta, self.theta_var, self.d, self.d_var, self.n_points = arr.T
        self.last = np.array([c[-1] for c in chains], dtype=np.int64)
        self.first = np.array([c[0] for c in chains], dtype=np.int64)
        self.own_ptr = np.concatenate([[0], np.cumsum(own_hi - own_lo)])
        self.own_idx = np.arange(len(chains), dtype=np.int64)
        ends = set(self.last.tolist())
        succ_rows = []
        for v in range(n_v):
            rows = [np.arange(own_lo[s], own_hi[s]) for s in long_successors(g, v, angle_tol)] if v in ends else []
            succ_rows.append(np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64))
        self.succ_ptr = np.concatenate([[0], np.cumsum([len(r) for r in succ_rows])]).astype(np.int64)
        self.succ_idx = np.concatenate(succ_rows).astype(np.int64)


def _table(g: Hlg, angle_tol: float) -> _PathTable:
    cache = g._cache
    tab = cache.get(angle_tol)
    if tab is None:
        tab = cache[angle_tol] = _PathTable(g, angle_tol)
    return tab


def _expand(ptr, idx, keys):
    """Rows listed in CSR (ptr, idx) for every key, with the position of the key."""
    lo = ptr[keys]
    cnt = ptr[keys + 1] - lo
    total = int(cnt.sum())
    parent = np.repeat(np.arange(len(keys)), cnt)
    within = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    return idx[np.repeat(lo, cnt) + within], parent


def match_step(g: Hlg, prev: CandidateSet, q, cfg: MatchConfig = MatchConfig()) -> CandidateSet:
    """Extend every hypothesis by one straight path and keep those passing both tests.

    Hypotheses without a path yet (the initial set) expand from their own
    start vertex; others expand from long successors of their last vertex
    that change heading.
    """
    if len(prev) == 0:
        raise LocalizationLostError("no candidates left to extend")
    tab = _table(g, cfg.angle_tol)
    if prev.k == 0:
        rows, parent = _expand(tab.own_ptr, tab.own_idx, prev.start)
    else:
        rows, parent = _expand(tab.succ_ptr, tab.succ_idx, tab.last[prev.row])
    if len(rows) == 0:
        return CandidateSet(prev.k + 1, [], [], [], [], prev, tab)
    t, nu, z = pair_statistics_arrays(q, tab.theta[rows], tab.theta_var[rows], tab.d[rows], tab.d_var[rows],
                                      tab.n_points[rows])
    keep = pair_test(t, nu, z, cfg.alpha, cfg.mode)
    if not np.any(keep):
        return CandidateSet(prev.k + 1, [], [], [], [], prev, tab)
    rows, parent = rows[keep], parent[keep]
    lp = prev.log_prob[parent] + pair_likelihood(t[keep], nu[keep], z[keep], cfg.mode)
    lp = lp - lp.max()
    start = tab.first[rows] if prev.k == 0 else prev.start[parent]
    order = np.argsort(start, kind="stable")
    return CandidateSet(prev.k + 1, start[order], rows[order], lp[order], parent[order], prev, tab)


def otsu_high_mask(values) -> np.ndarray:
    """Boolean mask of the high group maximizing between-class variance.

    Exhaustive search over thresholds between distinct values; with a single
    distinct value everything stays in the high group.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        return np.zeros(0, dtype=bool)
    xs = np.sort(x)
    levels = np.unique(xs)
    if levels.size == 1:
        return np.ones(x.size, dtype=bool)
    n = xs.size
    csum = np.cumsum(xs)
    # split after the last copy of each distinct level except the top one
    cut = np.searchsorted(xs, levels[:-1], side="right")
    w0 = cut / n
    m0 = csum[cut - 1] / cut
    m1 = (csum[-1] - csum[cut - 1]) / (n - cut)
    between = w0 * (1 - w0) * (m1 - m0) ** 2
    return x > levels[int(np.argmax(between))]


def otsu_split(values) -> tuple[list[int], list[int]]:
    """Indices of the high and low groups of `values` (see otsu_high_mask)."""
    mask = otsu_high_mask(values)
    return np.flatnonzero(mask).tolist(), np.flatnonzero(~mask).tolist()


# ------------------------------------------------------------------ localize


@dataclass(frozen=True)
class Fix:
    candidate: Candidate
    vertex: int
    position: LocalPoint
    heading: float


@dataclass
class LocalizeResult:
    status: str  # "fix" or "pending"
    k: int
    n_solutions: int
    high: CandidateSet
    fix: Fix | None = None
    restarted: bool = False


def chain_points(g: Hlg, chain) -> np.ndarray:
    return np.vstack([g.vertices[v].points for v in chain])


def _intersect(c1, u1, c2, u2):
    n2 = np.array([-u2[1], u2[0]])
    den = float(n2 @ u1)
    if abs(den) < 1e-3:
        raise NoIntersectionError("near-parallel lines")
    return c1 + (float(n2 @ (c2 - c1)) / den) * u1


def chain_line(g: Hlg, chain):
    """Centroid and unit direction of the line fitted to a chain's waypoints."""
    pts = chain_points(g, chain)
    try:
        c, u, _, _ = tls_fit(pts)
    except DegenerateGeometryError:
        c, u = pts[0], (pts[-1] - pts[0]) / np.linalg.norm(pts[-1] - pts[0])
    return pts, c, u


def chain_corner(g: Hlg, chain, other) -> np.ndarray | None:
    """Intersection of the fitted lines of two chains, or None when near-parallel."""
    _, c, u = chain_line(g, chain)
    _, c0, u0 = chain_line(g, other)
    try:
        return _intersect(c, u, c0, u0)
    except NoIntersectionError:
        return None


def chain_end(g: Hlg, chain, nxt=None) -> np.ndarray:
    """Virtual end of `chain`: the corner with chain `nxt`, else the projection of its last waypoint."""
    if nxt is not None:
        p = chain_corner(g, chain, nxt)
        if p is not None:
            return p
    pts, c, u = chain_line(g, chain)
    return c + float((pts[-1] - c) @ u) * u


def chain_start(g: Hlg, path) -> tuple[np.ndarray, np.ndarray]:
    """Virtual start of the last chain of `path` and its unit direction.

    The start is the intersection with the previous chain's fitted line when
    there is one, else the projection of the chain's first waypoint.
    """
    pts, c, u = chain_line(g, path[-1])
    start = c + float((pts[0] - c) @ u) * u
    if len(path) > 1:
        _, c0, u0 = chain_line(g, path[-2])
        try:
            start = _intersect(c, u, c0, u0)
        except NoIntersectionError:
            pass
    return start, u


def fix_position(g: Hlg, cand: Candidate, d_q: float):
    """Point at distance d_q along the last chain's fitted line from its virtual start."""
    start, u = chain_start(g, cand.path)
    p = start + d_q * u
    heading = math.atan2(u[0], u[1])
    return LocalPoint(float(p[0]), float(p[1])), heading


class GlobalLocalizer:
    """Runs match_step and Otsu per query segment until a unique hypothesis remains."""

    def __init__(self, g: Hlg, cfg: MatchConfig = MatchConfig()):
        self.g = g
        self.cfg = cfg
        self.cands = initial_candidates(g)
        self.restarts = 0
        self.history: list[CandidateSet] = []

    def reset(self):
        self.cands = initial_candidates(self.g)

    def _match(self, q) -> CandidateSet:
        if len(self.cands) == 0:
            return CandidateSet(self.cands.k + 1, [], [], [])
        return match_step(self.g, self.cands, q, self.cfg)

    def step(self, q) -> LocalizeResult:
        restarted = False
        if len(self.cands) == 0:
            self.reset()
        nxt = self._match(q)
        if len(nxt) == 0 and self.cands.k > 0:
            # lost: start over, treating this segment as the first one
            self.restarts += 1
            restarted = True
            self.reset()
            nxt = self._match(q)
        high = nxt.take(np.flatnonzero(otsu_high_mask(nxt.log_prob)))
        cap = self.cfg.max_candidates
        # the reported count is the full high group; only the beam is propagated
        if cap is not None and len(high) > cap:
            keep = np.sort(np.argsort(-high.log_prob, kind="stable")[:cap])
            self.cands = high.take(keep)
        else:
            self.cands = high
        self.history.append(nxt)
        if len(high) == 1:
            cand = high.candidate(0)
            pos, heading = fix_position(self.g, cand, q.d_mean)
            fix = Fix(cand, cand.last_vertex, pos, heading)
            return LocalizeResult("fix", nxt.k, 1, high, fix, restarted)
        return LocalizeResult("pending", nxt.k, len(high), high, None, restarted)


def localize(g: Hlg, query, cfg: MatchConfig = MatchConfig()) -> LocalizeResult:
    """Feed query segments in order; stop at the first fix."""
    gl = GlobalLocalizer(g, cfg)
    res = LocalizeResult("pending", 0, len(gl.cands), gl.cands)
    for q in query:
        res = gl.step(q)
        if res.status == "fix":
            break
    return res


# ------------------------------------------------------------------ analysis


@dataclass(frozen=True)
class AnalysisParams:
    n_v: int
    n_b: int
    k_d: int
    k_l: int
    alpha: float
    n: int

    def __post_init__(self):
        if min(self.n_v, self.n_b, self.k_d, self.k_l, self.n) < 1:
            raise InvalidInputError("counts must be positive")
        if not 0 < self.alpha < 0.5:
            raise InvalidInputError("alpha must lie in (0, 0.5)")


@dataclass(frozen=True)
class MatchProbability:
    value: float  # clamped to [0, 1]
    raw: float
    out_of_range: bool


def predicted_match_probability(p: AnalysisParams, mode: str = HEADING_LENGTH) -> MatchProbability:
    """Closed-form probability that the surviving sequence is the true one."""
    if mode == HEADING_LENGTH:
        r = (1 - p.alpha) ** 2 * p.k_d * p.k_l
    else:
        r = (1 - p.alpha) * p.k_d
    raw = (r / p.n_v) * (r / p.n_b) ** (p.n - 1)
    return MatchProbability(min(max(raw, 0.0), 1.0), raw, not 0.0 <= raw <= 1.0)


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    stderr: float
    pass_rate: float  # P(all tests pass | true path)
    prior: float  # P(true path) = 1 / number of walks
    label_match: float  # P(a walk carries the query labels)


@dataclass
class _RandomModel:
    adj: np.ndarray  # (n_v, n_b) out-neighbours
    hlabel: np.ndarray
    llabel: np.ndarray


def _random_model(p: AnalysisParams, rng) -> _RandomModel:
    adj = rng.integers(0, p.n_v, size=(p.n_v, p.n_b))
    return _RandomModel(adj, rng.integers(0, p.k_d, p.n_v), rng.integers(0, p.k_l, p.n_v))


def _random_walks(model: _RandomModel, n: int, trials: int, rng) -> np.ndarray:
    n_v, n_b = model.adj.shape
    w = np.empty((trials, n), dtype=int)
    w[:, 0] = rng.integers(0, n_v, trials)
    for i in range(1, n):
        w[:, i] = model.adj[w[:, i - 1], rng.integers(0, n_b, trials)]
    return w


def _count_walks(adj: np.ndarray, n: int) -> float:
    n_v = adj.shape[0]
    counts = np.ones(n_v)
    for _ in range(n - 1):
        # walks of the current length ending at each vertex, pushed one step forward
        counts = np.bincount(adj.ravel(), weights=np.repeat(counts, adj.shape[1]), minlength=n_v)
    return float(counts.sum())


def monte_carlo_match_probability(p: AnalysisParams, trials: int = 10_000, seed: int = 0,
                                  mode: str = HEADING_LENGTH, n_obs: int = 20,
                                  sigma_theta: float = math.radians(5.0), sigma_d: float = 5.0 * math.sqrt(2)):
    """Monte-Carlo evaluation of the match-probability model on random graphs.

    A graph with n_v vertices and n_b random out-neighbours each receives
    uniform heading and length labels. Three factors are measured: the
    probability that a noisy observation of the true path passes every test
    (heading from n_obs noisy samples with a t-test, length with a z-test),
    the prior of the true path (one over the exact number of walks), and the
    per-position probability that a random walk carries uniformly drawn
    query labels.
    The estimate is pass_rate * prior / label_match with a delta-method
    standard error.
    """
    rng = np.random.default_rng(seed)
    model = _random_model(p, rng)
    n = p.n

    # heading: mean of n_obs samples against the label, t-test with n_obs - 1 dof
    samples = rng.normal(0.0, sigma_theta, size=(trials, n, n_obs))
    mean = samples.mean(axis=2)
    sd = samples.std(axis=2, ddof=1)
    t = mean / (sd / math.sqrt(n_obs))
    ok = np.abs(t) <= t_critical(p.alpha, n_obs - 1)
    if mode == HEADING_LENGTH:
        z = rng.normal(0.0, 1.0, size=(trials, n))
        ok &= np.abs(z) <= z_critical(p.alpha)
    passed = ok.all(axis=1)
    a = float(passed.mean())
    var_a = a * (1 - a) / trials

    prior = 1.0 / _count_walks(model.adj, n)

    # query labels are uniform under the model; compare them with random walks
    walks = _random_walks(model, n, trials, rng)
    match = model.hlabel[walks] == rng.integers(0, p.k_d, (trials, n))
    if mode == HEADING_LENGTH:
        match &= model.llabel[walks] == rng.integers(0, p.k_l, (trials, n))
    b = match.mean(axis=0)
    if np.any(b == 0):
        raise InvalidInputError("too few trials to observe a label match")
    label_match = float(np.prod(b))
    value = a * prior / label_match
    rel_var = (var_a / a ** 2 if a > 0 else 0.0) + float(np.sum(b * (1 - b) / trials / b ** 2))
    return MonteCarloEstimate(value, value * math.sqrt(rel_var), a, prior, label_match)


def survivor_counts(p: AnalysisParams, trials: int = 200, seed: int = 0, n_obs: int = 20,
                    sigma_theta: float = math.radians(5.0), sigma_g: float = 5.0,
                    length_step: float = 100.0) -> dict:
    """Mean number of wrong walks passing all tests, per mode, on random labelled graphs.

    Labels become concrete values: heading level j -> 2 pi j / k_d, length
    level i -> length_step * (i + 1). Each trial draws a true walk, observes
    it with noise and counts every other walk of length n that survives.
    """
    rng = np.random.default_rng(seed)
    model = _random_model(p, rng)
    theta = 2 * math.pi * model.hlabel / p.k_d
    length = length_step * (model.llabel + 1.0)
    map_theta_var = 1e-6
    d_var = 2 * sigma_g ** 2
    totals = {HEADING_ONLY: [], HEADING_LENGTH: []}
    for _ in range(trials):
        walk = _random_walks(model, p.n, 1, rng)[0]
        counts = {m: np.ones(p.n_v) for m in totals}
        true_ok = {m: True for m in totals}
        for i, v in enumerate(walk):
            samples = theta[v] + rng.normal(0, sigma_theta, n_obs)
            q_theta = math.atan2(np.mean(np.sin(samples)), np.mean(np.cos(samples)))
            q_var = float(np.var(samples, ddof=1)) / n_obs
            q_d = length[v] + rng.normal(0, math.sqrt(2 * d_var))
            tt = wrap_array(q_theta - theta) / np.sqrt(q_var + map_theta_var)
            nu = welch_dof(q_var, n_obs, map_theta_var, 1e9)
            zz = (q_d - length) / math.sqrt(2 * d_var)
            for m in totals:
                ok = pair_test(tt, nu, zz, p.alpha, m).astype(float)
                c = counts[m]
                if i > 0:
                    c = np.bincount(model.adj.ravel(), weights=np.repeat(c, p.n_b), minlength=p.n_v)
                counts[m] = c * ok
                true_ok[m] = true_ok[m] and bool(ok[v])
        for m in totals:
            # only wrong walks measure how fast the tests prune hypotheses
            totals[m].append(counts[m].sum() - (1.0 if true_ok[m] else 0.0))
    return {m: float(np.mean(v)) for m, v in totals.items()}
