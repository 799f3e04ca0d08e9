"""Training: self-paced region assignment, latent imputation, and the
1-slack cutting-plane solver inside a CCCP outer loop.

Supervision levels:

* ``full``     -- intervals carry their region; actionlet labels are fixed
                  wherever an interval covers a frame of its region.
* ``temporal`` -- intervals carry times only; each covered frame constrains
                  its actionlets to those of the annotated actions, in every
                  region, and the region assignment is initialized by the
                  self-paced assignment problem.
* ``video``    -- only the complex action label is used for constraints and
                  loss; intervals, when present, still seed initialization.

The margin-rescaling loss is a constant for a wrong complex action plus a
per-frame penalty, applied in one designated region, for actionlets outside
the frame's allowed set. Keeping the per-frame term in a single region keeps
loss-augmented inference an exact per-region DP.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dictionaries import (ActionletDictionary, assign_labels,
                           build_actionlets, chi2, gc_init,
                           interval_histogram, kmeans)
from .energy import Labeling, ModelDims, ModelParams, energy_total, feature_map
from .inference import (FrameConstraints, LossSpec, complete_latent,
                        loss_augmented_infer_many, loss_value)
from .skeleton import ActionInterval

log = logging.getLogger(__name__)

SUPERVISION_LEVELS = ("full", "temporal", "video")


@dataclass
class TrainConfig:
    """Hyperparameters of the trainer; defaults follow the reference setup
    (loss weights 100 / 25, 20% garbage-collector initialization, beam 400).
    """
    C: float = 100.0
    lambda_y: float = 100.0
    lambda_v: float = 25.0
    eps_qp: float | None = None       # None: 1e-3 x the initial loss scale
    max_cccp_iters: int = 6
    max_cutting_plane_iters: int = 500
    beam: int | None = 400            # None: exact inference
    seed: int = 0
    gc_fraction: float = 0.20
    use_gc: bool = True
    beta_includes_gc: bool = True
    scree_c: float = 2e-3
    self_pace_lambda0: float | None = None   # None: data-driven scale
    self_pace_decay: float = 0.5
    self_pace_rounds: int = 5
    supervision: str = "temporal"
    loss_region: int = 0
    cccp_tol: float = 1e-4

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.lambda_y < 0 or self.lambda_v < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.eps_qp is not None and self.eps_qp <= 0:
            raise ValueError("eps_qp must be positive")
        if not 0 <= self.gc_fraction < 1:
            raise ValueError("gc_fraction must be in [0, 1)")
        if self.supervision not in SUPERVISION_LEVELS:
            raise ValueError(f"supervision must be one of {SUPERVISION_LEVELS}")


@dataclass
class TrainingVideo:
    """One training example: descriptors, class label, and annotations."""
    video_id: str
    x: np.ndarray                     # (T, R, D)
    y: int
    intervals: list[ActionInterval] = field(default_factory=list)

    @property
    def num_frames(self) -> int:
        return self.x.shape[0]


# ---------------------------------------------------------------------------
# Self-paced assignment of action intervals to regions (problem P1)
# ---------------------------------------------------------------------------

@dataclass
class AssignmentProblem:
    """Per-video inputs of the region-assignment problem.

    ``histograms`` is (R, Q, K): the poselet histogram of each interval in
    each region. ``overlaps`` lists interval index pairs that overlap in
    time and therefore exclude each other within any single region.
    """
    video_id: str
    actions: np.ndarray               # (Q,)
    histograms: np.ndarray            # (R, Q, K)
    overlaps: list[tuple[int, int]]


@dataclass
class P1Result:
    assignments: list[np.ndarray]     # per video, (R, Q) bool
    means: np.ndarray                 # (R, S, K)
    objective_trace: list[list[float]]   # per self-pace round
    infeasible: list[str] = field(default_factory=list)

    def check_feasible(self, problems: list[AssignmentProblem]) -> list[str]:
        """Exhaustively verify both constraint families on every video."""
        bad = []
        for prob, b in zip(problems, self.assignments):
            for q in range(prob.actions.shape[0]):
                if not b[:, q].any():
                    bad.append(f"{prob.video_id}: interval {q} unassigned")
            for q1, q2 in prob.overlaps:
                for r in range(b.shape[0]):
                    if b[r, q1] and b[r, q2]:
                        bad.append(f"{prob.video_id}: intervals {q1},{q2} "
                                   f"collide in region {r}")
        return bad


def assign_regions(costs: np.ndarray, overlaps: list[tuple[int, int]],
                   inv_lambda: float = 0.0) -> tuple[np.ndarray, bool]:
    """Solve one video's assignment: minimize sum b*(cost - inv_lambda).

    Subject to: every interval gets at least one region, and overlapping
    intervals never share a region. Small instances (R*Q <= 20) are solved
    exactly by enumerating supports; larger ones by an LP relaxation rounded
    at 0.5 with greedy feasibility repair. Returns (b, feasible); when the
    overlap structure makes coverage impossible, coverage wins, the overlap
    violation stays, and ``feasible`` is False.
    """
    costs = np.asarray(costs, dtype=float)
    R, Q = costs.shape
    if R * Q <= 20:
        return _ExactAssigner(R, Q, overlaps).solve(costs - inv_lambda)
    return _assign_lp(costs - inv_lambda, overlaps, R, Q)


class _ExactAssigner:
    """Enumeration solver with the feasible supports precomputed once, so
    repeated b-steps on the same overlap structure only price them."""

    def __init__(self, R: int, Q: int, overlaps: list[tuple[int, int]]):
        self.R, self.Q = R, Q
        n = R * Q
        masks = np.arange(2 ** n, dtype=np.int64)
        bits = ((masks[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
        feas = np.ones(len(masks), dtype=bool)
        for q in range(Q):
            feas &= bits[:, q::Q].any(axis=1)   # bit r*Q+q covers (r, q)
        for q1, q2 in overlaps:
            for r in range(R):
                feas &= ~(bits[:, r * Q + q1] & bits[:, r * Q + q2])
        self.supports = bits[feas]              # ascending mask order
        self.infeasible_structure = not feas.any()

    def solve(self, eff: np.ndarray) -> tuple[np.ndarray, bool]:
        R, Q = self.R, self.Q
        if self.infeasible_structure:
            # Coverage is impossible without overlap collisions: cover each
            # interval at its cheapest region anyway and report.
            b = np.zeros((R, Q), dtype=bool)
            b[np.argmin(eff, axis=0), np.arange(Q)] = True
            return b, False
        total = self.supports @ eff.reshape(-1)
        pick = int(np.argmin(total))            # ties: lowest mask value
        return self.supports[pick].reshape(R, Q).copy(), True


def _assign_lp(eff, overlaps, R, Q):
    from scipy.optimize import linprog

    n = R * Q
    A_ub, b_ub = [], []
    for q in range(Q):
        row = np.zeros(n)
        row[q::Q] = -1.0              # -sum_r b[r,q] <= -1
        A_ub.append(row)
        b_ub.append(-1.0)
    for q1, q2 in overlaps:
        for r in range(R):
            row = np.zeros(n)
            row[r * Q + q1] = 1.0
            row[r * Q + q2] = 1.0
            A_ub.append(row)
            b_ub.append(1.0)
    res = linprog(eff.reshape(-1), A_ub=np.asarray(A_ub),
                  b_ub=np.asarray(b_ub), bounds=(0.0, 1.0), method="highs")
    if res.x is None:                 # infeasible or solver failure
        b = np.zeros((R, Q), dtype=bool)
        b[np.argmin(eff, axis=0), np.arange(Q)] = True
        return _repair(b, eff, overlaps) if res.status != 2 else (b, False)
    b = (res.x.reshape(R, Q) > 0.5)
    return _repair(b, eff, overlaps)


def _repair(b, eff, overlaps):
    """Greedy feasibility repair: drop the costlier side of each overlap
    collision, then cover unassigned intervals at their cheapest legal
    region."""
    R, Q = b.shape
    for q1, q2 in overlaps:
        for r in range(R):
            if b[r, q1] and b[r, q2]:
                b[r, q1 if eff[r, q1] >= eff[r, q2] else q2] = False
    feasible = True
    for q in range(Q):
        if b[:, q].any():
            continue
        legal = np.ones(R, dtype=bool)
        for q1, q2 in overlaps:
            other = q2 if q1 == q else (q1 if q2 == q else None)
            if other is not None:
                legal &= ~b[:, other]
        if legal.any():
            cost = np.where(legal, eff[:, q], np.inf)
            b[int(np.argmin(cost)), q] = True
        else:
            b[int(np.argmin(eff[:, q])), q] = True
            feasible = False
    return b, feasible


def _p1_means(problems: list[AssignmentProblem],
              assignments: list[np.ndarray], num_actions: int,
              num_regions: int, num_bins: int) -> np.ndarray:
    """Mean selected histogram per (region, action); fall back to the
    action's global mean over all regions when nothing is selected."""
    means = np.zeros((num_regions, num_actions, num_bins))
    global_sum = np.zeros((num_actions, num_bins))
    global_cnt = np.zeros(num_actions)
    sums = np.zeros_like(means)
    cnts = np.zeros((num_regions, num_actions))
    for prob, b in zip(problems, assignments):
        for q, action in enumerate(prob.actions):
            global_sum[action] += prob.histograms[:, q].sum(axis=0)
            global_cnt[action] += num_regions
            for r in range(num_regions):
                if b[r, q]:
                    sums[r, action] += prob.histograms[r, q]
                    cnts[r, action] += 1
    for s in range(num_actions):
        fallback = (global_sum[s] / global_cnt[s]) if global_cnt[s] > 0 \
            else np.zeros(num_bins)
        for r in range(num_regions):
            means[r, s] = sums[r, s] / cnts[r, s] if cnts[r, s] > 0 \
                else fallback
    return means


def _p1_costs(prob: AssignmentProblem, means: np.ndarray) -> np.ndarray:
    R, Q = prob.histograms.shape[:2]
    costs = np.empty((R, Q))
    for r in range(R):
        for q in range(Q):
            costs[r, q] = chi2(prob.histograms[r, q],
                               means[r, prob.actions[q]])
    return costs


def _p1_objective(problems, assignments, means, inv_lambda) -> float:
    total = 0.0
    for prob, b in zip(problems, assignments):
        costs = _p1_costs(prob, means)
        total += float(np.sum(b * (costs - inv_lambda)))
    return total


def solve_p1(problems: list[AssignmentProblem], num_actions: int,
             lambda0: float | None = None, decay: float = 0.5,
             rounds: int = 5, max_alternations: int = 20) -> P1Result:
    """Self-paced alternation between assignment means and region labels.

    The first round uses 1/lambda = 0 (minimal assignments); subsequent
    rounds shrink lambda by ``decay``, making extra region assignments
    progressively cheaper. Each half step is kept only if it does not
    increase the round's objective, so the per-round objective trace is
    non-increasing by construction.
    """
    if not problems:
        raise ValueError("no assignment problems given")
    R, _, K = problems[0].histograms.shape
    all_ones = [np.ones((R, p.actions.shape[0]), dtype=bool)
                for p in problems]
    means = _p1_means(problems, all_ones, num_actions, R, K)

    if lambda0 is None:
        scale = np.mean([_p1_costs(p, means).mean() for p in problems])
        lambda0 = 8.0 / max(scale, 1e-9)
    inv_lambdas = [0.0] + [1.0 / (lambda0 * decay ** i) for i in range(rounds)]

    infeasible: list[str] = []
    trace_all: list[list[float]] = []
    solvers = [_ExactAssigner(R, p.actions.shape[0], p.overlaps)
               if R * p.actions.shape[0] <= 20 else None for p in problems]

    def b_step(prob, solver, inv_lambda):
        eff = _p1_costs(prob, means) - inv_lambda
        if solver is not None:
            return solver.solve(eff)
        return _assign_lp(eff, prob.overlaps, R, prob.actions.shape[0])

    # Initial feasible assignment at the most conservative pace.
    assignments = []
    for prob, solver in zip(problems, solvers):
        b, ok = b_step(prob, solver, inv_lambdas[0])
        if not ok:
            infeasible.append(f"{prob.video_id}: coverage forced an overlap")
        assignments.append(b)
    for inv_lambda in inv_lambdas:
        trace = []
        obj = _p1_objective(problems, assignments, means, inv_lambda)
        trace.append(obj)
        for _ in range(max_alternations):
            # b-step: exact or LP-repaired per video, kept only on descent
            new_assignments = []
            for prob, solver in zip(problems, solvers):
                b, ok = b_step(prob, solver, inv_lambda)
                if not ok:
                    msg = f"{prob.video_id}: coverage forced an overlap"
                    if msg not in infeasible:
                        infeasible.append(msg)
                        log.warning("P1 %s", msg)
                new_assignments.append(b)
            new_obj = _p1_objective(problems, new_assignments, means,
                                    inv_lambda)
            if new_obj <= obj:
                changed = any(not np.array_equal(a, b) for a, b in
                              zip(assignments, new_assignments))
                assignments = new_assignments
                obj = new_obj
            else:
                changed = False
            trace.append(obj)
            # mu-step: means of the selected histograms, safeguarded
            new_means = _p1_means(problems, assignments, num_actions, R, K)
            new_obj = _p1_objective(problems, assignments, new_means,
                                    inv_lambda)
            if new_obj <= obj:
                if not np.allclose(new_means, means):
                    changed = True
                means = new_means
                obj = new_obj
            trace.append(obj)
            if not changed:
                break
        trace_all.append(trace)
    return P1Result(assignments=assignments, means=means,
                    objective_trace=trace_all, infeasible=infeasible)


# ---------------------------------------------------------------------------
# Initialization: poselet labels, actionlet dictionary, first completion
# ---------------------------------------------------------------------------

@dataclass
class InitArtifacts:
    """Everything the CCCP loop needs to start: the dictionary, initial
    labelings (first latent completion), and the poselet centroids."""
    dictionary: ActionletDictionary
    centroids: list[np.ndarray]           # per region (K, D)
    completions: list[Labeling]
    p1: P1Result | None = None
    summary: dict = field(default_factory=dict)


def _overlap_pairs(intervals: list[ActionInterval]) -> list[tuple[int, int]]:
    pairs = []
    for i in range(len(intervals)):
        for j in range(i + 1, len(intervals)):
            if intervals[i].overlaps(intervals[j]):
                pairs.append((i, j))
    return pairs


def initialize(videos: list[TrainingVideo], num_poselets: int,
               num_actions: int, config: TrainConfig) -> InitArtifacts:
    """Build initial poselet labels, region assignments, and actionlets.

    Poselet labels come from per-region k-means over all frames, with the
    most dissimilar ``gc_fraction`` handed to the garbage collector.
    Interval regions come from annotations when supervision is full,
    otherwise from the self-paced assignment problem. Actionlets are
    discovered from the per-(interval, region) histograms, and the first
    latent completion fills every frame from its covering interval.
    """
    if not videos:
        raise ValueError("empty training set")
    R = videos[0].x.shape[1]
    K = num_poselets

    # Per-region k-means over the stacked dataset, then GC reassignment.
    lengths = [v.num_frames for v in videos]
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    centroids, labels_per_region = [], []
    for r in range(R):
        points = np.concatenate([v.x[:, r, :] for v in videos])
        cents, _ = kmeans(points, K, seed=config.seed + r)
        labels, dists = assign_labels(points, cents)
        if config.use_gc and config.gc_fraction > 0:
            labels = gc_init(labels, dists, K, fraction=config.gc_fraction)
        centroids.append(cents)
        labels_per_region.append(labels)
    z_init = [np.stack([labels_per_region[r][offsets[i]:offsets[i + 1]]
                        for r in range(R)], axis=1)
              for i in range(len(videos))]

    # Interval histograms in every region, from the initial labels.
    problems = []
    for i, video in enumerate(videos):
        if not video.intervals:
            continue
        Q = len(video.intervals)
        hists = np.zeros((R, Q, K))
        for q, iv in enumerate(video.intervals):
            for r in range(R):
                hists[r, q] = interval_histogram(
                    z_init[i][:, r], K, iv.t_start, iv.t_end)
        problems.append(AssignmentProblem(
            video_id=video.video_id,
            actions=np.array([iv.action_id for iv in video.intervals]),
            histograms=hists,
            overlaps=_overlap_pairs(video.intervals)))
    if not problems:
        raise ValueError(
            "initialization needs interval annotations on at least one video")

    p1 = None
    if config.supervision == "full":
        assignments = []
        for prob, video in zip(problems,
                               [v for v in videos if v.intervals]):
            b = np.zeros((R, prob.actions.shape[0]), dtype=bool)
            for q, iv in enumerate(video.intervals):
                if iv.region < 0:
                    raise ValueError(
                        f"{video.video_id}: full supervision requires "
                        "interval regions")
                b[iv.region, q] = True
            assignments.append(b)
    else:
        p1 = solve_p1(problems, num_actions,
                      lambda0=config.self_pace_lambda0,
                      decay=config.self_pace_decay,
                      rounds=config.self_pace_rounds)
        assignments = p1.assignments

    # Actionlet discovery over (interval, assigned region) samples.
    samples, sample_actions, owners = [], [], []
    for p_idx, prob in enumerate(problems):
        b = assignments[p_idx]
        for q in range(prob.actions.shape[0]):
            for r in range(R):
                if b[r, q]:
                    samples.append(prob.histograms[r, q])
                    sample_actions.append(prob.actions[q])
                    owners.append((p_idx, q, r))
    dictionary, sample_assignment = build_actionlets(
        np.asarray(samples), np.asarray(sample_actions), num_actions,
        c=config.scree_c, seed=config.seed)

    # Actionlet per (problem, interval, region) and a canonical per interval.
    actionlet_rq: dict[tuple[int, int, int], int] = {}
    canonical: dict[tuple[int, int], int] = {}
    for (p_idx, q, r), a in zip(owners, sample_assignment):
        actionlet_rq[(p_idx, q, r)] = int(a)
        canonical.setdefault((p_idx, q), int(a))

    p_iter = iter(range(len(problems)))
    p_of_video = {}
    for i, video in enumerate(videos):
        if video.intervals:
            p_of_video[i] = next(p_iter)

    # Record the discovered actionlet on each interval (used by the fixed-v
    # constraints of full supervision).
    for i, video in enumerate(videos):
        if not video.intervals:
            continue
        p_idx = p_of_video[i]
        video.intervals = [
            replace(iv, actionlet=actionlet_rq.get((p_idx, q, iv.region),
                                                   canonical[(p_idx, q)]))
            for q, iv in enumerate(video.intervals)]

    # First completion: covering-interval actionlets, nearest-cover fill-in.
    completions = []
    for i, video in enumerate(videos):
        T = video.num_frames
        v_init = np.zeros((T, R), dtype=int)
        if video.intervals:
            p_idx = p_of_video[i]
            b = assignments[p_idx]
            for r in range(R):
                column = np.full(T, -1, dtype=int)
                for q, iv in enumerate(video.intervals):
                    if b[r, q]:
                        hi = min(iv.t_end, T - 1)
                        column[iv.t_start:hi + 1] = actionlet_rq[(p_idx, q, r)]
                for q, iv in enumerate(video.intervals):  # unassigned regions
                    hi = min(iv.t_end, T - 1)
                    span = slice(iv.t_start, hi + 1)
                    fill = column[span] == -1
                    column[span] = np.where(fill, canonical[(p_idx, q)],
                                            column[span])
                v_init[:, r] = _fill_gaps(column)
        completions.append(Labeling(z=z_init[i], v=v_init, y=video.y))

    summary = {
        "num_poselets": K,
        "actionlet_counts": dictionary.counts.tolist(),
        "num_actionlets": dictionary.num_actionlets,
        "p1_infeasible": list(p1.infeasible) if p1 is not None else [],
    }
    return InitArtifacts(dictionary=dictionary, centroids=centroids,
                         completions=completions, p1=p1, summary=summary)


def _fill_gaps(column: np.ndarray) -> np.ndarray:
    """Fill -1 entries with the temporally nearest assigned value (earlier
    frame wins ties); all -1 falls back to 0."""
    filled = column.copy()
    known = np.flatnonzero(filled >= 0)
    if known.size == 0:
        return np.zeros_like(filled)
    missing = np.flatnonzero(filled < 0)
    for t in missing:
        pos = np.searchsorted(known, t)
        left = known[pos - 1] if pos > 0 else None
        right = known[pos] if pos < known.size else None
        if left is None:
            filled[t] = filled[right]
        elif right is None or t - left <= right - t:
            filled[t] = filled[left]
        else:
            filled[t] = filled[right]
    return filled


# ---------------------------------------------------------------------------
# Constraints, loss specs, imputation
# ---------------------------------------------------------------------------

def build_constraints(video: TrainingVideo, params: ModelParams,
                      supervision: str) -> FrameConstraints | None:
    """Frame constraints implied by a video's annotations."""
    d = params.dims
    T = video.num_frames
    if supervision == "video" or not video.intervals:
        return None
    if supervision == "full":
        allowed = np.zeros((T, d.R, d.A), dtype=bool)
        fixed = np.zeros((T, d.R), dtype=bool)
        for iv in video.intervals:
            if iv.region < 0 or iv.actionlet is None:
                raise ValueError(
                    f"{video.video_id}: full supervision requires regions "
                    "and initialized actionlet labels")
            hi = min(iv.t_end, T - 1)
            allowed[iv.t_start:hi + 1, iv.region, iv.actionlet] = True
            fixed[iv.t_start:hi + 1, iv.region] = True
        allowed[~fixed] = True
        return FrameConstraints(allowed_v=allowed)
    # temporal: any covered frame restricts every region to the actionlets
    # of the actions annotated there; uncovered frames are unrestricted.
    allowed = np.zeros((T, d.A), dtype=bool)
    covered = np.zeros(T, dtype=bool)
    u_of_v = params.u_of_v()
    for iv in video.intervals:
        hi = min(iv.t_end, T - 1)
        allowed[iv.t_start:hi + 1] |= (u_of_v == iv.action_id)[None, :]
        covered[iv.t_start:hi + 1] = True
    allowed[~covered] = True
    full = np.repeat(allowed[:, None, :], d.R, axis=1)
    return FrameConstraints(allowed_v=full)


def build_loss_spec(video: TrainingVideo, params: ModelParams,
                    supervision: str, loss_region: int = 0) -> LossSpec:
    """Truth for margin rescaling; per-frame term lives in ``loss_region``."""
    constraints = build_constraints(video, params, supervision)
    if constraints is None or constraints.allowed_v is None:
        return LossSpec(y=video.y, allowed_v=None, region=loss_region)
    return LossSpec(y=video.y,
                    allowed_v=constraints.allowed_v[:, loss_region, :],
                    region=loss_region)


def impute_latents(videos: list[TrainingVideo], params: ModelParams,
                   supervision: str,
                   beam: int | None = None) -> list[Labeling]:
    """Best constrained labeling per video at its true complex action."""
    out = []
    for video in videos:
        constraints = build_constraints(video, params, supervision)
        out.append(complete_latent(video.x, params, video.y,
                                   constraints=constraints, beam=beam))
    return out


# ---------------------------------------------------------------------------
# 1-slack cutting plane with an SMO-style dual solver
# ---------------------------------------------------------------------------

def _face_optimum(G: np.ndarray, d: np.ndarray, free: np.ndarray,
                  C: float) -> np.ndarray:
    """Unconstrained maximizer of d.a - a'Ga/2 on the given face, capped by
    the simplex constraint via its multiplier when it binds."""
    idx = np.flatnonzero(free)
    Gff = G[np.ix_(idx, idx)] + 1e-10 * np.eye(idx.size)
    try:
        sol = np.linalg.solve(Gff, d[idx])
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(Gff, d[idx], rcond=None)[0]
    if sol.sum() > C:
        ones = np.ones(idx.size)
        inv_ones = np.linalg.solve(Gff, ones)
        mu = (sol.sum() - C) / max(inv_ones.sum(), 1e-30)
        sol = sol - mu * inv_ones
    target = np.zeros(free.shape[0])
    target[idx] = sol
    return target


class _WorkingSet:
    """Aggregated margin constraints <W, g_j> >= d_j - xi plus the dual
    active-set solver. Slack mass ``C - sum(alpha)`` corresponds to the
    primal constraint xi >= 0."""

    def __init__(self, C: float):
        self.C = C
        self.G: list[np.ndarray] = []      # constraint vectors g_j
        self.deltas: list[float] = []
        self.alpha = np.zeros(0)
        self.gram = np.zeros((0, 0))

    def add(self, g: np.ndarray, delta: float) -> None:
        dots = np.array([float(g @ h) for h in self.G])
        n = len(self.G)
        gram = np.zeros((n + 1, n + 1))
        gram[:n, :n] = self.gram
        gram[n, :n] = dots
        gram[:n, n] = dots
        gram[n, n] = float(g @ g)
        self.G.append(g.copy())
        self.deltas.append(float(delta))
        self.gram = gram
        self.alpha = np.append(self.alpha, 0.0)

    def dual_objective(self) -> float:
        d = np.asarray(self.deltas)
        return float(d @ self.alpha
                     - 0.5 * self.alpha @ self.gram @ self.alpha)

    def solve(self, max_steps: int = 200, tol: float = 1e-10) -> float:
        """Primal active-set solve of max d.a - a'Ga/2, a >= 0, sum a <= C.

        Solved to optimality, so the dual objective is non-decreasing across
        calls: each call's feasible set contains the previous solution.
        """
        n = len(self.G)
        if n == 0:
            return 0.0
        d = np.asarray(self.deltas)
        G = self.gram
        a = self.alpha.copy()
        scale = max(1.0, float(np.abs(d).max()))
        free = a > 0
        if not free.any():
            free[int(np.argmax(d))] = True
        for _ in range(max_steps):
            target = _face_optimum(G, d, free, self.C)
            if np.all(target[free] >= -tol * scale):
                a = np.clip(target, 0.0, None)
                # KKT check on the held-out coordinates
                grad = d - G @ a
                simplex_tight = a.sum() >= self.C * (1 - 1e-12)
                mu = max(0.0, float(grad[free].max())) if simplex_tight \
                    else 0.0
                held = ~free
                if not held.any():
                    break
                slackness = np.where(held, grad - mu, -np.inf)
                pick = int(np.argmax(slackness))
                if slackness[pick] <= tol * scale:
                    break
                free[pick] = True
                continue
            # Walk toward the face optimum until a coordinate hits zero.
            direction = target - a
            blocking = (direction < 0) & free
            with np.errstate(divide="ignore", invalid="ignore"):
                steps = np.where(blocking, -a / direction, np.inf)
            j = int(np.argmin(steps))
            a = a + min(1.0, steps[j]) * direction
            a = np.clip(a, 0.0, None)
            if steps[j] <= 1.0:
                free[j] = False
                a[j] = 0.0
        self.alpha = a
        self._prune()
        return self.dual_objective()

    def _prune(self, keep_recent: int = 10, cap: int = 50) -> None:
        """Drop inactive constraints once the set grows past ``cap``.

        At a dual optimum a zero-weight constraint is satisfied within the
        current slack, so removing it leaves the solution unchanged; it can
        always re-enter later as a new most-violated constraint.
        """
        n = len(self.G)
        if n <= cap:
            return
        keep = [j for j in range(n)
                if self.alpha[j] > 0 or j >= n - keep_recent]
        idx = np.asarray(keep)
        self.G = [self.G[j] for j in keep]
        self.deltas = [self.deltas[j] for j in keep]
        self.alpha = self.alpha[idx]
        self.gram = self.gram[np.ix_(idx, idx)]

    def weights(self) -> np.ndarray:
        if not self.G:
            return np.zeros(0)
        return np.asarray(self.G).T @ self.alpha

    def slack(self, W: np.ndarray) -> float:
        if not self.G:
            return 0.0
        margins = [d - float(W @ g) for g, d in zip(self.G, self.deltas)]
        return max(0.0, max(margins))


@dataclass
class CuttingPlaneInfo:
    converged: bool
    iterations: int
    violation: float
    xi: float
    eps: float
    dual_trace: list[float]
    violation_trace: list[float]


def cutting_plane(videos: list[TrainingVideo], truth_psis: list[np.ndarray],
                  loss_specs: list[LossSpec], template: ModelParams,
                  config: TrainConfig,
                  warm: np.ndarray | None = None
                  ) -> tuple[np.ndarray, CuttingPlaneInfo]:
    """Solve the regularized risk for fixed latent completions.

    Maintains one aggregated constraint per iteration: the mean feature gap
    between the completions and the current most-violating labelings, with
    the mean loss as margin. Terminates once the newest violation is within
    ``eps_qp`` of the current slack.
    """
    M = len(videos)
    dim = template.dims.total
    ws = _WorkingSet(config.C)
    W = np.zeros(dim) if warm is None else np.asarray(warm, dtype=float).copy()
    eps = config.eps_qp
    dual_trace: list[float] = []
    violation_trace: list[float] = []
    converged = False
    violation = 0.0
    xs = [video.x for video in videos]
    for it in range(config.max_cutting_plane_iters):
        params = template.with_flat(W)
        gbar = np.zeros(dim)
        dbar = 0.0
        violators = loss_augmented_infer_many(xs, params, loss_specs,
                                              config.lambda_y,
                                              config.lambda_v,
                                              beam=config.beam)
        for video, psi_true, spec, res in zip(videos, truth_psis, loss_specs,
                                              violators):
            psi_bad = feature_map(video.x, res.labeling, template)
            gbar += psi_true - psi_bad
            dbar += loss_value(res.labeling, spec, config.lambda_y,
                               config.lambda_v)
        gbar /= M
        dbar /= M
        if eps is None:
            eps = max(1e-3 * dbar, 1e-8)
        violation = dbar - float(W @ gbar)
        violation_trace.append(violation)
        xi = ws.slack(W)
        if violation <= xi + eps:
            converged = True
            break
        ws.add(gbar, dbar)
        dual_trace.append(ws.solve())
        W = ws.weights()
    else:
        log.warning("cutting plane hit the iteration cap (%d); returning "
                    "the current iterate", config.max_cutting_plane_iters)
    info = CuttingPlaneInfo(converged=converged,
                            iterations=len(dual_trace),
                            violation=violation,
                            xi=ws.slack(W),
                            eps=float(eps if eps is not None else 0.0),
                            dual_trace=dual_trace,
                            violation_trace=violation_trace)
    return W, info


# ---------------------------------------------------------------------------
# CCCP outer loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: ModelParams
    objective_trace: list[float]
    cp_infos: list[CuttingPlaneInfo]
    completions: list[Labeling]
    stopped_reason: str = ""


def primal_objective(videos: list[TrainingVideo], W: np.ndarray,
                     template: ModelParams, completions: list[Labeling],
                     loss_specs: list[LossSpec],
                     config: TrainConfig) -> float:
    """Regularized risk at fixed completions: 0.5|W|^2 + (C/M) sum xi_i."""
    params = template.with_flat(W)
    total = 0.0
    results = loss_augmented_infer_many([v.x for v in videos], params,
                                        loss_specs, config.lambda_y,
                                        config.lambda_v, beam=config.beam)
    for video, comp, res in zip(videos, completions, results):
        slack = res.score - energy_total(video.x, comp, params)
        total += max(0.0, slack)
    return 0.5 * float(W @ W) + config.C * total / len(videos)


def train(videos: list[TrainingVideo], dims: ModelDims, config: TrainConfig,
          init: InitArtifacts) -> TrainResult:
    """Alternate latent completion and the convex solve until the
    regularized risk stops decreasing.

    With exact inference each recorded objective value is no larger than the
    previous one: the convex step is safeguarded (a worse iterate is
    discarded) and re-completion can only raise completion energies.
    """
    template = ModelParams.zeros(dims, dictionary=init.dictionary,
                                 use_gc=config.use_gc,
                                 beta_includes_gc=config.beta_includes_gc)
    loss_specs = [build_loss_spec(v, template, config.supervision,
                                  config.loss_region) for v in videos]
    completions = list(init.completions)
    truth_psis = [feature_map(v.x, comp, template)
                  for v, comp in zip(videos, completions)]

    W = np.zeros(dims.total)
    trace = [primal_objective(videos, W, template, completions, loss_specs,
                              config)]
    cp_infos: list[CuttingPlaneInfo] = []
    best_W, best_obj = W.copy(), trace[0]
    reason = "max_cccp_iters"
    for outer in range(config.max_cccp_iters):
        W_new, info = cutting_plane(videos, truth_psis, loss_specs, template,
                                    config, warm=W)
        cp_infos.append(info)
        obj_new = primal_objective(videos, W_new, template, completions,
                                   loss_specs, config)
        if obj_new > trace[-1]:
            # The approximate convex solve failed to improve; keep the
            # previous iterate and stop (only possible via approximation).
            log.warning("objective rose (%.6g -> %.6g); keeping previous "
                        "model", trace[-1], obj_new)
            reason = "non_decreasing_step"
            break
        W = W_new
        trace.append(obj_new)
        if obj_new < best_obj:
            best_W, best_obj = W.copy(), obj_new
        if trace[-2] - trace[-1] < config.cccp_tol * max(1.0, abs(trace[-2])):
            reason = "converged"
            break
        params = template.with_flat(W)
        completions = impute_latents(videos, params, config.supervision,
                                     beam=config.beam)
        truth_psis = [feature_map(v.x, comp, template)
                      for v, comp in zip(videos, completions)]
    params = template.with_flat(best_W)
    return TrainResult(params=params, objective_trace=trace,
                       cp_infos=cp_infos, completions=completions,
                       stopped_reason=reason)
