"""Energy maximization over labelings: exact DP, beam filter, and oracle.

Per region and candidate complex action the maximization is a Viterbi pass
over joint (poselet, actionlet) states; the complex action is picked by
exhaustive enumeration. State (k, a) maps to index k*A + a, and every
argmax breaks ties toward the lowest index, so results are deterministic:
among equal-scoring label sequences the one minimizing
(state_T, state_{T-1}, ..., state_1) lexicographically is returned, and the
brute-force enumerator reproduces the same choice.

An optional beam keeps only the B best states per frame ranked by the
non-sequential part of the score before running the sequential pass.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import Labeling, ModelParams, energy_total

NEG_INF = -np.inf


class InfeasibleError(RuntimeError):
    """Constraints left some frame with no allowed state."""


@dataclass
class FrameConstraints:
    """Allowed label sets per frame and region; ``None`` means unrestricted.

    ``allowed_v`` is (T, R, A) bool, ``allowed_z`` is (T, R, K+1) bool.
    """
    allowed_v: np.ndarray | None = None
    allowed_z: np.ndarray | None = None

    @classmethod
    def fixed_v(cls, v: np.ndarray, num_actionlets: int) -> "FrameConstraints":
        """Pin every (t, r) actionlet to the given labels."""
        v = np.asarray(v, dtype=int)
        T, R = v.shape
        allowed = np.zeros((T, R, num_actionlets), dtype=bool)
        t_idx, r_idx = np.meshgrid(np.arange(T), np.arange(R), indexing="ij")
        allowed[t_idx, r_idx, v] = True
        return cls(allowed_v=allowed)

    @classmethod
    def from_actionlet_sets(cls, per_frame: list[np.ndarray], num_regions: int,
                            num_actionlets: int) -> "FrameConstraints":
        """Same allowed actionlet set for every region of each frame."""
        T = len(per_frame)
        allowed = np.zeros((T, num_regions, num_actionlets), dtype=bool)
        for t, actionlets in enumerate(per_frame):
            allowed[t, :, np.asarray(actionlets, dtype=int)] = True
        return cls(allowed_v=allowed)


@dataclass
class LossSpec:
    """Ground truth for margin rescaling: the true complex action and, for
    the designated loss region, the allowed actionlet set per frame.

    A frame counts as violating when the labeling's actionlet in the loss
    region falls outside ``allowed_v`` for that frame. ``allowed_v`` of None
    disables the per-frame term (video-level supervision).
    """
    y: int
    allowed_v: np.ndarray | None = None   # (T, A) bool
    region: int = 0


@dataclass
class InferenceResult:
    labeling: Labeling
    energy: float             # energy_total of the labeling
    score: float              # maximized objective (energy + loss addends)
    margins: np.ndarray       # (T, R) unary gap between best and runner-up

    @property
    def y(self) -> int:
        return self.labeling.y


def loss_value(labeling: Labeling, spec: LossSpec, lambda_y: float,
               lambda_v: float) -> float:
    """Evaluate the margin-rescaling loss of a labeling against truth."""
    delta = lambda_y * float(labeling.y != spec.y)
    if spec.allowed_v is not None and lambda_v != 0.0:
        T = labeling.num_frames
        chosen = labeling.v[:, spec.region]
        hit = spec.allowed_v[np.arange(T), chosen]
        delta += lambda_v * float(np.sum(~hit)) / T
    return delta


def _region_unary_base(x: np.ndarray, params: ModelParams, r: int,
                       constraints: FrameConstraints | None,
                       loss_addends: np.ndarray | None) -> np.ndarray:
    """(T, N) non-sequential scores without the complex-action term;
    -inf for disallowed states."""
    d = params.dims
    KK = params.num_poselet_states
    T = x.shape[0]
    pose = np.empty((T, KK))
    pose[:, :d.K] = x[:, r, :] @ params.w[r].T
    if params.use_gc:
        pose[:, d.K] = params.theta[r]
    beta_eff = params.beta[r][:, :KK].copy()
    if params.use_gc and not params.beta_includes_gc:
        beta_eff[:, d.K] = 0.0
    unary = pose[:, :, None] + beta_eff.T[None, :, :]
    if loss_addends is not None:
        unary = unary + loss_addends[:, None, :]
    unary = unary.reshape(T, KK * d.A)
    if constraints is not None:
        mask = np.ones((T, KK, d.A), dtype=bool)
        if constraints.allowed_z is not None:
            mask &= constraints.allowed_z[:, r, :KK, None]
        if constraints.allowed_v is not None:
            mask &= constraints.allowed_v[:, r, None, :]
        mask = mask.reshape(T, KK * d.A)
        if not mask.any(axis=1).all():
            bad = int(np.flatnonzero(~mask.any(axis=1))[0])
            raise InfeasibleError(
                f"no allowed (poselet, actionlet) state at frame {bad}, "
                f"region {r}")
        unary = np.where(mask, unary, NEG_INF)
    return unary


def _alpha_term(params: ModelParams, r: int, y: int) -> np.ndarray:
    """Per-state complex-action scores, tiled over poselets: (N,)."""
    per_actionlet = params.alpha[r][y, params.u_of_v()]
    return np.tile(per_actionlet, params.num_poselet_states)


def _region_unary(x: np.ndarray, y: int, params: ModelParams, r: int,
                  constraints: FrameConstraints | None,
                  loss_addends: np.ndarray | None) -> np.ndarray:
    """(T, N) scores of the non-sequential terms; -inf for disallowed states."""
    base = _region_unary_base(x, params, r, constraints, loss_addends)
    return base + _alpha_term(params, r, y)[None, :]


def _transition_tables(params: ModelParams,
                       r: int) -> tuple[np.ndarray, np.ndarray]:
    """Poselet and actionlet transition tables for one region; the joint
    table over states (k, a) is their sum but is never materialized."""
    KK = params.num_poselet_states
    return params.eta[r][:KK, :KK], params.gamma[r]


def _apply_beam(unary: np.ndarray, beam: int) -> np.ndarray:
    """Keep the ``beam`` best states per frame by unary score, rest -inf."""
    T, N = unary.shape
    if beam >= N:
        return unary
    order = np.argsort(-unary, axis=1, kind="stable")
    out = np.full_like(unary, NEG_INF)
    rows = np.repeat(np.arange(T), beam)
    cols = order[:, :beam].ravel()
    out[rows, cols] = unary[rows, cols]
    return out


def _viterbi_batch(unary: np.ndarray, eta: np.ndarray,
                   gamma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Viterbi over a (B, T, N) stack of unary tables for the joint states
    (k, a), n = k*A + a. Returns (states (B, T), scores (B,)).

    The transition maximization factors through the two labels: first the
    best predecessor actionlet for every (k', a), then the best predecessor
    poselet for every (k, a). This costs K*A*(K+A) per frame instead of
    (K*A)^2 and realizes the same tie-break as a full argmax over n' (the
    outer stage picks the smallest k', the inner stage the smallest a'
    within it).
    """
    B, T, N = unary.shape
    KK = eta.shape[0]
    A = gamma.shape[0]
    unary = unary.reshape(B, T, KK, A)
    a_back = np.zeros((B, T, KK, A), dtype=np.int32)
    k_back = np.zeros((B, T, KK, A), dtype=np.int32)
    score = unary[:, 0].copy()                # (B, K', A)
    b_idx = np.arange(B)[:, None, None]
    k_idx = np.arange(KK)[None, :, None]
    a_idx = np.arange(A)[None, None, :]
    for t in range(1, T):
        # best predecessor actionlet a' for each (k', a)
        over_a = score[:, :, :, None] + gamma[None, None, :, :]
        a_bp = over_a.argmax(axis=2)          # (B, K', A); smallest a'
        sa = over_a[b_idx, k_idx, a_bp, a_idx]
        # best predecessor poselet k' for each (k, a)
        over_k = sa[:, :, None, :] + eta[None, :, :, None]
        k_bp = over_k.argmax(axis=1)          # (B, K, A); smallest k'
        best = over_k[b_idx, k_bp, k_idx, a_idx]
        score = unary[:, t] + best
        a_back[:, t] = a_bp
        k_back[:, t] = k_bp
    flat = score.reshape(B, N)
    best_last = flat.argmax(axis=1)           # ties: smallest state
    best_score = flat[np.arange(B), best_last]
    if np.any(best_score == NEG_INF):
        raise InfeasibleError("beam or constraints removed every path")
    states = np.empty((B, T), dtype=int)
    states[:, -1] = best_last
    rows = np.arange(B)
    for t in range(T - 1, 0, -1):
        k, a = states[:, t] // A, states[:, t] % A
        k_prev = k_back[rows, t, k, a]
        a_prev = a_back[rows, t, k_prev, a]
        states[:, t - 1] = k_prev * A + a_prev
    return states, best_score


def _unary_margins(unary: np.ndarray) -> np.ndarray:
    """Gap between the best and second-best finite unary score per frame."""
    T = unary.shape[0]
    margins = np.zeros(T)
    for t in range(T):
        finite = unary[t][np.isfinite(unary[t])]
        if finite.size >= 2:
            top2 = np.partition(finite, -2)[-2:]
            margins[t] = top2[1] - top2[0]
    return margins


def dp_region(x: np.ndarray, y: int, params: ModelParams, r: int,
              constraints: FrameConstraints | None = None,
              loss_addends: np.ndarray | None = None,
              beam: int | None = None
              ) -> tuple[np.ndarray, np.ndarray, float]:
    """Best (z, v) sequence for one region at a fixed complex action.

    Returns (z, v, score). ``beam`` of None (or >= the state count) runs the
    exact pass; otherwise only the ``beam`` best states per frame by unary
    score survive, which can only lower the attained score.
    """
    if beam is not None and beam < 1:
        raise ValueError("beam must be >= 1")
    unary = _region_unary(x, y, params, r, constraints, loss_addends)
    if beam is not None:
        unary = _apply_beam(unary, beam)
    eta, gamma = _transition_tables(params, r)
    states, scores = _viterbi_batch(unary[None, :, :], eta, gamma)
    A = params.dims.A
    return states[0] // A, states[0] % A, float(scores[0])


def infer(x: np.ndarray, params: ModelParams,
          constraints: FrameConstraints | None = None,
          beam: int | None = None,
          want_margins: bool = True) -> InferenceResult:
    """Maximize the energy over (y, v, z); ties go to the smallest y."""
    x = np.asarray(x, dtype=float)
    return _search(x, params, constraints, beam, loss_spec=None,
                   lambda_y=0.0, lambda_v=0.0, want_margins=want_margins)


def loss_augmented_infer(x: np.ndarray, params: ModelParams, spec: LossSpec,
                         lambda_y: float, lambda_v: float,
                         constraints: FrameConstraints | None = None,
                         beam: int | None = None,
                         want_margins: bool = False) -> InferenceResult:
    """Maximize energy plus margin-rescaling loss against the given truth.

    The loss decomposes into a constant per candidate y plus per-frame
    addends in the designated loss region, so each region still solves an
    independent DP. ``result.score`` equals ``result.energy`` plus the loss
    of the returned labeling.
    """
    x = np.asarray(x, dtype=float)
    return _search(x, params, constraints, beam, loss_spec=spec,
                   lambda_y=lambda_y, lambda_v=lambda_v,
                   want_margins=want_margins)


def _search(x, params, constraints, beam, loss_spec, lambda_y, lambda_v,
            want_margins=True):
    """Shared maximization: batched Viterbi over all y per region."""
    d = params.dims
    T = x.shape[0]
    addends = None
    if loss_spec is not None and loss_spec.allowed_v is not None \
            and lambda_v != 0.0:
        addends = (lambda_v / T) * (~loss_spec.allowed_v).astype(float)

    def region_addends(r):
        return addends if (loss_spec is not None
                           and r == loss_spec.region) else None

    totals = np.zeros(d.Y)
    if loss_spec is not None and lambda_y != 0.0:
        totals += lambda_y
        totals[loss_spec.y] -= lambda_y
    all_states = []
    bases = []
    for r in range(d.R):
        base = _region_unary_base(x, params, r, constraints,
                                  region_addends(r))
        bases.append(base)
        stack = base[None, :, :] + np.stack(
            [_alpha_term(params, r, y) for y in range(d.Y)])[:, None, :]
        if beam is not None:
            stack = np.stack([_apply_beam(stack[y], beam)
                              for y in range(d.Y)])
        eta, gamma = _transition_tables(params, r)
        states, scores = _viterbi_batch(stack, eta, gamma)
        totals += scores
        all_states.append(states)
    # ties toward the smallest y
    best_y = int(np.argmax(totals))
    z = np.stack([all_states[r][best_y] // d.A for r in range(d.R)], axis=1)
    v = np.stack([all_states[r][best_y] % d.A for r in range(d.R)], axis=1)
    if want_margins:
        margins = np.stack(
            [_unary_margins(bases[r] + _alpha_term(params, r, best_y))
             for r in range(d.R)], axis=1)
    else:
        margins = np.zeros((T, d.R))
    labeling = Labeling(z=z, v=v, y=best_y)
    return InferenceResult(labeling=labeling,
                           energy=energy_total(x, labeling, params),
                           score=float(totals[best_y]), margins=margins)


def loss_augmented_infer_many(xs: list[np.ndarray], params: ModelParams,
                              specs: list[LossSpec], lambda_y: float,
                              lambda_v: float,
                              beam: int | None = None
                              ) -> list[InferenceResult]:
    """Loss-augmented inference over many videos in batched Viterbi passes.

    Equivalent to calling loss_augmented_infer per video (bit for bit);
    videos of equal length share one DP over a stacked unary tensor, which
    amortizes per-call overhead during training.
    """
    d = params.dims
    results: list[InferenceResult | None] = [None] * len(xs)
    by_len: dict[int, list[int]] = {}
    for i, x in enumerate(xs):
        by_len.setdefault(x.shape[0], []).append(i)
    alphas = [np.stack([_alpha_term(params, r, y) for y in range(d.Y)])
              for r in range(d.R)]
    for T, idxs in sorted(by_len.items()):
        n_vid = len(idxs)
        totals = np.zeros((n_vid, d.Y))
        addends_of: list[np.ndarray | None] = []
        for j, i in enumerate(idxs):
            spec = specs[i]
            if lambda_y != 0.0:
                totals[j] += lambda_y
                totals[j, spec.y] -= lambda_y
            if spec.allowed_v is not None and lambda_v != 0.0:
                addends_of.append(
                    (lambda_v / T) * (~spec.allowed_v).astype(float))
            else:
                addends_of.append(None)
        region_states = []
        for r in range(d.R):
            rows = []
            for j, i in enumerate(idxs):
                addends = addends_of[j] if specs[i].region == r else None
                base = _region_unary_base(xs[i], params, r, None, addends)
                stack = base[None, :, :] + alphas[r][:, None, :]
                if beam is not None:
                    stack = np.stack([_apply_beam(stack[y], beam)
                                      for y in range(d.Y)])
                rows.append(stack)
            eta, gamma = _transition_tables(params, r)
            states, scores = _viterbi_batch(np.concatenate(rows), eta, gamma)
            totals += scores.reshape(n_vid, d.Y)
            region_states.append(states.reshape(n_vid, d.Y, T))
        for j, i in enumerate(idxs):
            best_y = int(np.argmax(totals[j]))
            z = np.stack([region_states[r][j, best_y] // d.A
                          for r in range(d.R)], axis=1)
            v = np.stack([region_states[r][j, best_y] % d.A
                          for r in range(d.R)], axis=1)
            labeling = Labeling(z=z, v=v, y=best_y)
            results[i] = InferenceResult(
                labeling=labeling,
                energy=energy_total(xs[i], labeling, params),
                score=float(totals[j, best_y]),
                margins=np.zeros((T, d.R)))
    return results


def complete_latent(x: np.ndarray, params: ModelParams, y: int,
                    constraints: FrameConstraints | None = None,
                    beam: int | None = None) -> Labeling:
    """Best labeling at a fixed complex action, under constraints."""
    x = np.asarray(x, dtype=float)
    d = params.dims
    zs, vs = [], []
    for r in range(d.R):
        z_r, v_r, _ = dp_region(x, y, params, r, constraints=constraints,
                                beam=beam)
        zs.append(z_r)
        vs.append(v_r)
    return Labeling(z=np.stack(zs, axis=1), v=np.stack(vs, axis=1), y=y)


def _enumerate_best(unary: np.ndarray, eta: np.ndarray, gamma: np.ndarray
                    ) -> tuple[np.ndarray, float]:
    """Exhaustive maximization over all state sequences.

    Scores every sequence by an iterated tensor build whose flattened C
    order puts the last frame's state in the most significant position, so
    np.argmax realizes the same tie-break as the DP backtrack. Summands are
    grouped as ((score + gamma) + eta) + unary, matching the DP bit for bit
    so exact ties stay exact.
    """
    T, N = unary.shape
    KK, A = eta.shape[0], gamma.shape[0]
    trans_gamma = np.tile(gamma, (KK, KK))     # [n', n] -> gamma[a', a]
    trans_eta = np.kron(eta, np.ones((A, A)))  # [n', n] -> eta[k', k]
    scores = unary[0]
    for t in range(1, T):
        # axes of `scores`: (n_{t-1}, ..., n_0); prepend n_t
        expand = (slice(None), slice(None)) + (None,) * (t - 1)
        scores = unary[t][(slice(None),) + (None,) * t] \
            + (trans_eta.T[expand] + (trans_gamma.T[expand]
                                      + scores[None, ...]))
    flat = scores.reshape(-1)
    best_idx = int(np.argmax(flat))
    best_score = float(flat[best_idx])
    states = np.empty(T, dtype=int)
    for t in range(T):  # flat C order: the last frame varies slowest
        states[t] = (best_idx // N ** t) % N
    return states, best_score


def brute_force(x: np.ndarray, params: ModelParams,
                constraints: FrameConstraints | None = None,
                loss_spec: LossSpec | None = None,
                lambda_y: float = 0.0, lambda_v: float = 0.0,
                guard: float = 1e7) -> InferenceResult:
    """Exact global maximum by enumeration; testing oracle for the DP.

    Refuses instances where Y * ((K+1)*A)^T exceeds ``guard``.
    """
    x = np.asarray(x, dtype=float)
    d = params.dims
    T = x.shape[0]
    N = params.num_poselet_states * d.A
    if d.Y * float(N) ** T > guard:
        raise ValueError(
            f"instance too large for enumeration: {d.Y} * {N}^{T} > {guard:g}")
    addends = None
    if loss_spec is not None and loss_spec.allowed_v is not None \
            and lambda_v != 0.0:
        addends = (lambda_v / T) * (~loss_spec.allowed_v).astype(float)
    best = None
    for y in range(d.Y):
        const = lambda_y * float(loss_spec is not None and y != loss_spec.y)
        total = const
        zs, vs = [], []
        for r in range(d.R):
            region_addends = addends if (loss_spec is not None
                                         and r == loss_spec.region) else None
            unary = _region_unary(x, y, params, r, constraints, region_addends)
            eta, gamma = _transition_tables(params, r)
            states, score = _enumerate_best(unary, eta, gamma)
            total += score
            zs.append(states // d.A)
            vs.append(states % d.A)
        if best is None or total > best[0]:
            best = (total, y, np.stack(zs, axis=1), np.stack(vs, axis=1))
    total, y, z, v = best
    labeling = Labeling(z=z, v=v, y=y)
    return InferenceResult(labeling=labeling,
                           energy=energy_total(x, labeling, params),
                           score=total,
                           margins=np.zeros((T, d.R)))
