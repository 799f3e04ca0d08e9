"""Motion-poselet initialization and actionlet dictionary discovery.

Poselet labels start from k-means over frame descriptors, per region, with
the most dissimilar fraction of frames handed to the garbage-collector
label. Actionlets are discovered per atomic action by clustering interval
histograms of initial poselet labels, with the cluster count picked by an
eigenvalue scree rule on a chi-squared affinity matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ActionletDictionary:
    """Mapping between actionlets and the atomic actions they execute.

    ``u_of_v[a]`` is the atomic action of actionlet a; actionlet indices are
    contiguous per action in action order, so ``u_of_v`` is non-decreasing.
    ``centroids`` holds one poselet-histogram centroid per actionlet.
    """
    num_actions: int
    counts: np.ndarray        # (S,) actionlets per action
    u_of_v: np.ndarray        # (A,)
    centroids: np.ndarray     # (A, K)

    @property
    def num_actionlets(self) -> int:
        return int(self.u_of_v.shape[0])

    def actionlets_of(self, action: int) -> np.ndarray:
        return np.flatnonzero(self.u_of_v == action)

    def to_dict(self) -> dict:
        return {"num_actions": self.num_actions,
                "counts": self.counts.tolist(),
                "u_of_v": self.u_of_v.tolist(),
                "centroids": self.centroids.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionletDictionary":
        return cls(num_actions=int(d["num_actions"]),
                   counts=np.asarray(d["counts"], dtype=int),
                   u_of_v=np.asarray(d["u_of_v"], dtype=int),
                   centroids=np.asarray(d["centroids"], dtype=float))


@dataclass
class PoseletInit:
    """Initial poselet state for one region: centroids and frame labels.

    Labels are 0..K-1 from k-means; after garbage-collector initialization
    the most dissimilar fraction carries label K.
    """
    centroids: np.ndarray          # (K, D)
    labels: np.ndarray             # frame labels incl. GC reassignments
    distances: np.ndarray          # distance to the nearest centroid
    gc_fraction: float = 0.0

    @property
    def num_poselets(self) -> int:
        return self.centroids.shape[0]


def _pp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; deterministic for a fixed generator state."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[c:] = points[first]
            break
        probs = d2 / total
        pick = int(rng.choice(n, p=probs))
        centroids[c] = points[pick]
        d2 = np.minimum(d2, np.sum((points - centroids[c]) ** 2, axis=1))
    return centroids


def kmeans(points: np.ndarray, k: int, seed: int = 0,
           max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Euclidean k-means with k-means++ seeding.

    Returns (centroids (k, D), labels (N,)). Deterministic given ``seed``;
    inertia is non-increasing across Lloyd iterations. A cluster that
    empties is re-seeded at the point farthest from its assigned centroid.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    rng = np.random.default_rng(seed)
    centroids = _pp_seed(points, k, rng)
    prev_labels = None
    labels = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        labels = np.argmin(d2, axis=1)
        nearest = d2[np.arange(n), labels]
        for c in range(k):
            members = labels == c
            if not np.any(members):
                far = int(np.argmax(nearest))
                centroids[c] = points[far]
                labels[far] = c
                nearest[far] = 0.0
            else:
                centroids[c] = points[members].mean(axis=0)
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        prev_labels = labels
    return centroids, labels


def assign_labels(points: np.ndarray,
                  centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-centroid labels and distances for new points."""
    d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, np.sqrt(d2[np.arange(points.shape[0]), labels])


def gc_init(labels: np.ndarray, distances: np.ndarray, num_poselets: int,
            fraction: float = 0.20) -> np.ndarray:
    """Reassign the most dissimilar fraction of frames to the GC label.

    The ceil(fraction * N) frames with the largest distance to their nearest
    centroid get label ``num_poselets`` (the reserved K+1 slot, 0-based K).
    Ties at the cut are broken toward the lower frame index.
    """
    labels = np.asarray(labels).copy()
    distances = np.asarray(distances, dtype=float)
    if not np.all(np.isfinite(distances)):
        raise ValueError("distances must be finite")
    n = labels.shape[0]
    n_gc = int(np.ceil(fraction * n))
    if n_gc <= 0:
        return labels
    order = np.lexsort((np.arange(n), -distances))
    labels[order[:n_gc]] = num_poselets
    return labels


def chi2(h1: np.ndarray, h2: np.ndarray) -> float:
    """Chi-squared distance between two nonnegative histograms.

    Sums (h1[k]-h2[k])^2 / (h1[k]+h2[k]) over bins, skipping bins where both
    entries are zero.
    """
    h1 = np.asarray(h1, dtype=float)
    h2 = np.asarray(h2, dtype=float)
    if h1.shape != h2.shape:
        raise ValueError(f"histogram shapes differ: {h1.shape} vs {h2.shape}")
    if np.any(h1 < 0) or np.any(h2 < 0):
        raise ValueError("histogram entries must be nonnegative")
    denom = h1 + h2
    mask = denom > 0
    diff = h1 - h2
    return float(np.sum(diff[mask] ** 2 / denom[mask]))


def chi2_matrix(H: np.ndarray) -> np.ndarray:
    """Pairwise chi-squared distances between histogram rows."""
    H = np.asarray(H, dtype=float)
    n = H.shape[0]
    D = np.zeros((n, n))
    for i in range(n):
        diff = H[i] - H[i + 1:]
        denom = H[i] + H[i + 1:]
        with np.errstate(invalid="ignore", divide="ignore"):
            terms = np.where(denom > 0, diff ** 2 / denom, 0.0)
        D[i, i + 1:] = terms.sum(axis=1)
    return D + D.T


def scree_count(eigenvalues: np.ndarray, c: float = 2e-3) -> int:
    """Pick a cluster count from a descending eigenvalue spectrum.

    Minimizes lam[i+1]^2 / sum(lam[1..i]) + c*i over i in 1..n-1 (1-based),
    breaking ties toward the smaller i. Tiny negative eigenvalues from
    numerics are clamped to zero; an all-zero spectrum gives 1.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.size < 2:
        return 1
    lam = np.clip(lam, 0.0, None)
    total = lam.sum()
    if total <= 0:
        return 1
    cum = np.cumsum(lam)
    best_i, best_score = 1, np.inf
    for i in range(1, lam.size):          # i counts leading eigenvalues
        head = cum[i - 1]
        score = (lam[i] ** 2 / head if head > 0 else np.inf) + c * i
        if score < best_score:
            best_score = score
            best_i = i
    return best_i


def interval_histogram(frame_labels: np.ndarray, num_poselets: int,
                       t_start: int, t_end: int) -> np.ndarray:
    """Normalized K-bin poselet histogram of one interval.

    GC-labeled frames are excluded; an interval of only GC frames yields the
    zero histogram.
    """
    window = np.asarray(frame_labels)[t_start:t_end + 1]
    window = window[window < num_poselets]
    hist = np.bincount(window, minlength=num_poselets).astype(float)
    total = hist.sum()
    return hist / total if total > 0 else hist


def build_actionlets(histograms: np.ndarray, actions: np.ndarray,
                     num_actions: int, c: float = 2e-3, seed: int = 0,
                     bandwidth_scale: float = 8.0,
                     laplacian_normalize: bool = False
                     ) -> tuple[ActionletDictionary, np.ndarray]:
    """Discover the actionlet dictionary from per-interval histograms.

    ``histograms`` is (N, K) with one row per (interval, region) sample and
    ``actions`` the matching atomic action ids. Per action: a Gaussian
    affinity over chi-squared distances is eigendecomposed, the scree rule
    picks the actionlet count (clamped to the sample count), and k-means
    splits the samples. Returns the dictionary plus the per-sample actionlet
    assignment.

    The affinity bandwidth is ``bandwidth_scale`` times the mean pairwise
    distance within the action. A wide bandwidth keeps the affinity in its
    near-linear regime, where within-cluster distance noise contributes
    eigenvalues growing like sqrt(n) while cluster structure grows like n,
    so the scree rule stays at the cluster count as samples accumulate.
    ``laplacian_normalize`` switches the spectrum to the degree-normalized
    affinity D^-1/2 A D^-1/2 instead of A itself.
    """
    histograms = np.asarray(histograms, dtype=float)
    actions = np.asarray(actions, dtype=int)
    present = np.unique(actions)
    if present.size < num_actions or present.min() < 0 or \
            present.max() >= num_actions:
        missing = sorted(set(range(num_actions)) - set(present.tolist()))
        raise ValueError(f"every atomic action needs samples; missing {missing}")

    counts = np.zeros(num_actions, dtype=int)
    u_of_v: list[int] = []
    centroids: list[np.ndarray] = []
    assignment = np.full(actions.shape[0], -1, dtype=int)
    next_id = 0
    for s in range(num_actions):
        rows = np.flatnonzero(actions == s)
        H = histograms[rows]
        if rows.size == 1:
            g = 1
        else:
            dist = chi2_matrix(H)
            sigma = bandwidth_scale * dist[np.triu_indices(rows.size, k=1)].mean()
            affinity = np.exp(-dist / sigma) if sigma > 0 \
                else np.ones_like(dist)
            if laplacian_normalize:
                scale = 1.0 / np.sqrt(affinity.sum(axis=1))
                affinity = affinity * scale[:, None] * scale[None, :]
            lam = np.sort(np.linalg.eigvalsh(affinity))[::-1]
            g = min(scree_count(lam, c=c), rows.size)
        if g == 1:
            local = np.zeros(rows.size, dtype=int)
            cents = H.mean(axis=0, keepdims=True)
        else:
            cents, local = kmeans(H, g, seed=seed + s)
        counts[s] = g
        for a in range(g):
            u_of_v.append(s)
            centroids.append(cents[a])
        assignment[rows] = next_id + local
        next_id += g
    dictionary = ActionletDictionary(
        num_actions=num_actions,
        counts=counts,
        u_of_v=np.asarray(u_of_v, dtype=int),
        centroids=np.vstack(centroids),
    )
    return dictionary, assignment


def nearest_actionlet(dictionary: ActionletDictionary, action: int,
                      histogram: np.ndarray) -> int:
    """Chi-squared nearest actionlet of a given action for one histogram."""
    candidates = dictionary.actionlets_of(action)
    dists = [chi2(histogram, dictionary.centroids[a]) for a in candidates]
    return int(candidates[int(np.argmin(dists))])
