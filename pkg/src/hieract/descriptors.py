"""Per-region frame descriptors: geometric angles plus reduced motion.

The frame descriptor for region r is the concatenation of an 18-D geometric
part (15 segment-pair angles and 3 plane-segment angles) and a motion part
reduced to a fixed dimension with PCA. Motion comes either from joint
velocities (central differences over a clamped window) or from a precomputed
per-joint feature sidecar (JSON-lines ``{"t": int, "joint": int,
"feat": [...]}``).
"""
from __future__ import annotations

import io
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .skeleton import (JointSchema, RegionJoints, SchemaError,
                       SkeletonSequence, get_schema, split_regions)

GEO_DIM = 18
_PAIR_INDEX = [(i, j) for i in range(6) for j in range(i + 1, 6)]
_ZERO_NORM = 1e-12


@dataclass(frozen=True)
class GeoDescriptor:
    """18 angles in radians for one frame of one region.

    The 15 pairwise entries lie in [0, pi] (lexicographic over the region's
    segment list), the 3 plane entries in [0, pi/2]. ``degenerate`` marks
    frames where a zero-length segment or collapsed plane forced angle 0.
    """
    angles: np.ndarray
    degenerate: bool


@dataclass
class PcaModel:
    """Linear projection to ``out_dim`` principal directions.

    ``components`` has shape (input_dim, out_dim); columns are orthonormal
    except trailing zero columns padded when the data rank fell short.
    """
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.components.shape[0]

    @property
    def out_dim(self) -> int:
        return self.components.shape[1]

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return (X - self.mean) @ self.components

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(),
                "components": self.components.tolist(),
                "explained_variance": self.explained_variance.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        return cls(mean=np.asarray(d["mean"], dtype=float),
                   components=np.asarray(d["components"], dtype=float),
                   explained_variance=np.asarray(d["explained_variance"],
                                                 dtype=float))


def geo_descriptors(region_joints: RegionJoints) -> tuple[np.ndarray, np.ndarray]:
    """Geometric descriptors for every frame of one region.

    Returns (angles, degenerate): angles (T, 18), degenerate (T,) bool.
    Zero-length segments and collapsed planes contribute angle 0 and set the
    frame's degenerate flag instead of raising, so long noisy captures
    survive.
    """
    region = region_joints.region
    coords = region_joints.coords
    if coords.shape[-1] != 3:
        raise SchemaError(
            "geometric descriptor needs 3-D joints; lift 2-D input first")
    T = coords.shape[0]

    segs = np.empty((T, 6, 3))
    for s, (start, end) in enumerate(region.segments):
        segs[:, s] = region_joints.joint(end) - region_joints.joint(start)
    norms = np.linalg.norm(segs, axis=2)
    ok = norms > _ZERO_NORM
    units = np.zeros_like(segs)
    np.divide(segs, norms[:, :, None], out=units, where=ok[:, :, None])

    angles = np.zeros((T, GEO_DIM))
    degenerate = ~np.all(ok, axis=1)
    for col, (i, j) in enumerate(_PAIR_INDEX):
        dots = np.einsum("td,td->t", units[:, i], units[:, j])
        pair_ok = ok[:, i] & ok[:, j]
        angles[:, col] = np.where(
            pair_ok, np.arccos(np.clip(dots, -1.0, 1.0)), 0.0)

    p0 = region_joints.joint(region.plane[0])
    p1 = region_joints.joint(region.plane[1])
    p2 = region_joints.joint(region.plane[2])
    normal = np.cross(p1 - p0, p2 - p0)
    n_norm = np.linalg.norm(normal, axis=1)
    n_ok = n_norm > _ZERO_NORM
    degenerate |= ~n_ok
    n_unit = np.zeros_like(normal)
    np.divide(normal, n_norm[:, None], out=n_unit, where=n_ok[:, None])
    for col, s in enumerate(region.noncoplanar_segments()):
        dots = np.abs(np.einsum("td,td->t", n_unit, units[:, s]))
        seg_ok = n_ok & ok[:, s]
        angles[:, GEO_DIM - 3 + col] = np.where(
            seg_ok, np.arcsin(np.clip(dots, 0.0, 1.0)), 0.0)
    return angles, degenerate


def geo_descriptor(region_joints: RegionJoints, t: int) -> GeoDescriptor:
    """Geometric descriptor of a single frame."""
    angles, degenerate = geo_descriptors(region_joints)
    return GeoDescriptor(angles=angles[t], degenerate=bool(degenerate[t]))


def velocity_descriptors(coords: np.ndarray, window: int = 7) -> np.ndarray:
    """Raw motion vectors from joint velocities, one row per frame.

    ``coords`` is (T, J, dims). Per frame t the descriptor concatenates, per
    joint, the central-difference displacement at each window offset
    t-w .. t+w, with offsets clamped at the sequence boundaries (forward or
    backward differences at the ends). Output is (T, dims*J*(2w+1)).
    A single-frame sequence yields all zeros.
    """
    coords = np.asarray(coords, dtype=float)
    T, J, dims = coords.shape
    steps = 2 * window + 1
    if T == 1:
        return np.zeros((1, dims * J * steps))
    diffs = np.gradient(coords, axis=0)  # central; one-sided at both ends
    offsets = np.arange(-window, window + 1)
    idx = np.clip(np.arange(T)[:, None] + offsets[None, :], 0, T - 1)
    # (T, steps, J, dims) -> per joint, per step
    gathered = diffs[idx].transpose(0, 2, 1, 3)
    return gathered.reshape(T, J * steps * dims)


def fit_pca(X: np.ndarray, out_dim: int = 20) -> PcaModel:
    """Fit a PCA projection to the top ``out_dim`` directions by variance.

    Requires more samples than output dimensions. When the data rank is
    below ``out_dim`` the missing directions are zero-padded and a warning
    is emitted.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if n <= out_dim:
        raise ValueError(f"need more than {out_dim} samples, got {n}")
    mean = X.mean(axis=0)
    _, svals, vt = np.linalg.svd(X - mean, full_matrices=False)
    variances = svals ** 2 / (n - 1)
    rank = int(np.sum(svals > svals[0] * 1e-12)) if svals.size else 0
    keep = min(out_dim, rank, d)
    components = np.zeros((d, out_dim))
    components[:, :keep] = vt[:keep].T
    # Deterministic sign: largest-magnitude loading of each column positive.
    for c in range(keep):
        pivot = np.argmax(np.abs(components[:, c]))
        if components[pivot, c] < 0:
            components[:, c] = -components[:, c]
    explained = np.zeros(out_dim)
    explained[:keep] = variances[:keep]
    if keep < out_dim:
        warnings.warn(
            f"data rank {keep} below requested {out_dim} PCA directions; "
            "padding with zeros", RuntimeWarning, stacklevel=2)
    return PcaModel(mean=mean, components=components,
                    explained_variance=explained)


def lift_2d(seq: SkeletonSequence, depth: float = 30.0) -> SkeletonSequence:
    """Lift a 2-D skeleton sequence to 3-D with a fixed depth offset.

    Wrists and knees get z=+depth, elbows z=-depth, all other joints z=0,
    so that plane angles become computable for 2-D input.
    """
    schema = get_schema(seq.schema)
    if seq.joints.shape[-1] != 2:
        raise SchemaError("lift_2d expects 2-D input coordinates")
    z = np.zeros(schema.num_joints)
    for j, name in enumerate(schema.joint_names):
        if "wrist" in name or "knee" in name:
            z[j] = depth
        elif "elbow" in name:
            z[j] = -depth
    joints = np.concatenate(
        [seq.joints, np.broadcast_to(z[None, :, None],
                                     (seq.num_frames, schema.num_joints, 1))],
        axis=2)
    return SkeletonSequence(video_id=seq.video_id, schema=seq.schema,
                            joints=joints, fps=seq.fps)


def load_motion_sidecar(stream, num_frames: int, num_joints: int) -> np.ndarray:
    """Read a precomputed per-joint motion feature sidecar.

    Returns (T, J, F). Every (t, joint) pair present must carry the same
    feature length; missing pairs default to zeros.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    feats: dict[tuple[int, int], np.ndarray] = {}
    dim = None
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        obj = json.loads(line)
        vec = np.asarray(obj["feat"], dtype=float)
        if dim is None:
            dim = vec.shape[0]
        elif vec.shape[0] != dim:
            raise SchemaError(
                f"sidecar line {lineno}: feature length {vec.shape[0]} != {dim}")
        feats[(int(obj["t"]), int(obj["joint"]))] = vec
    if dim is None:
        raise SchemaError("motion sidecar is empty")
    out = np.zeros((num_frames, num_joints, dim))
    for (t, j), vec in feats.items():
        out[t, j] = vec
    return out


def raw_motion_vectors(seq: SkeletonSequence, schema: JointSchema,
                       mode: str, window: int = 7,
                       sidecar: np.ndarray | None = None) -> list[np.ndarray]:
    """Per-region raw (pre-PCA) motion matrices, each (T, raw_dim)."""
    out = []
    for region in schema.regions:
        idx = [schema.joint_index(n) for n in region.joints]
        if mode == "velocity":
            out.append(velocity_descriptors(seq.joints[:, idx], window=window))
        elif mode == "precomputed":
            if sidecar is None:
                raise ValueError("precomputed mode needs a motion sidecar")
            T = seq.num_frames
            out.append(sidecar[:, idx].reshape(T, -1))
        else:
            raise ValueError(f"unknown motion mode {mode!r}")
    return out


def build_descriptors(seq: SkeletonSequence,
                      schema: JointSchema | None = None,
                      mode: str = "geo+velocity",
                      pca_models: list[PcaModel] | None = None,
                      window: int = 7,
                      sidecar: np.ndarray | None = None) -> np.ndarray:
    """Compose the full (T, R, D) descriptor array for one sequence.

    ``mode`` is "geo" (D=18), "geo+velocity" or "geo+precomputed" (D=18 +
    PCA output dim). The motion modes require one fitted PcaModel per
    region. Deterministic for fixed inputs.
    """
    if schema is None:
        schema = get_schema(seq.schema)
    regions = split_regions(seq, schema)
    geo = [geo_descriptors(rj)[0] for rj in regions]
    if mode == "geo":
        return np.stack(geo, axis=1)
    motion_mode = mode.split("+", 1)[1]
    if pca_models is None or len(pca_models) != schema.num_regions:
        raise ValueError("motion modes require one fitted PCA model per region")
    raw = raw_motion_vectors(seq, schema, motion_mode, window=window,
                             sidecar=sidecar)
    per_region = [np.concatenate([geo[r], pca_models[r].transform(raw[r])],
                                 axis=1)
                  for r in range(schema.num_regions)]
    return np.stack(per_region, axis=1)
