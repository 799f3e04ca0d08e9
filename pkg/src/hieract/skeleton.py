"""Skeleton streams, joint schemas, body regions, and annotation files.

A skeleton file is JSON-lines: a header object on the first line
(``{"schema": ..., "video_id": ..., "fps": ...}``) followed by one object
per frame (``{"t": <int>, "joints": [[x, y, z], ...]}``). Frames may appear
out of order; parsing sorts them ascending by ``t``. Annotation files are
CSV with header ``video_id,action_id,t_start,t_end,region`` (region -1 =
unknown); label files are CSV ``video_id,complex_action``. Frame indices
are 0-based and intervals are inclusive on both ends. Action and label ids
are 0-based integers throughout.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np


class ParseError(ValueError):
    """Malformed skeleton or annotation input; carries the offending line."""


class SchemaError(ValueError):
    """Input disagrees with the joint schema (count, names, dimensions)."""


# Canonical names of the shared reference joints every region subset carries.
REFERENCE_JOINTS = ("head", "neck", "torso", "hip_center")


@dataclass(frozen=True)
class RegionSpec:
    """One fixed body region: the joints it owns and its descriptor geometry.

    ``segments`` are ordered (start, end) joint-name pairs; the direction is
    end minus start. ``plane`` names the three joints spanning the region
    plane. Segments with an endpoint outside the plane triple are the
    non-coplanar ones used for the plane angles.
    """
    name: str
    kind: str  # "arm" | "leg"
    joints: tuple[str, ...]
    segments: tuple[tuple[str, str], ...]
    plane: tuple[str, str, str]

    def noncoplanar_segments(self) -> list[int]:
        plane_set = set(self.plane)
        return [i for i, (a, b) in enumerate(self.segments)
                if not (a in plane_set and b in plane_set)]


@dataclass(frozen=True)
class JointSchema:
    """Named joints of a skeleton plus its split into R fixed regions.

    ``reference_map`` maps the canonical reference names (head, neck, torso,
    hip_center) to this schema's joint names, so that schemas lacking an
    explicit torso or hip-center joint can alias another joint.
    """
    name: str
    joint_names: tuple[str, ...]
    regions: tuple[RegionSpec, ...]
    reference_map: dict[str, str] = field(default_factory=dict)
    dims: int = 3

    def __post_init__(self):
        known = set(self.joint_names)
        if not self.regions:
            raise SchemaError("schema must define at least one region")
        for region in self.regions:
            if not region.joints:
                raise SchemaError(f"region {region.name!r} owns no joints")
            for j in region.joints:
                if j not in known:
                    raise SchemaError(
                        f"region {region.name!r} references unknown joint {j!r}")
        for canonical in REFERENCE_JOINTS:
            mapped = self.reference_map.get(canonical, canonical)
            if mapped not in known:
                raise SchemaError(
                    f"reference joint {canonical!r} -> {mapped!r} missing "
                    f"from schema {self.name!r}")

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    @property
    def num_regions(self) -> int:
        return len(self.regions)

    def joint_index(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise SchemaError(f"unknown joint {name!r} in schema {self.name!r}")

    def reference_joint(self, canonical: str) -> str:
        return self.reference_map.get(canonical, canonical)


def _side_arm(side: str) -> RegionSpec:
    s, e, w = f"{side}_shoulder", f"{side}_elbow", f"{side}_wrist"
    return RegionSpec(
        name=f"{side}_arm",
        kind="arm",
        joints=(s, e, w, f"{side}_hand"),
        segments=((w, e), (e, s), (s, "neck"), (w, s), (w, "head"),
                  ("neck", "torso")),
        plane=(s, e, w),
    )


def _side_leg(side: str) -> RegionSpec:
    h, k, a = f"{side}_hip", f"{side}_knee", f"{side}_ankle"
    return RegionSpec(
        name=f"{side}_leg",
        kind="leg",
        joints=(h, k, a, f"{side}_foot"),
        segments=((a, k), (k, h), (h, "hip_center"), (a, h), (a, "torso"),
                  ("hip_center", "torso")),
        plane=(h, k, a),
    )


KINECT20 = JointSchema(
    name="kinect20",
    joint_names=(
        "head", "neck", "torso", "hip_center",
        "left_shoulder", "left_elbow", "left_wrist", "left_hand",
        "right_shoulder", "right_elbow", "right_wrist", "right_hand",
        "left_hip", "left_knee", "left_ankle", "left_foot",
        "right_hip", "right_knee", "right_ankle", "right_foot",
    ),
    regions=(_side_arm("left"), _side_arm("right"),
             _side_leg("left"), _side_leg("right")),
)

# 2D puppet skeleton (sub-JHMDB style): no distinct torso/hip-center joint,
# both alias "belly"; no hands or feet.
PUPPET15 = JointSchema(
    name="puppet15",
    joint_names=(
        "head", "neck", "belly",
        "left_shoulder", "left_elbow", "left_wrist",
        "right_shoulder", "right_elbow", "right_wrist",
        "left_hip", "left_knee", "left_ankle",
        "right_hip", "right_knee", "right_ankle",
    ),
    regions=(
        RegionSpec(
            name="left_arm", kind="arm",
            joints=("left_shoulder", "left_elbow", "left_wrist"),
            segments=(("left_wrist", "left_elbow"),
                      ("left_elbow", "left_shoulder"),
                      ("left_shoulder", "neck"),
                      ("left_wrist", "left_shoulder"),
                      ("left_wrist", "head"),
                      ("neck", "belly")),
            plane=("left_shoulder", "left_elbow", "left_wrist"),
        ),
        RegionSpec(
            name="right_arm", kind="arm",
            joints=("right_shoulder", "right_elbow", "right_wrist"),
            segments=(("right_wrist", "right_elbow"),
                      ("right_elbow", "right_shoulder"),
                      ("right_shoulder", "neck"),
                      ("right_wrist", "right_shoulder"),
                      ("right_wrist", "head"),
                      ("neck", "belly")),
            plane=("right_shoulder", "right_elbow", "right_wrist"),
        ),
        RegionSpec(
            name="left_leg", kind="leg",
            joints=("left_hip", "left_knee", "left_ankle"),
            segments=(("left_ankle", "left_knee"),
                      ("left_knee", "left_hip"),
                      ("left_hip", "belly"),
                      ("left_ankle", "left_hip"),
                      ("left_ankle", "belly"),
                      ("belly", "neck")),
            plane=("left_hip", "left_knee", "left_ankle"),
        ),
        RegionSpec(
            name="right_leg", kind="leg",
            joints=("right_hip", "right_knee", "right_ankle"),
            segments=(("right_ankle", "right_knee"),
                      ("right_knee", "right_hip"),
                      ("right_hip", "belly"),
                      ("right_ankle", "right_hip"),
                      ("right_ankle", "belly"),
                      ("belly", "neck")),
            plane=("right_hip", "right_knee", "right_ankle"),
        ),
    ),
    reference_map={"torso": "belly", "hip_center": "belly"},
    dims=2,
)

SCHEMAS: dict[str, JointSchema] = {s.name: s for s in (KINECT20, PUPPET15)}


def get_schema(name: str) -> JointSchema:
    if name not in SCHEMAS:
        raise SchemaError(
            f"unknown schema {name!r}; available: {sorted(SCHEMAS)}")
    return SCHEMAS[name]


def register_schema(schema: JointSchema) -> None:
    SCHEMAS[schema.name] = schema


@dataclass
class SkeletonSequence:
    """Per-frame joint coordinates for one video.

    ``joints`` has shape (T, J, dims) with dims 2 or 3 and arbitrary but
    dataset-consistent length units.
    """
    video_id: str
    schema: str
    joints: np.ndarray
    fps: float | None = None

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=float)
        if self.joints.ndim != 3:
            raise SchemaError("joints must have shape (T, J, dims)")
        if self.joints.shape[0] < 1:
            raise SchemaError("sequence must contain at least one frame")
        if not np.all(np.isfinite(self.joints)):
            raise SchemaError(f"non-finite joint coordinates in {self.video_id!r}")

    @property
    def num_frames(self) -> int:
        return self.joints.shape[0]

    @property
    def num_joints(self) -> int:
        return self.joints.shape[1]

    def joint(self, t: int, name: str) -> np.ndarray:
        return self.joints[t, get_schema(self.schema).joint_index(name)]


@dataclass(frozen=True)
class ActionInterval:
    """One temporal annotation: atomic action over [t_start, t_end] inclusive.

    ``region`` is the region index, or -1 when the spatial span is unknown.
    ``actionlet`` is filled in during initialization, never read from files.
    """
    action_id: int
    t_start: int
    t_end: int
    region: int = -1
    actionlet: int | None = None

    def __post_init__(self):
        if self.t_start < 0 or self.t_end < self.t_start:
            raise ParseError(
                f"bad interval bounds [{self.t_start}, {self.t_end}]")
        if self.action_id < 0:
            raise ParseError(f"bad action id {self.action_id}")

    def overlaps(self, other: "ActionInterval") -> bool:
        return self.t_start <= other.t_end and other.t_start <= self.t_end

    def covers(self, t: int) -> bool:
        return self.t_start <= t <= self.t_end


@dataclass
class VideoSample:
    """A skeleton sequence with whatever supervision accompanies it."""
    skeleton: SkeletonSequence
    complex_action: int | None = None
    intervals: list[ActionInterval] = field(default_factory=list)

    @property
    def video_id(self) -> str:
        return self.skeleton.video_id


@dataclass
class RegionJoints:
    """Joint coordinates of one region for a whole sequence.

    ``names`` lists owned joints first, then the shared reference joints;
    ``coords`` has shape (T, len(names), dims).
    """
    region: RegionSpec
    names: tuple[str, ...]
    coords: np.ndarray

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(
                f"joint {name!r} not in region {self.region.name!r} subset")

    def joint(self, name: str) -> np.ndarray:
        """(T, dims) trajectory of one joint, by region-local name."""
        return self.coords[:, self.index(name)]


def parse_skeleton(stream) -> SkeletonSequence:
    """Parse a JSON-lines skeleton stream into a SkeletonSequence.

    ``stream`` is an iterable of text lines or a str. The first line must be
    the header object; frame records follow in any order and are returned
    sorted ascending by ``t``.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    header = None
    frames: list[tuple[int, list]] = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})")
        if header is None:
            if "schema" not in obj or "video_id" not in obj:
                raise ParseError(
                    f"line {lineno}: first line must be a header with "
                    "'schema' and 'video_id'")
            header = obj
            continue
        if "t" not in obj or "joints" not in obj:
            raise ParseError(f"line {lineno}: frame record needs 't' and 'joints'")
        frames.append((int(obj["t"]), obj["joints"]))
    if header is None:
        raise ParseError("empty stream: missing header line")
    if not frames:
        raise ParseError("skeleton stream contains no frames")

    schema = get_schema(header["schema"])
    frames.sort(key=lambda item: item[0])
    coords = []
    for t, joints in frames:
        arr = np.asarray(joints, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != schema.num_joints:
            raise SchemaError(
                f"frame t={t}: expected {schema.num_joints} joints, "
                f"got shape {arr.shape}")
        if arr.shape[1] != schema.dims:
            raise SchemaError(
                f"frame t={t}: expected {schema.dims}-D coordinates, "
                f"got {arr.shape[1]}-D")
        coords.append(arr)
    return SkeletonSequence(
        video_id=str(header["video_id"]),
        schema=schema.name,
        joints=np.stack(coords),
        fps=header.get("fps"),
    )


def serialize_skeleton(seq: SkeletonSequence) -> str:
    """Inverse of parse_skeleton; parse(serialize(s)) == s."""
    out = [json.dumps({"schema": seq.schema, "video_id": seq.video_id,
                       "fps": seq.fps})]
    for t in range(seq.num_frames):
        out.append(json.dumps({"t": t, "joints": seq.joints[t].tolist()}))
    return "\n".join(out) + "\n"


def split_regions(seq: SkeletonSequence,
                  schema: JointSchema | None = None) -> list[RegionJoints]:
    """Split a sequence into its R region subsets.

    Each subset carries the region's owned joints plus the four shared
    reference joints (head, neck, torso, hip-center); reference joints are
    shared, never owned.
    """
    if schema is None:
        schema = get_schema(seq.schema)
    if seq.num_joints != schema.num_joints:
        raise SchemaError(
            f"sequence has {seq.num_joints} joints, schema "
            f"{schema.name!r} defines {schema.num_joints}")
    refs = tuple(dict.fromkeys(                       # dedupe aliased refs
        schema.reference_joint(c) for c in REFERENCE_JOINTS))
    subsets = []
    for region in schema.regions:
        names = region.joints + tuple(r for r in refs if r not in region.joints)
        idx = [schema.joint_index(n) for n in names]
        subsets.append(RegionJoints(region=region, names=names,
                                    coords=seq.joints[:, idx]))
    return subsets


def validate_annotations(sample: VideoSample) -> list[str]:
    """Report structural violations in a sample's intervals.

    Checkable constraints: intervals with a known region must not overlap
    pairwise within that region, and bounds must fit the sequence. Intervals
    with unknown region cannot violate anything checkable. Returns
    human-readable violation strings; empty means consistent.
    """
    violations = []
    T = sample.skeleton.num_frames
    for q, iv in enumerate(sample.intervals):
        if iv.t_end >= T:
            violations.append(
                f"interval {q} ends at {iv.t_end} but video has {T} frames")
    by_region: dict[int, list[tuple[int, ActionInterval]]] = {}
    for q, iv in enumerate(sample.intervals):
        if iv.region >= 0:
            by_region.setdefault(iv.region, []).append((q, iv))
    for region, items in sorted(by_region.items()):
        for i in range(len(items)):
            for j in range(i + 1, len(items)):
                (qa, a), (qb, b) = items[i], items[j]
                if a.overlaps(b):
                    violations.append(
                        f"intervals {qa} and {qb} overlap in region {region}")
    return violations


def load_annotations(stream) -> dict[str, list[ActionInterval]]:
    """Read an annotation CSV into per-video interval lists."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.DictReader(stream)
    expected = {"video_id", "action_id", "t_start", "t_end", "region"}
    if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
        raise ParseError(
            f"annotation CSV must have columns {sorted(expected)}")
    result: dict[str, list[ActionInterval]] = {}
    for row in reader:
        result.setdefault(row["video_id"], []).append(ActionInterval(
            action_id=int(row["action_id"]),
            t_start=int(row["t_start"]),
            t_end=int(row["t_end"]),
            region=int(row["region"]),
        ))
    return result


def save_annotations(intervals_by_video: dict[str, list[ActionInterval]]) -> str:
    lines = ["video_id,action_id,t_start,t_end,region"]
    for video_id in sorted(intervals_by_video):
        for iv in intervals_by_video[video_id]:
            lines.append(f"{video_id},{iv.action_id},{iv.t_start},"
                         f"{iv.t_end},{iv.region}")
    return "\n".join(lines) + "\n"


def load_labels(stream) -> dict[str, int]:
    """Read a labels CSV (video_id,complex_action)."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.DictReader(stream)
    if reader.fieldnames is None or \
            not {"video_id", "complex_action"}.issubset(reader.fieldnames):
        raise ParseError("labels CSV must have columns video_id,complex_action")
    return {row["video_id"]: int(row["complex_action"]) for row in reader}


def save_labels(labels: dict[str, int]) -> str:
    lines = ["video_id,complex_action"]
    for video_id in sorted(labels):
        lines.append(f"{video_id},{labels[video_id]}")
    return "\n".join(lines) + "\n"
