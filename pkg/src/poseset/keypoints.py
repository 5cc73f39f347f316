"""3D keypoint representations: box corners, interpolated edges, FPS samples.

The 32-point interpolated bounding box layout is fixed:
  - indices 0..7: corners in lexicographic sign order over (x, y, z),
    i.e. (-,-,-), (-,-,+), (-,+,-), (-,+,+), (+,-,-), (+,-,+), (+,+,-), (+,+,+);
  - indices 8..31: two interior points per edge at parameters 1/3 and 2/3,
    for the 12 edges enumerated as the 4 x-parallel, then 4 y-parallel, then
    4 z-parallel edges, each group ordered lexicographically by the fixed
    coordinates, interior points ordered by parameter.

Every edge then carries 4 collinear points (corner, 1/3, 2/3, corner) whose
cross-ratio is 4/3 and stays 4/3 under any perspective projection.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, TooFewVertices
from .geometry import project_points

# Each edge as (corner index at parameter 0, corner index at parameter 1),
# using the sign-order corner indexing above.  Groups: x-, y-, z-parallel.
EDGES = (
    # x varies; fixed (y, z) in lexicographic order
    (0, 4), (1, 5), (2, 6), (3, 7),
    # y varies; fixed (x, z)
    (0, 2), (1, 3), (4, 6), (5, 7),
    # z varies; fixed (x, y)
    (0, 1), (2, 3), (4, 5), (6, 7),
)

NUM_KEYPOINTS = 32


@dataclass(frozen=True)
class BBox3D:
    """Axis-aligned box centered at the model origin; half-extents in meters."""

    hx: float
    hy: float
    hz: float

    def __post_init__(self):
        if min(self.hx, self.hy, self.hz) <= 0:
            raise DegenerateInput("half-extents must be positive")

    @property
    def half_extents(self):
        return np.array([self.hx, self.hy, self.hz])

    @property
    def diameter(self):
        return float(2.0 * np.linalg.norm(self.half_extents))


@dataclass
class Mesh:
    """Vertex soup with optional faces; diameter is the max pairwise distance."""

    vertices: np.ndarray
    faces: np.ndarray | None = None
    diameter: float = field(default=0.0)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        if len(self.vertices) < 4:
            raise TooFewVertices("mesh needs at least 4 vertices")
        if self.diameter <= 0.0:
            self.diameter = mesh_diameter(self.vertices)

    def bounding_box(self):
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        h = np.maximum((hi - lo) / 2.0, 1e-9)
        return BBox3D(*h)


def mesh_diameter(vertices):
    """Max pairwise vertex distance (exact, chunked to bound memory)."""
    v = np.asarray(vertices, dtype=float)
    best = 0.0
    for i in range(0, len(v), 512):
        chunk = v[i : i + 512]
        d2 = ((chunk[:, None, :] - v[None, :, :]) ** 2).sum(axis=-1)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def box_corners(box):
    """8 corners in lexicographic sign order (-,-,-) ... (+,+,+)."""
    h = box.half_extents
    signs = np.array(
        [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
        dtype=float,
    )
    return signs * h


def ibb_keypoints(box):
    """32 interpolated-bounding-box points in the canonical order, (32, 3)."""
    corners = box_corners(box)
    pts = [corners]
    for (i, j) in EDGES:
        p0, p1 = corners[i], corners[j]
        pts.append(np.stack([p0 + (p1 - p0) / 3.0, p0 + 2.0 * (p1 - p0) / 3.0]))
    return np.concatenate(pts, axis=0)


def edge_point_indices():
    """Per edge, indices into the 32-point set of its 4 collinear points.

    Order along the edge: corner(0), 1/3, 2/3, corner(1).
    """
    out = []
    for e, (i, j) in enumerate(EDGES):
        out.append((i, 8 + 2 * e, 8 + 2 * e + 1, j))
    return out


def project_keypoints(kps, pose, cam):
    """Project a (32, 3) keypoint set; ordering preserved."""
    kps = np.asarray(kps, dtype=float)
    if kps.shape != (NUM_KEYPOINTS, 3):
        raise DegenerateInput(f"expected (32, 3) keypoints, got {kps.shape}")
    return project_points(kps, pose, cam)


def fps_sample(mesh, k, seed=0):
    """Greedy farthest point sampling of k vertices, deterministic given seed.

    The start vertex index is seed % n; each following pick maximizes the
    minimum distance to the already chosen set (ties broken by lowest index).
    """
    verts = mesh.vertices if isinstance(mesh, Mesh) else np.asarray(mesh, dtype=float)
    n = len(verts)
    if k < 1 or k > n:
        raise TooFewVertices(f"cannot sample {k} of {n} vertices")
    chosen = [int(seed) % n]
    min_d = np.linalg.norm(verts - verts[chosen[0]], axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(min_d))
        chosen.append(nxt)
        min_d = np.minimum(min_d, np.linalg.norm(verts - verts[nxt], axis=1))
    return verts[chosen].copy()


def load_mesh(path):
    """Load vertices (+faces) from an ASCII PLY or OBJ file, lengths in meters."""
    path = str(path)
    if path.lower().endswith(".ply"):
        return _load_ply(path)
    if path.lower().endswith(".obj"):
        return _load_obj(path)
    raise ValueError(f"unsupported mesh format: {path}")


def _load_ply(path):
    with open(path) as fh:
        if fh.readline().strip() != "ply":
            raise ValueError("not a PLY file")
        n_vert = n_face = 0
        element = None
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "format" and tok[1] != "ascii":
                raise ValueError("only ASCII PLY is supported")
            if tok[0] == "element":
                element = tok[1]
                if element == "vertex":
                    n_vert = int(tok[2])
                elif element == "face":
                    n_face = int(tok[2])
            if tok[0] == "end_header":
                break
        verts = np.array(
            [[float(x) for x in fh.readline().split()[:3]] for _ in range(n_vert)]
        )
        faces = []
        for _ in range(n_face):
            tok = fh.readline().split()
            faces.append([int(x) for x in tok[1 : 1 + int(tok[0])]])
    face_arr = np.array(faces, dtype=int) if faces else None
    return Mesh(verts, face_arr)


def _load_obj(path):
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "v":
                verts.append([float(x) for x in tok[1:4]])
            elif tok[0] == "f":
                # indices may carry /vt/vn suffixes; OBJ is 1-based
                faces.append([int(t.split("/")[0]) - 1 for t in tok[1:4]])
    face_arr = np.array(faces, dtype=int) if faces else None
    return Mesh(np.array(verts), face_arr)
