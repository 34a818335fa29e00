"""Simulation meshes: loading, per-element gradient operators and integration measures.

Three element kinds are supported, one per mesh:

* ``tet``  -- linear tetrahedra (4 vertices)
* ``tri``  -- linear triangles used as thin shells (3 vertices)
* ``rod``  -- straight segments used as rods / springs (2 vertices)

File grammars
-------------
Plain tet pair (``foo.node`` + ``foo.ele``)::

    # comments and blank lines are ignored
    x y z            <- one vertex per line in foo.node
    i j k l          <- one element per line in foo.ele, 0-based

TetGen pair: if the first data line of ``.node`` has four integer tokens it is
read as a TetGen header (``npts dim nattr nbm``), each vertex line carries a
leading index and the ``.ele`` header is ``ntets nodes_per_tet nattr``.
Indices are shifted by the smallest vertex index so both 0- and 1-based files
load.

Medit (``foo.mesh``): the ``Vertices`` and ``Tetrahedra`` sections are read
(1-based indices, trailing reference ids dropped). Everything else is skipped.

OBJ (triangles): only ``v`` and ``f`` records are used. Face tokens may be
``i``, ``i/t`` or ``i/t/n``; polygons are fan-triangulated; negative indices
are relative as in the OBJ standard.

Edge list (rods)::

    x y z            <- three tokens: vertex
    i j              <- two tokens: edge, 0-based

Vertex lines must all precede edge lines.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

KINDS = {"tet": 4, "tri": 3, "rod": 2}

#: Minimum accepted element measure, relative to the bounding-box scale.
EPS_VOL = 1e-12


class MeshError(ValueError):
    """Raised for unreadable files and degenerate elements."""

    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


def tet_gradient(T):
    """Gradient operator of a linear tetrahedron.

    ``T`` is the 3x3 matrix whose columns are the rest edge vectors
    ``X1-X0, X2-X0, X3-X0``. Returns the 4x3 matrix ``G`` with
    ``F = Q @ G`` for vertex positions stacked as columns of ``Q`` (3x4).
    Accepts a batch of shape (..., 3, 3).
    """
    T = np.asarray(T, dtype=float)
    det = np.linalg.det(T)
    if np.any(np.abs(det) <= EPS_VOL * np.max(np.abs(T)) ** 3):
        raise MeshError("singular tetrahedron edge matrix")
    Tinv = np.linalg.inv(T)
    first = -Tinv.sum(axis=-2, keepdims=True)
    return np.concatenate([first, Tinv], axis=-2)


def _pinv_gradient(T):
    # T: (..., 3, k) rest edges as columns; returns (..., k+1, 3)
    TtT = np.swapaxes(T, -1, -2) @ T
    det = np.linalg.det(TtT)
    scale = np.max(np.abs(TtT)) if TtT.size else 1.0
    k = T.shape[-1]
    if np.any(det <= EPS_VOL * max(scale, 1e-300) ** k):
        raise MeshError("degenerate element edge matrix")
    P = np.linalg.solve(TtT, np.swapaxes(T, -1, -2))
    return np.concatenate([-P.sum(axis=-2, keepdims=True), P], axis=-2)


def tri_gradient(T):
    """3x3 gradient operator of a triangle with rest edges as the two columns of ``T`` (3x2)."""
    T = np.asarray(T, dtype=float)
    if T.shape[-2:] == (2, 3):
        T = np.swapaxes(T, -1, -2)
    return _pinv_gradient(T)


def rod_gradient(e):
    """2x3 gradient operator of a segment with rest edge vector ``e``."""
    e = np.asarray(e, dtype=float)
    return _pinv_gradient(e[..., :, None])


def _rod_frames(d):
    # d: (T,3) unit edge directions
    axis = np.argmin(np.abs(d), axis=1)
    a = np.zeros_like(d)
    a[np.arange(len(d)), axis] = 1.0
    n = np.cross(d, a)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    b = np.cross(d, n)
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    return n, b


@dataclass(frozen=True, eq=False)
class SimMesh:
    """Rest geometry plus derived per-element quantities.

    Build with :meth:`from_arrays` (or :func:`load_mesh`); the derived fields
    are filled in there and the instance is treated as immutable afterwards.
    """

    rest_positions: np.ndarray  # (V, 3)
    elements: np.ndarray  # (T, k)
    kind: str
    grad_ops: np.ndarray = field(repr=False)  # (T, k, 3)
    volumes: np.ndarray = field(repr=False)  # (T,)
    ref_normals: np.ndarray | None = field(default=None, repr=False)  # (T, 3)
    ref_binormals: np.ndarray | None = field(default=None, repr=False)  # (T, 3)
    thickness: float = 1e-3
    cross_section: float = 1e-6

    @classmethod
    def from_arrays(cls, vertices, elements, kind, thickness=1e-3, cross_section=1e-6):
        if kind not in KINDS:
            raise MeshError(f"unknown element kind {kind!r}")
        X = np.ascontiguousarray(vertices, dtype=float).reshape(-1, 3)
        E = np.array(elements, dtype=np.int64).reshape(-1, KINDS[kind])
        if len(E) == 0:
            raise MeshError("mesh has no elements")
        if E.min() < 0 or E.max() >= len(X):
            raise MeshError("element references a vertex that does not exist")
        if kind == "tri" and thickness <= 0:
            raise MeshError("shell thickness must be positive")
        if kind == "rod" and cross_section <= 0:
            raise MeshError("rod cross-section must be positive")

        extent = float(np.max(np.ptp(X, axis=0))) if len(X) > 1 else 1.0
        extent = extent if extent > 0 else 1.0
        edges = X[E[:, 1:]] - X[E[:, :1]]  # (T, k-1, 3)
        normals = binormals = None

        if kind == "tet":
            det = np.linalg.det(np.swapaxes(edges, 1, 2))
            bad = np.flatnonzero(np.abs(det) / 6.0 <= EPS_VOL * extent**3)
            if bad.size:
                raise MeshError(f"degenerate tetrahedron at element {bad[0]}", int(bad[0]))
            flip = det < 0
            if flip.any():
                logger.debug("reorienting %d inverted tetrahedra", int(flip.sum()))
                E = E.copy()
                E[flip, 2], E[flip, 3] = E[flip, 3], E[flip, 2].copy()
                edges = X[E[:, 1:]] - X[E[:, :1]]
            T = np.swapaxes(edges, 1, 2)
            G = tet_gradient(T)
            vol = np.abs(det) / 6.0
        elif kind == "tri":
            cross = np.cross(edges[:, 0], edges[:, 1])
            area = 0.5 * np.linalg.norm(cross, axis=1)
            bad = np.flatnonzero(area * thickness <= EPS_VOL * extent**3)
            if bad.size:
                raise MeshError(f"degenerate triangle at element {bad[0]}", int(bad[0]))
            G = tri_gradient(np.swapaxes(edges, 1, 2))
            vol = area * thickness
            normals = cross / (2.0 * area[:, None])
        else:
            length = np.linalg.norm(edges[:, 0], axis=1)
            bad = np.flatnonzero(length * cross_section <= EPS_VOL * extent**3)
            if bad.size:
                raise MeshError(f"degenerate rod segment at element {bad[0]}", int(bad[0]))
            G = rod_gradient(edges[:, 0])
            vol = length * cross_section
            normals, binormals = _rod_frames(edges[:, 0] / length[:, None])

        for arr in (X, E, G, vol, normals, binormals):
            if arr is not None:
                arr.setflags(write=False)
        return cls(X, E, kind, G, vol, normals, binormals, float(thickness), float(cross_section))

    @property
    def n_vertices(self):
        return len(self.rest_positions)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def verts_per_element(self):
        return KINDS[self.kind]

    @property
    def bbox_size(self):
        return float(np.linalg.norm(np.ptp(self.rest_positions, axis=0)))

    def deformation_gradients(self, q):
        """Per-element F = Q_i G_i for flattened (or (V,3)) positions ``q``."""
        x = np.asarray(q, dtype=float).reshape(-1, 3)
        return np.einsum("tva,tvb->tab", x[self.elements], self.grad_ops)

    def reference_frame_matrices(self):
        """Per-element ``n n^T`` (+ ``n' n'^T`` for rods); zeros for tets."""
        N = np.zeros((self.n_elements, 3, 3))
        if self.ref_normals is not None:
            N += np.einsum("ti,tj->tij", self.ref_normals, self.ref_normals)
        if self.ref_binormals is not None:
            N += np.einsum("ti,tj->tij", self.ref_binormals, self.ref_binormals)
        return N

    def boundary_faces(self):
        """Outward-oriented boundary triangles of a tet mesh (or the faces of a tri mesh)."""
        if self.kind == "tri":
            return np.asarray(self.elements)
        if self.kind != "tet":
            raise MeshError("boundary faces are only defined for tet and tri meshes")
        E = self.elements
        # faces opposite vertex 0..3, oriented outward for positively oriented tets
        faces = np.concatenate([E[:, [1, 2, 3]], E[:, [0, 3, 2]], E[:, [0, 1, 3]], E[:, [0, 2, 1]]])
        key = np.sort(faces, axis=1)
        _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        return faces[counts[inverse.ravel()] == 1]

    def unique_edges(self):
        k = self.verts_per_element
        pairs = [(a, b) for a in range(k) for b in range(a + 1, k)]
        edges = np.concatenate([self.elements[:, [a, b]] for a, b in pairs])
        return np.unique(np.sort(edges, axis=1), axis=0)


def reference_frames(mesh):
    """Per-element (normal, binormal); binormal is ``None`` for triangles."""
    if mesh.kind == "tet":
        raise MeshError("reference frames are defined for tri and rod meshes only")
    return mesh.ref_normals, mesh.ref_binormals


def surface_mesh(mesh, thickness=1e-3):
    """Shell mesh on the boundary surface of a tet mesh, unused vertices dropped."""
    faces = mesh.boundary_faces()
    used, remap = np.unique(faces, return_inverse=True)
    return SimMesh.from_arrays(mesh.rest_positions[used], remap.reshape(faces.shape), "tri", thickness=thickness)


def edge_mesh(mesh, cross_section=1e-6):
    """Rod mesh with one segment per unique edge of ``mesh``."""
    return SimMesh.from_arrays(mesh.rest_positions, mesh.unique_edges(), "rod", cross_section=cross_section)


# ---------------------------------------------------------------------------
# file readers


def _data_lines(path):
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if line:
                yield line.split()


def _is_int(tok):
    try:
        int(tok)
    except ValueError:
        return False
    return True


def _read_node_ele(node_path, ele_path):
    node_lines = list(_data_lines(node_path))
    ele_lines = list(_data_lines(ele_path))
    if not node_lines or not ele_lines:
        raise MeshError(f"empty tet mesh files {node_path!r}/{ele_path!r}")
    tetgen = len(node_lines[0]) >= 4 and all(_is_int(t) for t in node_lines[0])
    try:
        if tetgen:
            npts = int(node_lines[0][0])
            rows = node_lines[1 : 1 + npts]
            ids = np.array([int(r[0]) for r in rows])
            X = np.array([[float(v) for v in r[1:4]] for r in rows])
            ntet = int(ele_lines[0][0])
            E = np.array([[int(v) for v in r[1:5]] for r in ele_lines[1 : 1 + ntet]])
            E = E - ids.min()
        else:
            X = np.array([[float(v) for v in r] for r in node_lines])
            E = np.array([[int(v) for v in r] for r in ele_lines])
    except (ValueError, IndexError) as exc:
        raise MeshError(f"cannot parse tet mesh {node_path!r}: {exc}") from exc
    if X.ndim != 2 or X.shape[1] != 3:
        raise MeshError(f"{node_path}: vertex lines must hold three floats")
    if E.ndim != 2 or E.shape[1] != 4:
        raise MeshError(f"{ele_path}: element lines must hold four indices")
    return X, E


def _read_medit(path):
    lines = list(_data_lines(path))
    X = E = None
    i = 0
    try:
        while i < len(lines):
            key = lines[i][0].lower()
            if key in ("vertices", "tetrahedra"):
                count = int(lines[i][1]) if len(lines[i]) > 1 else int(lines[i + 1][0])
                start = i + 1 if len(lines[i]) > 1 else i + 2
                block = lines[start : start + count]
                if key == "vertices":
                    X = np.array([[float(v) for v in r[:3]] for r in block])
                else:
                    E = np.array([[int(v) for v in r[:4]] for r in block]) - 1
                i = start + count
            else:
                i += 1
    except (ValueError, IndexError) as exc:
        raise MeshError(f"cannot parse Medit mesh {path!r}: {exc}") from exc
    if X is None or E is None:
        raise MeshError(f"{path}: missing Vertices or Tetrahedra section")
    return X, E


def _read_obj(path):
    verts, faces = [], []
    try:
        for tok in _data_lines(path):
            if tok[0] == "v":
                verts.append([float(v) for v in tok[1:4]])
            elif tok[0] == "f":
                idx = []
                for t in tok[1:]:
                    j = int(t.split("/")[0])
                    idx.append(j - 1 if j > 0 else len(verts) + j)
                faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
    except (ValueError, IndexError) as exc:
        raise MeshError(f"cannot parse OBJ {path!r}: {exc}") from exc
    return np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _read_edges(path):
    verts, edges = [], []
    try:
        for tok in _data_lines(path):
            if len(tok) == 3 and not edges:
                verts.append([float(v) for v in tok])
            elif len(tok) == 2:
                edges.append([int(tok[0]), int(tok[1])])
            else:
                raise ValueError(f"unexpected line {' '.join(tok)!r}")
    except ValueError as exc:
        raise MeshError(f"cannot parse edge list {path!r}: {exc}") from exc
    return np.array(verts, dtype=float).reshape(-1, 3), np.array(edges, dtype=np.int64).reshape(-1, 2)


def load_mesh(path, kind, thickness=1e-3, cross_section=1e-6):
    """Read a mesh file of the given element kind and build a :class:`SimMesh`."""
    path = os.fspath(path)
    if kind == "tet":
        root, ext = os.path.splitext(path)
        if ext == ".mesh":
            X, E = _read_medit(path)
        else:
            base = root if ext in (".node", ".ele") else path
            if not os.path.exists(base + ".node"):
                raise MeshError(f"no such tet mesh: {base}.node")
            X, E = _read_node_ele(base + ".node", base + ".ele")
    elif kind == "tri":
        if not os.path.exists(path):
            raise MeshError(f"no such file: {path}")
        X, E = _read_obj(path)
    elif kind == "rod":
        if not os.path.exists(path):
            raise MeshError(f"no such file: {path}")
        X, E = _read_edges(path)
    else:
        raise MeshError(f"unknown element kind {kind!r}")
    return SimMesh.from_arrays(X, E, kind, thickness=thickness, cross_section=cross_section)


def write_node_ele(base, vertices, elements):
    """Write the plain ``.node``/``.ele`` pair read by :func:`load_mesh`."""
    base = os.fspath(base)
    np.savetxt(base + ".node", np.asarray(vertices, dtype=float), fmt="%.17g")
    np.savetxt(base + ".ele", np.asarray(elements, dtype=np.int64), fmt="%d")
