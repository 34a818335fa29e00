"""Procedural meshes for scenes and tests."""

import itertools

import numpy as np

from .mesh import SimMesh

# Kuhn subdivision: six tets sharing the cube diagonal 0 -> 7 (corner index = x + 2y + 4z)
_KUHN = []
for perm in itertools.permutations((1, 2, 4)):
    path = [0, perm[0], perm[0] + perm[1], 7]
    _KUHN.append(path)


def box_tet_mesh(shape=(1, 1, 1), size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    """Axis-aligned box split into ``6 * nx * ny * nz`` conforming tetrahedra."""
    nx, ny, nz = shape
    xs = [np.linspace(o, o + s, n + 1) for o, s, n in zip(origin, size, shape)]
    grid = np.stack(np.meshgrid(*xs, indexing="ij"), axis=-1).reshape(-1, 3)

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                corner = [vid(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)) for c in range(8)]
                tets.extend([corner[a] for a in t] for t in _KUHN)
    return grid, np.array(tets, dtype=np.int64)


def box_mesh(shape=(1, 1, 1), size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    return SimMesh.from_arrays(*box_tet_mesh(shape, size, origin), "tet")


def blob_tet_mesh(resolution=6, radius=0.5, center=(0.0, 0.0, 0.0), squash=(1.0, 0.8, 0.9)):
    """Roughly ellipsoidal tet mesh: grid cells whose centre lies inside the ellipsoid."""
    n = resolution
    X, T = box_tet_mesh((n, n, n), (2 * radius,) * 3, tuple(c - radius for c in center))
    axes = radius * np.asarray(squash)
    cells = X[T].mean(axis=1) - np.asarray(center)
    inside = np.sum((cells / axes) ** 2, axis=1) <= 1.0
    T = T[inside]
    used, remap = np.unique(T, return_inverse=True)
    return X[used], remap.reshape(T.shape)


def grid_tri_mesh(shape=(4, 4), size=(1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    """Triangulated rectangle in the z = origin[2] plane with +z normals."""
    nx, ny = shape
    xs = np.linspace(origin[0], origin[0] + size[0], nx + 1)
    ys = np.linspace(origin[1], origin[1] + size[1], ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    X = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, origin[2])], axis=1)
    faces = []
    for i in range(nx):
        for j in range(ny):
            a = i * (ny + 1) + j
            b, c, d = a + ny + 1, a + 1, a + ny + 2
            faces += [[a, b, d], [a, d, c]]
    return X, np.array(faces, dtype=np.int64)


def polyline(n_segments=4, length=1.0, direction=(1.0, 0.0, 0.0), origin=(0.0, 0.0, 0.0)):
    d = np.asarray(direction, dtype=float)
    d /= np.linalg.norm(d)
    t = np.linspace(0.0, length, n_segments + 1)
    X = np.asarray(origin, dtype=float) + t[:, None] * d
    E = np.stack([np.arange(n_segments), np.arange(1, n_segments + 1)], axis=1)
    return X, E
