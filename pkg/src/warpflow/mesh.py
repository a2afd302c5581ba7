"""Conforming P1 triangulations of the unit square, unit disk and annulus.

A DomainMesh bundles the triangulation with everything the solvers need:
triangle areas, hat-function gradients, the lumped mass vector and the
precomputed local stiffness blocks

    stiff_local[t, i, j] = area_t * (grad lambda_i . grad lambda_j),

so a beta-weighted stiffness matrix is one scaled scatter-add away.

Disk and annulus meshes place vertices on concentric rings with the angular
count growing linearly with radius (quasi-uniform, no slivers) and let a
Delaunay triangulation stitch the rings; annulus hole triangles (all three
vertices on the inner ring) are dropped afterwards.  The unit square uses
the structured diagonal split, which is non-obtuse, hence satisfies the
discrete maximum principle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Delaunay, cKDTree

from .errors import InvalidShapeParameters, NonPositiveCoefficient


@dataclass
class DomainMesh:
    vertices: np.ndarray          # (nv, 2)
    triangles: np.ndarray         # (nt, 3), positively oriented
    boundary: np.ndarray          # (nv,) bool
    shape: str
    target_h: float
    h: float = 0.0                # realized max edge length
    areas: np.ndarray = field(default=None, repr=False)
    grads: np.ndarray = field(default=None, repr=False)        # (nt, 3, 2)
    barycenters: np.ndarray = field(default=None, repr=False)  # (nt, 2)
    lumped_mass: np.ndarray = field(default=None, repr=False)  # (nv,)
    stiff_local: np.ndarray = field(default=None, repr=False)  # (nt, 3, 3)
    _rows: np.ndarray = field(default=None, repr=False)
    _cols: np.ndarray = field(default=None, repr=False)
    _bary_tree: cKDTree = field(default=None, repr=False)

    def __post_init__(self):
        self._finalize()

    def _finalize(self):
        v, t = self.vertices, self.triangles
        e1 = v[t[:, 1]] - v[t[:, 0]]
        e2 = v[t[:, 2]] - v[t[:, 0]]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        flip = det < 0
        if np.any(flip):
            t[flip, 1], t[flip, 2] = t[flip, 2].copy(), t[flip, 1].copy()
            e1 = v[t[:, 1]] - v[t[:, 0]]
            e2 = v[t[:, 2]] - v[t[:, 0]]
            det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(det <= 0):
            raise InvalidShapeParameters("degenerate (zero-area) triangle in mesh")
        self.areas = 0.5 * det
        self.barycenters = v[t].mean(axis=1)

        # grad lambda_i = (y_j - y_k, x_k - x_j) / (2 A), indices cyclic
        p = v[t]                                  # (nt, 3, 2)
        g = np.empty((t.shape[0], 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            g[:, i, 0] = p[:, j, 1] - p[:, k, 1]
            g[:, i, 1] = p[:, k, 0] - p[:, j, 0]
        g /= (2.0 * self.areas)[:, None, None]
        self.grads = g

        self.stiff_local = np.einsum("tie,tje->tij", g, g) * self.areas[:, None, None]
        self._rows = np.repeat(t, 3, axis=1).ravel()
        self._cols = np.tile(t, (1, 3)).ravel()

        m = np.zeros(self.num_vertices)
        np.add.at(m, t.ravel(), np.repeat(self.areas / 3.0, 3))
        self.lumped_mass = m

        edges = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise InvalidShapeParameters("non-conforming mesh: edge shared by > 2 triangles")
        lengths = np.linalg.norm(v[uniq[:, 0]] - v[uniq[:, 1]], axis=1)
        self.h = float(lengths.max())
        bnd_edges = uniq[counts == 1]
        bmask = np.zeros(self.num_vertices, dtype=bool)
        bmask[bnd_edges.ravel()] = True
        self.boundary = bmask
        self._bary_tree = cKDTree(self.barycenters)

    # -- basic queries -------------------------------------------------

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    @property
    def boundary_indices(self) -> np.ndarray:
        return np.flatnonzero(self.boundary)

    @property
    def domain_area(self) -> float:
        return float(self.areas.sum())

    def nearest_vertex(self, point) -> int:
        d = np.linalg.norm(self.vertices - np.asarray(point, dtype=float), axis=1)
        return int(np.argmin(d))

    # -- P1 field operators ---------------------------------------------

    def tri_gradients(self, values: np.ndarray) -> np.ndarray:
        """Per-triangle constant gradient of a nodal field; (nt, 2, d)."""
        vals = np.asarray(values, dtype=float)
        squeeze = vals.ndim == 1
        if squeeze:
            vals = vals[:, None]
        G = np.einsum("tie,tid->ted", self.grads, vals[self.triangles])
        return G[:, :, 0] if squeeze else G

    def tri_grad_sq(self, values: np.ndarray) -> np.ndarray:
        """Per-triangle |grad f|^2 (all components summed); (nt,)."""
        G = self.tri_gradients(values)
        if G.ndim == 2:
            return np.sum(G * G, axis=1)
        return np.einsum("ted,ted->t", G, G)

    def nodal_from_tri(self, tri_values: np.ndarray) -> np.ndarray:
        """Mass-weighted nodal average of a per-triangle quantity."""
        acc = np.zeros(self.num_vertices)
        w = np.repeat(self.areas * tri_values / 3.0, 3)
        np.add.at(acc, self.triangles.ravel(), w)
        return acc / self.lumped_mass

    def integrate_nodal(self, nodal_values: np.ndarray) -> float:
        """Lumped-mass quadrature of a nodal scalar field."""
        return float(np.dot(self.lumped_mass, np.asarray(nodal_values, dtype=float)))

    def laplacian(self, stiffness: sp.csr_matrix, values: np.ndarray,
                  zero_boundary: bool = True) -> np.ndarray:
        """Lumped-mass discrete Laplacian -M^{-1} K f; boundary rows zeroed."""
        vals = np.asarray(values, dtype=float)
        squeeze = vals.ndim == 1
        if squeeze:
            vals = vals[:, None]
        lap = -(stiffness @ vals) / self.lumped_mass[:, None]
        if zero_boundary:
            lap[self.boundary] = 0.0
        return lap[:, 0] if squeeze else lap


@dataclass
class DiscreteField:
    """Nodal field on a mesh; values (nv,) scalar or (nv, d) vector."""

    mesh: DomainMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != self.mesh.num_vertices:
            raise ValueError("value count must equal vertex count")

    def max_distance_to(self, target) -> float:
        return float(np.max(target.distance(self.values)))


# -- constructors --------------------------------------------------------

def _doubling_count(length: float, step: float, start: int = 1) -> int:
    """Smallest start*2^k subdivisions so each piece is <= step.

    Power-of-two counts make halving `step` exactly double the count, so a
    refinement by halving nests and at least quadruples the triangle count
    (plain ceil can fall short: ceil(2x) may be 2*ceil(x) - 1).
    """
    n = start
    while n * step < length * (1.0 - 1e-12):
        n *= 2
    return n


def _square_mesh(target_h: float) -> DomainMesh:
    if target_h > 1.0:
        raise InvalidShapeParameters(
            f"target_h={target_h} exceeds the unit square side")
    n = _doubling_count(1.0, target_h)
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (n + 1) + j

    tris = []
    for i in range(n):
        for j in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return DomainMesh(verts, np.array(tris, dtype=np.int64),
                      boundary=None, shape="square", target_h=target_h)


def _ring_points(radii, counts, phases=None):
    pts = []
    for k, (r, n) in enumerate(zip(radii, counts)):
        offset = 0.0 if phases is None else phases[k]
        th = offset + 2.0 * np.pi * np.arange(n) / n
        pts.append(np.column_stack([r * np.cos(th), r * np.sin(th)]))
    return np.concatenate(pts)


def _disk_mesh(target_h: float) -> DomainMesh:
    if target_h > 0.5:
        raise InvalidShapeParameters(
            f"target_h={target_h} too coarse for the unit disk")
    nr = _doubling_count(1.0, target_h)
    radii = np.arange(1, nr + 1) / nr
    counts = [6 * k for k in range(1, nr + 1)]
    phases = [0.5 * np.pi * (k % 2) / counts[k - 1] for k in range(1, nr + 1)]
    pts = np.vstack([[[0.0, 0.0]], _ring_points(radii, counts, phases)])
    tris = Delaunay(pts).simplices
    return DomainMesh(pts, tris.astype(np.int64), boundary=None,
                      shape="disk", target_h=target_h)


def _annulus_mesh(r_in: float, r_out: float, target_h: float) -> DomainMesh:
    if r_in <= 0 or r_out <= r_in:
        raise InvalidShapeParameters(
            f"annulus needs 0 < r_in < r_out, got r_in={r_in}, r_out={r_out}")
    if 2.0 * target_h > r_out - r_in or 8.0 * target_h > 2.0 * np.pi * r_out:
        raise InvalidShapeParameters(
            f"target_h={target_h} too coarse for annulus({r_in}, {r_out})")
    nr = _doubling_count(r_out - r_in, target_h, start=2)
    nth = _doubling_count(2.0 * np.pi * r_out, target_h, start=8)
    radii = r_in + (r_out - r_in) * np.arange(nr + 1) / nr
    # structured lattice: same angular count on every ring, quad cells split
    # by a diagonal; triangle count 2*nth*nr doubles exactly in each index
    th = 2.0 * np.pi * np.arange(nth) / nth
    pts = np.concatenate([np.column_stack([r * np.cos(th), r * np.sin(th)])
                          for r in radii])
    k = np.repeat(np.arange(nr), nth)
    j = np.tile(np.arange(nth), nr)
    a = k * nth + j
    b = k * nth + (j + 1) % nth
    c = (k + 1) * nth + j
    d = (k + 1) * nth + (j + 1) % nth
    tris = np.concatenate([np.column_stack([a, c, d]),
                           np.column_stack([a, d, b])])
    return DomainMesh(pts, tris.astype(np.int64), boundary=None,
                      shape="annulus", target_h=target_h)


def build_mesh(shape: str, target_h: float, r_in: float = None,
               r_out: float = None) -> DomainMesh:
    """Build a conforming triangulation with max edge <= 1.5 * target_h."""
    if target_h <= 0:
        raise InvalidShapeParameters("target_h must be positive")
    if shape == "square":
        mesh = _square_mesh(target_h)
    elif shape == "disk":
        mesh = _disk_mesh(target_h)
    elif shape == "annulus":
        if r_in is None or r_out is None:
            raise InvalidShapeParameters("annulus needs r_in and r_out")
        mesh = _annulus_mesh(r_in, r_out, target_h)
    else:
        raise InvalidShapeParameters(f"unknown shape {shape!r}")
    if mesh.h > 1.5 * target_h:
        raise InvalidShapeParameters(
            f"mesh generator exceeded edge budget: h={mesh.h} > 1.5*{target_h}")
    return mesh


# -- energies and balls ---------------------------------------------------

def tri_energy_density(mesh: DomainMesh, values: np.ndarray) -> np.ndarray:
    """Per-triangle Dirichlet energy contribution (1/2) area |grad f|^2."""
    return 0.5 * mesh.areas * mesh.tri_grad_sq(values)


def dirichlet_energy(mesh: DomainMesh, values: np.ndarray,
                     tri_subset: np.ndarray = None) -> float:
    """(1/2) integral of |grad f|^2, optionally over a triangle subset."""
    dens = tri_energy_density(mesh, values)
    if tri_subset is not None:
        dens = dens[tri_subset]
    return float(dens.sum())


def weighted_energy(mesh: DomainMesh, values: np.ndarray,
                    tri_weights: np.ndarray) -> float:
    """(1/2) integral of w |grad f|^2 with per-triangle weights w."""
    return float(np.sum(tri_weights * tri_energy_density(mesh, values)))


def ball_triangles(mesh: DomainMesh, center, radius: float) -> np.ndarray:
    """Indices of triangles whose barycenter lies in the ball (membership rule)."""
    center = np.asarray(center, dtype=float)
    idx = mesh._bary_tree.query_ball_point(center, radius)
    return np.sort(np.asarray(idx, dtype=np.int64))


def ball_energy(mesh: DomainMesh, values: np.ndarray, center,
                radius: float) -> float:
    """Dirichlet energy restricted to the barycenter-membership ball."""
    return dirichlet_energy(mesh, values, ball_triangles(mesh, center, radius))


@dataclass
class BallIndex:
    """Precomputed triangle membership for (center vertex, radius) pairs."""

    mesh: DomainMesh
    centers: np.ndarray           # vertex indices
    radii: tuple
    members: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, mesh: DomainMesh, centers, radii) -> "BallIndex":
        centers = np.asarray(centers, dtype=np.int64)
        radii = tuple(sorted(float(r) for r in radii))
        members = {}
        for c in centers:
            for r in radii:
                members[(int(c), r)] = ball_triangles(mesh, mesh.vertices[c], r)
        return cls(mesh, centers, radii, members)

    def energy(self, values: np.ndarray, center: int, radius: float) -> float:
        dens = tri_energy_density(self.mesh, values)
        return float(dens[self.members[(int(center), float(radius))]].sum())


def local_energy_matrix(mesh: DomainMesh, radius: float) -> sp.csr_matrix:
    """Sparse (nv x nt) ball membership operator: rows sum triangle energies.

    local_energy = L @ tri_energy_density gives, for every vertex, the
    Dirichlet energy in the radius-ball centered at that vertex.
    """
    lists = mesh._bary_tree.query_ball_point(mesh.vertices, radius)
    indptr = np.zeros(mesh.num_vertices + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(l) for l in lists])
    indices = np.concatenate([np.sort(l) for l in lists]) if indptr[-1] else np.zeros(0, dtype=np.int64)
    data = np.ones(indptr[-1])
    return sp.csr_matrix((data, indices, indptr),
                         shape=(mesh.num_vertices, mesh.num_triangles))


# -- assembly -------------------------------------------------------------

def stiffness_from_tri_weights(mesh: DomainMesh, tri_weights: np.ndarray) -> sp.csr_matrix:
    data = (mesh.stiff_local * np.asarray(tri_weights, dtype=float)[:, None, None]).ravel()
    K = sp.coo_matrix((data, (mesh._rows, mesh._cols)),
                      shape=(mesh.num_vertices, mesh.num_vertices))
    return K.tocsr()


def assemble_weighted_stiffness(mesh: DomainMesh, beta_vertex: np.ndarray) -> sp.csr_matrix:
    """Stiffness of -div(beta grad .) with beta averaged per triangle.

    beta_vertex holds beta at the vertices; each triangle uses the mean of
    its three vertex values.  NonPositiveCoefficient if any value <= 0.
    """
    beta_vertex = np.asarray(beta_vertex, dtype=float)
    if np.any(beta_vertex <= 0):
        raise NonPositiveCoefficient("beta must be strictly positive at every vertex")
    tri_beta = beta_vertex[mesh.triangles].mean(axis=1)
    return stiffness_from_tri_weights(mesh, tri_beta)


def unit_stiffness(mesh: DomainMesh) -> sp.csr_matrix:
    return stiffness_from_tri_weights(mesh, np.ones(mesh.num_triangles))


# -- plain-text formats ----------------------------------------------------

def dump_mesh(mesh: DomainMesh, path) -> None:
    """Header (counts), coordinate rows, index rows, one boundary-flag row."""
    with open(path, "w") as f:
        f.write(f"{mesh.num_vertices} {mesh.num_triangles}\n")
        for x, y in mesh.vertices:
            f.write(f"{x:.17g} {y:.17g}\n")
        for i, j, k in mesh.triangles:
            f.write(f"{i} {j} {k}\n")
        f.write(" ".join("1" if b else "0" for b in mesh.boundary) + "\n")


def write_snapshot(mesh: DomainMesh, u: np.ndarray, v: np.ndarray, path) -> None:
    """One row per vertex, u components then v, mesh vertex ordering."""
    cols = u.shape[1] + 1
    with open(path, "w") as f:
        f.write(f"{mesh.num_vertices} {cols}\n")
        for i in range(mesh.num_vertices):
            row = [f"{x:.17g}" for x in u[i]] + [f"{v[i]:.17g}"]
            f.write(" ".join(row) + "\n")
