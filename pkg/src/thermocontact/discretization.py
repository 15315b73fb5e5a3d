"""Mesh of the unit square and P1 finite-element assembly.

Conventions
-----------
* Vector fields are stored with interleaved dofs ``[u0x, u0y, u1x, u1y, ...]``.
* Strains use Voigt ordering ``(e_xx, e_yy, 2 e_xy)`` and material tensors are
  the matching 3x3 matrices.
* The contact boundary is the bottom edge ``y = 0`` with outward normal
  ``n = (0, -1)`` and tangent ``t = (1, 0)``; hence ``u_N = -u_y`` and the
  tangential scalar is ``u_x``. ``u_N > 0`` is penetration of the support.
* The top edge carries homogeneous Dirichlet data for the displacement, the
  lateral sides carry tractions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "GAMMA_1",
    "GAMMA_2",
    "GAMMA_C",
    "NORMAL",
    "TANGENT",
    "Mesh",
    "AssembledForms",
    "MeshError",
    "build_unit_square_mesh",
    "element_geometry",
    "assemble",
    "mean_value",
    "trace_to_surface",
    "normal_tangential",
    "vector_from_components",
    "write_mesh",
    "read_mesh",
    "korn_constant",
]

GAMMA_1 = "gamma1"  # clamped part (top)
GAMMA_2 = "gamma2"  # traction part (sides)
GAMMA_C = "gammac"  # contact part (bottom)
_TAGS = (GAMMA_1, GAMMA_2, GAMMA_C)

NORMAL = np.array([0.0, -1.0])
TANGENT = np.array([1.0, 0.0])


class MeshError(ValueError):
    """Invalid mesh geometry or topology."""


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: tuple
    surface_nodes: np.ndarray
    h: float

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_surface(self) -> int:
        return self.surface_nodes.shape[0]

    def nodes_with_tag(self, tag: str) -> np.ndarray:
        mask = np.array([t == tag for t in self.edge_tags], dtype=bool)
        return np.unique(self.boundary_edges[mask])

    def edges_with_tag(self, tag: str) -> np.ndarray:
        mask = np.array([t == tag for t in self.edge_tags], dtype=bool)
        return self.boundary_edges[mask]


def _tag_for_edge(p, q, tol=1e-12) -> str:
    if abs(p[1]) < tol and abs(q[1]) < tol:
        return GAMMA_C
    if abs(p[1] - 1.0) < tol and abs(q[1] - 1.0) < tol:
        return GAMMA_1
    return GAMMA_2


def _boundary_edges(triangles: np.ndarray) -> np.ndarray:
    edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    uniq, counts = np.unique(key, axis=0, return_counts=True)
    return uniq[counts == 1]


def _finalize_mesh(nodes, triangles, boundary_edges=None, edge_tags=None) -> Mesh:
    nodes = np.ascontiguousarray(nodes, dtype=float)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    if boundary_edges is None:
        boundary_edges = _boundary_edges(triangles)
        edge_tags = tuple(_tag_for_edge(nodes[a], nodes[b]) for a, b in boundary_edges)
    boundary_edges = np.asarray(boundary_edges, dtype=np.int64)
    edge_tags = tuple(edge_tags)
    if len(edge_tags) != len(boundary_edges):
        raise MeshError("every boundary edge needs exactly one tag")
    if any(t not in _TAGS for t in edge_tags):
        raise MeshError(f"unknown boundary tag among {set(edge_tags)}")
    if GAMMA_1 not in edge_tags:
        raise MeshError("the clamped boundary part must contain at least one edge")
    if GAMMA_C not in edge_tags:
        raise MeshError("the contact boundary part must contain at least one edge")
    area, _ = element_geometry(nodes, triangles)
    if np.any(area <= 1e-14):
        raise MeshError("degenerate or clockwise triangle")
    contact = np.unique(boundary_edges[np.array([t == GAMMA_C for t in edge_tags])])
    surface_nodes = contact[np.argsort(nodes[contact, 0], kind="stable")]
    diam = 0.0
    for a, b in ((0, 1), (1, 2), (2, 0)):
        diam = max(diam, float(np.max(np.linalg.norm(nodes[triangles[:, a]] - nodes[triangles[:, b]], axis=1))))
    return Mesh(nodes, triangles, boundary_edges, edge_tags, surface_nodes, diam)


def build_unit_square_mesh(n: int) -> Mesh:
    """Structured ``n x n`` mesh of the unit square with alternating diagonals.

    The diagonal of cell ``(i, j)`` follows the parity of ``i + j``, so for even
    ``n`` the mesh is mirror symmetric about ``x = 1/2``.
    """
    n = int(n)
    if n < 2:
        raise MeshError(f"need at least 2 subdivisions per side, got {n}")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    tris = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b, c, d = a + 1, a + n + 2, a + n + 1
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    return _finalize_mesh(nodes, np.array(tris))


def element_geometry(nodes: np.ndarray, triangles: np.ndarray):
    """Signed areas and constant P1 basis gradients, shape ``(T,)`` and ``(T, 3, 2)``."""
    p = nodes[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    area = 0.5 * det
    inv = np.empty((len(triangles), 2, 2))
    safe = np.where(det == 0.0, 1.0, det)
    inv[:, 0, 0] = d2[:, 1] / safe
    inv[:, 0, 1] = -d2[:, 0] / safe
    inv[:, 1, 0] = -d1[:, 1] / safe
    inv[:, 1, 1] = d1[:, 0] / safe
    ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    # grad phi_k = J^{-T} grad_ref phi_k; rows of inv are the rows of J^{-1}
    grads = np.einsum("kr,trc->tkc", ref, inv)
    return area, grads


def _strain_matrices(grads: np.ndarray) -> np.ndarray:
    """Per-element 3x6 strain-displacement matrices for interleaved local dofs."""
    T = grads.shape[0]
    B = np.zeros((T, 3, 6))
    B[:, 0, 0::2] = grads[:, :, 0]
    B[:, 1, 1::2] = grads[:, :, 1]
    B[:, 2, 0::2] = grads[:, :, 1]
    B[:, 2, 1::2] = grads[:, :, 0]
    return B


def _scatter(rows, cols, vals, shape) -> sp.csr_matrix:
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()


@dataclass(frozen=True, eq=False)
class AssembledForms:
    """All matrices of the semi-discrete problem on one mesh.

    ``a_form``/``b_form`` act on interleaved vector dofs, ``D`` maps bulk
    scalar nodal values to vector dofs with ``v . D theta = int theta div v``.
    ``m_bulk``/``m_surf`` are the lumped (row-sum) masses.
    """

    mesh: Mesh
    M_bulk: sp.csr_matrix
    K_bulk: sp.csr_matrix
    m_bulk: np.ndarray
    M_surf: sp.csr_matrix
    A_surf: sp.csr_matrix
    m_surf: np.ndarray
    a_form: sp.csr_matrix
    b_form: sp.csr_matrix
    D: sp.csr_matrix
    Tr: sp.csr_matrix
    M_vec: sp.csr_matrix
    free_dofs: np.ndarray
    fixed_dofs: np.ndarray
    surface_x: np.ndarray
    normal: np.ndarray = field(default_factory=lambda: NORMAL.copy())
    tangent: np.ndarray = field(default_factory=lambda: TANGENT.copy())

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes

    @property
    def n_surface(self) -> int:
        return self.mesh.n_surface

    @property
    def surface_x_dofs(self) -> np.ndarray:
        return 2 * self.mesh.surface_nodes

    @property
    def surface_y_dofs(self) -> np.ndarray:
        return 2 * self.mesh.surface_nodes + 1


def _check_voigt(C, name):
    C = np.asarray(C, dtype=float)
    if C.shape != (3, 3):
        raise ValueError(f"{name} must be a 3x3 Voigt matrix")
    if not np.allclose(C, C.T, atol=1e-12 * max(1.0, np.abs(C).max())):
        raise ValueError(f"{name} is not symmetric")
    return C


def assemble(mesh: Mesh, material) -> AssembledForms:
    """Assemble every bilinear form used by the solvers.

    ``material`` only needs ``K_e`` and ``K_v`` (3x3 Voigt matrices). Their
    ellipticity is not enforced here so that diagnostics can be exercised with
    deliberately broken tensors; see :func:`thermocontact.physics.validate_hypotheses`.
    """
    K_e = _check_voigt(material.K_e, "K_e")
    K_v = _check_voigt(material.K_v, "K_v")
    nodes, tris = mesh.nodes, mesh.triangles
    N = mesh.n_nodes
    area, grads = element_geometry(nodes, tris)
    if np.any(area <= 0):
        raise MeshError("zero-area triangle")

    # scalar forms
    r3 = np.repeat(tris[:, :, None], 3, axis=2)
    c3 = np.repeat(tris[:, None, :], 3, axis=1)
    Kloc = area[:, None, None] * np.einsum("tic,tjc->tij", grads, grads)
    Mloc = area[:, None, None] / 12.0 * (np.ones((3, 3)) + np.eye(3))
    K_bulk = _scatter(r3, c3, Kloc, (N, N))
    M_bulk = _scatter(r3, c3, Mloc, (N, N))
    m_bulk = np.asarray(M_bulk.sum(axis=1)).ravel()

    # vector forms
    dofs = np.empty((len(tris), 6), dtype=np.int64)
    dofs[:, 0::2] = 2 * tris
    dofs[:, 1::2] = 2 * tris + 1
    r6 = np.repeat(dofs[:, :, None], 6, axis=2)
    c6 = np.repeat(dofs[:, None, :], 6, axis=1)
    B = _strain_matrices(grads)
    a_loc = area[:, None, None] * np.einsum("tri,rs,tsj->tij", B, K_e, B)
    b_loc = area[:, None, None] * np.einsum("tri,rs,tsj->tij", B, K_v, B)
    a_form = _scatter(r6, c6, a_loc, (2 * N, 2 * N))
    b_form = _scatter(r6, c6, b_loc, (2 * N, 2 * N))
    Mv_loc = np.zeros((len(tris), 6, 6))
    Mv_loc[:, 0::2, 0::2] = Mloc
    Mv_loc[:, 1::2, 1::2] = Mloc
    M_vec = _scatter(r6, c6, Mv_loc, (2 * N, 2 * N))

    # divergence coupling: D[dof(a, c), k] = area/3 * d_c phi_a
    D_loc = (area / 3.0)[:, None, None] * grads.reshape(len(tris), 6)[:, :, None] * np.ones((1, 1, 3))
    D = _scatter(np.repeat(dofs[:, :, None], 3, axis=2), np.repeat(tris[:, None, :], 6, axis=1), D_loc, (2 * N, N))

    # surface forms on the ordered contact nodes
    s_nodes = mesh.surface_nodes
    S = len(s_nodes)
    sx = nodes[s_nodes, 0]
    lengths = np.diff(sx)
    if np.any(lengths <= 0):
        raise MeshError("contact nodes are not strictly ordered")
    i0, i1 = np.arange(S - 1), np.arange(1, S)
    rows = np.concatenate([i0, i0, i1, i1])
    cols = np.concatenate([i0, i1, i0, i1])
    M_surf = sp.coo_matrix((np.concatenate([lengths / 3, lengths / 6, lengths / 6, lengths / 3]), (rows, cols)), shape=(S, S)).tocsr()
    A_surf = sp.coo_matrix((np.concatenate([1 / lengths, -1 / lengths, -1 / lengths, 1 / lengths]), (rows, cols)), shape=(S, S)).tocsr()
    m_surf = np.asarray(M_surf.sum(axis=1)).ravel()
    Tr = sp.coo_matrix((np.ones(S), (np.arange(S), s_nodes)), shape=(S, N)).tocsr()

    clamped = mesh.nodes_with_tag(GAMMA_1)
    fixed = np.sort(np.concatenate([2 * clamped, 2 * clamped + 1]))
    free = np.setdiff1d(np.arange(2 * N), fixed)
    return AssembledForms(
        mesh=mesh, M_bulk=M_bulk, K_bulk=K_bulk, m_bulk=m_bulk, M_surf=M_surf, A_surf=A_surf,
        m_surf=m_surf, a_form=a_form, b_form=b_form, D=D, Tr=Tr, M_vec=M_vec,
        free_dofs=free, fixed_dofs=fixed, surface_x=sx,
    )


def korn_constant(forms: AssembledForms, which: str = "a") -> float:
    """Smallest eigenvalue of ``a`` (or ``b``) relative to the L2 mass on clamped-free dofs."""
    A = forms.a_form if which == "a" else forms.b_form
    f = forms.free_dofs
    Aff = A[f][:, f]
    Mff = forms.M_vec[f][:, f]
    if len(f) <= 600:
        return float(scipy.linalg.eigh(Aff.toarray(), Mff.toarray(), eigvals_only=True, subset_by_index=[0, 0])[0])
    vals = spla.eigsh(Aff.tocsc(), k=1, M=Mff.tocsc(), sigma=0.0, which="LM", return_eigenvectors=False)
    return float(vals[0])


def mean_value(w: np.ndarray, forms: AssembledForms, domain: str = "bulk") -> float:
    """Mass-weighted average of a nodal field over the body or the contact surface."""
    if domain == "bulk":
        M = forms.M_bulk
    elif domain == "surface":
        M = forms.M_surf
    else:
        raise ValueError(f"domain must be 'bulk' or 'surface', got {domain!r}")
    one = np.ones(M.shape[0])
    return float(one @ (M @ np.asarray(w, dtype=float)) / (one @ (M @ one)))


def trace_to_surface(field_values: np.ndarray, forms_or_mesh) -> np.ndarray:
    """Restrict a bulk nodal field to the contact nodes.

    Scalar fields of length ``N`` give ``(S,)``; interleaved vector fields of
    length ``2N`` give ``(S, 2)``.
    """
    mesh = forms_or_mesh.mesh if isinstance(forms_or_mesh, AssembledForms) else forms_or_mesh
    v = np.asarray(field_values)
    if v.ndim == 1 and v.shape[0] == mesh.n_nodes:
        return v[mesh.surface_nodes]
    if v.ndim == 1 and v.shape[0] == 2 * mesh.n_nodes:
        return v.reshape(-1, 2)[mesh.surface_nodes]
    if v.ndim == 2 and v.shape == (mesh.n_nodes, 2):
        return v[mesh.surface_nodes]
    raise ValueError(f"field of shape {v.shape} does not live on this mesh")


def normal_tangential(u_surf: np.ndarray):
    """Split surface vectors into ``(u_N, u_T)`` with ``u_N = u . n`` and scalar ``u_T = u . t``."""
    u_surf = np.atleast_2d(np.asarray(u_surf, dtype=float))
    return u_surf @ NORMAL, u_surf @ TANGENT


def vector_from_components(u_N: np.ndarray, u_T: np.ndarray) -> np.ndarray:
    """Inverse of :func:`normal_tangential`, returns ``(S, 2)``."""
    return np.outer(u_N, NORMAL) + np.outer(u_T, TANGENT)


def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text export.

    Layout: a counts line ``n_nodes n_triangles n_edges``, then one ``x y``
    line per node, one ``i j k`` line per triangle and one ``i j tag`` line per
    tagged boundary edge.
    """
    lines = [f"{mesh.n_nodes} {len(mesh.triangles)} {len(mesh.boundary_edges)}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    lines += [" ".join(str(int(i)) for i in t) for t in mesh.triangles]
    lines += [f"{int(a)} {int(b)} {tag}" for (a, b), tag in zip(mesh.boundary_edges, mesh.edge_tags)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    try:
        nn, nt, ne = (int(v) for v in rows[0])
        nodes = np.array([[float(v) for v in r] for r in rows[1:1 + nn]])
        tris = np.array([[int(v) for v in r] for r in rows[1 + nn:1 + nn + nt]])
        erows = rows[1 + nn + nt:1 + nn + nt + ne]
        edges = np.array([[int(r[0]), int(r[1])] for r in erows])
        tags = tuple(r[2] for r in erows)
    except (ValueError, IndexError) as exc:
        raise MeshError(f"malformed mesh file {path}: {exc}") from exc
    if nodes.shape != (nn, 2) or tris.shape != (nt, 3) or len(edges) != ne:
        raise MeshError(f"mesh file {path} does not match its counts line")
    return _finalize_mesh(nodes, tris, edges, tags)
