"""Reference elements: orthonormal bases, nodal sets, quadrature rules, and
the dense operator matrices (interpolation, projection, differentiation,
face trace) that the mesh, operator, and solver layers consume.

Conventions
-----------
* The reference quadrilateral is [-1, 1]^2; the reference triangle is
  {r, s >= -1, r + s <= 0}.
* Approximation spaces are Q^N (quadrilateral, per-coordinate degree) and
  P^N (triangle, total degree).
* Quadrature exactness is per-coordinate degree on the quadrilateral and
  total degree on the triangle.
* Faces are ordered counterclockwise and parametrized by xi in [-1, 1];
  the outward normal direction is (y', -x') along the parametrization.

All matrices are dense; intended for N <= 8.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np
from scipy import special as sps


class SingularNodalBasis(Exception):
    """Raised when an interpolation node set fails to be unisolvent."""


class ElementShape(enum.Enum):
    Triangle = "triangle"
    Quadrilateral = "quadrilateral"

    @property
    def n_faces(self):
        return 3 if self is ElementShape.Triangle else 4

    @property
    def measure(self):
        """Area of the reference element."""
        return 2.0 if self is ElementShape.Triangle else 4.0


def basis_dimension(shape, N):
    if shape is ElementShape.Triangle:
        return (N + 1) * (N + 2) // 2
    return (N + 1) ** 2


# Face parametrizations: (start point, direction d(r,s)/dxi), traversed CCW.
_QUAD_FACES = (
    (np.array([0.0, -1.0]), np.array([1.0, 0.0])),   # bottom
    (np.array([1.0, 0.0]), np.array([0.0, 1.0])),    # right
    (np.array([0.0, 1.0]), np.array([-1.0, 0.0])),   # top
    (np.array([-1.0, 0.0]), np.array([0.0, -1.0])),  # left
)
_TRI_FACES = (
    (np.array([0.0, -1.0]), np.array([1.0, 0.0])),   # bottom
    (np.array([0.0, 0.0]), np.array([-1.0, 1.0])),   # hypotenuse
    (np.array([-1.0, 0.0]), np.array([0.0, -1.0])),  # left
)


def face_parametrizations(shape):
    """Per-face (midpoint, d(r,s)/dxi) pairs for xi in [-1, 1], CCW order."""
    return _TRI_FACES if shape is ElementShape.Triangle else _QUAD_FACES


def face_points(shape, face, xi):
    """Map 1D parameters xi to reference coordinates on the given face."""
    mid, dvec = face_parametrizations(shape)[face]
    xi = np.asarray(xi, dtype=float)
    return mid[None, :] + xi[:, None] * dvec[None, :]


# ---------------------------------------------------------------------------
# 1D building blocks

@dataclass(frozen=True)
class QuadratureRule:
    """Points, positive weights, and the attained exactness degree."""

    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    @property
    def n_points(self):
        return self.weights.shape[0]


def gauss_legendre_1d(n):
    """Gauss-Legendre rule with n points on [-1, 1], exact to degree 2n-1."""
    if n < 1:
        raise ValueError(f"need at least one point, got n={n}")
    x, w = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(points=x, weights=w, exactness_degree=2 * n - 1)


def gauss_lobatto_1d(n):
    """Gauss-Lobatto points/weights with n >= 2 points, exact to degree 2n-3."""
    if n < 2:
        raise ValueError(f"need at least two points, got n={n}")
    if n == 2:
        x = np.array([-1.0, 1.0])
    else:
        xi, _ = sps.roots_jacobi(n - 2, 1.0, 1.0)
        x = np.concatenate(([-1.0], np.sort(xi), [1.0]))
    # weights w_i = 2 / (n(n-1) P_{n-1}(x_i)^2)
    pn = np.polynomial.legendre.Legendre.basis(n - 1)(x)
    w = 2.0 / (n * (n - 1) * pn**2)
    return QuadratureRule(points=x, weights=w, exactness_degree=2 * n - 3)


def jacobi_p(n, alpha, beta, x):
    """Jacobi polynomial P_n^(alpha,beta), normalized to unit L2 weight norm."""
    x = np.asarray(x, dtype=float)
    lg = sps.gammaln
    log_gamma = (
        (alpha + beta + 1) * np.log(2.0)
        + lg(n + alpha + 1) + lg(n + beta + 1)
        - np.log(2 * n + alpha + beta + 1) - lg(n + 1) - lg(n + alpha + beta + 1)
    )
    return sps.eval_jacobi(n, alpha, beta, x) / np.exp(0.5 * log_gamma)


def grad_jacobi_p(n, alpha, beta, x, order=1):
    """order-th derivative of the orthonormal Jacobi polynomial."""
    x = np.asarray(x, dtype=float)
    coef = 1.0
    for k in range(order):
        if n - k <= 0:
            return np.zeros_like(x)
        coef *= np.sqrt((n - k) * (n + k + alpha + beta + 1))
    if order == 0:
        return jacobi_p(n, alpha, beta, x)
    return coef * jacobi_p(n - order, alpha + order, beta + order, x)


# ---------------------------------------------------------------------------
# Volume quadrature

def build_quadrature(shape, degree):
    """Quadrature on the reference element exact to (at least) `degree`.

    Quadrilateral: tensor-product Gauss-Legendre.  Triangle: collapsed
    (Duffy) Gauss-Legendre x Gauss-Jacobi(1,0) rule, which has positive
    weights for any degree.
    """
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    n = max(1, (degree + 2) // 2)  # 2n-1 >= degree
    if shape is ElementShape.Quadrilateral:
        rule = gauss_legendre_1d(n)
        r, s = np.meshgrid(rule.points, rule.points, indexing="ij")
        w = np.outer(rule.weights, rule.weights)
        return QuadratureRule(
            points=np.column_stack([r.ravel(), s.ravel()]),
            weights=w.ravel(),
            exactness_degree=rule.exactness_degree,
        )
    # Duffy map: r = (1+a)(1-b)/2 - 1, s = b with d(r,s) = (1-b)/2 da db.
    ga = gauss_legendre_1d(n)
    b, wb = sps.roots_jacobi(n, 1.0, 0.0)
    a, wa = ga.points, ga.weights
    A, B = np.meshgrid(a, b, indexing="ij")
    r = 0.5 * (1 + A) * (1 - B) - 1
    s = B
    w = 0.5 * np.outer(wa, wb)
    return QuadratureRule(
        points=np.column_stack([r.ravel(), s.ravel()]),
        weights=w.ravel(),
        exactness_degree=2 * n - 1,
    )


# ---------------------------------------------------------------------------
# Orthonormal modal bases

def _rs_to_ab(r, s):
    """Collapsed coordinates on the triangle; a = -1 at the singular vertex."""
    a = np.full_like(r, -1.0)
    ok = s < 1.0 - 1e-14
    a[ok] = 2.0 * (1.0 + r[ok]) / (1.0 - s[ok]) - 1.0
    return a, s


def _modal_index_pairs(shape, N):
    if shape is ElementShape.Triangle:
        return [(i, j) for i in range(N + 1) for j in range(N + 1 - i)]
    return [(i, j) for i in range(N + 1) for j in range(N + 1)]


def eval_modal_basis(shape, N, points):
    """Orthonormal basis values at `points`, shape (n_points, N_p).

    Legendre tensor products on the quadrilateral, Koornwinder-Dubiner
    polynomials on the triangle; both orthonormal under the reference L2
    inner product.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    r, s = pts[:, 0], pts[:, 1]
    pairs = _modal_index_pairs(shape, N)
    V = np.empty((pts.shape[0], len(pairs)))
    if shape is ElementShape.Quadrilateral:
        for k, (i, j) in enumerate(pairs):
            V[:, k] = jacobi_p(i, 0, 0, r) * jacobi_p(j, 0, 0, s)
        return V
    a, b = _rs_to_ab(r, s)
    t = 0.5 * (1.0 - b)
    for k, (i, j) in enumerate(pairs):
        scale = np.sqrt(2.0) * 2.0**i
        V[:, k] = scale * jacobi_p(i, 0, 0, a) * jacobi_p(j, 2 * i + 1, 0, b) * t**i
    return V


def eval_modal_basis_grad(shape, N, points):
    """(d/dr, d/ds) of the orthonormal basis at `points`."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    r, s = pts[:, 0], pts[:, 1]
    pairs = _modal_index_pairs(shape, N)
    Vr = np.empty((pts.shape[0], len(pairs)))
    Vs = np.empty((pts.shape[0], len(pairs)))
    if shape is ElementShape.Quadrilateral:
        for k, (i, j) in enumerate(pairs):
            Vr[:, k] = grad_jacobi_p(i, 0, 0, r) * jacobi_p(j, 0, 0, s)
            Vs[:, k] = jacobi_p(i, 0, 0, r) * grad_jacobi_p(j, 0, 0, s)
        return Vr, Vs
    a, b = _rs_to_ab(r, s)
    t = 0.5 * (1.0 - b)
    for k, (i, j) in enumerate(pairs):
        fa = jacobi_p(i, 0, 0, a)
        dfa = grad_jacobi_p(i, 0, 0, a)
        gb = jacobi_p(j, 2 * i + 1, 0, b)
        dgb = grad_jacobi_p(j, 2 * i + 1, 0, b)
        scale = np.sqrt(2.0) * 2.0**i
        tim1 = t ** (i - 1) if i >= 1 else np.zeros_like(t)
        # d/dr = (1/t) d/da
        Vr[:, k] = scale * dfa * gb * tim1
        # d/ds = ((1+a)/(2t)) d/da + d/db
        Vs[:, k] = scale * (
            dfa * gb * 0.5 * (1.0 + a) * tim1
            + fa * (dgb * t**i - (0.5 * i) * gb * tim1)
        )
    return Vr, Vs


# ---------------------------------------------------------------------------
# Interpolation nodes

def _equispaced_barycentric(N):
    lam = []
    for i in range(N + 1):
        for j in range(N + 1 - i):
            l2 = i / N
            l3 = j / N
            lam.append((1.0 - l2 - l3, l2, l3))
    return np.array(lam)


def _warp_factor_1d(N, r):
    """Displacement pulling equispaced points toward Gauss-Lobatto points."""
    req = np.linspace(-1.0, 1.0, N + 1)
    gll = gauss_lobatto_1d(N + 1).points
    # Lagrange interpolation (on the equispaced set) of the nodal shifts.
    Veq = np.vander(req, increasing=True)
    coeffs = np.linalg.solve(Veq, gll - req)
    return np.vander(np.asarray(r), N + 1, increasing=True) @ coeffs


def triangle_nodes(N):
    """Boundary-including nodal set on the reference triangle.

    Equispaced barycentric points warped edge-by-edge so that the nodes on
    each edge coincide with 1D Gauss-Lobatto points, blended into the
    interior.  Unisolvency is checked downstream via the modal Vandermonde.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    verts = np.array([[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    lam = _equispaced_barycentric(N)  # (Np, 3) barycentric wrt verts rows
    nodes = lam @ verts
    # edges as vertex index pairs (i, j); blend uses the opposite vertex k
    for i, j in ((0, 1), (1, 2), (2, 0)):
        xi = lam[:, j] - lam[:, i]
        warp = _warp_factor_1d(N, xi)
        sf = 1.0 - xi**2
        blend = 4.0 * lam[:, i] * lam[:, j]
        ok = sf > 1e-12
        scale = np.zeros(len(lam))
        scale[ok] = blend[ok] / sf[ok]
        nodes += (scale * warp)[:, None] * 0.5 * (verts[j] - verts[i])[None, :]
    return nodes


def quad_nodes(N):
    """Tensor Gauss-Lobatto nodal set on [-1, 1]^2, s-major ordering."""
    if N < 1:
        raise ValueError("N must be >= 1")
    g = gauss_lobatto_1d(N + 1).points
    r, s = np.meshgrid(g, g, indexing="xy")
    return np.column_stack([r.ravel(), s.ravel()])


def interpolation_nodes(shape, N):
    if shape is ElementShape.Quadrilateral:
        return quad_nodes(N)
    return triangle_nodes(N)


def nodal_vandermonde(shape, N, nodes):
    """Modal Vandermonde at the nodes; raises if numerically singular."""
    V = eval_modal_basis(shape, N, nodes)
    if V.shape[0] != V.shape[1]:
        raise SingularNodalBasis(
            f"{V.shape[0]} nodes cannot be unisolvent for dimension {V.shape[1]}")
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularNodalBasis(f"nodal basis condition number {cond:.3e}")
    return V, cond


@lru_cache(maxsize=None)
def _cached_nodal_basis(shape, N):
    nodes = interpolation_nodes(shape, N)
    V, cond = nodal_vandermonde(shape, N, nodes)
    return nodes, V, cond


def nodal_eval_matrix(shape, N, points):
    """Matrix mapping nodal values (on the standard node set) to values at
    `points`; rows are Lagrange basis evaluations."""
    _, V, _ = _cached_nodal_basis(shape, N)
    M = eval_modal_basis(shape, N, points)
    return np.linalg.solve(V.T, M.T).T


def nodal_grad_matrices(shape, N, points):
    """(d/dr, d/ds) analogue of :func:`nodal_eval_matrix`."""
    _, V, _ = _cached_nodal_basis(shape, N)
    Mr, Ms = eval_modal_basis_grad(shape, N, points)
    Dr = np.linalg.solve(V.T, Mr.T).T
    Ds = np.linalg.solve(V.T, Ms.T).T
    return Dr, Ds


# ---------------------------------------------------------------------------
# Reference element

@dataclass
class ReferenceElement:
    """Degree-N discretization data on one reference shape.

    Immutable after construction; all consumers share it read-only.
    """

    N: int
    shape: ElementShape
    nodes: np.ndarray          # (Np, 2) interpolation nodes
    volume_quad: QuadratureRule
    Vq: np.ndarray             # (Nq, Np) nodal interpolation to quad points
    Pq: np.ndarray             # (Np, Nq) quadrature projection Mhat^-1 Vq^T W
    Drq: np.ndarray            # (Nq, Np) d/dr at quad points
    Dsq: np.ndarray            # (Nq, Np)
    Mhat: np.ndarray           # (Np, Np) reference mass matrix
    Mhat_inv: np.ndarray
    face_quad_1d: QuadratureRule
    face_nodes: list = field(repr=False)   # per-face node index lists
    Vfq: np.ndarray = field(repr=False)    # (n_faces*nfq, Np) face traces
    Pfq: np.ndarray = field(repr=False)    # (Np, n_faces*nfq)
    wfq: np.ndarray = field(repr=False)    # stacked face quad weights
    face_quad_points: np.ndarray = field(repr=False)  # (n_faces*nfq, 2)
    cond_nodal: float = 0.0

    @property
    def Np(self):
        return self.nodes.shape[0]

    @property
    def Nq(self):
        return self.volume_quad.n_points

    @property
    def n_faces(self):
        return self.shape.n_faces

    @property
    def nfq(self):
        return self.face_quad_1d.n_points

    @property
    def wq(self):
        return self.volume_quad.weights


def build_reference_element(N, shape, volume_quad_degree=None, face_quad_degree=None):
    """Assemble a :class:`ReferenceElement`.

    Defaults to degree 2N+1 volume and face quadrature.  The volume rule is
    floored at degree 2N so the reference mass matrix is assembled exactly.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if volume_quad_degree is None:
        volume_quad_degree = 2 * N + 1
    if face_quad_degree is None:
        face_quad_degree = 2 * N + 1
    volume_quad_degree = max(volume_quad_degree, 2 * N)

    nodes, Vmodal, cond = _cached_nodal_basis(shape, N)
    quad = build_quadrature(shape, volume_quad_degree)

    def to_nodal(M):
        return np.linalg.solve(Vmodal.T, M.T).T

    Vq = to_nodal(eval_modal_basis(shape, N, quad.points))
    Mr, Ms = eval_modal_basis_grad(shape, N, quad.points)
    Drq, Dsq = to_nodal(Mr), to_nodal(Ms)

    wq = quad.weights
    Mhat = Vq.T @ (wq[:, None] * Vq)
    Mhat = 0.5 * (Mhat + Mhat.T)
    Mhat_inv = np.linalg.inv(Mhat)
    Pq = Mhat_inv @ (Vq.T * wq[None, :])

    nf1d = gauss_legendre_1d(max(1, (face_quad_degree + 2) // 2))
    fq_pts = []
    Vf_blocks = []
    wf_blocks = []
    for f in range(shape.n_faces):
        pts = face_points(shape, f, nf1d.points)
        fq_pts.append(pts)
        Vf_blocks.append(to_nodal(eval_modal_basis(shape, N, pts)))
        wf_blocks.append(nf1d.weights)
    Vfq = np.vstack(Vf_blocks)
    wfq = np.concatenate(wf_blocks)
    Pfq = Mhat_inv @ (Vfq.T * wfq[None, :])
    face_quad_points = np.vstack(fq_pts)

    face_nodes = _face_node_indices(shape, nodes)

    ref = ReferenceElement(
        N=N, shape=shape, nodes=nodes, volume_quad=quad,
        Vq=Vq, Pq=Pq, Drq=Drq, Dsq=Dsq, Mhat=Mhat, Mhat_inv=Mhat_inv,
        face_quad_1d=nf1d, face_nodes=face_nodes, Vfq=Vfq, Pfq=Pfq,
        wfq=wfq, face_quad_points=face_quad_points, cond_nodal=cond,
    )
    _validate_reference_element(ref)
    return ref


def _face_node_indices(shape, nodes, tol=1e-10):
    """Node indices lying on each face, ordered along the CCW parameter."""
    out = []
    for f in range(shape.n_faces):
        mid, dvec = face_parametrizations(shape)[f]
        rel = nodes - mid[None, :]
        # perpendicular distance to the face line
        perp = np.abs(rel[:, 0] * dvec[1] - rel[:, 1] * dvec[0])
        xi = (rel @ dvec) / (dvec @ dvec)
        on = np.where((perp < tol) & (xi > -1 - tol) & (xi < 1 + tol))[0]
        out.append(on[np.argsort(xi[on])])
    return out


def _validate_reference_element(ref):
    Np = ref.Np
    if Np != basis_dimension(ref.shape, ref.N):
        raise SingularNodalBasis("node count does not match basis dimension")
    eye = np.eye(Np)
    if np.max(np.abs(ref.Pq @ ref.Vq - eye)) > 1e-10:
        raise FloatingPointError("Pq Vq deviates from identity")
    if np.max(np.abs(ref.Mhat_inv @ ref.Mhat - eye)) > 1e-10:
        raise FloatingPointError("Mhat inverse inaccurate")
    # SPD check; cholesky fails iff not positive definite
    np.linalg.cholesky(ref.Mhat)
