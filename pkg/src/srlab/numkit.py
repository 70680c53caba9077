"""Dense linear-algebra and integration kernels used throughout the lab.

Everything here is plain numpy on small matrices (n <= 144).  Stability is
certified by Lyapunov solves plus Cholesky checks rather than eigenvalue
decompositions, so the whole package runs without an eigensolver.
"""

import numpy as np

PIVOT_TOL = 1e-13


class SingularMatrix(Exception):
    """A pivot fell below the singularity threshold during elimination."""


class NotSymmetric(Exception):
    """Matrix asymmetry exceeds the tolerance for a symmetric operation."""


class NotPositiveDefinite(Exception):
    """A Cholesky pivot was non-positive."""


class NoConvergence(Exception):
    """An iterative solve hit its step cap before meeting tolerance."""


class NonFinite(Exception):
    """A NaN or Inf appeared where finite values are required."""


def lu_solve(a, rhs):
    """Solve a @ x = rhs by LU factorization with partial pivoting.

    Parameters
    ----------
    a : ndarray, shape (n, n)
    rhs : ndarray, shape (n,) or (n, m)

    Returns
    -------
    ndarray
        Solution with the same trailing shape as ``rhs``.

    Raises
    ------
    SingularMatrix
        If any pivot magnitude falls below ``PIVOT_TOL``.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"expected square matrix, got {a.shape}")
    vec = np.ndim(rhs) == 1
    b = np.asarray(rhs, dtype=float).reshape(n, -1).copy()
    lu = a.copy()
    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        if abs(lu[p, k]) < PIVOT_TOL:
            raise SingularMatrix(f"pivot {abs(lu[p, k]):.3e} below {PIVOT_TOL:.0e}")
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            b[[k, p]] = b[[p, k]]
        mult = lu[k + 1:, k] / lu[k, k]
        lu[k + 1:, k + 1:] -= np.outer(mult, lu[k, k + 1:])
        b[k + 1:] -= np.outer(mult, b[k])
    x = np.empty_like(b)
    for k in range(n - 1, -1, -1):
        x[k] = (b[k] - lu[k, k + 1:] @ x[k + 1:]) / lu[k, k]
    return x[:, 0] if vec else x


def cholesky(p, sym_tol=1e-9):
    """Lower-triangular Cholesky factor of a symmetric positive-definite matrix.

    Parameters
    ----------
    p : ndarray, shape (n, n)
    sym_tol : float
        Relative asymmetry allowed before the input is rejected.

    Returns
    -------
    ndarray
        Lower-triangular ``L`` with ``L @ L.T == p``.

    Raises
    ------
    NotSymmetric
        If ``norm(p - p.T) > sym_tol * norm(p)``.
    NotPositiveDefinite
        If any pivot is non-positive.
    """
    p = np.asarray(p, dtype=float)
    n = p.shape[0]
    if p.shape != (n, n):
        raise ValueError(f"expected square matrix, got {p.shape}")
    scale = np.linalg.norm(p)
    if np.linalg.norm(p - p.T) > sym_tol * max(scale, 1e-300):
        raise NotSymmetric("matrix is not symmetric to working tolerance")
    low = np.zeros_like(p)
    for j in range(n):
        d = p[j, j] - low[j, :j] @ low[j, :j]
        if d <= 0.0:
            raise NotPositiveDefinite(f"pivot {d:.3e} at index {j}")
        low[j, j] = np.sqrt(d)
        low[j + 1:, j] = (p[j + 1:, j] - low[j + 1:, :j] @ low[j, :j]) / low[j, j]
    return low


class SymPosDef:
    """Symmetric positive-definite matrix, certified at construction.

    The certificate is a successful Cholesky factorization; the factor is kept
    on the instance as ``chol``.
    """

    def __init__(self, m):
        m = np.asarray(m, dtype=float)
        scale = max(np.linalg.norm(m), 1e-300)
        if np.linalg.norm(m - m.T) > 1e-12 * scale:
            raise NotSymmetric("SymPosDef requires symmetry to 1e-12 relative")
        self.m = 0.5 * (m + m.T)
        self.chol = cholesky(self.m)

    @property
    def shape(self):
        return self.m.shape

    def __repr__(self):
        return f"SymPosDef(shape={self.m.shape})"


def solve_lyapunov(a_cl, q):
    """Solve ``a_cl.T @ P + P @ a_cl = -q`` for symmetric positive-definite P.

    The equation is vectorized through Kronecker products,
    ``(I (x) a_cl.T + a_cl.T (x) I) vec(P) = -vec(q)``, and handed to the
    dense LU solver.  A non-Hurwitz ``a_cl`` surfaces as either a singular
    operator or an indefinite solution.

    Parameters
    ----------
    a_cl : ndarray, shape (n, n)
        Closed-loop system matrix.
    q : ndarray, shape (n, n)
        Symmetric positive-definite right-hand side.

    Returns
    -------
    SymPosDef

    Raises
    ------
    SingularMatrix, NotPositiveDefinite
    """
    a_cl = np.asarray(a_cl, dtype=float)
    q = np.asarray(q, dtype=float)
    n = a_cl.shape[0]
    eye = np.eye(n)
    op = np.kron(eye, a_cl.T) + np.kron(a_cl.T, eye)
    vec = lu_solve(op, -q.flatten(order="F"))
    p = vec.reshape((n, n), order="F")
    p = 0.5 * (p + p.T)
    return SymPosDef(p)


def hurwitz_certificate(a_cl, q=None):
    """True iff a Lyapunov solve against identity certifies ``a_cl`` stable.

    ``solve_lyapunov(a_cl, I)`` must succeed and deliver a positive-definite
    solution.  Any failure mode (singular operator, indefinite result) means
    no certificate, returned as False rather than raised.
    """
    a_cl = np.asarray(a_cl, dtype=float)
    if q is None:
        q = np.eye(a_cl.shape[0])
    try:
        solve_lyapunov(a_cl, q)
    except (SingularMatrix, NotPositiveDefinite, NotSymmetric):
        return False
    return True


def solve_riccati_ode(a, b, q_cost, r_cost, step=1e-3, tol=1e-9, max_steps=10_000_000):
    """Stationary LQR solution by integrating the Riccati ODE forward.

    Runs classical RK4 on ``dP/dt = A'P + PA - P B R^-1 B' P + Q`` from
    ``P(0) = 0`` until ``||dP/dt||_F < tol * (1 + ||P||_F)``.  Monotone
    convergence to the stabilizing solution is what makes this simple scheme
    adequate at this scale.

    Parameters
    ----------
    a : ndarray, shape (n, n)
    b : ndarray, shape (n, m)
    q_cost : ndarray, shape (n, n)
        State weight, symmetric positive semi-definite.
    r_cost : ndarray, shape (m, m)
        Input weight, symmetric positive definite.
    step : float
        Internal RK4 step in time units.
    tol : float
        Relative Frobenius tolerance on the derivative.
    max_steps : int
        Iteration cap.

    Returns
    -------
    gain : ndarray, shape (m, n)
        ``K = R^-1 B' P``.
    p_care : SymPosDef
        Converged Riccati solution.

    Raises
    ------
    NoConvergence
        If the cap is reached, or the resulting closed loop fails its
        Hurwitz certificate.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    q_cost = np.asarray(q_cost, dtype=float)
    r_cost = np.asarray(r_cost, dtype=float)
    rinv_bt = lu_solve(r_cost, b.T)
    s = b @ rinv_bt
    at = a.T
    p = np.zeros_like(a)

    def deriv(pm):
        return at @ pm + pm @ a - pm @ s @ pm + q_cost

    h = step
    converged = False
    for _ in range(max_steps):
        k1 = deriv(p)
        if np.linalg.norm(k1) < tol * (1.0 + np.linalg.norm(p)):
            converged = True
            break
        k2 = deriv(p + 0.5 * h * k1)
        k3 = deriv(p + 0.5 * h * k2)
        k4 = deriv(p + h * k3)
        p = p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(p)):
            raise NoConvergence("Riccati integration diverged")
    if not converged:
        raise NoConvergence(f"no Riccati convergence in {max_steps} steps")
    p = 0.5 * (p + p.T)
    gain = rinv_bt @ p
    if not hurwitz_certificate(a - b @ gain):
        raise NoConvergence("converged Riccati solution failed its closed-loop certificate")
    return gain, SymPosDef(p)


def rk4_step(f, x, u, dt):
    """One classical Runge-Kutta-4 step of ``dx/dt = f(x, u)`` with held input.

    Parameters
    ----------
    f : callable
        ``f(x, u) -> dx/dt``.
    x : ndarray
        Current state.
    u : object
        Input, held constant across the four stage evaluations.
    dt : float
        Step length.

    Returns
    -------
    ndarray
        State after one step.

    Raises
    ------
    NonFinite
        If the result contains NaN or Inf.
    """
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NonFinite("integration step produced NaN/Inf")
    return out


def p_norm_sq(p, v, c=None):
    """Squared weighted norm ``(v - c)' P (v - c)``.

    ``p`` may be a SymPosDef or a raw symmetric ndarray; ``c`` defaults to the
    origin.
    """
    m = p.m if isinstance(p, SymPosDef) else np.asarray(p, dtype=float)
    d = np.asarray(v, dtype=float) if c is None else np.asarray(v, dtype=float) - c
    return float(d @ (m @ d))
