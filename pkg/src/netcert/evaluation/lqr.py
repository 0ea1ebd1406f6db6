from __future__ import annotations

import numpy as np
import scipy.linalg


class CareError(np.linalg.LinAlgError):
    pass


def care_residual(A, B, Q, R, P) -> float:
    Rinv_Bt = np.linalg.solve(R, B.T)
    res = A.T @ P + P @ A - P @ B @ Rinv_Bt @ P + Q
    return float(np.linalg.norm(res, "fro"))


def care_solve(A, B, Q, R, tol=1e-8, newton_iters=5):
    """Stabilizing solution of A'P + PA - PBR^-1B'P + Q = 0 and the gain K = R^-1 B'P.

    The Schur-based solve is polished with a few Newton-Kleinman steps; the
    result is rejected unless the residual is below ``tol`` and A - BK is Hurwitz.
    """
    A, B, Q, R = (np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in (A, B, Q, R))
    if B.shape[0] != A.shape[0]:
        B = B.reshape(A.shape[0], -1)
    if np.any(np.linalg.eigvalsh(0.5 * (R + R.T)) <= 0):
        raise CareError("R must be positive definite")
    if np.any(np.linalg.eigvalsh(0.5 * (Q + Q.T)) < -1e-12):
        raise CareError("Q must be positive semidefinite")
    try:
        P = scipy.linalg.solve_continuous_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise CareError(f"no stabilizing Riccati solution: {exc}") from exc
    for _ in range(newton_iters):
        if care_residual(A, B, Q, R, P) <= tol * 1e-2:
            break
        K = np.linalg.solve(R, B.T @ P)
        Acl = A - B @ K
        try:
            P_new = scipy.linalg.solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        except (np.linalg.LinAlgError, ValueError):
            break
        P_new = 0.5 * (P_new + P_new.T)
        if care_residual(A, B, Q, R, P_new) >= care_residual(A, B, Q, R, P):
            break
        P = P_new
    res = care_residual(A, B, Q, R, P)
    if res > tol:
        raise CareError(f"Riccati residual {res:.3e} exceeds {tol:.0e} (pair not stabilizable?)")
    K = np.linalg.solve(R, B.T @ P)
    if np.max(np.linalg.eigvals(A - B @ K).real) >= 0:
        raise CareError("closed loop A - BK is not Hurwitz")
    return P, K
