"""Small rotation helpers: unit quaternions (w, x, y, z) and so(3) maps.

Kept local rather than using scipy's Rotation because the solvers call these
in tight loops and need the scalar-first convention with a canonical sign.
"""
import numpy as np


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_so3(omega):
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    K = skew(omega)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return (np.eye(3) + (np.sin(theta) / theta) * K
            + ((1.0 - np.cos(theta)) / theta**2) * K @ K)


def exp_so3_batch(omegas):
    """Vectorized Rodrigues formula for an (n, 3) array of rotation vectors."""
    omegas = np.asarray(omegas, dtype=float).reshape(-1, 3)
    theta = np.linalg.norm(omegas, axis=1)
    K = np.zeros((len(omegas), 3, 3))
    K[:, 0, 1], K[:, 0, 2] = -omegas[:, 2], omegas[:, 1]
    K[:, 1, 0], K[:, 1, 2] = omegas[:, 2], -omegas[:, 0]
    K[:, 2, 0], K[:, 2, 1] = -omegas[:, 1], omegas[:, 0]
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    KK = K @ K
    return np.eye(3) + a[:, None, None] * K + b[:, None, None] * KK


def log_so3(R):
    q = matrix_to_quat(R)
    v = q[1:]
    s = np.linalg.norm(v)
    if s < 1e-15:
        return 2.0 * v
    angle = 2.0 * np.arctan2(s, q[0])
    return v / s * angle


def rotation_angle(R):
    """Geodesic angle (radians) of a rotation matrix."""
    return float(np.linalg.norm(log_so3(R)))


def canonical_quat(q):
    q = np.array(q, dtype=float)
    n = np.linalg.norm(q)
    # Leave unit input untouched so values survive text round trips bit for bit.
    if abs(n - 1.0) > 1e-12:
        q = q / n
    if q[0] < 0 or (q[0] == 0 and next((c for c in q[1:] if c != 0), 0) < 0):
        q = -q
    return q


def quat_to_matrix(q):
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R):
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
             (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s,
             (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s,
             (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
             (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return canonical_quat(q)


def nearest_rotation(M):
    U, _, Vt = np.linalg.svd(M)
    S = np.eye(3)
    S[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    return U @ S @ Vt


def random_rotation(rng):
    q = rng.normal(size=4)
    return quat_to_matrix(q)
