"""Circuit elements as matrices: weak projectors, dephasing, rotations.

Single source of truth used by the dense engine, the MPS engine, and the
partition-function oracle.  Doubled (ket x bra) one-site kernels are 4x4 in
the basis |00>, |01>, |10>, |11> (ket index major), so the trace functional
is the local vector (1, 0, 0, 1).  Two-site ZZ kernels are diagonal in this
basis and are stored as length-16 diagonals, ordered site-major:
index = 4*p1 + p2 with p = 2*ket + bra.
"""

import numpy as np

I2 = np.eye(2)
X = np.array([[0.0, 1.0], [1.0, 0.0]])
Y = np.array([[0.0, -1.0j], [0.0 + 1.0j, 0.0]])
Z = np.array([[1.0, 0.0], [0.0, -1.0]])

TRACE_VEC = np.array([1.0, 0.0, 0.0, 1.0])

# z eigenvalue of a single ket/bra bit
_ZBIT = np.array([1.0, -1.0])


def weak_projector(lam: float, outcome: int, op: np.ndarray) -> np.ndarray:
    """Kraus-normalized weak projector (1 + outcome*lam*op)/sqrt(2(1+lam^2))."""
    dim = op.shape[0]
    return (np.eye(dim) + outcome * lam * op) / np.sqrt(2.0 * (1.0 + lam * lam))


def x_weak_projector(lam: float, outcome: int) -> np.ndarray:
    return weak_projector(lam, outcome, X)


def zz_weak_projector(lam: float, outcome: int) -> np.ndarray:
    return weak_projector(lam, outcome, np.kron(Z, Z))


def doubled_1site(a: np.ndarray, b: np.ndarray = None) -> np.ndarray:
    """4x4 doubled kernel for rho -> a rho b^dagger (b defaults to a)."""
    if b is None:
        b = a
    return np.kron(a, b.conj())


def x_measure_kernel(lam: float, outcome: int) -> np.ndarray:
    p = x_weak_projector(lam, outcome)
    return doubled_1site(p)


def x_dephase_kernel(q: float) -> np.ndarray:
    return (1.0 - q) * np.eye(4) + q * doubled_1site(X)


def x_rotation_kernel(theta: float) -> np.ndarray:
    u = np.cos(theta) * I2 + 1.0j * np.sin(theta) * X
    return doubled_1site(u)


def x_site_kernel(lam: float, q: float, outcome: int, theta: float = 0.0) -> np.ndarray:
    """Fused one-site kernel: rotation, then weak measurement, then dephasing.

    All three act in the X basis and mutually commute, so fusing them does
    not change the state or the Born statistics of later measurements.
    """
    k = x_measure_kernel(lam, outcome)
    if theta != 0.0:
        k = k @ x_rotation_kernel(theta)
    if q != 0.0:
        k = x_dephase_kernel(q) @ k
    if theta == 0.0:
        k = k.real
    return k


def _zz_sign_table():
    """z(k1)z(k2) and z(b1)z(b2) over the 16 site-major two-site states."""
    k1, b1, k2, b2 = np.meshgrid(
        _ZBIT, _ZBIT, _ZBIT, _ZBIT, indexing="ij"
    )
    # index order (k1, b1, k2, b2) matches p1 = 2k1+b1 major, p2 = 2k2+b2 minor
    zket = (k1 * k2).reshape(16)
    zbra = (b1 * b2).reshape(16)
    return zket, zbra


_ZKET, _ZBRA = _zz_sign_table()


def zz_measure_diag(lam: float, outcome: int) -> np.ndarray:
    """Diagonal of the doubled two-site weak ZZ measurement kernel."""
    norm = 2.0 * (1.0 + lam * lam)
    return (1.0 + outcome * lam * _ZKET) * (1.0 + outcome * lam * _ZBRA) / norm


def zz_dephase_diag(q: float) -> np.ndarray:
    return (1.0 - q) + q * _ZKET * _ZBRA


def zz_rotation_diag(theta: float) -> np.ndarray:
    return np.exp(1.0j * theta * (_ZKET - _ZBRA))


def zz_bond_diag(lam: float, q: float, outcome: int, theta: float = 0.0) -> np.ndarray:
    """Fused two-site diagonal: rotation, weak measurement, dephasing."""
    d = zz_measure_diag(lam, outcome)
    if theta != 0.0:
        d = d * zz_rotation_diag(theta)
    if q != 0.0:
        d = d * zz_dephase_diag(q)
    return d


def born_split(expv: float, lam: float):
    """Born probabilities (p_plus, p_minus) of a weak measurement.

    ``expv`` is the current expectation value of the measured Pauli,
    tr(rho O)/tr(rho).  Probabilities are clamped at 0 against roundoff.
    """
    bias = lam * expv / (1.0 + lam * lam)
    p_plus = min(max(0.5 + bias, 0.0), 1.0)
    return p_plus, 1.0 - p_plus


class LayerKernels:
    """All kernels of one circuit layer, precomputed per parameter set."""

    def __init__(self, params):
        lam_x, q_x, th_x = params.lambda_x, params.q_x, params.theta_x
        lam_zz, q_zz, th_zz = params.lambda_zz, params.q_zz, params.theta_zz
        self.real = params.is_real
        dtype = np.float64 if self.real else np.complex128
        self.x_site = {
            m: np.ascontiguousarray(x_site_kernel(lam_x, q_x, m, th_x).astype(dtype))
            for m in (+1, -1)
        }
        self.zz_bond = {
            m: np.ascontiguousarray(zz_bond_diag(lam_zz, q_zz, m, th_zz).astype(dtype).reshape(4, 4))
            for m in (+1, -1)
        }
        self.lambda_x = lam_x
        self.lambda_zz = lam_zz
        # identity-up-to-scale circuit elements can be skipped entirely
        self.x_trivial = lam_x == 0.0 and q_x == 0.0 and th_x == 0.0
        self.zz_trivial = lam_zz == 0.0 and q_zz == 0.0 and th_zz == 0.0
