"""Pure-state MPS fast path for measurement-only (q = 0) dynamics.

Without dephasing every trajectory stays pure, and the doubled-state
representation squares the bond dimension for nothing.  This engine runs
the same circuit on |psi> directly (local dimension 2), with the same
measurement ordering and randomness consumption as the other engines, so
a shared seed reproduces their records.  Used by the order/disorder
duality experiment on rings; dephasing is refused.
"""

import numpy as np
import scipy.linalg

from .errors import OutOfRange, TruncationBlowup, WrongLimit, ZeroTrace
from .kernels import I2, X, born_split
from .model import MeasurementRecord, SimParams, TrajectoryRecord
from .mps import TruncationPolicy

_GATE_DISCARD_LIMIT = 1e-3
_Z = np.array([1.0, -1.0])


def _svd(mat):
    try:
        return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")


class PureMps:
    """Canonical-form MPS of a pure chain state (tensors (chi, 2, chi))."""

    def __init__(self, tensors, policy=None, log_weight=0.0):
        self.tensors = list(tensors)
        self.policy = policy or TruncationPolicy()
        self.log_weight = log_weight
        self.orthogonality_center = None
        self.discarded_weight = 0.0

    @property
    def L(self):
        return len(self.tensors)

    @property
    def dtype(self):
        return self.tensors[0].dtype

    def bond_dimensions(self):
        return [t.shape[0] for t in self.tensors] + [self.tensors[-1].shape[2]]

    def canonicalize(self, center=0):
        n = self.L
        for i in range(0, center):
            a = self.tensors[i]
            cl, d, cr = a.shape
            q, r = np.linalg.qr(a.reshape(cl * d, cr))
            self.tensors[i] = q.reshape(cl, d, -1)
            self.tensors[i + 1] = np.tensordot(r, self.tensors[i + 1], axes=(1, 0))
        for i in range(n - 1, center, -1):
            a = self.tensors[i]
            cl, d, cr = a.shape
            q, r = np.linalg.qr(a.reshape(cl, d * cr).T)
            self.tensors[i] = q.T.reshape(-1, d, cr)
            self.tensors[i - 1] = np.tensordot(self.tensors[i - 1], r.T, axes=(2, 0))
        self.orthogonality_center = center

    def _theta(self, b):
        return np.tensordot(self.tensors[b], self.tensors[b + 1], axes=(2, 0))

    def _split(self, b, theta, center_side):
        cl, cr = theta.shape[0], theta.shape[3]
        u, s, vh = _svd(theta.reshape(cl * 2, 2 * cr))
        total = float(s @ s)
        if total <= 0.0:
            raise ZeroTrace("state vanished")
        chi = min(self.policy.chi_max, len(s))
        if self.policy.svd_cutoff > 0.0:
            keep = total * (1.0 - self.policy.svd_cutoff)
            chi = min(chi, int(np.searchsorted(np.cumsum(s * s), keep) + 1))
        chi = max(chi, 1)
        discarded = float(s[chi:] @ s[chi:]) / total
        if discarded > _GATE_DISCARD_LIMIT:
            raise TruncationBlowup(f"one gate discarded relative weight {discarded:.3e}")
        self.discarded_weight += discarded
        norm = float(np.sqrt(s[:chi] @ s[:chi]))
        s = s[:chi] / norm
        if center_side == "right":
            self.tensors[b] = u[:, :chi].reshape(cl, 2, chi)
            self.tensors[b + 1] = (s[:, None] * vh[:chi]).reshape(chi, 2, cr)
            self.orthogonality_center = b + 1
        else:
            self.tensors[b] = (u[:, :chi] * s).reshape(cl, 2, chi)
            self.tensors[b + 1] = vh[:chi].reshape(chi, 2, cr)
            self.orthogonality_center = b

    def swap_sites(self, b):
        theta = np.ascontiguousarray(self._theta(b).transpose(0, 2, 1, 3))
        self._split(b, theta, "right")

    def move_center(self, target):
        if self.orthogonality_center is None:
            self.canonicalize(target)
            return
        while self.orthogonality_center < target:
            i = self.orthogonality_center
            a = self.tensors[i]
            cl, d, cr = a.shape
            q, r = np.linalg.qr(a.reshape(cl * d, cr))
            self.tensors[i] = q.reshape(cl, d, -1)
            self.tensors[i + 1] = np.tensordot(r, self.tensors[i + 1], axes=(1, 0))
            self.orthogonality_center += 1
        while self.orthogonality_center > target:
            i = self.orthogonality_center
            a = self.tensors[i]
            cl, d, cr = a.shape
            q, r = np.linalg.qr(a.reshape(cl, d * cr).T)
            self.tensors[i] = q.T.reshape(-1, d, cr)
            self.tensors[i - 1] = np.tensordot(self.tensors[i - 1], r.T, axes=(2, 0))
            self.orthogonality_center -= 1

    # -- expectations --------------------------------------------------------

    def state_vector(self):
        """Dense amplitude vector (small L only, for oracle tests)."""
        amp = None
        for t in self.tensors:
            amp = t if amp is None else np.tensordot(amp, t, axes=(amp.ndim - 1, 0))
        return amp.reshape(-1)

    def local_expectation(self, i, op):
        """<psi|op_i|psi> assuming the center sits at site i."""
        a = self.tensors[i]
        oa = np.tensordot(op.astype(self.dtype, copy=False), a, axes=(1, 1))
        val = np.tensordot(a.conj(), np.moveaxis(oa, 0, 1), axes=3)
        norm = np.tensordot(a.conj(), a, axes=3)
        return complex(val / norm)

    def _norm_left_envs(self):
        envs = [np.ones((1, 1), dtype=self.dtype)]
        for a in self.tensors:
            e = envs[-1]
            new = np.zeros((a.shape[2], a.shape[2]), dtype=self.dtype)
            for p in range(2):
                new += a[:, p, :].conj().T @ e @ a[:, p, :]
            envs.append(new)
        return envs

    def _norm_right_envs(self):
        n = self.L
        envs = [None] * (n + 1)
        envs[n] = np.ones((1, 1), dtype=self.dtype)
        for i in range(n - 1, -1, -1):
            a = self.tensors[i]
            new = np.zeros((a.shape[0], a.shape[0]), dtype=self.dtype)
            for p in range(2):
                new += a[:, p, :].conj() @ envs[i + 1] @ a[:, p, :].T
            envs[i] = new
        return envs

    def expectation_product(self, site_ops):
        """<psi|prod op_i|psi>/<psi|psi> for {site: 2x2} operator products."""
        env = np.ones((1, 1), dtype=self.dtype)
        den = np.ones((1, 1), dtype=self.dtype)
        for i, a in enumerate(self.tensors):
            if i in site_ops:
                op = site_ops[i].astype(np.result_type(self.dtype, site_ops[i].dtype), copy=False)
                oa = np.moveaxis(np.tensordot(op, a, axes=(1, 1)), 0, 1)
            else:
                oa = a
            new = np.zeros((a.shape[2], a.shape[2]), dtype=np.result_type(env, oa))
            newd = np.zeros_like(new)
            for p in range(2):
                new += a[:, p, :].conj().T @ env @ oa[:, p, :]
                newd += a[:, p, :].conj().T @ den @ a[:, p, :]
            env, den = new, newd
        return complex(env[0, 0] / den[0, 0])

    def zz_strong_matrix(self):
        """<Z_i Z_j> for all pairs (diagonal 1), via cumulative envs."""
        L = self.L
        lefts = self._norm_left_envs()
        rights = self._norm_right_envs()
        out = np.eye(L)
        for i in range(L):
            env = None
            a_i = self.tensors[i]
            env = np.zeros((a_i.shape[2], a_i.shape[2]), dtype=self.dtype)
            for p in range(2):
                env += _Z[p] * (a_i[:, p, :].conj().T @ lefts[i] @ a_i[:, p, :])
            for j in range(i + 1, L):
                a_j = self.tensors[j]
                num = np.zeros((a_j.shape[2], a_j.shape[2]), dtype=self.dtype)
                for p in range(2):
                    num += _Z[p] * (a_j[:, p, :].conj().T @ env @ a_j[:, p, :])
                val = np.tensordot(num, rights[j + 1], axes=((0, 1), (0, 1)))
                den = np.tensordot(lefts[j + 1], rights[j + 1], axes=((0, 1), (0, 1)))
                out[i, j] = out[j, i] = float(np.real(val / den))
                if j < L - 1:
                    new = np.zeros((a_j.shape[2], a_j.shape[2]), dtype=self.dtype)
                    for p in range(2):
                        new += a_j[:, p, :].conj().T @ env @ a_j[:, p, :]
                    env = new
        return out

    def x_string_strong(self, sites):
        return self.expectation_product({k: X for k in sites})


def build_pure_mps(kind, L, policy=None, dtype=np.float64):
    if kind == "ghz_plus":
        first = np.zeros((1, 2, 2), dtype=dtype)
        first[0, 0, 0] = first[0, 1, 1] = 1.0 / np.sqrt(2.0)
        bulk = np.zeros((2, 2, 2), dtype=dtype)
        bulk[0, 0, 0] = bulk[1, 1, 1] = 1.0
        last = np.zeros((2, 2, 1), dtype=dtype)
        last[0, 0, 0] = last[1, 1, 0] = 1.0
        tensors = [first] + [bulk.copy() for _ in range(L - 2)] + [last]
    elif kind == "all_up":
        site = np.zeros((1, 2, 1), dtype=dtype)
        site[0, 0, 0] = 1.0
        tensors = [site.copy() for _ in range(L)]
    elif kind == "plus_product":
        site = np.full((1, 2, 1), 2.0 ** -0.5, dtype=dtype)
        tensors = [site.copy() for _ in range(L)]
    else:
        raise OutOfRange("initial_state", f"pure engine has no state {kind!r}")
    return PureMps(tensors, policy)


def _x_kernel(lam, outcome, theta, dtype):
    k = (I2 + outcome * lam * X) / np.sqrt(2.0 * (1.0 + lam * lam))
    if theta != 0.0:
        k = k @ (np.cos(theta) * I2 + 1.0j * np.sin(theta) * X)
    return k.astype(dtype, copy=False)


def _zz_diag(lam, outcome, theta, dtype):
    zz = np.array([1.0, -1.0, -1.0, 1.0])
    d = (1.0 + outcome * lam * zz) / np.sqrt(2.0 * (1.0 + lam * lam))
    if theta != 0.0:
        d = d * np.exp(1.0j * theta * zz)
    return d.reshape(2, 2).astype(dtype, copy=False)


class _PureKernels:
    def __init__(self, params, dtype):
        self.x = {m: _x_kernel(params.lambda_x, m, params.theta_x, dtype) for m in (1, -1)}
        self.zz = {m: _zz_diag(params.lambda_zz, m, params.theta_zz, dtype) for m in (1, -1)}
        self.lambda_x = params.lambda_x
        self.lambda_zz = params.lambda_zz


def _apply_x(mps, kern, rng, row, i, lam):
    """Sample and apply the X kernel at the orthogonality center."""
    ev = 0.0 if lam == 0.0 else float(np.real(mps.local_expectation(i, X)))
    p_plus, _ = born_split(ev, lam)
    outcome = 1 if rng.random() < p_plus else -1
    row[i] = outcome
    prob = p_plus if outcome > 0 else 1.0 - p_plus
    a = np.moveaxis(np.tensordot(kern.x[outcome], mps.tensors[i], axes=(1, 1)), 0, 1)
    norm = float(np.sqrt(np.real(np.tensordot(a.conj(), a, axes=3))))
    mps.tensors[i] = np.ascontiguousarray(a / norm)
    mps.log_weight += np.log(prob)


def _theta_expect_zz(theta):
    num = 0.0
    den = 0.0
    for p1 in range(2):
        for p2 in range(2):
            block = theta[:, p1, p2, :]
            w = float(np.real(np.vdot(block, block)))
            num += _Z[p1] * _Z[p2] * w
            den += w
    return num / den


def _apply_zz_block(mps, kern, rng, row, b, lam, center_side, x_after=None):
    """Sample/apply the ZZ kernel on the two-site block (plus a pending X)."""
    theta = mps._theta(b)
    if x_after is not None:
        site_in_block, kernel = x_after
        axis = 1 if site_in_block == b else 2
        theta = np.moveaxis(np.tensordot(kernel, theta, axes=(1, axis)), 0, axis)
    ev = 0.0 if lam == 0.0 else _theta_expect_zz(theta)
    p_plus, _ = born_split(ev, lam)
    outcome = 1 if rng.random() < p_plus else -1
    row[b] = outcome
    prob = p_plus if outcome > 0 else 1.0 - p_plus
    theta = theta * kern.zz[outcome][None, :, :, None]
    theta /= np.sqrt(np.real(np.vdot(theta, theta)))
    mps._split(b, theta, center_side)
    mps.log_weight += np.log(prob)


def _wrap_expectation(mps):
    zmat = np.diag(_Z)
    return float(np.real(mps.expectation_product({0: zmat, mps.L - 1: zmat})))


def _apply_wrap(mps, kern, rng, row, lam):
    ev = 0.0 if lam == 0.0 else _wrap_expectation(mps)
    p_plus, _ = born_split(ev, lam)
    outcome = 1 if rng.random() < p_plus else -1
    row[mps.L - 1] = outcome
    prob = p_plus if outcome > 0 else 1.0 - p_plus
    mps.move_center(0)
    for b in range(0, mps.L - 2):
        mps.swap_sites(b)
    theta = mps._theta(mps.L - 2)
    theta = theta * kern.zz[outcome][None, :, :, None]
    theta /= np.sqrt(np.real(np.vdot(theta, theta)))
    mps._split(mps.L - 2, theta, "right")
    for b in range(mps.L - 3, -1, -1):
        mps.move_center(b + 1)
        mps.swap_sites(b)
    mps.log_weight += np.log(prob)


def _pure_layer(mps, kern, params, rng, m_x_row, m_zz_row, ascending):
    """Block-local layer in the shared engine ordering."""
    L = mps.L
    lam_x, lam_zz = kern.lambda_x, kern.lambda_zz
    if ascending:
        mps.move_center(0)
        _apply_x(mps, kern, rng, m_x_row, 0, lam_x)
        for b in range(L - 1):
            # sample X at b+1 inside the block, then the bond itself
            theta_site = b + 1
            ev_needed = lam_x != 0.0
            if ev_needed:
                theta = mps._theta(b)
                # expectation of X on the right block leg
                xa = np.moveaxis(np.tensordot(X.astype(mps.dtype, copy=False), theta, axes=(1, 2)), 0, 2)
                num = float(np.real(np.vdot(theta, xa)))
                den = float(np.real(np.vdot(theta, theta)))
                ev = num / den
            else:
                ev = 0.0
            p_plus, _ = born_split(ev, lam_x)
            outcome = 1 if rng.random() < p_plus else -1
            m_x_row[theta_site] = outcome
            prob = p_plus if outcome > 0 else 1.0 - p_plus
            mps.log_weight += np.log(prob)
            _apply_zz_block(mps, kern, rng, m_zz_row, b, lam_zz, "right",
                            x_after=(theta_site, kern.x[outcome] / np.sqrt(prob)))
    else:
        mps.move_center(L - 1)
        _apply_x(mps, kern, rng, m_x_row, L - 1, lam_x)
        for b in range(L - 2, -1, -1):
            if lam_x != 0.0:
                theta = mps._theta(b)
                xa = np.moveaxis(np.tensordot(X.astype(mps.dtype, copy=False), theta, axes=(1, 1)), 0, 1)
                ev = float(np.real(np.vdot(theta, xa))) / float(np.real(np.vdot(theta, theta)))
            else:
                ev = 0.0
            p_plus, _ = born_split(ev, lam_x)
            outcome = 1 if rng.random() < p_plus else -1
            m_x_row[b] = outcome
            prob = p_plus if outcome > 0 else 1.0 - p_plus
            mps.log_weight += np.log(prob)
            _apply_zz_block(mps, kern, rng, m_zz_row, b, lam_zz, "left",
                            x_after=(b, kern.x[outcome] / np.sqrt(prob)))
    if params.boundary == "periodic":
        _apply_wrap(mps, kern, rng, m_zz_row, lam_zz)


def _pure_sublayers(mps, kern, params, rng, m_x_row, m_zz_row, hook):
    """Strict X-then-ZZ order for the hooked final layer."""
    lam_x, lam_zz = kern.lambda_x, kern.lambda_zz
    for i in range(mps.L):
        mps.move_center(i)
        _apply_x(mps, kern, rng, m_x_row, i, lam_x)
    if hook is not None:
        hook(mps, "x")
    mps.move_center(0)
    for b in range(mps.L - 1):
        _apply_zz_block(mps, kern, rng, m_zz_row, b, lam_zz, "right")
    if params.boundary == "periodic":
        _apply_wrap(mps, kern, rng, m_zz_row, lam_zz)


def run_trajectory_pure(params: SimParams, seed: int, policy: TruncationPolicy = None,
                        final_layer_hook=None):
    """Born-sampled pure trajectory (measurement-only dynamics).

    Refuses dephasing: use the doubled engines when q > 0.  Record
    semantics and randomness consumption match the other engines.
    """
    if params.q_x != 0.0 or params.q_zz != 0.0:
        raise WrongLimit("the pure engine requires q_x = q_zz = 0")
    if params.initial_state.endswith("with_reference"):
        raise WrongLimit("the pure engine carries no reference qubit")
    policy = policy or TruncationPolicy()
    dtype = np.float64 if params.is_real else np.complex128
    mps = build_pure_mps(params.initial_state, params.L, policy, dtype=dtype)
    kern = _PureKernels(params, dtype)
    rng = np.random.default_rng(seed)
    m_x = np.zeros((params.T, params.L), dtype=np.int8)
    m_zz = np.zeros((params.T, params.n_bonds), dtype=np.int8)
    mps.canonicalize(0)
    for t in range(params.T):
        hooked = final_layer_hook is not None and t == params.T - 1
        if hooked:
            _pure_sublayers(mps, kern, params, rng, m_x[t], m_zz[t], final_layer_hook)
        else:
            _pure_layer(mps, kern, params, rng, m_x[t], m_zz[t], ascending=(t % 2 == 0))
    if final_layer_hook is not None:
        final_layer_hook(mps, "zz")
    record = MeasurementRecord(m_x=m_x, m_zz=m_zz)
    return mps, TrajectoryRecord(record=record, log_born_weight=mps.log_weight, seed=seed)
