"""Matrix-product-state engine for the doubled state |rho>>.

Local dimension is 4 per physical site (ket bit major, bra bit minor), so
X-type circuit elements are strictly one-site and ZZ-type elements are
nearest-neighbor two-site diagonals.  The reference qubit, when present,
is an extra untouched site at the right end of the chain.

Normalization convention: trajectory evolution keeps the trace contraction
at unit scale by rescaling each sampled measurement by its Born weight; all
rescalings accumulate in ``log_weight`` so the unnormalized trace is always
recoverable.  When kernels are real (no unitary rotations) the whole chain
runs in float64, which roughly halves gate cost.
"""

import struct
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    EmptyRegion,
    InvalidSite,
    LengthMismatch,
    NoReference,
    OutOfRange,
    TruncationBlowup,
    ZeroPurity,
    ZeroTrace,
)
from .kernels import LayerKernels, born_split
from .model import MeasurementRecord, SimParams, TrajectoryRecord

_GATE_DISCARD_LIMIT = 1e-3

# physical index p = 2*ket + bra; local functionals on the doubled site
W_TRACE = np.array([1.0, 0.0, 0.0, 1.0])
W_Z_KET = np.array([1.0, 0.0, 0.0, -1.0])
W_X_KET = np.array([0.0, 1.0, 1.0, 0.0])
# diagonal of Z (x) Z' and index permutation of X (x) X' on one doubled site
D_ZZP = np.array([1.0, -1.0, -1.0, 1.0])
PERM_XXP = np.array([3, 2, 1, 0])


@dataclass(frozen=True)
class TruncationPolicy:
    chi_max: int = 128
    svd_cutoff: float = 1e-10
    renormalize_after_gate: bool = True

    def __post_init__(self):
        if self.chi_max < 2:
            raise OutOfRange("chi_max", "chi_max must be >= 2")
        if not (0.0 <= self.svd_cutoff <= 1e-4):
            raise OutOfRange("svd_cutoff", "svd_cutoff must lie in [0, 1e-4]")


def _svd(mat):
    try:
        return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")


class DoubledMps:
    """MPS for |rho>> with per-site tensors of shape (chi_l, 4, chi_r)."""

    def __init__(self, tensors, L, has_reference=False, policy=None, log_weight=0.0):
        self.tensors = list(tensors)
        self.L = L
        self.has_reference = has_reference
        self.policy = policy or TruncationPolicy()
        self.log_weight = log_weight
        self.born_log = 0.0
        self.discarded_weight = 0.0
        self.orthogonality_center = None

    # -- structure ---------------------------------------------------------

    @property
    def n_sites(self):
        return len(self.tensors)

    @property
    def dtype(self):
        return self.tensors[0].dtype

    def bond_dimensions(self):
        return [t.shape[0] for t in self.tensors] + [self.tensors[-1].shape[2]]

    def copy(self):
        out = DoubledMps(
            [t.copy() for t in self.tensors],
            self.L,
            self.has_reference,
            self.policy,
            self.log_weight,
        )
        out.born_log = self.born_log
        out.discarded_weight = self.discarded_weight
        out.orthogonality_center = self.orthogonality_center
        return out

    def astype(self, dtype):
        out = self.copy()
        out.tensors = [t.astype(dtype) for t in out.tensors]
        return out

    # -- canonical form ------------------------------------------------------

    def canonicalize(self, center=0):
        """Bring the chain to mixed-canonical form around ``center``."""
        n = self.n_sites
        for i in range(0, center):
            self._push_right(i)
        for i in range(n - 1, center, -1):
            self._push_left(i)
        self.orthogonality_center = center

    def move_center(self, target):
        if self.orthogonality_center is None:
            self.canonicalize(target)
            return
        while self.orthogonality_center < target:
            self._push_right(self.orthogonality_center)
            self.orthogonality_center += 1
        while self.orthogonality_center > target:
            self._push_left(self.orthogonality_center)
            self.orthogonality_center -= 1

    def _push_right(self, i):
        a = self.tensors[i]
        cl, d, cr = a.shape
        q, r = np.linalg.qr(a.reshape(cl * d, cr))
        self.tensors[i] = q.reshape(cl, d, -1)
        self.tensors[i + 1] = np.tensordot(r, self.tensors[i + 1], axes=(1, 0))

    def _push_left(self, i):
        a = self.tensors[i]
        cl, d, cr = a.shape
        q, r = np.linalg.qr(a.reshape(cl, d * cr).T)
        self.tensors[i] = q.T.reshape(-1, d, cr)
        self.tensors[i - 1] = np.tensordot(self.tensors[i - 1], r.T, axes=(2, 0))

    def canonical_defect(self):
        """Worst deviation from the canonical conditions around the center."""
        if self.orthogonality_center is None:
            return np.inf
        worst = 0.0
        for i, a in enumerate(self.tensors):
            cl, d, cr = a.shape
            if i < self.orthogonality_center:
                m = a.reshape(cl * d, cr)
                worst = max(worst, np.max(np.abs(m.conj().T @ m - np.eye(cr))))
            elif i > self.orthogonality_center:
                m = a.reshape(cl, d * cr)
                worst = max(worst, np.max(np.abs(m @ m.conj().T - np.eye(cl))))
        return worst

    # -- gates ---------------------------------------------------------------

    def apply_site_kernel(self, i, kernel, rescale=1.0):
        """Apply a 4x4 kernel on site i (no truncation needed)."""
        a = np.tensordot(kernel, self.tensors[i], axes=(1, 1))
        self.tensors[i] = np.ascontiguousarray(np.moveaxis(a, 0, 1)) * rescale
        if self.orthogonality_center != i:
            self.orthogonality_center = None

    def _theta(self, b):
        return np.tensordot(self.tensors[b], self.tensors[b + 1], axes=(2, 0))

    def _split(self, b, theta, center_side="right"):
        """SVD-split a two-site block back into tensors, truncating.

        ``center_side`` picks which tensor absorbs the singular values, so
        sweeps can run in either direction without re-canonicalizing.
        """
        cl = theta.shape[0]
        cr = theta.shape[3]
        u, s, vh = _svd(theta.reshape(cl * 4, 4 * cr))
        total = float(s @ s)
        if total <= 0.0:
            raise ZeroTrace("two-site block vanished")
        chi = min(self.policy.chi_max, len(s))
        if self.policy.svd_cutoff > 0.0:
            keep = total * (1.0 - self.policy.svd_cutoff)
            csum = np.cumsum(s * s)
            chi = min(chi, int(np.searchsorted(csum, keep) + 1))
        chi = max(chi, 1)
        discarded = float(s[chi:] @ s[chi:]) / total
        if discarded > _GATE_DISCARD_LIMIT:
            raise TruncationBlowup(
                f"one gate discarded relative weight {discarded:.3e}"
            )
        self.discarded_weight += discarded
        if center_side == "right":
            self.tensors[b] = u[:, :chi].reshape(cl, 4, chi)
            self.tensors[b + 1] = (s[:chi, None] * vh[:chi]).reshape(chi, 4, cr)
            self.orthogonality_center = b + 1
        else:
            self.tensors[b] = (u[:, :chi] * s[:chi]).reshape(cl, 4, chi)
            self.tensors[b + 1] = vh[:chi].reshape(chi, 4, cr)
            self.orthogonality_center = b

    def apply_bond_diag(self, b, diag44, rescale=1.0, center_side="right"):
        """Apply a diagonal two-site kernel at bond (b, b+1) and re-split."""
        theta = self._theta(b)
        theta = theta * diag44[None, :, :, None]
        if rescale != 1.0:
            theta = theta * rescale
        self._split(b, theta, center_side)

    def apply_bond_kernel(self, b, kernel16, rescale=1.0):
        """Apply a dense 16x16 two-site kernel at bond (b, b+1)."""
        theta = self._theta(b)
        k = kernel16.reshape(4, 4, 4, 4)
        theta = np.tensordot(k, theta, axes=([2, 3], [1, 2]))
        theta = np.moveaxis(theta, (0, 1), (1, 2))
        if rescale != 1.0:
            theta = theta * rescale
        self._split(b, theta)

    def swap_sites(self, b):
        """Exchange the physical sites at chain positions b and b+1."""
        theta = self._theta(b)
        self._split(b, np.ascontiguousarray(theta.transpose(0, 2, 1, 3)))

    # -- trace-functional contractions ----------------------------------------

    def site_matrix(self, i, weights=W_TRACE):
        a = self.tensors[i]
        return np.tensordot(weights, a, axes=(0, 1))

    def _trace_right_envs(self):
        n = self.n_sites
        envs = [None] * (n + 1)
        envs[n] = np.ones(1, dtype=self.dtype)
        for i in range(n - 1, -1, -1):
            envs[i] = self.site_matrix(i) @ envs[i + 1]
        return envs

    def raw_trace(self):
        v = np.ones(1, dtype=self.dtype)
        for i in range(self.n_sites):
            v = v @ self.site_matrix(i)
        return complex(v[0])

    def dense_vector(self):
        """Contract to the full 4^n amplitude vector (small chains only)."""
        if self.n_sites > 7:
            from .errors import MemoryBudget

            raise MemoryBudget("dense contraction limited to 7 sites")
        amp = None
        for t in self.tensors:
            amp = t if amp is None else np.tensordot(amp, t, axes=(amp.ndim - 1, 0))
        return amp.reshape(-1) * np.exp(self.log_weight)

    def trace_value(self):
        """<<I|rho>> including the accumulated log-weight scale."""
        return np.exp(self.log_weight) * self.raw_trace()

    def strong_expectation(self, weight_map):
        """tr(rho O)/tr(rho) for O given as {site: local 4-vector}."""
        num = np.ones(1, dtype=self.dtype)
        den = np.ones(1, dtype=self.dtype)
        for i in range(self.n_sites):
            m = self.site_matrix(i)
            if i in weight_map:
                num = num @ self.site_matrix(i, weight_map[i])
            else:
                num = num @ m
            den = den @ m
        if abs(den[0]) == 0.0:
            raise ZeroTrace("state has zero trace")
        return complex(num[0] / den[0])

    # -- two-copy contractions --------------------------------------------

    def _overlap_transfer(self, env, a_conj, a_ket, diag=None, perm=None):
        """env' = sum_p conj(A)[.,p,.]^T env A[., p', .] with p' = perm/diag."""
        out = np.zeros(
            (a_conj.shape[2], a_ket.shape[2]), dtype=np.result_type(env, a_ket)
        )
        for p in range(4):
            pk = perm[p] if perm is not None else p
            w = diag[p] if diag is not None else 1.0
            if w == 0.0:
                continue
            out += w * (a_conj[:, p, :].conj().T @ env @ a_ket[:, pk, :])
        return out

    def overlap(self, other):
        """<<self|other>> (conjugation on self), including log-weights."""
        if self.n_sites != other.n_sites:
            raise LengthMismatch("states live on different chain lengths")
        env = np.ones((1, 1), dtype=np.result_type(self.dtype, other.dtype))
        for i in range(self.n_sites):
            env = self._overlap_transfer(env, self.tensors[i], other.tensors[i])
        return complex(env[0, 0]) * np.exp(self.log_weight + other.log_weight)

    def raw_self_overlap(self):
        env = np.ones((1, 1), dtype=self.dtype)
        for i in range(self.n_sites):
            env = self._overlap_transfer(env, self.tensors[i], self.tensors[i])
        return float(env[0, 0].real)

    def renyi2_expectation(self, site_ops):
        """<<rho|O|rho>>/<<rho|rho>> for O = prod of per-site doubled ops.

        ``site_ops`` maps site -> ("diag", 4-vector) or ("perm", index array).
        """
        num = np.ones((1, 1), dtype=self.dtype)
        den = np.ones((1, 1), dtype=self.dtype)
        for i in range(self.n_sites):
            a = self.tensors[i]
            den = self._overlap_transfer(den, a, a)
            if i in site_ops:
                kind, arg = site_ops[i]
                if kind == "diag":
                    num = self._overlap_transfer(num, a, a, diag=arg)
                else:
                    num = self._overlap_transfer(num, a, a, perm=arg)
            else:
                num = self._overlap_transfer(num, a, a)
        if abs(den[0, 0]) == 0.0:
            raise ZeroPurity("state has zero purity")
        return complex(num[0, 0] / den[0, 0])

    def renyi2_purity(self, region=None):
        """tr(rho_region^2)/tr(rho)^2 via the two-copy swap contraction."""
        if region is not None and len(region) == 0:
            raise EmptyRegion("empty region")
        tr = self.raw_trace()
        if abs(tr) == 0.0:
            raise ZeroTrace("state has zero trace")
        if region is None:
            region = range(self.n_sites)
        inside = set(region)
        env = np.ones((1, 1), dtype=self.dtype)
        for i in range(self.n_sites):
            a = self.tensors[i]
            if i in inside:
                # ket of copy 1 pairs with bra of copy 2 and vice versa
                new = np.zeros((a.shape[2], a.shape[2]), dtype=self.dtype)
                for k in range(2):
                    for b in range(2):
                        new += a[:, 2 * k + b, :].T @ env @ a[:, 2 * b + k, :]
                env = new
            else:
                m = self.site_matrix(i)
                env = m.T @ env @ m
        return float(np.real(env[0, 0])) / abs(tr) ** 2

    # -- shared observable interface (mirrors dense.DoubledState) ----------

    def zz_strong_matrix(self):
        envs = self._trace_right_envs()
        trace = complex(envs[0][0])
        if abs(trace) == 0.0:
            raise ZeroTrace("state has zero trace")
        out = np.eye(self.L)
        lefts = [np.ones(1, dtype=self.dtype)]
        for i in range(self.L):
            lefts.append(lefts[-1] @ self.site_matrix(i))
        for i in range(self.L):
            v = lefts[i] @ self.site_matrix(i, W_Z_KET)
            for j in range(i + 1, self.L):
                val = (v @ self.site_matrix(j, W_Z_KET)) @ envs[j + 1]
                out[i, j] = out[j, i] = float(np.real(val / trace))
                if j < self.L - 1:
                    v = v @ self.site_matrix(j)
        return out

    def zz_renyi2_matrix(self):
        n = self.n_sites
        rights = [None] * (n + 1)
        rights[n] = np.ones((1, 1), dtype=self.dtype)
        for i in range(n - 1, -1, -1):
            a = self.tensors[i]
            rights[i] = np.zeros((a.shape[0], a.shape[0]), dtype=self.dtype)
            for p in range(4):
                rights[i] += a[:, p, :].conj() @ rights[i + 1] @ a[:, p, :].T
        den = float(np.real(rights[0][0, 0]))
        if den == 0.0:
            raise ZeroPurity("state has zero purity")
        lefts = [np.ones((1, 1), dtype=self.dtype)]
        for i in range(self.L):
            lefts.append(self._overlap_transfer(lefts[-1], self.tensors[i], self.tensors[i]))
        out = np.eye(self.L)
        for i in range(self.L):
            env = self._overlap_transfer(
                lefts[i], self.tensors[i], self.tensors[i], diag=D_ZZP
            )
            for j in range(i + 1, self.L):
                envj = self._overlap_transfer(
                    env, self.tensors[j], self.tensors[j], diag=D_ZZP
                )
                val = float(np.real(np.tensordot(envj, rights[j + 1], axes=((0, 1), (0, 1)))))
                out[i, j] = out[j, i] = val / den
                if j < self.L - 1:
                    env = self._overlap_transfer(env, self.tensors[j], self.tensors[j])
        return out

    def x_string_strong(self, sites):
        return self.strong_expectation({k: W_X_KET for k in sites})

    def x_string_renyi2(self, sites):
        return self.renyi2_expectation({k: ("perm", PERM_XXP) for k in sites})

    def reference_matrix(self):
        if not self.has_reference:
            raise NoReference("state carries no reference qubit")
        ref = self.n_sites - 1
        left = np.ones(1, dtype=self.dtype)
        for i in range(ref):
            left = left @ self.site_matrix(i)
        a = self.tensors[ref]
        vals = [complex((left @ a[:, p, :])[0]) for p in range(4)]
        mat = np.array([[vals[0], vals[1]], [vals[2], vals[3]]])
        tr = np.trace(mat).real
        if tr <= 0.0:
            raise ZeroTrace("reference matrix has zero trace")
        return mat / tr


# -- construction ------------------------------------------------------------


def build_mps(kind: str, L: int, policy: TruncationPolicy = None, dtype=np.float64) -> DoubledMps:
    """Exact MPS for one of the supported initial states.

    GHZ-type doubled states have bond dimension 4, product states 1.
    """
    if L < 2:
        raise OutOfRange("L", "MPS engine needs L >= 2")
    has_ref = kind.endswith("with_reference")
    n = L + (1 if has_ref else 0)
    tensors = []
    if kind in ("ghz_plus", "ghz_with_reference"):
        first = np.zeros((1, 4, 4), dtype=dtype)
        for p in range(4):
            first[0, p, p] = 0.5
        bulk = np.zeros((4, 4, 4), dtype=dtype)
        for p in range(4):
            bulk[p, p, p] = 1.0
        last = np.zeros((4, 4, 1), dtype=dtype)
        for p in range(4):
            last[p, p, 0] = 1.0
        tensors = [first] + [bulk.copy() for _ in range(n - 2)] + [last]
    elif kind in ("all_up", "all_up_with_reference"):
        site = np.zeros((1, 4, 1), dtype=dtype)
        site[0, 0, 0] = 1.0
        tensors = [site.copy() for _ in range(n)]
    elif kind == "maximally_mixed":
        site = np.zeros((1, 4, 1), dtype=dtype)
        site[0, 0, 0] = 0.5
        site[0, 3, 0] = 0.5
        tensors = [site.copy() for _ in range(n)]
    elif kind == "plus_product":
        site = np.full((1, 4, 1), 0.5, dtype=dtype)
        tensors = [site.copy() for _ in range(n)]
    else:
        raise OutOfRange("initial_state", f"unknown initial state {kind!r}")
    return DoubledMps(tensors, L, has_reference=has_ref, policy=policy)


def apply_local_channel(mps: DoubledMps, site: int, kernel) -> DoubledMps:
    """Apply a one-site (4x4) or two-site (16x16) kernel in place."""
    kernel = np.asarray(kernel)
    if kernel.shape == (4, 4):
        if not (0 <= site < mps.n_sites):
            raise InvalidSite(f"site {site} out of range")
        mps.apply_site_kernel(site, kernel.astype(mps.dtype, copy=False))
    elif kernel.shape == (16, 16):
        if not (0 <= site < mps.n_sites - 1):
            raise InvalidSite(f"bond {site} out of range")
        if mps.orthogonality_center is None or not (
            site <= mps.orthogonality_center <= site + 1
        ):
            mps.canonicalize(site)
        mps.apply_bond_kernel(site, kernel.astype(mps.dtype, copy=False))
    else:
        raise InvalidSite("kernel must be 4x4 (one site) or 16x16 (two sites)")
    return mps


def identity_overlap(mps: DoubledMps) -> complex:
    return mps.trace_value()


def state_overlap(a: DoubledMps, b: DoubledMps) -> complex:
    return a.overlap(b)


def strong_expectation(mps: DoubledMps, op_map) -> float:
    """tr(rho O)/tr(rho) for a ket Pauli string {site: 'X'|'Z'}."""
    weights = {}
    for site, name in op_map.items():
        weights[site] = W_X_KET if name == "X" else W_Z_KET
    val = mps.strong_expectation(weights)
    return float(np.real(val))


def renyi2_expectation(mps: DoubledMps, op_map) -> float:
    """<<rho|O|rho>>/<<rho|rho>> for O = prod over sites of ZZ' or XX'."""
    ops = {}
    for site, name in op_map.items():
        ops[site] = ("diag", D_ZZP) if name == "ZZ'" else ("perm", PERM_XXP)
    return float(np.real(mps.renyi2_expectation(ops)))


def renyi2_subsystem_purity(mps: DoubledMps, region) -> float:
    return mps.renyi2_purity(region)


# -- trajectory evolution -----------------------------------------------------


def _sample(rng, p_plus):
    return 1 if rng.random() < p_plus else -1


def _x_sublayer(mps, kern, lam, rng, row):
    """Sample and apply the fused X sub-layer across all system sites."""
    if kern.x_trivial:
        for i in range(mps.L):
            row[i] = _sample(rng, 0.5)
        mps.born_log += mps.L * np.log(0.5)
        if mps.policy.renormalize_after_gate:
            mps.log_weight += mps.L * np.log(0.5)
        return
    envs = mps._trace_right_envs()
    left = np.ones(1, dtype=mps.dtype)
    for i in range(mps.L):
        if lam == 0.0:
            ev = 0.0
        else:
            den = complex((left @ mps.site_matrix(i)) @ envs[i + 1])
            if abs(den) == 0.0:
                raise ZeroTrace("trace collapsed during X sub-layer")
            num = complex((left @ mps.site_matrix(i, W_X_KET)) @ envs[i + 1])
            ev = float(np.real(num / den))
        p_plus, _ = born_split(ev, lam)
        outcome = _sample(rng, p_plus)
        row[i] = outcome
        prob = p_plus if outcome > 0 else 1.0 - p_plus
        mps.born_log += np.log(prob)
        if mps.policy.renormalize_after_gate:
            mps.apply_site_kernel(i, kern.x_site[outcome], rescale=1.0 / prob)
            mps.log_weight += np.log(prob)
        else:
            mps.apply_site_kernel(i, kern.x_site[outcome])
        left = left @ mps.site_matrix(i)


def _wrap_bond_expectation(mps):
    """<Z_{L-1} Z_0> for the periodic wrap bond (full contraction)."""
    num = np.ones(1, dtype=mps.dtype)
    den = np.ones(1, dtype=mps.dtype)
    for i in range(mps.n_sites):
        m = mps.site_matrix(i)
        if i == 0 or i == mps.L - 1:
            num = num @ mps.site_matrix(i, W_Z_KET)
        else:
            num = num @ m
        den = den @ m
    return float(np.real(num[0] / den[0]))


def _apply_wrap_bond(mps, diag44, prob):
    """Apply a diagonal kernel on the (L-1, 0) bond via a swap network."""
    # move physical site 0 rightward until adjacent to site L-1
    mps.move_center(0)
    for b in range(0, mps.L - 2):
        mps.swap_sites(b)
    mps.apply_bond_diag(mps.L - 2, diag44, rescale=1.0 / prob)
    for b in range(mps.L - 3, -1, -1):
        mps.move_center(b + 1)
        mps.swap_sites(b)


def _zz_sublayer(mps, kern, params, rng, row):
    """Sample and apply the fused ZZ sub-layer across all bonds."""
    lam = params.lambda_zz
    n_open = mps.L - 1
    if kern.zz_trivial:
        for b in range(params.n_bonds):
            row[b] = _sample(rng, 0.5)
        mps.born_log += params.n_bonds * np.log(0.5)
        if mps.policy.renormalize_after_gate:
            mps.log_weight += params.n_bonds * np.log(0.5)
        return
    mps.canonicalize(0)
    envs = mps._trace_right_envs()
    left = np.ones(1, dtype=mps.dtype)
    for b in range(n_open):
        m_b = mps.site_matrix(b)
        m_b1 = mps.site_matrix(b + 1)
        den = complex(((left @ m_b) @ m_b1) @ envs[b + 2])
        if abs(den) == 0.0:
            raise ZeroTrace("trace collapsed during ZZ sub-layer")
        if lam == 0.0:
            ev = 0.0
        else:
            num = complex(
                ((left @ mps.site_matrix(b, W_Z_KET)) @ mps.site_matrix(b + 1, W_Z_KET))
                @ envs[b + 2]
            )
            ev = float(np.real(num / den))
        p_plus, _ = born_split(ev, lam)
        outcome = _sample(rng, p_plus)
        row[b] = outcome
        prob = p_plus if outcome > 0 else 1.0 - p_plus
        mps.born_log += np.log(prob)
        if mps.policy.renormalize_after_gate:
            mps.apply_bond_diag(b, kern.zz_bond[outcome], rescale=1.0 / prob)
            mps.log_weight += np.log(prob)
        else:
            mps.apply_bond_diag(b, kern.zz_bond[outcome])
        left = left @ mps.site_matrix(b)
    if params.boundary == "periodic":
        ev = 0.0 if lam == 0.0 else _wrap_bond_expectation(mps)
        p_plus, _ = born_split(ev, lam)
        outcome = _sample(rng, p_plus)
        row[mps.L - 1] = outcome
        prob = p_plus if outcome > 0 else 1.0 - p_plus
        mps.born_log += np.log(prob)
        if mps.policy.renormalize_after_gate:
            _apply_wrap_bond(mps, kern.zz_bond[outcome], prob)
            mps.log_weight += np.log(prob)
        else:
            _apply_wrap_bond(mps, kern.zz_bond[outcome], 1.0)


def _sample_x_site(mps, kern, lam, rng, row, i, left, right_env):
    """Sample and apply the fused X kernel at site i (block-local gauge)."""
    if lam == 0.0:
        ev = 0.0
    else:
        den = complex((left @ mps.site_matrix(i)) @ right_env)
        if abs(den) == 0.0:
            raise ZeroTrace("trace collapsed during layer")
        num = complex((left @ mps.site_matrix(i, W_X_KET)) @ right_env)
        ev = float(np.real(num / den))
    p_plus, _ = born_split(ev, lam)
    outcome = _sample(rng, p_plus)
    row[i] = outcome
    prob = p_plus if outcome > 0 else 1.0 - p_plus
    mps.born_log += np.log(prob)
    if mps.policy.renormalize_after_gate:
        mps.apply_site_kernel(i, kern.x_site[outcome], rescale=1.0 / prob)
        mps.log_weight += np.log(prob)
    else:
        mps.apply_site_kernel(i, kern.x_site[outcome])


def _sample_zz_bond(mps, kern, lam, rng, row, b, left, right_env, center_side):
    """Sample and apply the fused ZZ kernel at bond (b, b+1), then split."""
    if lam == 0.0:
        ev = 0.0
    else:
        den = complex(((left @ mps.site_matrix(b)) @ mps.site_matrix(b + 1)) @ right_env)
        if abs(den) == 0.0:
            raise ZeroTrace("trace collapsed during layer")
        num = complex(
            ((left @ mps.site_matrix(b, W_Z_KET)) @ mps.site_matrix(b + 1, W_Z_KET))
            @ right_env
        )
        ev = float(np.real(num / den))
    p_plus, _ = born_split(ev, lam)
    outcome = _sample(rng, p_plus)
    row[b] = outcome
    prob = p_plus if outcome > 0 else 1.0 - p_plus
    mps.born_log += np.log(prob)
    if mps.policy.renormalize_after_gate:
        mps.apply_bond_diag(b, kern.zz_bond[outcome], rescale=1.0 / prob,
                            center_side=center_side)
        mps.log_weight += np.log(prob)
    else:
        mps.apply_bond_diag(b, kern.zz_bond[outcome], center_side=center_side)


def _interleaved_layer(mps, kern, params, rng, m_x_row, m_zz_row, ascending):
    """One circuit layer in block-local order, center sweeping one way.

    Gates are applied in an order that only transposes disjoint-support
    elements of the standard X-then-ZZ layer, so the layer operator and the
    joint outcome statistics are exactly those of the standard order.
    """
    n = mps.n_sites
    envs = mps._trace_right_envs() if ascending else None
    lenvs = None
    if not ascending:
        lenvs = [np.ones(1, dtype=mps.dtype)]
        for i in range(n):
            lenvs.append(lenvs[-1] @ mps.site_matrix(i))
    lam_x, lam_zz = kern.lambda_x, kern.lambda_zz
    if ascending:
        left = np.ones(1, dtype=mps.dtype)
        _sample_x_site(mps, kern, lam_x, rng, m_x_row, 0, left, envs[1])
        for b in range(mps.L - 1):
            _sample_x_site(mps, kern, lam_x, rng, m_x_row, b + 1,
                           left @ mps.site_matrix(b), envs[b + 2])
            _sample_zz_bond(mps, kern, lam_zz, rng, m_zz_row, b, left,
                            envs[b + 2], "right")
            left = left @ mps.site_matrix(b)
    else:
        right = np.ones(1, dtype=mps.dtype)
        for i in range(n - 1, mps.L - 1, -1):
            right = mps.site_matrix(i) @ right
        _sample_x_site(mps, kern, lam_x, rng, m_x_row, mps.L - 1,
                       lenvs[mps.L - 1], right)
        for b in range(mps.L - 2, -1, -1):
            right_b = mps.site_matrix(b + 1) @ right
            _sample_x_site(mps, kern, lam_x, rng, m_x_row, b, lenvs[b], right_b)
            _sample_zz_bond(mps, kern, lam_zz, rng, m_zz_row, b, lenvs[b],
                            right, "left")
            right = mps.site_matrix(b + 1) @ right
    if params.boundary == "periodic":
        ev = 0.0 if lam_zz == 0.0 else _wrap_bond_expectation(mps)
        p_plus, _ = born_split(ev, lam_zz)
        outcome = _sample(rng, p_plus)
        m_zz_row[mps.L - 1] = outcome
        prob = p_plus if outcome > 0 else 1.0 - p_plus
        _apply_wrap_bond(mps, kern.zz_bond[outcome], prob)
        mps.log_weight += np.log(prob)


def _trivial_layer(mps, params, rng, m_x_row, m_zz_row, ascending):
    """Zero-strength layer: record sampled at p = 1/2, no tensor work."""
    L = params.L
    order = []
    if ascending:
        order.append(("x", 0))
        for b in range(L - 1):
            order.append(("x", b + 1))
            order.append(("zz", b))
    else:
        order.append(("x", L - 1))
        for b in range(L - 2, -1, -1):
            order.append(("x", b))
            order.append(("zz", b))
    if params.boundary == "periodic":
        order.append(("zz", L - 1))
    for kind, idx in order:
        outcome = _sample(rng, 0.5)
        if kind == "x":
            m_x_row[idx] = outcome
        else:
            m_zz_row[idx] = outcome
        mps.born_log += np.log(0.5)
        if mps.policy.renormalize_after_gate:
            mps.log_weight += np.log(0.5)


def run_trajectory_mps(params: SimParams, seed: int, policy: TruncationPolicy = None,
                       final_layer_hook=None):
    """Run one Born-sampled trajectory with the MPS engine.

    Sampling semantics are identical to the dense engine: measurements are
    visited in the same (alternating, block-local) order and consume one
    uniform variate each, so a shared seed reproduces the dense record
    whenever truncation error is below the outcome-probability gaps.

    ``final_layer_hook(state, stage)`` is called with stage "x" after the
    Pauli-X half of the last layer and stage "zz" at its end (used for the
    self-duality experiment, which averages the two readings); that last
    layer falls back to strict X-then-ZZ sub-layer order.
    """
    policy = policy or TruncationPolicy()
    dtype = np.float64 if params.is_real else np.complex128
    mps = build_mps(params.initial_state, params.L, policy, dtype=dtype)
    kern = LayerKernels(params)
    rng = np.random.default_rng(seed)
    m_x = np.zeros((params.T, params.L), dtype=np.int8)
    m_zz = np.zeros((params.T, params.n_bonds), dtype=np.int8)
    trivial = kern.x_trivial and kern.zz_trivial
    if not trivial:
        mps.canonicalize(0)
    for t in range(params.T):
        hooked = final_layer_hook is not None and t == params.T - 1
        if trivial and not hooked:
            _trivial_layer(mps, params, rng, m_x[t], m_zz[t], ascending=(t % 2 == 0))
        elif hooked:
            _x_sublayer(mps, kern, params.lambda_x, rng, m_x[t])
            final_layer_hook(mps, "x")
            _zz_sublayer(mps, kern, params, rng, m_zz[t])
        else:
            _interleaved_layer(mps, kern, params, rng, m_x[t], m_zz[t],
                               ascending=(t % 2 == 0))
    if final_layer_hook is not None:
        final_layer_hook(mps, "zz")
    record = MeasurementRecord(m_x=m_x, m_zz=m_zz)
    traj = TrajectoryRecord(record=record, log_born_weight=mps.born_log, seed=seed)
    return mps, traj


# -- binary checkpointing -----------------------------------------------------

_MAGIC = b"Z2MPS1\x00\x00"


def save_mps(mps: DoubledMps, path):
    """Binary checkpoint: header + site-major little-endian tensors."""
    complex_flag = 1 if np.iscomplexobj(mps.tensors[0]) else 0
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(
            struct.pack(
                "<iiBBdid",
                mps.L,
                mps.n_sites,
                1 if mps.has_reference else 0,
                complex_flag,
                mps.log_weight,
                mps.policy.chi_max,
                mps.policy.svd_cutoff,
            )
        )
        for t in mps.tensors:
            fh.write(struct.pack("<iii", *t.shape))
            arr = t.astype("<c16" if complex_flag else "<f8", copy=False)
            fh.write(arr.tobytes())


def load_mps(path) -> DoubledMps:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise OSError("not a z2chain MPS checkpoint")
        L, n, has_ref, complex_flag, log_weight, chi_max, cutoff = struct.unpack(
            "<iiBBdid", fh.read(struct.calcsize("<iiBBdid"))
        )
        tensors = []
        for _ in range(n):
            shape = struct.unpack("<iii", fh.read(12))
            count = shape[0] * shape[1] * shape[2]
            dt = np.dtype("<c16") if complex_flag else np.dtype("<f8")
            buf = fh.read(count * dt.itemsize)
            tensors.append(np.frombuffer(buf, dtype=dt).reshape(shape).copy())
    policy = TruncationPolicy(chi_max=chi_max, svd_cutoff=cutoff)
    return DoubledMps(tensors, L, bool(has_ref), policy, log_weight)
