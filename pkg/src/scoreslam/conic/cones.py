"""Cone blocks and the symmetric-cone algebra used by the interior-point method.

Internally every block is either the nonnegative orthant or a Lorentz
(second-order) cone; rotated cones are mapped onto Lorentz cones by the
orthogonal transform ``(u, v, w) -> ((u + v)/sqrt2, (u - v)/sqrt2, w)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SQRT_HALF = np.sqrt(0.5)


@dataclass(frozen=True)
class Zero:
    n: int
    tag = "zero"


@dataclass(frozen=True)
class NonNegative:
    n: int
    tag = "nonneg"


@dataclass(frozen=True)
class SecondOrder:
    """s[0] >= ||s[1:]||."""

    n: int
    tag = "soc"


@dataclass(frozen=True)
class RotatedSecondOrder:
    """2 s[0] s[1] >= ||s[2:]||^2 with s[0], s[1] >= 0."""

    n: int
    tag = "rsoc"


CONE_TYPES = {c.tag: c for c in (Zero, NonNegative, SecondOrder, RotatedSecondOrder)}
_MIN_SIZE = {"zero": 1, "nonneg": 1, "soc": 2, "rsoc": 3}


def validate_cones(cones) -> None:
    for cone in cones:
        if not isinstance(cone, tuple(CONE_TYPES.values())):
            raise ValueError(f"unknown cone block {cone!r}")
        if int(cone.n) != cone.n or cone.n < _MIN_SIZE[cone.tag]:
            raise ValueError(f"invalid size for {cone!r}")


def cone_dimension(cones) -> int:
    return int(sum(c.n for c in cones))


def rsoc_to_soc(v: np.ndarray) -> np.ndarray:
    """Apply the (symmetric, orthogonal, involutive) rotated-cone transform."""
    out = np.array(v, dtype=float, copy=True)
    u, w = v[0], v[1]
    out[0] = _SQRT_HALF * (u + w)
    out[1] = _SQRT_HALF * (u - w)
    return out


def in_cone(s: np.ndarray, cones, tol: float = 0.0) -> bool:
    """Membership of ``s`` in the product cone, up to an absolute slack ``tol``."""
    return cone_violation(s, cones) <= tol


def cone_violation(s: np.ndarray, cones) -> float:
    """Largest distance-like violation of the cone constraints."""
    worst = 0.0
    i = 0
    for cone in cones:
        blk = s[i : i + cone.n]
        i += cone.n
        if cone.tag == "zero":
            worst = max(worst, float(np.max(np.abs(blk))))
        elif cone.tag == "nonneg":
            worst = max(worst, float(np.max(-blk, initial=0.0)))
        else:
            if cone.tag == "rsoc":
                blk = rsoc_to_soc(blk)
            worst = max(worst, float(np.linalg.norm(blk[1:]) - blk[0]))
    return max(worst, 0.0)


class SymmetricCone:
    """Product of a nonnegative orthant of size ``l`` and Lorentz cones.

    Vectors are laid out as ``[orthant | soc_1 | soc_2 | ...]``. Lorentz
    blocks of equal size are processed together as 2-D index arrays so
    every operation is vectorized.
    """

    def __init__(self, l: int, soc_sizes):
        self.l = int(l)
        self.soc_sizes = [int(k) for k in soc_sizes]
        self.dim = self.l + sum(self.soc_sizes)
        self.degree = self.l + len(self.soc_sizes)
        groups: dict[int, list[int]] = {}
        start = self.l
        for k in self.soc_sizes:
            groups.setdefault(k, []).append(start)
            start += k
        # size -> (num_blocks, size) index matrix
        self.groups = {
            k: np.asarray(starts, dtype=np.int64)[:, None] + np.arange(k)
            for k, starts in sorted(groups.items())
        }
        self.e = np.zeros(self.dim)
        self.e[: self.l] = 1.0
        for idx in self.groups.values():
            self.e[idx[:, 0]] = 1.0

    # elementary algebra ----------------------------------------------------

    def jdet(self, idx, v):
        """x0^2 - ||x1||^2 for each block in group ``idx``."""
        blk = v[idx]
        return blk[:, 0] ** 2 - np.einsum("ij,ij->i", blk[:, 1:], blk[:, 1:])

    def min_eig(self, v: np.ndarray) -> float:
        m = np.inf
        if self.l:
            m = min(m, float(v[: self.l].min()))
        for idx in self.groups.values():
            blk = v[idx]
            m = min(m, float(np.min(blk[:, 0] - np.linalg.norm(blk[:, 1:], axis=1))))
        return m

    def dot(self, u, v) -> float:
        return float(u @ v)

    def jprod(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Jordan product u o v."""
        out = np.empty(self.dim)
        out[: self.l] = u[: self.l] * v[: self.l]
        for idx in self.groups.values():
            ub, vb = u[idx], v[idx]
            out[idx[:, 0]] = np.einsum("ij,ij->i", ub, vb)
            out[idx[:, 1:]] = ub[:, :1] * vb[:, 1:] + vb[:, :1] * ub[:, 1:]
        return out

    def jdiv(self, lam: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Solve lam o x = v for x (lam in the interior)."""
        out = np.empty(self.dim)
        out[: self.l] = v[: self.l] / lam[: self.l]
        for idx in self.groups.values():
            lb, vb = lam[idx], v[idx]
            det = lb[:, 0] ** 2 - np.einsum("ij,ij->i", lb[:, 1:], lb[:, 1:])
            x0 = (lb[:, 0] * vb[:, 0] - np.einsum("ij,ij->i", lb[:, 1:], vb[:, 1:])) / det
            out[idx[:, 0]] = x0
            out[idx[:, 1:]] = (vb[:, 1:] - x0[:, None] * lb[:, 1:]) / lb[:, :1]
        return out

    # Nesterov-Todd scaling ----------------------------------------------------

    def nt_scaling(self, s: np.ndarray, z: np.ndarray) -> "NTScaling":
        return NTScaling(self, s, z)

    def identity_scaling(self) -> "NTScaling":
        return NTScaling(self, None, None)

    # step length ---------------------------------------------------------------

    def max_step(self, lam: np.ndarray, dv: np.ndarray) -> float:
        """Largest alpha with lam + alpha * dv in the cone (lam interior)."""
        alpha = np.inf
        if self.l:
            d = dv[: self.l]
            neg = d < 0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-lam[: self.l][neg] / d[neg])))
        for idx in self.groups.values():
            lb, db = lam[idx], dv[idx]
            a = db[:, 0] ** 2 - np.einsum("ij,ij->i", db[:, 1:], db[:, 1:])
            b = lb[:, 0] * db[:, 0] - np.einsum("ij,ij->i", lb[:, 1:], db[:, 1:])
            c = lb[:, 0] ** 2 - np.einsum("ij,ij->i", lb[:, 1:], lb[:, 1:])
            c = np.maximum(c, 0.0)
            disc = np.maximum(b * b - a * c, 0.0)
            sq = np.sqrt(disc)
            root = np.full(len(a), np.inf)
            # a < 0: exactly one positive root
            neg = a < 0
            with np.errstate(divide="ignore", invalid="ignore"):
                r_neg = np.where(b >= 0, (b + sq) / -a, c / (sq - b))
                # a >= 0 and b < 0: smallest positive root if real
                r_pos = c / (sq - b)
            root = np.where(neg, r_neg, root)
            pos_case = (~neg) & (b < 0) & (b * b - a * c >= 0)
            root = np.where(pos_case, r_pos, root)
            # the first coordinate must also stay nonnegative
            with np.errstate(divide="ignore", invalid="ignore"):
                r0 = np.where(db[:, 0] < 0, -lb[:, 0] / db[:, 0], np.inf)
            root = np.minimum(root, r0)
            if len(root):
                alpha = min(alpha, float(np.min(root)))
        return alpha


class NTScaling:
    """Symmetric Nesterov-Todd scaling W with W z = W^{-1} s = lambda.

    Orthant blocks use ``w = sqrt(s / z)``; a Lorentz block uses
    ``W = eta * [[wb0, wb1'], [wb1, I + wb1 wb1' / (1 + wb0)]]`` with the
    normalized scaling point ``wb`` (wb' J wb = 1).
    """

    def __init__(self, cone: SymmetricCone, s, z):
        self.cone = cone
        l = cone.l
        if s is None:
            self.d = np.ones(l)
            self.eta = {k: np.ones(len(idx)) for k, idx in cone.groups.items()}
            self.wbar = {}
            for k, idx in cone.groups.items():
                w = np.zeros((len(idx), k))
                w[:, 0] = 1.0
                self.wbar[k] = w
            self.lam = None
            return
        self.d = np.sqrt(s[:l] / z[:l])
        self.eta, self.wbar = {}, {}
        for k, idx in cone.groups.items():
            sb, zb = s[idx], z[idx]
            snrm = np.sqrt(np.maximum(cone.jdet(idx, s), 1e-300))
            znrm = np.sqrt(np.maximum(cone.jdet(idx, z), 1e-300))
            self.eta[k] = np.sqrt(snrm / znrm)
            sb = sb / snrm[:, None]
            zb = zb / znrm[:, None]
            gamma = np.sqrt(np.maximum((1.0 + np.einsum("ij,ij->i", sb, zb)) / 2.0, 1e-300))
            w = sb.copy()
            w[:, 0] += zb[:, 0]
            w[:, 1:] -= zb[:, 1:]
            w /= 2.0 * gamma[:, None]
            # renormalize so that w' J w = 1 exactly despite rounding
            jw = w[:, 0] ** 2 - np.einsum("ij,ij->i", w[:, 1:], w[:, 1:])
            w /= np.sqrt(np.maximum(jw, 1e-300))[:, None]
            self.wbar[k] = w
        self.lam = self.apply(z)

    def apply(self, v: np.ndarray, inverse: bool = False) -> np.ndarray:
        """W v, or W^{-1} v when ``inverse``."""
        cone = self.cone
        out = np.empty(cone.dim)
        l = cone.l
        out[:l] = v[:l] / self.d if inverse else v[:l] * self.d
        for k, idx in cone.groups.items():
            w = self.wbar[k]
            eta = self.eta[k]
            vb = v[idx]
            w1 = w[:, 1:]
            v1 = vb[:, 1:]
            sgn = -1.0 if inverse else 1.0
            w1v1 = np.einsum("ij,ij->i", w1, v1)
            o0 = w[:, 0] * vb[:, 0] + sgn * w1v1
            coef = sgn * vb[:, 0] + w1v1 / (1.0 + w[:, 0])
            o1 = v1 + coef[:, None] * w1
            blk = np.empty_like(vb)
            blk[:, 0] = o0
            blk[:, 1:] = o1
            scale = (1.0 / eta) if inverse else eta
            out[idx] = blk * scale[:, None]
        return out

    def squared_blocks(self):
        """Yield (index matrix, dense W^2 blocks) per Lorentz group; orthant diag separately."""
        for k, idx in self.cone.groups.items():
            w = self.wbar[k]
            eta2 = self.eta[k] ** 2
            blocks = 2.0 * w[:, :, None] * w[:, None, :]
            blocks[:, 0, 0] -= 1.0
            diag = np.arange(1, k)
            blocks[:, diag, diag] += 1.0
            yield idx, blocks * eta2[:, None, None]

    def apply_squared(self, v: np.ndarray) -> np.ndarray:
        return self.apply(self.apply(v))
