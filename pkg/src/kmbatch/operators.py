"""Nonexpansive component operators and their averaged families.

A family holds n component maps T_i on a shared dimension.  The mean map
T(x) = (1/n) sum_i T_i(x) is the object whose fixed points are sought; the
mini-batch map averages a sampled subset of components and is an unbiased
estimator of T.  Components are grouped by kind at construction so that a
whole family evaluates in a handful of vectorized numpy calls.
"""
from __future__ import annotations

import itertools

import numpy as np

from .core import EnumerationBudgetError, check_rng, check_vector

__all__ = [
    "power_iteration",
    "ComponentOperator",
    "HalfspaceProjection",
    "BallProjection",
    "BoxProjection",
    "CocoerciveStep",
    "GradientStep",
    "LinearScale",
    "OperatorFamily",
]

# Safety margin applied to power-iteration eigenvalue estimates before
# admissible step ranges are formed, so numerical error cannot break the
# nonexpansivity preconditions.
EIG_MARGIN = 1.001

# Admissibility slack for beta <= 2*gamma and eta <= 2*L checks.
_ADMISSIBLE_RTOL = 1e-9

# Cap for 1/lambda_max when the operator is (numerically) zero.
_INV_EIG_CAP = 1e12


def _fmt(value: float) -> str:
    return repr(float(value))


def _fmt_array(arr: np.ndarray) -> str:
    return " ".join(_fmt(v) for v in np.asarray(arr, dtype=float).ravel())


def power_iteration(matrix: np.ndarray, tol: float = 1e-10, max_iter: int = 20000) -> float:
    """Largest eigenvalue magnitude of a symmetric matrix by power iteration.

    Deterministic start vector; Rayleigh-quotient stopping at relative
    tolerance ``tol``.  Callers inflate the result by ``EIG_MARGIN`` before
    deriving admissible step ranges.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("power_iteration expects a square matrix")
    d = m.shape[0]
    v = np.ones(d) + np.linspace(0.0, 0.5, d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = m @ v
        norm_w = np.linalg.norm(w)
        if norm_w < 1e-300:
            return 0.0
        lam_new = float(v @ w)
        v = w / norm_w
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return abs(lam_new)
        lam = lam_new
    return abs(lam)


class ComponentOperator:
    """Base class for one nonexpansive map T_i."""

    dim: int

    def apply(self, x) -> np.ndarray:
        x = check_vector(x, self.dim)
        return self._apply(x)

    def __call__(self, x) -> np.ndarray:
        return self.apply(x)

    def _apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def describe_lines(self) -> list[str]:
        """Canonical text lines; the family digest and instance files reuse them."""
        raise NotImplementedError

    # Grouped evaluation.  Families bucket components by _group_key and call
    # _apply_pack once per bucket; the base implementation just loops.
    def _group_key(self):
        return (type(self), self.dim)

    @classmethod
    def _pack(cls, ops):
        return list(ops)

    @classmethod
    def _apply_pack(cls, pack, x: np.ndarray) -> np.ndarray:
        return np.stack([op._apply(x) for op in pack])


class HalfspaceProjection(ComponentOperator):
    """Projection onto the halfspace ``{y : <normal, y> <= offset}``."""

    def __init__(self, normal, offset: float):
        self.normal = check_vector(normal, name="normal")
        self.offset = float(offset)
        sq = float(self.normal @ self.normal)
        if sq == 0.0:
            raise ValueError("halfspace normal must be nonzero")
        self._sqnorm = sq
        self.dim = self.normal.shape[0]

    def _apply(self, x):
        excess = float(self.normal @ x) - self.offset
        if excess <= 0.0:
            return x.copy()
        return x - (excess / self._sqnorm) * self.normal

    def describe_lines(self):
        return ["halfspace", f"normal {_fmt_array(self.normal)}", f"offset {_fmt(self.offset)}"]

    @classmethod
    def _pack(cls, ops):
        a = np.stack([op.normal for op in ops])
        return a, np.array([op.offset for op in ops]), np.array([op._sqnorm for op in ops])

    @classmethod
    def _apply_pack(cls, pack, x):
        a, b, sq = pack
        excess = np.maximum(0.0, a @ x - b) / sq
        return x - excess[:, None] * a


class BallProjection(ComponentOperator):
    """Projection onto the closed ball ``B(center, radius)``.

    Points inside (the center included) are returned unchanged, so the radial
    formula's 0/0 at the center never evaluates.
    """

    def __init__(self, center, radius: float):
        self.center = check_vector(center, name="center")
        self.radius = float(radius)
        if not self.radius > 0.0:
            raise ValueError("ball radius must be positive")
        self.dim = self.center.shape[0]

    def _apply(self, x):
        diff = x - self.center
        dist = float(np.linalg.norm(diff))
        if dist <= self.radius:
            return x.copy()
        return self.center + (self.radius / dist) * diff

    def describe_lines(self):
        return ["ball", f"center {_fmt_array(self.center)}", f"radius {_fmt(self.radius)}"]

    @classmethod
    def _pack(cls, ops):
        return np.stack([op.center for op in ops]), np.array([op.radius for op in ops])

    @classmethod
    def _apply_pack(cls, pack, x):
        centers, radii = pack
        diff = x - centers
        dist = np.linalg.norm(diff, axis=1)
        inside = dist <= radii
        scale = np.where(inside, 1.0, radii / np.where(dist == 0.0, 1.0, dist))
        out = centers + scale[:, None] * diff
        out[inside] = x
        return out


class BoxProjection(ComponentOperator):
    """Projection onto the box ``[low, high]`` (componentwise clip)."""

    def __init__(self, low, high):
        self.low = check_vector(low, name="low")
        self.high = check_vector(high, dim=self.low.shape[0], name="high")
        if np.any(self.low > self.high):
            raise ValueError("box bounds must satisfy low <= high")
        self.dim = self.low.shape[0]

    def _apply(self, x):
        return np.clip(x, self.low, self.high)

    def describe_lines(self):
        return ["box", f"low {_fmt_array(self.low)}", f"high {_fmt_array(self.high)}"]

    @classmethod
    def _pack(cls, ops):
        return np.stack([op.low for op in ops]), np.stack([op.high for op in ops])

    @classmethod
    def _apply_pack(cls, pack, x):
        low, high = pack
        return np.clip(x, low, high)


class CocoerciveStep(ComponentOperator):
    """Forward step ``x - beta * M (x - root)`` for a symmetric PSD matrix M.

    The residual operator A(x) = M(x - root) is (1/lambda_max)-cocoercive, so
    the step is nonexpansive for beta in (0, 2/lambda_max].  ``beta`` is
    checked against a power-iteration estimate inflated by EIG_MARGIN.
    """

    def __init__(self, beta: float, matrix, root):
        self.beta = float(beta)
        self.matrix = np.asarray(matrix, dtype=float)
        self.root = check_vector(root, name="root")
        d = self.root.shape[0]
        if self.matrix.shape != (d, d):
            raise ValueError("matrix shape must match the root dimension")
        if not np.allclose(self.matrix, self.matrix.T, rtol=1e-10, atol=1e-12):
            raise ValueError("matrix must be symmetric")
        if not self.beta > 0.0:
            raise ValueError("beta must be positive")
        lam = power_iteration(self.matrix)
        self.gamma = _INV_EIG_CAP if lam <= 1.0 / _INV_EIG_CAP else 1.0 / (EIG_MARGIN * lam)
        if self.beta > 2.0 * self.gamma * (1.0 + _ADMISSIBLE_RTOL):
            raise ValueError(
                f"beta={self.beta} exceeds the admissible range (0, {2.0 * self.gamma}]"
            )
        self.dim = d

    def forward(self, x) -> np.ndarray:
        """The residual operator A(x) = M (x - root)."""
        return self.matrix @ (check_vector(x, self.dim) - self.root)

    def _apply(self, x):
        return x - self.beta * (self.matrix @ (x - self.root))

    def describe_lines(self):
        return [
            "cocoercive",
            f"beta {_fmt(self.beta)}",
            f"root {_fmt_array(self.root)}",
            f"matrix {_fmt_array(self.matrix)}",
        ]

    @classmethod
    def _pack(cls, ops):
        return (
            np.stack([op.matrix for op in ops]),
            np.stack([op.root for op in ops]),
            np.array([op.beta for op in ops]),
        )

    @classmethod
    def _apply_pack(cls, pack, x):
        mats, roots, betas = pack
        forward = np.einsum("mij,mj->mi", mats, x - roots)
        return x - betas[:, None] * forward


class GradientStep(ComponentOperator):
    """Gradient step ``x - eta * A^T (A x - y)`` for the loss ``0.5 ||A x - y||^2``.

    The gradient is lambda_max(A^T A)-Lipschitz, so the step is nonexpansive
    for eta in (0, 2/lambda_max(A^T A)].
    """

    def __init__(self, eta: float, design, target):
        self.eta = float(eta)
        self.design = np.asarray(design, dtype=float)
        if self.design.ndim != 2:
            raise ValueError("design must be a 2-D matrix")
        self.target = check_vector(target, dim=self.design.shape[0], name="target")
        if not self.eta > 0.0:
            raise ValueError("eta must be positive")
        lam = power_iteration(self.design.T @ self.design)
        self.smoothness = (
            _INV_EIG_CAP if lam <= 1.0 / _INV_EIG_CAP else 1.0 / (EIG_MARGIN * lam)
        )
        if self.eta > 2.0 * self.smoothness * (1.0 + _ADMISSIBLE_RTOL):
            raise ValueError(
                f"eta={self.eta} exceeds the admissible range (0, {2.0 * self.smoothness}]"
            )
        self.dim = self.design.shape[1]

    def loss(self, x) -> float:
        r = self.design @ check_vector(x, self.dim) - self.target
        return 0.5 * float(r @ r)

    def gradient(self, x) -> np.ndarray:
        x = check_vector(x, self.dim)
        return self.design.T @ (self.design @ x - self.target)

    def _apply(self, x):
        return x - self.eta * (self.design.T @ (self.design @ x - self.target))

    def describe_lines(self):
        return [
            "gradient",
            f"eta {_fmt(self.eta)}",
            f"rows {self.design.shape[0]}",
            f"design {_fmt_array(self.design)}",
            f"target {_fmt_array(self.target)}",
        ]

    def _group_key(self):
        return (type(self), self.dim, self.design.shape[0])

    @classmethod
    def _pack(cls, ops):
        return (
            np.stack([op.design for op in ops]),
            np.stack([op.target for op in ops]),
            np.array([op.eta for op in ops]),
        )

    @classmethod
    def _apply_pack(cls, pack, x):
        designs, targets, etas = pack
        resid = np.einsum("mpd,d->mp", designs, x) - targets
        grads = np.einsum("mpd,mp->md", designs, resid)
        return x - etas[:, None] * grads


class LinearScale(ComponentOperator):
    """Diagnostic map ``x -> scale * x``.

    Nonexpansive iff |scale| <= 1; the constructor deliberately does not
    enforce that, so tests can exercise exact variance identities (scale
    +1/-1) and failure paths (|scale| > 1).
    """

    def __init__(self, scale: float, dim: int):
        self.scale = float(scale)
        self.dim = int(dim)
        if self.dim < 1:
            raise ValueError("dim must be positive")

    def _apply(self, x):
        return self.scale * x

    def describe_lines(self):
        return ["linear", f"scale {_fmt(self.scale)}", f"dim {self.dim}"]

    @classmethod
    def _pack(cls, ops):
        return np.array([op.scale for op in ops])

    @classmethod
    def _apply_pack(cls, pack, x):
        return pack[:, None] * x


class OperatorFamily:
    """An immutable collection of n component operators on a shared dimension.

    Parameters
    ----------
    components : sequence of ComponentOperator
        The maps T_i.  All must share one dimension.
    sigma_bound : float, optional
        A certified bound on the single-draw standard deviation of the
        stochastic map (valid on the instance's certified region).
    fixed_point_hint : array-like, optional
        A known fixed point of the mean map; checked to residual 1e-9.
    """

    def __init__(self, components, sigma_bound=None, fixed_point_hint=None):
        components = tuple(components)
        if not components:
            raise ValueError("a family needs at least one component")
        dim = components[0].dim
        for op in components:
            if op.dim != dim:
                raise ValueError("all components must share one dimension")
        self.components = components
        self.dim = dim
        self.n_components = len(components)
        buckets: dict = {}
        for i, op in enumerate(components):
            buckets.setdefault(op._group_key(), []).append(i)
        self._groups = []
        for key, idx in buckets.items():
            cls = key[0]
            ops = [components[i] for i in idx]
            self._groups.append((cls, np.asarray(idx, dtype=np.intp), cls._pack(ops)))
        self.sigma_bound = None if sigma_bound is None else float(sigma_bound)
        if self.sigma_bound is not None and self.sigma_bound < 0.0:
            raise ValueError("sigma_bound must be nonnegative")
        self.fixed_point_hint = None
        if fixed_point_hint is not None:
            hint = check_vector(fixed_point_hint, dim, name="fixed_point_hint")
            resid = self.residual(hint)
            if resid > 1e-9:
                raise ValueError(
                    f"fixed_point_hint has mean-map residual {resid:.3e} > 1e-9"
                )
            self.fixed_point_hint = hint

    def __len__(self):
        return self.n_components

    def component(self, i: int, x) -> np.ndarray:
        """Evaluate one component map."""
        return self.components[i].apply(x)

    def apply_all(self, x, validate: bool = True) -> np.ndarray:
        """Stack of all component outputs, shape (n, dim)."""
        if validate:
            x = check_vector(x, self.dim)
        out = np.empty((self.n_components, self.dim))
        for cls, idx, pack in self._groups:
            out[idx] = cls._apply_pack(pack, x)
        return out

    def mean(self, x, validate: bool = True) -> np.ndarray:
        """The exact mean map T(x)."""
        return self.apply_all(x, validate=validate).mean(axis=0)

    def residual(self, x) -> float:
        """The optimality measure ``||x - T(x)||``."""
        x = check_vector(x, self.dim)
        return float(np.linalg.norm(x - self.mean(x, validate=False)))

    def _check_indices(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.intp)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError("indices must be a nonempty 1-D sequence")
        if idx.min() < 0 or idx.max() >= self.n_components:
            raise ValueError(f"indices must lie in [0, {self.n_components})")
        return idx

    def minibatch(self, x, indices) -> np.ndarray:
        """The sampled-batch estimate ``(1/b) sum_j T_{indices[j]}(x)``.

        Duplicate indices contribute multiply (with-replacement semantics).
        A batch repeating one index reproduces that component output exactly.
        """
        x = check_vector(x, self.dim)
        idx = self._check_indices(indices)
        outputs = self.apply_all(x, validate=False)
        if np.all(idx == idx[0]):
            return outputs[idx[0]].copy()
        return outputs[idx].mean(axis=0)

    def minibatch_weighted(self, outputs: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Convex combination of precomputed component outputs."""
        return weights @ outputs

    def batch_variance(
        self, x, b: int, method: str = "exact", samples: int = 10000, rng=None
    ) -> float:
        """Variance ``E || T_batch(x) - T(x) ||^2`` over ordered batches of size b.

        ``method='exact'`` sums all n^b equiprobable ordered batches (budget
        n^b <= 1e6); ``method='monte-carlo'`` averages ``samples`` sampled
        batches drawn from ``rng``.
        """
        x = check_vector(x, self.dim)
        b = int(b)
        if b < 1:
            raise ValueError("batch size must be positive")
        outputs = self.apply_all(x, validate=False)
        tbar = outputs.mean(axis=0)
        n = self.n_components
        if method == "exact":
            total = n**b
            if total > 1_000_000:
                raise EnumerationBudgetError(
                    f"exact enumeration needs {total} batches (limit 1e6)"
                )
            acc = 0.0
            chunk = 65536
            flat = np.arange(total)
            for lo in range(0, total, chunk):
                ids = np.stack(
                    np.unravel_index(flat[lo : lo + chunk], (n,) * b), axis=-1
                )
                dev = outputs[ids].mean(axis=1) - tbar
                acc += float((dev * dev).sum())
            return acc / total
        if method == "monte-carlo":
            if samples < 1:
                raise ValueError("samples must be positive")
            rng = check_rng(rng)
            draws = rng.draw_indices(n, samples * b).reshape(samples, b)
            dev = outputs[draws].mean(axis=1) - tbar
            return float((dev * dev).sum() / samples)
        raise ValueError(f"unknown variance method {method!r}")

    def enumerate_batches(self, b: int, budget: int = 1_000_000):
        """Iterator over all ordered batches of size b (exact audits only)."""
        n = self.n_components
        if n**b > budget:
            raise EnumerationBudgetError(f"enumeration needs {n ** b} batches")
        return itertools.product(range(n), repeat=b)

    def describe_lines(self) -> list[str]:
        lines = [f"components {self.n_components}", f"dim {self.dim}"]
        if self.sigma_bound is not None:
            lines.append(f"sigma_bound {_fmt(self.sigma_bound)}")
        if self.fixed_point_hint is not None:
            lines.append(f"fixed_point_hint {_fmt_array(self.fixed_point_hint)}")
        for op in self.components:
            lines.append("component")
            lines.extend(op.describe_lines())
        return lines
