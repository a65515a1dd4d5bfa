"""Generators for benchmark instances with known fixed points and certified constants.

Three families are provided, mirroring the classic applications of averaged
fixed-point iterations:

* ``feasibility``  -- project onto convex sets (halfspaces and balls) that all
  contain a designated point, so the intersection is nonempty and known.
* ``zero-point``   -- forward steps x - beta * M_i (x - z) driven by symmetric
  PSD matrices sharing the zero z.
* ``minimization`` -- gradient steps for consistent least-squares components
  sharing the minimizer w.

Every instance records a localization radius ``r`` (1.5x the initial distance
by default) and variance certificates valid on the ball B_r(x_star).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import check_rng, check_vector
from .operators import (
    EIG_MARGIN,
    BallProjection,
    BoxProjection,
    CocoerciveStep,
    ComponentOperator,
    GradientStep,
    HalfspaceProjection,
    LinearScale,
    OperatorFamily,
    power_iteration,
)

__all__ = [
    "ProblemInstance",
    "certify_sigma",
    "make_feasibility",
    "make_zero_point",
    "make_minimization",
    "save_instance",
    "load_instance",
]

KINDS = ("feasibility", "zero-point", "minimization")


@dataclass
class ProblemInstance:
    """A generated operator family plus its certificates.

    ``constants`` holds the kind-specific certified values; ``sigma`` is the
    variance certificate actually used (valid bound for the stochastic map on
    B_r(x_star)) and ``sigma_nominal`` the textbook closed form, which for the
    zero-point kind omits a beta factor (see ``certify_sigma``).
    """

    family: OperatorFamily
    x_star: np.ndarray
    kind: str
    r: float
    x0: np.ndarray
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown instance kind {self.kind!r}")
        self.x_star = check_vector(self.x_star, self.family.dim, name="x_star")
        self.x0 = check_vector(self.x0, self.family.dim, name="x0")
        self.r = float(self.r)
        if self.r <= 0.0:
            raise ValueError("localization radius must be positive")

    @property
    def sigma(self) -> float:
        return certify_sigma(self)

    @property
    def region(self) -> tuple[np.ndarray, float]:
        """The ball on which the variance certificate is valid."""
        return self.x_star, self.r

    def initial_distance(self) -> float:
        return float(np.linalg.norm(self.x0 - self.x_star))


def certify_sigma(instance: ProblemInstance, nominal: bool = False) -> float:
    """Certified bound sigma with Var[T_xi(x)] <= sigma^2 on B_r(x_star).

    feasibility  : sigma = r + ||x_star||.
    zero-point   : the cocoercivity argument bounds the forward operator by
                   ||A_i(x)||^2 <= r^2 / (beta (2 gamma - beta)); the map
                   variance is beta^2 times that, giving the consistent
                   sigma = r sqrt(beta / (2 gamma - beta)).  ``nominal=True``
                   returns the textbook value r / sqrt(beta (2 gamma - beta))
                   which omits the beta^2 factor.
    minimization : sigma = eta * sigma_g with sigma_g^2 the mean of
                   2 (f_i_sup - f_i_min) / L_i over components.
    """
    kind = instance.kind
    c = instance.constants
    if kind == "feasibility":
        return instance.r + float(np.linalg.norm(instance.x_star))
    if kind == "zero-point":
        beta, gamma = c["beta"], c["gamma"]
        denom = beta * (2.0 * gamma - beta)
        if denom <= 0.0:
            raise ValueError("beta outside (0, 2*gamma)")
        if nominal:
            return instance.r / math.sqrt(denom)
        return instance.r * math.sqrt(beta / (2.0 * gamma - beta))
    if kind == "minimization":
        return c["eta"] * c["sigma_g"]
    raise ValueError(f"unknown instance kind {kind!r}")


def make_feasibility(
    dim: int,
    n_components: int,
    random_state=None,
    spread: float = 1.0,
    geometry: str = "regular",
    ball_fraction: float = 0.75,
    margin_scale: float = 1e-7,
) -> ProblemInstance:
    """Random feasibility instance whose sets all contain a margin ball.

    A designated point is drawn first; every constraint is then placed so it
    contains a small ball around that point, which certifies nonemptiness of
    the intersection and makes the point a common fixed point of all
    projections.  Constraints are tight (they pass within ``margin_scale *
    spread`` of the point).

    ``geometry`` selects the constraint layout:

    * ``"regular"`` -- independent one-sided balls and halfspaces; the
      iteration contracts briskly (benign benchmark, almost-sure
      convergence checks).
    * ``"tangled"`` -- pairs of nearly opposing halfspaces forming thin
      wedges whose closing angles span two decades, plus one almost-frozen
      wedge protected from the remaining constraints.  Residual decay is
      then governed by the spread of wedge timescales (sublinear over the
      benchmark range) and small constant batches sustain a measurable
      noise floor for tens of thousands of iterations (rate and floor
      benchmarks).  Requires dim >= 4 and n_components >= 8.
    """
    if dim < 1 or n_components < 1:
        raise ValueError("dim and n_components must be positive")
    spread = float(spread)
    if spread <= 0.0:
        raise ValueError("spread must be positive")
    rng = check_rng(random_state)
    anchor = rng.standard_normal(dim) * (spread / math.sqrt(dim))
    margin = margin_scale * spread
    if geometry == "regular":
        components: list[ComponentOperator] = []
        n_balls = int(round(ball_fraction * n_components))
        for i in range(n_components):
            direction = rng.unit_vector(dim)
            slack = margin * (1.0 + rng.uniform())
            if i < n_balls:
                depth = spread * rng.uniform(0.75, 1.5)
                center = anchor - depth * direction
                components.append(BallProjection(center, depth + slack))
            else:
                offset = float(direction @ anchor) + slack
                components.append(HalfspaceProjection(direction, offset))
        x0 = anchor + spread * rng.unit_vector(dim)
    elif geometry == "tangled":
        components, x0 = _tangled_feasibility(
            dim, n_components, rng, anchor, spread, margin
        )
    else:
        raise ValueError(f"unknown geometry {geometry!r}")
    r = 1.5 * float(np.linalg.norm(x0 - anchor))
    sigma = r + float(np.linalg.norm(anchor))
    family = OperatorFamily(components, sigma_bound=sigma, fixed_point_hint=anchor)
    return ProblemInstance(
        family=family,
        x_star=anchor,
        kind="feasibility",
        r=r,
        x0=x0,
        constants={"sigma": sigma, "sigma_nominal": sigma, "margin": margin},
    )


# Tangled-geometry shape constants.  A wedge closing at angle t is drained by
# the averaged iteration at a per-step rate of about alpha * t^2 / (2n), so
# the frozen wedges (_FROZEN_ANGLES) keep their sampling-noise floor alive
# far beyond 1e4 iterations (two independent wedges smooth the floor's
# across-seed wander) while the graded wedges (_WEDGE_ANGLES, fastest to
# slowest) cover timescales from tens of steps up to ~700 steps: they carry
# the residual curve across the rate-benchmark grid and are exhausted well
# before the floor-measurement window around k ~ 1e4.
_FROZEN_ANGLES = (0.0035, 0.0028)
_WEDGE_ANGLES = (1.4, 0.7, 0.375)
# Residual signature per unit slide coordinate grows like angle^1.7; loadings
# ~ angle^-1.7 give each timescale an even share of the decay curve.
_SIGNATURE_POWER = 1.7


def _tangled_feasibility(dim, n, rng, anchor, spread, margin):
    n_frozen = min(len(_FROZEN_ANGLES), max(1, (dim - 4) // 4 + 1))
    n_mid = min((dim - 2 * n_frozen) // 2, len(_WEDGE_ANGLES), (n - 2 * n_frozen) // 2)
    if dim < 4 or n < 8 or n_mid < 1:
        raise ValueError("tangled geometry needs dim >= 4 and n_components >= 8")

    def wedge(u, w, angle):
        first = u
        second = -math.cos(angle) * u + math.sin(angle) * w
        return [
            HalfspaceProjection(
                a, float(a @ anchor) + margin * (1.0 + rng.uniform())
            )
            for a in (first, second)
        ]

    def balanced_cross(s, angle):
        # Cross coordinate at which the two wall pulls balance, so a wedge
        # starts quasi-stationary instead of spending ~n/alpha steps relaxing.
        c = math.cos(angle)
        return s * math.sin(angle) * c / (1.0 + c * c)

    # Mutually orthogonal planes: one per wedge, so no wedge drains another's
    # slide coordinate.  QR of a random matrix gives the orthonormal frame.
    basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    frozen_planes = [(basis[:, 2 * i], basis[:, 2 * i + 1]) for i in range(n_frozen)]
    start = 2 * n_frozen
    planes = [
        (basis[:, start + 2 * i], basis[:, start + 2 * i + 1]) for i in range(n_mid)
    ]
    used = start + 2 * n_mid

    components = []
    for (u, w), angle in zip(frozen_planes, _FROZEN_ANGLES):
        components.extend(wedge(u, w, angle))
    angles = []
    for (u, w), center in zip(planes, _WEDGE_ANGLES):
        angle = float(center) * rng.uniform(0.92, 1.08)
        components.extend(wedge(u, w, angle))
        angles.append(angle)
    # Remaining components are slack halfspaces: they contain the whole
    # region the iterate visits, so they only dilute the sampling.
    while len(components) < n:
        v = rng.unit_vector(dim)
        components.append(
            HalfspaceProjection(
                v, float(v @ anchor) + spread * (0.6 + 0.4 * rng.uniform())
            )
        )
    # Start on the closing side of every wedge, at the pull-balance cross
    # coordinate, with slide loadings equalizing the signatures.
    weights = np.array([a**-_SIGNATURE_POWER for a in angles])
    weights *= 0.9 / np.linalg.norm(weights)
    offset = np.zeros(dim)
    s_frozen = 0.4 / math.sqrt(n_frozen)
    for (u, w), angle in zip(frozen_planes, _FROZEN_ANGLES):
        offset += s_frozen * w + balanced_cross(s_frozen, angle) * u
    for (u, w), angle, wt in zip(planes, angles, weights):
        s = wt * rng.uniform(0.85, 1.15)
        offset += s * w + balanced_cross(s, angle) * u
    if used < dim:
        tail = basis[:, used:] @ rng.standard_normal(dim - used)
        offset += 0.02 * tail / max(np.linalg.norm(tail), 1e-12)
    x0 = anchor + spread * offset / np.linalg.norm(offset)
    return components, x0


def _random_psd(rng, dim: int, eig_low: float = 0.1, eig_high: float = 1.0) -> np.ndarray:
    """QR-rotated diagonal with eigenvalues uniform on [eig_low, eig_high]."""
    g = rng.standard_normal((dim, dim))
    q, _ = np.linalg.qr(g)
    eigs = rng.uniform(eig_low, eig_high, size=dim)
    m = (q * eigs) @ q.T
    return 0.5 * (m + m.T)


def make_zero_point(
    dim: int,
    n_components: int,
    random_state=None,
    beta_fraction: float = 0.9,
) -> ProblemInstance:
    """Random zero-point instance: forward steps of PSD maps sharing a zero."""
    if dim < 1 or n_components < 1:
        raise ValueError("dim and n_components must be positive")
    beta_fraction = float(beta_fraction)
    if not 0.0 < beta_fraction <= 1.0:
        raise ValueError("beta_fraction must lie in (0, 1]")
    rng = check_rng(random_state)
    zero = rng.standard_normal(dim) / math.sqrt(dim)
    matrices = [_random_psd(rng, dim) for _ in range(n_components)]
    gammas = []
    for m in matrices:
        lam = power_iteration(m)
        gammas.append(1.0 / (EIG_MARGIN * lam))
    gamma = min(gammas)
    beta = beta_fraction * 2.0 * gamma
    components = [CocoerciveStep(beta, m, zero) for m in matrices]
    x0 = zero + rng.unit_vector(dim)
    r = 1.5 * float(np.linalg.norm(x0 - zero))
    instance = ProblemInstance(
        family=OperatorFamily(components, fixed_point_hint=zero),
        x_star=zero,
        kind="zero-point",
        r=r,
        x0=x0,
        constants={"gamma": gamma, "beta": beta},
    )
    sigma = certify_sigma(instance)
    instance.constants.update(
        sigma=sigma, sigma_nominal=certify_sigma(instance, nominal=True)
    )
    instance.family.sigma_bound = sigma
    return instance


def make_minimization(
    dim: int,
    n_components: int,
    random_state=None,
    eta_fraction: float = 0.9,
    sup_samples: int = 10000,
) -> ProblemInstance:
    """Random consistent least-squares instance sharing one minimizer.

    Targets are generated as ``A_i w`` for a shared ``w``, so every component
    loss is minimized (to zero) at ``w`` and the mean gradient vanishes there.
    The per-component loss sup needed for the gradient-variance certificate is
    estimated as the max over ``sup_samples`` points in B_r(x_star), inflated
    by 1.1.
    """
    if dim < 1 or n_components < 1:
        raise ValueError("dim and n_components must be positive")
    eta_fraction = float(eta_fraction)
    if not 0.0 < eta_fraction <= 1.0:
        raise ValueError("eta_fraction must lie in (0, 1]")
    rng = check_rng(random_state)
    minimizer = rng.standard_normal(dim) / math.sqrt(dim)
    designs = [
        rng.standard_normal((dim, dim)) / math.sqrt(dim) for _ in range(n_components)
    ]
    smoothness = []
    for a in designs:
        lam = power_iteration(a.T @ a)
        smoothness.append(1.0 / (EIG_MARGIN * lam))
    L = min(smoothness)
    eta = eta_fraction * 2.0 * L
    components = [GradientStep(eta, a, a @ minimizer) for a in designs]
    x0 = minimizer + rng.unit_vector(dim)
    r = 1.5 * float(np.linalg.norm(x0 - minimizer))
    # Loss sup over the certified ball: uniform ball sample, inflated 10%.
    dirs = rng.standard_normal((sup_samples, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = r * rng.uniform(size=sup_samples) ** (1.0 / dim)
    points = minimizer + radii[:, None] * dirs
    sup_terms = []
    for a, li in zip(designs, smoothness):
        vals = 0.5 * np.square((points - minimizer) @ a.T).sum(axis=1)
        sup_terms.append(1.1 * float(vals.max()) / li)
    sigma_g = math.sqrt(2.0 * sum(sup_terms) / n_components)
    instance = ProblemInstance(
        family=OperatorFamily(components, fixed_point_hint=minimizer),
        x_star=minimizer,
        kind="minimization",
        r=r,
        x0=x0,
        constants={"L": L, "eta": eta, "sigma_g": sigma_g},
    )
    sigma = certify_sigma(instance)
    instance.constants.update(sigma=sigma, sigma_nominal=sigma)
    instance.family.sigma_bound = sigma
    return instance


# ---------------------------------------------------------------------------
# Structured-text serialization (replayable across implementations).
#
#   kmbatch-instance v1
#   kind <feasibility|zero-point|minimization>
#   dim <d>
#   r <decimal>
#   x_star <d decimals>
#   x0 <d decimals>
#   constant <name> <decimal>        (zero or more)
#   components <n>
#   component                        (n blocks; body lines per operator kind,
#   <kind tag>                        vectors/matrices row-major decimal)
#   ...
#   end
# ---------------------------------------------------------------------------

_HEADER = "kmbatch-instance v1"


def _fmt_vec(arr) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(arr, dtype=float).ravel())


def save_instance(instance: ProblemInstance, path) -> None:
    lines = [_HEADER, f"kind {instance.kind}", f"dim {instance.family.dim}"]
    lines.append(f"r {instance.r!r}")
    lines.append(f"x_star {_fmt_vec(instance.x_star)}")
    lines.append(f"x0 {_fmt_vec(instance.x0)}")
    for name in sorted(instance.constants):
        lines.append(f"constant {name} {float(instance.constants[name])!r}")
    lines.append(f"components {instance.family.n_components}")
    for op in instance.family.components:
        lines.append("component")
        lines.extend(op.describe_lines())
    lines.append("end")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


class _LineReader:
    def __init__(self, lines):
        self.lines = lines
        self.pos = 0

    def next(self) -> str:
        while self.pos < len(self.lines):
            line = self.lines[self.pos].strip()
            self.pos += 1
            if line:
                return line
        raise ValueError("unexpected end of instance file")

    def expect(self, keyword: str) -> list[str]:
        line = self.next()
        parts = line.split()
        if parts[0] != keyword:
            raise ValueError(
                f"line {self.pos}: expected {keyword!r}, got {parts[0]!r}"
            )
        return parts[1:]


def _parse_vec(tokens, length: int, what: str) -> np.ndarray:
    if len(tokens) != length:
        raise ValueError(f"{what}: expected {length} values, got {len(tokens)}")
    return np.array([float(t) for t in tokens])


def _read_component(reader: _LineReader, dim: int) -> ComponentOperator:
    tag = reader.next()
    if tag == "halfspace":
        normal = _parse_vec(reader.expect("normal"), dim, "halfspace normal")
        offset = float(reader.expect("offset")[0])
        return HalfspaceProjection(normal, offset)
    if tag == "ball":
        center = _parse_vec(reader.expect("center"), dim, "ball center")
        radius = float(reader.expect("radius")[0])
        return BallProjection(center, radius)
    if tag == "box":
        low = _parse_vec(reader.expect("low"), dim, "box low")
        high = _parse_vec(reader.expect("high"), dim, "box high")
        return BoxProjection(low, high)
    if tag == "cocoercive":
        beta = float(reader.expect("beta")[0])
        root = _parse_vec(reader.expect("root"), dim, "cocoercive root")
        matrix = _parse_vec(
            reader.expect("matrix"), dim * dim, "cocoercive matrix"
        ).reshape(dim, dim)
        return CocoerciveStep(beta, matrix, root)
    if tag == "gradient":
        eta = float(reader.expect("eta")[0])
        rows = int(reader.expect("rows")[0])
        design = _parse_vec(
            reader.expect("design"), rows * dim, "gradient design"
        ).reshape(rows, dim)
        target = _parse_vec(reader.expect("target"), rows, "gradient target")
        return GradientStep(eta, design, target)
    if tag == "linear":
        scale = float(reader.expect("scale")[0])
        op_dim = int(reader.expect("dim")[0])
        return LinearScale(scale, op_dim)
    raise ValueError(f"unknown component kind {tag!r}")


def load_instance(path) -> ProblemInstance:
    with open(path, "r", encoding="utf-8") as fh:
        reader = _LineReader(fh.read().splitlines())
    if reader.next() != _HEADER:
        raise ValueError(f"not a {_HEADER} file")
    kind = reader.expect("kind")[0]
    dim = int(reader.expect("dim")[0])
    r = float(reader.expect("r")[0])
    x_star = _parse_vec(reader.expect("x_star"), dim, "x_star")
    x0 = _parse_vec(reader.expect("x0"), dim, "x0")
    constants: dict = {}
    line = reader.next()
    while line.startswith("constant "):
        _, name, value = line.split()
        constants[name] = float(value)
        line = reader.next()
    parts = line.split()
    if parts[0] != "components":
        raise ValueError(f"expected 'components', got {parts[0]!r}")
    n = int(parts[1])
    components = []
    for _ in range(n):
        reader.expect("component")
        components.append(_read_component(reader, dim))
    if reader.next() != "end":
        raise ValueError("missing 'end' marker")
    family = OperatorFamily(
        components, sigma_bound=constants.get("sigma"), fixed_point_hint=x_star
    )
    return ProblemInstance(
        family=family, x_star=x_star, kind=kind, r=r, x0=x0, constants=constants
    )
