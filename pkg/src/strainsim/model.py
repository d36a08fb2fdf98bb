"""Robot description: conical geometry, strain basis, tendon routes.

The RobotModel is immutable after construction; all heavy per-grid values
(basis samples, section properties, quadrature rules) are precomputed here so
the kinematics/dynamics modules evaluate against read-only arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial import legendre

from .errors import ConfigError, DomainError

# Strain component -> row in the 6-vector twist (angular block first).
COMPONENT_ROW = {
    "bend_x": 0,
    "bend_y": 1,
    "torsion": 2,
    "shear_x": 3,
    "shear_y": 4,
    "axial": 5,
}

# Column construction order within one polynomial degree. Strongly actuated
# low-order modes come first so the leading block of the actuation matrix is
# well conditioned for the collocated coordinate change.
COMPONENT_ORDER = ("bend_x", "bend_y", "torsion", "axial", "shear_x", "shear_y")

DEFAULT_DEGREES = {
    "bend_x": 2,
    "bend_y": 2,
    "torsion": 1,
    "axial": 0,
    "shear_x": -1,
    "shear_y": -1,
}

DEFAULT_REFERENCE_STRAIN = (0.0, 0.0, 0.0, 0.0, 0.0, 1.0)


@dataclass(frozen=True)
class RodGeometry:
    """Conical rod geometry and material; SI units throughout.

    The body frame has the undeformed backbone along +z; the default gravity
    vector (0, 0, +9.81) therefore models an arm hanging from its base.
    """

    length: float = 0.38
    base_radius: float = 0.0160
    tip_radius: float = 0.0048
    density: float = 1070.0
    young_modulus: float = 83e3
    shear_modulus: float = 28e3
    gravity: tuple[float, float, float] = (0.0, 0.0, 9.81)

    def __post_init__(self):
        if self.length <= 0:
            raise ConfigError("rod length must be positive")
        if not (self.base_radius >= self.tip_radius > 0):
            raise ConfigError("radii must satisfy base_radius >= tip_radius > 0")
        if min(self.density, self.young_modulus, self.shear_modulus) <= 0:
            raise ConfigError("density and moduli must be positive")

    def radius(self, X):
        """Linearly tapered cross-section radius r(X)."""
        return self.base_radius + (self.tip_radius - self.base_radius) * np.asarray(X) / self.length

    @property
    def radius_rate(self) -> float:
        return (self.tip_radius - self.base_radius) / self.length

    def section_area(self, X):
        return np.pi * self.radius(X) ** 2

    def section_inertia_diag(self, X):
        """Screw inertia density diag(rho*Ix, rho*Iy, rho*Jp, rho*A x3) at X."""
        r = np.asarray(self.radius(X))
        A = np.pi * r**2
        I = np.pi * r**4 / 4.0
        out = np.empty(r.shape + (6,))
        out[..., 0] = self.density * I
        out[..., 1] = self.density * I
        out[..., 2] = self.density * 2.0 * I  # polar moment
        out[..., 3:] = (self.density * A)[..., None]
        return out

    def section_stiffness_diag(self, X):
        """Elastic screw stiffness diag(E*Ix, E*Iy, G*Jp, G*A, G*A, E*A) at X."""
        r = np.asarray(self.radius(X))
        A = np.pi * r**2
        I = np.pi * r**4 / 4.0
        out = np.empty(r.shape + (6,))
        out[..., 0] = self.young_modulus * I
        out[..., 1] = self.young_modulus * I
        out[..., 2] = self.shear_modulus * 2.0 * I
        out[..., 3] = self.shear_modulus * A
        out[..., 4] = self.shear_modulus * A
        out[..., 5] = self.young_modulus * A
        return out

    @property
    def cone_mass(self) -> float:
        rb, rt = self.base_radius, self.tip_radius
        return self.density * np.pi * self.length * (rb**2 + rb * rt + rt**2) / 3.0


@dataclass(frozen=True)
class StrainBasis:
    """Shifted-Legendre strain basis.

    One polynomial family per active strain component; degree -1 freezes the
    component at the reference strain. Columns are ordered degree-major so
    the constant modes of every active component come first.
    """

    length: float
    degrees: dict = field(default_factory=lambda: dict(DEFAULT_DEGREES))
    reference_strain: tuple = DEFAULT_REFERENCE_STRAIN

    def __post_init__(self):
        unknown = set(self.degrees) - set(COMPONENT_ROW)
        if unknown:
            raise ConfigError(f"unknown strain component(s): {sorted(unknown)}")
        degrees = dict(DEFAULT_DEGREES)
        degrees.update(self.degrees)
        object.__setattr__(self, "degrees", degrees)
        if len(self.reference_strain) != 6:
            raise ConfigError("reference strain must be a 6-vector twist")
        if self.size == 0:
            raise ConfigError("strain basis has no active components")

    @cached_property
    def columns(self) -> tuple:
        """(component_row, degree) per generalized coordinate, degree-major."""
        cols = []
        max_deg = max(self.degrees.values())
        for deg in range(max_deg + 1):
            for comp in COMPONENT_ORDER:
                if self.degrees[comp] >= deg:
                    cols.append((COMPONENT_ROW[comp], deg))
        return tuple(cols)

    @property
    def size(self) -> int:
        return sum(d + 1 for d in self.degrees.values() if d >= 0)

    def _legendre_samples(self, X, derivative=False):
        """Legendre values (or X-derivatives) per degree, shape (ndeg, len(X))."""
        X = np.atleast_1d(np.asarray(X, dtype=float))
        u = 2.0 * X / self.length - 1.0
        max_deg = max(d for _, d in self.columns)
        rows = []
        for deg in range(max_deg + 1):
            coeffs = np.zeros(deg + 1)
            coeffs[deg] = 1.0
            if derivative:
                coeffs = legendre.legder(coeffs) if deg > 0 else np.zeros(1)
                rows.append(legendre.legval(u, coeffs) * 2.0 / self.length)
            else:
                rows.append(legendre.legval(u, coeffs))
        return np.asarray(rows)

    def evaluate(self, X) -> np.ndarray:
        """Basis matrix B(X), shape (len(X), 6, n)."""
        vals = self._legendre_samples(X)
        out = np.zeros((vals.shape[1], 6, len(self.columns)))
        for j, (row, deg) in enumerate(self.columns):
            out[:, row, j] = vals[deg]
        return out

    def evaluate_derivative(self, X) -> np.ndarray:
        """dB/dX, shape (len(X), 6, n)."""
        vals = self._legendre_samples(X, derivative=True)
        out = np.zeros((vals.shape[1], 6, len(self.columns)))
        for j, (row, deg) in enumerate(self.columns):
            out[:, row, j] = vals[deg]
        return out

    def reference(self, X) -> np.ndarray:
        """Reference strain field at the given abscissae, shape (len(X), 6)."""
        X = np.atleast_1d(np.asarray(X, dtype=float))
        return np.broadcast_to(np.asarray(self.reference_strain, dtype=float), X.shape + (6,)).copy()


@dataclass(frozen=True)
class TendonRoute:
    """One tendon path on the cross-section.

    base_angle is measured from the cross-section x-axis; a crossed route
    sweeps linearly to the mirrored angle (pi - base_angle) at the
    termination abscissa.
    """

    kind: str = "straight"
    base_angle: float = np.pi / 6.0
    radial_offset_fraction: float = 0.5
    termination: float = 0.325
    friction: float = 0.1  # capstan coefficient per radian of path turning

    def __post_init__(self):
        if self.kind not in ("straight", "crossed"):
            raise ConfigError(f"unknown tendon kind {self.kind!r}")
        if not 0.0 < self.radial_offset_fraction < 1.0:
            raise ConfigError("radial_offset_fraction must lie in (0, 1)")
        if self.termination <= 0:
            raise ConfigError("tendon termination must be positive")
        if self.friction < 0:
            raise ConfigError("friction coefficient must be non-negative")

    def azimuth(self, X):
        X = np.asarray(X, dtype=float)
        if self.kind == "straight":
            return np.broadcast_to(self.base_angle, X.shape).copy()
        return self.base_angle + (np.pi - 2.0 * self.base_angle) * X / self.termination

    @property
    def azimuth_rate(self) -> float:
        if self.kind == "straight":
            return 0.0
        return (np.pi - 2.0 * self.base_angle) / self.termination


def default_tendons() -> tuple:
    """Four tendons: crossed pair (1, 2) at 60/120 deg, straight pair (3, 4)
    at 30/150 deg."""
    return (
        TendonRoute(kind="crossed", base_angle=np.deg2rad(60.0)),
        TendonRoute(kind="crossed", base_angle=np.deg2rad(120.0)),
        TendonRoute(kind="straight", base_angle=np.deg2rad(30.0)),
        TendonRoute(kind="straight", base_angle=np.deg2rad(150.0)),
    )


@dataclass(frozen=True)
class ScanGrid:
    """Ordered abscissae with per-step two-point Gauss sub-nodes and cached
    basis samples; the backbone propagation walks this structure.

    Each output gap is split into `substeps` exponential steps; step arrays
    are gap-major with shape (G * substeps, ...).
    """

    nodes: np.ndarray  # (G,) right endpoint of each output gap, ascending
    weights: np.ndarray | None  # (G,) Gauss weights when the nodes form a rule
    substeps: int
    h: np.ndarray  # (G * substeps,) step widths
    sub_a: np.ndarray  # (G * substeps,) first Gauss point inside each step
    sub_b: np.ndarray  # (G * substeps,)
    Ba: np.ndarray  # (G * substeps, 6, n) basis at sub_a
    Bb: np.ndarray  # (G * substeps, 6, n)
    xi0a: np.ndarray  # (G * substeps, 6) reference strain at sub_a
    xi0b: np.ndarray  # (G * substeps, 6)


_GAUSS_OFF_A = 0.5 - np.sqrt(3.0) / 6.0
_GAUSS_OFF_B = 0.5 + np.sqrt(3.0) / 6.0


def build_scan_grid(basis: StrainBasis, nodes, weights=None, substeps: int = 1) -> ScanGrid:
    """Scan structure through the sorted abscissae, starting from X = 0."""
    nodes = np.atleast_1d(np.asarray(nodes, dtype=float))
    left = np.concatenate([[0.0], nodes[:-1]])
    gap = nodes - left
    if np.any(gap <= 0):
        raise ConfigError("scan abscissae must be strictly increasing and positive")
    substeps = int(substeps)
    frac = np.arange(substeps) / substeps
    step_left = (left[:, None] + gap[:, None] * frac).ravel()
    h = np.repeat(gap / substeps, substeps)
    sub_a = step_left + _GAUSS_OFF_A * h
    sub_b = step_left + _GAUSS_OFF_B * h
    return ScanGrid(
        nodes=nodes,
        weights=None if weights is None else np.asarray(weights, dtype=float),
        substeps=substeps,
        h=h,
        sub_a=sub_a,
        sub_b=sub_b,
        Ba=basis.evaluate(sub_a),
        Bb=basis.evaluate(sub_b),
        xi0a=basis.reference(sub_a),
        xi0b=basis.reference(sub_b),
    )


def gauss_rule(a: float, b: float, npoints: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(npoints)
    return 0.5 * (b - a) * (x + 1.0) + a, 0.5 * (b - a) * w


@dataclass(frozen=True)
class RobotModel:
    """Immutable robot description plus precomputed evaluation grids."""

    geometry: RodGeometry = field(default_factory=RodGeometry)
    basis: StrainBasis | None = None
    tendons: tuple = field(default_factory=default_tendons)
    quadrature_nodes: int = 33
    fk_subintervals: int = 32
    damping_beta: float = 0.05
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.basis is None:
            object.__setattr__(self, "basis", StrainBasis(length=self.geometry.length))
        if abs(self.basis.length - self.geometry.length) > 1e-12:
            raise ConfigError("strain basis length must match rod length")
        if self.quadrature_nodes < 2:
            raise ConfigError("need at least 2 quadrature nodes")
        if self.fk_subintervals < 1:
            raise ConfigError("need at least 1 kinematics subinterval")
        if self.damping_beta < 0:
            raise ConfigError("damping coefficient must be non-negative")
        for route in self.tendons:
            if route.termination > self.geometry.length:
                raise ConfigError("tendon termination exceeds rod length")

    @property
    def n(self) -> int:
        return self.basis.size

    @property
    def n_tendons(self) -> int:
        return len(self.tendons)

    @property
    def gravity(self) -> np.ndarray:
        return np.asarray(self.geometry.gravity, dtype=float)

    # -- precomputed grids ------------------------------------------------

    @cached_property
    def dynamics_grid(self) -> ScanGrid:
        """Gauss rule over [0, L] used for the generalized-matrix quadrature."""
        nodes, weights = gauss_rule(0.0, self.geometry.length, self.quadrature_nodes)
        return build_scan_grid(self.basis, nodes, weights)

    @cached_property
    def inertia_at_nodes(self) -> np.ndarray:
        """(G, 6) screw inertia density at the dynamics grid nodes."""
        return self.geometry.section_inertia_diag(self.dynamics_grid.nodes)

    @cached_property
    def rho_area_at_nodes(self) -> np.ndarray:
        return self.geometry.density * self.geometry.section_area(self.dynamics_grid.nodes)

    @cached_property
    def basis_at_nodes(self) -> np.ndarray:
        return self.basis.evaluate(self.dynamics_grid.nodes)

    @cached_property
    def stiffness(self) -> np.ndarray:
        """K = integral of B^T Sigma(X) B over [0, L]; exact for the
        polynomial integrand under the default rule."""
        grid = self.dynamics_grid
        B = self.basis_at_nodes
        sigma = self.geometry.section_stiffness_diag(grid.nodes)
        return np.einsum("g,gik,gi,gil->kl", grid.weights, B, sigma, B, optimize=True)

    @cached_property
    def damping(self) -> np.ndarray:
        """Stiffness-proportional viscous damping D = beta * K."""
        return self.damping_beta * self.stiffness

    def scan_grid_to(self, X: float, subintervals: int | None = None) -> ScanGrid:
        """Uniform scan grid over [0, X] (cached); X = 0 is not a grid."""
        L = self.geometry.length
        if not 0.0 <= X <= L + 1e-12:
            raise DomainError(f"abscissa {X} outside [0, {L}]")
        nsub = self.fk_subintervals if subintervals is None else int(subintervals)
        key = (round(float(X), 15), nsub)
        grid = self._cache.get(key)
        if grid is None:
            nodes = np.linspace(0.0, X, nsub + 1)[1:]
            grid = build_scan_grid(self.basis, nodes)
            self._cache[key] = grid
        return grid

    def with_updates(self, *, stiffness_scale=1.0, density_scale=1.0, friction_scale=1.0) -> "RobotModel":
        """Perturbed copy (truth-model mismatch hook)."""
        geo = self.geometry
        geometry = RodGeometry(
            length=geo.length,
            base_radius=geo.base_radius,
            tip_radius=geo.tip_radius,
            density=geo.density * density_scale,
            young_modulus=geo.young_modulus * stiffness_scale,
            shear_modulus=geo.shear_modulus * stiffness_scale,
            gravity=geo.gravity,
        )
        tendons = tuple(
            TendonRoute(
                kind=t.kind,
                base_angle=t.base_angle,
                radial_offset_fraction=t.radial_offset_fraction,
                termination=t.termination,
                friction=t.friction * friction_scale,
            )
            for t in self.tendons
        )
        return RobotModel(
            geometry=geometry,
            basis=self.basis,
            tendons=tendons,
            quadrature_nodes=self.quadrature_nodes,
            fk_subintervals=self.fk_subintervals,
            damping_beta=self.damping_beta,
        )
