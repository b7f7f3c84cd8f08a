"""Synthetic stomach-like scene: a closed perturbed-ellipsoid cavity with
procedural surface texture and an interior camera trajectory.

The surface is star-shaped about the origin: along unit direction d its
radius is r(d) = r_ell(d) * (1 + bump(d)), where r_ell is the ellipsoid
radius and bump a band-limited sum of sinusoids. Implicit function
F(p) = |p| - r(p/|p|) is negative inside the cavity.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError
from ..geometry import RigidPose, look_at_pose

DEFAULT_RADII = (1.0, 0.7, 0.6)
DEFAULT_BUMP_AMPLITUDE = 0.05
MAX_BUMP_AMPLITUDE = 0.08
_BUMP_TERMS = 6
_TRAJECTORY_MARGIN = 0.25


@dataclass(frozen=True)
class CavitySurface:
    """Perturbed ellipsoid, star-shaped about the origin.

    Attributes:
        radii: Ellipsoid semi-axes (a, b, c).
        bump_dirs: (H, 3) unit directions of the sinusoidal perturbations.
        bump_freqs, bump_phases, bump_amps: (H,) per-term parameters;
            sum(|amps|) is the amplitude bound of the relative perturbation.
    """

    radii: np.ndarray
    bump_dirs: np.ndarray
    bump_freqs: np.ndarray
    bump_phases: np.ndarray
    bump_amps: np.ndarray

    @classmethod
    def generate(
        cls,
        radii=DEFAULT_RADII,
        amplitude: float = DEFAULT_BUMP_AMPLITUDE,
        seed: int = 0,
    ) -> "CavitySurface":
        if amplitude > MAX_BUMP_AMPLITUDE:
            raise InvalidInputError(
                f"bump amplitude {amplitude} above the closed-surface bound "
                f"{MAX_BUMP_AMPLITUDE}"
            )
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5CEE)))
        dirs = rng.normal(size=(_BUMP_TERMS, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        freqs = rng.uniform(2.0, 5.0, _BUMP_TERMS)
        phases = rng.uniform(0, 2 * np.pi, _BUMP_TERMS)
        amps = rng.uniform(0.5, 1.0, _BUMP_TERMS)
        amps *= amplitude / amps.sum()  # sum(|amps|) == amplitude
        return cls(
            radii=np.asarray(radii, dtype=np.float64),
            bump_dirs=dirs,
            bump_freqs=freqs,
            bump_phases=phases,
            bump_amps=amps,
        )

    def bump(self, dirs: np.ndarray) -> np.ndarray:
        phase = dirs @ self.bump_dirs.T * self.bump_freqs + self.bump_phases
        return np.sin(phase) @ self.bump_amps

    def radius_along(self, dirs: np.ndarray) -> np.ndarray:
        """Surface radius along unit directions (N, 3)."""
        scaled = dirs / self.radii
        r_ell = 1.0 / np.sqrt(np.sum(scaled * scaled, axis=-1))
        return r_ell * (1.0 + self.bump(dirs))

    def implicit(self, points: np.ndarray) -> np.ndarray:
        """F(p) = |p| - r(p_hat); negative inside the cavity."""
        pts = np.asarray(points, dtype=np.float64)
        rho = np.linalg.norm(pts, axis=-1)
        safe = np.maximum(rho, 1e-12)
        unit = pts / safe[..., None]
        return rho - self.radius_along(unit)

    def surface_points(self, dirs: np.ndarray) -> np.ndarray:
        return dirs * self.radius_along(dirs)[..., None]

    def _grad_dir(self, dirs: np.ndarray):
        """(d rho / d d) of the radius function, shape (N, 3)."""
        scaled = dirs / self.radii
        s2 = np.sum(scaled * scaled, axis=-1)
        r_ell = 1.0 / np.sqrt(s2)
        bump = self.bump(dirs)
        grad_rell = -(r_ell**3)[..., None] * dirs / (self.radii**2)
        phase = dirs @ self.bump_dirs.T * self.bump_freqs + self.bump_phases
        grad_bump = (np.cos(phase) * self.bump_freqs * self.bump_amps) @ self.bump_dirs
        return grad_rell * (1.0 + bump)[..., None] + r_ell[..., None] * grad_bump

    def gradient(self, points: np.ndarray) -> np.ndarray:
        """Gradient of the implicit function (points outward)."""
        pts = np.asarray(points, dtype=np.float64)
        rho = np.maximum(np.linalg.norm(pts, axis=-1), 1e-12)
        d = pts / rho[..., None]
        grad_rho = self._grad_dir(d)
        tang = grad_rho - d * np.sum(d * grad_rho, axis=-1, keepdims=True)
        return d - tang / rho[..., None]

    def outward_normals(self, points: np.ndarray) -> np.ndarray:
        g = self.gradient(points)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def distance_to_surface(self, points: np.ndarray, iterations: int = 20) -> np.ndarray:
        """Per-point distance to the surface by Gauss-Newton over (theta, phi).

        Initialized at the radial direction; the radial gap is used as a
        safeguard upper bound.
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        rho = np.maximum(np.linalg.norm(pts, axis=1), 1e-12)
        d0 = pts / rho[:, None]
        theta = np.arccos(np.clip(d0[:, 2], -1, 1))
        phi = np.arctan2(d0[:, 1], d0[:, 0])

        def s_and_jac(theta, phi):
            st, ct = np.sin(theta), np.cos(theta)
            sp, cp = np.sin(phi), np.cos(phi)
            d = np.stack([st * cp, st * sp, ct], axis=1)
            dd_dt = np.stack([ct * cp, ct * sp, -st], axis=1)
            dd_dp = np.stack([-st * sp, st * cp, np.zeros_like(st)], axis=1)
            r = self.radius_along(d)
            grad = self._grad_dir(d)
            dr_dt = np.sum(grad * dd_dt, axis=1)
            dr_dp = np.sum(grad * dd_dp, axis=1)
            s = d * r[:, None]
            ds_dt = dd_dt * r[:, None] + d * dr_dt[:, None]
            ds_dp = dd_dp * r[:, None] + d * dr_dp[:, None]
            return s, ds_dt, ds_dp

        for _ in range(iterations):
            s, ds_dt, ds_dp = s_and_jac(theta, phi)
            res = pts - s
            j11 = np.sum(ds_dt * ds_dt, axis=1)
            j12 = np.sum(ds_dt * ds_dp, axis=1)
            j22 = np.sum(ds_dp * ds_dp, axis=1) + 1e-18
            g1 = np.sum(ds_dt * res, axis=1)
            g2 = np.sum(ds_dp * res, axis=1)
            det = j11 * j22 - j12 * j12
            det = np.where(np.abs(det) < 1e-18, 1e-18, det)
            dt = (j22 * g1 - j12 * g2) / det
            dp = (j11 * g2 - j12 * g1) / det
            step = np.clip(np.stack([dt, dp], axis=1), -0.2, 0.2)
            theta = theta + step[:, 0]
            phi = phi + step[:, 1]

        s, _, _ = s_and_jac(theta, phi)
        dist = np.linalg.norm(pts - s, axis=1)
        radial_gap = np.abs(self.implicit(pts))
        return np.minimum(dist, radial_gap)

    def bounding_radius(self) -> float:
        return float(self.radii.max() * (1.0 + np.sum(np.abs(self.bump_amps))))


HIGH_TEXTURE = "high_texture"
LOW_TEXTURE = "low_texture"
_TEXTURE_TERMS = 384


@dataclass(frozen=True)
class TextureField:
    """Procedural albedo over 3D points; two variants.

    high_texture: multi-scale mottled pattern, contrast concentrated in
    the red channel (dye-pooling look). low_texture: smooth gradient.
    """

    variant: str
    dirs: np.ndarray
    freqs: np.ndarray
    phases: np.ndarray
    amps: np.ndarray

    @classmethod
    def generate(cls, variant: str, seed: int = 0) -> "TextureField":
        if variant not in (HIGH_TEXTURE, LOW_TEXTURE):
            raise InvalidInputError(f"unknown texture variant {variant!r}")
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x7E47)))
        dirs = rng.normal(size=(_TEXTURE_TERMS, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        freqs = np.geomspace(4.0, 400.0, _TEXTURE_TERMS) * rng.uniform(
            0.85, 1.15, _TEXTURE_TERMS
        )
        phases = rng.uniform(0, 2 * np.pi, _TEXTURE_TERMS)
        amps = freqs**-0.25
        amps /= np.sqrt(np.sum(amps**2))
        return cls(variant=variant, dirs=dirs, freqs=freqs, phases=phases, amps=amps)

    def _pattern(self, points: np.ndarray) -> np.ndarray:
        phase = points @ self.dirs.T * self.freqs + self.phases
        t = np.sin(phase) @ self.amps
        return np.clip(0.5 + 1.5 * t, 0.0, 1.0)

    def albedo(self, points: np.ndarray) -> np.ndarray:
        """(N, 3) RGB albedo in [0, 1] at 3D surface points."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if self.variant == HIGH_TEXTURE:
            pattern = self._pattern(pts)
            red = 0.85 - 0.62 * pattern
            green = 0.55 - 0.22 * pattern
            blue = 0.45 - 0.06 * pattern
        else:
            slow = 0.5 + 0.5 * np.sin(pts @ self.dirs[0] * 1.1 + self.phases[0])
            red = 0.62 + 0.10 * slow
            green = 0.48 + 0.06 * slow
            blue = 0.40 + 0.03 * slow
        return np.clip(np.stack([red, green, blue], axis=1), 0.0, 1.0)


@dataclass(frozen=True)
class SyntheticScene:
    """Surface + texture + ground-truth interior trajectory."""

    surface: CavitySurface
    texture: TextureField
    trajectory: tuple
    seed: int

    @classmethod
    def generate(
        cls,
        n_frames: int = 40,
        texture_variant: str = HIGH_TEXTURE,
        seed: int = 0,
        radii=DEFAULT_RADII,
        bump_amplitude: float = DEFAULT_BUMP_AMPLITUDE,
    ) -> "SyntheticScene":
        surface = CavitySurface.generate(radii=radii, amplitude=bump_amplitude, seed=seed)
        texture = TextureField.generate(texture_variant, seed=seed)
        trajectory = interior_loop_trajectory(surface, n_frames)
        return cls(surface=surface, texture=texture, trajectory=tuple(trajectory), seed=seed)

    def scene_diameter(self) -> float:
        return 2.0 * self.surface.bounding_radius()


def interior_loop_trajectory(surface: CavitySurface, n_frames: int) -> list:
    """Closed loop sweeping the cavity, looking outward at the wall.

    Positions trace a tilted ellipse at ~40% of the cavity radii; the view
    direction sweeps the wall with a vertical oscillation so the union of
    wide-angle frusta covers the whole surface.

    Raises:
        InvalidInputError: a pose escapes the cavity (amplitude too large
            or radii too small).
    """
    poses = []
    radii = surface.radii
    for i in range(n_frames):
        psi = 2.0 * np.pi * i / n_frames
        pos = 0.40 * radii * np.array(
            [np.cos(psi), np.sin(psi), 0.45 * np.sin(2.0 * psi)]
        )
        if surface.implicit(pos[None])[0] > -_TRAJECTORY_MARGIN * radii.min():
            raise InvalidInputError(f"trajectory pose {i} is not safely inside the cavity")
        look_dir = np.array(
            [
                np.cos(psi + 0.35),
                np.sin(psi + 0.35),
                0.9 * np.sin(2.0 * psi + 0.7),
            ]
        )
        look_dir /= np.linalg.norm(look_dir)
        target = pos + look_dir * (2.5 * float(radii.max()))
        up = np.array([0.0, 0.0, 1.0])
        if abs(look_dir @ up) > 0.985:
            up = np.array([0.0, 1.0, 0.0])
        poses.append(look_at_pose(pos, target, up))
    return poses
