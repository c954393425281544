"""Surface scattering: dielectric Fresnel, diffuse BRDFs, mirror and glass BSDFs.

All functions are generic over floats, ndarrays and :class:`~difflidar.scalar.Dual`.
Directions follow the usual convention: ``omega_o`` points from the surface
back along the arriving ray, normals point into the hemisphere of ``omega_o``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scalar import dot, value, where

KINDS = ("lambertian", "oren_nayar", "mirror", "glass")


@dataclass(frozen=True)
class Material:
    """One scattering model; numeric fields may hold ``Dual`` values.

    ``diffuse`` adds a Lambertian lobe of that reflectance on top of a glass
    surface (transparent plastic).
    """

    kind: str
    k_r: object = 0.0
    sigma: object = 0.0
    eta: object = None
    diffuse: object = 0.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown material variant {self.kind!r}")
        k, s = float(value(self.k_r)), float(value(self.sigma))
        if not 0.0 <= k <= 1.0:
            raise ValueError(f"k_R must lie in [0, 1], got {k}")
        if s < 0:
            raise ValueError(f"sigma must be non-negative, got {s}")
        if self.kind == "glass" and self.eta is None:
            raise ValueError("glass needs a refractive index")
        if self.eta is not None and float(value(self.eta)) < 1.0:
            raise ValueError(f"refractive index must be >= 1, got {float(value(self.eta))}")
        if not 0.0 <= float(value(self.diffuse)) <= 1.0:
            raise ValueError("diffuse weight must lie in [0, 1]")

    @classmethod
    def lambertian(cls, k_r, name=""):
        return cls("lambertian", k_r=k_r, name=name)

    @classmethod
    def oren_nayar(cls, k_r, sigma, name=""):
        return cls("oren_nayar", k_r=k_r, sigma=sigma, name=name)

    @classmethod
    def mirror(cls, eta=None, name=""):
        """Specular reflector; ``eta=None`` is a perfect mirror (F_r = 1)."""
        return cls("mirror", eta=eta, name=name)

    @classmethod
    def glass(cls, eta=1.5, diffuse=0.0, name=""):
        return cls("glass", eta=eta, diffuse=diffuse, name=name)

    @classmethod
    def plastic(cls, eta=1.5, diffuse=0.05, name=""):
        return cls("glass", eta=eta, diffuse=diffuse, name=name)

    @property
    def is_diffuse(self) -> bool:
        return self.kind in ("lambertian", "oren_nayar")

    @property
    def has_diffuse_lobe(self) -> bool:
        return self.is_diffuse or float(value(self.diffuse)) > 0.0


@dataclass
class ScatterSample:
    direction: np.ndarray
    weight: object
    kind: str  # "reflect", "transmit" or "diffuse"


def fresnel_reflectance(cos_theta_i, eta_i, eta_o):
    """Unpolarized dielectric reflectance going from index ``eta_i`` into ``eta_o``.

    Total internal reflection gives exactly 1.
    """
    cos_i = np.minimum(np.maximum(cos_theta_i, 0.0), 1.0)
    sin_i = np.sqrt(np.maximum(1.0 - cos_i * cos_i, 0.0))
    sin_t = eta_i / eta_o * sin_i
    tir = value(sin_t) > 1.0
    cos_t = np.sqrt(np.maximum(1.0 - sin_t * sin_t, 0.0))
    d_par = eta_o * cos_i + eta_i * cos_t
    d_perp = eta_i * cos_i + eta_o * cos_t
    # index-matched media do not reflect (and are the only 0/0 case, at grazing incidence)
    matched = np.broadcast_to(value(eta_i) == value(eta_o), np.shape(value(d_par)))
    d_par = where(matched, 1.0 + 0.0 * d_par, d_par)
    d_perp = where(matched, 1.0 + 0.0 * d_perp, d_perp)
    r_par = (eta_o * cos_i - eta_i * cos_t) / d_par
    r_perp = (eta_i * cos_i - eta_o * cos_t) / d_perp
    fr = 0.5 * (r_par * r_par + r_perp * r_perp)
    fr = where(matched, 0.0 * fr, fr)
    return where(tir, 1.0 + 0.0 * fr, fr)


def lambertian_brdf(k_r):
    return k_r / np.pi


def oren_nayar_brdf(k_r, sigma, omega_i, omega_o, n):
    """Two-term Oren-Nayar approximation; ``sigma`` is the facet slope std-dev in radians."""
    s2 = sigma * sigma
    a = 1.0 - s2 / (2.0 * (s2 + 0.33))
    b = 0.45 * s2 / (s2 + 0.09)
    cos_i = np.minimum(np.abs(dot(omega_i, n)), 1.0)
    cos_o = np.minimum(np.abs(dot(omega_o, n)), 1.0)
    sin_i = np.sqrt(np.maximum(1.0 - cos_i * cos_i, 0.0))
    sin_o = np.sqrt(np.maximum(1.0 - cos_o * cos_o, 0.0))
    ti = omega_i - n * dot(omega_i, n)[..., None]
    to = omega_o - n * dot(omega_o, n)[..., None]
    tangent_ok = (value(sin_i) > 1e-8) & (value(sin_o) > 1e-8)
    denom = where(tangent_ok, sin_i * sin_o, 1.0 + 0.0 * sin_i)
    cos_dphi = where(tangent_ok, dot(ti, to) / denom, 0.0 * sin_i)
    max_cos = np.maximum(cos_dphi, 0.0)
    i_steeper = value(cos_i) > value(cos_o)
    sin_alpha = where(i_steeper, sin_o, sin_i)
    tan_beta = where(i_steeper, sin_i / cos_i, sin_o / cos_o)
    return k_r / np.pi * (a + b * max_cos * sin_alpha * tan_beta)


def diffuse_brdf(material: Material, omega_i, omega_o, n):
    if material.kind == "oren_nayar":
        return oren_nayar_brdf(material.k_r, material.sigma, omega_i, omega_o, n)
    if material.kind == "lambertian":
        return lambertian_brdf(material.k_r) + 0.0 * dot(omega_o, n)
    return lambertian_brdf(material.diffuse) + 0.0 * dot(omega_o, n)


def reflect(omega_o, n):
    """Mirror direction of ``omega_o`` about ``n`` (both pointing away from the surface)."""
    return -omega_o + n * (2.0 * dot(omega_o, n))[..., None]


def refract(omega_o, n, eta_ratio):
    """Snell transmission of ``omega_o`` through a surface with normal ``n``.

    ``eta_ratio`` is (index on the ``omega_o`` side) / (index on the far side).
    Returns ``(direction, total_internal_reflection mask)``.
    """
    cos_i = dot(omega_o, n)
    sin2_i = np.maximum(1.0 - cos_i * cos_i, 0.0)
    sin2_t = eta_ratio * eta_ratio * sin2_i
    tir = value(sin2_t) >= 1.0
    cos_t = np.sqrt(np.maximum(1.0 - sin2_t, 0.0))
    ratio = eta_ratio[..., None] if np.ndim(value(eta_ratio)) else eta_ratio
    direction = -omega_o * ratio + n * (eta_ratio * cos_i - cos_t)[..., None]
    return direction, tir


def scatter_arrays(material: Material, omega_o, n, entering, eta_outside=1.0):
    """Vectorized BSDF split at a batch of hits.

    ``entering`` is True where ``omega_o`` lies on the exterior side of the
    surface.  Returns a dict with optional keys ``diffuse`` (weight),
    ``reflect`` and ``transmit`` (each ``(direction, weight, mask)``).
    """
    cos_o = np.minimum(np.abs(dot(omega_o, n)), 1.0)
    out = {}
    if material.has_diffuse_lobe:
        f = diffuse_brdf(material, omega_o, omega_o, n)
        out["diffuse"] = f * cos_o
    if material.kind == "mirror":
        if material.eta is None:
            weight = 1.0 + 0.0 * cos_o
        else:
            weight = fresnel_reflectance(cos_o, eta_outside, material.eta)
        out["reflect"] = (reflect(omega_o, n), weight, np.ones(np.shape(value(cos_o)), bool))
    elif material.kind == "glass":
        entering = np.asarray(entering, dtype=bool)
        eta_near = where(entering, eta_outside + 0.0 * cos_o, material.eta + 0.0 * cos_o)
        eta_far = where(entering, material.eta + 0.0 * cos_o, eta_outside + 0.0 * cos_o)
        fr = fresnel_reflectance(cos_o, eta_near, eta_far)
        direction, tir = refract(omega_o, n, eta_near / eta_far)
        out["reflect"] = (reflect(omega_o, n), fr, np.ones(tir.shape, bool))
        transmit_w = (eta_near * eta_near) / (eta_far * eta_far) * (1.0 - fr)
        out["transmit"] = (direction, transmit_w, ~tir)
    return out


def scatter(material: Material, omega_o, n, eta_outside: float = 1.0, entering: bool = True):
    """Scatter samples for one hit.

    Diffuse surfaces return a single sample straight back along ``omega_o``
    (coaxial detector); specular surfaces produce reflect/transmit samples.
    """
    parts = scatter_arrays(material, omega_o, n, entering, eta_outside)
    samples = []
    if "diffuse" in parts:
        samples.append(ScatterSample(omega_o, parts["diffuse"], "diffuse"))
    for kind in ("reflect", "transmit"):
        if kind in parts:
            direction, weight, ok = parts[kind]
            if bool(np.all(ok)):
                samples.append(ScatterSample(direction, weight, kind))
    return samples
