"""Isotropic strain energy densities of the symmetric stretch ``S``.

All functions take the 6-vector form of ``S`` (see :mod:`mixedfem.kinematics`)
and accept a leading batch dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import SYM_TO_VEC, symmat

MODELS = ("ARAP", "Corot", "NeoHookean")
_ALIASES = {"arap": "ARAP", "corot": "Corot", "corotational": "Corot", "nh": "NeoHookean", "neohookean": "NeoHookean", "neo-hookean": "NeoHookean"}


class InvertedElementError(ValueError):
    """Neo-Hookean energy requested at ``det S <= 0``."""

    def __init__(self, elements):
        self.elements = np.atleast_1d(elements)
        super().__init__(f"det(S) <= 0 at {self.elements.size} element(s), first {self.elements[:1].tolist()}")


def canonical_model(name):
    try:
        return _ALIASES[str(name).replace("_", "").lower()]
    except KeyError:
        raise ValueError(f"unknown material model {name!r}; expected one of {MODELS} (or NH)") from None


@dataclass(frozen=True)
class MaterialParams:
    model: str = "NeoHookean"
    density: float = 1e3
    youngs: float = 1e5
    poisson: float = 0.45

    def __post_init__(self):
        object.__setattr__(self, "model", canonical_model(self.model))
        if not self.youngs > 0:
            raise ValueError("Young's modulus must be positive")
        if not 0.0 <= self.poisson < 0.5:
            raise ValueError("Poisson ratio must lie in [0, 0.5)")
        if not self.density > 0:
            raise ValueError("density must be positive")

    @property
    def mu(self):
        return self.youngs / (2.0 * (1.0 + self.poisson))

    @property
    def lame_lambda(self):
        nu = self.poisson
        return self.youngs * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))

    @property
    def eps_spd(self):
        return 1e-8 * self.mu


_I = np.eye(3)


def _nh_logdet(S, check=True):
    det = np.linalg.det(S)
    if check and np.any(det <= 0):
        raise InvertedElementError(np.flatnonzero(np.atleast_1d(det) <= 0))
    return det, np.log(det)


def energy(s, params):
    """Strain energy density psi(S) in J/m^3."""
    S = symmat(s)
    mu, lam = params.mu, params.lame_lambda
    D = S - _I
    if params.model == "ARAP":
        return mu * np.einsum("...ij,...ij->...", D, D)
    if params.model == "Corot":
        tr = np.trace(D, axis1=-2, axis2=-1)
        return mu * np.einsum("...ij,...ij->...", D, D) + 0.5 * lam * tr**2
    _, logJ = _nh_logdet(S)
    return 0.5 * mu * (np.einsum("...ij,...ij->...", S, S) - 3.0) - mu * logJ + 0.5 * lam * logJ**2


def stress(s, params):
    """dpsi/dS as a 3x3 matrix (unsymmetrised tensor derivative)."""
    S = symmat(s)
    mu, lam = params.mu, params.lame_lambda
    if params.model == "ARAP":
        return 2.0 * mu * (S - _I)
    if params.model == "Corot":
        tr = np.trace(S - _I, axis1=-2, axis2=-1)
        return 2.0 * mu * (S - _I) + lam * tr[..., None, None] * _I
    _, logJ = _nh_logdet(S)
    SinvT = np.swapaxes(np.linalg.inv(S), -1, -2)
    return mu * S + (lam * logJ - mu)[..., None, None] * SinvT


def gradient(s, params):
    """dpsi/ds, a 6-vector per element."""
    return stress(s, params).reshape(*np.shape(s)[:-1], 9) @ SYM_TO_VEC


def _tangent9(s, params):
    # d^2 psi / dS^2 on row-major vec(S), shape (..., 9, 9)
    S = symmat(s)
    batch = S.shape[:-2]
    mu, lam = params.mu, params.lame_lambda
    eye9 = np.broadcast_to(np.eye(9), batch + (9, 9))
    if params.model == "ARAP":
        return 2.0 * mu * eye9
    if params.model == "Corot":
        vI = _I.reshape(9)
        return 2.0 * mu * eye9 + lam * np.broadcast_to(np.outer(vI, vI), batch + (9, 9))
    _, logJ = _nh_logdet(S)
    A = np.linalg.inv(S)
    # d(A^T)_{ab} / dS_{dc} = -A_{ca} A_{bd}
    T = np.einsum("...ca,...bd->...abdc", A, A).reshape(batch + (9, 9))
    vAt = np.swapaxes(A, -1, -2).reshape(batch + (9,))
    return mu * eye9 + (mu - lam * logJ)[..., None, None] * T + lam * np.einsum("...i,...j->...ij", vAt, vAt)


def project_spd(H, floor, absolute=False):
    """Clamp the eigenvalues of symmetric matrices from below at ``floor``.

    With ``absolute`` negative eigenvalues are mirrored before clamping, which
    keeps the curvature of indefinite directions instead of flattening it.
    """
    w, V = np.linalg.eigh(0.5 * (H + np.swapaxes(H, -1, -2)))
    if absolute:
        w = np.abs(w)
    w = np.maximum(w, floor)
    return np.einsum("...ij,...j,...kj->...ik", V, w, V)


def hessian(s, params, project=True):
    """d^2psi/ds^2, a 6x6 matrix per element; SPD-projected unless ``project`` is False."""
    H = SYM_TO_VEC.T @ _tangent9(s, params) @ SYM_TO_VEC
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    if project and params.model == "NeoHookean":
        H = project_spd(H, params.eps_spd)
    return H


def is_admissible(s, params):
    """Per-element mask of states where the energy is defined."""
    if params.model != "NeoHookean":
        return np.ones(np.shape(s)[:-1], dtype=bool)
    return np.linalg.det(symmat(s)) > 0
