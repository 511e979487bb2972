"""
Shear-type building model: story stiffness assembly and modal analysis.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .errors import DomainError, ModalAnalysisError

logger = logging.getLogger(__name__)

# Stiffness factors of the damaged structure used to synthesize data.
TRUE_ALPHA = (0.71, 0.84, 0.57, 0.78, 0.84, 0.80, 0.93, 0.89, 0.76, 0.76)


def assemble_stiffness(alpha: Sequence[float], k0: float) -> np.ndarray:
    """Tridiagonal stiffness of a shear frame with story stiffness k0*alpha_j.

    Story 1 is at the base; K[j, j] = k0 (alpha_j + alpha_{j+1}), the top
    story has K[n, n] = k0 alpha_n.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or alpha.size == 0:
        raise DomainError("alpha must be a non-empty vector")
    if np.any(~(alpha > 0)):
        raise DomainError(f"stiffness factors must be positive, got {alpha}")
    k = k0 * alpha
    diag = k.copy()
    diag[:-1] += k[1:]
    off = -k[1:]
    return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)


@dataclass(frozen=True, eq=False)
class ModalData:
    """Natural frequencies (Hz, ascending) and mass-normalized shapes."""

    frequencies: np.ndarray
    mode_shapes: np.ndarray
    damping: Optional[np.ndarray] = None
    channels: Optional[tuple] = None

    @property
    def n_modes(self) -> int:
        return int(self.frequencies.size)

    def restrict(self, channels: Sequence[int], n_modes: Optional[int] = None) -> "ModalData":
        """Rows of the measured stories (1-based) and the first ``n_modes`` modes."""
        rows = [c - 1 for c in channels]
        m = self.n_modes if n_modes is None else n_modes
        return ModalData(
            frequencies=self.frequencies[:m],
            mode_shapes=self.mode_shapes[np.ix_(rows, range(m))],
            damping=None if self.damping is None else self.damping[:m],
            channels=tuple(channels),
        )

    def with_damping(self, damping: Sequence[float]) -> "ModalData":
        return ModalData(self.frequencies, self.mode_shapes,
                         np.asarray(damping, dtype=float), self.channels)


def modal_analysis(K: np.ndarray, M: np.ndarray) -> ModalData:
    """Solve K phi = omega^2 M phi with phi^T M phi = I.

    Each shape is signed so that its largest-magnitude entry is positive.
    """
    try:
        eigvals, shapes = linalg.eigh(K, M)
    except (linalg.LinAlgError, ValueError) as e:
        raise ModalAnalysisError(f"generalized eigenproblem failed: {e}") from e
    if np.any(eigvals <= 0) or not np.all(np.isfinite(eigvals)):
        raise ModalAnalysisError(f"non-positive eigenvalue(s): {eigvals[eigvals <= 0]}")
    pivot = np.argmax(np.abs(shapes), axis=0)
    signs = np.sign(shapes[pivot, np.arange(shapes.shape[1])])
    shapes = shapes * np.where(signs == 0, 1.0, signs)
    return ModalData(frequencies=np.sqrt(eigvals) / (2.0 * math.pi), mode_shapes=shapes)


@dataclass(frozen=True)
class ShearBuildingModel:
    """10-story shear building: k0 in N/m, story masses in kg."""

    n_stories: int = 10
    k0: float = 2.0e9
    story_mass: float = 1.0e6
    masses: Optional[tuple] = field(default=None)

    @property
    def mass_vector(self) -> np.ndarray:
        if self.masses is not None:
            return np.asarray(self.masses, dtype=float)
        return np.full(self.n_stories, self.story_mass)

    def mass_matrix(self, unit_mass: bool = False) -> np.ndarray:
        """Diagonal mass matrix, optionally in units of the story mass."""
        m = self.mass_vector
        return np.diag(m / self.story_mass if unit_mass else m)

    def stiffness(self, alpha: Sequence[float], unit_mass: bool = False) -> np.ndarray:
        K = assemble_stiffness(alpha, self.k0)
        return K / self.story_mass if unit_mass else K

    def modes(self, alpha: Sequence[float], unit_mass: bool = True) -> ModalData:
        """Modal data of the structure with stiffness factors ``alpha``.

        With ``unit_mass`` the shapes are normalized against M / story_mass,
        so modal force spectra are expressed per unit (story) mass.
        """
        if len(alpha) != self.n_stories:
            raise DomainError(f"expected {self.n_stories} stiffness factors, got {len(alpha)}")
        return modal_analysis(self.stiffness(alpha, unit_mass), self.mass_matrix(unit_mass))
