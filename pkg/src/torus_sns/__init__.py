"""Spectral Galerkin simulator and verification lab for stochastic Navier-Stokes on the 3-torus."""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402
from .spectral import (  # noqa: E402
    ModeSet,
    SpectralField,
    apply_semigroup,
    bilinear_B_direct,
    bilinear_B_fft,
    leray_project,
    mode_set,
    pairing,
    random_field,
    sobolev_norm,
)
from .noise import NoiseSpec, ZPath, ou_exact_step, sample_z_path, sigma_of, sup_norm_tail_mc  # noqa: E402
from .dynamics import (  # noqa: E402
    CutoffSpec,
    SimConfig,
    TrajectoryRecord,
    chi,
    chi_prime,
    chi_R,
    couple_and_compare,
    detect_stopping,
    energy_ledger,
    rhs_v,
    simulate,
    tangent_integrate,
)

__all__ = [
    "BACKEND",
    "ModeSet",
    "SpectralField",
    "apply_semigroup",
    "bilinear_B_direct",
    "bilinear_B_fft",
    "leray_project",
    "mode_set",
    "pairing",
    "random_field",
    "sobolev_norm",
    "NoiseSpec",
    "ZPath",
    "ou_exact_step",
    "sample_z_path",
    "sigma_of",
    "sup_norm_tail_mc",
    "CutoffSpec",
    "SimConfig",
    "TrajectoryRecord",
    "chi",
    "chi_prime",
    "chi_R",
    "couple_and_compare",
    "detect_stopping",
    "energy_ledger",
    "rhs_v",
    "simulate",
    "tangent_integrate",
    "__version__",
]
