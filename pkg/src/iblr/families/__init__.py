from iblr.families.base import (
    Family,
    NaturalGradientEstimate,
    family_from_json,
    family_to_json,
    from_blocked,
    legacy_blr_natural_gradient,
    natural_gradient,
    register_family,
)
from iblr.families.gaussian import GaussianDiag, GaussianFull
from iblr.families.mixture import MixtureOfGaussians, SkewGaussian
from iblr.families.positive import ExponentialApprox, GammaApprox, InverseGaussianApprox

__all__ = [
    "ExponentialApprox",
    "Family",
    "GammaApprox",
    "GaussianDiag",
    "GaussianFull",
    "InverseGaussianApprox",
    "MixtureOfGaussians",
    "NaturalGradientEstimate",
    "SkewGaussian",
    "family_from_json",
    "family_to_json",
    "from_blocked",
    "legacy_blr_natural_gradient",
    "natural_gradient",
    "register_family",
]
