from .metrics import CleanZero, NormTriple, norms, reduction_pct
from .anova import AnovaResult, DegenerateGroups, anova_oneway, f_sf, regularized_incomplete_beta

__all__ = [
    "CleanZero",
    "NormTriple",
    "norms",
    "reduction_pct",
    "AnovaResult",
    "DegenerateGroups",
    "anova_oneway",
    "f_sf",
    "regularized_incomplete_beta",
]
