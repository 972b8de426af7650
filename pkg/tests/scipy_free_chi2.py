"""Chi-square survival function without scipy (even degrees of freedom)."""
import math


def chi2_sf(x: float, dof: int) -> float:
    if dof % 2:
        raise ValueError("only even dof supported")
    k = dof // 2
    term = total = 1.0
    for i in range(1, k):
        term *= (x / 2) / i
        total += term
    return math.exp(-x / 2) * total
