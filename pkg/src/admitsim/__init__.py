"""Synthetic admission-policy laboratory.

Generates admitted-student cohorts with planted outcome structure, trains
completion-risk models on tabular and token-sequence views of the data, and
evaluates contraction policies, two-quota matching, group fairness, saliency,
and discounted public returns on top of the predictions.
"""

from __future__ import annotations

__version__ = "0.1.0"
