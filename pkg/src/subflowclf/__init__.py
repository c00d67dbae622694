"""Known/unknown flow classification from N-packet subflow statistics.

Subflows are scored by a gradient-boosted tree classifier; calibrated
confusion rates turn each prediction into class likelihoods whose product
over a flow is compared against certainty thresholds.
"""

__version__ = "0.1.0"
