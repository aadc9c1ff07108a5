"""
riskrules -- stable, sparse, interpretable risk rules for binary outcomes.

Pipeline:  CSV -> filter + balanced split -> SSLR bootstrap -> score card
           (+ randomized gradient boosting as the accuracy upper bound)
"""

__version__ = "0.3.0"
