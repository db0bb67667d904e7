"""Distribution separation for pseudo-relevance feedback.

Linear separation of a seed irrelevance distribution from a feedback mixture
(DSM), the mixture-model feedback EM it generalizes (MMF), and a desk-scale
retrieval harness comparing the two.
"""

__version__ = "1.0.0"
