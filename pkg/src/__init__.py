"""
Matrix-normal PCA: low-rank factorization with sparse row and column precisions.
"""

__version__ = "0.1.0"
