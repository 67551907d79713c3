"""
Poincare Align - multi-modal entity alignment in hyperbolic space
"""

__version__ = "1.0.0"
__author__ = "Poincare Align Team"
