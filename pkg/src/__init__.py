"""
X-ray DPN-SE Toolkit

Dual path networks with squeeze-excitation for four-class chest radiograph
classification, with seeded augmentation, local surrogate explanations and
one-vs-rest evaluation reports.
"""

__version__ = "0.1.0"
__author__ = "X-ray DPN-SE Contributors"
