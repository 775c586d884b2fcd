"""
doanet package.

Direction-of-arrival estimation for first-order Ambisonic scenes:
scene synthesis, MUSIC baseline, a from-scratch CRNN (DOAnet) and metrics.
"""

__version__ = "0.1.0"
