"""Subclass-regularized multi-task feature selection for two-class motor-imagery EEG."""
__version__ = "0.1.0"
