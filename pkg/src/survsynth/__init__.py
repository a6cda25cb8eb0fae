"""Survival-data synthesis toolkit.

Fits Cox proportional hazards teachers, distills them into a mixture encoder,
reconstructs synthetic survival datasets through a decoder, and validates
realism, augmentation value, and clinical utility.
"""

__version__ = "0.1.0"
