"""Hybrid lab-based clinical decision support.

Rule-base confirmation of ICD-10 diagnoses, boosted-tree likely-diagnosis
ranking over incomplete lab panels, exact Shapley explanations, follow-up
lab recommendation, and the evaluation pipeline tying them together.
"""

__version__ = "0.1.0"
