"""
Benchmark harness for implicit-feedback top-n recommenders under
memorization, strong-generalization and subgroup evaluation protocols.
"""

__version__ = "0.1.0"
