"""Candidate-search decompilation harness.

Sample candidate decompilations from a pluggable generator, recompile and
execute them for feedback, rank them under log-probability, byte-distance,
neural, and two-stage policies, and aggregate correctness, byte-match, edit
distance, and compile-rate reports with best-of-k scaling curves.
"""

__version__ = "0.1.0"
