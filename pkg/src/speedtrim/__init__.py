"""Early termination of bulk-transfer speed tests.

Two-stage pipeline: a throughput regressor produces oracle stop labels,
per-tolerance classifiers decide at runtime when a measurement may end
early.  Classical heuristics and evaluation tooling live alongside for
comparison.
"""

__version__ = "0.1.0"
