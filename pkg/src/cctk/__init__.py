"""In-memory transactional key-value engine with pluggable concurrency
control, a benchmark harness and an offline serializability checker."""

__version__ = "0.1.0"
