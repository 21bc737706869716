"""Trace replay, workload generation, metrics and sweeps."""
