"""Experiment runners, verification suites and result writers."""
