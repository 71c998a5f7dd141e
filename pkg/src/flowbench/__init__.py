"""Classical baselines and evaluation harness for flow-field compression,
forecasting and sensing benchmarks."""

__version__ = "0.1.0"
