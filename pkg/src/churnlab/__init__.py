"""Churn modeling with RFM sequences: LSTM stacking, L1 logistic baselines, nested CV and profit metrics."""

__version__ = "0.1.0"
