"""
ChargeCast - probabilistic EV-charging load forecasting
Multi-quantile TCN on a small numpy autodiff core, with DTW-guided transfer learning
"""

__version__ = "1.0.0"
