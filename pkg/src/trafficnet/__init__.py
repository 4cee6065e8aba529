"""Image-based network traffic speed forecasting: time-space matrices, a
from-scratch CNN with backpropagation, statistical baselines, and a
synthetic congestion generator."""

__version__ = "0.1.0"
