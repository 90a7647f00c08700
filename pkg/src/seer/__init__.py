"""Wi-Fi mobility knowledge pipeline: simulate handovers, learn multi-order
Markov models from them, serve predictions and pre-allocate flows."""

__version__ = "0.1.0"
