"""Event-driven FIFO limit-order-book simulator with a quantization +
nearest-neighbor dynamic-programming solver for market-making policies."""

__version__ = "0.1.0"
