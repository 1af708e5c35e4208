"""Graph-learning QoT estimation for dynamic multicore-fiber optical networks."""

__version__ = "0.1.0"
