"""CAN-bus IDS attack-cost benchmarking: data, tree ensembles, ZOO attack, sweeps."""

__version__ = "0.1.0"
