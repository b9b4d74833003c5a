"""UAV-served onboard vision-language inference: channel/latency model, resolution and
power allocation, and trajectory learning with designed rewards."""

__version__ = "0.1.0"
