"""Digital network twin: stochastic and ray-traced V2V channels behind a UDP channel oracle."""

__version__ = "0.1.0"
