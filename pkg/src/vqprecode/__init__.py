"""FDD multi-user downlink simulator with a trainable feedback/precoding chain.

Modules: diffcore (autodiff engine), channel (synthetic URA data), pilot,
covariance, vq, networks, baselines (MRT/ZF/WMMSE/SWMMSE), training,
config, harness (evaluation protocol), plotting, cli.
"""

__version__ = "0.1.0"
