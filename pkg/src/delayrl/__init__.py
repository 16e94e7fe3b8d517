"""Random-delay MDPs: delay-channel simulation, partial trajectory
resampling, multi-step off-policy value estimation, an exact enumeration
oracle, and the delay-correcting actor-critic built on them."""

__version__ = "0.1.0"
