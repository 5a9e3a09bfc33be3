"""Mini-batch graph convolution with a degree-biased candidate-set sampler and
multi-granular aggregators, plus full-batch, simplified and uniformly sampled
baselines."""

__version__ = "0.1.0"
