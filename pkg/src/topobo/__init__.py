"""
Bayesian optimization over point clouds through persistence diagram kernels.

Modules
-------
persistence
    Rips persistence diagrams in degrees 0 and 1.
pd_kernels
    PWGK (linear, Gaussian, random features) and persistence Fisher kernels.
gp
    Gaussian-process posterior, noise estimation and expected improvement.
mkl
    Weighted sums of Gram matrices by alignment or marginal likelihood.
bo
    Pool-based BO loop, random baseline and the AUCC benchmark.
datasets
    Orbit generator and JSONL / XYZ pool loaders.
"""

__version__ = "0.1.0"
