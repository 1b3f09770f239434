"""Variational autoencoder for molecular graphs.

Subpackages cover the full pipeline: a small reverse-mode autodiff engine
(`tensor`), the molecular-graph data model with canonical certificates and
quality metrics (`molgraph`), the permutation-invariant encoder (`encoder`),
the masked sequential decoder (`decoder`) with pluggable validity masks
(`masks`), ELBO training (`training`), synthetic-graph experiments (`synth`),
sparse-GP latent-space optimization (`latentopt`), and a command-line driver
(`cli`).
"""

__version__ = "0.1.0"
