"""natex: native 3D texture generation as latent color diffusion.

A geometry-aware color point cloud VAE plus a multi-control rectified-flow
diffusion transformer, with procedural data synthesis, training, sampling,
UV/vertex baking, and evaluation.
"""

__version__ = "0.1.0"
