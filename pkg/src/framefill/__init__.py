"""Chunked autoregressive video frame interpolation.

The pipeline turns a low-frame-rate clip into a high-frame-rate one: the
input is temporally upsampled and masked, encoded by a tiled frame codec into
a chunked latent grid, the missing content is generated chunk-by-chunk with a
flow-matching denoiser (sparse in space, dense in time), and a conditional
decoder reconstructs pixels with multi-scale guidance from the input.
"""

__version__ = "0.1.0"
