"""Latent-tensor compression toolkit.

Uniform scalar and trellis-coded quantization with a Gaussian hyperprior
entropy model, a bit-exact range coder, and a desk-scale trainable codec
whose decoder and hypercoder can be finetuned on truly quantized latents.
"""

__version__ = "0.1.0"
