"""Safe-landing-zone detection for UAVs from single nadir RGB frames.

Subpackages cover the full desk-scale loop: dense tensor kernels with exact
gradients (`tensor_ops`), a trainable multi-class U-Net (`unet`), dataset
preparation and synthetic scenes (`data`, `synth`), IOU/FPR evaluation
(`metrics`), descent-projection geometry (`geometry`), the frame-sampled
landing decision pipeline (`pipeline`), SVG reporting (`report`), and the
`slz` command line (`cli`).
"""

__version__ = "0.1.0"
