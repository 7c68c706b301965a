"""Depth-based hand/object segmentation toolkit.

Subpackages cover the full pipeline: a small autodiff tensor engine
(`tensor`), dataset auto-annotation (`annotate`), training losses
(`losses`), the dense-attention segmentation network (`network`),
evaluation metrics (`metrics`), synthetic scene generation (`synth`),
the training harness (`training`), file formats and the CLI (`dataset`,
`cli`), and the annotation review server (`review`).
"""

__version__ = "0.1.0"
