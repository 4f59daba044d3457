"""Multi-phase CT liver lesion pipeline on synthetic desk-scale data.

Subsystems: differentiable numerics (ops), volumes (volume), masked
texture encoding (encoding), anchor-free 3D detection math (detection),
a trainable desk-scale detector (detector), synthetic study generation
(synth), candidate harvesting with human QA (harvest), primary tumor
selection (pts), texture classification (classifier), evaluation metrics
(metrics), file formats (formats), configuration (config), CLI (cli),
and the review HTTP API (server).
"""

__version__ = "0.1.0"
