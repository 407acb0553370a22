"""
P3D - hybrid CNN-Transformer surrogate for 3-D PDEs

Subpackages:
- numerics: tensor primitives, spectral utilities, tensor blobs, runtime determinism
- models: conditioning, backbone network, global context model, checkpoints
- training: losses, flow matching, crop sampling, training setups, optimizer, EMA, training loop
- datagen: ETDRK pseudo-spectral solvers, initializers, PDE families, dataset containers
- evaluation: rollout strategies, metrics, reporting, diagnostics
"""

__version__ = '1.0.0'
