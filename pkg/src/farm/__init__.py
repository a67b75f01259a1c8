"""farm: unified aerial radio map estimation at desk scale.

A masked-autoencoder radio encoder aligned with a flow-matching map decoder
over voxelized RSS volumes, together with the synthetic propagation pipeline,
kriging baseline, and evaluation metrics needed to exercise it end to end.
"""

__version__ = "0.1.0"


def version_string() -> str:
    return f"farm-{__version__}"
