"""Interactive part-level semantic annotation for urban textured meshes."""

from .mesh_core import (FaceLabelMap, LabelTaxonomy, PixelLabelMask,
                        TexturedMesh, build_mesh, default_taxonomy, lift_texel)
from .mesh_io import load_annotations, load_mesh, save_annotations

__version__ = "0.1.0"

__all__ = [
    "FaceLabelMap",
    "LabelTaxonomy",
    "PixelLabelMask",
    "TexturedMesh",
    "build_mesh",
    "default_taxonomy",
    "lift_texel",
    "load_annotations",
    "load_mesh",
    "save_annotations",
    "__version__",
]
