"""Image-folder to embedding-file extraction with pretrained CNN backbones."""

from .backbones import BACKBONES, load_backbone
from .extract import ExtractionManifest, build_manifest, extract

__version__ = "0.1.0"

__all__ = ["BACKBONES", "ExtractionManifest", "build_manifest", "extract", "load_backbone"]
