"""Multi-scale VGG16 feature export for the video quality model."""

from vqa_export.backbone import StagePoolingBackbone, build_backbone
from vqa_export.export import ExportError, export

__all__ = ["StagePoolingBackbone", "build_backbone", "ExportError", "export"]
__version__ = "0.1.0"
