"""Embedding exporter for image/caption corpora."""

from .encoders import (
    DEFAULT_IMAGE_ENCODER,
    DEFAULT_TEXT_ENCODER,
    EncoderLoadError,
    get_image_encoder,
    get_text_encoder,
)
from .export import ExportJob, ExportResult, ListingError, export, read_listing

__version__ = "0.1.0"
