"""Expert-routed multimodal transformer for video and visual dialog, at desk scale."""

__version__ = "0.1.0"
