"""HTTP annotation service: landmark labeling with epipolar guidance."""

from stereorad.service.app import create_app

__all__ = ["create_app"]
