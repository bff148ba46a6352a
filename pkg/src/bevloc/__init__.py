"""Cross-view geo-localization toolkit: ground-image BEV projection, correlation-driven
homography alignment against satellite patches, and Web Mercator pose read-out."""

__version__ = "0.1.0"
