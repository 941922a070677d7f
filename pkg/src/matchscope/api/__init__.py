"""HTTP service layer: configuration and the FastAPI application."""

from matchscope.api.config import ServiceConfig, load_config
from matchscope.api.service import ExtractorClient, create_app, serve

__all__ = ["ServiceConfig", "load_config", "ExtractorClient", "create_app", "serve"]
