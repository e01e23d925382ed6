from .config import PipelineConfig
from .session import Session, SessionManager

__all__ = ["PipelineConfig", "Session", "SessionManager"]
