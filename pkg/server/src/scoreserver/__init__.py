"""Reference score provider for the length-prefixed JSON eps protocol."""

from .config import ConfigError, load_provider_config, schedule_alphas
from .framing import FrameError, read_frame, schedule_digest, write_frame
from .gmm import Mixture
from .server import TcpServer, serve_stdio
from .session import Registry, Session

__version__ = "0.1.0"
