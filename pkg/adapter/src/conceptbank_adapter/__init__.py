from .providers import ConformanceProvider, load_checkpoint_provider, make_fixture
from .server import TcpServer, serve_stdio, serve_stream

__all__ = [
    "ConformanceProvider",
    "load_checkpoint_provider",
    "make_fixture",
    "TcpServer",
    "serve_stdio",
    "serve_stream",
]
