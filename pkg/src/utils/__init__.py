"""
Make utils a package.
"""
from .config import AppConfig, load_config
from .errors import CapeKGError
from .helpers import PREV_PLACEHOLDER, format_triple, format_uptime, normalize_text
from .storage import read_jsonl, write_jsonl

__all__ = [
    'AppConfig', 'load_config', 'CapeKGError',
    'PREV_PLACEHOLDER', 'format_triple', 'format_uptime', 'normalize_text',
    'read_jsonl', 'write_jsonl',
]
