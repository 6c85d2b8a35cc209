import json
from functools import lru_cache
from pathlib import Path
from typing import Dict, Optional

from jinja2 import Template

from config.app import TOOLS_MESSAGES_FILE
from utils.logger import logger

ROOT = Path(__file__).resolve().parent.parent


@lru_cache(maxsize=None)
def load_messages(lang: str = "en") -> Dict[str, Dict[str, str]]:
    with open(ROOT / TOOLS_MESSAGES_FILE, "r", encoding="utf-8") as f:
        messages = json.load(f)
    if lang not in messages:
        logger.warning(f"No command messages for language '{lang}'")
        return {}
    return messages[lang]


def render_message(command: str, event: str, params: Dict, lang: str = "en") -> Optional[str]:
    """Render the `event` message template of a command function, or None when there is none."""
    template = load_messages(lang).get(command, {}).get(event)
    if template is None:
        return None
    return Template(template).render(params=params)
