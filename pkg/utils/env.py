import os
from dotenv import load_dotenv

load_dotenv()


class EnvConfig:
    """Read-only access to environment settings, `.env` file included."""

    @staticmethod
    def get(key: str, default=None):
        return os.environ.get(key, default)

    @staticmethod
    def get_int(key: str, default: int) -> int:
        value = os.environ.get(key)
        if value is None or value == "":
            return default
        return int(value)
