import importlib
from dataclasses import dataclass, field
from typing import Any, Callable, Dict

from pydantic import ValidationError, validate_call

from config.app import MIDDLEWARE
from utils.errors import ConfigError

# Registered commands keyed by their CLI name
COMMANDS: Dict[str, Callable] = {}


def doc_tag(tag: str):
    """Group a command under a documentation tag."""

    def decorator(func):
        func._doc_tag = tag
        return func

    return decorator


def doc_name(name: str):
    """Give a command its human-readable name and register it for the CLI.

    The CLI name is the readable name lower-cased with spaces replaced by
    dashes, e.g. "Sweep beam" -> "sweep-beam".
    """

    def decorator(func):
        func._doc_name = name
        COMMANDS[name.lower().replace(" ", "-")] = func
        return func

    return decorator


@dataclass
class CommandRequest:
    name: str
    func: Callable[..., Dict]
    config: Any  # ExperimentConfig
    params: Dict[str, Any] = field(default_factory=dict)


class CommandMiddleware:
    """Wraps command execution; subclasses implement `dispatch(request, call_next)`."""

    def __init__(self, app: Callable[[CommandRequest], Dict]):
        self.app = app

    def __call__(self, request: CommandRequest) -> Dict:
        return self.dispatch(request, self.app)

    def dispatch(self, request: CommandRequest, call_next: Callable[[CommandRequest], Dict]) -> Dict:
        return call_next(request)


def _call_command(request: CommandRequest) -> Dict:
    """Validate the parameters against the command signature, then run it."""
    try:
        return validate_call(request.func)(config=request.config, **request.params)
    except ValidationError as error:
        raise ConfigError(
            f"invalid parameters for {request.name}",
            details=[f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in error.errors()],
        )


def _import(dotted: str):
    module_name, _, attribute = dotted.rpartition(".")
    return getattr(importlib.import_module(module_name), attribute)


def build_pipeline(middleware=MIDDLEWARE) -> Callable[[CommandRequest], Dict]:
    """Stack the configured middleware around the command call; priority 1 runs outermost."""
    app = _call_command
    for entry in sorted(middleware, key=lambda item: item["priority"], reverse=True):
        app = _import(entry["middleware"])(app)
    return app
