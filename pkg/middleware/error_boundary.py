from typing import Callable, Dict

from services.command_messages import render_message
from utils.errors import LabError
from utils.logger import logger
from utils.tools import CommandMiddleware, CommandRequest


def message_params(request: CommandRequest) -> Dict:
    """Effective settings of a request: config sections flattened, explicit parameters on top."""
    params: Dict = {}
    config = request.config
    for section in ("data", "decode", "sweep", "run"):
        params.update(getattr(config, section).model_dump())
    params["loss"] = config.loss.describe()
    params.update({key: value for key, value in request.params.items() if value is not None})
    return params


class ErrorBoundaryMiddleware(CommandMiddleware):
    """Turns exceptions raised by a command into an error status dict carrying the exit code."""

    def dispatch(self, request: CommandRequest, call_next: Callable[[CommandRequest], Dict]) -> Dict:
        command = request.func.__name__
        try:
            start_message = render_message(command, "request-start", message_params(request))
            if start_message:
                logger.info(start_message)

            result = call_next(request)

            done_message = render_message(command, "request-done", result)
            if done_message:
                logger.info(done_message)
            return result

        except LabError as error:
            logger.error(
                f"{request.name} failed: {error.message}",
                extra={"details": error.details, "exit_code": error.exit_code},
            )
            return {
                "status": "error",
                "error": {"message": error.message, "details": error.details},
                "exit_code": error.exit_code,
            }

        except Exception as general_error:
            logger.exception("Unexpected error occurred.")
            return {
                "status": "error",
                "error": {"message": "Unexpected error", "details": str(general_error)},
                "exit_code": 1,
            }
